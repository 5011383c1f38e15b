//! Image ⇄ container paths built on a frozen model.

mod model_dir;

pub use model_dir::{
    load_model_dir, save_model_dir, sha256_hex, write_atomic, CHECKSUM_FILE, CONFIG_FILE,
    WEIGHTS_FILE,
};

use std::path::Path;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bitstream::{
    decode_heatmap, decode_label_map, encode_heatmap, encode_label_map, rasterize_label_map,
    CompressedImage, Heatmap, LabelGrid, Mode, PolygonLabelMap,
};
use crate::data::{image_to_tensor, tensor_to_image};
use crate::entropy::{decode_streams, encode_streams, FrequencyTable};
use crate::error::{Error, Result};
use crate::networks::{noise_grid, one_hot, Model, NetConfig};
use crate::quantizer::{dequantize, quantize_hard, CodeGrid};
use crate::tensor::Tensor;
use crate::trainer::{code_heatmap, TrainConfig};

/// Seed of the noise grid fed to the generator when decoding.
pub const DECODE_NOISE_SEED: u64 = 0;

/// Index into `0..n` mirrored about the edges without repeating them.
fn mirror(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let j = i % period;
    if j < n {
        j
    } else {
        period - j
    }
}

fn padded(n: usize, s: usize) -> usize {
    n.div_ceil(s) * s
}

fn pad_image(x: &Tensor, s: usize) -> Result<Tensor> {
    let [_, c, h, w] = x.dims4()?;
    let (ph, pw) = (padded(h, s), padded(w, s));
    if (ph, pw) == (h, w) {
        return Ok(x.clone());
    }
    let src = x.data();
    Ok(Tensor::from_fn(&[1, c, ph, pw], |i| {
        let (ch, y, xx) = (i / (ph * pw), i / pw % ph, i % pw);
        src[(ch * h + mirror(y, h)) * w + mirror(xx, w)]
    }))
}

fn crop_image(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let [_, c, ph, pw] = x.dims4()?;
    if (ph, pw) == (h, w) {
        return Ok(x.clone());
    }
    let src = x.data();
    Ok(Tensor::from_fn(&[1, c, h, w], |i| {
        let (ch, y, xx) = (i / (h * w), i / w % h, i % w);
        src[(ch * ph + y) * pw + xx]
    }))
}

fn pad_plane<T: Copy>(v: &[T], w: usize, h: usize, s: usize) -> Vec<T> {
    let (pw, ph) = (padded(w, s), padded(h, s));
    (0..pw * ph)
        .map(|i| v[mirror(i / pw, h) * w + mirror(i % pw, w)])
        .collect()
}

fn pad_grid(g: &LabelGrid, s: usize) -> LabelGrid {
    LabelGrid {
        width: padded(g.width, s),
        height: padded(g.height, s),
        class: pad_plane(&g.class, g.width, g.height, s),
        instance: pad_plane(&g.instance, g.width, g.height, s),
    }
}

/// An object selected for preservation; `instance: None` selects the class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ObjectRef {
    pub class: u32,
    pub instance: Option<u32>,
}

/// Which parts of the latent a selective container keeps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Preserve {
    All,
    Nothing,
    Objects(Vec<ObjectRef>),
    /// Explicit code-resolution heatmap over the padded grid.
    Cells(Heatmap),
}

impl Preserve {
    /// Comma-separated `class` or `class:instance` entries, or `all` / `none`.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        match text {
            "all" => return Ok(Preserve::All),
            "none" | "" => return Ok(Preserve::Nothing),
            _ => {}
        }
        let bad = |t: &str| Error::usage(format!("bad preserve entry '{t}', expected class or class:instance"));
        let refs = text
            .split(',')
            .map(|t| {
                let t = t.trim();
                let (c, i) = match t.split_once(':') {
                    Some((c, i)) => (c, Some(i)),
                    None => (t, None),
                };
                Ok(ObjectRef {
                    class: c.parse().map_err(|_| bad(t))?,
                    instance: i.map(|i| i.parse().map_err(|_| bad(t))).transpose()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Preserve::Objects(refs))
    }

    fn pixels(&self, grid: &LabelGrid) -> Vec<bool> {
        let n = grid.width * grid.height;
        match self {
            Preserve::All => vec![true; n],
            Preserve::Nothing | Preserve::Cells(_) => vec![false; n],
            Preserve::Objects(refs) => (0..n)
                .map(|i| {
                    let (c, inst) = (grid.class[i], grid.instance[i]);
                    refs.iter()
                        .any(|r| r.class == c && r.instance.is_none_or(|k| k == inst))
                })
                .collect(),
        }
    }
}

/// Label map plus preservation choice for selective compression.
#[derive(Clone, Debug)]
pub struct SelectiveInput {
    pub labels: PolygonLabelMap,
    pub preserve: Preserve,
}

/// Rates of one container, in bits per pixel of the true image size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BppReport {
    pub payload_bpp: f64,
    pub total_bpp: f64,
    pub header_bpp: f64,
    pub heatmap_bpp: f64,
    pub labelmap_bpp: f64,
    /// `log2 L` bits for every latent entry.
    pub bound_bpp: f64,
    /// `1 - payload / bound`.
    pub savings: f64,
    /// Share of code cells kept (1 in generative mode).
    pub preserved_fraction: f64,
    /// Bound restricted to the kept cells.
    pub preserved_bound_bpp: f64,
}

pub fn measure_bpp(ci: &CompressedImage) -> Result<BppReport> {
    let pixels = (ci.width * ci.height) as f64;
    let bits = ci.bits();
    let (ch, cw) = (ci.code_height(), ci.code_width());
    let preserved_fraction = match (&ci.mode, &ci.heatmap) {
        (Mode::Selective, Some(h)) => decode_heatmap(h, ch, cw)?.fraction(),
        _ => 1.0,
    };
    let bound_bits = (ch * cw * ci.channels) as f64 * (ci.centers.levels() as f64).log2();
    let bound_bpp = bound_bits / pixels;
    let payload_bpp = bits.payload_bits as f64 / pixels;
    Ok(BppReport {
        payload_bpp,
        total_bpp: bits.total_bits() as f64 / pixels,
        header_bpp: bits.header_bits as f64 / pixels,
        heatmap_bpp: bits.heatmap_bits as f64 / pixels,
        labelmap_bpp: bits.labelmap_bits as f64 / pixels,
        bound_bpp,
        savings: 1.0 - payload_bpp / bound_bpp,
        preserved_fraction,
        preserved_bound_bpp: bound_bpp * preserved_fraction,
    })
}

/// Frozen model ready for coding. Immutable, so shareable across threads.
#[derive(Clone, Debug)]
pub struct CodecSession {
    config: TrainConfig,
    model: Model,
}

impl CodecSession {
    pub fn new(config: TrainConfig, model: Model) -> Result<Self> {
        config.validate()?;
        if model.config() != &config.net {
            return Err(Error::usage("model layout differs from its config"));
        }
        Ok(Self { config, model })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (config, model) = load_model_dir(dir)?;
        Self::new(config, model)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_model_dir(dir, &self.config, &self.model)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn net(&self) -> &NetConfig {
        self.model.config()
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn mode(&self) -> Mode {
        self.net().mode
    }

    fn check_header(&self, ci: &CompressedImage) -> Result<()> {
        let net = self.net();
        let ok = ci.mode == net.mode
            && ci.channels == net.channels
            && ci.downsample == net.downsample
            && ci.centers.centers() == net.centers.centers();
        if ok {
            Ok(())
        } else {
            Err(Error::usage(format!(
                "container ({} C={} L={} s={}) does not match the model ({} C={} L={} s={})",
                ci.mode.name(),
                ci.channels,
                ci.centers.levels(),
                ci.downsample,
                net.mode.name(),
                net.channels,
                net.centers.levels(),
                net.downsample
            )))
        }
    }

    /// Full code grid of the reflect-padded image.
    pub fn encode_code(&self, img: &RgbImage) -> Result<CodeGrid> {
        let x = pad_image(&image_to_tensor(img), self.net().downsample)?;
        let latent = self.model.infer_latent(&x)?;
        quantize_hard(&latent, &self.net().centers)
    }

    pub fn compress(&self, img: &RgbImage, selective: Option<&SelectiveInput>) -> Result<CompressedImage> {
        let (w, h) = (img.width() as usize, img.height() as usize);
        if w == 0 || h == 0 {
            return Err(Error::usage("empty image"));
        }
        let net = self.net();
        let s = net.downsample;
        let code = self.encode_code(img)?;
        let levels = net.centers.levels();
        let (heatmap, labelmap, streams) = match (net.mode, selective) {
            (Mode::Generative, None) => {
                let streams: Vec<Vec<u8>> = (0..code.channels()).map(|c| code.channel(c).to_vec()).collect();
                (None, None, streams)
            }
            (Mode::Generative, Some(_)) => {
                return Err(Error::usage("a generative model takes no label map or preserve set"))
            }
            (Mode::Selective, None) => {
                return Err(Error::usage("a selective model needs a label map and preserve set"))
            }
            (Mode::Selective, Some(sel)) => {
                sel.labels.validate(w as u32, h as u32)?;
                let (cw, ch) = (code.width(), code.height());
                let heatmap = match &sel.preserve {
                    Preserve::Cells(m) => {
                        if (m.height(), m.width()) != (ch, cw) {
                            return Err(Error::usage(format!(
                                "heatmap is {}x{}, code grid is {cw}x{ch}",
                                m.width(),
                                m.height()
                            )));
                        }
                        m.clone()
                    }
                    p => {
                        let grid = rasterize_label_map(&sel.labels, w, h);
                        let pixels = pad_plane(&p.pixels(&grid), w, h, s);
                        code_heatmap(&pixels, padded(w, s), padded(h, s), s)
                    }
                };
                let streams = (0..code.channels())
                    .map(|c| {
                        code.channel(c)
                            .iter()
                            .zip(heatmap.cells())
                            .filter_map(|(&sym, &keep)| keep.then_some(sym))
                            .collect()
                    })
                    .collect();
                let labelmap = encode_label_map(&sel.labels, w as u32, h as u32)?;
                (Some(encode_heatmap(&heatmap)?), Some(labelmap), streams)
            }
        };
        let tables: Vec<FrequencyTable> = streams.iter().map(|v| FrequencyTable::smoothed(v, levels)).collect();
        let refs: Vec<&[u8]> = streams.iter().map(Vec::as_slice).collect();
        let payload = encode_streams(&refs, &tables)?;
        Ok(CompressedImage {
            mode: net.mode,
            width: w,
            height: h,
            channels: net.channels,
            downsample: s,
            centers: net.centers.clone(),
            tables,
            heatmap,
            labelmap,
            payload,
        })
    }

    /// Decoded symbols and, in selective mode, the heatmap; masked cells
    /// hold the symbol of the center nearest zero.
    pub fn decode_code(&self, ci: &CompressedImage) -> Result<(CodeGrid, Option<Heatmap>)> {
        self.check_header(ci)?;
        let (ch, cw, c) = (ci.code_height(), ci.code_width(), ci.channels);
        let heatmap = match ci.mode {
            Mode::Selective => {
                let bytes = ci.heatmap.as_deref().ok_or_else(|| Error::corruption("missing heatmap"))?;
                Some(decode_heatmap(bytes, ch, cw)?)
            }
            Mode::Generative => None,
        };
        let per_channel = heatmap.as_ref().map_or(ch * cw, Heatmap::count_ones);
        let streams = decode_streams(&ci.payload, &vec![per_channel; c], &ci.tables)?;
        let symbols = match &heatmap {
            None => streams.concat(),
            Some(m) => {
                let zero = ci.centers.zero_symbol();
                let mut out = Vec::with_capacity(c * ch * cw);
                for stream in &streams {
                    let mut it = stream.iter();
                    for &keep in m.cells() {
                        out.push(if keep { *it.next().expect("count matches heatmap") } else { zero });
                    }
                }
                out
            }
        };
        Ok((CodeGrid::new(ch, cw, c, symbols, ci.centers.clone())?, heatmap))
    }

    /// Generator input latent: dequantized code with masked entries set to 0.
    pub fn decode_latent(&self, ci: &CompressedImage) -> Result<Tensor> {
        let (code, heatmap) = self.decode_code(ci)?;
        let mut latent: Tensor = dequantize(&code)?;
        if let Some(m) = heatmap {
            let plane = m.cells().len();
            for (i, v) in latent.data_mut().iter_mut().enumerate() {
                if !m.cells()[i % plane] {
                    *v = 0.0;
                }
            }
        }
        Ok(latent)
    }

    fn label_input(&self, ci: &CompressedImage) -> Result<Option<Tensor>> {
        let net = self.net();
        if net.mode != Mode::Selective {
            return Ok(None);
        }
        let (w, h) = (ci.width, ci.height);
        let map = match ci.labelmap.as_deref() {
            Some(b) if !b.is_empty() => decode_label_map(b, w as u32, h as u32)?,
            _ => PolygonLabelMap::default(),
        };
        let grid = pad_grid(&rasterize_label_map(&map, w, h), net.downsample);
        one_hot(&grid, net.classes)
            .map(Some)
            .map_err(|e| Error::corruption(format!("label map: {e}")))
    }

    fn generate(&self, latent: &Tensor, labels: Option<&Tensor>) -> Result<Tensor> {
        let net = self.net();
        let [_, _, ch, cw] = latent.dims4()?;
        let noise = net.use_noise.then(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(DECODE_NOISE_SEED);
            noise_grid(net.noise_dim, ch, cw, &mut rng)
        });
        self.model.infer_image(latent, noise.as_ref(), labels)
    }

    pub fn decompress(&self, ci: &CompressedImage) -> Result<RgbImage> {
        let latent = self.decode_latent(ci)?;
        let labels = self.label_input(ci)?;
        let x = self.generate(&latent, labels.as_ref())?;
        if !x.is_finite() {
            return Err(Error::numerical("decompress", "generator output is not finite"));
        }
        tensor_to_image(&crop_image(&x, ci.height, ci.width)?)
    }
}

/// Decodes a latent of i.i.d. uniform symbols into a `1 x 3 x height x width`
/// tensor (dimensions rounded up to multiples of `s`).
pub fn sample_uniform_latent(session: &CodecSession, height: usize, width: usize, rng: &mut impl Rng) -> Result<Tensor> {
    let net = session.net();
    if net.mode != Mode::Generative {
        return Err(Error::usage("latent sampling needs a generative model"));
    }
    let s = net.downsample;
    let (ch, cw) = (height.div_ceil(s), width.div_ceil(s));
    let levels = net.centers.levels();
    let symbols = (0..net.channels * ch * cw).map(|_| rng.random_range(0..levels) as u8).collect();
    let code = CodeGrid::new(ch, cw, net.channels, symbols, net.centers.clone())?;
    session.generate(&dequantize(&code)?, None)
}

/// Decoded image of a code grid that holds one symbol everywhere.
pub fn decode_constant_code(session: &CodecSession, height: usize, width: usize, symbol: u8) -> Result<Tensor> {
    let net = session.net();
    let s = net.downsample;
    let (ch, cw) = (height.div_ceil(s), width.div_ceil(s));
    let code = CodeGrid::new(ch, cw, net.channels, vec![symbol; net.channels * ch * cw], net.centers.clone())?;
    session.generate(&dequantize(&code)?, None)
}
