//! Alternating discriminator / autoencoder optimization.

mod config;
mod sampling;

pub use config::{parse_pairs, NormMode, TrainConfig, TrainMode};
pub use sampling::{
    code_heatmap, heatmap_from_box, instances, pixel_mask, sample_box, sample_heatmap_rb,
    sample_heatmap_ri, PixelBox, Preservation,
};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bitstream::{Heatmap, LabelGrid, PolygonLabelMap};
use crate::codec::save_model_dir;
use crate::data::{image_to_tensor, ingest_folder, IngestSpec, Sample, SyntheticCorpus};
use crate::error::{Error, Result};
use crate::networks::{noise_grid, one_hot, BoundModel, Model, ScaleOutput, Trainable};
use crate::objectives::{
    distortion_mse, feature_matching_loss, gc_generator_total, lsgan_d_loss, lsgan_g_loss,
    masked_distortion, GeneratorTerms,
};
use crate::quantizer::quantize_soft_st;
use crate::tensor::{Adam, AdamConfig, Graph, ParamSet, Tensor, Var};

/// Training images, indexed from 0.
pub trait Dataset {
    fn len(&self) -> usize;
    fn get(&self, index: usize) -> Result<Sample>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Whether samples carry label maps.
    fn has_labels(&self) -> bool;
}

/// Procedural shapes with exact label maps.
pub struct SyntheticDataset {
    corpus: SyntheticCorpus,
    count: usize,
}

impl SyntheticDataset {
    pub fn new(size: usize, count: usize, seed: u64) -> Self {
        Self {
            corpus: SyntheticCorpus::new(size, size, seed),
            count,
        }
    }
}

impl Dataset for SyntheticDataset {
    fn len(&self) -> usize {
        self.count
    }

    fn get(&self, index: usize) -> Result<Sample> {
        if index >= self.count {
            return Err(Error::usage(format!("sample {index} of {}", self.count)));
        }
        Ok(self.corpus.sample(index as u64))
    }

    fn has_labels(&self) -> bool {
        true
    }
}

/// Preprocessed images from a folder; no label maps.
pub struct ImageDataset {
    images: Vec<Tensor>,
}

impl ImageDataset {
    pub fn load(dir: &Path, crop: usize, seed: u64) -> Result<Self> {
        let mut spec = IngestSpec::new(dir, crop as u32);
        spec.seed = seed;
        let images = ingest_folder(&spec)?.iter().map(image_to_tensor).collect();
        Ok(Self { images })
    }
}

impl Dataset for ImageDataset {
    fn len(&self) -> usize {
        self.images.len()
    }

    fn get(&self, index: usize) -> Result<Sample> {
        let image = self
            .images
            .get(index)
            .cloned()
            .ok_or_else(|| Error::usage(format!("sample {index} of {}", self.images.len())))?;
        let (h, w) = (image.shape()[2], image.shape()[3]);
        Ok(Sample {
            image,
            labels: PolygonLabelMap::default(),
            grid: LabelGrid::background(w, h),
        })
    }

    fn has_labels(&self) -> bool {
        false
    }
}

/// Folder images when `data_dir` is set, synthetic shapes otherwise.
pub fn dataset_for(cfg: &TrainConfig) -> Result<Box<dyn Dataset>> {
    match &cfg.data_dir {
        Some(dir) => Ok(Box::new(ImageDataset::load(dir, cfg.image_size, cfg.seed)?)),
        None => Ok(Box::new(SyntheticDataset::new(cfg.image_size, cfg.corpus_size, cfg.seed))),
    }
}

/// How the selective heatmap is chosen for a step.
#[derive(Clone, Debug)]
pub enum HeatmapChoice {
    /// Drawn by the mode's sampler.
    Sample,
    Fixed(Heatmap),
    /// Every code cell kept.
    Unmasked,
}

/// Scalar losses of one step, averaged over the batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub d_loss: f64,
    pub g_gan: f64,
    pub distortion: f64,
    pub fm: f64,
    pub total: f64,
}

impl LossReport {
    fn add_scaled(&mut self, o: &LossReport, f: f64) {
        self.d_loss += o.d_loss * f;
        self.g_gan += o.g_gan * f;
        self.distortion += o.distortion * f;
        self.fm += o.fm * f;
        self.total += o.total * f;
    }
}

pub const LOG_HEADER: &str = "iteration,d_loss,g_gan,distortion,fm,total";

/// Per-sample inputs shared by both passes of a step.
struct StepInput {
    image: Tensor,
    labels: Option<Tensor>,
    code_mask: Option<Tensor>,
    pixel_mask: Option<Tensor>,
    noise: Option<Tensor>,
}

type Grads = Vec<Option<Tensor>>;

fn accumulate(acc: &mut Option<Grads>, grads: Grads) {
    match acc {
        None => *acc = Some(grads),
        Some(a) => {
            for (slot, g) in a.iter_mut().zip(grads) {
                match (slot.as_mut(), g) {
                    (Some(s), Some(g)) => {
                        for (x, y) in s.data_mut().iter_mut().zip(g.data()) {
                            *x += y;
                        }
                    }
                    (None, Some(g)) => *slot = Some(g),
                    _ => {}
                }
            }
        }
    }
}

fn take_grads(grads: &mut crate::tensor::Gradients<f32>, vars: &[Var]) -> Grads {
    vars.iter().map(|&v| grads.take(v)).collect()
}

fn apply(opt: &mut Adam, params: &mut ParamSet, grads: Grads, batch: usize) {
    let inv = 1.0 / batch as f32;
    let pairs: Vec<_> = params
        .ids()
        .zip(grads)
        .map(|(id, g)| (id, g.map(|t| if batch == 1 { t } else { t.map(|v| v * inv) })))
        .collect();
    opt.step(params, &pairs);
}

fn logits(outs: &[ScaleOutput]) -> Vec<Var> {
    outs.iter().map(|o| o.logits).collect()
}

fn finite(v: f64, op: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::numerical(op, "loss is not finite"))
    }
}

/// Model plus optimizer state for one training run.
pub struct Trainer {
    cfg: TrainConfig,
    model: Model,
    opt_encoder: Adam,
    opt_generator: Adam,
    opt_features: Option<Adam>,
    opt_discriminator: Adam,
    rng: ChaCha8Rng,
    steps: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = Model::new(cfg.net.clone(), cfg.seed)?;
        Self::with_model(cfg, model)
    }

    pub fn with_model(cfg: TrainConfig, model: Model) -> Result<Self> {
        cfg.validate()?;
        if model.config() != &cfg.net {
            return Err(Error::config("model layout differs from the training config"));
        }
        let adam = AdamConfig {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            ..AdamConfig::default()
        };
        Ok(Self {
            opt_encoder: Adam::new(adam, model.encoder.params()),
            opt_generator: Adam::new(adam, model.generator.params()),
            opt_features: model.features.as_ref().map(|f| Adam::new(adam, f.params())),
            opt_discriminator: Adam::new(adam, model.discriminator.params()),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5EED)),
            steps: 0,
            cfg,
            model,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// One D update followed by one E/G update (D is skipped for the
    /// distortion-only baseline).
    pub fn step(&mut self, batch: &[Sample]) -> Result<LossReport> {
        self.step_with(batch, &HeatmapChoice::Sample)
    }

    pub fn step_with(&mut self, batch: &[Sample], choice: &HeatmapChoice) -> Result<LossReport> {
        if batch.is_empty() {
            return Err(Error::usage("empty batch"));
        }
        let inputs = batch
            .iter()
            .map(|s| self.prepare(s, choice))
            .collect::<Result<Vec<_>>>()?;
        let n = inputs.len();
        let inv = 1.0 / n as f64;
        let mut report = LossReport::default();

        if self.cfg.mode != TrainMode::MseBaseline {
            let mut acc = None;
            for inp in &inputs {
                let (loss, grads) = self.discriminator_pass(inp)?;
                report.d_loss += loss * inv;
                accumulate(&mut acc, grads);
            }
            if let Some(g) = acc {
                apply(&mut self.opt_discriminator, self.model.discriminator.params_mut(), g, n);
            }
        }

        let (mut acc_e, mut acc_f, mut acc_g) = (None, None, None);
        for inp in &inputs {
            let (r, e, f, g) = self.autoencoder_pass(inp)?;
            report.add_scaled(&r, inv);
            accumulate(&mut acc_e, e);
            accumulate(&mut acc_f, f);
            accumulate(&mut acc_g, g);
        }
        if let Some(g) = acc_e {
            apply(&mut self.opt_encoder, self.model.encoder.params_mut(), g, n);
        }
        if let (Some(g), Some(opt), Some(net)) = (acc_f, self.opt_features.as_mut(), self.model.features.as_mut()) {
            apply(opt, net.params_mut(), g, n);
        }
        if let Some(g) = acc_g {
            apply(&mut self.opt_generator, self.model.generator.params_mut(), g, n);
        }
        self.steps += 1;
        Ok(report)
    }

    fn prepare(&mut self, sample: &Sample, choice: &HeatmapChoice) -> Result<StepInput> {
        let net = self.model.config().clone();
        let [_, _, h, w] = sample.image.dims4()?;
        let s = net.downsample;
        if h % s != 0 || w % s != 0 {
            return Err(Error::usage(format!("training image {w}x{h} is not a multiple of {s}")));
        }
        let selective = self.cfg.mode.is_selective();
        let labels = if selective || net.condition_d {
            Some(one_hot(&sample.grid, net.classes)?)
        } else {
            None
        };
        let (code_mask, pixel_mask) = if selective {
            let heatmap = match choice {
                HeatmapChoice::Sample => self.sample_heatmap(&sample.grid, w, h),
                HeatmapChoice::Fixed(m) => m.clone(),
                HeatmapChoice::Unmasked => Heatmap::filled(h / s, w / s, true),
            };
            if (heatmap.height(), heatmap.width()) != (h / s, w / s) {
                return Err(Error::usage("heatmap does not match the code grid"));
            }
            let c = net.channels;
            let plane = heatmap.cells();
            let code = Tensor::from_fn(&[1, c, h / s, w / s], |i| plane[i % plane.len()] as u8 as f32);
            let pixels = pixel_mask(&heatmap, w, h, s);
            let px = Tensor::new(&[1, 1, h, w], pixels.iter().map(|&b| b as u8 as f32).collect())?;
            (Some(code), Some(px))
        } else {
            (None, None)
        };
        let noise = net
            .use_noise
            .then(|| noise_grid(net.noise_dim, h / s, w / s, &mut self.rng));
        Ok(StepInput {
            image: sample.image.clone(),
            labels,
            code_mask,
            pixel_mask,
            noise,
        })
    }

    fn sample_heatmap(&mut self, grid: &LabelGrid, w: usize, h: usize) -> Heatmap {
        let s = self.model.config().downsample;
        match self.cfg.mode {
            TrainMode::ScRb => sample_heatmap_rb(w, h, s, &mut self.rng).heatmap,
            _ => sample_heatmap_ri(grid, s, self.cfg.preserve_fraction, &mut self.rng).heatmap,
        }
    }

    /// `x_hat = G(mask * q(E(x)), noise, labels)` on an existing graph.
    fn reconstruct(&self, g: &mut Graph, p: &BoundModel, inp: &StepInput, x: Var, labels: Option<Var>) -> Result<Var> {
        let latent = self.model.encode(g, p, x)?;
        let mut code = quantize_soft_st(g, latent, &self.model.config().centers)?;
        if let Some(m) = &inp.code_mask {
            let m = g.constant(m.clone());
            code = g.mul(code, m)?;
        }
        let noise = inp.noise.as_ref().map(|t| g.constant(t.clone()));
        self.model.generate(g, p, code, noise, labels)
    }

    fn discriminator_pass(&self, inp: &StepInput) -> Result<(f64, Grads)> {
        let mut g = Graph::new();
        let p = self.model.bind(&mut g, Trainable::Discriminator);
        let x = g.constant(inp.image.clone());
        let labels = inp.labels.as_ref().map(|t| g.constant(t.clone()));
        let fake = self.reconstruct(&mut g, &p, inp, x, labels)?;
        let fake = g.constant(g.value(fake).clone());
        let real_out = self.model.discriminate(&mut g, &p, x, labels)?;
        let fake_out = self.model.discriminate(&mut g, &p, fake, labels)?;
        let loss = lsgan_d_loss(&mut g, &logits(&real_out), &logits(&fake_out))?;
        let value = finite(g.value(loss).item() as f64, "d_loss")?;
        let mut grads = g.backward(loss)?;
        Ok((value, take_grads(&mut grads, &p.discriminator)))
    }

    fn autoencoder_pass(&self, inp: &StepInput) -> Result<(LossReport, Grads, Grads, Grads)> {
        let mut g = Graph::new();
        let p = self.model.bind(&mut g, Trainable::Autoencoder);
        let x = g.constant(inp.image.clone());
        let labels = inp.labels.as_ref().map(|t| g.constant(t.clone()));
        let x_hat = self.reconstruct(&mut g, &p, inp, x, labels)?;
        let distortion = match &inp.pixel_mask {
            Some(m) => masked_distortion(&mut g, x, x_hat, m)?,
            None => distortion_mse(&mut g, x, x_hat)?,
        };
        let w = &self.cfg.weights;
        let mut report = LossReport {
            distortion: g.value(distortion).item() as f64,
            ..LossReport::default()
        };
        let total = if self.cfg.mode == TrainMode::MseBaseline {
            g.scale(distortion, w.lambda_d)?
        } else {
            let fake_out = self.model.discriminate(&mut g, &p, x_hat, labels)?;
            let gan = lsgan_g_loss(&mut g, &logits(&fake_out), self.cfg.gan_form)?;
            let fm = if w.w_fm != 0.0 {
                let real_out = self.model.discriminate(&mut g, &p, x, labels)?;
                Some(feature_matching_loss(&mut g, &real_out, &fake_out)?)
            } else {
                None
            };
            report.g_gan = g.value(gan).item() as f64;
            report.fm = fm.map_or(0.0, |v| g.value(v).item() as f64);
            let terms = GeneratorTerms {
                gan,
                distortion,
                feature_matching: fm,
                perceptual: None,
            };
            gc_generator_total(&mut g, &terms, w)?
        };
        report.total = finite(g.value(total).item() as f64, "total")?;
        let mut grads = g.backward(total)?;
        let e = take_grads(&mut grads, &p.encoder);
        let f = take_grads(&mut grads, &p.features);
        let gg = take_grads(&mut grads, &p.generator);
        Ok((report, e, f, gg))
    }
}

/// Result of [`train_loop`].
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<LossReport>,
}

fn write_row(out: &mut impl Write, it: usize, r: &LossReport) -> std::io::Result<()> {
    writeln!(out, "{it},{},{},{},{},{}", r.d_loss, r.g_gan, r.distortion, r.fm, r.total)
}

/// Runs `cfg.iterations` steps over `data`, reshuffling each epoch.
///
/// With `out_dir`, writes `loss.csv`, periodic and final model snapshots,
/// and a `nan_snapshot` directory if a loss turns non-finite.
pub fn train_loop(data: &dyn Dataset, cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::usage("training set is empty"));
    }
    let needs_labels = cfg.mode.is_selective() || cfg.net.condition_d;
    if needs_labels && !data.has_labels() {
        return Err(Error::config(format!(
            "mode {} needs label maps; the image folder has none",
            cfg.mode.name()
        )));
    }
    let mut trainer = Trainer::new(cfg.clone())?;
    let mut csv = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let mut f = BufWriter::new(File::create(dir.join("loss.csv"))?);
            writeln!(f, "{LOG_HEADER}")?;
            Some(f)
        }
        None => None,
    };
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let mut log = Vec::with_capacity(cfg.iterations);
    for it in 1..=cfg.iterations {
        let mut batch = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            if cursor == order.len() {
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            batch.push(data.get(order[cursor])?);
            cursor += 1;
        }
        let report = match trainer.step(&batch) {
            Ok(r) => r,
            Err(e @ Error::Numerical { .. }) => {
                if let Some(dir) = out_dir {
                    save_model_dir(&dir.join("nan_snapshot"), cfg, trainer.model())?;
                }
                log::error!("iteration {it}: {e}");
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        if let Some(f) = csv.as_mut() {
            write_row(f, it, &report)?;
        }
        log::debug!("iteration {it}: {report:?}");
        log.push(report);
        if cfg.norm_mode == NormMode::InstanceThenFixed && it == cfg.iterations / 2 {
            log::info!("instance norm keeps no running statistics; nothing to freeze");
        }
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 && it < cfg.iterations {
                if let Some(f) = csv.as_mut() {
                    f.flush()?;
                }
                save_model_dir(&checkpoint_dir(dir, it), cfg, trainer.model())?;
            }
        }
    }
    if let Some(mut f) = csv {
        f.flush()?;
    }
    if let Some(dir) = out_dir {
        save_model_dir(dir, cfg, trainer.model())?;
    }
    Ok(TrainOutcome {
        model: trainer.into_model(),
        log,
    })
}

pub fn checkpoint_dir(out_dir: &Path, iteration: usize) -> PathBuf {
    out_dir.join(format!("checkpoint_{iteration:06}"))
}
