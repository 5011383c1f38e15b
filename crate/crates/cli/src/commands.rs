use std::fmt::Write as _;
use std::fs;
use std::io::{Cursor, Write as _};
use std::path::{Path, PathBuf};
use std::time::Instant;

use gcpress_core::bitstream::{read_container, write_container, Mode, PolygonLabelMap};
use gcpress_core::codec::{measure_bpp, sample_uniform_latent, write_atomic, CodecSession, Preserve, SelectiveInput};
use gcpress_core::data::{ms_ssim_with, psnr, tensor_to_image};
use gcpress_core::trainer::{dataset_for, parse_pairs, train_loop, TrainConfig};
use gcpress_core::{Error, Result};
use image::{ImageFormat, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const THREADS_VAR: &str = "GCPRESS_THREADS";

fn load_png(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)?.to_rgb8())
}

fn save_png(path: &Path, img: &RgbImage) -> Result<()> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    write_atomic(path, buf.get_ref())
}

fn worker_count() -> Result<usize> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::usage(format!("{THREADS_VAR} must be a positive integer, got '{v}'"))),
        },
    }
}

/// Built-in defaults, then the config file, then command-line pairs.
pub fn train(config: Option<&Path>, out: &Path, overrides: &[String]) -> Result<()> {
    let mut pairs = match config {
        Some(p) => parse_pairs(&fs::read_to_string(p)?)?,
        None => Vec::new(),
    };
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::usage(format!("override '{o}' is not key=value")))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    let cfg = TrainConfig::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    let data = dataset_for(&cfg)?;
    log::info!(
        "training {} for {} iterations on {} images",
        cfg.mode.name(),
        cfg.iterations,
        data.len()
    );
    let start = Instant::now();
    let outcome = train_loop(data.as_ref(), &cfg, Some(out))?;
    if let Some(last) = outcome.log.last() {
        log::info!(
            "done in {:.1}s; final distortion {:.4}, total {:.4}",
            start.elapsed().as_secs_f64(),
            last.distortion,
            last.total
        );
    }
    Ok(())
}

pub fn encode(model: &Path, input: &Path, out: &Path, labels: Option<&Path>, preserve: Option<&str>) -> Result<()> {
    let session = CodecSession::load(model)?;
    let img = load_png(input)?;
    let selective = match (session.mode(), labels, preserve) {
        (Mode::Generative, None, None) => None,
        (Mode::Generative, _, _) => {
            return Err(Error::usage("--labels and --preserve need a selective model"))
        }
        (Mode::Selective, labels, preserve) => {
            let labels = match labels {
                Some(p) => PolygonLabelMap::parse(&fs::read_to_string(p)?)?,
                None => PolygonLabelMap::default(),
            };
            let preserve = preserve.map_or(Ok(Preserve::All), Preserve::parse)?;
            Some(SelectiveInput { labels, preserve })
        }
    };
    let ci = session.compress(&img, selective.as_ref())?;
    let bytes = write_container(&ci)?;
    write_atomic(out, &bytes)?;
    let r = measure_bpp(&ci)?;
    log::info!(
        "{} bytes, {:.4} bpp total, payload {:.4} bpp of bound {:.4} bpp",
        bytes.len(),
        r.total_bpp,
        r.payload_bpp,
        r.bound_bpp
    );
    Ok(())
}

pub fn decode(model: &Path, input: &Path, out: &Path) -> Result<()> {
    let session = CodecSession::load(model)?;
    let ci = read_container(&fs::read(input)?)?;
    save_png(out, &session.decompress(&ci)?)
}

struct Row {
    file: String,
    bpp: f64,
    psnr: f64,
    ms_ssim: f64,
}

fn eval_one(session: &CodecSession, path: &Path) -> Result<Row> {
    let img = load_png(path)?;
    let ci = session.compress(&img, None)?;
    let bytes = write_container(&ci)?;
    let out = session.decompress(&read_container(&bytes)?)?;
    Ok(Row {
        file: path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
        bpp: (bytes.len() * 8) as f64 / (img.width() * img.height()) as f64,
        psnr: psnr(&img, &out)?,
        ms_ssim: ms_ssim_with(&img, &out, false)?,
    })
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")));
    files.sort();
    Ok(files)
}

fn fmt_metric(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

pub fn eval(model: &Path, dir: &Path, out: Option<&Path>) -> Result<()> {
    let session = CodecSession::load(model)?;
    if session.mode() != Mode::Generative {
        return Err(Error::usage("eval round-trips without label maps and needs a generative model"));
    }
    let files = png_files(dir)?;
    if files.is_empty() {
        return Err(Error::usage(format!("no PNG files in {}", dir.display())));
    }
    let workers = worker_count()?.min(files.len());
    let mut rows: Vec<Option<Result<Row>>> = (0..files.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let (session, files) = (&session, &files);
                scope.spawn(move || {
                    (w..files.len())
                        .step_by(workers)
                        .map(|i| (i, eval_one(session, &files[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("eval worker panicked") {
                rows[i] = Some(r);
            }
        }
    });
    let mut csv = String::from("file,bpp,psnr,ms_ssim\n");
    for r in rows.into_iter().flatten() {
        let r = r?;
        writeln!(csv, "{},{:.6},{},{:.6}", r.file, r.bpp, fmt_metric(r.psnr), r.ms_ssim).unwrap();
    }
    match out {
        Some(p) => write_atomic(p, csv.as_bytes()),
        None => Ok(std::io::stdout().write_all(csv.as_bytes())?),
    }
}

pub fn sample(model: &Path, seed: u64, out: &Path, width: Option<usize>, height: Option<usize>) -> Result<()> {
    let session = CodecSession::load(model)?;
    let size = session.config().image_size;
    let (w, h) = (width.unwrap_or(size), height.unwrap_or(size));
    if w == 0 || h == 0 {
        return Err(Error::usage("sample size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = sample_uniform_latent(&session, h, w, &mut rng)?;
    save_png(out, &tensor_to_image(&x)?)
}

/// Stable `key=value` dump of a container.
pub fn inspect_text(bytes: &[u8]) -> Result<String> {
    let ci = read_container(bytes)?;
    let bits = ci.bits();
    let r = measure_bpp(&ci)?;
    let mut s = String::new();
    let mut kv = |k: &str, v: String| writeln!(s, "{k}={v}").unwrap();
    kv("mode", ci.mode.name().into());
    kv("width", ci.width.to_string());
    kv("height", ci.height.to_string());
    kv("channels", ci.channels.to_string());
    kv("levels", ci.centers.levels().to_string());
    kv("downsample", ci.downsample.to_string());
    kv("code_height", ci.code_height().to_string());
    kv("code_width", ci.code_width().to_string());
    kv("header_bits", bits.header_bits.to_string());
    kv("heatmap_bits", bits.heatmap_bits.to_string());
    kv("labelmap_bits", bits.labelmap_bits.to_string());
    kv("payload_bits", bits.payload_bits.to_string());
    kv("total_bits", bits.total_bits().to_string());
    kv("header_bpp", format!("{:.6}", r.header_bpp));
    kv("heatmap_bpp", format!("{:.6}", r.heatmap_bpp));
    kv("labelmap_bpp", format!("{:.6}", r.labelmap_bpp));
    kv("payload_bpp", format!("{:.6}", r.payload_bpp));
    kv("total_bpp", format!("{:.6}", r.total_bpp));
    kv("bound_bpp", format!("{:.6}", r.bound_bpp));
    kv("preserved_fraction", format!("{:.6}", r.preserved_fraction));
    kv("preserved_bound_bpp", format!("{:.6}", r.preserved_bound_bpp));
    kv("savings_percent", format!("{:.2}", r.savings * 100.0));
    Ok(s)
}

pub fn inspect(input: &Path) -> Result<()> {
    let text = inspect_text(&fs::read(input)?)?;
    Ok(std::io::stdout().write_all(text.as_bytes())?)
}
