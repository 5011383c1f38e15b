//! Acceptance runner: one PASS/FAIL line per criterion.
//!
//! Failing criteria are reported but do not fail the process unless
//! `GCPRESS_ACCEPTANCE_STRICT=1` is set.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use gcpress_core::bitstream::{
    decode_heatmap, decode_label_map, encode_heatmap, encode_label_map, read_container,
    write_container, CompressedImage, Heatmap, Mode, Polygon, PolygonLabelMap,
};
use gcpress_core::codec::{
    decode_constant_code, measure_bpp, sample_uniform_latent, CodecSession, Preserve,
    SelectiveInput,
};
use gcpress_core::data::{image_to_tensor, mse, psnr_from_mse, tensor_to_image, SyntheticCorpus};
use gcpress_core::entropy::{
    ac_decode, ac_encode, bpp_upper_bound, BitReader, BitWriter, FrequencyTable,
};
use gcpress_core::networks::{one_hot, Model};
use gcpress_core::quantizer::{quantize_hard, CenterSet};
use gcpress_core::trainer::{train_loop, SyntheticDataset, TrainConfig, TrainMode};
use gcpress_core::Tensor;
use image::RgbImage;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::gradcheck::{cases, check_with_step, network_problem, run_case, Outcome, TOLERANCE};

const DESK_SEED: u64 = 7;
const DESK_SIZE: usize = 64;
const HELD_OUT: u64 = 32;
/// Held-out samples come from indices far past the training corpus.
const HELD_OUT_START: u64 = 1_000_000;

type Verdict = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct Runner {
    failed: Vec<u32>,
}

impl Runner {
    fn run(&mut self, id: u32, name: &str, budget: Option<Duration>, f: impl FnOnce() -> Verdict) {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match (outcome, budget) {
            (Ok(d), Some(b)) if elapsed > b => Err(format!("{d}; over time budget {b:?}")),
            (o, _) => o,
        };
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                self.failed.push(id);
                ("FAIL", d)
            }
        };
        println!("criterion {id:>2} {tag} [{name}] {detail} ({:.1}s)", elapsed.as_secs_f64());
    }
}

fn random_centers(rng: &mut ChaCha8Rng) -> CenterSet {
    let levels = rng.random_range(2..=12);
    let mut v = rng.random_range(-4.0f32..0.0);
    let centers = (0..levels)
        .map(|_| {
            let c = v;
            v += rng.random_range(0.05f32..1.5);
            c
        })
        .collect();
    CenterSet::new(centers, 1.0).unwrap()
}

fn brute_nearest(centers: &[f32], v: f32) -> u8 {
    let mut best = 0;
    for (i, &c) in centers.iter().enumerate() {
        if (v - c).abs() < (v - centers[best]).abs() {
            best = i;
        }
    }
    best as u8
}

fn quantizer_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 100_000;
    let mut mismatches = 0usize;
    for _ in 0..20 {
        let cs = random_centers(&mut rng);
        let lo = cs.centers()[0] - 2.0;
        let hi = cs.centers()[cs.levels() - 1] + 2.0;
        let data: Vec<f32> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        let w = Tensor::new(&[1, 1, 1, n], data.clone()).unwrap();
        let code = quantize_hard(&w, &cs).unwrap();
        mismatches += data
            .iter()
            .zip(code.symbols())
            .filter(|&(&v, &s)| brute_nearest(cs.centers(), v) != s)
            .count();
    }
    ensure(mismatches == 0, format!("{mismatches} mismatches over 20 x {n} values"))
}

fn gradient_suite() -> Verdict {
    let all = cases();
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for (i, case) in all.iter().enumerate() {
        match run_case(case, 1000 + i as u64) {
            Ok(r) => worst = worst.max(r.worst),
            Err(e) => failures.push(e),
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let problem = network_problem(&mut rng);
    let mut checked = 0;
    for _ in 0..12 {
        if let Outcome::Checked(e) = check_with_step(&problem, &mut rng, 1e-5) {
            checked += 1;
            if e > TOLERANCE {
                failures.push(format!("network composite: relative error {e:.2e}"));
            }
            worst = worst.max(e);
        }
    }
    if checked < 3 {
        failures.push(format!("network composite: only {checked} instances away from kinks"));
    }
    ensure(
        failures.is_empty(),
        format!(
            "{} op/loss cases plus network composite, worst relative error {worst:.2e}{}",
            all.len(),
            if failures.is_empty() { String::new() } else { format!("; {failures:?}") }
        ),
    )
}

fn round_trip_bits(symbols: &[u8], table: &FrequencyTable) -> (Vec<u8>, usize) {
    let mut w = BitWriter::new();
    let bits = ac_encode(symbols, table, &mut w).unwrap();
    let bytes = w.into_bytes();
    let mut r = BitReader::new(&bytes);
    (ac_decode(&mut r, symbols.len(), table).unwrap(), bits)
}

fn arithmetic_coder() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bad = 0;
    for _ in 0..1000 {
        let levels = rng.random_range(1..=16usize);
        let mut counts: Vec<u32> = (0..levels)
            .map(|_| if rng.random_bool(0.2) { 0 } else { rng.random_range(1..5000) })
            .collect();
        if counts.iter().all(|&c| c == 0) {
            counts[0] = 1;
        }
        let table = FrequencyTable::from_counts(&counts).unwrap();
        let codable: Vec<u8> = (0..levels as u8).filter(|&s| counts[s as usize] > 0).collect();
        let len = rng.random_range(0..3000);
        let stream: Vec<u8> = (0..len).map(|_| codable[rng.random_range(0..codable.len())]).collect();
        if round_trip_bits(&stream, &table).0 != stream {
            bad += 1;
        }
    }
    let n = 10_000;
    let uniform: Vec<u8> = (0..n).map(|_| rng.random_range(0..5)).collect();
    let (back, bits) = round_trip_bits(&uniform, &FrequencyTable::uniform(5));
    let rate = bits as f64 / n as f64;
    let target = 5f64.log2();
    let skewed = vec![2u8; n];
    let (back_s, bits_s) = round_trip_bits(&skewed, &FrequencyTable::smoothed(&skewed, 5));
    let skew_rate = bits_s as f64 / n as f64;
    let ok = bad == 0
        && back == uniform
        && back_s == skewed
        && (rate - target).abs() <= 0.01 * target
        && skew_rate < 0.02;
    ensure(
        ok,
        format!(
            "{bad}/1000 round-trip failures; uniform {rate:.4} bits/symbol vs {target:.4}; \
             single-symbol {skew_rate:.5} bits/symbol"
        ),
    )
}

fn noise_image(rng: &mut ChaCha8Rng, w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |_, _| image::Rgb([rng.random(), rng.random(), rng.random()]))
}

fn entropy_bound() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_slack = f64::INFINITY;
    let mut violations = 0;
    for channels in [2, 4, 8] {
        let mut cfg = TrainConfig::for_mode(TrainMode::Gc);
        cfg.net.width_scale = 0.1;
        cfg.net.channels = channels;
        let session = CodecSession::new(cfg.clone(), Model::new(cfg.net.clone(), channels as u64).unwrap()).unwrap();
        for i in 0..16 {
            let (w, h) = (rng.random_range(16..96), rng.random_range(16..96));
            let img = if i % 2 == 0 {
                noise_image(&mut rng, w, h)
            } else {
                let s = SyntheticCorpus::new(w as usize, h as usize, i).sample(0);
                tensor_to_image(&s.image).unwrap()
            };
            let ci = session.compress(&img, None).unwrap();
            let n = ci.code_height() * ci.code_width() * channels;
            let limit = n as f64 * (ci.centers.levels() as f64).log2() + 64.0;
            let bits = ci.bits().payload_bits as f64;
            worst_slack = worst_slack.min(limit - bits);
            if bits > limit {
                violations += 1;
            }
        }
    }
    let footnote = bpp_upper_bound(2, 5, 16);
    let footnote_ok = (footnote - 0.01814).abs() < 5e-6 && (footnote * 1e3).round() == (0.0181f64 * 1e3).round();
    ensure(
        violations == 0 && footnote_ok,
        format!(
            "{violations}/48 payloads over n log2 L + 64, tightest slack {worst_slack:.1} bits; \
             bound(C=2, L=5, s=16) = {footnote:.5} bpp"
        ),
    )
}

fn random_heatmap(rng: &mut ChaCha8Rng) -> Heatmap {
    let (h, w) = (rng.random_range(1..40), rng.random_range(1..40));
    let p = match rng.random_range(0..4) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.random_range(0.0..1.0),
    };
    let mut m = Heatmap::filled(h, w, false);
    if rng.random_bool(0.5) {
        let (y0, x0) = (rng.random_range(0..h), rng.random_range(0..w));
        let (y1, x1) = (rng.random_range(y0..h), rng.random_range(x0..w));
        for y in y0..=y1 {
            for x in x0..=x1 {
                m.set(y, x, true);
            }
        }
    } else {
        for y in 0..h {
            for x in 0..w {
                m.set(y, x, rng.random_bool(p));
            }
        }
    }
    m
}

fn random_labels(rng: &mut ChaCha8Rng, w: u32, h: u32) -> PolygonLabelMap {
    let objects = (0..rng.random_range(0..8))
        .map(|i| {
            let k = rng.random_range(3..12);
            Polygon {
                class: rng.random_range(0..5),
                instance: i + 1,
                vertices: (0..k).map(|_| (rng.random_range(0..=w), rng.random_range(0..=h))).collect(),
            }
        })
        .collect();
    PolygonLabelMap { objects }
}

fn random_container(rng: &mut ChaCha8Rng) -> CompressedImage {
    let mode = if rng.random_bool(0.5) { Mode::Generative } else { Mode::Selective };
    let downsample = [4, 8, 16][rng.random_range(0..3)];
    let (width, height): (usize, usize) = (rng.random_range(1..600), rng.random_range(1..600));
    let channels = rng.random_range(1..=16);
    let centers = random_centers(rng);
    let levels = centers.levels();
    let (ch, cw) = (height.div_ceil(downsample), width.div_ceil(downsample));
    let tables = (0..channels)
        .map(|_| {
            let syms: Vec<u8> = (0..rng.random_range(0..200)).map(|_| rng.random_range(0..levels) as u8).collect();
            FrequencyTable::smoothed(&syms, levels)
        })
        .collect();
    let (heatmap, labelmap) = match mode {
        Mode::Generative => (None, None),
        Mode::Selective => {
            let mut m = Heatmap::filled(ch, cw, false);
            for y in 0..ch {
                for x in 0..cw {
                    m.set(y, x, rng.random_bool(0.4));
                }
            }
            let labels = random_labels(rng, width as u32, height as u32);
            (
                Some(encode_heatmap(&m).unwrap()),
                Some(encode_label_map(&labels, width as u32, height as u32).unwrap()),
            )
        }
    };
    let payload = (0..rng.random_range(0..500)).map(|_| rng.random()).collect();
    CompressedImage {
        mode,
        width,
        height,
        channels,
        downsample,
        centers,
        tables,
        heatmap,
        labelmap,
        payload,
    }
}

fn side_codecs() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut bad_c, mut bad_h, mut bad_l) = (0, 0, 0);
    for _ in 0..500 {
        let ci = random_container(&mut rng);
        let bytes = write_container(&ci).unwrap();
        let back = read_container(&bytes).unwrap();
        if back != ci || write_container(&back).unwrap() != bytes || bytes.len() != ci.serialized_len() {
            bad_c += 1;
        }
        let m = random_heatmap(&mut rng);
        let enc = encode_heatmap(&m).unwrap();
        if decode_heatmap(&enc, m.height(), m.width()).unwrap() != m {
            bad_h += 1;
        }
        let (w, h) = (rng.random_range(1..2000), rng.random_range(1..2000));
        let labels = random_labels(&mut rng, w, h);
        let enc = encode_label_map(&labels, w, h).unwrap();
        if decode_label_map(&enc, w, h).unwrap() != labels {
            bad_l += 1;
        }
    }
    let fixed = PolygonLabelMap {
        objects: vec![
            Polygon::rectangle(2, 1, 10, 12, 90, 70),
            Polygon {
                class: 3,
                instance: 2,
                vertices: vec![(120, 30), (200, 150), (60, 180)],
            },
            Polygon {
                class: 1,
                instance: 3,
                vertices: vec![(200, 200), (230, 190), (250, 220), (240, 250), (205, 245)],
            },
        ],
    };
    let small = encode_label_map(&fixed, 256, 256).unwrap().len();
    let large = encode_label_map(&fixed, 1024, 1024).unwrap().len();
    let change = (large as f64 - small as f64).abs() / small as f64;
    ensure(
        bad_c + bad_h + bad_l == 0 && change < 0.10,
        format!(
            "round-trip failures: container {bad_c}/500, heatmap {bad_h}/500, label map {bad_l}/500; \
             label map {small} B at 256x256 vs {large} B at 1024x1024 ({:.1}% change)",
            change * 100.0
        ),
    )
}

struct DeskRun {
    gc: CodecSession,
    baseline: CodecSession,
    untrained: CodecSession,
    gc_elapsed: Duration,
    gc_finite: bool,
}

fn desk_config(mode: TrainMode) -> TrainConfig {
    let mut cfg = TrainConfig::for_mode(mode);
    cfg.seed = DESK_SEED;
    cfg.image_size = DESK_SIZE;
    cfg.iterations = 2000;
    cfg.net.width_scale = 0.1;
    cfg.net.channels = 4;
    cfg
}

fn train(cfg: &TrainConfig) -> gcpress_core::Result<(CodecSession, bool)> {
    let data = SyntheticDataset::new(cfg.image_size, cfg.corpus_size, cfg.seed);
    let outcome = train_loop(&data, cfg, None)?;
    let finite = outcome.log.iter().all(|r| r.total.is_finite());
    Ok((CodecSession::new(cfg.clone(), outcome.model)?, finite))
}

fn desk_run() -> gcpress_core::Result<DeskRun> {
    let gc_cfg = desk_config(TrainMode::Gc);
    let untrained = CodecSession::new(gc_cfg.clone(), Model::new(gc_cfg.net.clone(), gc_cfg.seed)?)?;
    let start = Instant::now();
    let (gc, gc_finite) = train(&gc_cfg)?;
    let gc_elapsed = start.elapsed();
    let (baseline, _) = train(&desk_config(TrainMode::MseBaseline))?;
    Ok(DeskRun { gc, baseline, untrained, gc_elapsed, gc_finite })
}

fn held_out() -> Vec<RgbImage> {
    let corpus = SyntheticCorpus::new(DESK_SIZE, DESK_SIZE, DESK_SEED);
    (HELD_OUT_START..HELD_OUT_START + HELD_OUT)
        .map(|i| tensor_to_image(&corpus.sample(i).image).unwrap())
        .collect()
}

/// Mean per-image MSE and PSNR after a full compress/decompress round trip.
fn evaluate(session: &CodecSession, images: &[RgbImage]) -> (f64, f64) {
    let errors: Vec<f64> = images
        .iter()
        .map(|img| {
            let ci = session.compress(img, None).unwrap();
            let bytes = write_container(&ci).unwrap();
            let out = session.decompress(&read_container(&bytes).unwrap()).unwrap();
            mse(img, &out).unwrap()
        })
        .collect();
    let n = errors.len() as f64;
    (
        errors.iter().sum::<f64>() / n,
        errors.iter().map(|&e| psnr_from_mse(e)).sum::<f64>() / n,
    )
}

fn desk_training(run: &DeskRun, images: &[RgbImage]) -> Verdict {
    let (_, before) = evaluate(&run.untrained, images);
    let (_, after) = evaluate(&run.gc, images);
    let gain = after - before;
    let minutes = run.gc_elapsed.as_secs_f64() / 60.0;
    ensure(
        run.gc_finite && minutes < 30.0 && gain >= 3.0,
        format!(
            "held-out PSNR {before:.2} dB untrained -> {after:.2} dB trained (gain {gain:+.2} dB, need +3.00); \
             {minutes:.1} min; finite losses: {}",
            run.gc_finite
        ),
    )
}

fn perception_distortion(run: &DeskRun, images: &[RgbImage]) -> Verdict {
    let (gan, _) = evaluate(&run.gc, images);
    let (base, _) = evaluate(&run.baseline, images);
    ensure(base <= gan, format!("held-out MSE: MSE-only {base:.1} vs GAN {gan:.1}"))
}

fn dplus_invariance() -> Verdict {
    let mut cfg = desk_config(TrainMode::GcDPlus);
    cfg.iterations = 40;
    let (session, _) = train(&cfg).map_err(|e| e.to_string())?;
    let model = session.model();
    let corpus = SyntheticCorpus::new(DESK_SIZE, DESK_SIZE, DESK_SEED);
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let mut differing = 0;
    for i in 0..10 {
        let s = corpus.sample(HELD_OUT_START + i);
        let img = tensor_to_image(&s.image).unwrap();
        let x = image_to_tensor(&img);
        let w1 = model.infer_latent(&x).unwrap();
        let w2 = model.infer_latent(&x).unwrap();
        let code = gcpress_core::quantizer::dequantize::<f32>(&quantize_hard(&w1, &session.net().centers).unwrap()).unwrap();
        let labels = one_hot(&s.grid, session.net().classes).unwrap();
        let plain = model.infer_image(&code, None, None).unwrap();
        let with_labels = model.infer_image(&code, None, Some(&labels)).unwrap();
        let decoded = session.decompress(&session.compress(&img, None).unwrap()).unwrap();
        if bits(&w1) != bits(&w2) || bits(&plain) != bits(&with_labels) || decoded != tensor_to_image(&plain).unwrap() {
            differing += 1;
        }
    }
    ensure(
        differing == 0 && session.net().condition_d,
        format!("{differing}/10 images differ with vs without a label map (D conditioned: {})", session.net().condition_d),
    )
}

fn sc_proportionality() -> Verdict {
    let mut cfg = TrainConfig::for_mode(TrainMode::ScRi);
    cfg.seed = DESK_SEED;
    cfg.net.width_scale = 0.1;
    let session = CodecSession::new(cfg.clone(), Model::new(cfg.net.clone(), cfg.seed).unwrap()).unwrap();
    let size = 768;
    let corpus = SyntheticCorpus::new(size, size, DESK_SEED + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: (f64, f64) = (0.0, 1.0);
    let mut outside = Vec::new();
    let mut max_empty_payload = 0;
    let mut empty_sections_ok = true;
    for i in 0..10 {
        let s = corpus.sample(i);
        let img = tensor_to_image(&s.image).unwrap();
        let labels = s.labels.clone();
        let code = session.encode_code(&img).unwrap();
        let (ch, cw) = (code.height(), code.width());
        let with = |preserve: Preserve| {
            session
                .compress(&img, Some(&SelectiveInput { labels: labels.clone(), preserve }))
                .unwrap()
        };
        let full = with(Preserve::Cells(Heatmap::filled(ch, cw, true))).bits().payload_bits as f64;
        let mut cells: Vec<usize> = (0..ch * cw).collect();
        for k in 1..=9 {
            let p = k as f64 / 10.0;
            cells.shuffle(&mut rng);
            let keep = (p * (ch * cw) as f64).round() as usize;
            let mut m = Heatmap::filled(ch, cw, false);
            for &c in &cells[..keep] {
                m.set(c / cw, c % cw, true);
            }
            let ratio = with(Preserve::Cells(m)).bits().payload_bits as f64 / full / p;
            if (ratio - 1.0).abs() > (worst.1 - 1.0).abs() {
                worst = (p, ratio);
            }
            if !(0.85..=1.15).contains(&ratio) {
                outside.push(format!("image {i} p={p:.1}: {:.3}p", ratio));
            }
        }
        let empty = with(Preserve::Nothing);
        let b = empty.bits();
        max_empty_payload = max_empty_payload.max(b.payload_bits);
        empty_sections_ok &= b.heatmap_bits > 0
            && b.labelmap_bits > 0
            && b.total_bits() == b.header_bits + b.heatmap_bits + b.labelmap_bits + b.payload_bits;
    }
    ensure(
        outside.is_empty() && max_empty_payload <= 8 && empty_sections_ok,
        format!(
            "worst ratio {:.3}p at p={:.1}; empty preserve set payload <= {max_empty_payload} bits{}",
            worst.1,
            worst.0,
            if outside.is_empty() { String::new() } else { format!("; outside band: {outside:?}") }
        ),
    )
}

fn uniform_sampling(run: &DeskRun) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let samples: Vec<Tensor> = (0..16)
        .map(|_| sample_uniform_latent(&run.gc, DESK_SIZE, DESK_SIZE, &mut rng).unwrap())
        .collect();
    let finite = samples.iter().all(Tensor::is_finite);
    let n = samples[0].len();
    let k = samples.len() as f64;
    let inter = (0..n)
        .map(|j| {
            let mean = samples.iter().map(|s| s.data()[j] as f64).sum::<f64>() / k;
            samples.iter().map(|s| (s.data()[j] as f64 - mean).powi(2)).sum::<f64>() / k
        })
        .sum::<f64>()
        / n as f64;
    let zero = run.gc.net().centers.zero_symbol();
    let constant = decode_constant_code(&run.gc, DESK_SIZE, DESK_SIZE, zero).unwrap();
    let plane = DESK_SIZE * DESK_SIZE;
    let intra = constant
        .data()
        .chunks(plane)
        .map(|c| {
            let mean = c.iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
            c.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / plane as f64
        })
        .sum::<f64>()
        / 3.0;
    ensure(
        finite && inter > intra,
        format!("16 finite samples: {finite}; inter-sample variance {inter:.4} vs constant-code variance {intra:.4}"),
    )
}

fn savings_report(run: &DeskRun, images: &[RgbImage]) -> Verdict {
    let mut payload = 0.0;
    let mut bound = 0.0;
    let mut total = 0.0;
    let mut above = 0;
    for img in images {
        let r = measure_bpp(&run.gc.compress(img, None).unwrap()).unwrap();
        if r.payload_bpp >= r.bound_bpp {
            above += 1;
        }
        payload += r.payload_bpp;
        bound += r.bound_bpp;
        total += r.total_bpp;
    }
    let n = images.len() as f64;
    let savings = 1.0 - payload / bound;
    ensure(
        above == 0,
        format!(
            "payload {:.4} bpp < bound {:.4} bpp on {}/{} images; savings {:.1}% (reference figure 8.8%, not asserted); \
             with header {:.4} bpp",
            payload / n,
            bound / n,
            images.len() - above,
            images.len(),
            savings * 100.0,
            total / n
        ),
    )
}

fn main() {
    let mut runner = Runner { failed: Vec::new() };
    runner.run(1, "quantizer oracle", Some(Duration::from_secs(5)), quantizer_oracle);
    runner.run(2, "gradient suite", Some(Duration::from_secs(120)), gradient_suite);
    runner.run(3, "arithmetic coder", Some(Duration::from_secs(60)), arithmetic_coder);
    runner.run(4, "entropy bound", None, entropy_bound);
    runner.run(5, "container and side codecs", None, side_codecs);

    let images = held_out();
    let desk = match catch_unwind(desk_run) {
        Ok(Ok(run)) => Some(run),
        Ok(Err(e)) => {
            println!("desk training failed: {e}");
            None
        }
        Err(_) => {
            println!("desk training panicked");
            None
        }
    };
    let missing = || Err("desk training did not complete".to_string());
    runner.run(6, "desk GC training", None, || desk.as_ref().map_or_else(missing, |r| desk_training(r, &images)));
    runner.run(7, "perception-distortion", None, || {
        desk.as_ref().map_or_else(missing, |r| perception_distortion(r, &images))
    });
    runner.run(8, "GC(D+) invariance", None, dplus_invariance);
    runner.run(9, "SC proportionality", None, sc_proportionality);
    runner.run(10, "uniform latent sampling", None, || desk.as_ref().map_or_else(missing, uniform_sampling));
    runner.run(11, "bitrate savings", None, || desk.as_ref().map_or_else(missing, |r| savings_report(r, &images)));

    println!("acceptance: {}/11 criteria passed", 11 - runner.failed.len());
    if !runner.failed.is_empty() {
        println!("failed criteria: {:?}", runner.failed);
        if std::env::var("GCPRESS_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
