use image::RgbImage;

use crate::error::{Error, Result};

/// Per-scale weights of the reference MS-SSIM implementation.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
/// Smallest side that still gets all five scales.
pub const MS_SSIM_MIN_SIDE: usize = 160;

fn check_dims(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if a.dimensions() != b.dimensions() {
        return Err(Error::usage(format!(
            "image sizes differ: {:?} vs {:?}",
            a.dimensions(),
            b.dimensions()
        )));
    }
    Ok(())
}

/// Mean squared error on the 0..=255 scale.
pub fn mse(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_dims(a, b)?;
    let n = a.as_raw().len().max(1) as f64;
    let sum: f64 = a
        .as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    Ok(sum / n)
}

/// `10 log10(255^2 / MSE)`; identical images give `f64::INFINITY`.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0f64 * 255.0 / mse).log10()
    }
}

/// Single-channel plane.
#[derive(Clone)]
struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Plane {
    fn channel(img: &RgbImage, c: usize) -> Self {
        Self {
            w: img.width() as usize,
            h: img.height() as usize,
            v: img.pixels().map(|p| p.0[c] as f64).collect(),
        }
    }

    fn downsample(&self) -> Self {
        let (w, h) = (self.w / 2, self.h / 2);
        let mut v = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let at = |dx, dy| self.v[(2 * y + dy) * self.w + 2 * x + dx];
                v.push((at(0, 0) + at(1, 0) + at(0, 1) + at(1, 1)) / 4.0);
            }
        }
        Self { w, h, v }
    }

    fn mul(&self, o: &Plane) -> Plane {
        Plane {
            w: self.w,
            h: self.h,
            v: self.v.iter().zip(&o.v).map(|(a, b)| a * b).collect(),
        }
    }

    /// "Valid" separable filtering with a normalised 1-D kernel.
    fn filter(&self, k: &[f64]) -> Plane {
        let n = k.len();
        let (ow, oh) = (self.w + 1 - n, self.h + 1 - n);
        let mut rows = vec![0.0; ow * self.h];
        for y in 0..self.h {
            for x in 0..ow {
                rows[y * ow + x] = (0..n).map(|i| k[i] * self.v[y * self.w + x + i]).sum();
            }
        }
        let mut v = vec![0.0; ow * oh];
        for y in 0..oh {
            for x in 0..ow {
                v[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
            }
        }
        Plane { w: ow, h: oh, v }
    }
}

fn gaussian(size: usize) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM and mean contrast-structure term of one scale.
fn ssim_terms(a: &Plane, b: &Plane) -> (f64, f64) {
    let k = gaussian(WINDOW.min(a.w).min(a.h));
    let (c1, c2) = ((K1 * 255.0).powi(2), (K2 * 255.0).powi(2));
    let (mu_a, mu_b) = (a.filter(&k), b.filter(&k));
    let (saa, sbb, sab) = (a.mul(a).filter(&k), b.mul(b).filter(&k), a.mul(b).filter(&k));
    let n = mu_a.v.len() as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mu_a.v.len() {
        let (ma, mb) = (mu_a.v[i], mu_b.v[i]);
        let va = saa.v[i] - ma * ma;
        let vb = sbb.v[i] - mb * mb;
        let cov = sab.v[i] - ma * mb;
        let c = (2.0 * cov + c2) / (va + vb + c2);
        cs += c;
        ssim += c * (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
    }
    (ssim / n, cs / n)
}

/// Scales available for a side length (each scale needs at least 10 px).
pub fn ms_ssim_scales(min_side: usize) -> usize {
    (1..=5).rev().find(|&k| min_side >= 10 << (k - 1)).unwrap_or(1)
}

/// Multi-scale SSIM averaged over RGB channels. Images smaller than
/// [`MS_SSIM_MIN_SIDE`] use fewer scales with renormalised weights (with a
/// warning), or fail when `strict`.
pub fn ms_ssim_with(a: &RgbImage, b: &RgbImage, strict: bool) -> Result<f64> {
    check_dims(a, b)?;
    let side = a.width().min(a.height()) as usize;
    if side == 0 {
        return Err(Error::usage("empty image"));
    }
    let scales = ms_ssim_scales(side);
    if scales < 5 {
        if strict {
            return Err(Error::usage(format!(
                "MS-SSIM needs at least {MS_SSIM_MIN_SIDE} px per side, got {side}"
            )));
        }
        log::warn!("MS-SSIM on a {side}px image uses {scales} scales");
    }
    let weights = &MS_SSIM_WEIGHTS[..scales];
    let norm: f64 = weights.iter().sum();
    let mut total = 0.0;
    for c in 0..3 {
        let (mut pa, mut pb) = (Plane::channel(a, c), Plane::channel(b, c));
        let mut score = 1.0;
        for (s, &w) in weights.iter().enumerate() {
            let (ssim, cs) = ssim_terms(&pa, &pb);
            let term = if s + 1 == scales { ssim } else { cs };
            score *= term.max(0.0).powf(w / norm);
            pa = pa.downsample();
            pb = pb.downsample();
        }
        total += score;
    }
    Ok(total / 3.0)
}

pub fn ms_ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    ms_ssim_with(a, b, false)
}
