use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bitstream::{rasterize_label_map, LabelGrid, Polygon, PolygonLabelMap};
use crate::tensor::Tensor;

pub const CLASS_BACKGROUND: u32 = 0;
pub const CLASS_CIRCLE: u32 = 1;
pub const CLASS_RECTANGLE: u32 = 2;
pub const CLASS_TRIANGLE: u32 = 3;
pub const CLASS_STRIPE: u32 = 4;

/// One training or evaluation example.
#[derive(Clone, Debug)]
pub struct Sample {
    /// `1 x 3 x H x W` in `[-1, 1]`.
    pub image: Tensor,
    pub labels: PolygonLabelMap,
    pub grid: LabelGrid,
}

/// Procedural scenes: a smooth textured background with 2 to 5 coloured
/// shapes, each with its own instance id. Sample `i` depends only on
/// `(seed, i)`.
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub width: usize,
    pub height: usize,
    pub seed: u64,
}

struct Paint {
    base: [f64; 3],
    alt: [f64; 3],
    freq: f64,
    angle: f64,
}

impl Paint {
    fn random(rng: &mut ChaCha8Rng, striped: bool) -> Self {
        let mut color = || [0, 1, 2].map(|_| rng.random_range(-0.9..0.9));
        let base = color();
        let alt = if striped { color() } else { base };
        Self {
            base,
            alt,
            freq: rng.random_range(0.15..0.5),
            angle: rng.random_range(0.0..TAU),
        }
    }

    fn at(&self, x: f64, y: f64) -> [f64; 3] {
        let t = 0.5 + 0.5 * ((x * self.angle.cos() + y * self.angle.sin()) * self.freq).sin();
        [0, 1, 2].map(|c| self.base[c] * (1.0 - t) + self.alt[c] * t)
    }
}

impl SyntheticCorpus {
    pub fn new(width: usize, height: usize, seed: u64) -> Self {
        Self {
            width,
            height,
            seed,
        }
    }

    pub fn sample(&self, index: u64) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let (w, h) = (self.width as f64, self.height as f64);
        let n = rng.random_range(2..=5);
        let mut objects = Vec::with_capacity(n);
        let mut paints = Vec::with_capacity(n);
        for i in 0..n {
            let class = rng.random_range(1..=4);
            objects.push(self.shape(class, i as u32 + 1, &mut rng));
            paints.push(Paint::random(&mut rng, class == CLASS_STRIPE));
        }
        let labels = PolygonLabelMap { objects };
        let grid = rasterize_label_map(&labels, self.width, self.height);

        let bg = [0, 1, 2].map(|_| rng.random_range(-0.6..0.6));
        let tilt = [rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4)];
        let waves: Vec<(f64, f64, f64)> = (0..2)
            .map(|_| {
                (
                    rng.random_range(0.03..0.12),
                    rng.random_range(0.0..TAU),
                    rng.random_range(0.0..TAU),
                )
            })
            .collect();
        let plane = self.width * self.height;
        let mut data = vec![0.0f32; 3 * plane];
        for y in 0..self.height {
            for x in 0..self.width {
                let i = y * self.width + x;
                let (fx, fy) = (x as f64, y as f64);
                let rgb = match grid.instance[i] {
                    0 => {
                        let shade = tilt[0] * (fx / w - 0.5) + tilt[1] * (fy / h - 0.5);
                        let tex: f64 = waves
                            .iter()
                            .map(|&(f, a, p)| 0.08 * ((fx * a.cos() + fy * a.sin()) * f + p).sin())
                            .sum();
                        bg.map(|c| c + shade + tex)
                    }
                    k => paints[k as usize - 1].at(fx, fy),
                };
                for c in 0..3 {
                    data[c * plane + i] = rgb[c].clamp(-1.0, 1.0) as f32;
                }
            }
        }
        Sample {
            image: Tensor::new(&[1, 3, self.height, self.width], data).expect("sized buffer"),
            labels,
            grid,
        }
    }

    fn shape(&self, class: u32, instance: u32, rng: &mut ChaCha8Rng) -> Polygon {
        let (w, h) = (self.width as f64, self.height as f64);
        let m = w.min(h);
        let clamp = |x: f64, y: f64| (x.round().clamp(0.0, w) as u32, y.round().clamp(0.0, h) as u32);
        let vertices = match class {
            CLASS_CIRCLE => {
                let r = rng.random_range(0.08..0.25) * m;
                let (cx, cy) = (rng.random_range(0.0..w), rng.random_range(0.0..h));
                (0..20)
                    .map(|k| {
                        let a = k as f64 * TAU / 20.0;
                        clamp(cx + r * a.cos(), cy + r * a.sin())
                    })
                    .collect()
            }
            CLASS_RECTANGLE => {
                let (bw, bh) = (rng.random_range(0.15..0.5) * w, rng.random_range(0.15..0.5) * h);
                let (x0, y0) = (rng.random_range(0.0..w - bw), rng.random_range(0.0..h - bh));
                let (a, b) = (clamp(x0, y0), clamp(x0 + bw, y0 + bh));
                vec![a, (b.0, a.1), b, (a.0, b.1)]
            }
            CLASS_TRIANGLE => {
                let (cx, cy) = (rng.random_range(0.2..0.8) * w, rng.random_range(0.2..0.8) * h);
                let r = rng.random_range(0.12..0.3) * m;
                let a0 = rng.random_range(0.0..TAU);
                (0..3)
                    .map(|k| {
                        let a = a0 + k as f64 * TAU / 3.0 + rng.random_range(-0.4..0.4);
                        clamp(cx + r * a.cos(), cy + r * a.sin())
                    })
                    .collect()
            }
            _ => {
                // a long rotated band
                let (cx, cy) = (rng.random_range(0.0..w), rng.random_range(0.0..h));
                let (len, thick) = (rng.random_range(0.4..0.9) * m, rng.random_range(0.08..0.2) * m);
                let a = rng.random_range(0.0..TAU);
                let (ux, uy) = (a.cos(), a.sin());
                [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
                    .iter()
                    .map(|&(s, t)| {
                        clamp(
                            cx + s * len / 2.0 * ux - t * thick / 2.0 * uy,
                            cy + s * len / 2.0 * uy + t * thick / 2.0 * ux,
                        )
                    })
                    .collect()
            }
        };
        Polygon {
            class,
            instance,
            vertices,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_cover_every_pixel_and_agree_with_polygons() {
        let corpus = SyntheticCorpus::new(64, 48, 1);
        for i in 0..20 {
            let s = corpus.sample(i);
            assert_eq!(s.grid.class.len(), 64 * 48);
            assert!(s.grid.class.iter().all(|&c| c <= CLASS_STRIPE));
            assert_eq!(s.grid, rasterize_label_map(&s.labels, 64, 48));
            assert!(s.labels.validate(64, 48).is_ok());
            assert!(s.image.data().iter().all(|v| (-1.0..=1.0).contains(v)));
            // instance ids are unique per object
            let mut ids: Vec<u32> = s.labels.objects.iter().map(|o| o.instance).collect();
            ids.dedup();
            assert_eq!(ids.len(), s.labels.objects.len());
        }
    }

    #[test]
    fn deterministic_per_index() {
        let c = SyntheticCorpus::new(32, 32, 7);
        assert_eq!(c.sample(3).image, c.sample(3).image);
        assert_ne!(c.sample(3).image, c.sample(4).image);
        assert_ne!(SyntheticCorpus::new(32, 32, 8).sample(3).image, c.sample(3).image);
    }
}
