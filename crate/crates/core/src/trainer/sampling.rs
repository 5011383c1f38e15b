use rand::seq::index;
use rand::Rng;

use crate::bitstream::{Heatmap, LabelGrid};

/// Pixel-level preservation choice plus its code-resolution heatmap.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Preservation {
    pub heatmap: Heatmap,
    /// Row-major, one entry per pixel.
    pub pixels: Vec<bool>,
}

/// A code cell is kept when at least half of its in-frame `s x s` block is.
pub fn code_heatmap(pixels: &[bool], width: usize, height: usize, s: usize) -> Heatmap {
    let (cw, ch) = (width.div_ceil(s), height.div_ceil(s));
    let mut m = Heatmap::filled(ch, cw, false);
    for cy in 0..ch {
        for cx in 0..cw {
            let (mut kept, mut total) = (0, 0);
            for y in cy * s..((cy + 1) * s).min(height) {
                for x in cx * s..((cx + 1) * s).min(width) {
                    total += 1;
                    kept += pixels[y * width + x] as usize;
                }
            }
            m.set(cy, cx, 2 * kept >= total);
        }
    }
    m
}

/// Each code cell expanded back to its pixel block.
pub fn pixel_mask(heatmap: &Heatmap, width: usize, height: usize, s: usize) -> Vec<bool> {
    (0..width * height)
        .map(|i| heatmap.get(i / width / s, i % width / s))
        .collect()
}

/// Instance ids present in the grid (0 is background and never counts).
pub fn instances(grid: &LabelGrid) -> Vec<u32> {
    let mut ids: Vec<u32> = grid.instance.iter().copied().filter(|&i| i > 0).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// Keeps `ceil(fraction * n)` of the `n` instances, chosen uniformly
/// without replacement. No instances gives an empty mask.
pub fn sample_heatmap_ri(
    grid: &LabelGrid,
    s: usize,
    fraction: f64,
    rng: &mut impl Rng,
) -> Preservation {
    let ids = instances(grid);
    let k = ((fraction * ids.len() as f64).ceil() as usize).min(ids.len());
    let mut chosen: Vec<u32> = index::sample(rng, ids.len(), k).into_iter().map(|i| ids[i]).collect();
    chosen.sort_unstable();
    let pixels: Vec<bool> = grid
        .instance
        .iter()
        .map(|i| chosen.binary_search(i).is_ok())
        .collect();
    Preservation {
        heatmap: code_heatmap(&pixels, grid.width, grid.height, s),
        pixels,
    }
}

/// Pixel box `[x0, x1) x [y0, y1)`.
pub type PixelBox = (usize, usize, usize, usize);

/// Box sides uniform in `[0.25, 0.75]` of the frame sides, placed
/// uniformly among positions where it fits.
pub fn sample_box(width: usize, height: usize, rng: &mut impl Rng) -> PixelBox {
    let (x0, x1) = box_side(width, rng);
    let (y0, y1) = box_side(height, rng);
    (x0, y0, x1, y1)
}

fn box_side(n: usize, rng: &mut impl Rng) -> (usize, usize) {
    let len = ((rng.random_range(0.25..=0.75) * n as f64).round() as usize).clamp(1.min(n), n);
    let start = rng.random_range(0..=n - len);
    (start, start + len)
}

/// Preserves the pixels of `b`, clipped to the frame.
pub fn heatmap_from_box(width: usize, height: usize, s: usize, b: PixelBox) -> Preservation {
    let (x0, y0, x1, y1) = b;
    let pixels: Vec<bool> = (0..width * height)
        .map(|i| {
            let (x, y) = (i % width, i / width);
            (x0..x1).contains(&x) && (y0..y1).contains(&y)
        })
        .collect();
    Preservation {
        heatmap: code_heatmap(&pixels, width, height, s),
        pixels,
    }
}

pub fn sample_heatmap_rb(width: usize, height: usize, s: usize, rng: &mut impl Rng) -> Preservation {
    heatmap_from_box(width, height, s, sample_box(width, height, rng))
}
