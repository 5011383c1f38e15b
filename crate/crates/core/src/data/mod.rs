//! Datasets, image conversion, quality metrics and latent sampling.

mod ingest;
mod metrics;
mod synthetic;

pub use ingest::{ingest_folder, mean_saturation_value, preprocess, rescaled_dims, Discard, IngestSpec};
pub use metrics::{ms_ssim, ms_ssim_scales, ms_ssim_with, mse, psnr, psnr_from_mse, MS_SSIM_MIN_SIDE, MS_SSIM_WEIGHTS};
pub use synthetic::{
    Sample, SyntheticCorpus, CLASS_BACKGROUND, CLASS_CIRCLE, CLASS_RECTANGLE, CLASS_STRIPE,
    CLASS_TRIANGLE,
};

use image::{Rgb, RgbImage};

use crate::error::Result;
use crate::tensor::Tensor;

/// `1 x 3 x H x W` tensor in `[-1, 1]`.
pub fn image_to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane = w * h;
    let mut data = vec![0.0f32; 3 * plane];
    for (i, p) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = p.0[c] as f32 / 127.5 - 1.0;
        }
    }
    Tensor::new(&[1, 3, h, w], data).expect("sized buffer")
}

/// Maps `[-1, 1]` to 8 bits with `round((v + 1) * 127.5)` clamped to `0..=255`.
pub fn tensor_to_image(t: &Tensor) -> Result<RgbImage> {
    let [_, c, h, w] = t.dims4()?;
    if c != 3 {
        return Err(crate::Error::usage(format!("expected 3 channels, got {c}")));
    }
    let plane = h * w;
    let d = t.data();
    let to8 = |v: f32| ((v as f64 + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        Rgb([to8(d[i]), to8(d[plane + i]), to8(d[2 * plane + i])])
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_bit_round_trip() {
        let img = RgbImage::from_fn(5, 3, |x, y| Rgb([(x * 50) as u8, (y * 100) as u8, 255]));
        assert_eq!(tensor_to_image(&image_to_tensor(&img)).unwrap(), img);
        let t = Tensor::new(&[1, 3, 1, 1], vec![-2.0, 0.0, 2.0]).unwrap();
        assert_eq!(tensor_to_image(&t).unwrap().get_pixel(0, 0).0, [0, 128, 255]);
    }
}
