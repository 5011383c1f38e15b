//! Scalar quantization of the latent to a fixed, sorted set of centers.

use crate::error::{Error, Result};
use crate::tensor::{graph_nearest_center, Float, Graph, Tensor, Var};

/// Sorted quantization levels plus the softness of the training relaxation.
#[derive(Clone, Debug, PartialEq)]
pub struct CenterSet {
    centers: Vec<f32>,
    sigma: f64,
}

impl Default for CenterSet {
    /// Five symmetric levels `{-2, -1, 0, 1, 2}` with `sigma = 1`.
    fn default() -> Self {
        Self {
            centers: vec![-2.0, -1.0, 0.0, 1.0, 2.0],
            sigma: 1.0,
        }
    }
}

impl CenterSet {
    pub fn new(centers: Vec<f32>, sigma: f64) -> Result<Self> {
        if centers.len() < 2 || centers.len() > 255 {
            return Err(Error::config(format!(
                "need between 2 and 255 centers, got {}",
                centers.len()
            )));
        }
        if centers.iter().any(|c| !c.is_finite()) {
            return Err(Error::config("centers must be finite"));
        }
        if centers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(format!(
                "centers must be strictly increasing: {centers:?}"
            )));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::config(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self { centers, sigma })
    }

    /// `L` evenly spaced levels centered on zero with unit spacing.
    pub fn symmetric(levels: usize) -> Result<Self> {
        let half = (levels as f32 - 1.0) / 2.0;
        Self::new((0..levels).map(|i| i as f32 - half).collect(), 1.0)
    }

    pub fn with_sigma(mut self, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::config(format!("sigma must be positive, got {sigma}")));
        }
        self.sigma = sigma;
        Ok(self)
    }

    pub fn levels(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &[f32] {
        &self.centers
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn value(&self, symbol: u8) -> Option<f32> {
        self.centers.get(symbol as usize).copied()
    }

    /// Nearest center index; midpoint ties go to the lower index.
    pub fn nearest(&self, v: f32) -> u8 {
        graph_nearest_center(&self.centers, v) as u8
    }

    /// Index of the center closest to zero (what a zeroed entry quantizes to).
    pub fn zero_symbol(&self) -> u8 {
        self.nearest(0.0)
    }

    fn centers_f64(&self) -> Vec<f64> {
        self.centers.iter().map(|&c| c as f64).collect()
    }
}

/// Quantized latent: symbol indices for a `channels x height x width` grid,
/// stored channel-major with raster order inside each channel.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeGrid {
    height: usize,
    width: usize,
    channels: usize,
    symbols: Vec<u8>,
    centers: CenterSet,
}

impl CodeGrid {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        symbols: Vec<u8>,
        centers: CenterSet,
    ) -> Result<Self> {
        if symbols.len() != height * width * channels {
            return Err(Error::usage(format!(
                "{} symbols for a {height}x{width}x{channels} grid",
                symbols.len()
            )));
        }
        if let Some(&s) = symbols.iter().find(|&&s| s as usize >= centers.levels()) {
            return Err(Error::corruption(format!(
                "symbol {s} out of range for L={}",
                centers.levels()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            symbols,
            centers,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn centers(&self) -> &CenterSet {
        &self.centers
    }

    pub fn symbols(&self) -> &[u8] {
        &self.symbols
    }

    pub fn channel(&self, c: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.symbols[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> u8 {
        self.symbols[(c * self.height + y) * self.width + x]
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

/// Maps each entry of an NCHW latent (`N = 1`) to its nearest center index.
pub fn quantize_hard<T: Float>(w: &Tensor<T>, centers: &CenterSet) -> Result<CodeGrid> {
    let [n, c, h, wd] = w.dims4()?;
    if n != 1 {
        return Err(Error::usage(format!("quantize_hard expects batch 1, got {n}")));
    }
    let mut symbols = Vec::with_capacity(w.len());
    for &v in w.data() {
        if !v.is_finite() {
            return Err(Error::numerical("quantize_hard", "non-finite latent value"));
        }
        symbols.push(centers.nearest(v.as_f64() as f32));
    }
    CodeGrid::new(h, wd, c, symbols, centers.clone())
}

/// Looks symbols up in the center table, giving a `1 x C x h x w` tensor.
pub fn dequantize<T: Float>(code: &CodeGrid) -> Result<Tensor<T>> {
    let cs = code.centers();
    let data = code
        .symbols
        .iter()
        .map(|&s| {
            cs.value(s)
                .map(|v| T::from_f64(v as f64))
                .ok_or_else(|| Error::corruption(format!("symbol {s} out of range")))
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::new(&[1, code.channels, code.height, code.width], data)
}

/// Straight-through quantizer: hard nearest center forward, gradient of the
/// soft assignment backward.
pub fn quantize_soft_st<T: Float>(g: &mut Graph<T>, w: Var, centers: &CenterSet) -> Result<Var> {
    g.soft_quantize(w, &centers.centers_f64(), centers.sigma, true)
}

/// The soft relaxation alone, `sum_j c_j softmax_j(-sigma (w - c_j)^2)`.
pub fn quantize_soft<T: Float>(g: &mut Graph<T>, w: Var, centers: &CenterSet) -> Result<Var> {
    g.soft_quantize(w, &centers.centers_f64(), centers.sigma, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn latent(vals: &[f32]) -> Tensor<f32> {
        Tensor::new(&[1, 1, 1, vals.len()], vals.to_vec()).unwrap()
    }

    #[test]
    fn nearest_center_examples() {
        let cs = CenterSet::default();
        let code = quantize_hard(&latent(&[0.4, 1.6, -0.5, 0.5, -7.0, 9.0]), &cs).unwrap();
        // 0.4 -> 0, 1.6 -> 2, midpoints go low, out-of-range clamps.
        assert_eq!(code.symbols(), &[2, 4, 1, 2, 0, 4]);
    }

    #[test]
    fn center_values_are_fixed_points() {
        let cs = CenterSet::default();
        let x = latent(cs.centers());
        let back: Tensor<f32> = dequantize(&quantize_hard(&x, &cs).unwrap()).unwrap();
        assert_eq!(back.data(), cs.centers());
        assert_eq!(cs.value(cs.zero_symbol()), Some(0.0));
    }

    #[test]
    fn invalid_center_sets_rejected() {
        assert!(CenterSet::new(vec![1.0], 1.0).is_err());
        // the literal duplicate set
        assert!(CenterSet::new(vec![-2.0, 1.0, 0.0, 1.0, 2.0], 1.0).is_err());
        assert!(CenterSet::new(vec![0.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn dequantize_rejects_bad_symbol() {
        let cs = CenterSet::default();
        assert!(CodeGrid::new(1, 1, 1, vec![5], cs.clone()).is_err());
    }

    #[test]
    fn non_finite_latent_is_an_error() {
        let err = quantize_hard(&latent(&[0.0, f32::NAN]), &CenterSet::default());
        assert!(matches!(err, Err(Error::Numerical { .. })));
    }

    #[test]
    fn straight_through_forward_is_hard_with_soft_gradient() {
        let cs = CenterSet::default();
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::new(&[1, 1, 1, 1], vec![0.4]).unwrap());
        let q = quantize_soft_st(&mut g, x, &cs).unwrap();
        assert_eq!(g.value(q).item(), 0.0);
        let s = g.sum(q).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.get(x).unwrap().item().abs() > 1e-3);
    }

    #[test]
    fn soft_value_approaches_hard_for_large_sigma() {
        let cs = CenterSet::default().with_sigma(1e4).unwrap();
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::new(&[1, 1, 1, 1], vec![0.4]).unwrap());
        let q = quantize_soft(&mut g, x, &cs).unwrap();
        assert!(g.value(q).item().abs() < 1e-3);
    }

    #[test]
    fn round_trip_error_bounded_by_half_gap() {
        let cs = CenterSet::default();
        let vals: Vec<f32> = (0..=400).map(|i| -2.0 + i as f32 * 0.01).collect();
        let back: Tensor<f32> = dequantize(&quantize_hard(&latent(&vals), &cs).unwrap()).unwrap();
        for (a, b) in vals.iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 + 1e-6);
        }
    }

    proptest! {
        #[test]
        fn monotone_and_idempotent(mut xs in proptest::collection::vec(-4.0f32..4.0, 2..64)) {
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let cs = CenterSet::default();
            let code = quantize_hard(&latent(&xs), &cs).unwrap();
            prop_assert!(code.symbols().windows(2).all(|w| w[0] <= w[1]));
            let once: Tensor<f32> = dequantize(&code).unwrap();
            let twice: Tensor<f32> = dequantize(&quantize_hard(&once, &cs).unwrap()).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
