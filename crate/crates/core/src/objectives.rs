//! Loss terms: least-squares GAN losses for D and G, pixel distortion
//! (optionally masked), discriminator feature matching, and the weighted
//! generator total.

use crate::error::{Error, Result};
use crate::networks::ScaleOutput;
use crate::tensor::{Float, Graph, Tensor, Var};

/// Weights of the generator objective. The rate term is controlled by the
/// architecture, so `beta` must stay 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_d: f64,
    pub w_fm: f64,
    pub beta: f64,
    pub w_perceptual: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_d: 10.0,
            w_fm: 10.0,
            beta: 0.0,
            w_perceptual: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_d > 0.0 && self.lambda_d.is_finite()) {
            return Err(Error::config(format!("lambda_d must be positive, got {}", self.lambda_d)));
        }
        if !(self.w_fm >= 0.0 && self.w_perceptual >= 0.0) {
            return Err(Error::config("loss weights must be non-negative"));
        }
        if self.beta != 0.0 {
            return Err(Error::config("beta must be 0: the rate is fixed by C, L and s"));
        }
        Ok(())
    }
}

/// Generator-side GAN target.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GeneratorGanForm {
    /// `(D(G(z)) - 1)^2`, pulling fakes towards the real label.
    #[default]
    NonSaturating,
    /// `D(G(z))^2`, the saddle-point objective read literally.
    Literal,
}

fn mean_over_scales<T: Float>(g: &mut Graph<T>, terms: Vec<Var>) -> Result<Var> {
    let n = terms.len();
    let mut acc = *terms.first().ok_or_else(|| Error::usage("no discriminator scales"))?;
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    g.scale(acc, 1.0 / n as f64)
}

/// `mean((y - target)^2)` over one logit map.
fn ls_term<T: Float>(g: &mut Graph<T>, y: Var, target: f64) -> Result<Var> {
    let d = g.add_scalar(y, -target)?;
    let sq = g.square(d)?;
    g.mean(sq)
}

/// Mean over scales of `mean((D(x) - 1)^2) + mean(D(x_hat)^2)`.
pub fn lsgan_d_loss<T: Float>(g: &mut Graph<T>, real: &[Var], fake: &[Var]) -> Result<Var> {
    if real.len() != fake.len() {
        return Err(Error::usage(format!(
            "{} real vs {} fake discriminator scales",
            real.len(),
            fake.len()
        )));
    }
    let mut terms = Vec::with_capacity(real.len());
    for (&r, &f) in real.iter().zip(fake) {
        let a = ls_term(g, r, 1.0)?;
        let b = ls_term(g, f, 0.0)?;
        terms.push(g.add(a, b)?);
    }
    mean_over_scales(g, terms)
}

pub fn lsgan_g_loss<T: Float>(g: &mut Graph<T>, fake: &[Var], form: GeneratorGanForm) -> Result<Var> {
    let target = match form {
        GeneratorGanForm::NonSaturating => 1.0,
        GeneratorGanForm::Literal => 0.0,
    };
    let terms = fake
        .iter()
        .map(|&f| ls_term(g, f, target))
        .collect::<Result<Vec<_>>>()?;
    mean_over_scales(g, terms)
}

fn same_shape<T: Float>(g: &Graph<T>, a: Var, b: Var, op: &str) -> Result<()> {
    if g.value(a).shape() != g.value(b).shape() {
        return Err(Error::usage(format!(
            "{op}: shapes {:?} and {:?} differ",
            g.value(a).shape(),
            g.value(b).shape()
        )));
    }
    Ok(())
}

pub fn distortion_mse<T: Float>(g: &mut Graph<T>, x: Var, x_hat: Var) -> Result<Var> {
    same_shape(g, x, x_hat, "distortion_mse")?;
    let d = g.sub(x, x_hat)?;
    let sq = g.square(d)?;
    g.mean(sq)
}

/// Squared error over pixels where `mask` (`1 x 1 x H x W`, binary) is 1,
/// divided by the number of such elements. An all-zero mask gives 0 and an
/// all-one mask reproduces [`distortion_mse`] exactly.
pub fn masked_distortion<T: Float>(
    g: &mut Graph<T>,
    x: Var,
    x_hat: Var,
    mask: &Tensor<T>,
) -> Result<Var> {
    same_shape(g, x, x_hat, "masked_distortion")?;
    let [n, c, h, w] = g.value(x).dims4()?;
    if mask.shape() != [1, 1, h, w] || n != 1 {
        return Err(Error::usage(format!(
            "mask {:?} does not match image {:?}",
            mask.shape(),
            g.value(x).shape()
        )));
    }
    let kept = mask.data().iter().filter(|&&m| m != T::zero()).count();
    let d = g.sub(x, x_hat)?;
    let sq = g.square(d)?;
    let full = Tensor::from_fn(&[1, c, h, w], |i| mask.data()[i % (h * w)]);
    let m = g.constant(full);
    let masked = g.mul(sq, m)?;
    let mean = g.mean(masked)?;
    let ratio = if kept == 0 {
        0.0
    } else {
        (h * w) as f64 / kept as f64
    };
    g.scale(mean, ratio)
}

fn mean_abs_diff<T: Float>(g: &mut Graph<T>, real: Var, fake: Var) -> Result<Var> {
    // real activations act as fixed targets
    let target = g.constant(g.value(real).clone());
    same_shape(g, target, fake, "feature_matching_loss")?;
    let d = g.sub(fake, target)?;
    let a = g.abs(d)?;
    g.mean(a)
}

/// Mean absolute difference of discriminator activations, averaged over
/// layers and then scales. Gradients reach only the fake branch.
pub fn feature_matching_loss<T: Float>(
    g: &mut Graph<T>,
    real: &[ScaleOutput],
    fake: &[ScaleOutput],
) -> Result<Var> {
    if real.len() != fake.len() {
        return Err(Error::usage("feature matching: scale counts differ"));
    }
    let mut terms = Vec::with_capacity(real.len());
    for (r, f) in real.iter().zip(fake) {
        if r.features.len() != f.features.len() || r.features.is_empty() {
            return Err(Error::usage("feature matching: layer counts differ"));
        }
        let per_layer = r
            .features
            .iter()
            .zip(&f.features)
            .map(|(&a, &b)| mean_abs_diff(g, a, b))
            .collect::<Result<Vec<_>>>()?;
        terms.push(mean_over_scales(g, per_layer)?);
    }
    mean_over_scales(g, terms)
}

/// Pluggable feature network for a perceptual loss (off unless supplied).
pub trait FeatureNetwork<T: Float> {
    fn features(&self, g: &mut Graph<T>, x: Var) -> Result<Vec<Var>>;
}

/// Mean L1 distance between feature-network activations of `x` and `x_hat`.
pub fn perceptual_loss<T: Float>(
    g: &mut Graph<T>,
    net: &dyn FeatureNetwork<T>,
    x: Var,
    x_hat: Var,
) -> Result<Var> {
    let a = net.features(g, x)?;
    let b = net.features(g, x_hat)?;
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::usage("perceptual loss: feature lists differ"));
    }
    let terms = a
        .iter()
        .zip(&b)
        .map(|(&r, &f)| mean_abs_diff(g, r, f))
        .collect::<Result<Vec<_>>>()?;
    mean_over_scales(g, terms)
}

/// Scalar components of the generator objective.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorTerms {
    pub gan: Var,
    pub distortion: Var,
    pub feature_matching: Option<Var>,
    pub perceptual: Option<Var>,
}

/// `gan + lambda_d * distortion + w_fm * fm + w_perceptual * perceptual`.
/// Errors naming the first non-finite component.
pub fn gc_generator_total<T: Float>(
    g: &mut Graph<T>,
    terms: &GeneratorTerms,
    weights: &LossWeights,
) -> Result<Var> {
    let parts = [
        ("gan", Some(terms.gan), 1.0),
        ("distortion", Some(terms.distortion), weights.lambda_d),
        ("feature_matching", terms.feature_matching, weights.w_fm),
        ("perceptual", terms.perceptual, weights.w_perceptual),
    ];
    let mut total: Option<Var> = None;
    for (name, var, w) in parts {
        let Some(v) = var else { continue };
        if !g.value(v).is_finite() {
            return Err(Error::numerical(name, "loss component is not finite"));
        }
        let s = g.scale(v, w)?;
        total = Some(match total {
            Some(t) => g.add(t, s)?,
            None => s,
        });
    }
    Ok(total.expect("gan term always present"))
}
