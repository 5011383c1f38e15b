//! Encoder, generator, semantic feature extractor and multi-scale patch
//! discriminator, built from layer-spec strings with a global width scale.
//!
//! Layer semantics: every conv is followed by instance norm and ReLU,
//! except the projection right before `q` (plain conv) and the generator's
//! last layer (conv then tanh, width not scaled). Residual units are
//! conv-IN-ReLU-conv-IN plus the identity.

mod spec;

pub use spec::{LayerKind, LayerSpec, LayerToken, Width};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bitstream::{LabelGrid, Mode};
use crate::error::{Error, Result};
use crate::quantizer::CenterSet;
use crate::tensor::{Activation, Float, Graph, ParamId, ParamSet, Tensor, Var};

pub const IMAGE_CHANNELS: usize = 3;
/// Background, circle, rectangle, triangle, stripe.
pub const DEFAULT_CLASSES: usize = 5;
const NORM_EPS: f64 = 1e-5;
const LEAK: f64 = 0.2;
const D_WIDTHS: [usize; 4] = [64, 128, 256, 512];
const D_STRIDES: [usize; 4] = [2, 2, 2, 1];

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub mode: Mode,
    /// 1.0 reproduces the published widths.
    pub width_scale: f64,
    /// Bottleneck channels `C`.
    pub channels: usize,
    pub centers: CenterSet,
    /// Code downsampling factor `s`.
    pub downsample: usize,
    pub n_res: usize,
    pub d_scales: usize,
    /// Feed the one-hot label map to the discriminator.
    pub condition_d: bool,
    pub use_noise: bool,
    pub noise_dim: usize,
    pub classes: usize,
    pub encoder_spec: Option<String>,
    pub generator_spec: Option<String>,
    pub features_spec: Option<String>,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::generative()
    }
}

impl NetConfig {
    pub fn generative() -> Self {
        Self {
            mode: Mode::Generative,
            width_scale: 0.1,
            channels: 4,
            centers: CenterSet::default(),
            downsample: 16,
            n_res: 3,
            d_scales: 2,
            condition_d: false,
            use_noise: false,
            noise_dim: 4,
            classes: DEFAULT_CLASSES,
            encoder_spec: None,
            generator_spec: None,
            features_spec: None,
        }
    }

    pub fn selective() -> Self {
        Self {
            mode: Mode::Selective,
            downsample: 8,
            condition_d: true,
            ..Self::generative()
        }
    }

    fn downs(&self) -> String {
        let mut s = String::from("c7s1-60");
        let mut w = 60;
        for _ in 0..self.downsample.trailing_zeros() {
            w *= 2;
            s.push_str(&format!(", d{w}"));
        }
        s
    }

    pub fn encoder_spec(&self) -> String {
        self.encoder_spec
            .clone()
            .unwrap_or_else(|| format!("{}, c3s1-C, q", self.downs()))
    }

    pub fn generator_spec(&self) -> String {
        self.generator_spec.clone().unwrap_or_else(|| {
            let mut s = String::new();
            if self.mode == Mode::Selective {
                s.push_str("c3s1-480, d960, ");
            }
            s.push_str("c3s1-960");
            for _ in 0..self.n_res {
                s.push_str(", R960");
            }
            s.push_str(", u480, u240, u120, u60, c7s1-3");
            s
        })
    }

    /// Semantic feature extractor, ending at the code resolution.
    pub fn features_spec(&self) -> String {
        self.features_spec.clone().unwrap_or_else(|| self.downs())
    }

    pub fn scaled(&self, width: usize) -> usize {
        ((width as f64 * self.width_scale).ceil() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width_scale > 0.0 && self.width_scale.is_finite()) {
            return Err(Error::config(format!("width_scale {} must be positive", self.width_scale)));
        }
        if ![2, 4, 8].contains(&self.channels) {
            return Err(Error::config(format!("C must be 2, 4 or 8, got {}", self.channels)));
        }
        let want_s = match self.mode {
            Mode::Generative => 16,
            Mode::Selective => 8,
        };
        if self.downsample != want_s {
            return Err(Error::config(format!(
                "{} mode uses s={want_s}, got s={}",
                self.mode.name(),
                self.downsample
            )));
        }
        if self.d_scales == 0 {
            return Err(Error::config("need at least one discriminator scale"));
        }
        if self.classes == 0 {
            return Err(Error::config("need at least one semantic class"));
        }
        if self.use_noise && self.noise_dim == 0 {
            return Err(Error::config("noise enabled with noise_dim 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Head {
    /// Last layer is a plain conv feeding `q`.
    Projection,
    /// Last layer is an unscaled conv with tanh.
    Image,
    /// Every layer is conv-IN-ReLU.
    Features,
}

#[derive(Clone, Debug)]
struct Conv {
    weight: ParamId,
    bias: ParamId,
    stride: usize,
    pad: usize,
    transpose: bool,
    norm: Option<(ParamId, ParamId)>,
    act: Option<Activation>,
}

impl Conv {
    fn forward<T: Float>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let (w, b) = (p[self.weight.index()], p[self.bias.index()]);
        let mut y = if self.transpose {
            g.conv2d_transpose(x, w, b, self.stride, self.pad, self.stride - 1)?
        } else {
            g.conv2d(x, w, b, self.stride, self.pad)?
        };
        if let Some((gain, shift)) = self.norm {
            y = g.instance_norm(y, p[gain.index()], p[shift.index()], NORM_EPS)?;
        }
        if let Some(act) = self.act {
            y = g.activation(y, act)?;
        }
        Ok(y)
    }
}

struct Builder<'a> {
    params: &'a mut ParamSet,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
    count: usize,
}

impl Builder<'_> {
    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        transpose: bool,
        norm: bool,
        act: Option<Activation>,
    ) -> Conv {
        let name = format!("{}.{}", self.prefix, self.count);
        self.count += 1;
        let shape = if transpose {
            [cin, cout, kernel, kernel]
        } else {
            [cout, cin, kernel, kernel]
        };
        let weight = self
            .params
            .push_uniform(format!("{name}.weight"), &shape, cin * kernel * kernel, self.rng);
        let bias = self.params.push(format!("{name}.bias"), Tensor::zeros(&[cout]));
        let norm = norm.then(|| {
            (
                self.params.push(format!("{name}.gain"), Tensor::full(&[cout], 1.0)),
                self.params.push(format!("{name}.shift"), Tensor::zeros(&[cout])),
            )
        });
        Conv {
            weight,
            bias,
            stride,
            pad,
            transpose,
            norm,
            act,
        }
    }
}

#[derive(Clone, Debug)]
enum Block {
    Conv(Conv),
    Residual(Conv, Conv),
}

/// A feed-forward stack built from a [`LayerSpec`]. Owns its parameters.
#[derive(Clone, Debug)]
pub struct Network {
    params: ParamSet,
    blocks: Vec<Block>,
    in_channels: usize,
    out_channels: usize,
    /// Output extent = input * up / down.
    up: usize,
    down: usize,
}

impl Network {
    fn build(
        spec: &LayerSpec,
        in_channels: usize,
        cfg: &NetConfig,
        head: Head,
        prefix: &str,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut tokens = spec.tokens.as_slice();
        match tokens.iter().position(|t| t.kind == LayerKind::Quantize) {
            Some(i) if head == Head::Projection && i == tokens.len() - 1 => {
                tokens = &tokens[..i];
            }
            None if head != Head::Projection => {}
            _ => {
                return Err(Error::config(format!(
                    "'{spec}': q must end the encoder and appear nowhere else"
                )))
            }
        }
        if tokens.is_empty() {
            return Err(Error::config(format!("'{spec}' has no layers")));
        }
        let mut params = ParamSet::new();
        let mut b = Builder {
            params: &mut params,
            rng,
            prefix: prefix.to_string(),
            count: 0,
        };
        let mut blocks = Vec::with_capacity(tokens.len());
        let mut cin = in_channels;
        let last = tokens.len() - 1;
        for (i, t) in tokens.iter().enumerate() {
            let is_last = i == last;
            let width = match t.width {
                Width::Bottleneck => cfg.channels,
                Width::Fixed(k) if is_last && head == Head::Image => k,
                Width::Fixed(k) => cfg.scaled(k),
            };
            let (norm, act) = match head {
                Head::Projection if is_last => (false, None),
                Head::Image if is_last => (false, Some(Activation::Tanh)),
                _ => (true, Some(Activation::Relu)),
            };
            let block = match t.kind {
                LayerKind::Conv { kernel, stride } => {
                    Block::Conv(b.conv(cin, width, kernel, stride, kernel / 2, false, norm, act))
                }
                LayerKind::Down => Block::Conv(b.conv(cin, width, 3, 2, 1, false, norm, act)),
                LayerKind::Up => Block::Conv(b.conv(cin, width, 3, 2, 1, true, norm, act)),
                LayerKind::Residual => {
                    if width != cin || (is_last && head != Head::Features) {
                        return Err(Error::config(format!(
                            "'{spec}': residual unit {t} must keep its {cin} input channels \
                             and cannot end the network"
                        )));
                    }
                    let first = b.conv(cin, width, 3, 1, 1, false, true, Some(Activation::Relu));
                    let second = b.conv(width, width, 3, 1, 1, false, true, None);
                    Block::Residual(first, second)
                }
                LayerKind::Quantize => unreachable!("q stripped above"),
            };
            blocks.push(block);
            cin = width;
        }
        let (up, down) = spec.stride_ratio();
        Ok(Self {
            params,
            blocks,
            in_channels,
            out_channels: cin,
            up,
            down,
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn output_extent(&self, size: usize) -> usize {
        size * self.up / self.down
    }

    /// Runs the stack with parameters `p` (as returned by [`ParamSet::bind`]).
    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let [_, c, h, w] = g.value(x).dims4()?;
        if c != self.in_channels {
            return Err(Error::usage(format!(
                "network expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        if h % self.down != 0 || w % self.down != 0 {
            return Err(Error::usage(format!(
                "input {h}x{w} is not divisible by {}",
                self.down
            )));
        }
        let mut y = x;
        for block in &self.blocks {
            y = match block {
                Block::Conv(conv) => conv.forward(g, p, y)?,
                Block::Residual(a, b) => {
                    let r = a.forward(g, p, y)?;
                    let r = b.forward(g, p, r)?;
                    g.add(y, r)?
                }
            };
        }
        Ok(y)
    }
}

/// Activations of one discriminator scale.
#[derive(Clone, Debug)]
pub struct ScaleOutput {
    /// Post-activation outputs of the four hidden convs.
    pub features: Vec<Var>,
    /// Patch logit map.
    pub logits: Var,
}

/// Multi-scale patch discriminator; scale `k` sees the input average-pooled
/// `k` times by 2.
#[derive(Clone, Debug)]
pub struct Discriminator {
    params: ParamSet,
    scales: Vec<Vec<Conv>>,
    in_channels: usize,
}

impl Discriminator {
    fn build(in_channels: usize, cfg: &NetConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut params = ParamSet::new();
        let mut scales = Vec::with_capacity(cfg.d_scales);
        for s in 0..cfg.d_scales {
            let mut b = Builder {
                params: &mut params,
                rng: &mut *rng,
                prefix: format!("disc.s{s}"),
                count: 0,
            };
            let mut layers = Vec::with_capacity(D_WIDTHS.len() + 1);
            let mut cin = in_channels;
            for (i, (&w, &stride)) in D_WIDTHS.iter().zip(&D_STRIDES).enumerate() {
                let w = cfg.scaled(w);
                let act = Some(Activation::LeakyRelu(LEAK));
                layers.push(b.conv(cin, w, 4, stride, 2, false, i > 0, act));
                cin = w;
            }
            layers.push(b.conv(cin, 1, 4, 1, 2, false, false, None));
            scales.push(layers);
        }
        Self {
            params,
            scales,
            in_channels,
        }
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn num_scales(&self) -> usize {
        self.scales.len()
    }

    /// `cond`, when given, is concatenated channel-wise after pooling it to
    /// each scale alongside the image.
    pub fn forward<T: Float>(
        &self,
        g: &mut Graph<T>,
        p: &[Var],
        x: Var,
        cond: Option<Var>,
    ) -> Result<Vec<ScaleOutput>> {
        let mut input = match cond {
            Some(c) => g.concat_channels(&[x, c])?,
            None => x,
        };
        let c = g.value(input).dims4()?[1];
        if c != self.in_channels {
            return Err(Error::usage(format!(
                "discriminator expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let mut out = Vec::with_capacity(self.scales.len());
        for (s, layers) in self.scales.iter().enumerate() {
            if s > 0 {
                input = g.avg_pool2d(input, 2, 2)?;
            }
            let mut y = input;
            let mut features = Vec::with_capacity(layers.len() - 1);
            for (i, layer) in layers.iter().enumerate() {
                y = layer.forward(g, p, y)?;
                if i + 1 < layers.len() {
                    features.push(y);
                }
            }
            out.push(ScaleOutput {
                features,
                logits: y,
            });
        }
        Ok(out)
    }
}

/// Parameter vars of every network for one graph.
#[derive(Clone, Debug)]
pub struct BoundModel {
    pub encoder: Vec<Var>,
    pub generator: Vec<Var>,
    pub features: Vec<Var>,
    pub discriminator: Vec<Var>,
}

/// Which networks get gradients in a graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trainable {
    None,
    Autoencoder,
    Discriminator,
}

/// All networks of one operating mode.
#[derive(Clone, Debug)]
pub struct Model {
    config: NetConfig,
    pub encoder: Network,
    pub generator: Network,
    pub features: Option<Network>,
    pub discriminator: Discriminator,
}

impl Model {
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc_spec = LayerSpec::parse(&config.encoder_spec())?;
        let encoder = Network::build(&enc_spec, IMAGE_CHANNELS, &config, Head::Projection, "enc", &mut rng)?;
        let s = config.downsample;
        if encoder.out_channels != config.channels || (encoder.up, encoder.down) != (1, s) {
            return Err(Error::config(format!(
                "encoder '{enc_spec}' must downsample by {s} to C={} channels",
                config.channels
            )));
        }
        let features = match config.mode {
            Mode::Selective => {
                let spec = LayerSpec::parse(&config.features_spec())?;
                let f = Network::build(&spec, config.classes, &config, Head::Features, "feat", &mut rng)?;
                if (f.up, f.down) != (1, s) {
                    return Err(Error::config(format!("feature extractor '{spec}' must downsample by {s}")));
                }
                Some(f)
            }
            Mode::Generative => None,
        };
        let mut gen_in = config.channels;
        if config.use_noise {
            gen_in += config.noise_dim;
        }
        if let Some(f) = &features {
            gen_in += f.out_channels;
        }
        let gen_spec = LayerSpec::parse(&config.generator_spec())?;
        let generator = Network::build(&gen_spec, gen_in, &config, Head::Image, "gen", &mut rng)?;
        if generator.out_channels != IMAGE_CHANNELS || generator.up != s * generator.down {
            return Err(Error::config(format!(
                "generator '{gen_spec}' must upsample by {s} to {IMAGE_CHANNELS} channels"
            )));
        }
        let mut d_in = IMAGE_CHANNELS;
        if config.condition_d {
            d_in += config.classes;
        }
        let discriminator = Discriminator::build(d_in, &config, &mut rng);
        Ok(Self {
            config,
            encoder,
            generator,
            features,
            discriminator,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    /// Every parameter in checkpoint order: encoder, feature extractor,
    /// generator, discriminator.
    pub fn named_params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.encoder
            .params
            .iter()
            .chain(self.features.iter().flat_map(|f| f.params.iter()))
            .chain(self.generator.params.iter())
            .chain(self.discriminator.params.iter())
    }

    pub fn num_scalars(&self) -> usize {
        self.named_params().map(|(_, t)| t.len()).sum()
    }

    pub fn load(&mut self, mut entries: Vec<(String, Tensor<f32>)>) -> Result<()> {
        let mut sets: Vec<&mut ParamSet> = vec![&mut self.encoder.params];
        if let Some(f) = &mut self.features {
            sets.push(&mut f.params);
        }
        sets.push(&mut self.generator.params);
        sets.push(&mut self.discriminator.params);
        let expected: usize = sets.iter().map(|s| s.len()).sum();
        if entries.len() != expected {
            return Err(Error::corruption(format!(
                "checkpoint has {} parameters, model expects {expected}",
                entries.len()
            )));
        }
        for set in sets {
            let rest = entries.split_off(set.len());
            set.load_from(entries)?;
            entries = rest;
        }
        Ok(())
    }

    /// Adds parameters as graph leaves. Weights are cast to `T`.
    pub fn bind<T: Float>(&self, g: &mut Graph<T>, trainable: Trainable) -> BoundModel {
        let ae = trainable == Trainable::Autoencoder;
        let bind = |g: &mut Graph<T>, p: &ParamSet, rg| p.cast::<T>().bind(g, rg);
        BoundModel {
            encoder: bind(g, &self.encoder.params, ae),
            features: self
                .features
                .as_ref()
                .map_or_else(Vec::new, |f| bind(g, &f.params, ae)),
            generator: bind(g, &self.generator.params, ae),
            discriminator: bind(
                g,
                &self.discriminator.params,
                trainable == Trainable::Discriminator,
            ),
        }
    }

    /// Unquantized latent `w = E(x)`.
    pub fn encode<T: Float>(&self, g: &mut Graph<T>, p: &BoundModel, x: Var) -> Result<Var> {
        self.encoder.forward(g, &p.encoder, x)
    }

    /// `G([code, noise, F(labels)])`. `labels` (one-hot) is required in
    /// selective mode and ignored otherwise; `noise` is required iff enabled.
    pub fn generate<T: Float>(
        &self,
        g: &mut Graph<T>,
        p: &BoundModel,
        code: Var,
        noise: Option<Var>,
        labels: Option<Var>,
    ) -> Result<Var> {
        let mut parts = vec![code];
        match (self.config.use_noise, noise) {
            (true, Some(v)) => parts.push(v),
            (false, None) => {}
            (true, None) => return Err(Error::usage("generator needs a noise grid")),
            (false, Some(_)) => return Err(Error::usage("noise given to a noiseless generator")),
        }
        if let Some(f) = &self.features {
            let labels = labels.ok_or_else(|| Error::usage("selective generator needs a label map"))?;
            parts.push(f.forward(g, &p.features, labels)?);
        }
        let z = if parts.len() == 1 {
            code
        } else {
            g.concat_channels(&parts)?
        };
        self.generator.forward(g, &p.generator, z)
    }

    /// Discriminator outputs; `labels` is used only when D is conditioned.
    pub fn discriminate<T: Float>(
        &self,
        g: &mut Graph<T>,
        p: &BoundModel,
        x: Var,
        labels: Option<Var>,
    ) -> Result<Vec<ScaleOutput>> {
        let cond = if self.config.condition_d {
            Some(labels.ok_or_else(|| Error::usage("conditioned discriminator needs a label map"))?)
        } else {
            None
        };
        self.discriminator.forward(g, &p.discriminator, x, cond)
    }

    /// Inference-only `E(x)` for a `1 x 3 x H x W` image.
    pub fn infer_latent(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, Trainable::None);
        let xv = g.constant(x.clone());
        let w = self.encode(&mut g, &p, xv)?;
        Ok(g.value(w).clone())
    }

    /// Inference-only generator pass on a dequantized code.
    pub fn infer_image(
        &self,
        code: &Tensor,
        noise: Option<&Tensor>,
        labels: Option<&Tensor>,
    ) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, Trainable::None);
        let c = g.constant(code.clone());
        let v = noise.map(|t| g.constant(t.clone()));
        let l = labels.map(|t| g.constant(t.clone()));
        let x = self.generate(&mut g, &p, c, v, l)?;
        Ok(g.value(x).clone())
    }
}

/// `1 x classes x H x W` one-hot encoding of a label grid.
pub fn one_hot(grid: &LabelGrid, classes: usize) -> Result<Tensor> {
    let plane = grid.width * grid.height;
    let mut data = vec![0.0f32; classes * plane];
    for (i, &c) in grid.class.iter().enumerate() {
        if c as usize >= classes {
            return Err(Error::config(format!("class id {c} but only {classes} classes")));
        }
        data[c as usize * plane + i] = 1.0;
    }
    Tensor::new(&[1, classes, grid.height, grid.width], data)
}

/// Unit-normal `1 x dim x h x w` grid.
pub fn noise_grid(dim: usize, h: usize, w: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(&[1, dim, h, w], |_| rng.sample::<f32, _>(StandardNormal))
}
