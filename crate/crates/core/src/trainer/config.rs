use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::bitstream::Mode;
use crate::error::{Error, Result};
use crate::networks::NetConfig;
use crate::objectives::{GeneratorGanForm, LossWeights};
use crate::quantizer::CenterSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    Gc,
    /// GC with the label map conditioning the discriminator only.
    GcDPlus,
    /// Selective, random-instance heatmaps.
    ScRi,
    /// Selective, random-box heatmaps.
    ScRb,
    /// Same networks, distortion only.
    MseBaseline,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Gc => "gc",
            TrainMode::GcDPlus => "gc_dplus",
            TrainMode::ScRi => "sc_ri",
            TrainMode::ScRb => "sc_rb",
            TrainMode::MseBaseline => "mse_baseline",
        }
    }

    pub fn is_selective(self) -> bool {
        matches!(self, TrainMode::ScRi | TrainMode::ScRb)
    }

    /// Default network layout for the mode.
    pub fn net_config(self) -> NetConfig {
        match self {
            TrainMode::Gc | TrainMode::MseBaseline => NetConfig::generative(),
            TrainMode::GcDPlus => NetConfig {
                condition_d: true,
                ..NetConfig::generative()
            },
            TrainMode::ScRi | TrainMode::ScRb => NetConfig::selective(),
        }
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            TrainMode::Gc,
            TrainMode::GcDPlus,
            TrainMode::ScRi,
            TrainMode::ScRb,
            TrainMode::MseBaseline,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| Error::config(format!("unknown mode '{s}'")))
    }
}

/// Instance norm has no running statistics, so switching to fixed
/// statistics halfway through is accepted but changes nothing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NormMode {
    #[default]
    Instance,
    InstanceThenFixed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub iterations: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch: usize,
    pub seed: u64,
    /// Save the model every this many iterations (0: only at the end).
    pub checkpoint_every: usize,
    pub norm_mode: NormMode,
    /// Side of the square training crops.
    pub image_size: usize,
    /// Number of synthetic training images.
    pub corpus_size: usize,
    /// PNG folder to train on instead of the synthetic corpus.
    pub data_dir: Option<PathBuf>,
    /// Share of instances preserved by the random-instance sampler.
    pub preserve_fraction: f64,
    pub gan_form: GeneratorGanForm,
    pub weights: LossWeights,
    pub net: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_mode(TrainMode::Gc)
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(format!("bad value '{v}' for {key}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(format!("bad boolean '{v}' for {key}"))),
    }
}

impl TrainConfig {
    pub fn for_mode(mode: TrainMode) -> Self {
        Self {
            mode,
            iterations: 2000,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch: 1,
            seed: 0,
            checkpoint_every: 0,
            norm_mode: NormMode::Instance,
            image_size: 64,
            corpus_size: 512,
            data_dir: None,
            preserve_fraction: 0.25,
            gan_form: GeneratorGanForm::NonSaturating,
            weights: LossWeights::default(),
            net: mode.net_config(),
        }
    }

    /// Builds a config from `key=value` pairs on top of the defaults for
    /// the pair's `mode` (GC if absent). Later duplicates win.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let map: BTreeMap<&str, &str> = pairs.into_iter().collect();
        let mode = map.get("mode").map_or(Ok(TrainMode::Gc), |m| m.parse())?;
        let mut cfg = Self::for_mode(mode);
        let mut centers: Option<Vec<f32>> = None;
        let mut sigma: Option<f64> = None;
        for (&k, &v) in &map {
            let net = &mut cfg.net;
            match k {
                "mode" => {}
                "iterations" => cfg.iterations = parse(k, v)?,
                "lr" => cfg.lr = parse(k, v)?,
                "beta1" => cfg.beta1 = parse(k, v)?,
                "beta2" => cfg.beta2 = parse(k, v)?,
                "batch" => cfg.batch = parse(k, v)?,
                "seed" => cfg.seed = parse(k, v)?,
                "checkpoint_every" => cfg.checkpoint_every = parse(k, v)?,
                "norm_mode" => {
                    cfg.norm_mode = match v {
                        "instance" => NormMode::Instance,
                        "instance_then_fixed" => NormMode::InstanceThenFixed,
                        _ => return Err(Error::config(format!("unknown norm_mode '{v}'"))),
                    }
                }
                "image_size" => cfg.image_size = parse(k, v)?,
                "corpus_size" => cfg.corpus_size = parse(k, v)?,
                "data_dir" => cfg.data_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
                "preserve_fraction" => cfg.preserve_fraction = parse(k, v)?,
                "gan_form" => {
                    cfg.gan_form = match v {
                        "non_saturating" => GeneratorGanForm::NonSaturating,
                        "literal" => GeneratorGanForm::Literal,
                        _ => return Err(Error::config(format!("unknown gan_form '{v}'"))),
                    }
                }
                "lambda_d" => cfg.weights.lambda_d = parse(k, v)?,
                "w_fm" => cfg.weights.w_fm = parse(k, v)?,
                "beta" => cfg.weights.beta = parse(k, v)?,
                "w_perceptual" => cfg.weights.w_perceptual = parse(k, v)?,
                "width_scale" => net.width_scale = parse(k, v)?,
                "channels" => net.channels = parse(k, v)?,
                "centers" => {
                    centers = Some(
                        v.split(',')
                            .map(|c| parse(k, c.trim()))
                            .collect::<Result<Vec<f32>>>()?,
                    )
                }
                "sigma" => sigma = Some(parse(k, v)?),
                "downsample" => net.downsample = parse(k, v)?,
                "n_res" => net.n_res = parse(k, v)?,
                "d_scales" => net.d_scales = parse(k, v)?,
                "condition_d" => net.condition_d = parse_bool(k, v)?,
                "use_noise" => net.use_noise = parse_bool(k, v)?,
                "noise_dim" => net.noise_dim = parse(k, v)?,
                "classes" => net.classes = parse(k, v)?,
                "encoder_spec" => net.encoder_spec = Some(v.to_string()),
                "generator_spec" => net.generator_spec = Some(v.to_string()),
                "features_spec" => net.features_spec = Some(v.to_string()),
                _ => return Err(Error::config(format!("unknown config key '{k}'"))),
            }
        }
        if centers.is_some() || sigma.is_some() {
            let c = centers.unwrap_or_else(|| cfg.net.centers.centers().to_vec());
            cfg.net.centers = CenterSet::new(c, sigma.unwrap_or(cfg.net.centers.sigma()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses `key=value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        Self::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.weights.validate()?;
        if self.iterations == 0 || self.batch == 0 {
            return Err(Error::config("iterations and batch must be at least 1"));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("need lr > 0 and betas in [0, 1)"));
        }
        if self.image_size == 0 || self.image_size % self.net.downsample != 0 {
            return Err(Error::config(format!(
                "image_size {} must be a positive multiple of s={}",
                self.image_size, self.net.downsample
            )));
        }
        if self.corpus_size == 0 {
            return Err(Error::config("corpus_size must be at least 1"));
        }
        if !(self.preserve_fraction > 0.0 && self.preserve_fraction <= 1.0) {
            return Err(Error::config("preserve_fraction must be in (0, 1]"));
        }
        let selective = self.net.mode == Mode::Selective;
        if selective != self.mode.is_selective() {
            return Err(Error::config(format!(
                "mode {} does not match a {} network",
                self.mode.name(),
                self.net.mode.name()
            )));
        }
        Ok(())
    }

    /// Every field as `key=value` lines, readable by [`TrainConfig::parse`].
    pub fn to_text(&self) -> String {
        let n = &self.net;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k}={v}").unwrap();
        kv("mode", self.mode.name().into());
        kv("iterations", self.iterations.to_string());
        kv("lr", self.lr.to_string());
        kv("beta1", self.beta1.to_string());
        kv("beta2", self.beta2.to_string());
        kv("batch", self.batch.to_string());
        kv("seed", self.seed.to_string());
        kv("checkpoint_every", self.checkpoint_every.to_string());
        kv(
            "norm_mode",
            match self.norm_mode {
                NormMode::Instance => "instance",
                NormMode::InstanceThenFixed => "instance_then_fixed",
            }
            .into(),
        );
        kv("image_size", self.image_size.to_string());
        kv("corpus_size", self.corpus_size.to_string());
        if let Some(d) = &self.data_dir {
            kv("data_dir", d.display().to_string());
        }
        kv("preserve_fraction", self.preserve_fraction.to_string());
        kv(
            "gan_form",
            match self.gan_form {
                GeneratorGanForm::NonSaturating => "non_saturating",
                GeneratorGanForm::Literal => "literal",
            }
            .into(),
        );
        kv("lambda_d", self.weights.lambda_d.to_string());
        kv("w_fm", self.weights.w_fm.to_string());
        kv("beta", self.weights.beta.to_string());
        kv("w_perceptual", self.weights.w_perceptual.to_string());
        kv("width_scale", n.width_scale.to_string());
        kv("channels", n.channels.to_string());
        let centers: Vec<String> = n.centers.centers().iter().map(f32::to_string).collect();
        kv("centers", centers.join(","));
        kv("sigma", n.centers.sigma().to_string());
        kv("downsample", n.downsample.to_string());
        kv("n_res", n.n_res.to_string());
        kv("d_scales", n.d_scales.to_string());
        kv("condition_d", n.condition_d.to_string());
        kv("use_noise", n.use_noise.to_string());
        kv("noise_dim", n.noise_dim.to_string());
        kv("classes", n.classes.to_string());
        let mut spec = |k: &str, set: &Option<String>, effective: String| match set {
            Some(v) => writeln!(s, "{k}={v}").unwrap(),
            None => writeln!(s, "# {k}={effective}").unwrap(),
        };
        spec("encoder_spec", &n.encoder_spec, n.encoder_spec());
        spec("generator_spec", &n.generator_spec, n.generator_spec());
        if n.mode == Mode::Selective {
            spec("features_spec", &n.features_spec, n.features_spec());
        }
        s
    }
}

/// Splits `key=value` lines, skipping blanks and `#` comments.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i, l.split('#').next().unwrap().trim()))
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::config(format!("config line {}: expected key=value", i + 1)))
        })
        .collect()
}
