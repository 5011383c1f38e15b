//! Central-difference gradient checks in f64.

use gcpress_core::networks::{Model, NetConfig, ScaleOutput, Trainable};
use gcpress_core::objectives::{
    distortion_mse, feature_matching_loss, gc_generator_total, lsgan_d_loss, lsgan_g_loss,
    masked_distortion, perceptual_loss, FeatureNetwork, GeneratorGanForm, GeneratorTerms,
    LossWeights,
};
use gcpress_core::tensor::Activation;
use gcpress_core::{Graph, Result, Tensor, Var};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-4;
pub const INSTANCES: usize = 20;

type Build = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

/// Scalar function of `inputs`; only `probe` entries per input are
/// differenced when set.
pub struct Problem {
    pub inputs: Vec<Tensor<f64>>,
    pub build: Build,
    pub probe: Option<usize>,
}

pub enum Outcome {
    Checked(f64),
    NearKink,
}

fn evaluate(build: &Build, inputs: &[Tensor<f64>]) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let loss = build(&mut g, &vars).expect("forward");
    g.value(loss).item()
}

fn central(build: &Build, inputs: &mut [Tensor<f64>], k: usize, i: usize, h: f64) -> f64 {
    let orig = inputs[k].data()[i];
    inputs[k].data_mut()[i] = orig + h;
    let fp = evaluate(build, inputs);
    inputs[k].data_mut()[i] = orig - h;
    let fm = evaluate(build, inputs);
    inputs[k].data_mut()[i] = orig;
    (fp - fm) / (2.0 * h)
}

/// An entry is near a kink when the difference quotient has not settled:
/// the estimates at `STEP` and `STEP / 2` disagree by more than a quarter
/// of the tolerance.
fn settled(a: f64, b: f64) -> bool {
    (a - b).abs() <= 0.25 * TOLERANCE * a.abs().max(b.abs()).max(1e-6)
}

/// Worst relative error `|analytic - numeric| / max(|analytic|, |numeric|)`
/// over inputs, measured as vector norms over the checked entries. With a
/// probe count, unsettled entries are skipped and others drawn instead;
/// otherwise any unsettled entry rejects the instance.
pub fn check(p: &Problem, rng: &mut ChaCha8Rng) -> Outcome {
    check_with_step(p, rng, STEP)
}

pub fn check_with_step(p: &Problem, rng: &mut ChaCha8Rng, step: f64) -> Outcome {
    let mut g = Graph::new();
    let vars: Vec<Var> = p.inputs.iter().map(|t| g.variable(t.clone())).collect();
    let loss = (p.build)(&mut g, &vars).expect("forward");
    let grads = g.backward(loss).expect("backward");
    let mut worst: f64 = 0.0;
    let mut inputs = p.inputs.clone();
    for (k, &v) in vars.iter().enumerate() {
        let n = inputs[k].len();
        let analytic = grads
            .get(v)
            .map_or_else(|| vec![0.0; n], |t| t.data().to_vec());
        let (order, want): (Vec<usize>, usize) = match p.probe {
            Some(m) if m < n => (sample(rng, n, n).into_vec(), m),
            _ => ((0..n).collect(), n),
        };
        let (mut diff, mut na, mut nn, mut used) = (0.0, 0.0, 0.0, 0);
        for i in order {
            if used == want {
                break;
            }
            let c = central(&p.build, &mut inputs, k, i, step);
            let c2 = central(&p.build, &mut inputs, k, i, step / 2.0);
            if !settled(c, c2) {
                if want == n {
                    return Outcome::NearKink;
                }
                continue;
            }
            diff += (analytic[i] - c).powi(2);
            na += analytic[i].powi(2);
            nn += c.powi(2);
            used += 1;
        }
        if used < want {
            return Outcome::NearKink;
        }
        let denom = na.sqrt().max(nn.sqrt()).max(1e-6);
        worst = worst.max(diff.sqrt() / denom);
    }
    Outcome::Checked(worst)
}

pub struct Case {
    pub name: &'static str,
    pub make: fn(&mut ChaCha8Rng) -> Problem,
}

pub struct CaseReport {
    pub worst: f64,
    pub rejected: usize,
}

/// Checks `INSTANCES` random instances, redrawing any that land near a kink.
pub fn run_case(case: &Case, seed: u64) -> std::result::Result<CaseReport, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut done, mut rejected, mut worst) = (0, 0, 0.0f64);
    while done < INSTANCES {
        let p = (case.make)(&mut rng);
        match check(&p, &mut rng) {
            Outcome::Checked(e) => {
                worst = worst.max(e);
                if e > TOLERANCE {
                    return Err(format!("{}: relative error {e:.3e} on instance {done}", case.name));
                }
                done += 1;
            }
            Outcome::NearKink => {
                rejected += 1;
                if rejected > 10 * INSTANCES {
                    return Err(format!("{}: too many instances near kinks", case.name));
                }
            }
        }
    }
    Ok(CaseReport { worst, rejected })
}

pub fn random(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

/// Entries with magnitude in `[0.1, 1]`, away from the kink at zero.
pub fn away_from_zero(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// `sum(y * r)` for a fixed random `r`, so every output entry matters.
pub fn project(g: &mut Graph<f64>, y: Var, r: &Tensor<f64>) -> Result<Var> {
    let c = g.constant(r.clone());
    let m = g.mul(y, c)?;
    g.sum(m)
}

fn unary(rng: &mut ChaCha8Rng, x: Tensor<f64>, op: fn(&mut Graph<f64>, Var) -> Result<Var>) -> Problem {
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let out = op(&mut g, v).expect("forward");
    let r = random(rng, g.value(out).shape(), 1.0);
    Problem {
        inputs: vec![x],
        build: Box::new(move |g, v| {
            let y = op(g, v[0])?;
            project(g, y, &r)
        }),
        probe: None,
    }
}

fn binary(rng: &mut ChaCha8Rng, op: fn(&mut Graph<f64>, Var, Var) -> Result<Var>) -> Problem {
    let shape = [1, 2, 3, 4];
    let r = random(rng, &shape, 1.0);
    Problem {
        inputs: vec![random(rng, &shape, 1.0), random(rng, &shape, 1.0)],
        build: Box::new(move |g, v| {
            let y = op(g, v[0], v[1])?;
            project(g, y, &r)
        }),
        probe: None,
    }
}

fn conv_problem(rng: &mut ChaCha8Rng, k: usize, stride: usize, pad: usize) -> Problem {
    let n = rng.random_range(1..=2);
    let (c, o) = (rng.random_range(1..=3), rng.random_range(1..=3));
    let hw = rng.random_range(4..=6);
    let x = random(rng, &[n, c, hw, hw], 1.0);
    let w = random(rng, &[o, c, k, k], 0.5);
    let b = random(rng, &[o], 0.5);
    let out = (hw + 2 * pad - k) / stride + 1;
    let r = random(rng, &[n, o, out, out], 1.0);
    Problem {
        inputs: vec![x, w, b],
        build: Box::new(move |g, v| {
            let y = g.conv2d(v[0], v[1], v[2], stride, pad)?;
            project(g, y, &r)
        }),
        probe: None,
    }
}

fn logit_maps(rng: &mut ChaCha8Rng, scales: usize) -> Vec<Tensor<f64>> {
    (0..scales).map(|s| random(rng, &[1, 1, 4 >> s, 4 >> s], 1.5)).collect()
}

fn scale_outputs(vars: &[Var]) -> Vec<ScaleOutput> {
    vars.chunks(3)
        .map(|c| ScaleOutput {
            features: c[..2].to_vec(),
            logits: c[2],
        })
        .collect()
}

struct TinyFeatures {
    weight: Tensor<f64>,
    bias: Tensor<f64>,
}

impl FeatureNetwork<f64> for TinyFeatures {
    fn features(&self, g: &mut Graph<f64>, x: Var) -> Result<Vec<Var>> {
        let w = g.constant(self.weight.clone());
        let b = g.constant(self.bias.clone());
        let y = g.conv2d(x, w, b, 1, 1)?;
        let a = g.activation(y, Activation::LeakyRelu(0.2))?;
        let p = g.avg_pool2d(a, 2, 2)?;
        Ok(vec![a, p])
    }
}

fn tiny_gc_model(seed: u64) -> Model {
    let cfg = NetConfig {
        width_scale: 0.02,
        n_res: 1,
        d_scales: 1,
        use_noise: true,
        ..NetConfig::generative()
    };
    Model::new(cfg, seed).expect("model")
}

pub fn cases() -> Vec<Case> {
    vec![
        Case { name: "conv2d k3 s1 p1", make: |r| conv_problem(r, 3, 1, 1) },
        Case { name: "conv2d k3 s2 p1", make: |r| conv_problem(r, 3, 2, 1) },
        Case { name: "conv2d k4 s2 p2", make: |r| conv_problem(r, 4, 2, 2) },
        Case { name: "conv2d k1 s1 p0", make: |r| conv_problem(r, 1, 1, 0) },
        Case {
            name: "conv2d_transpose k3 s2 p1",
            make: |rng| {
                let (c, o, hw) = (rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(2..=4));
                let x = random(rng, &[1, c, hw, hw], 1.0);
                let w = random(rng, &[c, o, 3, 3], 0.5);
                let b = random(rng, &[o], 0.5);
                let r = random(rng, &[1, o, 2 * hw, 2 * hw], 1.0);
                Problem {
                    inputs: vec![x, w, b],
                    build: Box::new(move |g, v| {
                        let y = g.conv2d_transpose(v[0], v[1], v[2], 2, 1, 1)?;
                        project(g, y, &r)
                    }),
                    probe: None,
                }
            },
        },
        Case {
            name: "instance_norm",
            make: |rng| {
                let c = rng.random_range(1..=3);
                let x = random(rng, &[1, c, 3, 4], 1.0);
                let gain = random(rng, &[c], 1.0);
                let shift = random(rng, &[c], 1.0);
                let r = random(rng, &[1, c, 3, 4], 1.0);
                Problem {
                    inputs: vec![x, gain, shift],
                    build: Box::new(move |g, v| {
                        let y = g.instance_norm(v[0], v[1], v[2], 1e-5)?;
                        project(g, y, &r)
                    }),
                    probe: None,
                }
            },
        },
        Case { name: "relu", make: |r| { let x = away_from_zero(r, &[1, 2, 3, 3]); unary(r, x, |g, v| g.relu(v)) } },
        Case {
            name: "leaky_relu",
            make: |r| {
                let x = away_from_zero(r, &[1, 2, 3, 3]);
                unary(r, x, |g, v| g.activation(v, Activation::LeakyRelu(0.2)))
            },
        },
        Case { name: "tanh", make: |r| { let x = random(r, &[1, 2, 3, 3], 2.0); unary(r, x, |g, v| g.tanh(v)) } },
        Case { name: "avg_pool2d", make: |r| { let x = random(r, &[1, 2, 4, 6], 1.0); unary(r, x, |g, v| g.avg_pool2d(v, 2, 2)) } },
        Case { name: "add", make: |r| binary(r, |g, a, b| g.add(a, b)) },
        Case { name: "sub", make: |r| binary(r, |g, a, b| g.sub(a, b)) },
        Case { name: "mul", make: |r| binary(r, |g, a, b| g.mul(a, b)) },
        Case { name: "scale", make: |r| { let x = random(r, &[1, 1, 3, 3], 1.0); unary(r, x, |g, v| g.scale(v, -1.7)) } },
        Case { name: "add_scalar", make: |r| { let x = random(r, &[1, 1, 3, 3], 1.0); unary(r, x, |g, v| g.add_scalar(v, 0.3)) } },
        Case { name: "square", make: |r| { let x = random(r, &[1, 2, 3, 3], 1.0); unary(r, x, |g, v| g.square(v)) } },
        Case { name: "abs", make: |r| { let x = away_from_zero(r, &[1, 2, 3, 3]); unary(r, x, |g, v| g.abs(v)) } },
        Case {
            name: "sum",
            make: |r| Problem {
                inputs: vec![random(r, &[1, 2, 3, 3], 1.0)],
                build: Box::new(|g, v| { let s = g.square(v[0])?; g.sum(s) }),
                probe: None,
            },
        },
        Case {
            name: "mean",
            make: |r| Problem {
                inputs: vec![random(r, &[1, 2, 3, 3], 1.0)],
                build: Box::new(|g, v| { let s = g.square(v[0])?; g.mean(s) }),
                probe: None,
            },
        },
        Case {
            name: "concat_channels",
            make: |rng| {
                let a = random(rng, &[1, 1, 3, 3], 1.0);
                let b = random(rng, &[1, 2, 3, 3], 1.0);
                let r = random(rng, &[1, 3, 3, 3], 1.0);
                Problem {
                    inputs: vec![a, b],
                    build: Box::new(move |g, v| {
                        let y = g.concat_channels(&[v[0], v[1]])?;
                        project(g, y, &r)
                    }),
                    probe: None,
                }
            },
        },
        Case {
            name: "soft_quantize",
            make: |rng| {
                let sigma = rng.random_range(0.5..2.0);
                let x = random(rng, &[1, 2, 3, 3], 2.5);
                let r = random(rng, &[1, 2, 3, 3], 1.0);
                Problem {
                    inputs: vec![x],
                    build: Box::new(move |g, v| {
                        let y = g.soft_quantize(v[0], &[-2.0, -1.0, 0.0, 1.0, 2.0], sigma, false)?;
                        project(g, y, &r)
                    }),
                    probe: None,
                }
            },
        },
        Case {
            name: "lsgan_d_loss",
            make: |rng| {
                let mut inputs = logit_maps(rng, 2);
                inputs.extend(logit_maps(rng, 2));
                Problem {
                    inputs,
                    build: Box::new(|g, v| lsgan_d_loss(g, &v[..2], &v[2..])),
                    probe: None,
                }
            },
        },
        Case {
            name: "lsgan_g_loss non-saturating",
            make: |rng| Problem {
                inputs: logit_maps(rng, 3),
                build: Box::new(|g, v| lsgan_g_loss(g, v, GeneratorGanForm::NonSaturating)),
                probe: None,
            },
        },
        Case {
            name: "lsgan_g_loss literal",
            make: |rng| Problem {
                inputs: logit_maps(rng, 2),
                build: Box::new(|g, v| lsgan_g_loss(g, v, GeneratorGanForm::Literal)),
                probe: None,
            },
        },
        Case {
            name: "distortion_mse",
            make: |rng| Problem {
                inputs: vec![random(rng, &[1, 3, 4, 4], 1.0), random(rng, &[1, 3, 4, 4], 1.0)],
                build: Box::new(|g, v| distortion_mse(g, v[0], v[1])),
                probe: None,
            },
        },
        Case {
            name: "masked_distortion",
            make: |rng| {
                let mut mask = Tensor::from_fn(&[1, 1, 4, 4], |_| rng.random_bool(0.5) as u8 as f64);
                mask.data_mut()[rng.random_range(0..16)] = 1.0;
                Problem {
                    inputs: vec![random(rng, &[1, 3, 4, 4], 1.0), random(rng, &[1, 3, 4, 4], 1.0)],
                    build: Box::new(move |g, v| masked_distortion(g, v[0], v[1], &mask)),
                    probe: None,
                }
            },
        },
        Case {
            name: "feature_matching_loss",
            make: |rng| {
                // real activations are fixed targets; only the fake branch is differentiated
                let real: Vec<Tensor<f64>> = (0..2)
                    .flat_map(|_| [random(rng, &[1, 2, 3, 3], 1.0), random(rng, &[1, 1, 2, 2], 1.0), random(rng, &[1, 1, 2, 2], 1.0)])
                    .collect();
                let fake = real.iter().map(|t| random(rng, t.shape(), 1.0)).collect();
                Problem {
                    inputs: fake,
                    build: Box::new(move |g, v| {
                        let rv: Vec<Var> = real.iter().map(|t| g.constant(t.clone())).collect();
                        let r = scale_outputs(&rv);
                        let f = scale_outputs(v);
                        feature_matching_loss(g, &r, &f)
                    }),
                    probe: None,
                }
            },
        },
        Case {
            name: "perceptual_loss",
            make: |rng| {
                let net = TinyFeatures {
                    weight: random(rng, &[2, 3, 3, 3], 0.5),
                    bias: random(rng, &[2], 0.2),
                };
                // the reference image's features are fixed targets
                let x = random(rng, &[1, 3, 4, 4], 1.0);
                Problem {
                    inputs: vec![random(rng, &[1, 3, 4, 4], 1.0)],
                    build: Box::new(move |g, v| {
                        let xv = g.constant(x.clone());
                        perceptual_loss(g, &net, xv, v[0])
                    }),
                    probe: None,
                }
            },
        },
        Case {
            name: "gc_generator_total",
            make: |rng| {
                let weights = LossWeights {
                    lambda_d: rng.random_range(1.0..20.0),
                    w_fm: rng.random_range(0.0..10.0),
                    ..LossWeights::default()
                };
                Problem {
                    inputs: vec![
                        random(rng, &[1, 1, 2, 2], 1.0),
                        random(rng, &[1, 3, 4, 4], 1.0),
                        random(rng, &[1, 3, 4, 4], 1.0),
                        random(rng, &[1, 1, 2, 2], 1.0),
                    ],
                    build: Box::new(move |g, v| {
                        let terms = GeneratorTerms {
                            gan: lsgan_g_loss(g, &[v[0]], GeneratorGanForm::NonSaturating)?,
                            distortion: distortion_mse(g, v[1], v[2])?,
                            feature_matching: Some({ let s = g.square(v[3])?; g.mean(s)? }),
                            perceptual: None,
                        };
                        gc_generator_total(g, &terms, &weights)
                    }),
                    probe: None,
                }
            },
        },
    ]
}

/// Distortion of a tiny GC autoencoder, differentiated with respect to the
/// input image and a few encoder and generator parameters.
pub fn network_problem(rng: &mut ChaCha8Rng) -> Problem {
    let model = tiny_gc_model(rng.random());
    let x = random(rng, &[1, 3, 32, 32], 1.0);
    let noise = random(rng, &[1, model.config().noise_dim, 2, 2], 1.0);
    let mut inputs = vec![x];
    // first encoder weight, last generator weight and bias
    let enc = model.encoder.params();
    let gen = model.generator.params();
    let first = enc.ids().next().unwrap();
    let last: Vec<_> = gen.ids().collect();
    inputs.push(enc.get(first).cast());
    inputs.push(gen.get(last[last.len() - 2]).cast());
    inputs.push(gen.get(last[last.len() - 1]).cast());
    Problem {
        inputs,
        build: Box::new(move |g, v| {
            let mut p = model.bind(g, Trainable::None);
            p.encoder[0] = v[1];
            let n = p.generator.len();
            p.generator[n - 2] = v[2];
            p.generator[n - 1] = v[3];
            let w = model.encode(g, &p, v[0])?;
            let nz = model.config().use_noise.then(|| g.constant(noise.clone()));
            let y = model.generate(g, &p, w, nz, None)?;
            let t = g.constant(Tensor::zeros(&[1, 3, 32, 32]));
            distortion_mse(g, y, t)
        }),
        probe: Some(8),
    }
}
