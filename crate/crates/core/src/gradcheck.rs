//! Central finite-difference checks of the autodiff tape.
//!
//! Every check builds a scalar objective on a fresh tape, compares the
//! backward-pass gradient of each input with `(f(x+h) − f(x−h)) / 2h`, and
//! reports the max-norm relative error per input tensor:
//! `max_i |g_i − n_i| / max(‖g‖∞, ‖n‖∞)`.
//! Gradients are taken from an `f32` tape (training precision) and from an
//! `f64` tape; the numeric side is evaluated in `f64` for both.

use std::fmt;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::Result;
use crate::loss::{LossConfig, PairLabel};
use crate::network::{BackboneMode, ModelConfig, ModelParameters};
use crate::seed::{self, Rng as SeededRng};
use crate::tensor::{Element, Mode, Tape, Tensor, Var};

pub const F32_TOLERANCE: f64 = 1e-3;
pub const F64_TOLERANCE: f64 = 1e-5;

/// Numeric precision of one check run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn tolerance(self) -> f64 {
        match self {
            Self::F32 => F32_TOLERANCE,
            Self::F64 => F64_TOLERANCE,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::F32 => "f32",
            Self::F64 => "f64",
        })
    }
}

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub precision: Precision,
    pub seed: u64,
    pub max_rel_error: f64,
    pub coords_checked: usize,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.precision.tolerance()
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<22} {} seed={:<3} coords={:<4} rel_err={:.3e} (tol {:.0e})",
            if self.passed() { "ok  " } else { "FAIL" },
            self.name,
            self.precision,
            self.seed,
            self.coords_checked,
            self.max_rel_error,
            self.precision.tolerance()
        )
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub seeds: u64,
    /// Coordinates perturbed per input tensor (all, if the tensor is smaller).
    pub coords_per_tensor: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            seeds: 20,
            coords_per_tensor: 24,
        }
    }
}

/// Central-difference step of the f64 reference.
const STEP: f64 = 1e-6;

/// Backward-pass gradients of `objective` with respect to each input.
fn analytic_gradients<T, F>(inputs: &[Tensor<T>], objective: F) -> Result<Vec<Vec<f64>>>
where
    T: Element,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let loss = objective(&mut tape, &vars)?;
    tape.backward(loss)?;
    Ok(vars
        .iter()
        .map(|&v| {
            tape.grad(v)
                .expect("trainable leaf has a gradient")
                .iter()
                .map(|g| g.as_f64())
                .collect()
        })
        .collect())
}

/// Max-norm relative error of `analytic` against central differences of
/// the f64 `reference` objective, over a random subset of coordinates.
///
/// `ref_inputs` must hold the same values as the inputs `analytic` was
/// computed at. Returns the worst per-tensor error and the number of
/// coordinates checked.
pub fn compare_with_reference<G>(
    analytic: &[Vec<f64>],
    ref_inputs: &[Tensor<f64>],
    reference: G,
    coords_per_tensor: usize,
    rng: &mut SeededRng,
) -> Result<(f64, usize)>
where
    G: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = reference(&mut tape, &vars)?;
        Ok(tape.value(loss).data()[0])
    };

    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut work = ref_inputs.to_vec();
    for (ti, tensor) in ref_inputs.iter().enumerate() {
        let n = tensor.len();
        let coords: Vec<usize> = if n <= coords_per_tensor {
            (0..n).collect()
        } else {
            sample(rng, n, coords_per_tensor).into_vec()
        };
        let (mut max_diff, mut max_num, mut max_ana) = (0.0f64, 0.0f64, 0.0f64);
        for &i in &coords {
            let x = tensor.data()[i];
            work[ti].data_mut()[i] = x + STEP;
            let plus = eval(&work)?;
            work[ti].data_mut()[i] = x - STEP;
            let minus = eval(&work)?;
            work[ti].data_mut()[i] = x;
            let numeric = (plus - minus) / ((x + STEP) - (x - STEP));
            let a = analytic[ti][i];
            max_diff = max_diff.max((numeric - a).abs());
            max_num = max_num.max(numeric.abs());
            max_ana = max_ana.max(a.abs());
        }
        let scale = max_ana.max(max_num);
        if scale > 0.0 {
            worst = worst.max(max_diff / scale);
        }
        checked += coords.len();
    }
    Ok((worst, checked))
}

/// Check an f64 objective against its own central differences.
pub fn check_gradients<F>(
    inputs: &[Tensor<f64>],
    objective: F,
    coords_per_tensor: usize,
    rng: &mut SeededRng,
) -> Result<(f64, usize)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let analytic = analytic_gradients(inputs, &objective)?;
    compare_with_reference(&analytic, inputs, objective, coords_per_tensor, rng)
}

/// Draw a value and round it to f32, so an instance generated as `f32`
/// and as `f64` from the same stream holds identical numbers.
fn draw<T: Element>(x: f64) -> T {
    T::of_f64(x as f32 as f64)
}

fn uniform<T: Element, R: Rng + ?Sized>(
    shape: &[usize],
    lo: f64,
    hi: f64,
    rng: &mut R,
) -> Tensor<T> {
    Tensor::from_fn(shape.to_vec(), |_| draw(rng.random_range(lo..hi)))
}

/// Values bounded away from zero, for ops with a kink at zero.
fn away_from_zero<T: Element, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.random_range(0.1..1.0);
        draw(if rng.random_bool(0.5) { m } else { -m })
    })
}

/// A shuffled grid of distinct values spaced 0.1 apart, so no pooling
/// window has a near-tie.
fn distinct_values<T: Element, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * 0.1).collect();
    v.shuffle(rng);
    Tensor::new(shape.to_vec(), v.into_iter().map(draw).collect()).expect("shape")
}

type Objective<T> = Box<dyn Fn(&mut Tape<T>, &[Var]) -> Result<Var>>;

/// Linear readout `Σ w ⊙ out` with random weights fixed per check.
fn readout<T: Element>(shape: &[usize], rng: &mut SeededRng) -> Tensor<T> {
    uniform(shape, -1.0, 1.0, rng)
}

struct Case<T: Element> {
    name: &'static str,
    inputs: Vec<Tensor<T>>,
    objective: Objective<T>,
}

fn op_cases<T: Element>(rng: &mut SeededRng) -> Vec<Case<T>> {
    let mut cases = Vec::new();

    let w = readout::<T>(&[2, 5, 6, 4], rng);
    cases.push(Case {
        name: "conv2d",
        inputs: vec![
            uniform(&[2, 5, 6, 3], -1.0, 1.0, rng),
            uniform(&[3, 3, 3, 4], -1.0, 1.0, rng),
        ],
        objective: Box::new(move |t, v| {
            let y = t.conv2d(v[0], v[1])?;
            t.weighted_sum(y, &w)
        }),
    });

    let w = readout::<T>(&[2, 3, 3, 4], rng);
    cases.push(Case {
        name: "channel_bias",
        inputs: vec![
            uniform(&[2, 3, 3, 4], -1.0, 1.0, rng),
            uniform(&[4], -1.0, 1.0, rng),
        ],
        objective: Box::new(move |t, v| {
            let y = t.add_channel_bias(v[0], v[1])?;
            t.weighted_sum(y, &w)
        }),
    });

    let w = readout::<T>(&[2, 6, 6, 2], rng);
    cases.push(Case {
        name: "relu",
        inputs: vec![away_from_zero(&[2, 6, 6, 2], rng)],
        objective: Box::new(move |t, v| {
            let y = t.relu(v[0]);
            t.weighted_sum(y, &w)
        }),
    });

    let w = readout::<T>(&[2, 3, 3, 2], rng);
    cases.push(Case {
        name: "maxpool2d",
        inputs: vec![distinct_values(&[2, 6, 6, 2], rng)],
        objective: Box::new(move |t, v| {
            let y = t.maxpool2d(v[0])?;
            t.weighted_sum(y, &w)
        }),
    });

    let w = readout::<T>(&[3, 4], rng);
    cases.push(Case {
        name: "dense",
        inputs: vec![
            uniform(&[3, 5], -1.0, 1.0, rng),
            uniform(&[5, 4], -1.0, 1.0, rng),
            uniform(&[4], -1.0, 1.0, rng),
        ],
        objective: Box::new(move |t, v| {
            let y = t.dense(v[0], v[1], v[2])?;
            t.weighted_sum(y, &w)
        }),
    });

    let w = readout::<T>(&[4, 6], rng);
    let mask_seed: u64 = rng.random();
    cases.push(Case {
        name: "dropout",
        inputs: vec![uniform(&[4, 6], -1.0, 1.0, rng)],
        objective: Box::new(move |t, v| {
            let mut r = seed::rng_for(mask_seed, "gradcheck/dropout");
            let y = t.dropout(v[0], 0.8, Mode::Train, &mut r)?;
            t.weighted_sum(y, &w)
        }),
    });

    let w = readout::<T>(&[3, 5], rng);
    cases.push(Case {
        name: "l2_normalize",
        inputs: vec![uniform(&[3, 5], -1.0, 1.0, rng)],
        objective: Box::new(move |t, v| {
            let y = t.l2_normalize(v[0], 1e-12)?;
            t.weighted_sum(y, &w)
        }),
    });

    // Similar and dissimilar pairs; a wide margin keeps the hinge active.
    let labels = vec![
        PairLabel::Similar,
        PairLabel::Dissimilar,
        PairLabel::Dissimilar,
        PairLabel::Similar,
    ];
    let cfg = LossConfig::new(3.0).expect("valid margin");
    cases.push(Case {
        name: "contrastive_loss",
        inputs: vec![uniform(&[8, 6], -1.0, 1.0, rng)],
        objective: Box::new(move |t, v| t.contrastive_loss(v[0], &labels, &cfg)),
    });

    cases
}

/// Embedding network → pairwise energy → contrastive loss, differentiated
/// with respect to every parameter tensor.
fn network_case<T: Element>(backbone: BackboneMode, rng: &mut SeededRng) -> Result<Case<T>> {
    let config = ModelConfig {
        backbone,
        normalize: true,
        dropout: 0.2,
    };
    let mut params: ModelParameters<T> = ModelParameters::<f64>::init(config, rng.random())?
        .cast::<f32>()
        .cast();
    for layer in &mut params.layers {
        layer.bias = uniform(layer.bias.shape(), -0.1, 0.1, rng);
    }
    let mut batch_shape = vec![4];
    batch_shape.extend(backbone.sample_shape());
    let input = uniform::<T, _>(&batch_shape, 0.0, 1.0, rng);
    let labels = vec![PairLabel::Similar, PairLabel::Dissimilar];
    // Unit vectors are at most 2 apart, so margin 2.5 keeps both terms live.
    let cfg = LossConfig::new(2.5).expect("valid margin");
    let drop_seed: u64 = rng.random();
    let inputs: Vec<Tensor<T>> = params.tensors().cloned().collect();
    let template = params.clone();
    Ok(Case {
        name: match backbone {
            BackboneMode::Builtin { .. } => "network(builtin)",
            BackboneMode::Precomputed { .. } => "network(precomputed)",
        },
        inputs,
        objective: Box::new(move |t, v| {
            let bound = crate::network::BoundParameters {
                vars: v.chunks(2).map(|c| (c[0], c[1])).collect(),
            };
            let x = t.constant(input.clone());
            let mut r = seed::rng_for(drop_seed, "gradcheck/network");
            let emb = template.forward(t, &bound, x, Mode::Train, &mut r)?;
            t.contrastive_loss(emb, &labels, &cfg)
        }),
    })
}

fn cases<T: Element>(rng: &mut SeededRng) -> Result<Vec<Case<T>>> {
    let mut cases = op_cases::<T>(rng);
    cases.push(network_case(
        BackboneMode::Builtin {
            height: 8,
            width: 8,
            channels: 3,
        },
        rng,
    )?);
    cases.push(network_case(
        BackboneMode::Precomputed { feature_dim: 12 },
        rng,
    )?);
    Ok(cases)
}

/// One seed of the suite. In `F32` mode the gradients come from an `f32`
/// tape and are compared with the central differences of the identical
/// instance evaluated in `f64`; the differences are always taken in
/// `f64`, where rounding noise stays far below the tolerance.
fn run_seed(
    precision: Precision,
    s: u64,
    cfg: &GradCheckConfig,
    out: &mut Vec<CheckOutcome>,
) -> Result<()> {
    let instance_seed = seed::derive_seed_indexed(s, "gradcheck", 0);
    let mut coord_rng = seed::rng_for_indexed(s, "gradcheck/coords", precision as u64);
    let reference = cases::<f64>(&mut seed::rng_for(instance_seed, "instance"))?;
    let analytic: Vec<Vec<Vec<f64>>> = match precision {
        Precision::F64 => reference
            .iter()
            .map(|c| analytic_gradients(&c.inputs, &c.objective))
            .collect::<Result<_>>()?,
        Precision::F32 => cases::<f32>(&mut seed::rng_for(instance_seed, "instance"))?
            .iter()
            .map(|c| analytic_gradients(&c.inputs, &c.objective))
            .collect::<Result<_>>()?,
    };
    for (case, grads) in reference.iter().zip(&analytic) {
        let (err, coords) = compare_with_reference(
            grads,
            &case.inputs,
            &case.objective,
            cfg.coords_per_tensor,
            &mut coord_rng,
        )?;
        out.push(CheckOutcome {
            name: case.name.to_string(),
            precision,
            seed: s,
            max_rel_error: err,
            coords_checked: coords,
        });
    }
    Ok(())
}

/// Run every check in both precisions over `cfg.seeds` seeds.
pub fn run_suite(cfg: &GradCheckConfig) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for precision in [Precision::F32, Precision::F64] {
        for s in 0..cfg.seeds {
            run_seed(precision, s, cfg, &mut out)?;
        }
    }
    Ok(out)
}
