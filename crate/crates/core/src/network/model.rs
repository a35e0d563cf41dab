use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::seed;
use crate::tensor::{Element, Mode, Tape, Tensor, Var};

/// Output filters of the three convolution blocks.
pub const CONV_FILTERS: [usize; 3] = [16, 32, 64];
pub const KERNEL_SIZE: usize = 3;
pub const EMBEDDING_DIM: usize = 128;
/// Norm floor used when L2-normalizing embeddings.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackboneMode {
    /// Raw `height×width×channels` images through the three-block conv stack.
    Builtin {
        height: usize,
        width: usize,
        channels: usize,
    },
    /// Externally extracted feature vectors feeding the dense head directly.
    Precomputed { feature_dim: usize },
}

impl BackboneMode {
    pub fn builtin(size: usize) -> Self {
        Self::Builtin {
            height: size,
            width: size,
            channels: 3,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Builtin { .. } => "builtin",
            Self::Precomputed { .. } => "precomputed",
        }
    }

    /// Width of the vector entering the dense head.
    pub fn head_input_dim(&self) -> usize {
        match *self {
            Self::Builtin { height, width, .. } => {
                let (mut h, mut w) = (height, width);
                for _ in CONV_FILTERS {
                    h = h.div_ceil(2);
                    w = w.div_ceil(2);
                }
                h * w * CONV_FILTERS[2]
            }
            Self::Precomputed { feature_dim } => feature_dim,
        }
    }

    /// Per-sample input shape, without the batch axis.
    pub fn sample_shape(&self) -> Vec<usize> {
        match *self {
            Self::Builtin {
                height,
                width,
                channels,
            } => vec![height, width, channels],
            Self::Precomputed { feature_dim } => vec![feature_dim],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerRole {
    Conv1,
    Conv2,
    Conv3,
    Head,
}

impl LayerRole {
    pub fn name(self) -> &'static str {
        match self {
            Self::Conv1 => "conv1",
            Self::Conv2 => "conv2",
            Self::Conv3 => "conv3",
            Self::Head => "head",
        }
    }
}

impl fmt::Display for LayerRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LayerRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv1" => Ok(Self::Conv1),
            "conv2" => Ok(Self::Conv2),
            "conv3" => Ok(Self::Conv3),
            "head" => Ok(Self::Head),
            other => Err(Error::Format(format!("unknown layer role `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T: Element = f32> {
    pub role: LayerRole,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub backbone: BackboneMode,
    pub normalize: bool,
    /// Probability of zeroing a feature before the head.
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneMode::builtin(64),
            normalize: true,
            dropout: 0.2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        match self.backbone {
            BackboneMode::Builtin {
                height,
                width,
                channels,
            } if height == 0 || width == 0 || channels == 0 => Err(Error::Config(
                "builtin backbone needs positive input dimensions".into(),
            )),
            BackboneMode::Precomputed { feature_dim: 0 } => {
                Err(Error::Config("feature dimension must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn layer_shapes(&self) -> Vec<(LayerRole, Vec<usize>, Vec<usize>)> {
        let mut shapes = Vec::new();
        if let BackboneMode::Builtin { channels, .. } = self.backbone {
            let roles = [LayerRole::Conv1, LayerRole::Conv2, LayerRole::Conv3];
            let mut cin = channels;
            for (role, cout) in roles.into_iter().zip(CONV_FILTERS) {
                shapes.push((role, vec![KERNEL_SIZE, KERNEL_SIZE, cin, cout], vec![cout]));
                cin = cout;
            }
        }
        shapes.push((
            LayerRole::Head,
            vec![self.backbone.head_input_dim(), EMBEDDING_DIM],
            vec![EMBEDDING_DIM],
        ));
        shapes
    }
}

/// All trainable weights of the embedding network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters<T: Element = f32> {
    pub config: ModelConfig,
    pub layers: Vec<Layer<T>>,
}

/// Tape handles for one bound copy of the parameters.
#[derive(Debug, Clone)]
pub struct BoundParameters {
    pub vars: Vec<(Var, Var)>,
}

impl BoundParameters {
    pub fn all(&self) -> impl Iterator<Item = Var> + '_ {
        self.vars.iter().flat_map(|&(w, b)| [w, b])
    }
}

impl<T: Element> ModelParameters<T> {
    /// Fan-in scaled uniform (He) initialization, zero biases.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        use rand::distr::{Distribution, Uniform};
        config.validate()?;
        let mut rng = seed::rng_for(seed, "init");
        let layers = config
            .layer_shapes()
            .into_iter()
            .map(|(role, wshape, bshape)| {
                let fan_in: usize = wshape[..wshape.len() - 1].iter().product();
                let limit = (6.0 / fan_in as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
                let weight = Tensor::from_fn(wshape, |_| T::of_f64(dist.sample(&mut rng)));
                Layer {
                    role,
                    weight,
                    bias: Tensor::zeros(bshape),
                }
            })
            .collect();
        Ok(Self { config, layers })
    }

    /// Checks every layer against the shapes implied by the config.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let expected = self.config.layer_shapes();
        if expected.len() != self.layers.len() {
            return Err(shape_err!(
                "expected {} layers for {} backbone, found {}",
                expected.len(),
                self.config.backbone.name(),
                self.layers.len()
            ));
        }
        for ((role, w, b), layer) in expected.iter().zip(&self.layers) {
            if layer.role != *role || layer.weight.shape() != w || layer.bias.shape() != b {
                return Err(shape_err!(
                    "layer {} has weight {:?} / bias {:?}, expected {role} with {w:?} / {b:?}",
                    layer.role,
                    layer.weight.shape(),
                    layer.bias.shape()
                ));
            }
        }
        Ok(())
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    pub fn cast<U: Element>(&self) -> ModelParameters<U> {
        ModelParameters {
            config: self.config,
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    role: l.role,
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                })
                .collect(),
        }
    }

    /// Register the parameters on `tape`, trainable or constant.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundParameters {
        let mut put = |t: &Tensor<T>| {
            if trainable {
                tape.variable(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        BoundParameters {
            vars: self
                .layers
                .iter()
                .map(|l| (put(&l.weight), put(&l.bias)))
                .collect(),
        }
    }

    /// Record the embedding network on `tape`. Builtin: per block
    /// conv3×3(same) → bias → ReLU → maxpool2; then flatten → dropout →
    /// dense(128) → optional L2 normalization.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundParameters,
        input: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        self.check_input(tape.shape(input))?;
        let mut x = input;
        let (head_w, head_b) = *bound.vars.last().expect("head layer");
        if let BackboneMode::Builtin { .. } = self.config.backbone {
            for &(w, b) in &bound.vars[..3] {
                x = tape.conv2d(x, w)?;
                x = tape.add_channel_bias(x, b)?;
                x = tape.relu(x);
                x = tape.maxpool2d(x)?;
            }
            x = tape.flatten(x)?;
        }
        x = tape.dropout(x, 1.0 - self.config.dropout, mode, rng)?;
        x = tape.dense(x, head_w, head_b)?;
        if self.config.normalize {
            x = tape.l2_normalize(x, NORM_EPS)?;
        }
        Ok(x)
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let want = self.config.backbone.sample_shape();
        if shape.len() != want.len() + 1 || shape[1..] != want[..] {
            return Err(shape_err!(
                "{} backbone expects input [N, {}], got {shape:?}",
                self.config.backbone.name(),
                want.iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join(", ")
            ));
        }
        Ok(())
    }

    /// Embeddings for a batch (`[N, ...sample_shape]`), one row per sample.
    pub fn embed_batch<R: Rng + ?Sized>(
        &self,
        input: &Tensor<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let x = tape.constant(input.clone());
        let out = self.forward(&mut tape, &bound, x, mode, rng)?;
        Ok(tape.take(out))
    }
}

impl ModelParameters<f32> {
    /// Deterministic inference-mode embeddings for a batch of inputs.
    pub fn embed(&self, input: &Tensor<f32>) -> Result<Vec<EmbeddingVector>> {
        // Dropout is the identity in infer mode, so the rng is never consulted.
        let mut rng = seed::rng_for(0, "infer");
        let out = self.embed_batch(input, Mode::Infer, &mut rng)?;
        (0..out.shape()[0])
            .map(|i| EmbeddingVector::new(out.row(i).to_vec(), self.config.normalize))
            .collect()
    }
}

/// A 128-dimensional embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f32>,
    normalized: bool,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>, normalized: bool) -> Result<Self> {
        if values.len() != EMBEDDING_DIM {
            return Err(shape_err!(
                "embedding must have {EMBEDDING_DIM} values, got {}",
                values.len()
            ));
        }
        if normalized {
            let norm = values
                .iter()
                .map(|&v| f64::from(v).powi(2))
                .sum::<f64>()
                .sqrt();
            // An all-zero head output stays zero under the epsilon-guarded normalization.
            if norm != 0.0 && (norm - 1.0).abs() > 1e-5 {
                return Err(Error::InvalidArgument(format!(
                    "normalized embedding has norm {norm}"
                )));
            }
        }
        Ok(Self { values, normalized })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }
}

/// Euclidean energy between two embeddings.
pub fn energy(e1: &EmbeddingVector, e2: &EmbeddingVector) -> Result<f64> {
    energy_slices(e1.values(), e2.values())
}

/// Euclidean distance accumulated in `f64`.
pub fn energy_slices(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(shape_err!(
            "energy between vectors of length {} and {}",
            a.len(),
            b.len()
        ));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Maps a distance onto the score compared against decision thresholds.
/// Unit-norm embeddings are at most 2 apart, so the score is `d/2 ∈ [0,1]`.
pub fn similarity_score(d: f64, normalized: bool) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "distance must be non-negative, got {d}"
        )));
    }
    Ok(if normalized { d / 2.0 } else { d })
}
