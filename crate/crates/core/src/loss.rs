//! Margin-based contrastive loss over pairs of embeddings.
//!
//! Label convention: `Y = 0` marks a similar pair (same class), `Y = 1` a
//! dissimilar one. With distance `d` and margin `m`,
//!
//! ```text
//! L = (1 - Y) · ½ d²  +  Y · ½ max(0, m - d)²
//! ```
//!
//! A batch loss is the arithmetic mean over its pairs.

use crate::error::{Error, Result};
use crate::tensor::Element;

/// Pair label: 0 = same species, 1 = different species.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PairLabel {
    Similar = 0,
    Dissimilar = 1,
}

impl PairLabel {
    pub fn from_u8(y: u8) -> Result<Self> {
        match y {
            0 => Ok(Self::Similar),
            1 => Ok(Self::Dissimilar),
            other => Err(Error::InvalidArgument(format!(
                "pair label must be 0 or 1, got {other}"
            ))),
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub margin: f64,
    /// Floor for `d` in the hinge derivative, which is undefined at `d = 0`.
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            epsilon: 1e-12,
        }
    }
}

impl LossConfig {
    pub fn new(margin: f64) -> Result<Self> {
        let cfg = Self {
            margin,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!(
                "margin must be positive, got {}",
                self.margin
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Euclidean distance between two equally sized vectors.
pub fn euclidean<T: Element>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "distance between vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<T>()
        .sqrt())
}

/// Per-pair contrastive loss for distance `d`.
pub fn contrastive_loss(d: f64, y: PairLabel, cfg: &LossConfig) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "distance must be non-negative, got {d}"
        )));
    }
    Ok(match y {
        PairLabel::Similar => 0.5 * d * d,
        PairLabel::Dissimilar => {
            let hinge = (cfg.margin - d).max(0.0);
            0.5 * hinge * hinge
        }
    })
}

/// Contrastive loss of two embeddings, computed through their distance.
pub fn pair_loss<T: Element>(e1: &[T], e2: &[T], y: PairLabel, cfg: &LossConfig) -> Result<T> {
    let d = euclidean(e1, e2)?;
    Ok(T::of_f64(contrastive_loss(d.as_f64(), y, cfg)?))
}

/// Analytic gradient of [`pair_loss`] with respect to both embeddings.
pub fn contrastive_loss_grad<T: Element>(
    e1: &[T],
    e2: &[T],
    y: PairLabel,
    cfg: &LossConfig,
) -> Result<(Vec<T>, Vec<T>)> {
    let d = euclidean(e1, e2)?;
    let coeff = pair_grad_coeff(d, y, cfg);
    let g1: Vec<T> = e1.iter().zip(e2).map(|(&a, &b)| coeff * (a - b)).collect();
    let g2 = g1.iter().map(|&g| -g).collect();
    Ok((g1, g2))
}

/// `dL/de1 = coeff · (e1 − e2)`; `dL/de2` is its negation.
pub(crate) fn pair_grad_coeff<T: Element>(d: T, y: PairLabel, cfg: &LossConfig) -> T {
    let m = T::of_f64(cfg.margin);
    match y {
        PairLabel::Similar => T::one(),
        PairLabel::Dissimilar if d >= m => T::zero(),
        PairLabel::Dissimilar => {
            if d.as_f64() < cfg.epsilon {
                // Direction undefined for coincident embeddings.
                T::zero()
            } else {
                -(m - d) / d
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cfg() -> LossConfig {
        LossConfig::default()
    }

    #[test]
    fn worked_values() {
        let c = cfg();
        assert_eq!(contrastive_loss(0.0, PairLabel::Similar, &c).unwrap(), 0.0);
        assert_eq!(
            contrastive_loss(1.0, PairLabel::Dissimilar, &c).unwrap(),
            0.0
        );
        assert_eq!(
            contrastive_loss(3.5, PairLabel::Dissimilar, &c).unwrap(),
            0.0
        );
        assert_relative_eq!(
            contrastive_loss(0.4, PairLabel::Dissimilar, &c).unwrap(),
            0.18,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            contrastive_loss(0.5, PairLabel::Similar, &c).unwrap(),
            0.125,
            epsilon = 1e-12
        );
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(contrastive_loss(-0.1, PairLabel::Similar, &cfg()).is_err());
        assert!(contrastive_loss(f64::NAN, PairLabel::Similar, &cfg()).is_err());
        assert!(PairLabel::from_u8(2).is_err());
        assert!(LossConfig::new(0.0).is_err());
        assert!(LossConfig::new(-1.0).is_err());
        assert!(euclidean(&[1.0f64], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn coincident_dissimilar_pair_has_zero_gradient() {
        let e = vec![0.3f64; 128];
        let (g1, g2) = contrastive_loss_grad(&e, &e, PairLabel::Dissimilar, &cfg()).unwrap();
        assert!(g1.iter().chain(&g2).all(|&g| g == 0.0));
    }

    #[test]
    fn similar_gradient_is_difference() {
        let mut e1 = vec![0.0f64; 128];
        e1[0] = 1.0;
        let e2 = vec![0.0f64; 128];
        let (g1, g2) = contrastive_loss_grad(&e1, &e2, PairLabel::Similar, &cfg()).unwrap();
        assert_eq!(g1, e1);
        assert_eq!(g2[0], -1.0);
    }

    proptest! {
        #[test]
        fn swapping_embeddings_swaps_gradients(
            e1 in prop::collection::vec(-1.0f64..1.0, 8),
            e2 in prop::collection::vec(-1.0f64..1.0, 8),
            y in 0u8..2,
        ) {
            let y = PairLabel::from_u8(y).unwrap();
            let c = cfg();
            let l12 = pair_loss(&e1, &e2, y, &c).unwrap();
            let l21 = pair_loss(&e2, &e1, y, &c).unwrap();
            prop_assert!((l12 - l21).abs() < 1e-12);
            let (a1, a2) = contrastive_loss_grad(&e1, &e2, y, &c).unwrap();
            let (b1, b2) = contrastive_loss_grad(&e2, &e1, y, &c).unwrap();
            for i in 0..8 {
                prop_assert!((a1[i] - b2[i]).abs() < 1e-12);
                prop_assert!((a2[i] - b1[i]).abs() < 1e-12);
                prop_assert!((a1[i] + a2[i]).abs() < 1e-12);
            }
        }
    }
}
