//! Skip gater: a contextual bandit choosing what fraction of denoising steps
//! to skip.
//!
//! Each arm has a linear value head `Q(s, a) = theta_a . phi(s)` and a linear
//! uncertainty head `u(s, a) = softplus(psi_a . phi(s))`. Offline training
//! minimizes
//!
//! ```text
//! L = E[w_p * d^2] + lambda * E[w_p * (u - |d|)^2],   d = Q(s, a) - r
//! ```
//!
//! where `r = alpha * skip + (1 - alpha) * quality` and `w_p` weights each
//! prompt by how much its quality varies across arms.

mod features;
mod train;

use alloc::vec;
use alloc::vec::Vec;
#[cfg(not(any(feature = "std", test)))]
#[allow(unused_imports)]
use num_traits::Float;

pub use features::{context_features, FEATURE_DIM, POOLED_DIM};
pub use train::{
    batch_gradient, loss, prepare, rank_normalize, record_gradient, train_offline, Gradient, PreparedRecord,
    QualityTarget, TrainOptions, TrainReport, TrainingRecord, VARIANCE_EPSILON,
};

use crate::error::{Error, Result};

/// Efficiency/quality trade-off in the reward.
pub const ALPHA: f64 = 0.47;
/// Weight of the uncertainty-head term in the training loss.
pub const LAMBDA: f64 = 0.1;

/// Skip fractions, ascending, starting at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmSet {
    fractions: Vec<f64>,
}

impl Default for ArmSet {
    /// `{0.00, 0.05, ..., 0.65}`: fourteen arms.
    fn default() -> Self {
        Self {
            fractions: (0..14).map(|k| f64::from(k) / 20.0).collect(),
        }
    }
}

impl ArmSet {
    pub fn new(fractions: Vec<f64>) -> Result<Self> {
        if fractions.is_empty() {
            return Err(Error::InvalidConfig("arm set is empty"));
        }
        if fractions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("arm fractions must be strictly ascending"));
        }
        if fractions[0] < 0.0 || fractions[fractions.len() - 1] >= 1.0 {
            return Err(Error::InvalidConfig("arm fractions must lie in [0, 1)"));
        }
        Ok(Self { fractions })
    }

    pub fn len(&self) -> usize {
        self.fractions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fractions.is_empty()
    }

    pub fn fraction(&self, arm: usize) -> f64 {
        self.fractions[arm]
    }

    pub fn fractions(&self) -> &[f64] {
        &self.fractions
    }

    /// Arm whose fraction equals `skip` (within 1e-9).
    pub fn arm_of(&self, skip: f64) -> Option<usize> {
        self.fractions.iter().position(|f| (f - skip).abs() < 1e-9)
    }

    /// Largest arm whose fraction does not exceed `skip`.
    pub fn floor_arm(&self, skip: f64) -> usize {
        self.fractions
            .iter()
            .rposition(|&f| f <= skip + 1e-12)
            .unwrap_or(0)
    }
}

/// Steps skipped for a fraction of `T`: `round(skip * T)`, kept below `T`.
pub fn steps_skipped(skip: f64, total_steps: u32) -> u32 {
    let s = (skip * f64::from(total_steps)).round() as u32;
    s.min(total_steps.saturating_sub(1))
}

/// `alpha * skip + (1 - alpha) * quality`.
pub fn reward(skip_fraction: f64, quality: f64, alpha: f64) -> f64 {
    alpha * skip_fraction + (1.0 - alpha) * quality
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Greedy on the value head.
    Exploit,
    /// Optimistic: value plus `beta` times predicted uncertainty.
    Explore,
}

pub(crate) fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BanditModel {
    pub arms: ArmSet,
    /// Feature dimension.
    pub dim: usize,
    /// Row `a` holds `theta_a`.
    pub value: Vec<Vec<f64>>,
    /// Row `a` holds `psi_a`.
    pub uncertainty: Vec<Vec<f64>>,
    /// Optimism coefficient for [`Mode::Explore`].
    pub beta: f64,
    pub learning_rate: f64,
    pub lambda: f64,
    pub alpha: f64,
}

impl BanditModel {
    /// All-zero heads over [`FEATURE_DIM`] features.
    pub fn new(arms: ArmSet) -> Self {
        Self::with_dim(arms, FEATURE_DIM)
    }

    pub fn with_dim(arms: ArmSet, dim: usize) -> Self {
        let n = arms.len();
        Self {
            arms,
            dim,
            value: vec![vec![0.0; dim]; n],
            uncertainty: vec![vec![0.0; dim]; n],
            beta: 1.0,
            learning_rate: 0.01,
            lambda: LAMBDA,
            alpha: ALPHA,
        }
    }

    pub fn predict_value(&self, arm: usize, phi: &[f64]) -> f64 {
        dot(&self.value[arm], phi)
    }

    pub fn predict_uncertainty(&self, arm: usize, phi: &[f64]) -> f64 {
        softplus(dot(&self.uncertainty[arm], phi))
    }

    /// Picks an arm for feature vector `phi`. Ties go to the larger skip.
    /// Non-finite or mis-sized features fall back to arm 0 (no skip).
    pub fn choose_arm(&self, phi: &[f64], mode: Mode) -> usize {
        if phi.len() != self.dim || phi.iter().any(|x| !x.is_finite()) {
            log::warn!("unusable gater features; falling back to no skip");
            return 0;
        }
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for arm in 0..self.arms.len() {
            let mut score = self.predict_value(arm, phi);
            if mode == Mode::Explore {
                score += self.beta * self.predict_uncertainty(arm, phi);
            }
            if score >= best_score {
                best = arm;
                best_score = score;
            }
        }
        if !best_score.is_finite() {
            log::warn!("non-finite gater score; falling back to no skip");
            return 0;
        }
        best
    }
}
