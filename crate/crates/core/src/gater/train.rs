//! Offline training of the bandit heads.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use rand::seq::SliceRandom;
use rand::Rng;

use super::{dot, reward, sigmoid, softplus, BanditModel};
use crate::error::{Error, Result};

/// Stabilizer in the variance weight denominator.
pub const VARIANCE_EPSILON: f64 = 1e-8;

/// Counterfactual evaluation of every arm for one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRecord {
    pub prompt: u64,
    pub features: Vec<f64>,
    /// Observed quality per arm.
    pub quality: Vec<f64>,
    /// Normalized efficiency gain per arm (the skip fraction).
    pub efficiency: Vec<f64>,
}

/// How observed quality enters the reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QualityTarget {
    /// Rank among the arms, scaled to `[0, 1]`.
    #[default]
    Rank,
    /// The quality score as observed.
    Raw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub target: QualityTarget,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 10,
            target: QualityTarget::Rank,
        }
    }
}

/// A record with its rewards and variance weight resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedRecord {
    pub prompt: u64,
    pub features: Vec<f64>,
    pub rewards: Vec<f64>,
    /// Population variance of quality across arms.
    pub variance: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Loss before the first update.
    pub initial_loss: f64,
    /// Loss over the whole set after each epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean per-step loss seen during each epoch.
    pub running_losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

/// Ranks scaled by `1 / (n - 1)`: the worst value maps to 0, the best to 1,
/// ties share their average rank. Fewer than two values all map to 0.5.
pub fn rank_normalize(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    if n < 2 {
        return vec![0.5; n];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let average = (i + j) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = average / (n - 1) as f64;
        }
        i = j + 1;
    }
    ranks
}

fn population_variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Resolves rewards and variance weights `w_p = var_p / (mean var + eps)`.
/// When no prompt shows any variance the weights fall back to 1.
pub fn prepare(
    records: &[TrainingRecord],
    model: &BanditModel,
    target: QualityTarget,
) -> Result<Vec<PreparedRecord>> {
    if records.is_empty() {
        return Err(Error::NoTrainingData);
    }
    let arms = model.arms.len();
    for r in records {
        if r.quality.len() != arms || r.efficiency.len() != arms {
            return Err(Error::InvalidConfig("record arm count differs from the model"));
        }
        if r.features.len() != model.dim {
            return Err(Error::DimensionMismatch {
                expected: model.dim,
                actual: r.features.len(),
            });
        }
    }
    let variances: Vec<f64> = records.iter().map(|r| population_variance(&r.quality)).collect();
    let mean = variances.iter().sum::<f64>() / variances.len() as f64;
    let uniform = variances.iter().all(|&v| v == 0.0);
    if uniform {
        log::warn!("quality does not vary across arms for any prompt; using uniform weights");
    }
    Ok(records
        .iter()
        .zip(variances)
        .map(|(r, variance)| {
            let shaped = match target {
                QualityTarget::Rank => rank_normalize(&r.quality),
                QualityTarget::Raw => r.quality.clone(),
            };
            let rewards = r
                .efficiency
                .iter()
                .zip(&shaped)
                .map(|(&e, &q)| reward(e, q, model.alpha))
                .collect();
            PreparedRecord {
                prompt: r.prompt,
                features: r.features.clone(),
                rewards,
                variance,
                weight: if uniform {
                    1.0
                } else {
                    variance / (mean + VARIANCE_EPSILON)
                },
            }
        })
        .collect())
}

/// Gradient of the summed per-arm loss terms, one row per arm.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub value: Vec<Vec<f64>>,
    pub uncertainty: Vec<Vec<f64>>,
}

impl Gradient {
    fn zeros(model: &BanditModel) -> Self {
        let n = model.arms.len();
        Self {
            value: vec![vec![0.0; model.dim]; n],
            uncertainty: vec![vec![0.0; model.dim]; n],
        }
    }

    /// Sum of absolute components.
    pub fn l1(&self) -> f64 {
        self.value
            .iter()
            .chain(&self.uncertainty)
            .flatten()
            .map(|x| x.abs())
            .sum()
    }

    fn scale(&mut self, s: f64) {
        self.value
            .iter_mut()
            .chain(self.uncertainty.iter_mut())
            .flatten()
            .for_each(|x| *x *= s);
    }
}

/// Per-sample loss and the coefficients of its gradient along `phi`.
struct Terms {
    loss: f64,
    value_coef: f64,
    uncertainty_coef: f64,
}

fn terms(model: &BanditModel, arm: usize, phi: &[f64], reward: f64, weight: f64) -> Terms {
    let delta = dot(&model.value[arm], phi) - reward;
    let z = dot(&model.uncertainty[arm], phi);
    let u = softplus(z);
    let gap = u - delta.abs();
    let sign = if delta > 0.0 {
        1.0
    } else if delta < 0.0 {
        -1.0
    } else {
        0.0
    };
    Terms {
        loss: weight * (delta * delta + model.lambda * gap * gap),
        value_coef: weight * (2.0 * delta - 2.0 * model.lambda * gap * sign),
        uncertainty_coef: weight * 2.0 * model.lambda * gap * sigmoid(z),
    }
}

/// Mean loss over every (record, arm) pair.
pub fn loss(model: &BanditModel, records: &[PreparedRecord]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for r in records {
        for arm in 0..model.arms.len() {
            total += terms(model, arm, &r.features, r.rewards[arm], r.weight).loss;
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Gradient contributed by one record (summed over its arms).
pub fn record_gradient(model: &BanditModel, record: &PreparedRecord) -> Gradient {
    let mut g = Gradient::zeros(model);
    for arm in 0..model.arms.len() {
        let t = terms(model, arm, &record.features, record.rewards[arm], record.weight);
        for (j, &x) in record.features.iter().enumerate() {
            g.value[arm][j] += t.value_coef * x;
            g.uncertainty[arm][j] += t.uncertainty_coef * x;
        }
    }
    g
}

/// Analytic gradient of [`loss`].
pub fn batch_gradient(model: &BanditModel, records: &[PreparedRecord]) -> Gradient {
    let mut g = Gradient::zeros(model);
    for r in records {
        let rg = record_gradient(model, r);
        for (dst, src) in g.value.iter_mut().chain(g.uncertainty.iter_mut()).zip(rg.value.iter().chain(&rg.uncertainty)) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    let count = records.len() * model.arms.len();
    if count > 0 {
        g.scale(1.0 / count as f64);
    }
    g
}

/// Stochastic gradient descent over shuffled records, updating every arm of
/// each record (the records carry counterfactual outcomes for all arms).
pub fn train_offline<R: Rng + ?Sized>(
    model: &mut BanditModel,
    records: &[TrainingRecord],
    options: &TrainOptions,
    rng: &mut R,
) -> Result<TrainReport> {
    let prepared = prepare(records, model, options.target)?;
    let initial_loss = loss(model, &prepared);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut epoch_losses = Vec::with_capacity(options.epochs);
    let mut running_losses = Vec::with_capacity(options.epochs);
    let eta = model.learning_rate;
    for _ in 0..options.epochs {
        order.shuffle(rng);
        let mut running = 0.0;
        for &i in &order {
            let r = &prepared[i];
            for arm in 0..model.arms.len() {
                let t = terms(model, arm, &r.features, r.rewards[arm], r.weight);
                running += t.loss;
                for (j, &x) in r.features.iter().enumerate() {
                    model.value[arm][j] -= eta * t.value_coef * x;
                    model.uncertainty[arm][j] -= eta * t.uncertainty_coef * x;
                }
            }
        }
        if model.value.iter().chain(&model.uncertainty).flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("gater parameters"));
        }
        running_losses.push(running / (prepared.len() * model.arms.len()) as f64);
        epoch_losses.push(loss(model, &prepared));
    }
    Ok(TrainReport {
        initial_loss,
        epoch_losses,
        running_losses,
    })
}
