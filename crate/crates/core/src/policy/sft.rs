//! Supervised cold-start objective and plain gradient descent.

use super::{accumulate_choice, check_space, decisions, PolicyError, PolicyParams};
use crate::env::Problem;
use crate::trajectory::Trajectory;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy)]
pub struct SftExample<'a> {
    pub problem: &'a Problem,
    pub trajectory: &'a Trajectory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Sum of decision weights entering the loss.
    pub weight: f64,
    pub decisions: usize,
}

/// Negative log-likelihood of the dataset.
///
/// Decisions inside verify/rectify steps are weighted by `mask_weight`,
/// solve decisions by 1; `mask_weight = 1` gives the plain summed
/// cross-entropy.
pub fn sft_loss(
    params: &PolicyParams,
    dataset: &[SftExample<'_>],
    mask_weight: f64,
    k_max: usize,
) -> Result<Objective, PolicyError> {
    if dataset.is_empty() {
        return Err(PolicyError::EmptyDataset);
    }
    if !(mask_weight >= 0.0 && mask_weight.is_finite()) {
        return Err(PolicyError::BadMaskWeight(mask_weight));
    }
    let mut grad = vec![0.0; params.dim()];
    let mut loss = 0.0;
    let mut weight = 0.0;
    let mut count = 0;
    for ex in dataset {
        check_space(params, ex.problem)?;
        for c in decisions(ex.problem, ex.trajectory, k_max)? {
            let w = if c.masked { mask_weight } else { 1.0 };
            // d(-w log p)/dθ = -w (φ - E φ)
            let lp = accumulate_choice(params, &c, -w, &mut grad);
            loss -= w * lp;
            weight += w;
            count += 1;
        }
    }
    Ok(Objective {
        loss,
        grad,
        weight,
        decisions: count,
    })
}

/// `params − lr · grad`.
pub fn gd_step(params: &PolicyParams, grad: &[f64], lr: f64) -> Result<PolicyParams, PolicyError> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(PolicyError::BadLearningRate(lr));
    }
    if grad.len() != params.dim() || grad.iter().any(|g| !g.is_finite()) {
        return Err(PolicyError::NonFinite);
    }
    let weights = params
        .weights()
        .iter()
        .zip(grad)
        .map(|(w, g)| w - lr * g)
        .collect();
    PolicyParams::from_weights(params.layout(), weights)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SftConfig {
    pub lr: f64,
    pub steps: usize,
    pub mask_weight: f64,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            steps: 50,
            mask_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftTrace {
    /// Weighted loss per decision before each step, plus the final value.
    pub loss_per_decision: Vec<f64>,
}

/// Full-batch gradient descent on the per-decision mean of `sft_loss`.
pub fn train_sft(
    init: &PolicyParams,
    dataset: &[SftExample<'_>],
    config: &SftConfig,
    k_max: usize,
) -> Result<(PolicyParams, SftTrace), PolicyError> {
    let mut params = init.clone();
    let mut trace = Vec::with_capacity(config.steps + 1);
    for _ in 0..config.steps {
        let obj = sft_loss(&params, dataset, config.mask_weight, k_max)?;
        if obj.weight <= 0.0 {
            return Err(PolicyError::EmptyDataset);
        }
        trace.push(obj.loss / obj.weight);
        let grad: Vec<f64> = obj.grad.iter().map(|g| g / obj.weight).collect();
        params = gd_step(&params, &grad, config.lr)?;
    }
    let last = sft_loss(&params, dataset, config.mask_weight, k_max)?;
    trace.push(if last.weight > 0.0 { last.loss / last.weight } else { 0.0 });
    Ok((params, SftTrace { loss_per_decision: trace }))
}
