//! Multiclass focal loss and its cross-entropy special cases.

use serde::{Deserialize, Serialize};

use crate::data::{LabelSet, Speaker};
use crate::error::{Error, Result};
use crate::tensor::{focal_value, Var, PROB_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossVariant {
    /// Plain cross-entropy: all weights 1, no modulation.
    Ce,
    /// Class-weighted cross-entropy.
    Wce,
    Focal,
}

/// `FL(p_t) = -α_t (1 - p_t)^γ log p_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FocalConfig {
    pub variant: LossVariant,
    /// One weight per label, in label-set order.
    pub alpha: Vec<f64>,
    pub gamma: f64,
}

/// Balance weights for the client codes `[Fn, Ct, St]`.
pub const CLIENT_ALPHA: [f64; 3] = [0.25, 1.0, 1.0];
/// Balance weights for `[Fa, Res, Rec, Gi, Quc, Quo, Mia, Min]`.
pub const THERAPIST_ALPHA: [f64; 8] = [0.5, 1.0, 1.0, 1.0, 0.75, 0.75, 1.0, 1.0];

pub fn default_alpha(role: Speaker) -> Vec<f64> {
    match role {
        Speaker::Client => CLIENT_ALPHA.to_vec(),
        Speaker::Therapist => THERAPIST_ALPHA.to_vec(),
    }
}

impl FocalConfig {
    pub fn ce(labels: usize) -> Self {
        FocalConfig {
            variant: LossVariant::Ce,
            alpha: vec![1.0; labels],
            gamma: 0.0,
        }
    }

    pub fn wce(alpha: Vec<f64>) -> Self {
        FocalConfig {
            variant: LossVariant::Wce,
            alpha,
            gamma: 0.0,
        }
    }

    pub fn focal(alpha: Vec<f64>, gamma: f64) -> Self {
        FocalConfig {
            variant: LossVariant::Focal,
            alpha,
            gamma,
        }
    }

    /// Focal loss with the default balance weights for `role`.
    pub fn for_role(role: Speaker, gamma: f64) -> Self {
        FocalConfig::focal(default_alpha(role), gamma)
    }

    pub fn validate(&self, labels: &LabelSet) -> Result<()> {
        if self.alpha.len() != labels.len() {
            return Err(Error::config(format!(
                "loss has {} alpha weights for {} labels",
                self.alpha.len(),
                labels.len()
            )));
        }
        if self.alpha.iter().any(|&a| !(a.is_finite() && a > 0.0)) {
            return Err(Error::config("alpha weights must be positive"));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::config(format!(
                "gamma {} must be non-negative",
                self.gamma
            )));
        }
        match self.variant {
            LossVariant::Ce if self.gamma != 0.0 || self.alpha.iter().any(|&a| a != 1.0) => Err(
                Error::config("cross-entropy needs gamma 0 and all alpha weights 1"),
            ),
            LossVariant::Wce if self.gamma != 0.0 => {
                Err(Error::config("weighted cross-entropy needs gamma 0"))
            }
            _ => Ok(()),
        }
    }

    fn alpha_for(&self, gold: usize) -> Result<f64> {
        self.alpha.get(gold).copied().ok_or_else(|| {
            Error::contract(format!(
                "gold index {gold} out of range for {} labels",
                self.alpha.len()
            ))
        })
    }
}

/// Loss of one probability row against its gold index.
pub fn focal_loss(p: &[f64], gold: usize, config: &FocalConfig) -> Result<f64> {
    let alpha = config.alpha_for(gold)?;
    let pt = *p.get(gold).ok_or_else(|| {
        Error::contract(format!(
            "gold index {gold} out of range for {} labels",
            p.len()
        ))
    })?;
    Ok(focal_value(pt, alpha, config.gamma))
}

/// `-log p_gold`, clamped like the focal loss.
pub fn cross_entropy(p: &[f64], gold: usize) -> Result<f64> {
    weighted_cross_entropy(p, gold, &vec![1.0; p.len()])
}

/// `-α_gold log p_gold`.
pub fn weighted_cross_entropy(p: &[f64], gold: usize, alpha: &[f64]) -> Result<f64> {
    match (p.get(gold), alpha.get(gold)) {
        (Some(&pt), Some(&a)) => Ok(-a * pt.max(PROB_FLOOR).ln()),
        _ => Err(Error::contract(format!("gold index {gold} out of range"))),
    }
}

/// Differentiable loss on a `1 × |labels|` probability row.
pub fn focal_loss_var<'t>(probs: Var<'t>, gold: usize, config: &FocalConfig) -> Result<Var<'t>> {
    let alpha = config.alpha_for(gold)?;
    if probs.rows() != 1 || probs.cols() != config.alpha.len() {
        return Err(Error::dim(format!(
            "loss expects a 1 x {} probability row, got {:?}",
            config.alpha.len(),
            probs.shape()
        )));
    }
    probs.pick(gold)?.focal(alpha, config.gamma)
}
