//! Focal loss, its false-positive variants, and the batch-conditional rule that
//! swaps in a false-positive term for tumor classes absent from a batch.
//!
//! Every loss is reduced per class channel as a voxel mean, and the channel
//! means are summed. Tensors are `[..., K]` with the class channel last;
//! channel 0 is background.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ensure_same_dims, Tensor};

const PRED_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    Focal,
    /// Focal loss, with `C`-weighted false-positive focal loss on absent tumor classes.
    HybridFocal,
    /// Focal loss, with mean false-positive loss on absent tumor classes.
    MeanFpFocal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub gamma: f64,
    /// Weight of the positive (`y = 1`) term.
    pub alpha_fg: f64,
    /// Weight of the negative (`y = 0`) term.
    pub alpha_bg: f64,
    pub c_weight: f64,
    pub variant: LossVariant,
    /// Log arguments are clamped to `[epsilon, 1 - epsilon]`.
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            alpha_fg: 0.8,
            alpha_bg: 0.2,
            c_weight: 10.0,
            variant: LossVariant::HybridFocal,
            epsilon: 1e-7,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::Config(format!(
                "gamma must be >= 0, got {}",
                self.gamma
            )));
        }
        if !unit(self.alpha_fg) || !unit(self.alpha_bg) {
            return Err(Error::Config(format!(
                "alpha weights must lie in [0, 1], got fg={} bg={}",
                self.alpha_fg, self.alpha_bg
            )));
        }
        if !(self.c_weight.is_finite() && self.c_weight >= 0.0) {
            return Err(Error::Config(format!(
                "C must be >= 0, got {}",
                self.c_weight
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1e-3) {
            return Err(Error::Config(format!(
                "epsilon must lie in (0, 1e-3), got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub per_class: Vec<f64>,
    /// Channels whose contribution was a false-positive term.
    pub fp_term_applied: Vec<usize>,
}

/// Which loss [`loss_gradient`] differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Focal,
    FalsePositiveFocal,
    MeanFalsePositive,
    BatchConditional,
}

#[derive(Debug, Clone, Copy)]
enum ChannelTerm {
    Focal { pos: f64, neg: f64, scale: f64 },
    MeanFp { scale: f64 },
}

struct Plan {
    terms: Vec<ChannelTerm>,
    fp_channels: Vec<usize>,
}

fn validate_inputs(target: &Tensor, pred: &Tensor) -> Result<usize> {
    ensure_same_dims(target, pred)?;
    if let Some(v) = target.values().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::Domain(format!("target must be binary, found {v}")));
    }
    if let Some(v) = pred
        .values()
        .iter()
        .find(|&&p| !(-PRED_TOLERANCE..=1.0 + PRED_TOLERANCE).contains(&p))
    {
        return Err(Error::Domain(format!("prediction {v} is outside [0, 1]")));
    }
    Ok(pred.last_dim())
}

/// Tumor channels with no positive voxel in the target.
pub fn absent_classes(target: &Tensor) -> Vec<usize> {
    let k = target.last_dim();
    let mut present = vec![false; k];
    for voxel in target.values().chunks_exact(k) {
        for (c, &y) in voxel.iter().enumerate() {
            if y > 0.5 {
                present[c] = true;
            }
        }
    }
    (1..k).filter(|&c| !present[c]).collect()
}

fn plan(kind: LossKind, target: &Tensor, k: usize, cfg: &LossConfig) -> Plan {
    let focal = ChannelTerm::Focal {
        pos: cfg.alpha_fg,
        neg: cfg.alpha_bg,
        scale: 1.0,
    };
    let fp = |scale| ChannelTerm::Focal {
        pos: 0.0,
        neg: 1.0,
        scale,
    };
    match kind {
        LossKind::Focal => Plan {
            terms: vec![focal; k],
            fp_channels: vec![],
        },
        LossKind::FalsePositiveFocal => Plan {
            terms: vec![fp(1.0); k],
            fp_channels: vec![],
        },
        LossKind::MeanFalsePositive => Plan {
            terms: vec![ChannelTerm::MeanFp { scale: 1.0 }; k],
            fp_channels: vec![],
        },
        LossKind::BatchConditional => {
            let mut terms = vec![focal; k];
            let absent = match cfg.variant {
                LossVariant::Focal => vec![],
                _ => absent_classes(target),
            };
            for &c in &absent {
                terms[c] = match cfg.variant {
                    LossVariant::HybridFocal => fp(cfg.c_weight),
                    LossVariant::MeanFpFocal => ChannelTerm::MeanFp { scale: 1.0 },
                    LossVariant::Focal => unreachable!(),
                };
            }
            Plan {
                terms,
                fp_channels: absent,
            }
        }
    }
}

fn evaluate(kind: LossKind, target: &Tensor, pred: &Tensor, cfg: &LossConfig) -> Result<LossValue> {
    let k = validate_inputs(target, pred)?;
    let plan = plan(kind, target, k, cfg);
    let voxels = (pred.len() / k) as f64;
    let (eps, gamma) = (cfg.epsilon, cfg.gamma);
    let mut sums = vec![0.0; k];
    for (y_vox, p_vox) in target
        .values()
        .chunks_exact(k)
        .zip(pred.values().chunks_exact(k))
    {
        for c in 0..k {
            let (y, raw) = (y_vox[c], p_vox[c]);
            sums[c] += match plan.terms[c] {
                ChannelTerm::Focal { pos, neg, .. } => {
                    let p = raw.clamp(eps, 1.0 - eps);
                    -pos * y * (1.0 - p).powf(gamma) * p.ln()
                        - neg * (1.0 - y) * p.powf(gamma) * (1.0 - p).ln()
                }
                ChannelTerm::MeanFp { .. } => (1.0 - y) * raw.clamp(0.0, 1.0),
            };
        }
    }
    let per_class: Vec<f64> = sums
        .iter()
        .zip(&plan.terms)
        .map(|(s, term)| {
            let scale = match *term {
                ChannelTerm::Focal { scale, .. } | ChannelTerm::MeanFp { scale } => scale,
            };
            scale * s / voxels
        })
        .collect();
    let total = per_class.iter().sum::<f64>();
    if !total.is_finite() {
        return Err(Error::Numeric("loss is not finite".into()));
    }
    Ok(LossValue {
        total,
        per_class,
        fp_term_applied: plan.fp_channels,
    })
}

/// `-a·y·(1-p)^γ·ln p - b·(1-y)·p^γ·ln(1-p)`, with `a = alpha_fg`, `b = alpha_bg`.
pub fn focal_loss(target: &Tensor, pred: &Tensor, cfg: &LossConfig) -> Result<LossValue> {
    evaluate(LossKind::Focal, target, pred, cfg)
}

/// The negative term of focal loss alone: `-(1-y)·p^γ·ln(1-p)`.
pub fn false_positive_focal_loss(
    target: &Tensor,
    pred: &Tensor,
    cfg: &LossConfig,
) -> Result<LossValue> {
    evaluate(LossKind::FalsePositiveFocal, target, pred, cfg)
}

/// `(1/n)·Σ (1-y)·p` per class channel.
pub fn mean_false_positive_loss(target: &Tensor, pred: &Tensor) -> Result<LossValue> {
    evaluate(
        LossKind::MeanFalsePositive,
        target,
        pred,
        &LossConfig::default(),
    )
}

/// Focal loss on present classes; tumor classes with no positive voxel in this
/// batch contribute their false-positive term instead, selected by `cfg.variant`.
/// With [`LossVariant::Focal`] this is plain focal loss.
pub fn batch_conditional_loss(
    target: &Tensor,
    pred: &Tensor,
    cfg: &LossConfig,
) -> Result<LossValue> {
    evaluate(LossKind::BatchConditional, target, pred, cfg)
}

/// Gradient of the chosen loss's total with respect to each prediction entry.
/// Entries at or beyond the clamp boundary get zero gradient for the log terms.
pub fn loss_gradient(
    target: &Tensor,
    pred: &Tensor,
    cfg: &LossConfig,
    kind: LossKind,
) -> Result<Tensor> {
    let k = validate_inputs(target, pred)?;
    let plan = plan(kind, target, k, cfg);
    let inv_voxels = 1.0 / (pred.len() / k) as f64;
    let (eps, gamma) = (cfg.epsilon, cfg.gamma);
    let mut grad = vec![0.0; pred.len()];
    for (i, g) in grad.iter_mut().enumerate() {
        let c = i % k;
        let (y, p) = (target.values()[i], pred.values()[i]);
        *g = match plan.terms[c] {
            ChannelTerm::Focal { pos, neg, scale } => {
                if p <= eps || p >= 1.0 - eps {
                    0.0
                } else {
                    let q = 1.0 - p;
                    let d_pos = if gamma == 0.0 {
                        -1.0 / p
                    } else {
                        gamma * q.powf(gamma - 1.0) * p.ln() - q.powf(gamma) / p
                    };
                    let d_neg = if gamma == 0.0 {
                        1.0 / q
                    } else {
                        -gamma * p.powf(gamma - 1.0) * q.ln() + p.powf(gamma) / q
                    };
                    scale * inv_voxels * (pos * y * d_pos + neg * (1.0 - y) * d_neg)
                }
            }
            ChannelTerm::MeanFp { scale } => scale * inv_voxels * (1.0 - y),
        };
    }
    Tensor::new(pred.dims().to_vec(), grad)
}
