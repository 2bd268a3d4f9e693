//! The training objective: supervised pixel losses for both stages, an
//! adversarial term per stage, a total-variation penalty on the final map,
//! and their weighted combination.
//!
//! Adversarial scores are spatial score *maps*; every loss here averages a
//! map over its spatial extent per sample before mixing samples, so batch
//! composition never changes a single sample's contribution.

use serde::{Deserialize, Serialize};

use crate::networks::DiscMode;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum LossError {
    #[error("loss weights: {0}")]
    BadWeights(String),
    #[error("tv alpha must be positive, got {0}")]
    BadAlpha(f64),
    #[error("tv needs at least one neighboring pixel pair, got a {h}x{w} map")]
    TvDegenerate { h: usize, w: usize },
    #[error("score maps disagree: real {real}, fake {fake}")]
    ScoreShape { real: String, fake: String },
    #[error("loss term `{term}` is not finite ({value})")]
    NonFinite { term: &'static str, value: f64 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Which adversarial formulation drives the discriminator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GanMode {
    /// Critic scores with weight clipping after each discriminator step.
    WganClip,
    /// Plain cross-entropy on sigmoid probabilities.
    Standard,
}

impl GanMode {
    /// The discriminator head readout this mode expects.
    pub fn disc_mode(self) -> DiscMode {
        match self {
            GanMode::WganClip => DiscMode::Critic,
            GanMode::Standard => DiscMode::Probability,
        }
    }
}

/// Mixing weights for the five generator terms, the TV exponent, and the
/// adversarial mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Stage-1 pixel loss.
    pub lambda1: f64,
    /// Stage-1 adversarial generator loss.
    pub lambda2: f64,
    /// Stage-2 pixel loss.
    pub lambda3: f64,
    /// Stage-2 adversarial generator loss.
    pub lambda4: f64,
    /// Total variation on the stage-2 map.
    pub lambda5: f64,
    pub alpha: f64,
    pub gan_mode: GanMode,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.1,
            lambda2: 1.0,
            lambda3: 0.1,
            lambda4: 1.0,
            lambda5: 0.1,
            alpha: 1.0,
            gan_mode: GanMode::WganClip,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        let lambdas = [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
            ("lambda5", self.lambda5),
        ];
        for (name, v) in lambdas {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(LossError::BadWeights(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if !(self.alpha > 0.0) {
            return Err(LossError::BadAlpha(self.alpha));
        }
        Ok(())
    }
}

/// The five generator terms as live graph nodes, ready to be mixed.
pub struct LossTerms {
    pub l1: Tensor,
    pub l2_g: Tensor,
    pub l3: Tensor,
    pub l4_g: Tensor,
    pub tv: Tensor,
}

/// One training step's scalar readouts, as logged to the CSV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l1: f64,
    pub l2_g: f64,
    pub l3: f64,
    pub l4_g: f64,
    pub tv: f64,
    pub total: f64,
    pub d_loss: f64,
}

/// Mean squared residual scaled by 1/2: `sum((s-p)^2) / (2*W*H*C)` per
/// sample, averaged over the batch.
pub fn l2_pixel_loss(pred: &Tensor, truth: &Tensor) -> Result<Tensor, LossError> {
    Ok(pred.sub(truth)?.square().mean_per_sample().mean_all().scale(0.5))
}

/// The generator's side of the adversarial objective; it only needs the
/// fake scores. Spatially averaged per sample first.
pub fn generator_adversarial_loss(d_fake: &Tensor, mode: GanMode) -> Tensor {
    let fake = d_fake.mean_per_sample();
    match mode {
        GanMode::WganClip => fake.mean_all().scale(-1.0),
        GanMode::Standard => fake.bce_mean(1.0),
    }
}

/// Generator and discriminator losses from a pair of score maps. Maps are
/// averaged spatially per sample first. In `WganClip` mode the scores are
/// raw critic values: `d = mean(fake) - mean(real)`, `g = -mean(fake)`.
/// In `Standard` mode the scores are probabilities and both sides use
/// binary cross-entropy (real -> 1, fake -> 0 for D; fake -> 1 for G).
pub fn adversarial_losses(
    d_real: &Tensor,
    d_fake: &Tensor,
    mode: GanMode,
) -> Result<(Tensor, Tensor), LossError> {
    if d_real.shape() != d_fake.shape() {
        return Err(LossError::ScoreShape {
            real: d_real.shape().to_string(),
            fake: d_fake.shape().to_string(),
        });
    }
    let g = generator_adversarial_loss(d_fake, mode);
    let real = d_real.mean_per_sample();
    let fake = d_fake.mean_per_sample();
    let d = match mode {
        GanMode::WganClip => fake.mean_all().sub(&real.mean_all())?,
        GanMode::Standard => real.bce_mean(1.0).add(&fake.bce_mean(0.0))?,
    };
    Ok((g, d))
}

/// Total-variation penalty `sum((dh^2+dv^2)^(1/alpha))`, batch-averaged.
/// Requires at least one horizontal or vertical neighbor pair.
pub fn tv_loss(map: &Tensor, alpha: f64) -> Result<Tensor, LossError> {
    if !(alpha > 0.0) {
        return Err(LossError::BadAlpha(alpha));
    }
    let s = map.shape();
    if s.h < 2 && s.w < 2 {
        return Err(LossError::TvDegenerate { h: s.h, w: s.w });
    }
    Ok(map.total_variation(alpha))
}

/// Weighted sum of the five terms, left to right. Every term must be a
/// finite scalar; the offending term is named otherwise. Gradients flow
/// into whatever graphs produced the terms.
pub fn total_loss(terms: &LossTerms, weights: &LossWeights) -> Result<Tensor, LossError> {
    weights.validate()?;
    let named = [
        ("l1", &terms.l1, weights.lambda1),
        ("l2_g", &terms.l2_g, weights.lambda2),
        ("l3", &terms.l3, weights.lambda3),
        ("l4_g", &terms.l4_g, weights.lambda4),
        ("tv", &terms.tv, weights.lambda5),
    ];
    let mut total: Option<Tensor> = None;
    for (term, tensor, lambda) in named {
        let value = tensor.item();
        if !value.is_finite() {
            return Err(LossError::NonFinite { term, value });
        }
        let weighted = tensor.scale(lambda);
        total = Some(match total {
            None => weighted,
            Some(acc) => acc.add(&weighted)?,
        });
    }
    Ok(total.expect("five terms always present"))
}

impl LossReport {
    /// Assemble the per-step readout from live terms plus the already
    /// computed total and discriminator loss values.
    pub fn new(terms: &LossTerms, total: f64, d_loss: f64) -> Self {
        LossReport {
            l1: terms.l1.item(),
            l2_g: terms.l2_g.item(),
            l3: terms.l3.item(),
            l4_g: terms.l4_g.item(),
            tv: terms.tv.item(),
            total,
            d_loss,
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.l1, self.l2_g, self.l3, self.l4_g, self.tv, self.total, self.d_loss,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}
