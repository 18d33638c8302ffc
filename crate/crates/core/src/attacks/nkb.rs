//! Blind CMP: no knowledge of benign uploads or of the aggregation rule.
//! The only feedback is whether the last broadcast global model landed
//! within `ξ` of the previous crafted model.

use serde::{Deserialize, Serialize};

use crate::aggregation::ClientUpdate;
use crate::datakit::{flip_labels, LabelMap};
use crate::error::{Error, Result};
use crate::models::{loss_gradient, Dataset, ModelSpec};
use crate::numkit::{euclidean_distance, project_box_in_place, ParamVector, SimRng};

use super::{collude, AttackContext, KnowledgeLevel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NkbConfig {
    pub eta0: f64,
    /// Step growth factor, greater than 1.
    pub growth: f64,
    /// Acceptance radius `ξ`.
    pub xi: f64,
    pub eta_min: f64,
    pub eta_max: f64,
    pub sigma: f64,
    pub eps: f64,
}

impl Default for NkbConfig {
    fn default() -> Self {
        NkbConfig {
            eta0: 1.0,
            growth: 1.5,
            xi: 0.5,
            eta_min: 1e-6,
            eta_max: 1e2,
            sigma: 1.0,
            eps: 1e-3,
        }
    }
}

impl NkbConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eta0", self.eta0),
            ("xi", self.xi),
            ("eta_min", self.eta_min),
            ("eta_max", self.eta_max),
            ("sigma", self.sigma),
            ("eps", self.eps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::AttackConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.growth > 1.0 && self.growth.is_finite()) {
            return Err(Error::AttackConfig(format!("growth must exceed 1, got {}", self.growth)));
        }
        if self.eta_min > self.eta_max {
            return Err(Error::AttackConfig("eta_min exceeds eta_max".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NkbState {
    pub config: NkbConfig,
    pub eta: f64,
    /// `θ̂₁` from the previous round, if any.
    pub prev_crafted: Option<ParamVector>,
}

impl NkbState {
    pub fn new(config: NkbConfig) -> Result<Self> {
        config.validate()?;
        Ok(NkbState {
            eta: config.eta0.clamp(config.eta_min, config.eta_max),
            config,
            prev_crafted: None,
        })
    }

    /// Whether the last crafted model survived aggregation. A first round
    /// counts as rejected.
    pub fn accepted(&self, global: &ParamVector) -> Result<bool> {
        match &self.prev_crafted {
            Some(prev) => Ok(euclidean_distance(prev, global)? <= self.config.xi),
            None => Ok(false),
        }
    }
}

/// One round of blind CMP: adapt `η` from the feedback, then step the
/// global model down the gradient of the label-flipped training loss on the
/// compromised data.
pub fn cmp_nkb_round(
    state: &NkbState,
    ctx: &AttackContext,
    spec: &ModelSpec,
    map: &LabelMap,
    rng: &mut SimRng,
) -> Result<(Vec<ClientUpdate>, NkbState)> {
    ctx.validate()?;
    state.config.validate()?;
    if ctx.level != KnowledgeLevel::None {
        return Err(Error::AttackConfig("blind CMP runs at knowledge level none".into()));
    }
    if ctx.compromised_datasets.is_empty() {
        return Err(Error::AttackConfig("blind CMP needs the compromised datasets".into()));
    }
    let cfg = state.config;
    let global = &ctx.global_model;
    let eta = if state.accepted(global)? {
        state.eta * cfg.growth
    } else {
        state.eta / cfg.growth
    }
    .clamp(cfg.eta_min, cfg.eta_max);

    let flipped = ctx
        .compromised_datasets
        .iter()
        .map(|d| flip_labels(d, map))
        .collect::<Result<Vec<_>>>()?;
    let pooled = Dataset::concat(&flipped.iter().collect::<Vec<_>>())?;
    let grad = loss_gradient(spec, global, &pooled)?;
    let mut primary = global.clone();
    primary.add_scaled(-eta, &grad)?;
    project_box_in_place(&mut primary, &ctx.domain)?;

    let updates = collude(&primary, ctx, cfg.sigma, cfg.eps, rng)?;
    Ok((
        updates,
        NkbState {
            config: cfg,
            eta,
            prev_crafted: Some(primary),
        },
    ))
}
