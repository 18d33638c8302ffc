//! The attacker: baseline attacks and the covert model poisoning (CMP)
//! family. Every attack produces one [`ClientUpdate`] per compromised client.
//!
//! The first compromised client carries the primary crafted model `θ̂₁`;
//! the remaining compromised clients upload `θ̂₁` plus a random offset of
//! norm exactly `ε` so that they vouch for it under Krum.

mod baselines;
mod krum_original;
mod mean;
mod nkb;
mod simplified;

pub use baselines::{attack_gaussian, attack_label_flip};
pub use krum_original::cmp_krum_original;
pub use mean::{cmp_mean_full, cmp_mean_partial, MeanAttack, PartialVariant};
pub use nkb::{cmp_nkb_round, NkbConfig, NkbState};
pub use simplified::{
    cmp_krum_simplified, compute_e, select_alpha, solve_p1_kkt, theorem2_init, AlphaMethod,
    KktState, P1Problem, SimplifiedConstraint,
};

use serde::{Deserialize, Serialize};

use crate::aggregation::{krum_argmin, krum_scores, AggregationRule, ClientUpdate};
use crate::error::{check_dim, Error, Result};
use crate::models::{loss_and_gradient, Dataset, ModelSpec};
use crate::numkit::{clipped_gaussian_direction, project_box_in_place, BoxDomain, ParamVector, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KnowledgeLevel {
    /// Every client's upload and dataset, plus the aggregation rule.
    Full,
    /// Only the compromised clients' models and datasets, plus the rule.
    Partial,
    /// Compromised datasets and the broadcast global model.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Minimize `‖θ̂ − θ*‖²`.
    Targeted,
    /// Maximize the benign training loss on the visible data.
    Untargeted,
}

/// What the attacker sees in one round.
#[derive(Debug, Clone)]
pub struct AttackContext {
    pub level: KnowledgeLevel,
    pub objective: Objective,
    /// Honest local models of the compromised clients, carrying their ids
    /// and aggregation weights.
    pub compromised: Vec<ClientUpdate>,
    pub compromised_datasets: Vec<Dataset>,
    /// Benign uploads; empty unless `level` is `Full`.
    pub benign: Vec<ClientUpdate>,
    /// Benign datasets; empty unless `level` is `Full`.
    pub benign_datasets: Vec<Dataset>,
    pub target: Option<ParamVector>,
    pub global_model: ParamVector,
    pub aggregation_known: Option<AggregationRule>,
    pub total_clients: usize,
    pub domain: BoxDomain,
}

impl AttackContext {
    pub fn num_compromised(&self) -> usize {
        self.compromised.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::AttackConfig(m.to_string()));
        if self.compromised.is_empty() {
            return bad("at least one compromised client is required");
        }
        if self.compromised.len() > self.total_clients {
            return bad("more compromised clients than clients");
        }
        match self.level {
            KnowledgeLevel::Full => {}
            KnowledgeLevel::Partial if !self.benign.is_empty() || !self.benign_datasets.is_empty() => {
                return bad("partial knowledge cannot expose benign uploads or datasets")
            }
            KnowledgeLevel::None
                if !self.benign.is_empty()
                    || !self.benign_datasets.is_empty()
                    || self.aggregation_known.is_some() =>
            {
                return bad("no-knowledge attacker cannot see benign data or the aggregation rule")
            }
            _ => {}
        }
        let dim = self.global_model.dim();
        check_dim(dim, self.domain.dim())?;
        for u in self.compromised.iter().chain(&self.benign) {
            check_dim(dim, u.params.dim())?;
        }
        if let Some(t) = &self.target {
            check_dim(dim, t.dim())?;
        }
        Ok(())
    }

    pub fn compromised_ids(&self) -> Vec<usize> {
        self.compromised.iter().map(|u| u.client_id).collect()
    }

    /// Client ids not in the compromised set, ascending.
    pub fn benign_ids(&self) -> Vec<usize> {
        let m = self.compromised_ids();
        (0..self.total_clients).filter(|i| !m.contains(i)).collect()
    }

    pub fn visible_datasets(&self) -> Vec<&Dataset> {
        self.compromised_datasets
            .iter()
            .chain(&self.benign_datasets)
            .collect()
    }

    fn require_target(&self) -> Result<&ParamVector> {
        self.target
            .as_ref()
            .ok_or_else(|| Error::AttackConfig("targeted objective without a target model".into()))
    }

    /// The benign models the attacker evaluates Krum against: the true
    /// benign uploads under full knowledge, otherwise the compromised honest
    /// models recycled to fill the `U − M` benign slots.
    pub fn benign_estimate(&self) -> Vec<ClientUpdate> {
        if self.level == KnowledgeLevel::Full {
            return self.benign.clone();
        }
        let ids = self.benign_ids();
        ids.iter()
            .enumerate()
            .map(|(j, &id)| {
                let src = &self.compromised[j % self.compromised.len()];
                ClientUpdate::new(id, src.params.clone(), src.weight)
            })
            .collect()
    }
}

/// Hyperparameters of the gradient-based CMP attacks against Krum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CmpHyper {
    /// Initial step size `η₀`.
    pub eta0: f64,
    /// Step decay `λ ∈ (0, 1)` applied when Krum rejects a step.
    pub decay: f64,
    /// Standard deviation of the collusion noise direction.
    pub sigma: f64,
    /// Distance `ε` between `θ̂₁` and every other crafted model.
    pub eps: f64,
    /// Stop once the step size drops below this threshold `ς`.
    pub min_step: f64,
    /// Hard cap on inner iterations.
    pub max_iters: usize,
}

impl Default for CmpHyper {
    fn default() -> Self {
        CmpHyper {
            eta0: 1.0,
            decay: 0.8,
            sigma: 1.0,
            eps: 1e-3,
            min_step: 1e-5,
            max_iters: 500,
        }
    }
}

impl CmpHyper {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("eta0", self.eta0),
            ("sigma", self.sigma),
            ("eps", self.eps),
            ("min_step", self.min_step),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::AttackConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::AttackConfig(format!(
                "decay must lie in (0, 1), got {}",
                self.decay
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::AttackConfig("max_iters must be positive".into()));
        }
        Ok(())
    }
}

/// Result of an attack against Krum.
#[derive(Debug, Clone)]
pub struct KrumAttack {
    pub updates: Vec<ClientUpdate>,
    /// Whether Krum over the attacker's view selects `θ̂₁`.
    pub success: bool,
    pub iterations: usize,
}

/// The attacker's objective `F_A` and its gradient.
///
/// Targeted: `‖θ − θ*‖²`. Untargeted: the negated mean training loss over
/// the union of the visible datasets.
pub fn attacker_objective(
    params: &ParamVector,
    ctx: &AttackContext,
    spec: &ModelSpec,
) -> Result<(f64, ParamVector)> {
    match ctx.objective {
        Objective::Targeted => {
            let target = ctx.require_target()?;
            let diff = params.sub(target)?;
            Ok((diff.norm_sq(), diff.scaled(2.0)))
        }
        Objective::Untargeted => {
            let data = ctx.visible_datasets();
            if data.is_empty() {
                return Err(Error::AttackConfig("untargeted objective without datasets".into()));
            }
            let total: usize = data.iter().map(|d| d.len()).sum();
            let mut value = 0.0;
            let mut grad = ParamVector::zeros(params.dim());
            for d in data {
                let share = d.len() as f64 / total as f64;
                let (l, g) = loss_and_gradient(spec, params, d)?;
                value -= share * l;
                grad.add_scaled(-share, &g)?;
            }
            Ok((value, grad))
        }
    }
}

/// The target the CMP attacks steer towards. Untargeted attacks derive one
/// by projected gradient steps on `F_A` from the global model.
pub(crate) fn resolve_target(ctx: &AttackContext, spec: &ModelSpec, hyper: &CmpHyper) -> Result<ParamVector> {
    match ctx.objective {
        Objective::Targeted => ctx.require_target().cloned(),
        Objective::Untargeted => {
            let mut theta = ctx.global_model.clone();
            for _ in 0..hyper.max_iters.min(100) {
                let (_, g) = attacker_objective(&theta, ctx, spec)?;
                theta.add_scaled(-hyper.eta0, &g)?;
                project_box_in_place(&mut theta, &ctx.domain)?;
            }
            Ok(theta)
        }
    }
}

/// `θ̂₁` followed by `M − 1` copies offset by exactly `eps`.
pub(crate) fn collude(
    primary: &ParamVector,
    ctx: &AttackContext,
    sigma: f64,
    eps: f64,
    rng: &mut SimRng,
) -> Result<Vec<ClientUpdate>> {
    let mut out = Vec::with_capacity(ctx.compromised.len());
    for (i, c) in ctx.compromised.iter().enumerate() {
        let params = if i == 0 {
            primary.clone()
        } else {
            primary.add(&clipped_gaussian_direction(primary.dim(), sigma, eps, rng)?)?
        };
        out.push(ClientUpdate::new(c.client_id, params, c.weight));
    }
    Ok(out)
}

/// Krum's assumed `m` from the known rule.
pub(crate) fn known_krum_m(ctx: &AttackContext) -> Result<usize> {
    match ctx.aggregation_known {
        Some(AggregationRule::Krum { assumed_compromised }) => Ok(assumed_compromised),
        other => Err(Error::AttackConfig(format!(
            "attack targets Krum but the known aggregation rule is {other:?}"
        ))),
    }
}

/// Whether Krum over `crafted ∪ benign` picks the first crafted update.
pub(crate) fn krum_selects_primary(
    crafted: &[ClientUpdate],
    benign: &[ClientUpdate],
    assumed_compromised: usize,
) -> Result<bool> {
    let mut round: Vec<ClientUpdate> = crafted.iter().chain(benign).cloned().collect();
    round.sort_by_key(|u| u.client_id);
    let scores = krum_scores(&round, assumed_compromised)?;
    let pick = krum_argmin(&round, &scores);
    Ok(round[pick].client_id == crafted[0].client_id)
}
