//! Closed-form attacks on weighted-mean aggregation.

use serde::{Deserialize, Serialize};

use crate::aggregation::ClientUpdate;
use crate::error::{Error, Result};
use crate::numkit::{project_box, ParamVector};

use super::{AttackContext, KnowledgeLevel};

/// Which coefficient multiplies `Σ_M p_i θ_i` in the partial-knowledge
/// closed form, with `s = Σ_M p_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartialVariant {
    /// `2/s − 1`, the coefficient as stated in the closed form.
    AsPrinted,
    /// `1 − 1/s`, the coefficient implied by estimating the benign sum as
    /// `((1 − s)/s) Σ_M p_i θ_i`.
    #[default]
    DerivationConsistent,
}

#[derive(Debug, Clone)]
pub struct MeanAttack {
    pub updates: Vec<ClientUpdate>,
    /// False when projecting into the feasible box moved the crafted model.
    pub feasible: bool,
    /// The attacker's predicted `F_A` at the aggregate.
    pub predicted_objective: f64,
}

fn compromised_mass(ctx: &AttackContext) -> Result<f64> {
    let s: f64 = ctx.compromised.iter().map(|u| u.weight).sum();
    if s > 0.0 {
        Ok(s)
    } else {
        Err(Error::AttackConfig("compromised clients carry zero aggregation weight".into()))
    }
}

fn weighted_sum(updates: &[ClientUpdate], dim: usize) -> Result<ParamVector> {
    let mut acc = ParamVector::zeros(dim);
    for u in updates {
        acc.add_scaled(u.weight, &u.params)?;
    }
    Ok(acc)
}

fn uniform_updates(ctx: &AttackContext, crafted: &ParamVector) -> Vec<ClientUpdate> {
    ctx.compromised
        .iter()
        .map(|c| ClientUpdate::new(c.client_id, crafted.clone(), c.weight))
        .collect()
}

/// Full knowledge: every compromised client uploads
/// `(θ* − Σ_B p_i θ_i) / Σ_M p_i`, which puts the mean exactly on `θ*`.
pub fn cmp_mean_full(ctx: &AttackContext, target: &ParamVector) -> Result<MeanAttack> {
    ctx.validate()?;
    if ctx.level != KnowledgeLevel::Full {
        return Err(Error::AttackConfig("full-knowledge mean attack needs level = full".into()));
    }
    let s = compromised_mass(ctx)?;
    let benign_sum = weighted_sum(&ctx.benign, target.dim())?;
    let raw = target.sub(&benign_sum)?.scaled(1.0 / s);
    let crafted = project_box(&raw, &ctx.domain)?;
    let feasible = crafted == raw;
    let mut aggregate = benign_sum;
    aggregate.add_scaled(s, &crafted)?;
    Ok(MeanAttack {
        updates: uniform_updates(ctx, &crafted),
        feasible,
        predicted_objective: aggregate.sub(target)?.norm_sq(),
    })
}

/// Partial knowledge: the benign sum is estimated from the compromised
/// clients' honest models, and every compromised client uploads
/// `(θ* + c · Σ_M p_i θ_i) / s` with `c` chosen by `variant`.
///
/// The as-printed variant reports `(2/s − 1)² ‖Σ_M p_i θ_i‖²` as its
/// predicted objective. The derivation-consistent variant reports `F_A` at
/// the aggregate implied by its own benign estimate, which is zero unless
/// projection clips the crafted model.
pub fn cmp_mean_partial(ctx: &AttackContext, target: &ParamVector, variant: PartialVariant) -> Result<MeanAttack> {
    ctx.validate()?;
    if ctx.level == KnowledgeLevel::None {
        return Err(Error::AttackConfig("partial-knowledge mean attack needs the compromised models".into()));
    }
    let s = compromised_mass(ctx)?;
    let honest = weighted_sum(&ctx.compromised, target.dim())?;
    let coeff = match variant {
        PartialVariant::AsPrinted => 2.0 / s - 1.0,
        PartialVariant::DerivationConsistent => 1.0 - 1.0 / s,
    };
    let mut raw = target.clone();
    raw.add_scaled(coeff, &honest)?;
    let raw = raw.scaled(1.0 / s);
    let crafted = project_box(&raw, &ctx.domain)?;
    let feasible = crafted == raw;
    let predicted_objective = match variant {
        PartialVariant::AsPrinted => coeff * coeff * honest.norm_sq(),
        PartialVariant::DerivationConsistent => {
            let mut aggregate = honest.scaled((1.0 - s) / s);
            aggregate.add_scaled(s, &crafted)?;
            aggregate.sub(target)?.norm_sq()
        }
    };
    Ok(MeanAttack {
        updates: uniform_updates(ctx, &crafted),
        feasible,
        predicted_objective,
    })
}

#[cfg(test)]
mod tests {
    use super::super::test_support::*;
    use super::*;
    use crate::aggregation::aggregate_mean;

    #[test]
    fn full_knowledge_worked_instance() {
        let c = ctx(
            KnowledgeLevel::Full,
            &[vec![7.0], vec![8.0]],
            &[vec![1.0], vec![3.0]],
            Some(vec![0.0]),
            None,
        );
        let out = cmp_mean_full(&c, &pv(&[0.0])).unwrap();
        assert!(out.feasible);
        for u in &out.updates {
            assert_eq!(u.params[0], -2.0);
        }
        let round: Vec<_> = c.benign.iter().cloned().chain(out.updates).collect();
        assert_eq!(aggregate_mean(&round).unwrap().global[0], 0.0);
    }

    #[test]
    fn full_knowledge_all_compromised() {
        let mut c = ctx(KnowledgeLevel::Full, &[vec![4.0], vec![5.0]], &[vec![0.0]], None, None);
        c.benign.clear();
        c.total_clients = 2;
        for u in &mut c.compromised {
            u.weight = 0.5;
        }
        let out = cmp_mean_full(&c, &pv(&[1.25])).unwrap();
        assert!(out.updates.iter().all(|u| u.params[0] == 1.25));
    }

    #[test]
    fn full_knowledge_zero_deviation() {
        let mut c = ctx(KnowledgeLevel::Full, &[vec![4.0]], &[vec![2.0]], None, None);
        c.benign[0].weight = 1.0 - 1e-3;
        c.compromised[0].weight = 1e-3;
        let target = pv(&[2.0 * (1.0 - 1e-3)]);
        let out = cmp_mean_full(&c, &target).unwrap();
        assert!(out.updates[0].params[0].abs() < 1e-9);
    }

    #[test]
    fn full_knowledge_reports_infeasibility() {
        let c = ctx(KnowledgeLevel::Full, &[vec![0.0]], &[vec![9.0], vec![9.0], vec![9.0]], None, None);
        let out = cmp_mean_full(&c, &pv(&[-9.0])).unwrap();
        assert!(!out.feasible);
        assert_eq!(out.updates[0].params[0], -10.0);
        assert!(out.predicted_objective > 0.0);
    }

    #[test]
    fn full_knowledge_zero_mass_rejected() {
        let mut c = ctx(KnowledgeLevel::Full, &[vec![0.0]], &[vec![1.0]], None, None);
        c.compromised[0].weight = 0.0;
        assert!(cmp_mean_full(&c, &pv(&[0.0])).is_err());
        c.compromised[0].weight = 0.5;
        c.level = KnowledgeLevel::Partial;
        c.benign.clear();
        assert!(cmp_mean_full(&c, &pv(&[0.0])).is_err());
    }

    #[test]
    fn partial_derivation_consistent_all_compromised() {
        let mut c = ctx(KnowledgeLevel::Partial, &[vec![3.0]], &[], None, None);
        c.compromised[0].weight = 1.0;
        let out = cmp_mean_partial(&c, &pv(&[0.5]), PartialVariant::DerivationConsistent).unwrap();
        assert_eq!(out.updates[0].params[0], 0.5);
        assert_eq!(out.predicted_objective, 0.0);
    }

    #[test]
    fn partial_as_printed_symbolic_case() {
        let mut c = ctx(KnowledgeLevel::Partial, &[vec![2.0]], &[], None, None);
        c.compromised[0].weight = 1.0;
        let out = cmp_mean_partial(&c, &pv(&[0.0]), PartialVariant::AsPrinted).unwrap();
        assert_eq!(out.updates[0].params[0], 2.0);
        assert_eq!(out.predicted_objective, 4.0);
    }

    #[test]
    fn partial_derivation_consistent_hits_target_when_estimate_exact() {
        // s = 0.4; benign sum must equal ((1 - s)/s) Σ_M pθ = 1.5 Σ_M pθ.
        let m = [vec![1.0, -2.0], vec![3.0, 0.5]];
        let mut c = ctx(KnowledgeLevel::Full, &m, &vec![vec![0.0, 0.0]; 3], None, None);
        for u in &mut c.compromised {
            u.weight = 0.2;
        }
        let honest_sum = [0.2 * (1.0 + 3.0), 0.2 * (-2.0 + 0.5)];
        // three benign clients with weight 0.2 each; two sit at 0, one
        // carries the whole estimated benign sum.
        for (j, u) in c.benign.iter_mut().enumerate() {
            u.weight = 0.2;
            if j == 0 {
                u.params = pv(&[1.5 * honest_sum[0] / 0.2, 1.5 * honest_sum[1] / 0.2]);
            }
        }
        let target = pv(&[0.3, -0.7]);
        let mut partial = c.clone();
        partial.level = KnowledgeLevel::Partial;
        partial.benign.clear();
        let out = cmp_mean_partial(&partial, &target, PartialVariant::DerivationConsistent).unwrap();
        let round: Vec<_> = c.benign.iter().cloned().chain(out.updates).collect();
        let agg = aggregate_mean(&round).unwrap().global;
        assert!(agg.sub(&target).unwrap().norm() < 1e-9);
    }
}
