use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::numkit::{project_box_in_place, SimRng};

use super::{
    attacker_objective, collude, known_krum_m, krum_selects_primary, AttackContext, CmpHyper,
    KnowledgeLevel, KrumAttack,
};

/// Gradient-based covert poisoning against Krum.
///
/// `θ̂₁` starts at the broadcast global model. Each iteration takes a
/// projected gradient step on `F_A`, rebuilds the colluding copies and asks
/// whether Krum over the attacker's view still selects `θ̂₁`. A rejected
/// step is reverted and the step size decays by `hyper.decay`. The loop
/// stops once the step size falls below `hyper.min_step`, after
/// `hyper.max_iters` iterations, or when an accepted step leaves `θ̂₁`
/// unchanged.
///
/// Under partial knowledge the benign uploads are replaced by
/// [`AttackContext::benign_estimate`].
pub fn cmp_krum_original(
    ctx: &AttackContext,
    hyper: &CmpHyper,
    spec: &ModelSpec,
    rng: &mut SimRng,
) -> Result<KrumAttack> {
    ctx.validate()?;
    hyper.validate()?;
    if ctx.level == KnowledgeLevel::None {
        return Err(Error::AttackConfig("Krum attack needs full or partial knowledge".into()));
    }
    let m = known_krum_m(ctx)?;
    let benign = ctx.benign_estimate();

    let mut primary = ctx.global_model.clone();
    project_box_in_place(&mut primary, &ctx.domain)?;
    let mut crafted = collude(&primary, ctx, hyper.sigma, hyper.eps, rng)?;
    let mut success = krum_selects_primary(&crafted, &benign, m)?;

    let mut eta = hyper.eta0;
    let mut iterations = 0;
    while eta >= hyper.min_step && iterations < hyper.max_iters {
        iterations += 1;
        let (_, grad) = attacker_objective(&primary, ctx, spec)?;
        let mut candidate = primary.clone();
        candidate.add_scaled(-eta, &grad)?;
        project_box_in_place(&mut candidate, &ctx.domain)?;
        let trial = collude(&candidate, ctx, hyper.sigma, hyper.eps, rng)?;
        if krum_selects_primary(&trial, &benign, m)? {
            let stalled = candidate == primary;
            primary = candidate;
            crafted = trial;
            success = true;
            if stalled {
                break;
            }
        } else {
            eta *= hyper.decay;
        }
    }
    Ok(KrumAttack {
        updates: crafted,
        success,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::super::test_support::*;
    use super::*;
    use crate::aggregation::aggregate_krum;

    #[test]
    fn benign_cluster_at_target_succeeds_immediately() {
        let c = ctx(
            KnowledgeLevel::Full,
            &[vec![0.0], vec![0.0]],
            &vec![vec![0.0]; 5],
            Some(vec![0.0]),
            Some(2),
        );
        let spec = ModelSpec::linear_regression(1);
        let out = cmp_krum_original(&c, &CmpHyper::default(), &spec, &mut SimRng::seed_from(0)).unwrap();
        assert!(out.success);
        assert_eq!(out.iterations, 1);
        assert_eq!(out.updates[0].params[0], 0.0);
    }

    #[test]
    fn tiny_initial_step_skips_loop() {
        let c = ctx(
            KnowledgeLevel::Full,
            &[vec![0.0], vec![0.0]],
            &[vec![0.1], vec![0.2], vec![-0.1], vec![0.05], vec![0.3]],
            Some(vec![4.0]),
            Some(2),
        );
        let hyper = CmpHyper {
            eta0: 1e-7,
            min_step: 1e-6,
            ..CmpHyper::default()
        };
        let spec = ModelSpec::linear_regression(1);
        let out = cmp_krum_original(&c, &hyper, &spec, &mut SimRng::seed_from(0)).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.updates[0].params, c.global_model);
    }

    #[test]
    fn success_implies_true_round_selection() {
        let mut rng = SimRng::seed_from(42);
        let spec = ModelSpec::linear_regression(1);
        for _ in 0..30 {
            let benign: Vec<Vec<f64>> = (0..5).map(|_| vec![rng.normal()]).collect();
            let mut c = ctx(
                KnowledgeLevel::Full,
                &[vec![0.0], vec![0.0]],
                &benign,
                Some(vec![5.0 * rng.normal()]),
                Some(2),
            );
            c.global_model = pv(&[0.2 * rng.normal()]);
            let out = cmp_krum_original(&c, &CmpHyper::default(), &spec, &mut rng).unwrap();
            if out.success {
                let round: Vec<_> = out.updates.iter().chain(&c.benign).cloned().collect();
                let sel = aggregate_krum(&round, 2).unwrap();
                assert_eq!(sel.selected_id, Some(out.updates[0].client_id));
            }
        }
    }

    #[test]
    fn requires_known_krum() {
        let c = ctx(KnowledgeLevel::Full, &[vec![0.0]], &vec![vec![0.0]; 4], Some(vec![1.0]), None);
        let spec = ModelSpec::linear_regression(1);
        assert!(cmp_krum_original(&c, &CmpHyper::default(), &spec, &mut SimRng::seed_from(0)).is_err());
    }
}
