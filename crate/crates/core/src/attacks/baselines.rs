use crate::aggregation::ClientUpdate;
use crate::datakit::{flip_labels, LabelMap};
use crate::error::{Error, Result};
use crate::models::{local_train, ModelSpec, TrainConfig};
use crate::numkit::{project_box_in_place, SimRng};

use super::AttackContext;

/// Honest compromised models plus i.i.d. `N(0, sigma²)` noise per
/// coordinate, projected into the feasible box.
pub fn attack_gaussian(ctx: &AttackContext, sigma: f64, rng: &mut SimRng) -> Result<Vec<ClientUpdate>> {
    ctx.validate()?;
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::AttackConfig(format!("Gaussian sigma {sigma} is invalid")));
    }
    ctx.compromised
        .iter()
        .map(|c| {
            let mut params = c.params.clone();
            for v in params.as_mut_slice() {
                *v += sigma * rng.normal();
            }
            project_box_in_place(&mut params, &ctx.domain)?;
            Ok(ClientUpdate::new(c.client_id, params, c.weight))
        })
        .collect()
}

/// Each compromised client trains honestly from the global model on its own
/// data with labels remapped by `map`.
pub fn attack_label_flip(
    ctx: &AttackContext,
    map: &LabelMap,
    spec: &ModelSpec,
    train: &TrainConfig,
    rng: &mut SimRng,
) -> Result<Vec<ClientUpdate>> {
    ctx.validate()?;
    if ctx.compromised_datasets.len() != ctx.compromised.len() {
        return Err(Error::AttackConfig(format!(
            "label flipping needs one dataset per compromised client ({} datasets, {} clients)",
            ctx.compromised_datasets.len(),
            ctx.compromised.len()
        )));
    }
    ctx.compromised
        .iter()
        .zip(&ctx.compromised_datasets)
        .map(|(c, data)| {
            let poisoned = flip_labels(data, map)?;
            let params = local_train(spec, &ctx.global_model, &poisoned, train, &ctx.domain, rng)?;
            Ok(ClientUpdate::new(c.client_id, params, c.weight))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::test_support::*;
    use super::super::KnowledgeLevel;
    use super::*;
    use crate::datakit::{gen_classification, paper_target_map};
    use crate::models::init_params;

    #[test]
    fn gaussian_zero_sigma_returns_honest_models() {
        let c = ctx(KnowledgeLevel::Partial, &[vec![0.5, 1.0], vec![2.0, -1.0]], &[vec![0.0, 0.0]], None, None);
        let out = attack_gaussian(&c, 0.0, &mut SimRng::seed_from(0)).unwrap();
        for (o, h) in out.iter().zip(&c.compromised) {
            assert_eq!(o.params, h.params);
            assert_eq!(o.client_id, h.client_id);
        }
    }

    #[test]
    fn gaussian_is_seeded_and_projected() {
        let c = ctx(KnowledgeLevel::Partial, &[vec![0.5, 1.0]], &[vec![0.0, 0.0]], None, None);
        let a = attack_gaussian(&c, 100.0, &mut SimRng::seed_from(4)).unwrap();
        let b = attack_gaussian(&c, 100.0, &mut SimRng::seed_from(4)).unwrap();
        assert_eq!(a, b);
        assert!(c.domain.contains(&a[0].params));
    }

    fn flip_ctx() -> (AttackContext, ModelSpec) {
        let spec = ModelSpec::mlp(3, 6, 3);
        let mut rng = SimRng::seed_from(10);
        let global = init_params(&spec, &mut rng).unwrap();
        let data = gen_classification(60, 3, 3, 6.0, &mut rng).unwrap();
        let halves = [
            data.subset(&(0..30).collect::<Vec<_>>()).unwrap(),
            data.subset(&(30..60).collect::<Vec<_>>()).unwrap(),
        ];
        let mut c = ctx(
            KnowledgeLevel::Partial,
            &[global.as_slice().to_vec(), global.as_slice().to_vec()],
            &[global.as_slice().to_vec()],
            None,
            None,
        );
        c.global_model = global;
        c.compromised_datasets = halves.to_vec();
        (c, spec)
    }

    #[test]
    fn identity_flip_is_honest_training() {
        let (c, spec) = flip_ctx();
        let train = TrainConfig { epochs: 2, lr: 0.5, batch: 8 };
        let out = attack_label_flip(&c, &LabelMap::identity(3), &spec, &train, &mut SimRng::seed_from(1)).unwrap();
        let mut rng = SimRng::seed_from(1);
        for (o, d) in out.iter().zip(&c.compromised_datasets) {
            let honest = local_train(&spec, &c.global_model, d, &train, &c.domain, &mut rng).unwrap();
            assert_eq!(o.params, honest);
        }
    }

    #[test]
    fn target_map_flip_differs_and_is_deterministic() {
        let (c, spec) = flip_ctx();
        let train = TrainConfig { epochs: 2, lr: 0.5, batch: 8 };
        let map = paper_target_map(3).unwrap();
        let honest = attack_label_flip(&c, &LabelMap::identity(3), &spec, &train, &mut SimRng::seed_from(1)).unwrap();
        let a = attack_label_flip(&c, &map, &spec, &train, &mut SimRng::seed_from(1)).unwrap();
        let b = attack_label_flip(&c, &map, &spec, &train, &mut SimRng::seed_from(1)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].params, honest[0].params);
    }
}
