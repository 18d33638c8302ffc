//! Instance builders shared by the benchmarks.

use fedpoison_core::aggregation::ClientUpdate;
use fedpoison_core::attacks::{AttackContext, KnowledgeLevel, Objective};
use fedpoison_core::{AggregationRule, BoxDomain, ParamVector, SimRng};

fn around(center: &[f64], sd: f64, rng: &mut SimRng) -> ParamVector {
    ParamVector::new(center.iter().map(|c| c + sd * rng.normal()).collect()).expect("finite")
}

/// `u` equal-weight uploads scattered around a random centre.
pub fn uploads(u: usize, dim: usize, seed: u64) -> Vec<ClientUpdate> {
    let mut rng = SimRng::seed_from(seed);
    let center: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
    (0..u)
        .map(|i| ClientUpdate::new(i, around(&center, 0.1, &mut rng), 1.0 / u as f64))
        .collect()
}

/// Full-knowledge round against Krum with `m` compromised clients and a
/// target half a unit from the benign cluster.
pub fn krum_context(u: usize, m: usize, dim: usize, seed: u64) -> AttackContext {
    let mut rng = SimRng::seed_from(seed);
    let center: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
    let w = 1.0 / u as f64;
    let mut all: Vec<ClientUpdate> = (0..u)
        .map(|i| ClientUpdate::new(i, around(&center, 0.1, &mut rng), w))
        .collect();
    let benign = all.split_off(m);
    AttackContext {
        level: KnowledgeLevel::Full,
        objective: Objective::Targeted,
        compromised: all,
        compromised_datasets: Vec::new(),
        benign,
        benign_datasets: Vec::new(),
        target: Some(around(&center, 0.5, &mut rng)),
        global_model: around(&center, 0.02, &mut rng),
        aggregation_known: Some(AggregationRule::Krum { assumed_compromised: m }),
        total_clients: u,
        domain: BoxDomain::symmetric(dim, 10.0).expect("positive bound"),
    }
}
