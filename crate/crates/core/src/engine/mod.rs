//! Communication rounds: broadcast, local training, attack injection,
//! aggregation and per-round metrics.
//!
//! Randomness is drawn from sub-streams keyed by (trial, purpose, round,
//! client), so results do not depend on execution order.

mod config;
mod metrics;

pub use config::{AttackConfig, AttackKind, DataSource, ExperimentConfig, ModelConfig};
pub use metrics::{metric_attacker_accuracy, metric_error_rate, metric_success_rate};

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::aggregation::{AggregationRule, ClientUpdate};
use crate::attacks::{
    attack_gaussian, attack_label_flip, cmp_krum_original, cmp_krum_simplified, cmp_mean_full,
    cmp_mean_partial, cmp_nkb_round, resolve_target, AttackContext, KnowledgeLevel, NkbState,
    Objective,
};
use crate::datakit::{
    flip_labels, gen_classification, gen_regression, load_csv_regression, load_idx, paper_target_map,
    partition_noniid, partition_uniform, LabelMap,
};
use crate::error::{Error, Result};
use crate::models::{init_params, local_train, loss, Dataset, ModelKind, ModelSpec};
use crate::numkit::{BoxDomain, ParamVector, SimRng};

const STREAM_DATA: u64 = 0;
const STREAM_PARTITION: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_TARGET: u64 = 3;
const STREAM_TRAIN: u64 = 4;
const STREAM_ATTACK: u64 = 5;

pub const METRIC_TEST_LOSS: &str = "test_loss";
pub const METRIC_ERROR_RATE: &str = "error_rate";
pub const METRIC_ATTACKER_ACCURACY: &str = "attacker_accuracy";
pub const METRIC_SELECTED_COMPROMISED: &str = "selected_compromised";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Global model after aggregation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global: Option<ParamVector>,
    /// Krum's pick; `None` under other rules.
    pub selected_id: Option<usize>,
    /// Whether Krum picked a compromised upload; `None` under other rules or
    /// without compromised clients.
    pub attack_success: Option<bool>,
    pub metrics: BTreeMap<String, f64>,
}

/// Equality ignores wall-clock timing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial: usize,
    pub seed: u64,
    pub rounds: Vec<RoundRecord>,
    /// Metrics of the last round.
    pub final_metrics: BTreeMap<String, f64>,
    pub success_rate: Option<f64>,
    /// Wall-clock seconds per attack invocation.
    #[serde(skip)]
    pub attack_times: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AttackTiming {
    pub invocations: usize,
    pub mean_seconds: f64,
    pub std_seconds: f64,
}

/// Per-trial records plus trial averages. Wall-clock timing is kept out of
/// the serialized form and out of equality, so that reports are
/// reproducible byte for byte.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub trials: Vec<TrialReport>,
    pub final_error_rate: Option<f64>,
    pub final_attacker_accuracy: Option<f64>,
    pub final_test_loss: f64,
    pub success_rate: Option<f64>,
    #[serde(skip)]
    pub timing: AttackTiming,
}

impl PartialEq for TrialReport {
    fn eq(&self, other: &Self) -> bool {
        self.trial == other.trial
            && self.seed == other.seed
            && self.rounds == other.rounds
            && self.final_metrics == other.final_metrics
            && self.success_rate == other.success_rate
    }
}

impl PartialEq for MetricsReport {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.seed == other.seed
            && self.trials == other.trials
            && self.final_error_rate == other.final_error_rate
            && self.final_attacker_accuracy == other.final_attacker_accuracy
            && self.final_test_loss.to_bits() == other.final_test_loss.to_bits()
            && self.success_rate == other.success_rate
    }
}

/// Train and test splits shared by all trials when they come from files.
#[derive(Debug, Clone)]
pub enum ExperimentData {
    Files { train: Dataset, test: Dataset },
    Synthetic,
}

impl ExperimentData {
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        match &config.data {
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                limit,
            } => {
                let mut train = load_idx(train_images, train_labels)?;
                let mut test = load_idx(test_images, test_labels)?;
                if let Some(n) = *limit {
                    train = head(&train, n)?;
                    test = head(&test, n)?;
                }
                Ok(ExperimentData::Files { train, test })
            }
            DataSource::Csv { train, test } => Ok(ExperimentData::Files {
                train: load_csv_regression(train)?,
                test: load_csv_regression(test)?,
            }),
            _ => Ok(ExperimentData::Synthetic),
        }
    }

    fn splits(&self, config: &ExperimentConfig, rng: &mut SimRng) -> Result<(Dataset, Dataset)> {
        match (self, &config.data) {
            (ExperimentData::Files { train, test }, _) => Ok((train.clone(), test.clone())),
            (
                ExperimentData::Synthetic,
                DataSource::SyntheticClassification {
                    train_size,
                    test_size,
                    dim,
                    classes,
                    separation,
                },
            ) => {
                let all = gen_classification(train_size + test_size, *dim, *classes, *separation, rng)?;
                split(&all, *train_size)
            }
            (
                ExperimentData::Synthetic,
                DataSource::SyntheticRegression {
                    train_size,
                    test_size,
                    dim,
                    noise,
                },
            ) => {
                let all = gen_regression(train_size + test_size, *dim, *noise, rng)?.dataset;
                split(&all, *train_size)
            }
            _ => Err(Error::InvalidArgument("file-backed data was not loaded".into())),
        }
    }
}

fn head(data: &Dataset, n: usize) -> Result<Dataset> {
    data.subset(&(0..n.min(data.len())).collect::<Vec<_>>())
}

fn split(all: &Dataset, train_size: usize) -> Result<(Dataset, Dataset)> {
    let train = all.subset(&(0..train_size).collect::<Vec<_>>())?;
    let test = all.subset(&(train_size..all.len()).collect::<Vec<_>>())?;
    Ok((train, test))
}

/// Seed of trial `trial` derived from the experiment seed.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    SimRng::stream(seed, &[trial as u64]).next_seed()
}

/// State of one trial between rounds.
#[derive(Debug, Clone)]
pub struct Simulation {
    config: ExperimentConfig,
    spec: ModelSpec,
    seed: u64,
    clients: Vec<Dataset>,
    weights: Vec<f64>,
    test: Dataset,
    domain: BoxDomain,
    global: ParamVector,
    target: Option<ParamVector>,
    label_map: Option<LabelMap>,
    nkb: Option<NkbState>,
    round: usize,
    attack_times: Vec<f64>,
    last_uploads: Vec<ClientUpdate>,
}

impl Simulation {
    /// Data generation, partitioning, initialization and, for targeted CMP
    /// attacks, training of `θ*` on label-flipped attacker-visible data.
    pub fn new(config: &ExperimentConfig, data: &ExperimentData, trial: usize) -> Result<Self> {
        config.validate()?;
        let seed = trial_seed(config.seed, trial);
        let (train, test) = data.splits(config, &mut SimRng::stream(seed, &[STREAM_DATA]))?;
        let spec = match config.model.kind {
            ModelKind::LinearRegression => ModelSpec::linear_regression(train.dim()),
            ModelKind::LinearSvm => ModelSpec::linear_svm(train.dim()),
            ModelKind::Mlp => ModelSpec::mlp(train.dim(), config.model.hidden_dim, train.num_classes()),
        };
        spec.validate()?;

        let mut part_rng = SimRng::stream(seed, &[STREAM_PARTITION]);
        let partition = if train.is_classification() {
            partition_noniid(&train, config.clients, config.noniid, &mut part_rng)?
        } else {
            partition_uniform(&train, config.clients, &mut part_rng)?
        };
        let clients = partition
            .assignments
            .iter()
            .enumerate()
            .map(|(k, rows)| {
                if rows.is_empty() {
                    Err(Error::InvalidArgument(format!(
                        "client {k} received no training examples; use more data or fewer clients"
                    )))
                } else {
                    train.subset(rows)
                }
            })
            .collect::<Result<Vec<_>>>()?;

        let domain = BoxDomain::symmetric(spec.param_count(), config.theta_bound)?;
        let global = init_params(&spec, &mut SimRng::stream(seed, &[STREAM_INIT]))?;
        let label_map = if train.is_classification() {
            Some(match &config.attack.label_map {
                Some(m) => LabelMap::new(m.clone())?,
                None => paper_target_map(train.num_classes())?,
            })
        } else {
            None
        };

        let mut sim = Simulation {
            config: ExperimentConfig {
                aggregation: config.aggregation.resolved(config.compromised),
                ..config.clone()
            },
            spec,
            seed,
            clients,
            weights: partition.weights,
            test,
            domain,
            global,
            target: None,
            label_map,
            nkb: None,
            round: 0,
            attack_times: Vec::new(),
            last_uploads: Vec::new(),
        };
        if sim.attacking() {
            let a = &config.attack;
            if a.kind == AttackKind::CmpNkb {
                sim.nkb = Some(NkbState::new(a.nkb)?);
            }
            let cmp = matches!(
                a.kind,
                AttackKind::CmpMean | AttackKind::CmpKrumOriginal | AttackKind::CmpKrumSimplified
            );
            if cmp && a.objective == Objective::Targeted {
                sim.target = Some(sim.train_target()?);
            }
        }
        Ok(sim)
    }

    fn attacking(&self) -> bool {
        self.config.compromised > 0 && self.config.attack.kind != AttackKind::None
    }

    fn train_target(&self) -> Result<ParamVector> {
        let map = self.label_map.as_ref().ok_or_else(|| {
            Error::AttackConfig("targeted attacks need class labels".into())
        })?;
        let m = self.config.compromised;
        let visible: Vec<&Dataset> = match self.config.attack.knowledge {
            KnowledgeLevel::Full => self.clients.iter().collect(),
            _ => self.clients[..m].iter().collect(),
        };
        let flipped = flip_labels(&Dataset::concat(&visible)?, map)?;
        local_train(
            &self.spec,
            &self.global,
            &flipped,
            &self.config.attack.target_training,
            &self.domain,
            &mut SimRng::stream(self.seed, &[STREAM_TARGET]),
        )
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn global(&self) -> &ParamVector {
        &self.global
    }

    pub fn clients(&self) -> &[Dataset] {
        &self.clients
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn test(&self) -> &Dataset {
        &self.test
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn target(&self) -> Option<&ParamVector> {
        self.target.as_ref()
    }

    pub fn label_map(&self) -> Option<&LabelMap> {
        self.label_map.as_ref()
    }

    pub fn round(&self) -> usize {
        self.round
    }

    /// What the server received in the last round, by client id.
    pub fn last_uploads(&self) -> &[ClientUpdate] {
        &self.last_uploads
    }

    /// Wall-clock seconds of every attack invocation so far.
    pub fn attack_times(&self) -> &[f64] {
        &self.attack_times
    }

    /// Every client trains from the broadcast model; the attacker then
    /// replaces the compromised uploads and the server aggregates.
    pub fn run_round(&mut self) -> Result<RoundRecord> {
        let t = self.round as u64;
        let honest = self
            .clients
            .iter()
            .enumerate()
            .map(|(k, data)| {
                let mut rng = SimRng::stream(self.seed, &[STREAM_TRAIN, t, k as u64]);
                let params = local_train(&self.spec, &self.global, data, &self.config.train, &self.domain, &mut rng)?;
                Ok(ClientUpdate::new(k, params, self.weights[k]))
            })
            .collect::<Result<Vec<_>>>()?;

        let m = self.config.compromised;
        let mut uploads = honest.clone();
        if self.attacking() {
            let start = Instant::now();
            let crafted = self.attack(&honest, &mut SimRng::stream(self.seed, &[STREAM_ATTACK, t]))?;
            self.attack_times.push(start.elapsed().as_secs_f64());
            for u in crafted {
                let id = u.client_id;
                uploads[id] = u;
            }
        }

        let outcome = self.config.aggregation.apply(&uploads)?;
        self.global = outcome.global;
        self.last_uploads = uploads;
        self.round += 1;

        let mut metrics = BTreeMap::new();
        metrics.insert(METRIC_TEST_LOSS.to_string(), loss(&self.spec, &self.global, &self.test)?);
        if self.spec.is_classifier() {
            metrics.insert(
                METRIC_ERROR_RATE.to_string(),
                metric_error_rate(&self.spec, &self.global, &self.test)?,
            );
            if let Some(map) = &self.label_map {
                metrics.insert(
                    METRIC_ATTACKER_ACCURACY.to_string(),
                    metric_attacker_accuracy(&self.spec, &self.global, &self.test, map)?,
                );
            }
        }
        let attack_success = outcome.selected_id.filter(|_| m > 0).map(|id| id < m);
        if let Some(s) = attack_success {
            metrics.insert(METRIC_SELECTED_COMPROMISED.to_string(), if s { 1.0 } else { 0.0 });
        }
        Ok(RoundRecord {
            round: self.round - 1,
            global: Some(self.global.clone()),
            selected_id: outcome.selected_id,
            attack_success,
            metrics,
        })
    }

    fn context(&self, honest: &[ClientUpdate]) -> AttackContext {
        let a = &self.config.attack;
        let m = self.config.compromised;
        let full = a.knowledge == KnowledgeLevel::Full;
        AttackContext {
            level: a.knowledge,
            objective: a.objective,
            compromised: honest[..m].to_vec(),
            compromised_datasets: self.clients[..m].to_vec(),
            benign: if full { honest[m..].to_vec() } else { Vec::new() },
            benign_datasets: if full { self.clients[m..].to_vec() } else { Vec::new() },
            target: self.target.clone(),
            global_model: self.global.clone(),
            aggregation_known: (a.knowledge != KnowledgeLevel::None).then(|| self.config.aggregation.clone()),
            total_clients: self.config.clients,
            domain: self.domain.clone(),
        }
    }

    fn attack(&mut self, honest: &[ClientUpdate], rng: &mut SimRng) -> Result<Vec<ClientUpdate>> {
        let ctx = self.context(honest);
        let a = self.config.attack.clone();
        let map = || {
            self.label_map
                .as_ref()
                .ok_or_else(|| Error::AttackConfig("attack needs class labels".into()))
        };
        match a.kind {
            AttackKind::None => Ok(ctx.compromised),
            AttackKind::Gaussian => attack_gaussian(&ctx, a.gaussian_sigma, rng),
            AttackKind::LabelFlip => attack_label_flip(&ctx, map()?, &self.spec, &self.config.train, rng),
            AttackKind::CmpMean => {
                let target = resolve_target(&ctx, &self.spec, &a.cmp)?;
                let out = match a.knowledge {
                    KnowledgeLevel::Full => cmp_mean_full(&ctx, &target)?,
                    _ => cmp_mean_partial(&ctx, &target, a.mean_variant)?,
                };
                Ok(out.updates)
            }
            AttackKind::CmpKrumOriginal => Ok(cmp_krum_original(&ctx, &a.cmp, &self.spec, rng)?.updates),
            AttackKind::CmpKrumSimplified => {
                Ok(cmp_krum_simplified(&ctx, &a.cmp, &self.spec, a.alpha, rng)?.updates)
            }
            AttackKind::CmpNkb => {
                let state = self.nkb.as_ref().expect("initialized with the simulation");
                let (updates, next) = cmp_nkb_round(state, &ctx, &self.spec, map()?, rng)?;
                self.nkb = Some(next);
                Ok(updates)
            }
        }
    }
}

/// One communication round of `sim`.
pub fn run_round(sim: &mut Simulation) -> Result<RoundRecord> {
    sim.run_round()
}

/// All rounds of trial `trial`.
pub fn run_trial(config: &ExperimentConfig, data: &ExperimentData, trial: usize) -> Result<TrialReport> {
    let mut sim = Simulation::new(config, data, trial)?;
    let mut rounds = Vec::with_capacity(config.rounds);
    for _ in 0..config.rounds {
        let mut record = sim.run_round()?;
        if !config.record_globals {
            record.global = None;
        }
        rounds.push(record);
    }
    let final_metrics = rounds.last().map(|r| r.metrics.clone()).unwrap_or_default();
    let success_rate = match config.aggregation {
        AggregationRule::Krum { .. } => Some(metric_success_rate(&rounds, config.compromised)?),
        _ => None,
    };
    Ok(TrialReport {
        trial,
        seed: sim.seed,
        rounds,
        final_metrics,
        success_rate,
        attack_times: sim.attack_times,
    })
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    v.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

/// Averages trial results into a report. Trials must be in trial order.
pub fn assemble_report(config: &ExperimentConfig, trials: Vec<TrialReport>) -> MetricsReport {
    let metric = |name: &str| mean_of(trials.iter().map(|t| t.final_metrics.get(name).copied()));
    let times: Vec<f64> = trials.iter().flat_map(|t| t.attack_times.iter().copied()).collect();
    let timing = if times.is_empty() {
        AttackTiming::default()
    } else {
        let n = times.len() as f64;
        let mean = times.iter().sum::<f64>() / n;
        let var = times.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        AttackTiming {
            invocations: times.len(),
            mean_seconds: mean,
            std_seconds: var.sqrt(),
        }
    };
    MetricsReport {
        config: config.clone(),
        seed: config.seed,
        final_error_rate: metric(METRIC_ERROR_RATE),
        final_attacker_accuracy: metric(METRIC_ATTACKER_ACCURACY),
        final_test_loss: metric(METRIC_TEST_LOSS).unwrap_or(f64::NAN),
        success_rate: mean_of(trials.iter().map(|t| t.success_rate)),
        trials,
        timing,
    }
}

/// `config.trials` independent trials, run sequentially.
pub fn run_experiment(config: &ExperimentConfig) -> Result<MetricsReport> {
    config.validate()?;
    let data = ExperimentData::load(config)?;
    let trials = (0..config.trials)
        .map(|t| run_trial(config, &data, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble_report(config, trials))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(super) fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            clients: 6,
            compromised: 0,
            rounds: 3,
            noniid: 0.5,
            model: ModelConfig {
                kind: ModelKind::Mlp,
                hidden_dim: 4,
            },
            data: DataSource::SyntheticClassification {
                train_size: 120,
                test_size: 60,
                dim: 3,
                classes: 3,
                separation: 4.0,
            },
            aggregation: AggregationRule::Mean,
            attack: AttackConfig::default(),
            train: Default::default(),
            seed: 7,
            trials: 1,
            theta_bound: 10.0,
            record_globals: false,
        }
    }

    #[test]
    fn single_round_matches_run_round() {
        let mut cfg = small_config();
        cfg.rounds = 1;
        cfg.record_globals = true;
        let report = run_experiment(&cfg).unwrap();
        let mut sim = Simulation::new(&cfg, &ExperimentData::Synthetic, 0).unwrap();
        let rec = run_round(&mut sim).unwrap();
        assert_eq!(report.trials[0].rounds[0], rec);
    }

    #[test]
    fn krum_round_selects_an_upload() {
        let mut cfg = small_config();
        cfg.aggregation = AggregationRule::Krum { assumed_compromised: 1 };
        cfg.compromised = 1;
        cfg.attack.kind = AttackKind::Gaussian;
        let mut sim = Simulation::new(&cfg, &ExperimentData::Synthetic, 0).unwrap();
        let rec = sim.run_round().unwrap();
        assert!(rec.selected_id.is_some());
        assert_eq!(rec.attack_success, Some(rec.selected_id == Some(0)));
    }

    #[test]
    fn gaussian_zero_sigma_is_honest() {
        let mut cfg = small_config();
        cfg.record_globals = true;
        let honest = run_experiment(&cfg).unwrap();
        cfg.compromised = 2;
        cfg.attack.kind = AttackKind::Gaussian;
        cfg.attack.gaussian_sigma = 0.0;
        let attacked = run_experiment(&cfg).unwrap();
        assert_eq!(honest.trials[0].rounds, attacked.trials[0].rounds);
    }

    #[test]
    fn config_rejects_bad_shapes() {
        let mut cfg = small_config();
        cfg.compromised = 6;
        assert!(cfg.validate().unwrap_err().to_string().contains("compromised"));
        let mut cfg = small_config();
        cfg.model.kind = ModelKind::LinearRegression;
        assert!(cfg.validate().is_err());
        let mut cfg = small_config();
        cfg.compromised = 1;
        cfg.attack.kind = AttackKind::CmpKrumOriginal;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn success_rate_metric() {
        let rec = |id| RoundRecord {
            round: 0,
            global: None,
            selected_id: id,
            attack_success: None,
            metrics: BTreeMap::new(),
        };
        assert_eq!(metric_success_rate(&[rec(Some(0)), rec(Some(3))], 0).unwrap(), 0.0);
        assert_eq!(metric_success_rate(&[rec(Some(0)), rec(Some(1))], 2).unwrap(), 1.0);
        assert_eq!(metric_success_rate(&[rec(Some(0)), rec(Some(5))], 2).unwrap(), 0.5);
        assert!(metric_success_rate(&[rec(None)], 2).is_err());
    }
}
