use serde::{Deserialize, Serialize};

use crate::aggregation::{krum_guarantee_holds, AggregationRule};
use crate::attacks::{AlphaMethod, CmpHyper, KnowledgeLevel, NkbConfig, Objective, PartialVariant};
use crate::error::{Error, Result};
use crate::models::{ModelKind, TrainConfig};

/// Where training and test data come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    /// Gaussian blobs, regenerated for every trial.
    SyntheticClassification {
        train_size: usize,
        test_size: usize,
        dim: usize,
        classes: usize,
        separation: f64,
    },
    /// Noisy linear targets, regenerated for every trial.
    SyntheticRegression {
        train_size: usize,
        test_size: usize,
        dim: usize,
        noise: f64,
    },
    /// IDX image/label file pairs. `limit` keeps the first rows of each split.
    Idx {
        train_images: String,
        train_labels: String,
        test_images: String,
        test_labels: String,
        #[serde(default)]
        limit: Option<usize>,
    },
    /// Headerless numeric CSV with the target in the last column.
    Csv { train: String, test: String },
}

impl DataSource {
    pub fn is_classification(&self) -> bool {
        !matches!(self, DataSource::SyntheticRegression { .. } | DataSource::Csv { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Hidden width; only read for the MLP.
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
}

fn default_hidden() -> usize {
    16
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    /// Compromised clients behave honestly.
    None,
    Gaussian,
    LabelFlip,
    CmpMean,
    CmpKrumOriginal,
    CmpKrumSimplified,
    CmpNkb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub kind: AttackKind,
    #[serde(default = "default_knowledge")]
    pub knowledge: KnowledgeLevel,
    #[serde(default = "default_objective")]
    pub objective: Objective,
    /// Attacker-desired label for each true label; defaults to `l -> (l - 1) mod C`.
    #[serde(default)]
    pub label_map: Option<Vec<usize>>,
    #[serde(default = "default_sigma")]
    pub gaussian_sigma: f64,
    #[serde(default)]
    pub mean_variant: PartialVariant,
    #[serde(default)]
    pub cmp: CmpHyper,
    #[serde(default)]
    pub alpha: AlphaMethod,
    #[serde(default)]
    pub nkb: NkbConfig,
    /// Training used to build the targeted attacker's `θ*`.
    #[serde(default = "default_target_training")]
    pub target_training: TrainConfig,
}

fn default_knowledge() -> KnowledgeLevel {
    KnowledgeLevel::Full
}

fn default_objective() -> Objective {
    Objective::Targeted
}

fn default_sigma() -> f64 {
    1.0
}

fn default_target_training() -> TrainConfig {
    TrainConfig {
        epochs: 20,
        ..TrainConfig::default()
    }
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            kind: AttackKind::None,
            knowledge: default_knowledge(),
            objective: default_objective(),
            label_map: None,
            gaussian_sigma: default_sigma(),
            mean_variant: PartialVariant::default(),
            cmp: CmpHyper::default(),
            alpha: AlphaMethod::default(),
            nkb: NkbConfig::default(),
            target_training: default_target_training(),
        }
    }
}

/// One experiment: `trials` independent runs of `rounds` communication
/// rounds. Compromised clients are ids `0..compromised`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub clients: usize,
    #[serde(default)]
    pub compromised: usize,
    pub rounds: usize,
    /// Non-i.i.d. degree; ignored for regression data, which is split uniformly.
    #[serde(default = "default_noniid")]
    pub noniid: f64,
    pub model: ModelConfig,
    pub data: DataSource,
    #[serde(default = "default_aggregation")]
    pub aggregation: AggregationRule,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Half-width of the feasible parameter box.
    #[serde(default = "default_bound")]
    pub theta_bound: f64,
    /// Keep every round's global model in the report.
    #[serde(default)]
    pub record_globals: bool,
}

fn default_noniid() -> f64 {
    0.5
}

fn default_aggregation() -> AggregationRule {
    AggregationRule::Mean
}

fn default_trials() -> usize {
    1
}

fn default_bound() -> f64 {
    10.0
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.clients == 0 {
            return bad("clients must be positive".into());
        }
        if self.compromised >= self.clients {
            return bad(format!(
                "compromised ({}) must be less than clients ({})",
                self.compromised, self.clients
            ));
        }
        if self.rounds == 0 {
            return bad("rounds must be at least 1".into());
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.noniid) {
            return bad(format!("noniid ({}) must lie in [0, 1]", self.noniid));
        }
        if !(self.theta_bound > 0.0 && self.theta_bound.is_finite()) {
            return bad(format!("theta_bound ({}) must be positive", self.theta_bound));
        }
        if self.model.kind == ModelKind::Mlp && self.model.hidden_dim == 0 {
            return bad("model.hidden_dim must be positive".into());
        }
        let classifier = self.model.kind != ModelKind::LinearRegression;
        if classifier != self.data.is_classification() {
            return bad(format!(
                "model.kind {:?} does not match the {} data source",
                self.model.kind,
                if self.data.is_classification() { "classification" } else { "regression" }
            ));
        }
        match self.aggregation.resolved(self.compromised) {
            AggregationRule::TrimmedMean { trim: Some(trim) } if 2 * trim >= self.clients => {
                return bad(format!(
                    "aggregation.trim ({trim}) must satisfy 2 * trim < clients ({})",
                    self.clients
                ))
            }
            AggregationRule::Krum { assumed_compromised } if !krum_guarantee_holds(self.clients, assumed_compromised) => {
                log::warn!(
                    "Krum with m = {assumed_compromised} and {} clients is outside 2m + 2 < U",
                    self.clients
                );
            }
            _ => {}
        }
        self.validate_attack(classifier)
    }

    fn validate_attack(&self, classifier: bool) -> Result<()> {
        let a = &self.attack;
        let bad = |m: String| Err(Error::AttackConfig(m));
        if a.kind == AttackKind::None || self.compromised == 0 {
            return Ok(());
        }
        let needs_classes = matches!(a.kind, AttackKind::LabelFlip | AttackKind::CmpNkb)
            || (a.objective == Objective::Targeted
                && matches!(a.kind, AttackKind::CmpMean | AttackKind::CmpKrumOriginal | AttackKind::CmpKrumSimplified));
        if needs_classes && !classifier {
            return bad(format!("attack.kind {:?} with this objective needs a classifier", a.kind));
        }
        match a.kind {
            AttackKind::CmpKrumOriginal | AttackKind::CmpKrumSimplified => {
                if !self.aggregation.is_krum() {
                    return bad("Krum attacks need aggregation.rule = krum".into());
                }
                if a.knowledge == KnowledgeLevel::None {
                    return bad("Krum attacks need attack.knowledge full or partial".into());
                }
                a.cmp.validate()?;
            }
            AttackKind::CmpMean if a.knowledge == KnowledgeLevel::None => {
                return bad("cmp-mean needs attack.knowledge full or partial".into());
            }
            AttackKind::CmpNkb => {
                if a.knowledge != KnowledgeLevel::None {
                    return bad("cmp-nkb runs with attack.knowledge = none".into());
                }
                a.nkb.validate()?;
            }
            AttackKind::Gaussian if !(a.gaussian_sigma >= 0.0 && a.gaussian_sigma.is_finite()) => {
                return bad(format!("attack.gaussian_sigma ({}) is invalid", a.gaussian_sigma));
            }
            _ => {}
        }
        if let AttackKind::CmpMean = a.kind {
            if a.objective == Objective::Untargeted {
                a.cmp.validate()?;
            }
        }
        Ok(())
    }
}
