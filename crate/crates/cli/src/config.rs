use std::fs;
use std::path::{Path, PathBuf};

use fedpoison_core::ExperimentConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{file}: {source}")]
    Io {
        file: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Syntax errors, unknown keys and type mismatches.
    #[error("{file}:{line}:{column}: {message}")]
    Parse {
        file: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    /// A well-formed config that breaks an invariant.
    #[error("{file}{}: {message}", line.map(|l| format!(":{l}")).unwrap_or_default())]
    Invalid {
        file: PathBuf,
        line: Option<usize>,
        message: String,
    },
}

/// One swept field: a dotted path into the experiment config and the
/// values it takes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub path: String,
    pub values: Vec<Value>,
}

/// A base experiment plus one or two axes; cells are their cartesian
/// product, first axis outermost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base: ExperimentConfig,
    pub axes: Vec<SweepAxis>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigFile {
    Experiment(ExperimentConfig),
    Sweep(SweepSpec),
}

/// Random Krum and `E` instances checked against brute force.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSpec {
    pub instances: usize,
    pub max_clients: usize,
    pub max_dim: usize,
    pub seed: u64,
}

impl Default for OracleSpec {
    fn default() -> Self {
        OracleSpec {
            instances: 100,
            max_clients: 8,
            max_dim: 5,
            seed: 0,
        }
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path).map_err(|source| ConfigError::Io {
        file: path.to_path_buf(),
        source,
    })
}

fn parse_error(path: &Path, e: serde_json::Error) -> ConfigError {
    ConfigError::Parse {
        file: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string().split(" at line ").next().unwrap_or_default().to_string(),
    }
}

/// Line of the first config key mentioned in `message`.
fn locate(text: &str, message: &str) -> Option<usize> {
    message.split_whitespace().find_map(|word| {
        let word = word.trim_matches(|c: char| !(c.is_alphanumeric() || c == '_' || c == '.'));
        let key = word.rsplit('.').next().filter(|k| !k.is_empty())?;
        let quoted = format!("\"{key}\"");
        text.lines().position(|l| l.contains(&quoted)).map(|i| i + 1)
    })
}

fn invalid(path: &Path, text: &str, message: String) -> ConfigError {
    ConfigError::Invalid {
        file: path.to_path_buf(),
        line: locate(text, &message),
        message,
    }
}

/// An experiment config, or a sweep when the top-level object has `base`.
pub fn parse_config(path: impl AsRef<Path>) -> Result<ConfigFile, ConfigError> {
    let path = path.as_ref();
    let text = read(path)?;
    let raw: Value = serde_json::from_str(&text).map_err(|e| parse_error(path, e))?;
    if raw.get("base").is_some() {
        let spec: SweepSpec = serde_json::from_str(&text).map_err(|e| parse_error(path, e))?;
        spec.base
            .validate()
            .map_err(|e| invalid(path, &text, e.to_string()))?;
        cells(&spec).map_err(|m| invalid(path, &text, m))?;
        Ok(ConfigFile::Sweep(spec))
    } else {
        let config: ExperimentConfig = serde_json::from_str(&text).map_err(|e| parse_error(path, e))?;
        config
            .validate()
            .map_err(|e| invalid(path, &text, e.to_string()))?;
        Ok(ConfigFile::Experiment(config))
    }
}

pub fn parse_oracle(path: impl AsRef<Path>) -> Result<OracleSpec, ConfigError> {
    let path = path.as_ref();
    let text = read(path)?;
    let spec: OracleSpec = serde_json::from_str(&text).map_err(|e| parse_error(path, e))?;
    let problem = if spec.instances == 0 {
        Some("instances must be positive")
    } else if !(3..=8).contains(&spec.max_clients) {
        Some("max_clients must lie in [3, 8]")
    } else if !(1..=5).contains(&spec.max_dim) {
        Some("max_dim must lie in [1, 5]")
    } else {
        None
    };
    match problem {
        Some(m) => Err(invalid(path, &text, m.to_string())),
        None => Ok(spec),
    }
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), String> {
    let mut node = root;
    for key in path.split('.') {
        node = node
            .get_mut(key)
            .ok_or_else(|| format!("sweep path `{path}` is not a config field"))?;
    }
    *node = value;
    Ok(())
}

/// Labels and resolved configs of every sweep cell.
pub fn cells(spec: &SweepSpec) -> Result<Vec<(Vec<String>, ExperimentConfig)>, String> {
    if spec.axes.is_empty() || spec.axes.len() > 2 {
        return Err(format!("axes must hold one or two entries, found {}", spec.axes.len()));
    }
    let base = serde_json::to_value(&spec.base).map_err(|e| e.to_string())?;
    let mut grid: Vec<(Vec<String>, Value)> = vec![(Vec::new(), base)];
    for axis in &spec.axes {
        if axis.values.is_empty() {
            return Err(format!("sweep axis `{}` has no values", axis.path));
        }
        let mut next = Vec::with_capacity(grid.len() * axis.values.len());
        for (labels, cfg) in &grid {
            for v in &axis.values {
                let mut cfg = cfg.clone();
                set_path(&mut cfg, &axis.path, v.clone())?;
                let mut labels = labels.clone();
                labels.push(match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                });
                next.push((labels, cfg));
            }
        }
        grid = next;
    }
    grid.into_iter()
        .map(|(labels, v)| {
            let cfg: ExperimentConfig = serde_json::from_value(v)
                .map_err(|e| format!("cell {}: {e}", labels.join(",")))?;
            cfg.validate().map_err(|e| format!("cell {}: {e}", labels.join(",")))?;
            Ok((labels, cfg))
        })
        .collect()
}
