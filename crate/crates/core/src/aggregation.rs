//! Server-side aggregation rules: weighted mean, Krum and coordinate-wise
//! trimmed mean. Each rule is a pure function of one round's uploads.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numkit::{distance_unchecked, ParamVector};

const WEIGHT_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub params: ParamVector,
    pub weight: f64,
}

impl ClientUpdate {
    pub fn new(client_id: usize, params: ParamVector, weight: f64) -> Self {
        ClientUpdate {
            client_id,
            params,
            weight,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AggregationRule {
    Mean,
    /// `assumed_compromised` is the server's `m` in the `U − m − 2` neighbour count.
    Krum { assumed_compromised: usize },
    /// Values trimmed per side; unset means the true number of compromised
    /// clients, filled in by [`AggregationRule::resolved`].
    TrimmedMean {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        trim: Option<usize>,
    },
}

impl AggregationRule {
    pub fn apply(&self, updates: &[ClientUpdate]) -> Result<AggregationOutcome> {
        match *self {
            AggregationRule::Mean => aggregate_mean(updates),
            AggregationRule::Krum { assumed_compromised } => aggregate_krum(updates, assumed_compromised),
            AggregationRule::TrimmedMean { trim: Some(trim) } => aggregate_trimmed_mean(updates, trim),
            AggregationRule::TrimmedMean { trim: None } => Err(Error::InvalidArgument(
                "trimmed mean has no trim count; resolve it first".into(),
            )),
        }
    }

    /// Fills an unset trim count with `compromised`.
    pub fn resolved(self, compromised: usize) -> Self {
        match self {
            AggregationRule::TrimmedMean { trim: None } => AggregationRule::TrimmedMean { trim: Some(compromised) },
            other => other,
        }
    }

    pub fn is_krum(&self) -> bool {
        matches!(self, AggregationRule::Krum { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregationOutcome {
    pub global: ParamVector,
    /// Client id chosen by Krum.
    pub selected_id: Option<usize>,
    /// Krum scores, in the order of the input updates.
    pub scores: Option<Vec<f64>>,
}

fn check_round(updates: &[ClientUpdate]) -> Result<usize> {
    let first = updates.first().ok_or(Error::Empty("update list"))?;
    let dim = first.params.dim();
    for u in updates {
        check_dim(dim, u.params.dim())?;
    }
    Ok(dim)
}

/// `Σ p_i θ_i`, summed in list order.
pub fn aggregate_mean(updates: &[ClientUpdate]) -> Result<AggregationOutcome> {
    let dim = check_round(updates)?;
    let sum: f64 = updates.iter().map(|u| u.weight).sum();
    if updates.iter().any(|u| !(u.weight >= 0.0)) || (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::WeightSum { sum });
    }
    let mut global = vec![0.0; dim];
    for u in updates {
        for (g, v) in global.iter_mut().zip(u.params.iter()) {
            *g += u.weight * v;
        }
    }
    Ok(AggregationOutcome {
        global: ParamVector::new(global)?,
        selected_id: None,
        scores: None,
    })
}

fn neighbour_count(total: usize, assumed_compromised: usize) -> Result<usize> {
    match total.checked_sub(assumed_compromised + 2) {
        Some(k) if k >= 1 => Ok(k),
        _ => Err(Error::InvalidArgument(format!(
            "Krum needs U - m - 2 >= 1, got U = {total}, m = {assumed_compromised}"
        ))),
    }
}

/// Whether `m < (U − 2) / 2`, the regime where Krum's guarantees hold.
pub fn krum_guarantee_holds(total: usize, assumed_compromised: usize) -> bool {
    2 * assumed_compromised + 2 < total
}

fn score_at(index: usize, updates: &[ClientUpdate], k: usize, scratch: &mut Vec<(f64, usize)>) -> f64 {
    let me = updates[index].params.as_slice();
    scratch.clear();
    scratch.extend(
        updates
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != index)
            .map(|(_, u)| (distance_unchecked(me, u.params.as_slice()), u.client_id)),
    );
    scratch.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scratch[..k].iter().map(|(d, _)| d).sum()
}

/// Sum of distances from `client_id`'s update to its `U − m − 2` nearest
/// other updates (nearest first, ties to the lower client id).
pub fn krum_score(client_id: usize, updates: &[ClientUpdate], assumed_compromised: usize) -> Result<f64> {
    check_round(updates)?;
    let k = neighbour_count(updates.len(), assumed_compromised)?;
    let index = updates
        .iter()
        .position(|u| u.client_id == client_id)
        .ok_or_else(|| Error::InvalidArgument(format!("client {client_id} not in round")))?;
    Ok(score_at(index, updates, k, &mut Vec::with_capacity(updates.len())))
}

/// All Krum scores, in input order.
pub fn krum_scores(updates: &[ClientUpdate], assumed_compromised: usize) -> Result<Vec<f64>> {
    check_round(updates)?;
    let k = neighbour_count(updates.len(), assumed_compromised)?;
    let mut scratch = Vec::with_capacity(updates.len());
    Ok((0..updates.len())
        .map(|i| score_at(i, updates, k, &mut scratch))
        .collect())
}

/// Selects the update with the smallest Krum score (ties to the lowest
/// client id) and returns it unchanged as the global model.
pub fn aggregate_krum(updates: &[ClientUpdate], assumed_compromised: usize) -> Result<AggregationOutcome> {
    let scores = krum_scores(updates, assumed_compromised)?;
    if !krum_guarantee_holds(updates.len(), assumed_compromised) {
        log::warn!(
            "Krum with m = {assumed_compromised} of U = {} clients is outside m < (U - 2) / 2",
            updates.len()
        );
    }
    let best = krum_argmin(updates, &scores);
    Ok(AggregationOutcome {
        global: updates[best].params.clone(),
        selected_id: Some(updates[best].client_id),
        scores: Some(scores),
    })
}

pub(crate) fn krum_argmin(updates: &[ClientUpdate], scores: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..updates.len() {
        let ord = scores[i].total_cmp(&scores[best]);
        if ord.is_lt() || (ord.is_eq() && updates[i].client_id < updates[best].client_id) {
            best = i;
        }
    }
    best
}

/// Per coordinate: drop the `trim` largest and `trim` smallest values and
/// average the rest with uniform weight.
pub fn aggregate_trimmed_mean(updates: &[ClientUpdate], trim: usize) -> Result<AggregationOutcome> {
    let dim = check_round(updates)?;
    let u = updates.len();
    if 2 * trim >= u {
        return Err(Error::InvalidArgument(format!(
            "trimmed mean needs 2k < U, got k = {trim}, U = {u}"
        )));
    }
    let kept = (u - 2 * trim) as f64;
    let mut column = vec![0.0; u];
    let global = (0..dim)
        .map(|c| {
            for (slot, upd) in column.iter_mut().zip(updates) {
                *slot = upd.params[c];
            }
            column.sort_by(f64::total_cmp);
            column[trim..u - trim].iter().sum::<f64>() / kept
        })
        .collect();
    Ok(AggregationOutcome {
        global: ParamVector::new(global)?,
        selected_id: None,
        scores: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn round_1d(values: &[f64]) -> Vec<ClientUpdate> {
        let w = 1.0 / values.len() as f64;
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| ClientUpdate::new(i, ParamVector::new(vec![v]).unwrap(), w))
            .collect()
    }

    #[test]
    fn mean_examples() {
        let a = ParamVector::new(vec![1.5, -2.0]).unwrap();
        let same = vec![
            ClientUpdate::new(0, a.clone(), 0.2),
            ClientUpdate::new(1, a.clone(), 0.3),
            ClientUpdate::new(2, a.clone(), 0.5),
        ];
        assert_eq!(aggregate_mean(&same).unwrap().global, a);

        let mid = round_1d(&[0.0, 2.0]);
        assert_eq!(aggregate_mean(&mid).unwrap().global[0], 1.0);

        let weighted = vec![
            ClientUpdate::new(0, ParamVector::new(vec![0.0]).unwrap(), 0.25),
            ClientUpdate::new(1, ParamVector::new(vec![4.0]).unwrap(), 0.75),
        ];
        let out = aggregate_mean(&weighted).unwrap();
        assert_eq!(out.global[0], 3.0);
        assert_eq!(out.selected_id, None);
    }

    #[test]
    fn mean_errors() {
        assert!(matches!(aggregate_mean(&[]), Err(Error::Empty(_))));
        let bad = vec![
            ClientUpdate::new(0, ParamVector::new(vec![0.0]).unwrap(), 0.5),
            ClientUpdate::new(1, ParamVector::new(vec![4.0]).unwrap(), 0.6),
        ];
        assert!(matches!(aggregate_mean(&bad), Err(Error::WeightSum { .. })));
        let mixed = vec![
            ClientUpdate::new(0, ParamVector::new(vec![0.0]).unwrap(), 0.5),
            ClientUpdate::new(1, ParamVector::new(vec![4.0, 1.0]).unwrap(), 0.5),
        ];
        assert!(matches!(aggregate_mean(&mixed), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn krum_worked_instance() {
        let r = round_1d(&[0.0, 0.1, 0.2, 5.0, 0.15]);
        let s = |id| krum_score(id, &r, 1).unwrap();
        assert!((s(4) - 0.10).abs() < 1e-12);
        assert!((s(3) - 9.65).abs() < 1e-12);
        let expected = [0.25, 0.15, 0.15, 9.65, 0.10];
        let out = aggregate_krum(&r, 1).unwrap();
        for (got, want) in out.scores.as_ref().unwrap().iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        assert_eq!(out.selected_id, Some(4));
        assert_eq!(out.global, r[4].params);
    }

    #[test]
    fn krum_identical_updates() {
        let r = round_1d(&[0.7, 0.7, 0.7]);
        let out = aggregate_krum(&r, 0).unwrap();
        assert_eq!(out.selected_id, Some(0));
        assert!(out.scores.unwrap().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn krum_tie_uses_client_id_not_position() {
        let mut r = round_1d(&[1.0, 1.0, 1.0]);
        r[0].client_id = 9;
        let out = aggregate_krum(&r, 0).unwrap();
        assert_eq!(out.selected_id, Some(1));
    }

    #[test]
    fn krum_rejects_small_rounds() {
        let r = round_1d(&[0.0, 1.0, 2.0]);
        assert!(aggregate_krum(&r, 1).is_err());
        assert!(krum_score(0, &r, 1).is_err());
        assert!(krum_score(7, &r, 0).is_err());
        assert!(!krum_guarantee_holds(6, 2));
        assert!(krum_guarantee_holds(7, 2));
    }

    #[test]
    fn trimmed_mean_examples() {
        let r = round_1d(&[1.0, 2.0, 3.0, 4.0, 100.0]);
        assert_eq!(aggregate_trimmed_mean(&r, 1).unwrap().global[0], 3.0);
        assert_eq!(aggregate_trimmed_mean(&r, 0).unwrap().global[0], 22.0);
        let flat = round_1d(&[0.3; 6]);
        for k in 0..3 {
            assert_eq!(aggregate_trimmed_mean(&flat, k).unwrap().global[0], 0.3);
        }
        assert!(aggregate_trimmed_mean(&flat, 3).is_err());
    }

    #[test]
    fn rule_dispatch() {
        let r = round_1d(&[0.0, 0.1, 0.2, 5.0, 0.15]);
        let krum = AggregationRule::Krum { assumed_compromised: 1 };
        assert_eq!(krum.apply(&r).unwrap().selected_id, Some(4));
        assert!(krum.is_krum());
        let tm = AggregationRule::TrimmedMean { trim: Some(1) };
        assert!((tm.apply(&r).unwrap().global[0] - 0.15).abs() < 1e-12);
        let unset = AggregationRule::TrimmedMean { trim: None };
        assert!(unset.apply(&r).is_err());
        assert_eq!(unset.resolved(1), tm);
        assert_eq!(krum.resolved(3), krum);
    }
}
