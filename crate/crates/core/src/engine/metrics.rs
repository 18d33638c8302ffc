use crate::datakit::LabelMap;
use crate::error::{Error, Result};
use crate::models::{predict, Dataset, Labels, ModelSpec};
use crate::numkit::ParamVector;

use super::RoundRecord;

fn predicted_classes(spec: &ModelSpec, params: &ParamVector, test: &Dataset) -> Result<(Vec<usize>, Vec<usize>)> {
    if !spec.is_classifier() {
        return Err(Error::InvalidArgument(
            "classification metric on a regression model; use the normalized test loss".into(),
        ));
    }
    let truth = test
        .labels()
        .classes()
        .ok_or_else(|| Error::InvalidArgument("classification metric needs class labels".into()))?;
    if truth.is_empty() {
        return Err(Error::Empty("test set"));
    }
    match predict(spec, params, test.features())? {
        Labels::Classes(pred) => Ok((pred, truth.to_vec())),
        Labels::Targets(_) => unreachable!("classifier predicts classes"),
    }
}

/// Fraction of test examples misclassified.
pub fn metric_error_rate(spec: &ModelSpec, params: &ParamVector, test: &Dataset) -> Result<f64> {
    let (pred, truth) = predicted_classes(spec, params, test)?;
    let wrong = pred.iter().zip(&truth).filter(|(p, t)| p != t).count();
    Ok(wrong as f64 / truth.len() as f64)
}

/// Fraction of test examples predicted as `map(true label)`.
pub fn metric_attacker_accuracy(spec: &ModelSpec, params: &ParamVector, test: &Dataset, map: &LabelMap) -> Result<f64> {
    let (pred, truth) = predicted_classes(spec, params, test)?;
    let hits = pred.iter().zip(&truth).filter(|&(&p, &t)| p == map.apply(t)).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Fraction of rounds in which Krum selected one of the first
/// `num_compromised` client ids.
pub fn metric_success_rate(records: &[RoundRecord], num_compromised: usize) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Empty("round records"));
    }
    let mut hits = 0;
    for r in records {
        match r.selected_id {
            Some(id) if id < num_compromised => hits += 1,
            Some(_) => {}
            None => {
                return Err(Error::InvalidArgument(
                    "successful attacking rate is only defined for Krum rounds".into(),
                ))
            }
        }
    }
    Ok(hits as f64 / records.len() as f64)
}
