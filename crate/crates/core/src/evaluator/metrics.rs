use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::item::EvalItem;

/// Fraction of `item_set` predicted correctly.
pub fn accuracy<'a, I>(predictions: &BTreeMap<String, bool>, item_set: I) -> Result<f64, EvalError>
where
    I: IntoIterator<Item = &'a String>,
{
    let mut n = 0usize;
    let mut correct = 0usize;
    for id in item_set {
        let &ok = predictions
            .get(id)
            .ok_or_else(|| EvalError::MissingPrediction(id.clone()))?;
        n += 1;
        correct += ok as usize;
    }
    if n == 0 {
        return Err(EvalError::EmptySet);
    }
    Ok(correct as f64 / n as f64)
}

/// One training run's outcome on an evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub condition: String,
    pub seed: u64,
    pub correctness: BTreeMap<String, bool>,
    pub accuracy: f64,
}

impl RunResult {
    pub fn new<'a, I>(
        condition: impl Into<String>,
        seed: u64,
        correctness: BTreeMap<String, bool>,
        item_set: I,
    ) -> Result<Self, EvalError>
    where
        I: IntoIterator<Item = &'a String>,
    {
        let accuracy = accuracy(&correctness, item_set)?;
        Ok(Self {
            condition: condition.into(),
            seed,
            correctness,
            accuracy,
        })
    }
}

/// Mean and population standard deviation of run accuracies.
pub fn aggregate_runs(runs: &[RunResult], condition: &str) -> Result<(f64, f64), EvalError> {
    if runs.is_empty() {
        return Err(EvalError::NoRuns);
    }
    if let Some(r) = runs.iter().find(|r| r.condition != condition) {
        return Err(EvalError::MixedConditions {
            expected: condition.to_string(),
            found: r.condition.clone(),
        });
    }
    let accs: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
    Ok(mean_std(&accs))
}

pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Change in mean accuracy against the model retrained on the original batch.
pub fn delta_accuracy(condition_mean: f64, retrained_mean: f64) -> f64 {
    condition_mean - retrained_mean
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub condition: String,
    pub seed: u64,
    pub target_accuracy: f64,
    pub control_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: String,
    pub target_mean: f64,
    pub target_std: f64,
    pub control_mean: f64,
    pub control_std: f64,
    /// Mean accuracy minus the retrained mean.
    pub target_delta: f64,
    pub control_delta: f64,
    /// Mean over seeds of the absolute per-seed change against retrained.
    pub target_abs_delta: f64,
    pub control_abs_delta: f64,
}

/// Summary of one condition's runs against the paired retrained runs.
pub fn summarize_condition(condition: &str, runs: &[&SeedResult], retrained: &[&SeedResult]) -> ConditionSummary {
    let ta: Vec<f64> = runs.iter().map(|r| r.target_accuracy).collect();
    let ca: Vec<f64> = runs.iter().map(|r| r.control_accuracy).collect();
    let (tm, ts) = mean_std(&ta);
    let (cm, cs) = mean_std(&ca);
    let (rt, _) = mean_std(&retrained.iter().map(|r| r.target_accuracy).collect::<Vec<_>>());
    let (rc, _) = mean_std(&retrained.iter().map(|r| r.control_accuracy).collect::<Vec<_>>());
    let n = runs.len() as f64;
    let abs = |f: fn(&SeedResult) -> f64| {
        runs.iter().zip(retrained).map(|(a, b)| (f(a) - f(b)).abs()).sum::<f64>() / n
    };
    ConditionSummary {
        condition: condition.to_string(),
        target_mean: tm,
        target_std: ts,
        control_mean: cm,
        control_std: cs,
        target_delta: tm - rt,
        control_delta: cm - rc,
        target_abs_delta: abs(|r| r.target_accuracy),
        control_abs_delta: abs(|r| r.control_accuracy),
    }
}

/// Predicts, for every relation, the object seen most often in training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MajorityBaseline {
    pub modal_object: BTreeMap<String, String>,
}

impl MajorityBaseline {
    /// Ties between equally frequent objects go to the lexicographically
    /// smallest string.
    pub fn fit(train_items: &[EvalItem]) -> Result<Self, EvalError> {
        let mut counts: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
        for item in train_items {
            let (Some(rel), Some(obj)) = (item.relation.as_deref(), item.object.as_deref()) else {
                return Err(EvalError::MissingRelation(item.item_id.clone()));
            };
            *counts.entry(rel).or_default().entry(obj).or_insert(0) += 1;
        }
        let modal_object = counts
            .into_iter()
            .map(|(rel, objs)| {
                // BTreeMap iterates ascending, so max_by keeping the first
                // maximum yields the smallest string among ties.
                let (obj, _) = objs
                    .into_iter()
                    .fold(None::<(&str, usize)>, |best, (o, c)| match best {
                        Some((_, bc)) if bc >= c => best,
                        _ => Some((o, c)),
                    })
                    .expect("relation has at least one object");
                (rel.to_string(), obj.to_string())
            })
            .collect();
        Ok(Self { modal_object })
    }

    pub fn predict(&self, item: &EvalItem) -> Result<bool, EvalError> {
        let (Some(rel), Some(obj)) = (item.relation.as_deref(), item.object.as_deref()) else {
            return Err(EvalError::MissingRelation(item.item_id.clone()));
        };
        let modal = self
            .modal_object
            .get(rel)
            .ok_or_else(|| EvalError::UnknownRelation(rel.to_string()))?;
        Ok(modal == obj)
    }

    pub fn predictions(&self, items: &[EvalItem]) -> Result<BTreeMap<String, bool>, EvalError> {
        items
            .iter()
            .map(|i| Ok((i.item_id.clone(), self.predict(i)?)))
            .collect()
    }
}
