//! Staged single → dual → full-view inference and exhaustive threshold
//! tuning.
//!
//! Stage `s < V` fuses the first `s` views of the policy order and stops when
//! the fused uncertainty is at or below threshold `s`. The last stage fuses
//! every view in model (dataset) order and always decides.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::ViewFeatures;
use crate::error::{Error, Result};
use crate::fusion::{combine_all, combine_pair};
use crate::model::ModelSet;
use crate::opinion::SubjectiveOpinion;

/// Default number of candidate values per threshold axis.
pub const DEFAULT_GRID: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagedDecisionPolicy {
    view_order: Vec<String>,
    /// One threshold per non-final stage.
    thresholds: Vec<f64>,
}

impl StagedDecisionPolicy {
    pub fn new(view_order: Vec<String>, thresholds: Vec<f64>) -> Result<Self> {
        if view_order.is_empty() {
            return Err(Error::Config("policy needs at least one view".to_string()));
        }
        if thresholds.len() + 1 != view_order.len() {
            return Err(Error::Config(format!(
                "{} views need {} thresholds, got {}",
                view_order.len(),
                view_order.len() - 1,
                thresholds.len()
            )));
        }
        if let Some(t) = thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::Config(format!("threshold {t} outside [0, 1]")));
        }
        let unique: BTreeSet<&String> = view_order.iter().collect();
        if unique.len() != view_order.len() {
            return Err(Error::Config(format!("repeated view in order {view_order:?}")));
        }
        Ok(Self {
            view_order,
            thresholds,
        })
    }

    pub fn three_stage(view_order: Vec<String>, t1: f64, t2: f64) -> Result<Self> {
        Self::new(view_order, vec![t1, t2])
    }

    pub fn view_order(&self) -> &[String] {
        &self.view_order
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn t1(&self) -> Option<f64> {
        self.thresholds.first().copied()
    }

    pub fn t2(&self) -> Option<f64> {
        self.thresholds.get(1).copied()
    }

    pub fn stages(&self) -> usize {
        self.view_order.len()
    }

    /// Views whose features are consumed by the time `stage` decides.
    pub fn views_at_stage(&self, stage: usize) -> &[String] {
        &self.view_order[..stage.min(self.view_order.len())]
    }

    fn check_models(&self, models: &ModelSet) -> Result<()> {
        let ours: BTreeSet<&str> = self.view_order.iter().map(String::as_str).collect();
        let ids = models.view_ids();
        let theirs: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
        if ours != theirs {
            return Err(Error::Config(format!(
                "policy views {:?} do not match model views {:?}",
                self.view_order, ids
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    /// 1-based stage that produced the decision.
    pub stage_used: usize,
    pub opinion: SubjectiveOpinion,
    pub predicted_class: usize,
    /// Uncertainty of every stage evaluated, in stage order.
    pub uncertainties: Vec<f64>,
}

impl PredictionRecord {
    pub fn stage_uncertainty(&self, stage: usize) -> Option<f64> {
        self.uncertainties.get(stage.checked_sub(1)?).copied()
    }

    /// Probability of class 1 under the deciding opinion.
    pub fn positive_score(&self) -> f64 {
        self.opinion.expected_probabilities().get(1).copied().unwrap_or(0.0)
    }
}

fn features<'a, S: ViewFeatures + ?Sized>(sample: &'a S, view: &str) -> Result<&'a [f64]> {
    sample.features(view).ok_or_else(|| {
        Error::Dimension(format!("sample {} has no features for view '{view}'", sample.sample_id()))
    })
}

fn tag_conflict(e: Error, sample_id: &str) -> Error {
    match e {
        Error::TotalConflict { remaining } => Error::SampleConflict {
            sample_id: sample_id.to_string(),
            remaining,
        },
        other => other,
    }
}

/// Fusion of every view in model order.
fn full_fusion<S: ViewFeatures + ?Sized>(sample: &S, models: &ModelSet) -> Result<SubjectiveOpinion> {
    let opinions = models
        .models()
        .iter()
        .map(|m| Ok(m.forward(features(sample, m.view_id())?)?.to_opinion()))
        .collect::<Result<Vec<_>>>()?;
    Ok(combine_all(&opinions)
        .map_err(|e| tag_conflict(e, sample.sample_id()))?
        .opinion)
}

/// Routes one sample through the stages. Views past the deciding stage are
/// never read.
pub fn staged_predict<S: ViewFeatures + ?Sized>(
    sample: &S,
    models: &ModelSet,
    policy: &StagedDecisionPolicy,
) -> Result<PredictionRecord> {
    policy.check_models(models)?;
    let mut uncertainties = Vec::with_capacity(policy.stages());
    let mut current: Option<SubjectiveOpinion> = None;
    for (s, &threshold) in policy.thresholds.iter().enumerate() {
        let view = &policy.view_order[s];
        let opinion = models.opinion(view, features(sample, view)?)?;
        let fused = match current {
            None => opinion,
            Some(prev) => {
                combine_pair(&prev, &opinion)
                    .map_err(|e| tag_conflict(e, sample.sample_id()))?
                    .opinion
            }
        };
        uncertainties.push(fused.uncertainty());
        if fused.uncertainty() <= threshold {
            return Ok(PredictionRecord {
                sample_id: sample.sample_id().to_string(),
                stage_used: s + 1,
                predicted_class: fused.predicted_class(),
                opinion: fused,
                uncertainties,
            });
        }
        current = Some(fused);
    }
    let full = full_fusion(sample, models)?;
    uncertainties.push(full.uncertainty());
    Ok(PredictionRecord {
        sample_id: sample.sample_id().to_string(),
        stage_used: policy.stages(),
        predicted_class: full.predicted_class(),
        opinion: full,
        uncertainties,
    })
}

/// Every stage's fused opinion for one sample, regardless of thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct StageCandidates {
    pub opinions: Vec<SubjectiveOpinion>,
}

impl StageCandidates {
    pub fn uncertainties(&self) -> Vec<f64> {
        self.opinions.iter().map(|o| o.uncertainty()).collect()
    }

    pub fn predictions(&self) -> Vec<usize> {
        self.opinions.iter().map(|o| o.predicted_class()).collect()
    }
}

pub fn stage_candidates<S: ViewFeatures + ?Sized>(
    sample: &S,
    models: &ModelSet,
    view_order: &[String],
) -> Result<StageCandidates> {
    let mut opinions = Vec::with_capacity(view_order.len());
    let mut current: Option<SubjectiveOpinion> = None;
    for view in &view_order[..view_order.len().saturating_sub(1)] {
        let opinion = models.opinion(view, features(sample, view)?)?;
        let fused = match current {
            None => opinion,
            Some(prev) => {
                combine_pair(&prev, &opinion)
                    .map_err(|e| tag_conflict(e, sample.sample_id()))?
                    .opinion
            }
        };
        opinions.push(fused.clone());
        current = Some(fused);
    }
    opinions.push(full_fusion(sample, models)?);
    Ok(StageCandidates { opinions })
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedThresholds {
    pub thresholds: Vec<f64>,
    pub correct: usize,
    pub n: usize,
}

impl TunedThresholds {
    pub fn t1(&self) -> f64 {
        self.thresholds[0]
    }

    pub fn t2(&self) -> f64 {
        self.thresholds[1]
    }
}

/// Exhaustive search over one grid axis per non-final stage.
///
/// `uncertainties[s][i]` is sample `i`'s fused uncertainty at stage `s + 1`;
/// `predictions[s][i]` its predicted class at stage `s + 1`, with one more
/// entry in `predictions` for the final stage. Cells are visited in
/// lexicographic order with the first axis outermost, and a cell that ties
/// the incumbent replaces it.
pub fn tune_threshold_list(
    uncertainties: &[Vec<f64>],
    predictions: &[Vec<usize>],
    labels: &[usize],
    grid: usize,
) -> Result<TunedThresholds> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::EmptyInput("no samples to tune on".to_string()));
    }
    if grid == 0 {
        return Err(Error::Config("grid size must be >= 1".to_string()));
    }
    if predictions.len() != uncertainties.len() + 1 {
        return Err(Error::Dimension(format!(
            "{} uncertainty stages need {} prediction stages, got {}",
            uncertainties.len(),
            uncertainties.len() + 1,
            predictions.len()
        )));
    }
    if uncertainties.iter().any(|u| u.len() != n) || predictions.iter().any(|p| p.len() != n) {
        return Err(Error::Dimension("per-sample vectors differ in length".to_string()));
    }
    let axes: Vec<Vec<f64>> = uncertainties
        .iter()
        .map(|u| {
            let lo = u.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            linspace(lo, hi, grid)
        })
        .collect();
    let correct_at: Vec<Vec<bool>> = predictions
        .iter()
        .map(|p| p.iter().zip(labels).map(|(a, b)| a == b).collect())
        .collect();

    let stages = axes.len();
    let mut best = TunedThresholds {
        thresholds: vec![0.0; stages],
        correct: 0,
        n,
    };
    let mut cell = vec![0usize; stages];
    loop {
        let thresholds: Vec<f64> = cell.iter().zip(&axes).map(|(i, a)| a[*i]).collect();
        let correct = (0..n)
            .filter(|&i| {
                let stage = (0..stages)
                    .find(|&s| uncertainties[s][i] <= thresholds[s])
                    .unwrap_or(stages);
                correct_at[stage][i]
            })
            .count();
        if correct >= best.correct {
            best.correct = correct;
            best.thresholds = thresholds;
        }
        // Odometer increment, last axis fastest.
        let mut axis = stages;
        loop {
            if axis == 0 {
                return Ok(best);
            }
            axis -= 1;
            cell[axis] += 1;
            if cell[axis] < grid {
                break;
            }
            cell[axis] = 0;
        }
        if stages == 0 {
            return Ok(best);
        }
    }
}

/// Predicted classes of one sample at the single-, dual- and full-view stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StagePredictions {
    pub single: usize,
    pub dual: usize,
    pub full: usize,
}

/// Grid search for `(t1, t2)` over `grid × grid` candidates spanning the
/// observed single- and dual-view uncertainty ranges.
pub fn tune_thresholds(
    single_u: &[f64],
    dual_u: &[f64],
    stage_preds: &[StagePredictions],
    labels: &[usize],
    grid: usize,
) -> Result<TunedThresholds> {
    let n = labels.len();
    if single_u.len() != n || dual_u.len() != n || stage_preds.len() != n {
        return Err(Error::Dimension(format!(
            "lengths differ: u' {}, u'' {}, predictions {}, labels {n}",
            single_u.len(),
            dual_u.len(),
            stage_preds.len()
        )));
    }
    let preds = vec![
        stage_preds.iter().map(|p| p.single).collect(),
        stage_preds.iter().map(|p| p.dual).collect(),
        stage_preds.iter().map(|p| p.full).collect(),
    ];
    tune_threshold_list(&[single_u.to_vec(), dual_u.to_vec()], &preds, labels, grid)
}

/// Validation accuracy of single views and view pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ViewAccuracies {
    pub single: BTreeMap<String, f64>,
    /// Keyed by the lexicographically ordered pair.
    pub pairs: BTreeMap<(String, String), f64>,
}

impl ViewAccuracies {
    pub fn insert_pair(&mut self, a: &str, b: &str, acc: f64) {
        self.pairs.insert(Self::key(a, b), acc);
    }

    pub fn pair(&self, a: &str, b: &str) -> Option<f64> {
        self.pairs.get(&Self::key(a, b)).copied()
    }

    fn key(a: &str, b: &str) -> (String, String) {
        if a <= b {
            (a.to_string(), b.to_string())
        } else {
            (b.to_string(), a.to_string())
        }
    }
}

/// Stage-1 view: best single-view accuracy. Stage-2 partner: best pairing
/// with it. The rest follow in id order. Ties go to the smaller view id; an
/// explicit order is returned as is.
pub fn select_view_order(metrics: &ViewAccuracies, explicit: Option<&[String]>) -> Result<Vec<String>> {
    if let Some(order) = explicit {
        return Ok(order.to_vec());
    }
    let mut best: Option<(&String, f64)> = None;
    for (id, &acc) in &metrics.single {
        if best.is_none_or(|(_, b)| acc > b) {
            best = Some((id, acc));
        }
    }
    let (first, _) = best.ok_or_else(|| Error::Config("no single-view accuracies".to_string()))?;
    let mut order = vec![first.clone()];
    let mut partner: Option<(&String, f64)> = None;
    for id in metrics.single.keys().filter(|id| *id != first) {
        let acc = metrics.pair(first, id).ok_or_else(|| {
            Error::Config(format!("missing pair accuracy for {first}+{id}"))
        })?;
        if partner.is_none_or(|(_, b)| acc > b) {
            partner = Some((id, acc));
        }
    }
    if let Some((p, _)) = partner {
        order.push(p.clone());
        order.extend(metrics.single.keys().filter(|id| *id != first && *id != p).cloned());
    }
    Ok(order)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageShare {
    pub stage: usize,
    pub count: usize,
    pub fraction: f64,
    pub views: Vec<String>,
}

/// Fraction of samples decided at each stage, with the views consumed there.
pub fn stage_distribution(records: &[PredictionRecord], policy: &StagedDecisionPolicy) -> Result<Vec<StageShare>> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no prediction records".to_string()));
    }
    let n = records.len() as f64;
    Ok((1..=policy.stages())
        .map(|stage| {
            let count = records.iter().filter(|r| r.stage_used == stage).count();
            StageShare {
                stage,
                count,
                fraction: count as f64 / n,
                views: policy.views_at_stage(stage).to_vec(),
            }
        })
        .collect())
}
