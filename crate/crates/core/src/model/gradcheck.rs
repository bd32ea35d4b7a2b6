use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::mlp::EvidentialClassifier;
use super::train::{batch_objective, BatchSource};
use crate::data::{LabeledSample, ViewFeatures};
use crate::error::{Error, Result};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct CoordinateCheck {
    pub model: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientReport {
    pub eta: f64,
    pub checks: Vec<CoordinateCheck>,
}

impl GradientReport {
    pub fn max_relative_error(&self) -> f64 {
        self.checks.iter().map(|c| c.relative_error).fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.checks.iter().all(|c| c.analytic.is_finite() && c.numeric.is_finite())
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

struct SampleBatch<'a> {
    inputs: Vec<Vec<&'a [f64]>>,
    classes: Vec<usize>,
}

impl BatchSource for SampleBatch<'_> {
    fn len(&self) -> usize {
        self.inputs.len()
    }

    fn input(&self, sample: usize, view: usize) -> &[f64] {
        self.inputs[sample][view]
    }

    fn class(&self, sample: usize) -> usize {
        self.classes[sample]
    }
}

/// Compares analytic gradients of the summed fused-plus-per-view objective
/// against central finite differences on up to `coordinates` randomly chosen
/// parameters.
pub fn gradient_check(
    models: &[EvidentialClassifier],
    batch: &[LabeledSample],
    eta: f64,
    coordinates: usize,
    seed: u64,
) -> Result<GradientReport> {
    if models.is_empty() {
        return Err(Error::EmptyInput("no models to check".to_string()));
    }
    if batch.is_empty() {
        return Err(Error::EmptyInput("empty gradient-check batch".to_string()));
    }
    let mut inputs = Vec::with_capacity(batch.len());
    for s in batch {
        let row = models
            .iter()
            .map(|m| {
                s.features(m.view_id()).ok_or_else(|| {
                    Error::Dimension(format!("sample {} lacks view '{}'", s.sample_id, m.view_id()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        inputs.push(row);
    }
    let source = SampleBatch {
        inputs,
        classes: batch.iter().map(|s| s.label.class()).collect(),
    };

    let (_, analytic) = batch_objective(models, &source, eta, true)?;
    let offsets: Vec<usize> = models
        .iter()
        .scan(0, |acc, m| {
            let start = *acc;
            *acc += m.params().len();
            Some(start)
        })
        .collect();
    let total: usize = models.iter().map(|m| m.params().len()).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = sample(&mut rng, total, coordinates.min(total)).into_vec();
    picks.sort_unstable();

    let mut probe = models.to_vec();
    let mut checks = Vec::with_capacity(picks.len());
    for flat in picks {
        let model = offsets.iter().rposition(|o| *o <= flat).unwrap();
        let index = flat - offsets[model];
        let original = probe[model].params()[index];
        probe[model].params_mut()[index] = original + FD_STEP;
        let (up, _) = batch_objective(&probe, &source, eta, false)?;
        probe[model].params_mut()[index] = original - FD_STEP;
        let (down, _) = batch_objective(&probe, &source, eta, false)?;
        probe[model].params_mut()[index] = original;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let a = analytic[model][index];
        checks.push(CoordinateCheck {
            model,
            index,
            analytic: a,
            numeric,
            relative_error: relative_error(a, numeric),
        });
    }
    Ok(GradientReport { eta, checks })
}
