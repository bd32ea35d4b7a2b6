//! Joint training of all per-view classifiers on the fused-plus-per-view
//! evidential objective.

use serde::{Deserialize, Serialize};

use super::loss::{anneal_coefficient, sample_loss_with_grad};
use super::mlp::{Activation, EvidentialClassifier};
use super::ModelSet;
use crate::data::{MultiViewDataset, Split};
use crate::error::{Error, Result};
use crate::fusion::{combine_masses, combine_masses_backward, Masses, PairTape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    PlainGradientDescent,
    #[default]
    AdaptiveMoments,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" | "plain-gradient-descent" => Ok(Optimizer::PlainGradientDescent),
            "adam" | "adaptive-moments" => Ok(Optimizer::AdaptiveMoments),
            other => Err(Error::Config(format!("unknown optimizer '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Epochs over which the KL weight ramps linearly from 0 to 1.
    pub anneal_epochs: usize,
    /// 0 means full batch.
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 1e-3,
            anneal_epochs: 50,
            batch_size: 0,
            optimizer: Optimizer::AdaptiveMoments,
            seed: 0,
            hidden: vec![64],
            activation: Activation::Tanh,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".to_string()));
        }
        if self.anneal_epochs == 0 {
            return Err(Error::Config("anneal_epochs must be >= 1".to_string()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be > 0".to_string()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be >= 1".to_string()));
        }
        Ok(())
    }

    /// Per-view initialization seed.
    pub fn view_seed(&self, view_index: usize) -> u64 {
        self.seed
            .wrapping_add((view_index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

/// Rows of a batch, addressed by sample and view position.
pub(crate) trait BatchSource {
    fn len(&self) -> usize;
    fn input(&self, sample: usize, view: usize) -> &[f64];
    fn class(&self, sample: usize) -> usize;
}

pub(crate) struct DatasetRows<'a> {
    pub dataset: &'a MultiViewDataset,
    pub rows: &'a [usize],
}

impl BatchSource for DatasetRows<'_> {
    fn len(&self) -> usize {
        self.rows.len()
    }

    fn input(&self, sample: usize, view: usize) -> &[f64] {
        self.dataset.views()[view].row(self.rows[sample])
    }

    fn class(&self, sample: usize) -> usize {
        self.dataset.labels()[self.rows[sample]]
    }
}

fn masses_from_evidence(evidence: &[f64]) -> (Masses, f64) {
    let k = evidence.len() as f64;
    let s = evidence.iter().sum::<f64>() + k;
    (
        Masses {
            beliefs: evidence.iter().map(|e| e / s).collect(),
            uncertainty: k / s,
        },
        s,
    )
}

/// Objective for one sample: the fused loss plus every view's loss. When
/// `grads` is given, parameter gradients are accumulated into it.
pub(crate) fn sample_objective(
    models: &[EvidentialClassifier],
    inputs: &[&[f64]],
    class: usize,
    eta: f64,
    grads: Option<&mut [Vec<f64>]>,
) -> Result<f64> {
    let k = models[0].class_count();
    let traces = models
        .iter()
        .zip(inputs)
        .map(|(m, x)| m.forward_trace(x))
        .collect::<Result<Vec<_>>>()?;

    let mut total = 0.0;
    let mut grad_evidence = Vec::with_capacity(models.len());
    for t in &traces {
        let params: Vec<f64> = t.evidence.iter().map(|e| e + 1.0).collect();
        let (loss, g) = sample_loss_with_grad(&params, class, eta);
        total += loss;
        grad_evidence.push(g);
    }

    let (masses, strengths): (Vec<Masses>, Vec<f64>) =
        traces.iter().map(|t| masses_from_evidence(&t.evidence)).unzip();
    let mut folds: Vec<Masses> = vec![masses[0].clone()];
    let mut tapes: Vec<PairTape> = Vec::with_capacity(masses.len().saturating_sub(1));
    for m in &masses[1..] {
        let tape = combine_masses(folds.last().unwrap(), m)?;
        folds.push(tape.out.clone());
        tapes.push(tape);
    }
    let fused = folds.last().unwrap();
    if !(fused.uncertainty > 0.0) {
        return Err(Error::DegenerateOpinion(
            "fused uncertainty underflowed to zero".to_string(),
        ));
    }
    let fused_strength = k as f64 / fused.uncertainty;
    let fused_params: Vec<f64> = fused
        .beliefs
        .iter()
        .map(|b| b * fused_strength + 1.0)
        .collect();
    let (fused_loss, g_fused) = sample_loss_with_grad(&fused_params, class, eta);
    total += fused_loss;

    let Some(grads) = grads else {
        return Ok(total);
    };

    // d_k = b_k S + 1 with S = K / u.
    let g_strength: f64 = g_fused.iter().zip(&fused.beliefs).map(|(g, b)| g * b).sum();
    let mut g_acc = Masses {
        beliefs: g_fused.iter().map(|g| g * fused_strength).collect(),
        uncertainty: -g_strength * k as f64 / (fused.uncertainty * fused.uncertainty),
    };
    let mut g_masses: Vec<Option<Masses>> = vec![None; masses.len()];
    for v in (1..masses.len()).rev() {
        let (g_left, g_right) = combine_masses_backward(&folds[v - 1], &masses[v], &tapes[v - 1], &g_acc);
        g_masses[v] = Some(g_right);
        g_acc = g_left;
    }
    g_masses[0] = Some(g_acc);

    for (v, model) in models.iter().enumerate() {
        let gm = g_masses[v].as_ref().unwrap();
        let s = strengths[v];
        let e = &traces[v].evidence;
        // b_k = e_k / S, u = K / S, S = Σe + K.
        let cross: f64 = gm.beliefs.iter().zip(e).map(|(g, e)| g * e).sum();
        let shared = -cross / (s * s) - gm.uncertainty * k as f64 / (s * s);
        for (j, ge) in grad_evidence[v].iter_mut().enumerate() {
            *ge += gm.beliefs[j] / s + shared;
        }
        model.backward(&traces[v], &grad_evidence[v], &mut grads[v]);
    }
    Ok(total)
}

/// Summed objective over a batch, with parameter gradients per model.
pub(crate) fn batch_objective(
    models: &[EvidentialClassifier],
    batch: &dyn BatchSource,
    eta: f64,
    want_grad: bool,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut grads: Vec<Vec<f64>> = if want_grad {
        models.iter().map(|m| vec![0.0; m.params().len()]).collect()
    } else {
        Vec::new()
    };
    let mut total = 0.0;
    let mut inputs: Vec<&[f64]> = Vec::with_capacity(models.len());
    for i in 0..batch.len() {
        inputs.clear();
        inputs.extend((0..models.len()).map(|v| batch.input(i, v)));
        let g = if want_grad { Some(grads.as_mut_slice()) } else { None };
        total += sample_objective(models, &inputs, batch.class(i), eta, g)?;
    }
    Ok((total, grads))
}

struct AdamState {
    first: Vec<f64>,
    second: Vec<f64>,
    step: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    fn new(n: usize) -> Self {
        Self {
            first: vec![0.0; n],
            second: vec![0.0; n],
            step: 0,
        }
    }

    fn apply(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step);
        let c2 = 1.0 - BETA2.powi(self.step);
        for i in 0..params.len() {
            self.first[i] = BETA1 * self.first[i] + (1.0 - BETA1) * grad[i];
            self.second[i] = BETA2 * self.second[i] + (1.0 - BETA2) * grad[i] * grad[i];
            let m = self.first[i] / c1;
            let v = self.second[i] / c2;
            params[i] -= lr * m / (v.sqrt() + ADAM_EPS);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub models: ModelSet,
    /// Mean per-sample objective of each epoch, measured before that epoch's
    /// updates.
    pub loss_history: Vec<f64>,
}

/// Fresh classifiers for every view of `dataset`, in dataset order.
pub fn init_models(dataset: &MultiViewDataset, config: &TrainConfig) -> Result<Vec<EvidentialClassifier>> {
    dataset
        .views()
        .iter()
        .enumerate()
        .map(|(v, view)| {
            let mut dims = vec![view.dim];
            dims.extend(&config.hidden);
            dims.push(dataset.classes());
            EvidentialClassifier::new(view.id.clone(), dims, config.activation, config.view_seed(v))
        })
        .collect()
}

/// Trains one classifier per view on the training split.
pub fn train(dataset: &MultiViewDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let rows = dataset.indices(Split::Train);
    if rows.is_empty() {
        return Err(Error::Config("dataset has no training rows".to_string()));
    }
    let mut models = init_models(dataset, config)?;
    let mut adam: Vec<AdamState> = models.iter().map(|m| AdamState::new(m.params().len())).collect();
    let batch_size = if config.batch_size == 0 {
        rows.len()
    } else {
        config.batch_size.min(rows.len())
    };
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let eta = anneal_coefficient(epoch, config.anneal_epochs);
        let mut epoch_loss = 0.0;
        for chunk in rows.chunks(batch_size) {
            let batch = DatasetRows { dataset, rows: chunk };
            let (loss, mut grads) = batch_objective(&models, &batch, eta, true).map_err(|e| match e {
                Error::TotalConflict { remaining } => Error::Divergence {
                    epoch: epoch + 1,
                    detail: format!("total conflict during fusion (1 - C = {remaining:e})"),
                },
                Error::DegenerateOpinion(detail) => Error::Divergence { epoch: epoch + 1, detail },
                other => other,
            })?;
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    epoch: epoch + 1,
                    detail: format!("non-finite objective {loss}"),
                });
            }
            epoch_loss += loss;
            let scale = 1.0 / chunk.len() as f64;
            for ((model, grad), state) in models.iter_mut().zip(grads.iter_mut()).zip(adam.iter_mut()) {
                grad.iter_mut().for_each(|g| *g *= scale);
                match config.optimizer {
                    Optimizer::AdaptiveMoments => state.apply(model.params_mut(), grad, config.learning_rate),
                    Optimizer::PlainGradientDescent => {
                        for (p, g) in model.params_mut().iter_mut().zip(grad.iter()) {
                            *p -= config.learning_rate * g;
                        }
                    }
                }
            }
        }
        history.push(epoch_loss / rows.len() as f64);
    }
    Ok(TrainOutcome {
        models: ModelSet::new(models)?,
        loss_history: history,
    })
}
