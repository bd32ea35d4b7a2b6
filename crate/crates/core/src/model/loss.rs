//! Evidential loss: expected cross-entropy under the predicted Dirichlet plus
//! an annealed KL penalty towards the uniform Dirichlet.

use serde::{Deserialize, Serialize};

use super::special::{digamma_unchecked, log_gamma_unchecked, trigamma_unchecked};
use crate::error::{Error, Result};
use crate::opinion::DirichletEvidence;

/// One-hot ground truth over `classes` classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OneHot {
    class: usize,
    classes: usize,
}

impl OneHot {
    pub fn new(class: usize, classes: usize) -> Result<Self> {
        if class >= classes {
            return Err(Error::Label(format!(
                "class {class} out of range for {classes} classes"
            )));
        }
        Ok(Self { class, classes })
    }

    pub fn class(&self) -> usize {
        self.class
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.classes];
        g[self.class] = 1.0;
        g
    }
}

fn check_classes(d: &DirichletEvidence, g: &OneHot) -> Result<()> {
    if d.class_count() != g.classes() {
        return Err(Error::Dimension(format!(
            "Dirichlet over {} classes, label over {}",
            d.class_count(),
            g.classes()
        )));
    }
    Ok(())
}

/// `ψ(S) - ψ(d_true)`.
pub fn expected_ce_loss(d: &DirichletEvidence, g: &OneHot) -> Result<f64> {
    check_classes(d, g)?;
    Ok(digamma_unchecked(d.strength()) - digamma_unchecked(d.params()[g.class()]))
}

/// Replaces the true-class parameter with 1, leaving the rest unchanged.
pub fn adjust_dirichlet(d: &DirichletEvidence, g: &OneHot) -> Result<Vec<f64>> {
    check_classes(d, g)?;
    let mut adjusted = d.params().to_vec();
    adjusted[g.class()] = 1.0;
    Ok(adjusted)
}

/// `KL[Dir(d̃) || Dir(1)]`, evaluated in the log-gamma domain.
pub fn kl_uniform(adjusted: &[f64]) -> Result<f64> {
    if adjusted.len() < 2 {
        return Err(Error::Domain("need at least 2 classes".to_string()));
    }
    if let Some(bad) = adjusted.iter().find(|a| !(**a >= 1.0) || !a.is_finite()) {
        return Err(Error::Domain(format!(
            "adjusted Dirichlet parameter {bad} < 1"
        )));
    }
    Ok(kl_uniform_unchecked(adjusted))
}

fn kl_uniform_unchecked(adjusted: &[f64]) -> f64 {
    let k = adjusted.len() as f64;
    let total: f64 = adjusted.iter().sum();
    let psi_total = digamma_unchecked(total);
    let mut kl = log_gamma_unchecked(total) - log_gamma_unchecked(k);
    for &a in adjusted {
        kl -= log_gamma_unchecked(a);
        if a != 1.0 {
            kl += (a - 1.0) * (digamma_unchecked(a) - psi_total);
        }
    }
    kl.max(0.0)
}

/// `min(1, epoch / anneal_epochs)`.
pub fn anneal_coefficient(epoch: usize, anneal_epochs: usize) -> f64 {
    let t = anneal_epochs.max(1);
    (epoch as f64 / t as f64).min(1.0)
}

/// Expected cross-entropy plus `eta` times the KL penalty.
pub fn sample_loss(d: &DirichletEvidence, g: &OneHot, eta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Domain(format!("eta {eta} outside [0, 1]")));
    }
    let ce = expected_ce_loss(d, g)?;
    if eta == 0.0 {
        return Ok(ce);
    }
    Ok(ce + eta * kl_uniform(&adjust_dirichlet(d, g)?)?)
}

/// Fused-view loss plus the loss of every individual view for one sample.
pub fn overall_loss(
    fused: &DirichletEvidence,
    per_view: &[DirichletEvidence],
    g: &OneHot,
    eta: f64,
) -> Result<f64> {
    if per_view.is_empty() {
        return Err(Error::EmptyInput("no per-view Dirichlets".to_string()));
    }
    let mut total = sample_loss(fused, g, eta)?;
    for d in per_view {
        total += sample_loss(d, g, eta)?;
    }
    Ok(total)
}

/// Loss and its gradient with respect to the Dirichlet parameters.
pub(crate) fn sample_loss_with_grad(params: &[f64], class: usize, eta: f64) -> (f64, Vec<f64>) {
    let strength: f64 = params.iter().sum();
    let psi_s = digamma_unchecked(strength);
    let tri_s = trigamma_unchecked(strength);
    let mut loss = psi_s - digamma_unchecked(params[class]);
    let mut grad = vec![tri_s; params.len()];
    grad[class] -= trigamma_unchecked(params[class]);

    if eta > 0.0 {
        let mut adjusted = params.to_vec();
        adjusted[class] = 1.0;
        loss += eta * kl_uniform_unchecked(&adjusted);
        let adj_total: f64 = adjusted.iter().sum();
        let excess = adj_total - adjusted.len() as f64;
        let tri_total = trigamma_unchecked(adj_total);
        // ∂KL/∂d̃_m = (d̃_m - 1) ψ'(d̃_m) - (Σd̃ - K) ψ'(Σd̃); the true class is
        // pinned to 1 so it receives nothing.
        for (m, a) in adjusted.iter().enumerate() {
            if m != class {
                grad[m] += eta * ((a - 1.0) * trigamma_unchecked(*a) - excess * tri_total);
            }
        }
    }
    (loss, grad)
}
