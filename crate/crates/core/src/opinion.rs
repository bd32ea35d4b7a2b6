//! Evidence vectors, Dirichlet parameters and subjective opinions.
//!
//! A non-negative evidence vector `e` defines Dirichlet parameters `d = e + 1`
//! with strength `S = Σ d`. The matching subjective opinion assigns belief
//! `b_k = e_k / S` to each class and uncertainty `u = K / S` to the whole
//! frame, so that `u + Σ b = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for the mass-sum constraint.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Dirichlet parameters derived from a non-negative evidence vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletEvidence {
    evidence: Vec<f64>,
    params: Vec<f64>,
    strength: f64,
}

impl DirichletEvidence {
    /// Builds `d_k = e_k + 1` and `S = Σ d_k` from evidence.
    pub fn from_evidence(evidence: Vec<f64>) -> Result<Self> {
        if evidence.len() < 2 {
            return Err(Error::InvalidEvidence(format!(
                "need at least 2 classes, got {}",
                evidence.len()
            )));
        }
        if let Some((k, e)) = evidence
            .iter()
            .enumerate()
            .find(|(_, e)| !e.is_finite() || **e < 0.0)
        {
            return Err(Error::InvalidEvidence(format!(
                "evidence[{k}] = {e} is negative or non-finite"
            )));
        }
        let params: Vec<f64> = evidence.iter().map(|e| e + 1.0).collect();
        let strength = params.iter().sum();
        Ok(Self {
            evidence,
            params,
            strength,
        })
    }

    pub fn evidence(&self) -> &[f64] {
        &self.evidence
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }

    pub fn class_count(&self) -> usize {
        self.params.len()
    }

    /// Dirichlet mean `d_k / S`, used as the point prediction.
    pub fn expected_probabilities(&self) -> Vec<f64> {
        self.params.iter().map(|d| d / self.strength).collect()
    }

    pub fn to_opinion(&self) -> SubjectiveOpinion {
        let s = self.strength;
        SubjectiveOpinion {
            beliefs: self.evidence.iter().map(|e| e / s).collect(),
            uncertainty: self.class_count() as f64 / s,
        }
    }
}

/// Beliefs over K singleton classes plus an uncertainty mass on the full frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectiveOpinion {
    beliefs: Vec<f64>,
    uncertainty: f64,
}

impl SubjectiveOpinion {
    /// Validated constructor: masses in range and summing to one within
    /// [`MASS_TOLERANCE`].
    pub fn new(beliefs: Vec<f64>, uncertainty: f64) -> Result<Self> {
        if beliefs.len() < 2 {
            return Err(Error::DegenerateOpinion(format!(
                "need at least 2 classes, got {}",
                beliefs.len()
            )));
        }
        if !(uncertainty > 0.0 && uncertainty <= 1.0) {
            return Err(Error::DegenerateOpinion(format!(
                "uncertainty {uncertainty} outside (0, 1]"
            )));
        }
        if beliefs.iter().any(|b| !b.is_finite() || *b < 0.0 || *b >= 1.0) {
            return Err(Error::DegenerateOpinion(
                "belief mass outside [0, 1)".to_string(),
            ));
        }
        let total = uncertainty + beliefs.iter().sum::<f64>();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::DegenerateOpinion(format!(
                "masses sum to {total}, expected 1"
            )));
        }
        Ok(Self {
            beliefs,
            uncertainty,
        })
    }

    /// Constructor for values produced by closed operations (fusion), which
    /// preserve the invariants up to rounding.
    pub(crate) fn from_parts(beliefs: Vec<f64>, uncertainty: f64) -> Self {
        debug_assert!(
            (uncertainty + beliefs.iter().sum::<f64>() - 1.0).abs() <= MASS_TOLERANCE
        );
        Self {
            beliefs,
            uncertainty,
        }
    }

    /// The vacuous opinion: no belief, full uncertainty.
    pub fn vacuous(class_count: usize) -> Self {
        Self {
            beliefs: vec![0.0; class_count],
            uncertainty: 1.0,
        }
    }

    pub fn beliefs(&self) -> &[f64] {
        &self.beliefs
    }

    pub fn uncertainty(&self) -> f64 {
        self.uncertainty
    }

    pub fn class_count(&self) -> usize {
        self.beliefs.len()
    }

    /// Total mass; one up to rounding.
    pub fn mass(&self) -> f64 {
        self.uncertainty + self.beliefs.iter().sum::<f64>()
    }

    pub fn predicted_class(&self) -> usize {
        argmax(&self.beliefs)
    }

    /// Inverse map `S = K / u`, `e_k = b_k S`.
    pub fn to_dirichlet(&self) -> Result<DirichletEvidence> {
        if !(self.uncertainty > 0.0) {
            return Err(Error::DegenerateOpinion(
                "uncertainty is zero; the Dirichlet strength is unbounded".to_string(),
            ));
        }
        let s = self.class_count() as f64 / self.uncertainty;
        let evidence = self.beliefs.iter().map(|b| (b * s).max(0.0)).collect();
        DirichletEvidence::from_evidence(evidence)
    }

    /// Dirichlet mean of the equivalent parameters, `(b_k S + 1) / S`.
    pub fn expected_probabilities(&self) -> Vec<f64> {
        let k = self.class_count() as f64;
        self.beliefs
            .iter()
            .map(|b| b + self.uncertainty / k)
            .collect()
    }
}

pub fn dirichlet_from_evidence(evidence: Vec<f64>) -> Result<DirichletEvidence> {
    DirichletEvidence::from_evidence(evidence)
}

pub fn opinion_from_dirichlet(d: &DirichletEvidence) -> SubjectiveOpinion {
    d.to_opinion()
}

pub fn dirichlet_from_opinion(o: &SubjectiveOpinion) -> Result<DirichletEvidence> {
    o.to_dirichlet()
}

pub fn expected_probabilities(d: &DirichletEvidence) -> Vec<f64> {
    d.expected_probabilities()
}
