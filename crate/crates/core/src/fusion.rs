//! Dempster's rule restricted to singleton beliefs plus a universe mass.
//!
//! For two opinions over the same K classes:
//!
//! ```text
//! C   = Σ_{i≠j} b¹_i b²_j
//! b_k = (b¹_k b²_k + b¹_k u² + b²_k u¹) / (1 - C)
//! u   = u¹ u² / (1 - C)
//! ```

use crate::error::{Error, Result};
use crate::opinion::SubjectiveOpinion;

/// `1 - C` below this is treated as total conflict.
pub const CONFLICT_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FusionResult {
    pub opinion: SubjectiveOpinion,
    /// Conflict of the last pairwise combination (0 for a single input).
    pub conflict: f64,
    pub inputs: usize,
}

fn check_dims(a: &SubjectiveOpinion, b: &SubjectiveOpinion) -> Result<()> {
    if a.class_count() != b.class_count() {
        return Err(Error::Dimension(format!(
            "cannot fuse opinions over {} and {} classes",
            a.class_count(),
            b.class_count()
        )));
    }
    Ok(())
}

fn raw_conflict(b1: &[f64], b2: &[f64]) -> f64 {
    let mut c = 0.0;
    for (i, x) in b1.iter().enumerate() {
        for (j, y) in b2.iter().enumerate() {
            if i != j {
                c += x * y;
            }
        }
    }
    c
}

/// Conflict coefficient `C = Σ_{i≠j} b¹_i b²_j`.
pub fn conflict(o1: &SubjectiveOpinion, o2: &SubjectiveOpinion) -> Result<f64> {
    check_dims(o1, o2)?;
    Ok(raw_conflict(o1.beliefs(), o2.beliefs()))
}

pub fn combine_pair(o1: &SubjectiveOpinion, o2: &SubjectiveOpinion) -> Result<FusionResult> {
    check_dims(o1, o2)?;
    let (b1, b2) = (o1.beliefs(), o2.beliefs());
    let (u1, u2) = (o1.uncertainty(), o2.uncertainty());
    let c = raw_conflict(b1, b2);
    let norm = 1.0 - c;
    if !(norm >= CONFLICT_EPSILON) {
        return Err(Error::TotalConflict { remaining: norm });
    }
    let beliefs = b1
        .iter()
        .zip(b2)
        .map(|(x, y)| (x * y + x * u2 + y * u1) / norm)
        .collect();
    Ok(FusionResult {
        opinion: SubjectiveOpinion::from_parts(beliefs, u1 * u2 / norm),
        conflict: c,
        inputs: 2,
    })
}

/// Left fold of [`combine_pair`] in the supplied order.
pub fn combine_all(opinions: &[SubjectiveOpinion]) -> Result<FusionResult> {
    let (first, rest) = opinions
        .split_first()
        .ok_or_else(|| Error::EmptyInput("no opinions to fuse".to_string()))?;
    let mut acc = FusionResult {
        opinion: first.clone(),
        conflict: 0.0,
        inputs: 1,
    };
    for o in rest {
        let step = combine_pair(&acc.opinion, o)?;
        acc = FusionResult {
            opinion: step.opinion,
            conflict: step.conflict,
            inputs: acc.inputs + 1,
        };
    }
    Ok(acc)
}

/// Raw masses used by the gradient code: beliefs and uncertainty as plain
/// slices, without the invariant checks of [`SubjectiveOpinion`].
#[derive(Debug, Clone)]
pub(crate) struct Masses {
    pub beliefs: Vec<f64>,
    pub uncertainty: f64,
}

/// Forward pass of one pairwise combination with the values the backward
/// pass needs.
#[derive(Debug, Clone)]
pub(crate) struct PairTape {
    pub out: Masses,
    pub norm: f64,
}

pub(crate) fn combine_masses(a: &Masses, b: &Masses) -> Result<PairTape> {
    let norm = 1.0 - raw_conflict(&a.beliefs, &b.beliefs);
    if !(norm >= CONFLICT_EPSILON) {
        return Err(Error::TotalConflict { remaining: norm });
    }
    let beliefs = a
        .beliefs
        .iter()
        .zip(&b.beliefs)
        .map(|(x, y)| (x * y + x * b.uncertainty + y * a.uncertainty) / norm)
        .collect();
    Ok(PairTape {
        out: Masses {
            beliefs,
            uncertainty: a.uncertainty * b.uncertainty / norm,
        },
        norm,
    })
}

/// Reverse-mode step through [`combine_masses`]: given the upstream gradient
/// on the fused masses, returns the gradients on both inputs.
pub(crate) fn combine_masses_backward(
    a: &Masses,
    b: &Masses,
    tape: &PairTape,
    grad_out: &Masses,
) -> (Masses, Masses) {
    let n = tape.norm;
    let sum_a: f64 = a.beliefs.iter().sum();
    let sum_b: f64 = b.beliefs.iter().sum();
    let g_num: Vec<f64> = grad_out.beliefs.iter().map(|g| g / n).collect();
    // d(out)/d(norm) = -out / norm, and norm = 1 - C.
    let g_norm = -(grad_out
        .beliefs
        .iter()
        .zip(&tape.out.beliefs)
        .map(|(g, v)| g * v)
        .sum::<f64>()
        + grad_out.uncertainty * tape.out.uncertainty)
        / n;
    let g_c = -g_norm;

    let ga: Vec<f64> = (0..a.beliefs.len())
        .map(|k| g_num[k] * (b.beliefs[k] + b.uncertainty) + g_c * (sum_b - b.beliefs[k]))
        .collect();
    let gb: Vec<f64> = (0..b.beliefs.len())
        .map(|k| g_num[k] * (a.beliefs[k] + a.uncertainty) + g_c * (sum_a - a.beliefs[k]))
        .collect();
    let gu_a = g_num
        .iter()
        .zip(&b.beliefs)
        .map(|(g, y)| g * y)
        .sum::<f64>()
        + grad_out.uncertainty * b.uncertainty / n;
    let gu_b = g_num
        .iter()
        .zip(&a.beliefs)
        .map(|(g, x)| g * x)
        .sum::<f64>()
        + grad_out.uncertainty * a.uncertainty / n;
    (
        Masses {
            beliefs: ga,
            uncertainty: gu_a,
        },
        Masses {
            beliefs: gb,
            uncertainty: gu_b,
        },
    )
}
