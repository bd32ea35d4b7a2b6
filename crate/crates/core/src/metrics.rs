//! Accuracy, F1 variants and Mann-Whitney ROC AUC.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numfmt::{round_sig, sig};

fn check_lengths(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("no predictions to score".to_string()));
    }
    Ok(())
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct F1Scores {
    pub per_class: Vec<f64>,
    pub support: Vec<usize>,
    /// F1 of class 1 for binary tasks.
    pub binary: Option<f64>,
    pub weighted: f64,
    pub macro_avg: f64,
}

/// One-vs-rest F1 per class with macro and support-weighted averages.
/// Zero precision plus recall gives F1 = 0.
pub fn f1_scores(pred: &[usize], truth: &[usize], classes: usize) -> Result<F1Scores> {
    check_lengths(pred, truth)?;
    if let Some(bad) = pred.iter().chain(truth).find(|c| **c >= classes) {
        return Err(Error::Label(format!("label {bad} out of range for {classes} classes")));
    }
    let mut tp = vec![0usize; classes];
    let mut predicted = vec![0usize; classes];
    let mut support = vec![0usize; classes];
    for (&p, &t) in pred.iter().zip(truth) {
        predicted[p] += 1;
        support[t] += 1;
        if p == t {
            tp[p] += 1;
        }
    }
    let per_class: Vec<f64> = (0..classes)
        .map(|c| {
            let precision = if predicted[c] == 0 { 0.0 } else { tp[c] as f64 / predicted[c] as f64 };
            let recall = if support[c] == 0 { 0.0 } else { tp[c] as f64 / support[c] as f64 };
            if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            }
        })
        .collect();
    let n = pred.len() as f64;
    let weighted = per_class
        .iter()
        .zip(&support)
        .map(|(f, s)| f * *s as f64 / n)
        .sum();
    let macro_avg = per_class.iter().sum::<f64>() / classes as f64;
    Ok(F1Scores {
        binary: (classes == 2).then(|| per_class[1]),
        per_class,
        support,
        weighted,
        macro_avg,
    })
}

/// Mann-Whitney AUC: the fraction of positive/negative pairs ranked
/// correctly, with ties worth one half.
pub fn roc_auc(scores: &[f64], truth: &[usize]) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} scores for {} labels",
            scores.len(),
            truth.len()
        )));
    }
    if let Some(bad) = truth.iter().find(|t| **t > 1) {
        return Err(Error::Label(format!("AUC needs binary labels, got {bad}")));
    }
    let n_pos = truth.iter().filter(|t| **t == 1).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc(format!(
            "{n_pos} positives and {n_neg} negatives"
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Domain("NaN score".to_string()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*a].total_cmp(&scores[*b]));
    // Sum of mid-ranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid_rank * order[i..=j].iter().filter(|&&k| truth[k] == 1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    pub accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1_binary: Option<f64>,
    pub weighted_f1: f64,
    pub macro_f1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
}

impl MetricReport {
    /// `positive_scores` feeds the AUC for binary tasks (probability of class 1).
    pub fn compute(
        pred: &[usize],
        truth: &[usize],
        classes: usize,
        positive_scores: Option<&[f64]>,
    ) -> Result<Self> {
        let accuracy = accuracy(pred, truth)?;
        let f1 = f1_scores(pred, truth, classes)?;
        let auc = match (classes, positive_scores) {
            (2, Some(scores)) => match roc_auc(scores, truth) {
                Ok(a) => Some(a),
                Err(Error::UndefinedAuc(_)) => None,
                Err(e) => return Err(e),
            },
            _ => None,
        };
        Ok(Self {
            n: pred.len(),
            accuracy,
            f1_binary: f1.binary,
            weighted_f1: f1.weighted,
            macro_f1: f1.macro_avg,
            auc,
        })
    }

    /// Copy with every value rounded to six significant digits.
    pub fn rounded(&self) -> Self {
        Self {
            n: self.n,
            accuracy: round_sig(self.accuracy),
            f1_binary: self.f1_binary.map(round_sig),
            weighted_f1: round_sig(self.weighted_f1),
            macro_f1: round_sig(self.macro_f1),
            auc: self.auc.map(round_sig),
        }
    }

    /// Flat `key = value` lines.
    pub fn to_text(&self, prefix: &str) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| out.push_str(&format!("{prefix}{k} = {v}\n"));
        line("n", self.n.to_string());
        line("accuracy", sig(self.accuracy));
        if let Some(f) = self.f1_binary {
            line("f1_binary", sig(f));
        }
        line("weighted_f1", sig(self.weighted_f1));
        line("macro_f1", sig(self.macro_f1));
        if let Some(a) = self.auc {
            line("auc", sig(a));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairwise_auc(scores: &[f64], truth: &[usize]) -> f64 {
        let (mut wins, mut pairs) = (0.0, 0.0);
        for (i, si) in scores.iter().enumerate() {
            for (j, sj) in scores.iter().enumerate() {
                if truth[i] == 1 && truth[j] == 0 {
                    pairs += 1.0;
                    if si > sj {
                        wins += 1.0;
                    } else if si == sj {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 0], &[0, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&[0, 1, 1, 0], &[0, 1, 0, 0]).unwrap(), 0.75);
        assert!(matches!(accuracy(&[0], &[0, 1]), Err(Error::Dimension(_))));
    }

    #[test]
    fn f1_examples() {
        let f = f1_scores(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!(f.per_class, vec![1.0; 3]);
        assert_eq!((f.weighted, f.macro_avg), (1.0, 1.0));

        let f = f1_scores(&[1, 1, 0, 0], &[1, 0, 1, 0], 2).unwrap();
        assert_eq!(f.binary, Some(0.5));

        // Class 2 never appears: F1 0 in the macro mean, zero weight.
        let f = f1_scores(&[0, 0, 1, 1, 0], &[0, 0, 1, 1, 1], 3).unwrap();
        // class 0: P 2/3 R 1 -> 0.8; class 1: P 1 R 2/3 -> 0.8
        assert!((f.per_class[0] - 0.8).abs() < 1e-12);
        assert!((f.per_class[1] - 0.8).abs() < 1e-12);
        assert_eq!(f.per_class[2], 0.0);
        assert!((f.weighted - 0.8).abs() < 1e-12);
        assert!((f.macro_avg - 1.6 / 3.0).abs() < 1e-12);
        assert!(f.macro_avg < f.weighted);

        assert!(matches!(f1_scores(&[0, 3], &[0, 1], 2), Err(Error::Label(_))));
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.9, 0.8, 0.2, 0.1], &[0, 0, 1, 1]).unwrap(), 0.0);
        assert_eq!(roc_auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert_eq!(roc_auc(&[0.5, 0.5], &[0, 1]).unwrap(), 0.5);
        assert!(matches!(roc_auc(&[0.1, 0.2], &[1, 1]), Err(Error::UndefinedAuc(_))));
    }

    #[test]
    fn report_text_and_rounding() {
        let r = MetricReport::compute(&[0, 1, 1], &[0, 1, 0], 2, Some(&[0.2, 0.9, 0.6])).unwrap();
        assert_eq!(r.auc, Some(1.0));
        let text = r.to_text("");
        assert!(text.contains("accuracy = 0.666667"), "{text}");
        assert_eq!(r.rounded().accuracy, 0.666667);
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_count(
            data in prop::collection::vec((0u8..20, 0usize..2), 2..40)
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64 / 20.0).collect();
            let truth: Vec<usize> = data.iter().map(|(_, t)| *t).collect();
            prop_assume!(truth.contains(&0) && truth.contains(&1));
            let a = roc_auc(&scores, &truth).unwrap();
            prop_assert!((a - pairwise_auc(&scores, &truth)).abs() < 1e-12);
            let squashed: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            prop_assert!((roc_auc(&squashed, &truth).unwrap() - a).abs() < 1e-12);
        }

        #[test]
        fn permutation_invariance_and_identities(
            pairs in prop::collection::vec((0usize..3, 0usize..3), 1..50),
            rot in 0usize..50,
        ) {
            let pred: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let truth: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let f = f1_scores(&pred, &truth, 3).unwrap();
            let acc = accuracy(&pred, &truth).unwrap();
            let mut p2 = pred.clone();
            let mut t2 = truth.clone();
            let r = rot % pred.len();
            p2.rotate_left(r);
            t2.rotate_left(r);
            let f2 = f1_scores(&p2, &t2, 3).unwrap();
            prop_assert!((f.weighted - f2.weighted).abs() < 1e-12);
            prop_assert!((f.macro_avg - f2.macro_avg).abs() < 1e-12);
            prop_assert_eq!(acc, accuracy(&p2, &t2).unwrap());
            // Accuracy is the support-weighted mean recall.
            let recall_mean: f64 = (0..3)
                .map(|c| pred.iter().zip(&truth).filter(|(p, t)| **t == c && **p == c).count() as f64)
                .sum::<f64>() / pred.len() as f64;
            prop_assert!((acc - recall_mean).abs() < 1e-12);
        }
    }
}
