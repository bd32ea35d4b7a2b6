//! Per-view evidential classifiers, the evidential loss and training.

pub mod gradcheck;
pub mod loss;
pub mod mlp;
pub mod special;
pub mod train;

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::opinion::SubjectiveOpinion;

pub use gradcheck::{gradient_check, GradientReport};
pub use loss::{
    adjust_dirichlet, anneal_coefficient, expected_ce_loss, kl_uniform, overall_loss, sample_loss, OneHot,
};
pub use mlp::{Activation, EvidentialClassifier};
pub use special::{digamma, log_gamma, softplus, trigamma};
pub use train::{train, Optimizer, TrainConfig, TrainOutcome};

/// One trained classifier per view, in dataset view order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSet {
    models: Vec<EvidentialClassifier>,
}

impl ModelSet {
    pub fn new(models: Vec<EvidentialClassifier>) -> Result<Self> {
        let first = models
            .first()
            .ok_or_else(|| Error::EmptyInput("no models".to_string()))?;
        let k = first.class_count();
        for m in &models {
            if m.class_count() != k {
                return Err(Error::Dimension(format!(
                    "model '{}' predicts {} classes, expected {k}",
                    m.view_id(),
                    m.class_count()
                )));
            }
        }
        for (i, m) in models.iter().enumerate() {
            if models[..i].iter().any(|o| o.view_id() == m.view_id()) {
                return Err(Error::Config(format!("duplicate model for view '{}'", m.view_id())));
            }
        }
        Ok(Self { models })
    }

    pub fn models(&self) -> &[EvidentialClassifier] {
        &self.models
    }

    pub fn classes(&self) -> usize {
        self.models[0].class_count()
    }

    pub fn view_ids(&self) -> Vec<String> {
        self.models.iter().map(|m| m.view_id().to_string()).collect()
    }

    pub fn get(&self, view_id: &str) -> Option<&EvidentialClassifier> {
        self.models.iter().find(|m| m.view_id() == view_id)
    }

    /// Opinion of one view's classifier on `x`.
    pub fn opinion(&self, view_id: &str, x: &[f64]) -> Result<SubjectiveOpinion> {
        let model = self
            .get(view_id)
            .ok_or_else(|| Error::Config(format!("no model for view '{view_id}'")))?;
        Ok(model.forward(x)?.to_opinion())
    }

    fn checkpoint_path(dir: &Path, view_id: &str) -> PathBuf {
        dir.join(format!("model_{view_id}.json"))
    }

    /// Writes one checkpoint per view plus an `order.txt` index.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut paths = Vec::new();
        for m in &self.models {
            let p = Self::checkpoint_path(dir, m.view_id());
            m.save(&p)?;
            paths.push(p);
        }
        let order = dir.join("order.txt");
        fs::write(&order, self.view_ids().join("\n") + "\n")?;
        paths.push(order);
        Ok(paths)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let order = fs::read_to_string(dir.join("order.txt"))
            .map_err(|e| Error::Io(format!("{}: {e}", dir.join("order.txt").display())))?;
        let models = order
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|id| EvidentialClassifier::load(&Self::checkpoint_path(dir, id.trim())))
            .collect::<Result<Vec<_>>>()?;
        Self::new(models)
    }
}
