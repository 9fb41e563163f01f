use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::matrix::FeatureMatrix;
use super::params::GbtParams;
use super::tree::Tree;
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "stationthin-gbt";
pub const MODEL_VERSION: u32 = 1;

/// Per-round RMSE on the training rows (all rows, not only the subsample)
/// and on the validation rows. Index 0 is the base score alone.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub train_rmse: Vec<f64>,
    pub val_rmse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub base_score: f64,
    pub trees: Vec<Tree>,
    pub params: GbtParams,
    /// Number of leading trees used for prediction.
    pub best_round: usize,
    pub n_features: usize,
    #[serde(default)]
    pub history: TrainingHistory,
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    version: u32,
    model: T,
}

impl TreeEnsemble {
    /// An ensemble without trees; predicts `base_score` everywhere.
    pub fn constant(base_score: f64, n_features: usize, params: GbtParams) -> Self {
        TreeEnsemble {
            base_score,
            trees: Vec::new(),
            params,
            best_round: 0,
            n_features,
            history: TrainingHistory::default(),
        }
    }

    pub fn active_trees(&self) -> &[Tree] {
        &self.trees[..self.best_round.min(self.trees.len())]
    }

    pub fn predict(&self, row: &[Option<f64>]) -> Result<f64> {
        self.check_width(row.len())?;
        Ok(self.predict_unchecked(row, None))
    }

    /// Prediction with the features flagged in `masked` treated as missing.
    pub fn predict_masked(&self, row: &[Option<f64>], masked: &[bool]) -> Result<f64> {
        self.check_width(row.len())?;
        self.check_width(masked.len())?;
        Ok(self.predict_unchecked(row, Some(masked)))
    }

    pub fn predict_batch(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        self.check_width(x.n_features())?;
        Ok((0..x.n_rows()).into_par_iter().map(|i| self.predict_unchecked(x.row(i), None)).collect())
    }

    pub fn predict_batch_masked(&self, x: &FeatureMatrix, masked: &[bool]) -> Result<Vec<f64>> {
        self.check_width(x.n_features())?;
        self.check_width(masked.len())?;
        Ok((0..x.n_rows())
            .into_par_iter()
            .map(|i| self.predict_unchecked(x.row(i), Some(masked)))
            .collect())
    }

    #[inline]
    pub(crate) fn predict_unchecked(&self, row: &[Option<f64>], masked: Option<&[bool]>) -> f64 {
        let mut p = self.base_score;
        for t in self.active_trees() {
            p += t.predict(row, masked);
        }
        p
    }

    fn check_width(&self, got: usize) -> Result<()> {
        if got != self.n_features {
            return Err(Error::Schema { expected: self.n_features, got });
        }
        Ok(())
    }

    pub fn max_depth(&self) -> usize {
        self.trees.iter().map(Tree::depth).max().unwrap_or(0)
    }

    pub fn to_json(&self) -> Result<String> {
        let env = Envelope { format: MODEL_FORMAT.to_string(), version: MODEL_VERSION, model: self };
        Ok(serde_json::to_string(&env)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let env: Envelope<TreeEnsemble> = serde_json::from_str(s)?;
        if env.format != MODEL_FORMAT {
            return Err(Error::Data(format!("not a model file (format {:?})", env.format)));
        }
        if env.version != MODEL_VERSION {
            return Err(Error::Data(format!("unsupported model version {}", env.version)));
        }
        let m = env.model;
        if m.best_round > m.trees.len() {
            return Err(Error::Data("best_round exceeds tree count".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
