use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How candidate thresholds are enumerated during split search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitMode {
    /// Every boundary between consecutive distinct values.
    Exact,
    /// At most `max_bins` quantile bins per feature.
    Histogram { max_bins: u16 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtParams {
    pub learning_rate: f64,
    pub max_depth: usize,
    /// Fraction of training rows sampled (without replacement) per round.
    pub subsample: f64,
    pub early_stopping_rounds: usize,
    pub max_rounds: usize,
    /// L2 penalty on leaf values.
    pub lambda: f64,
    /// Minimum gain required to keep a split.
    pub gamma: f64,
    pub split_mode: SplitMode,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            learning_rate: 0.1,
            max_depth: 10,
            subsample: 1.0,
            early_stopping_rounds: 500,
            max_rounds: 5000,
            lambda: 1.0,
            gamma: 0.0,
            split_mode: SplitMode::Exact,
        }
    }
}

impl GbtParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Config(format!(
                "learning_rate {} outside (0, 1]",
                self.learning_rate
            )));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::Config(format!("subsample {} outside (0, 1]", self.subsample)));
        }
        if self.max_depth == 0 {
            return Err(Error::Config("max_depth must be at least 1".into()));
        }
        if self.max_rounds == 0 || self.early_stopping_rounds == 0 {
            return Err(Error::Config("max_rounds and early_stopping_rounds must be positive".into()));
        }
        if !(self.lambda >= 0.0) || !(self.gamma >= 0.0) {
            return Err(Error::Config("lambda and gamma must be non-negative".into()));
        }
        if let SplitMode::Histogram { max_bins } = self.split_mode {
            if max_bins < 2 {
                return Err(Error::Config("histogram mode needs at least 2 bins".into()));
            }
        }
        Ok(())
    }

    /// The tuning grid: learning rate {0.1, 0.3, 0.5} x depth {6, 10} x
    /// subsample {0.5, 1.0}, all other fields taken from `self`.
    pub fn default_grid(&self) -> Vec<GbtParams> {
        let mut grid = Vec::with_capacity(12);
        for lr in [0.1, 0.3, 0.5] {
            for depth in [6, 10] {
                for subsample in [0.5, 1.0] {
                    grid.push(GbtParams { learning_rate: lr, max_depth: depth, subsample, ..*self });
                }
            }
        }
        grid
    }
}
