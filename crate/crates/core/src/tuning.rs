//! Grid search of model hyperparameters per predictor-subset size.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{station_mask, FoldAssignment, FoldRoles, ObservationTable};
use crate::error::{Error, Result};
use crate::gbt::GbtParams;
use crate::model::fit_on_folds;
use crate::seed::derive_seed;
use crate::thinning::{removal_objective, station_rmse, ParamsBySize, StationWeights};

/// Test-fold RMSE (scaled units, averaged over stations and both variables)
/// of one grid point at one subset size and fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub subset_size: usize,
    pub params: GbtParams,
    pub fold: usize,
    pub rmse_scaled: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub subset_size: usize,
    pub params: GbtParams,
    pub mean_rmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningOutcome {
    pub results: Vec<GridResult>,
    pub summary: Vec<GridSummary>,
    pub best: ParamsBySize,
}

pub struct TuningInput<'a> {
    pub table: &'a ObservationTable,
    pub folds: &'a FoldAssignment,
    pub sizes: &'a [usize],
    pub grid: &'a [GbtParams],
    /// Test folds to run; all folds when `None`.
    pub test_folds: Option<&'a [usize]>,
    pub seed: u64,
}

/// Predictor subset of the given size drawn for one (fold, size) job.
pub fn tuning_subset(n_stations: usize, size: usize, fold: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[fold as u64, size as u64]));
    let mut s = index::sample(&mut rng, n_stations, size).into_vec();
    s.sort_unstable();
    s
}

pub fn tune(input: &TuningInput<'_>) -> Result<TuningOutcome> {
    let n = input.table.n_stations();
    if input.grid.is_empty() {
        return Err(Error::Config("hyperparameter grid is empty".into()));
    }
    for p in input.grid {
        p.validate()?;
    }
    for &k in input.sizes {
        if k == 0 || k > n {
            return Err(Error::Config(format!("subset size {k} outside 1..={n}")));
        }
    }
    let all_folds: Vec<usize> = (0..input.folds.n_folds).collect();
    let folds = input.test_folds.unwrap_or(&all_folds);
    if let Some(f) = folds.iter().find(|f| **f >= input.folds.n_folds) {
        return Err(Error::Config(format!("test fold {f} out of range")));
    }

    let jobs: Vec<(usize, usize, usize)> = input
        .sizes
        .iter()
        .flat_map(|&k| folds.iter().flat_map(move |&f| (0..input.grid.len()).map(move |g| (k, f, g))))
        .collect();
    let weights = StationWeights::uniform(n);
    let results: Vec<GridResult> = jobs
        .par_iter()
        .map(|&(k, fold, g)| {
            let subset = tuning_subset(n, k, fold, input.seed);
            let roles = FoldRoles::for_test_fold(fold, input.folds.n_folds);
            let seed = derive_seed(input.seed, &[fold as u64, k as u64, g as u64]);
            let params = &input.grid[g];
            let (model, inst) =
                fit_on_folds(input.table, input.folds, &roles, &station_mask(n, subset), params, seed)?;
            if inst.test.is_empty() {
                return Err(Error::Data(format!("test fold {fold} has no data")));
            }
            let pred = model.predict_batch(&inst.test.x)?;
            let per_station = station_rmse(&pred, &inst.test.y, &inst.test.meta, n);
            Ok(GridResult {
                subset_size: k,
                params: *params,
                fold,
                rmse_scaled: removal_objective(&per_station, &weights)?,
            })
        })
        .collect::<Result<_>>()?;

    let mut acc: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    for (job, r) in jobs.iter().zip(&results) {
        let e = acc.entry((job.0, job.2)).or_insert((0.0, 0));
        e.0 += r.rmse_scaled;
        e.1 += 1;
    }
    let summary: Vec<GridSummary> = acc
        .iter()
        .map(|(&(k, g), &(sum, cnt))| GridSummary {
            subset_size: k,
            params: input.grid[g],
            mean_rmse: sum / cnt as f64,
        })
        .collect();
    let mut best = BTreeMap::new();
    for &k in input.sizes {
        // First grid point wins among equal means.
        let winner = summary
            .iter()
            .filter(|s| s.subset_size == k)
            .fold(None::<&GridSummary>, |b, s| match b {
                Some(b) if b.mean_rmse <= s.mean_rmse => Some(b),
                _ => Some(s),
            })
            .expect("grid non-empty");
        best.insert(k, winner.params);
    }
    Ok(TuningOutcome { results, summary, best: ParamsBySize(best) })
}
