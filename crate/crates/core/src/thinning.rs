//! Greedy backward elimination of stations.
//!
//! Starting from a model trained on the full network, every step hides each
//! remaining station's predictor columns in turn, predicts all stations and
//! both variables on the test fold, and permanently removes the station whose
//! absence raises the network-averaged RMSE the least. The model is retrained
//! on the surviving stations whenever the remaining count reaches one of the
//! retraining points.

use std::collections::BTreeMap;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    station_mask, test_instances, FeatureSchema, FoldAssignment, FoldRoles, InstanceMeta,
    InstanceSet, ObservationTable, Role,
};
use crate::domain::Variable;
use crate::error::{Error, Result};
use crate::gbt::{GbtParams, TreeEnsemble};
use crate::model::fit_on_folds;
use crate::seed::derive_seed;

pub const DEFAULT_RETRAINING_POINTS: [usize; 9] = [35, 28, 21, 14, 10, 7, 4, 3, 2];

/// Non-negative per-station weights of the removal objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationWeights(Vec<f64>);

impl StationWeights {
    pub fn uniform(n: usize) -> Self {
        StationWeights(vec![1.0; n])
    }

    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("station weights must be finite and non-negative".into()));
        }
        if !weights.iter().any(|w| *w > 0.0) {
            return Err(Error::Config("at least one station weight must be positive".into()));
        }
        Ok(StationWeights(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// RMSE per station and modeled variable (`[Ta, e]`); `None` where a
/// station/variable has no pairs.
pub fn station_rmse(
    pred: &[f64],
    obs: &[f64],
    meta: &[InstanceMeta],
    n_stations: usize,
) -> Vec<[Option<f64>; 2]> {
    let mut sse = vec![[0.0f64; 2]; n_stations];
    let mut n = vec![[0usize; 2]; n_stations];
    for ((p, o), m) in pred.iter().zip(obs).zip(meta) {
        let v = usize::from(m.variable == Variable::E);
        sse[m.station][v] += (p - o) * (p - o);
        n[m.station][v] += 1;
    }
    sse.iter()
        .zip(&n)
        .map(|(s, c)| [0, 1].map(|v| (c[v] > 0).then(|| (s[v] / c[v] as f64).sqrt())))
        .collect()
}

/// Weighted mean over stations of the per-station RMSE averaged over the two
/// variables. Stations without any pairs are left out with a warning.
pub fn removal_objective(per_station: &[[Option<f64>; 2]], weights: &StationWeights) -> Result<f64> {
    if per_station.len() != weights.0.len() {
        return Err(Error::Config(format!(
            "{} station weights for {} stations",
            weights.0.len(),
            per_station.len()
        )));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (s, (rmse, w)) in per_station.iter().zip(&weights.0).enumerate() {
        let present: Vec<f64> = rmse.iter().flatten().copied().collect();
        if present.is_empty() {
            warn!("station #{s} has no evaluation pairs and is left out of the objective");
            continue;
        }
        num += w * present.iter().sum::<f64>() / present.len() as f64;
        den += w;
    }
    if den <= 0.0 {
        return Err(Error::Numerical("objective has no weighted stations with data".into()));
    }
    Ok(num / den)
}

/// Tuned parameters keyed by predictor-subset size.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamsBySize(pub BTreeMap<usize, GbtParams>);

impl ParamsBySize {
    pub fn single(params: GbtParams) -> Self {
        ParamsBySize(BTreeMap::from([(usize::MAX, params)]))
    }

    /// Parameters tuned for the size nearest to `size` (larger size on ties).
    pub fn nearest(&self, size: usize) -> Option<&GbtParams> {
        self.0
            .iter()
            .min_by_key(|(k, _)| (k.abs_diff(size), std::cmp::Reverse(**k)))
            .map(|(_, p)| p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThinningConfig {
    pub retraining_points: Vec<usize>,
    /// Stations removed per step.
    pub step_size: usize,
}

impl Default for ThinningConfig {
    fn default() -> Self {
        ThinningConfig { retraining_points: DEFAULT_RETRAINING_POINTS.to_vec(), step_size: 1 }
    }
}

impl ThinningConfig {
    /// Retraining after every removal.
    pub fn retrain_every_step(n_stations: usize) -> Self {
        ThinningConfig { retraining_points: (2..=n_stations).rev().collect(), step_size: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.step_size == 0 {
            return Err(Error::Config("thinning step_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalStep {
    pub step: usize,
    pub removed: String,
    /// Stations left after this removal.
    pub remaining: usize,
    pub objective: f64,
    /// Whether the model was retrained at the start of this step.
    pub retrained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalSequence {
    pub fold: usize,
    pub stations: Vec<String>,
    pub steps: Vec<RemovalStep>,
}

impl RemovalSequence {
    pub fn removal_order(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.removed.as_str()).collect()
    }
}

/// Elimination aborted by a training failure; `partial` holds the steps
/// completed so far.
#[derive(Debug)]
pub struct ThinningFailure {
    pub partial: RemovalSequence,
    pub error: Error,
}

impl From<ThinningFailure> for Error {
    fn from(f: ThinningFailure) -> Self {
        f.error
    }
}

/// State handed to an observer once per elimination step, before removal.
pub struct StepTrace<'a> {
    pub step: usize,
    pub model: &'a TreeEnsemble,
    /// Stations removed before this step.
    pub removed: &'a [usize],
    /// Objective for every candidate, in candidate order.
    pub candidates: &'a [(usize, f64)],
    pub chosen: &'a [usize],
    pub test: &'a InstanceSet,
}

pub struct EliminationInput<'a> {
    pub table: &'a ObservationTable,
    pub folds: &'a FoldAssignment,
    /// Test fold of this run.
    pub fold: usize,
    pub params: &'a ParamsBySize,
    pub weights: &'a StationWeights,
    pub config: &'a ThinningConfig,
    pub seed: u64,
}

pub fn eliminate(input: &EliminationInput<'_>) -> Result<RemovalSequence, ThinningFailure> {
    eliminate_traced(input, |_| {})
}

pub fn eliminate_traced(
    input: &EliminationInput<'_>,
    mut observer: impl FnMut(&StepTrace<'_>),
) -> Result<RemovalSequence, ThinningFailure> {
    let table = input.table;
    let n = table.n_stations();
    let ids: Vec<String> = table.stations().iter().map(|s| s.id.clone()).collect();
    let mut seq = RemovalSequence { fold: input.fold, stations: ids.clone(), steps: Vec::new() };
    let fail = |seq: &RemovalSequence, error: Error| ThinningFailure { partial: seq.clone(), error };

    if let Err(e) = input.config.validate() {
        return Err(fail(&seq, e));
    }
    if input.weights.as_slice().len() != n {
        return Err(fail(&seq, Error::Config(format!("{} weights for {n} stations", input.weights.as_slice().len()))));
    }
    if n < 2 {
        return Err(fail(&seq, Error::Data("elimination needs at least two stations".into())));
    }
    let roles = FoldRoles::for_test_fold(input.fold, input.folds.n_folds);
    let schema = FeatureSchema::new(n);
    let test_rows = input.folds.rows_with_role(table, &roles, Role::Test);
    let test = test_instances(table, &test_rows, &vec![true; n]);
    if test.is_empty() {
        return Err(fail(&seq, Error::Data(format!("test fold {} has no data", input.fold))));
    }

    let train = |current: &[usize]| -> Result<TreeEnsemble> {
        let params = input
            .params
            .nearest(current.len())
            .ok_or_else(|| Error::Config("no model parameters available".into()))?;
        let predictors = station_mask(n, current.iter().copied());
        let seed = derive_seed(input.seed, &[input.fold as u64, current.len() as u64]);
        Ok(fit_on_folds(table, input.folds, &roles, &predictors, params, seed)?.0)
    };

    // Candidates are kept in lexicographic id order so ties resolve to the
    // smallest id.
    let mut current: Vec<usize> = (0..n).collect();
    current.sort_by(|a, b| ids[*a].cmp(&ids[*b]));
    let mut removed: Vec<usize> = Vec::new();
    let mut model = train(&current).map_err(|e| fail(&seq, e))?;
    let mut last_trained_at = n;
    let mut points: Vec<usize> = input.config.retraining_points.clone();
    points.sort_unstable_by(|a, b| b.cmp(a));

    let mut step = 0;
    while current.len() > 1 {
        step += 1;
        let n_cur = current.len();
        // A retraining point p is due when the count has reached it since the
        // last training. The initial model counts as trained at n.
        let due = points.iter().any(|&p| p >= n_cur && p < last_trained_at);
        let retrained = due || (step == 1 && points.contains(&n));
        if due {
            model = train(&current).map_err(|e| fail(&seq, e))?;
            last_trained_at = n_cur;
        }

        let candidates: Vec<(usize, f64)> = current
            .par_iter()
            .map(|&c| {
                let mask = schema.mask_for(removed.iter().copied().chain([c]));
                let pred = model.predict_batch_masked(&test.x, &mask)?;
                let per_station = station_rmse(&pred, &test.y, &test.meta, n);
                Ok((c, removal_objective(&per_station, input.weights)?))
            })
            .collect::<Result<_>>()
            .map_err(|e| fail(&seq, e))?;

        let mut ranked = candidates.clone();
        // Stable sort keeps id order among equal objectives.
        ranked.sort_by(|a, b| a.1.total_cmp(&b.1));
        let k = input.config.step_size.min(n_cur - 1);
        let chosen: Vec<usize> = ranked[..k].iter().map(|(s, _)| *s).collect();
        observer(&StepTrace {
            step,
            model: &model,
            removed: &removed,
            candidates: &candidates,
            chosen: &chosen,
            test: &test,
        });
        for (i, &(s, objective)) in ranked[..k].iter().enumerate() {
            current.retain(|c| *c != s);
            removed.push(s);
            seq.steps.push(RemovalStep {
                step,
                removed: ids[s].clone(),
                remaining: current.len(),
                objective,
                retrained: retrained && i == 0,
            });
        }
    }
    Ok(seq)
}

/// Runs the elimination independently for each listed test fold. Every
/// fold's outcome is returned, failed ones with their partial sequence.
pub fn eliminate_folds(
    input: &EliminationInput<'_>,
    folds: &[usize],
) -> Vec<Result<RemovalSequence, ThinningFailure>> {
    folds
        .par_iter()
        .map(|&fold| eliminate(&EliminationInput { fold, ..*input }))
        .collect()
}

/// Stations kept at each requested size: all stations minus the first
/// `N - k` removals.
pub fn extract_subsets(seq: &RemovalSequence, sizes: &[usize]) -> Result<BTreeMap<usize, Vec<String>>> {
    let n = seq.stations.len();
    let mut out = BTreeMap::new();
    for &k in sizes {
        if k < 2 || k > n {
            return Err(Error::Config(format!("subset size {k} outside 2..={n}")));
        }
        let drop = n - k;
        if seq.steps.len() < drop {
            return Err(Error::Data(format!(
                "sequence of fold {} has only {} removals, size {k} needs {drop}",
                seq.fold,
                seq.steps.len()
            )));
        }
        let gone: Vec<&str> = seq.steps[..drop].iter().map(|s| s.removed.as_str()).collect();
        let keep: Vec<String> =
            seq.stations.iter().filter(|s| !gone.contains(&s.as_str())).cloned().collect();
        out.insert(k, keep);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn objective_arithmetic() {
        let w = StationWeights::uniform(2);
        assert_eq!(removal_objective(&[[Some(0.0), Some(0.0)]; 2], &w).unwrap(), 0.0);
        let per = [[Some(0.1), Some(0.1)], [Some(0.3), Some(0.3)]];
        assert!((removal_objective(&per, &w).unwrap() - 0.2).abs() < 1e-15);
        let w10 = StationWeights::new(vec![1.0, 0.0]).unwrap();
        assert!((removal_objective(&per, &w10).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn stations_without_pairs_are_skipped() {
        let per = [[Some(0.4), None], [None, None]];
        let w = StationWeights::uniform(2);
        assert_eq!(removal_objective(&per, &w).unwrap(), 0.4);
        let w01 = StationWeights::new(vec![0.0, 1.0]).unwrap();
        assert!(removal_objective(&per, &w01).is_err());
    }

    #[test]
    fn invalid_weights() {
        assert!(StationWeights::new(vec![0.0, 0.0]).is_err());
        assert!(StationWeights::new(vec![1.0, -0.1]).is_err());
    }

    #[test]
    fn per_station_rmse() {
        let meta = [
            InstanceMeta { row: 0, station: 0, variable: Variable::Ta },
            InstanceMeta { row: 1, station: 0, variable: Variable::Ta },
            InstanceMeta { row: 0, station: 1, variable: Variable::E },
        ];
        let r = station_rmse(&[1.0, 3.0, 2.0], &[0.0, 0.0, 0.0], &meta, 3);
        assert_eq!(r[0][0], Some(5f64.sqrt()));
        assert_eq!(r[0][1], None);
        assert_eq!(r[1], [None, Some(2.0)]);
        assert_eq!(r[2], [None, None]);
    }

    #[test]
    fn nearest_params() {
        let mut m = BTreeMap::new();
        for (k, lr) in [(12, 0.1), (7, 0.3), (3, 0.5)] {
            m.insert(k, GbtParams { learning_rate: lr, ..GbtParams::default() });
        }
        let p = ParamsBySize(m);
        assert_eq!(p.nearest(11).unwrap().learning_rate, 0.1);
        assert_eq!(p.nearest(5).unwrap().learning_rate, 0.3); // tie 7 vs 3 -> 7
        assert_eq!(p.nearest(2).unwrap().learning_rate, 0.5);
        assert!(ParamsBySize::default().nearest(3).is_none());
    }

    fn seq() -> RemovalSequence {
        let stations: Vec<String> = ["A", "B", "C", "D", "E"].iter().map(|s| s.to_string()).collect();
        let steps = ["C", "A", "E", "B"]
            .iter()
            .enumerate()
            .map(|(i, s)| RemovalStep {
                step: i + 1,
                removed: s.to_string(),
                remaining: 4 - i,
                objective: 0.1,
                retrained: false,
            })
            .collect();
        RemovalSequence { fold: 0, stations, steps }
    }

    #[test]
    fn subsets_are_nested() {
        let s = seq();
        let subsets = extract_subsets(&s, &[2, 3, 4, 5]).unwrap();
        assert_eq!(subsets[&5].len(), 5);
        assert_eq!(subsets[&2], vec!["B".to_string(), "D".to_string()]);
        for k in 2..5 {
            assert!(subsets[&k].iter().all(|id| subsets[&(k + 1)].contains(id)));
        }
        assert!(extract_subsets(&s, &[1]).is_err());
        assert!(extract_subsets(&s, &[6]).is_err());
    }
}
