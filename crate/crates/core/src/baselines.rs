//! Reference models: a per-station linear model on two designated reference
//! stations with an interaction term, and randomly drawn predictor subsets.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ObservationTable, Period};
use crate::domain::{saturation_vapor_pressure, Variable};
use crate::error::{Error, Result};
use crate::evaluation::{Prediction, Selection, SubsetKey, SubsetPlan};
use crate::seed::derive_seed;

pub const MIN_GLM_ROWS: usize = 5;
/// Largest accepted ratio of the extreme singular values of the design.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmModel {
    pub station: String,
    pub variable: Variable,
    /// `[b0, b1, b2, b3]` of `y = b0 + b1·x1 + b2·x2 + b3·x1·x2`.
    pub coefficients: [f64; 4],
    pub references: [String; 2],
    pub n_obs: usize,
    pub r2_train: f64,
}

impl GlmModel {
    pub fn predict(&self, x1: f64, x2: f64) -> f64 {
        let b = &self.coefficients;
        b[0] + b[1] * x1 + b[2] * x2 + b[3] * x1 * x2
    }
}

/// Ordinary least squares on the complete cases of `(y, x1, x2)`.
pub fn fit_glm(y: &[Option<f64>], x1: &[Option<f64>], x2: &[Option<f64>]) -> Result<([f64; 4], usize, f64)> {
    let rows: Vec<(f64, f64, f64)> = y
        .iter()
        .zip(x1)
        .zip(x2)
        .filter_map(|((y, a), b)| Some(((*y)?, (*a)?, (*b)?)))
        .collect();
    if rows.len() < MIN_GLM_ROWS {
        return Err(Error::Data(format!("{} complete cases, need {MIN_GLM_ROWS}", rows.len())));
    }
    let n = rows.len();
    let design = DMatrix::from_fn(n, 4, |i, j| {
        let (_, a, b) = rows[i];
        [1.0, a, b, a * b][j]
    });
    let target = DVector::from_iterator(n, rows.iter().map(|r| r.0));
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = smax / smin;
    if !(condition.is_finite() && condition < MAX_CONDITION) {
        return Err(Error::Numerical(format!(
            "rank-deficient design: singular values {:?}, condition {condition:e}",
            svd.singular_values.as_slice()
        )));
    }
    let beta = svd.solve(&target, 0.0).map_err(|e| Error::Numerical(e.to_string()))?;
    let coefficients = [beta[0], beta[1], beta[2], beta[3]];
    let fitted = &design * &beta;
    let mean = target.mean();
    let sse: f64 = fitted.iter().zip(target.iter()).map(|(f, t)| (f - t).powi(2)).sum();
    let sst: f64 = target.iter().map(|t| (t - mean).powi(2)).sum();
    let r2 = if sst > 0.0 { 1.0 - sse / sst } else { f64::NAN };
    if coefficients.iter().any(|c| !c.is_finite()) {
        return Err(Error::Numerical("non-finite regression coefficients".into()));
    }
    Ok((coefficients, n, r2))
}

/// Physical value of `variable` at a table cell; RH is derived from Ta and e.
fn cell(table: &ObservationTable, row: usize, station: usize, variable: Variable) -> Option<f64> {
    match variable {
        Variable::Rh => {
            let ta = table.physical(row, station, Variable::Ta)?;
            let e = table.physical(row, station, Variable::E)?;
            Some(100.0 * e / saturation_vapor_pressure(ta).ok()?)
        }
        v => table.physical(row, station, v),
    }
}

/// Ta and RH models for every station except the two references, fitted on
/// `train_period` and evaluated on `eval_period`. The returned predictions
/// cover Ta, RH and e (from predicted RH and Ta).
pub fn glm_baseline(
    table: &ObservationTable,
    references: [usize; 2],
    train_period: &Period,
    eval_period: &Period,
) -> Result<(Vec<GlmModel>, Vec<Prediction>)> {
    let n = table.n_stations();
    if references[0] == references[1] || references.iter().any(|r| *r >= n) {
        return Err(Error::Config("GLM needs two distinct reference stations".into()));
    }
    let train_rows = table.rows_in(train_period);
    let eval_rows = table.rows_in(eval_period);
    let ids: Vec<String> = table.stations().iter().map(|s| s.id.clone()).collect();
    let targets: Vec<usize> = (0..n).filter(|s| !references.contains(s)).collect();
    let fitted: Vec<(Vec<GlmModel>, Vec<Prediction>)> = targets
        .par_iter()
        .map(|&s| {
            let mut models = Vec::new();
            let mut preds = Vec::new();
            let mut ta_pred = vec![None; eval_rows.len()];
            for variable in [Variable::Ta, Variable::Rh] {
                let col = |st: usize, rows: &[usize]| -> Vec<Option<f64>> {
                    rows.iter().map(|r| cell(table, *r, st, variable)).collect()
                };
                let (coefficients, n_obs, r2_train) = fit_glm(
                    &col(s, &train_rows),
                    &col(references[0], &train_rows),
                    &col(references[1], &train_rows),
                )
                .map_err(|e| match e {
                    Error::Numerical(m) => Error::Numerical(format!("GLM {}/{variable}: {m}", ids[s])),
                    Error::Data(m) => Error::Data(format!("GLM {}/{variable}: {m}", ids[s])),
                    other => other,
                })?;
                let model = GlmModel {
                    station: ids[s].clone(),
                    variable,
                    coefficients,
                    references: [ids[references[0]].clone(), ids[references[1]].clone()],
                    n_obs,
                    r2_train,
                };
                for (i, &r) in eval_rows.iter().enumerate() {
                    let (Some(a), Some(b)) = (cell(table, r, references[0], variable), cell(table, r, references[1], variable))
                    else {
                        continue;
                    };
                    let pred = model.predict(a, b);
                    if variable == Variable::Ta {
                        ta_pred[i] = Some(pred);
                    }
                    let mut push = |variable, pred, obs: Option<f64>| {
                        if let Some(obs) = obs {
                            preds.push(Prediction { selection: Selection::Glm, size: 2, repeat: 0, row: r, station: s, variable, pred, obs });
                        }
                    };
                    push(variable, pred, cell(table, r, s, variable));
                    if variable == Variable::Rh {
                        if let Some(t) = ta_pred[i] {
                            let e = pred / 100.0 * saturation_vapor_pressure(t)?;
                            push(Variable::E, e, cell(table, r, s, Variable::E));
                        }
                    }
                }
                models.push(model);
            }
            Ok((models, preds))
        })
        .collect::<Result<_>>()?;
    let mut models = Vec::new();
    let mut preds = Vec::new();
    for (m, p) in fitted {
        models.extend(m);
        preds.extend(p);
    }
    preds.sort_by_key(|p| (p.station, p.variable, p.row));
    Ok((models, preds))
}

/// Uniformly drawn predictor subsets, `repeats` per (size, fold).
pub fn random_subsets(n_stations: usize, sizes: &[usize], n_folds: usize, repeats: usize, seed: u64) -> Result<SubsetPlan> {
    let mut plan = SubsetPlan::new();
    for &size in sizes {
        if size == 0 || size > n_stations {
            return Err(Error::Config(format!("subset size {size} outside 1..={n_stations}")));
        }
        for fold in 0..n_folds {
            for repeat in 0..repeats {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[size as u64, fold as u64, repeat as u64]));
                let mut s = index::sample(&mut rng, n_stations, size).into_vec();
                s.sort_unstable();
                plan.insert(SubsetKey { selection: Selection::Random, size, repeat, fold }, s);
            }
        }
    }
    Ok(plan)
}
