//! Final models on reduced predictor sets and their evaluation: error
//! metrics, climatic indicator days, grouped error percentiles and bias
//! series.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::{Duration, NaiveDate, Timelike};
use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    make_folds, station_mask, test_instances, FoldAssignment, FoldRoles, ObservationTable, Period,
    Role,
};
use crate::domain::{saturation_vapor_pressure, Timestamp, Variable};
use crate::error::{Error, Result};
use crate::gbt::TreeEnsemble;
use crate::model::fit_on_folds;
use crate::seed::derive_seed;
use crate::thinning::{extract_subsets, ParamsBySize, RemovalSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    /// Trained on year 1, evaluated on the held-out folds of year 1.
    InSample,
    /// Trained on year 1, evaluated on all of year 2 with the fold models
    /// averaged.
    Extrapolation,
    /// Trained and evaluated by cross-validation over both years.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunVariant {
    pub kind: VariantKind,
    pub train_period: Period,
    pub eval_period: Period,
}

impl RunVariant {
    pub fn in_sample(year1: Period) -> Self {
        RunVariant { kind: VariantKind::InSample, train_period: year1, eval_period: year1 }
    }

    pub fn extrapolation(year1: Period, year2: Period) -> Self {
        RunVariant { kind: VariantKind::Extrapolation, train_period: year1, eval_period: year2 }
    }

    pub fn pooled(year1: Period, year2: Period) -> Self {
        let both = year1.hull(&year2);
        RunVariant { kind: VariantKind::Pooled, train_period: both, eval_period: both }
    }

    pub fn label(&self) -> &'static str {
        match self.kind {
            VariantKind::InSample => "1->1",
            VariantKind::Extrapolation => "1->2",
            VariantKind::Pooled => "1,2->1,2",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            VariantKind::InSample | VariantKind::Pooled => self.train_period == self.eval_period,
            VariantKind::Extrapolation => self.eval_period.start >= self.train_period.end,
        };
        if !ok {
            return Err(Error::Config(format!("periods are inconsistent with variant {}", self.label())));
        }
        Ok(())
    }

    /// Fresh folds over the training period.
    pub fn folds(&self, table: &ObservationTable, seed: u64) -> Result<FoldAssignment> {
        make_folds(table, &self.train_period, seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Subsets from the elimination sequences.
    Guided,
    Random,
    /// Linear reference model on two designated stations.
    Glm,
}

impl Selection {
    pub fn as_str(self) -> &'static str {
        match self {
            Selection::Guided => "guided",
            Selection::Random => "random",
            Selection::Glm => "glm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SubsetKey {
    pub selection: Selection,
    pub size: usize,
    pub repeat: usize,
    pub fold: usize,
}

/// Predictor stations (table indices) per subset key.
pub type SubsetPlan = BTreeMap<SubsetKey, Vec<usize>>;

/// Guided subsets: for every fold, the stations kept at each size by that
/// fold's elimination sequence.
pub fn guided_plan(table: &ObservationTable, sequences: &[RemovalSequence], sizes: &[usize]) -> Result<SubsetPlan> {
    let mut plan = SubsetPlan::new();
    for seq in sequences {
        for (size, ids) in extract_subsets(seq, sizes)? {
            let idx = ids
                .iter()
                .map(|id| {
                    table.station_index(id).ok_or_else(|| Error::Data(format!("unknown station {id} in sequence")))
                })
                .collect::<Result<Vec<usize>>>()?;
            plan.insert(SubsetKey { selection: Selection::Guided, size, repeat: 0, fold: seq.fold }, idx);
        }
    }
    Ok(plan)
}

#[derive(Debug, Clone)]
pub struct FinalModel {
    pub key: SubsetKey,
    pub predictors: Vec<usize>,
    pub model: TreeEnsemble,
}

/// Trains one model per plan entry, with the entry's fold as test fold.
/// Every station stays a prediction target.
pub fn fit_final(
    table: &ObservationTable,
    folds: &FoldAssignment,
    plan: &SubsetPlan,
    params: &ParamsBySize,
    seed: u64,
) -> Result<Vec<FinalModel>> {
    let n = table.n_stations();
    plan.par_iter()
        .map(|(key, predictors)| {
            if key.fold >= folds.n_folds {
                return Err(Error::Config(format!("fold {} out of range", key.fold)));
            }
            if predictors.iter().any(|s| *s >= n) {
                return Err(Error::Config("predictor index out of range".into()));
            }
            let p = params
                .nearest(predictors.len())
                .ok_or_else(|| Error::Config("no model parameters available".into()))?;
            let roles = FoldRoles::for_test_fold(key.fold, folds.n_folds);
            let s = derive_seed(
                seed,
                &[key.selection as u64, key.size as u64, key.repeat as u64, key.fold as u64],
            );
            let (model, _) =
                fit_on_folds(table, folds, &roles, &station_mask(n, predictors.iter().copied()), p, s)?;
            Ok(FinalModel { key: *key, predictors: predictors.clone(), model })
        })
        .collect()
}

/// One predicted/observed pair in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub selection: Selection,
    pub size: usize,
    pub repeat: usize,
    pub row: usize,
    pub station: usize,
    pub variable: Variable,
    pub pred: f64,
    pub obs: f64,
}

impl Prediction {
    pub fn error(&self) -> f64 {
        self.pred - self.obs
    }
}

fn raw_predictions(
    table: &ObservationTable,
    rows: &[usize],
    model: &FinalModel,
) -> Result<(Vec<f64>, Vec<(usize, usize, Variable, f64)>)> {
    let inst = test_instances(table, rows, &station_mask(table.n_stations(), model.predictors.iter().copied()));
    let pred = model.model.predict_batch(&inst.x)?;
    let meta = inst.meta.iter().zip(&inst.y).map(|(m, y)| (m.row, m.station, m.variable, *y)).collect();
    Ok((pred, meta))
}

/// Adds derived RH pairs wherever both Ta and e exist for the same row and
/// station: `RH = 100·e/es(Ta)` on both the predicted and the observed side.
fn with_rh(mut preds: Vec<Prediction>) -> Result<Vec<Prediction>> {
    let mut ta: HashMap<(Selection, usize, usize, usize, usize), (f64, f64)> = HashMap::new();
    for p in preds.iter().filter(|p| p.variable == Variable::Ta) {
        ta.insert((p.selection, p.size, p.repeat, p.row, p.station), (p.pred, p.obs));
    }
    let mut rh = Vec::new();
    for p in preds.iter().filter(|p| p.variable == Variable::E) {
        if let Some((ta_pred, ta_obs)) = ta.get(&(p.selection, p.size, p.repeat, p.row, p.station)) {
            rh.push(Prediction {
                variable: Variable::Rh,
                pred: 100.0 * p.pred / saturation_vapor_pressure(*ta_pred)?,
                obs: 100.0 * p.obs / saturation_vapor_pressure(*ta_obs)?,
                ..*p
            });
        }
    }
    preds.extend(rh);
    Ok(preds)
}

/// Predictions of the final models over the variant's evaluation data, in
/// physical units, including derived RH.
pub fn predict_variant(
    table: &ObservationTable,
    folds: &FoldAssignment,
    models: &[FinalModel],
    variant: &RunVariant,
) -> Result<Vec<Prediction>> {
    variant.validate()?;
    let eval_rows = table.rows_in(&variant.eval_period);
    let to_physical = |key: &SubsetKey, (row, station, variable, y): (usize, usize, Variable, f64), p: f64| {
        let sc = table.scaling(station, variable);
        Prediction {
            selection: key.selection,
            size: key.size,
            repeat: key.repeat,
            row,
            station,
            variable,
            pred: sc.unscale(p),
            obs: sc.unscale(y),
        }
    };
    let mut out: Vec<Prediction> = match variant.kind {
        VariantKind::InSample | VariantKind::Pooled => {
            let parts: Vec<Vec<Prediction>> = models
                .par_iter()
                .map(|m| {
                    let roles = FoldRoles::for_test_fold(m.key.fold, folds.n_folds);
                    let rows: Vec<usize> = folds
                        .rows_with_role(table, &roles, Role::Test)
                        .into_iter()
                        .filter(|r| variant.eval_period.contains(table.time(*r)))
                        .collect();
                    let (pred, meta) = raw_predictions(table, &rows, m)?;
                    Ok(meta.into_iter().zip(pred).map(|(mt, p)| to_physical(&m.key, mt, p)).collect())
                })
                .collect::<Result<_>>()?;
            parts.into_iter().flatten().collect()
        }
        VariantKind::Extrapolation => {
            let mut groups: BTreeMap<(Selection, usize, usize), Vec<&FinalModel>> = BTreeMap::new();
            for m in models {
                groups.entry((m.key.selection, m.key.size, m.key.repeat)).or_default().push(m);
            }
            let parts: Vec<Vec<Prediction>> = groups
                .par_iter()
                .map(|(_, group)| {
                    // Target cells depend only on data presence, so every
                    // model of the group sees the same instance order.
                    let mut sum: Vec<f64> = Vec::new();
                    let mut meta = Vec::new();
                    for m in group {
                        let (pred, mt) = raw_predictions(table, &eval_rows, m)?;
                        if sum.is_empty() {
                            sum = pred;
                            meta = mt;
                        } else {
                            for (s, p) in sum.iter_mut().zip(pred) {
                                *s += p;
                            }
                        }
                    }
                    let k = group.len() as f64;
                    let key = group[0].key;
                    Ok(meta.into_iter().zip(sum).map(|(mt, s)| to_physical(&key, mt, s / k)).collect())
                })
                .collect::<Result<_>>()?;
            parts.into_iter().flatten().collect()
        }
    };
    out.sort_by_key(|p| (p.selection, p.size, p.repeat, p.station, p.variable, p.row));
    with_rh(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub rmse: f64,
    pub mae: f64,
    pub mbe: f64,
    /// Missing with fewer than two pairs or constant observations.
    pub r2: Option<f64>,
}

/// Error metrics of `pred` against `obs`; `None` without pairs.
pub fn compute_metrics(pred: &[f64], obs: &[f64]) -> Option<Metrics> {
    let n = pred.len().min(obs.len());
    if n == 0 {
        return None;
    }
    let nf = n as f64;
    let (mut sse, mut sae, mut se) = (0.0, 0.0, 0.0);
    for (p, o) in pred.iter().zip(obs) {
        let d = p - o;
        sse += d * d;
        sae += d.abs();
        se += d;
    }
    let mean_obs = obs[..n].iter().sum::<f64>() / nf;
    let sst: f64 = obs[..n].iter().map(|o| (o - mean_obs).powi(2)).sum();
    let r2 = (n >= 2 && sst > 0.0).then(|| 1.0 - sse / sst);
    Some(Metrics { n, rmse: (sse / nf).sqrt(), mae: sae / nf, mbe: se / nf, r2 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub variant: String,
    pub selection: Selection,
    pub size: usize,
    pub repeat: usize,
    /// Station id, or `None` for the network mean over stations.
    pub station: Option<String>,
    pub variable: Variable,
    pub metrics: Metrics,
}

/// Metrics per (selection, size, repeat, station, variable) plus network
/// means (unweighted over stations) per (selection, size, repeat, variable).
pub fn metrics_report(table: &ObservationTable, variant: &RunVariant, preds: &[Prediction]) -> Vec<MetricsRow> {
    let mut groups: BTreeMap<(Selection, usize, usize, Variable, usize), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for p in preds {
        let g = groups.entry((p.selection, p.size, p.repeat, p.variable, p.station)).or_default();
        g.0.push(p.pred);
        g.1.push(p.obs);
    }
    let per_station: Vec<((Selection, usize, usize, Variable, usize), Metrics)> = groups
        .par_iter()
        .filter_map(|(k, (p, o))| compute_metrics(p, o).map(|m| (*k, m)))
        .collect();
    let mut rows = Vec::new();
    let mut means: BTreeMap<(Selection, usize, usize, Variable), Vec<Metrics>> = BTreeMap::new();
    for ((sel, size, repeat, var, station), m) in per_station {
        means.entry((sel, size, repeat, var)).or_default().push(m);
        rows.push(MetricsRow {
            variant: variant.label().to_string(),
            selection: sel,
            size,
            repeat,
            station: Some(table.stations()[station].id.clone()),
            variable: var,
            metrics: m,
        });
    }
    for ((sel, size, repeat, var), ms) in means {
        rows.push(MetricsRow {
            variant: variant.label().to_string(),
            selection: sel,
            size,
            repeat,
            station: None,
            variable: var,
            metrics: mean_metrics(&ms),
        });
    }
    rows
}

/// Unweighted mean of metrics; `r2` averages the available values.
pub fn mean_metrics(ms: &[Metrics]) -> Metrics {
    let k = ms.len() as f64;
    let r2s: Vec<f64> = ms.iter().filter_map(|m| m.r2).collect();
    Metrics {
        n: ms.iter().map(|m| m.n).sum(),
        rmse: ms.iter().map(|m| m.rmse).sum::<f64>() / k,
        mae: ms.iter().map(|m| m.mae).sum::<f64>() / k,
        mbe: ms.iter().map(|m| m.mbe).sum::<f64>() / k,
        r2: (!r2s.is_empty()).then(|| r2s.iter().sum::<f64>() / r2s.len() as f64),
    }
}

/// Thresholds in °C; day windows are 00–24 UTC, night windows run from
/// `night_start_hour` to `night_end_hour` the next morning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndicatorCriteria {
    pub summer_max: f64,
    pub hot_max: f64,
    pub desert_max: f64,
    pub frost_min: f64,
    pub ice_max: f64,
    pub tropical_night_min: f64,
    pub night_start_hour: u32,
    pub night_end_hour: u32,
}

impl Default for IndicatorCriteria {
    fn default() -> Self {
        IndicatorCriteria {
            summer_max: 25.0,
            hot_max: 30.0,
            desert_max: 35.0,
            frost_min: 0.0,
            ice_max: 0.0,
            tropical_night_min: 20.0,
            night_start_hour: 18,
            night_end_hour: 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DayIndicators {
    pub summer: bool,
    pub hot: bool,
    pub desert: bool,
    pub frost: bool,
    pub ice: bool,
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IndicatorCounts {
    pub summer: usize,
    pub hot: usize,
    pub desert: usize,
    pub frost: usize,
    pub ice: usize,
    pub tropical_nights: usize,
    /// Present samples over the expected samples of the covered days.
    pub coverage: f64,
}

impl IndicatorCounts {
    pub const NAMES: [&'static str; 6] = ["summer", "hot", "desert", "frost", "ice", "tropical_night"];

    pub fn as_array(&self) -> [usize; 6] {
        [self.summer, self.hot, self.desert, self.frost, self.ice, self.tropical_nights]
    }
}

fn extrema(values: impl Iterator<Item = f64>) -> Option<(f64, f64, usize)> {
    values.fold(None, |acc, v| match acc {
        None => Some((v, v, 1)),
        Some((lo, hi, n)) => Some((lo.min(v), hi.max(v), n + 1)),
    })
}

/// Day-based indicators per calendar day (UTC), from the available samples.
pub fn daily_indicators(
    times: &[Timestamp],
    ta: &[Option<f64>],
    c: &IndicatorCriteria,
) -> BTreeMap<NaiveDate, DayIndicators> {
    let mut days: BTreeMap<NaiveDate, Vec<f64>> = BTreeMap::new();
    for (t, v) in times.iter().zip(ta) {
        if let Some(v) = v {
            days.entry(t.date_naive()).or_default().push(*v);
        }
    }
    days.into_iter()
        .filter_map(|(d, vals)| {
            let (lo, hi, n) = extrema(vals.into_iter())?;
            Some((
                d,
                DayIndicators {
                    summer: hi >= c.summer_max,
                    hot: hi >= c.hot_max,
                    desert: hi >= c.desert_max,
                    frost: lo < c.frost_min,
                    ice: hi < c.ice_max,
                    samples: n,
                },
            ))
        })
        .collect()
}

/// Tropical night flag per evening date.
pub fn tropical_nights(times: &[Timestamp], ta: &[Option<f64>], c: &IndicatorCriteria) -> BTreeMap<NaiveDate, bool> {
    let mut nights: BTreeMap<NaiveDate, f64> = BTreeMap::new();
    for (t, v) in times.iter().zip(ta) {
        let Some(v) = v else { continue };
        let h = t.hour();
        let evening = if h >= c.night_start_hour {
            t.date_naive()
        } else if h < c.night_end_hour {
            (*t - Duration::days(1)).date_naive()
        } else {
            continue;
        };
        let e = nights.entry(evening).or_insert(f64::INFINITY);
        *e = e.min(*v);
    }
    nights.into_iter().map(|(d, lo)| (d, lo >= c.tropical_night_min)).collect()
}

/// Indicator-day counts of one Ta series at `cadence_minutes`.
pub fn indicator_days(
    times: &[Timestamp],
    ta: &[Option<f64>],
    c: &IndicatorCriteria,
    cadence_minutes: u32,
) -> IndicatorCounts {
    let days = daily_indicators(times, ta, c);
    let mut out = IndicatorCounts::default();
    for d in days.values() {
        out.summer += usize::from(d.summer);
        out.hot += usize::from(d.hot);
        out.desert += usize::from(d.desert);
        out.frost += usize::from(d.frost);
        out.ice += usize::from(d.ice);
    }
    out.tropical_nights = tropical_nights(times, ta, c).values().filter(|b| **b).count();
    let per_day = (1440 / cadence_minutes.max(1)) as usize;
    let present: usize = days.values().map(|d| d.samples).sum();
    out.coverage = if days.is_empty() { 0.0 } else { present as f64 / (days.len() * per_day) as f64 };
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorRow {
    pub variant: String,
    pub selection: Selection,
    pub size: usize,
    pub indicator: String,
    /// Mean count per station from the observations.
    pub observed: f64,
    /// Mean count per station from the predictions.
    pub predicted: f64,
    pub deviation: f64,
    /// Relative to `observed`; missing when nothing was observed.
    pub deviation_pct: Option<f64>,
}

/// Mean indicator counts over stations from predicted and observed Ta,
/// evaluated on the same timestamps. Random repeats are averaged.
pub fn indicator_report(
    table: &ObservationTable,
    variant: &RunVariant,
    preds: &[Prediction],
    criteria: &IndicatorCriteria,
    cadence_minutes: u32,
) -> Vec<IndicatorRow> {
    let mut series: BTreeMap<(Selection, usize, usize, usize), (Vec<Timestamp>, Vec<Option<f64>>, Vec<Option<f64>>)> =
        BTreeMap::new();
    for p in preds.iter().filter(|p| p.variable == Variable::Ta) {
        let s = series.entry((p.selection, p.size, p.repeat, p.station)).or_default();
        s.0.push(table.time(p.row));
        s.1.push(Some(p.pred));
        s.2.push(Some(p.obs));
    }
    let mut acc: BTreeMap<(Selection, usize), ([f64; 6], [f64; 6], usize)> = BTreeMap::new();
    for ((sel, size, _, _), (t, pred, obs)) in &series {
        let pc = indicator_days(t, pred, criteria, cadence_minutes).as_array();
        let oc = indicator_days(t, obs, criteria, cadence_minutes).as_array();
        let e = acc.entry((*sel, *size)).or_insert(([0.0; 6], [0.0; 6], 0));
        for i in 0..6 {
            e.0[i] += pc[i] as f64;
            e.1[i] += oc[i] as f64;
        }
        e.2 += 1;
    }
    let mut rows = Vec::new();
    for ((sel, size), (p, o, k)) in acc {
        for (i, name) in IndicatorCounts::NAMES.iter().enumerate() {
            let (pm, om) = (p[i] / k as f64, o[i] / k as f64);
            rows.push(IndicatorRow {
                variant: variant.label().to_string(),
                selection: sel,
                size,
                indicator: name.to_string(),
                observed: om,
                predicted: pm,
                deviation: pm - om,
                deviation_pct: (om > 0.0).then(|| 100.0 * (pm - om) / om),
            });
        }
    }
    rows
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 100]`.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q / 100.0;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub const ERROR_PERCENTILES: [f64; 5] = [1.0, 5.0, 50.0, 95.0, 99.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    /// Day is `[day_start_hour, day_end_hour)` UTC.
    pub day_start_hour: u32,
    pub day_end_hour: u32,
    /// Days whose network-mean daily max Ta reaches this are hot.
    pub hot_threshold: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { day_start_hour: 6, day_end_hour: 18, hot_threshold: 30.0 }
    }
}

/// Days whose network mean of the station daily maxima of observed Ta
/// reaches `threshold`.
pub fn hot_days(table: &ObservationTable, rows: &[usize], threshold: f64) -> BTreeSet<NaiveDate> {
    let mut max: BTreeMap<(NaiveDate, usize), f64> = BTreeMap::new();
    for &r in rows {
        for s in 0..table.n_stations() {
            if let Some(v) = table.physical(r, s, Variable::Ta) {
                let e = max.entry((table.date(r), s)).or_insert(f64::NEG_INFINITY);
                *e = e.max(v);
            }
        }
    }
    let mut per_day: BTreeMap<NaiveDate, (f64, usize)> = BTreeMap::new();
    for ((d, _), v) in max {
        let e = per_day.entry(d).or_default();
        e.0 += v;
        e.1 += 1;
    }
    per_day.into_iter().filter(|(_, (sum, n))| sum / *n as f64 >= threshold).map(|(d, _)| d).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentileRow {
    pub selection: Selection,
    pub size: usize,
    pub variable: Variable,
    /// `day` or `night`.
    pub period: String,
    /// `all` or `hot`.
    pub condition: String,
    pub n: usize,
    pub percentiles: [f64; 5],
}

/// Error percentiles grouped by day/night and all/hot conditions, pooled
/// over stations and repeats. Empty groups are left out with a warning.
pub fn error_splits(
    table: &ObservationTable,
    preds: &[Prediction],
    hot: &BTreeSet<NaiveDate>,
    config: &SplitConfig,
) -> Vec<PercentileRow> {
    let mut groups: BTreeMap<(Selection, usize, Variable, bool, bool), Vec<f64>> = BTreeMap::new();
    let mut keys: BTreeSet<(Selection, usize, Variable)> = BTreeSet::new();
    for p in preds {
        let t = table.time(p.row);
        let is_day = (config.day_start_hour..config.day_end_hour).contains(&t.hour());
        keys.insert((p.selection, p.size, p.variable));
        groups.entry((p.selection, p.size, p.variable, is_day, false)).or_default().push(p.error());
        if hot.contains(&t.date_naive()) {
            groups.entry((p.selection, p.size, p.variable, is_day, true)).or_default().push(p.error());
        }
    }
    let mut rows = Vec::new();
    for (sel, size, var) in keys {
        for is_day in [true, false] {
            for is_hot in [false, true] {
                let period = if is_day { "day" } else { "night" };
                let condition = if is_hot { "hot" } else { "all" };
                let Some(errs) = groups.get_mut(&(sel, size, var, is_day, is_hot)) else {
                    debug!("no errors for {} size {size} {var} {period}/{condition}", sel.as_str());
                    continue;
                };
                errs.sort_by(f64::total_cmp);
                rows.push(PercentileRow {
                    selection: sel,
                    size,
                    variable: var,
                    period: period.into(),
                    condition: condition.into(),
                    n: errs.len(),
                    percentiles: ERROR_PERCENTILES.map(|q| percentile_sorted(errs, q)),
                });
            }
        }
    }
    rows
}

/// Centered moving mean over a regular grid with `steps_per_day` slots per
/// day and a window of `window_days`. Windows where fewer than
/// `min_availability` of the slots hold a value are missing.
pub fn moving_mean(values: &[Option<f64>], steps_per_day: usize, window_days: f64, min_availability: f64) -> Vec<Option<f64>> {
    let half = ((window_days * steps_per_day as f64) / 2.0).floor() as usize;
    let width = (2 * half + 1) as f64;
    let mut sum = vec![0.0; values.len() + 1];
    let mut cnt = vec![0usize; values.len() + 1];
    for (i, v) in values.iter().enumerate() {
        sum[i + 1] = sum[i] + v.unwrap_or(0.0);
        cnt[i + 1] = cnt[i] + usize::from(v.is_some());
    }
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            let n = cnt[hi] - cnt[lo];
            (n > 0 && n as f64 / width >= min_availability).then(|| (sum[hi] - sum[lo]) / n as f64)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasPoint {
    pub time: Timestamp,
    pub error: Option<f64>,
    pub moving_mean: Option<f64>,
}

/// Raw errors of one station and variable on the table grid plus their
/// centered 7-day moving mean.
pub fn bias_timeseries(
    table: &ObservationTable,
    preds: &[Prediction],
    station: usize,
    variable: Variable,
    rows: &[usize],
    steps_per_day: usize,
) -> Vec<BiasPoint> {
    let pos: HashMap<usize, usize> = rows.iter().enumerate().map(|(i, r)| (*r, i)).collect();
    let mut errors = vec![None; rows.len()];
    for p in preds.iter().filter(|p| p.station == station && p.variable == variable) {
        if let Some(i) = pos.get(&p.row) {
            errors[*i] = Some(p.error());
        }
    }
    let mm = moving_mean(&errors, steps_per_day, 7.0, 0.1);
    rows.iter()
        .zip(errors)
        .zip(mm)
        .map(|((r, error), moving_mean)| BiasPoint { time: table.time(*r), error, moving_mean })
        .collect()
}
