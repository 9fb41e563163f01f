//! Wide-format table, min-max scaling, cross-validation folds and the
//! masked-target training instances fed to the imputation model.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::TAU;

use chrono::{Datelike, NaiveDate, Timelike};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{StationMeta, Timestamp, Variable};
use crate::error::{Error, Result};
use crate::gbt::FeatureMatrix;
use crate::series::Series;

pub const N_FOLDS: usize = 10;
/// Time of day and day of year, each as a (sin, cos) pair.
pub const N_TIME_FEATURES: usize = 4;
/// svf, elevation, latitude, longitude of the target plus a two-column
/// variable indicator.
pub const N_TARGET_FEATURES: usize = 6;
const DAYS_PER_YEAR: f64 = 365.25;

/// Half-open interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Period {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl Period {
    pub fn new(start: Timestamp, end: Timestamp) -> Result<Self> {
        if start >= end {
            return Err(Error::Config(format!("period {start} .. {end} is empty")));
        }
        Ok(Period { start, end })
    }

    pub fn contains(&self, t: Timestamp) -> bool {
        t >= self.start && t < self.end
    }

    /// Smallest period covering both.
    pub fn hull(&self, other: &Period) -> Period {
        Period { start: self.start.min(other.start), end: self.end.max(other.end) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub min: f64,
    pub max: f64,
}

impl ScalingParams {
    pub fn scale(&self, x: f64) -> f64 {
        (x - self.min) / (self.max - self.min)
    }

    pub fn unscale(&self, s: f64) -> f64 {
        self.min + s * (self.max - self.min)
    }
}

fn var_slot(v: Variable) -> usize {
    match v {
        Variable::Ta => 0,
        Variable::E => 1,
        Variable::Rh => panic!("relative humidity is not a table column"),
    }
}

/// Rows are timestamps on a regular grid, columns are (station, Ta|e) pairs.
/// Cells hold scaled values; scaling parameters come from the training
/// period only, so evaluation-period cells may leave `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTable {
    times: Vec<Timestamp>,
    stations: Vec<StationMeta>,
    cells: Vec<Option<f64>>,
    scaling: Vec<ScalingParams>,
}

impl ObservationTable {
    /// Builds a table from physical values laid out row-major with columns
    /// `[s0.Ta, s0.e, s1.Ta, ...]`.
    pub fn from_physical(
        times: Vec<Timestamp>,
        stations: Vec<StationMeta>,
        physical: Vec<Option<f64>>,
        train_period: &Period,
    ) -> Result<Self> {
        let n_cols = 2 * stations.len();
        if physical.len() != times.len() * n_cols {
            return Err(Error::Data(format!(
                "table has {} cells, expected {} rows x {} columns",
                physical.len(),
                times.len(),
                n_cols
            )));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data("table timestamps must be strictly increasing".into()));
        }
        let mut lo = vec![f64::INFINITY; n_cols];
        let mut hi = vec![f64::NEG_INFINITY; n_cols];
        for (r, t) in times.iter().enumerate() {
            if !train_period.contains(*t) {
                continue;
            }
            for c in 0..n_cols {
                if let Some(v) = physical[r * n_cols + c] {
                    lo[c] = lo[c].min(v);
                    hi[c] = hi[c].max(v);
                }
            }
        }
        let mut scaling = Vec::with_capacity(n_cols);
        for c in 0..n_cols {
            if !(lo[c].is_finite() && hi[c].is_finite() && hi[c] > lo[c]) {
                return Err(Error::Config(format!(
                    "column {}/{} is degenerate over the training period (min {}, max {})",
                    stations[c / 2].id,
                    Variable::MODELED[c % 2],
                    lo[c],
                    hi[c]
                )));
            }
            scaling.push(ScalingParams { min: lo[c], max: hi[c] });
        }
        let cells = physical
            .iter()
            .enumerate()
            .map(|(i, v)| v.map(|v| scaling[i % n_cols].scale(v)))
            .collect();
        Ok(ObservationTable { times, stations, cells, scaling })
    }

    pub fn n_rows(&self) -> usize {
        self.times.len()
    }

    pub fn n_stations(&self) -> usize {
        self.stations.len()
    }

    pub fn n_columns(&self) -> usize {
        2 * self.stations.len()
    }

    pub fn times(&self) -> &[Timestamp] {
        &self.times
    }

    pub fn time(&self, row: usize) -> Timestamp {
        self.times[row]
    }

    pub fn date(&self, row: usize) -> NaiveDate {
        self.times[row].date_naive()
    }

    pub fn stations(&self) -> &[StationMeta] {
        &self.stations
    }

    pub fn station_index(&self, id: &str) -> Option<usize> {
        self.stations.iter().position(|s| s.id == id)
    }

    pub fn column(station: usize, variable: Variable) -> usize {
        2 * station + var_slot(variable)
    }

    pub fn scaled(&self, row: usize, station: usize, variable: Variable) -> Option<f64> {
        self.cells[row * self.n_columns() + Self::column(station, variable)]
    }

    pub fn physical(&self, row: usize, station: usize, variable: Variable) -> Option<f64> {
        self.scaled(row, station, variable).map(|v| self.scaling(station, variable).unscale(v))
    }

    pub fn scaling(&self, station: usize, variable: Variable) -> ScalingParams {
        self.scaling[Self::column(station, variable)]
    }

    pub fn scaling_params(&self) -> &[ScalingParams] {
        &self.scaling
    }

    pub fn has_data(&self, row: usize, station: usize) -> bool {
        Variable::MODELED.iter().any(|v| self.scaled(row, station, *v).is_some())
    }

    pub fn rows_in(&self, period: &Period) -> Vec<usize> {
        (0..self.n_rows()).filter(|r| period.contains(self.times[*r])).collect()
    }

    /// Copy with the listed stations' cells deleted everywhere.
    pub fn without_stations(&self, remove: &[usize]) -> ObservationTable {
        let mut t = self.clone();
        let n_cols = t.n_columns();
        for r in 0..t.n_rows() {
            for &s in remove {
                t.cells[r * n_cols + 2 * s] = None;
                t.cells[r * n_cols + 2 * s + 1] = None;
            }
        }
        t
    }

    /// Replaces one station's cells with physical values (scaled with the
    /// existing parameters). Used for fixtures.
    pub fn set_physical(&mut self, row: usize, station: usize, variable: Variable, v: Option<f64>) {
        let c = Self::column(station, variable);
        let n_cols = self.n_columns();
        self.cells[row * n_cols + c] = v.map(|v| self.scaling[c].scale(v));
    }
}

/// Assembles the wide table from resampled Ta and e series.
pub fn build_wide_table(
    series: &[Series],
    stations: &[StationMeta],
    cadence_minutes: u32,
    train_period: &Period,
) -> Result<ObservationTable> {
    crate::domain::validate_network(stations)?;
    let step = i64::from(cadence_minutes) * 60;
    let station_idx: HashMap<&str, usize> =
        stations.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
    let mut first = i64::MAX;
    let mut last = i64::MIN;
    for s in series {
        if s.variable == Variable::Rh {
            return Err(Error::Data(format!(
                "{}: convert RH to vapor pressure before building the table",
                s.station
            )));
        }
        if !station_idx.contains_key(s.station.as_str()) {
            return Err(Error::Data(format!("series for unknown station {}", s.station)));
        }
        for t in &s.times {
            let secs = t.timestamp();
            if secs.rem_euclid(step) != 0 {
                return Err(Error::Data(format!(
                    "{}/{}: timestamp {t} is not on the {cadence_minutes}-minute grid",
                    s.station, s.variable
                )));
            }
            first = first.min(secs);
            last = last.max(secs);
        }
    }
    if first > last {
        return Err(Error::Data("no observations to tabulate".into()));
    }
    let n_rows = ((last - first) / step + 1) as usize;
    let n_cols = 2 * stations.len();
    let times: Vec<Timestamp> = (0..n_rows)
        .map(|r| Timestamp::from_timestamp(first + r as i64 * step, 0).expect("valid grid time"))
        .collect();
    let mut physical = vec![None; n_rows * n_cols];
    for s in series {
        let c = ObservationTable::column(station_idx[s.station.as_str()], s.variable);
        for (t, v) in s.times.iter().zip(&s.values) {
            let r = ((t.timestamp() - first) / step) as usize;
            physical[r * n_cols + c] = *v;
        }
    }
    ObservationTable::from_physical(times, stations.to_vec(), physical, train_period)
}

/// Cyclic encodings of the time of day and the day of year.
pub fn time_features(t: Timestamp) -> [f64; N_TIME_FEATURES] {
    let minutes = f64::from(t.hour() * 60 + t.minute()) + f64::from(t.second()) / 60.0;
    let tod = TAU * minutes / 1440.0;
    let doy = TAU * f64::from(t.ordinal()) / DAYS_PER_YEAR;
    [tod.sin(), tod.cos(), doy.sin(), doy.cos()]
}

/// Column layout of the predictor vector:
/// `[s0.Ta, s0.e, …, s(n-1).e, tod_sin, tod_cos, doy_sin, doy_cos,
///   target_svf, target_elevation, target_lat, target_lon, is_ta, is_e]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureSchema {
    pub n_stations: usize,
}

impl FeatureSchema {
    pub fn new(n_stations: usize) -> Self {
        FeatureSchema { n_stations }
    }

    pub fn n_features(&self) -> usize {
        2 * self.n_stations + N_TIME_FEATURES + N_TARGET_FEATURES
    }

    pub fn station_columns(&self, station: usize) -> [usize; 2] {
        [2 * station, 2 * station + 1]
    }

    fn time_offset(&self) -> usize {
        2 * self.n_stations
    }

    fn target_offset(&self) -> usize {
        2 * self.n_stations + N_TIME_FEATURES
    }

    /// Feature mask hiding the listed stations' predictor columns.
    pub fn mask_for(&self, stations: impl IntoIterator<Item = usize>) -> Vec<bool> {
        let mut m = vec![false; self.n_features()];
        for s in stations {
            for c in self.station_columns(s) {
                m[c] = true;
            }
        }
        m
    }

    pub fn feature_names(&self, stations: &[StationMeta]) -> Vec<String> {
        let mut names: Vec<String> =
            stations.iter().flat_map(|s| [format!("{}.Ta", s.id), format!("{}.e", s.id)]).collect();
        names.extend(
            ["tod_sin", "tod_cos", "doy_sin", "doy_cos", "target_svf", "target_elevation"]
                .iter()
                .chain(&["target_lat", "target_lon", "is_ta", "is_e"])
                .map(|s| s.to_string()),
        );
        names
    }
}

/// Day → fold index, stratified by network-mean daily Ta.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub n_folds: usize,
    pub days: BTreeMap<NaiveDate, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Train,
    Validation,
    Test,
}

/// Roles of the folds in one model run: one test fold, the next fold for
/// validation, all others for training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FoldRoles {
    pub test: usize,
    pub validation: usize,
    pub n_folds: usize,
}

impl FoldRoles {
    pub fn for_test_fold(test: usize, n_folds: usize) -> Self {
        FoldRoles { test, validation: (test + 1) % n_folds, n_folds }
    }

    pub fn role(&self, fold: usize) -> Role {
        if fold == self.test {
            Role::Test
        } else if fold == self.validation {
            Role::Validation
        } else {
            Role::Train
        }
    }
}

impl FoldAssignment {
    pub fn fold_of(&self, date: NaiveDate) -> Option<usize> {
        self.days.get(&date).copied()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_folds];
        for f in self.days.values() {
            sizes[*f] += 1;
        }
        sizes
    }

    /// Table rows whose day has the given role.
    pub fn rows_with_role(&self, table: &ObservationTable, roles: &FoldRoles, role: Role) -> Vec<usize> {
        (0..table.n_rows())
            .filter(|r| self.fold_of(table.date(*r)).is_some_and(|f| roles.role(f) == role))
            .collect()
    }

    /// All rows on days covered by the assignment.
    pub fn rows(&self, table: &ObservationTable) -> Vec<usize> {
        (0..table.n_rows()).filter(|r| self.days.contains_key(&table.date(*r))).collect()
    }
}

/// Network-mean Ta per day over `period`, in °C. Days with data but no Ta
/// map to `None`.
pub fn daily_mean_ta(table: &ObservationTable, period: &Period) -> BTreeMap<NaiveDate, Option<f64>> {
    let mut acc: BTreeMap<NaiveDate, (f64, usize, bool)> = BTreeMap::new();
    for r in table.rows_in(period) {
        let date = table.date(r);
        for s in 0..table.n_stations() {
            if let Some(v) = table.physical(r, s, Variable::Ta) {
                let e = acc.entry(date).or_insert((0.0, 0, false));
                e.0 += v;
                e.1 += 1;
            } else if table.has_data(r, s) {
                acc.entry(date).or_insert((0.0, 0, false)).2 = true;
            }
        }
    }
    acc.into_iter().map(|(d, (sum, n, _))| (d, (n > 0).then(|| sum / n as f64))).collect()
}

/// Sorts days by network-mean Ta and deals each consecutive block of ten
/// days one per fold, shuffled within the block, so every fold spans the
/// whole temperature range.
pub fn make_folds(table: &ObservationTable, period: &Period, seed: u64) -> Result<FoldAssignment> {
    let means = daily_mean_ta(table, period);
    if means.len() < N_FOLDS {
        return Err(Error::Data(format!(
            "{} days with data; at least {N_FOLDS} are needed for cross-validation",
            means.len()
        )));
    }
    let mut days: Vec<(NaiveDate, f64)> =
        means.into_iter().map(|(d, m)| (d, m.unwrap_or(f64::NEG_INFINITY))).collect();
    days.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = BTreeMap::new();
    for block in days.chunks(N_FOLDS) {
        let mut folds: Vec<usize> = (0..N_FOLDS).collect();
        folds.shuffle(&mut rng);
        for ((date, _), fold) in block.iter().zip(folds) {
            assignment.insert(*date, fold);
        }
    }
    Ok(FoldAssignment { n_folds: N_FOLDS, days: assignment })
}

/// Draws `n` uniformly from `1..=max(1, floor(N/4))` and then `n` distinct
/// stations from `available`. Returned sorted.
pub fn draw_target_stations<R: Rng + ?Sized>(available: &[usize], rng: &mut R) -> Vec<usize> {
    if available.is_empty() {
        return Vec::new();
    }
    let n_max = (available.len() / 4).max(1);
    let n = rng.random_range(1..=n_max);
    let mut picked: Vec<usize> =
        index::sample(rng, available.len(), n).into_iter().map(|i| available[i]).collect();
    picked.sort_unstable();
    picked
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstanceMeta {
    pub row: usize,
    pub station: usize,
    pub variable: Variable,
}

/// One training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingInstance {
    pub predictors: Vec<Option<f64>>,
    pub target_station: usize,
    pub target_variable: Variable,
    pub target_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSet {
    pub x: FeatureMatrix,
    pub y: Vec<f64>,
    pub meta: Vec<InstanceMeta>,
}

impl InstanceSet {
    fn new(schema: &FeatureSchema) -> Self {
        InstanceSet { x: FeatureMatrix::new(schema.n_features()), y: Vec::new(), meta: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn instance(&self, i: usize) -> TrainingInstance {
        TrainingInstance {
            predictors: self.x.row(i).to_vec(),
            target_station: self.meta[i].station,
            target_variable: self.meta[i].variable,
            target_value: self.y[i],
        }
    }
}

/// Training, validation and test instances for one fold configuration.
#[derive(Debug, Clone)]
pub struct FoldInstances {
    pub train: InstanceSet,
    pub validation: InstanceSet,
    pub test: InstanceSet,
}

/// Fills the station and time columns for `row`. Stations that are not
/// predictors or are listed in `masked` stay missing.
fn fill_row(
    table: &ObservationTable,
    schema: &FeatureSchema,
    row: usize,
    predictors: &[bool],
    masked: &[usize],
    buf: &mut [Option<f64>],
) {
    for s in 0..schema.n_stations {
        let [ta, e] = schema.station_columns(s);
        if predictors[s] {
            buf[ta] = table.scaled(row, s, Variable::Ta);
            buf[e] = table.scaled(row, s, Variable::E);
        } else {
            buf[ta] = None;
            buf[e] = None;
        }
    }
    for &s in masked {
        let [ta, e] = schema.station_columns(s);
        buf[ta] = None;
        buf[e] = None;
    }
    let off = schema.time_offset();
    for (i, v) in time_features(table.time(row)).into_iter().enumerate() {
        buf[off + i] = Some(v);
    }
}

fn set_target(
    table: &ObservationTable,
    schema: &FeatureSchema,
    station: usize,
    variable: Variable,
    buf: &mut [Option<f64>],
) {
    let meta = &table.stations()[station];
    let off = schema.target_offset();
    buf[off] = Some(meta.svf);
    buf[off + 1] = Some(meta.elevation);
    buf[off + 2] = Some(meta.latitude);
    buf[off + 3] = Some(meta.longitude);
    buf[off + 4] = Some(if variable == Variable::Ta { 1.0 } else { 0.0 });
    buf[off + 5] = Some(if variable == Variable::E { 1.0 } else { 0.0 });
}

/// Masked-target instances: at every row a random set of stations with data
/// becomes the targets and all of their predictor cells are deleted.
pub fn masked_instances<R: Rng + ?Sized>(
    table: &ObservationTable,
    rows: &[usize],
    predictors: &[bool],
    rng: &mut R,
) -> InstanceSet {
    let schema = FeatureSchema::new(table.n_stations());
    let mut set = InstanceSet::new(&schema);
    let mut buf = vec![None; schema.n_features()];
    for &row in rows {
        let available: Vec<usize> = (0..table.n_stations()).filter(|s| table.has_data(row, *s)).collect();
        if available.is_empty() {
            continue;
        }
        let targets = draw_target_stations(&available, rng);
        fill_row(table, &schema, row, predictors, &targets, &mut buf);
        for &s in &targets {
            for v in Variable::MODELED {
                if let Some(y) = table.scaled(row, s, v) {
                    set_target(table, &schema, s, v, &mut buf);
                    set.x.push_row(&buf).expect("schema width");
                    set.y.push(y);
                    set.meta.push(InstanceMeta { row, station: s, variable: v });
                }
            }
        }
    }
    set
}

/// Evaluation instances: every present (station, variable) cell is a target,
/// with only that station's own predictors deleted.
pub fn test_instances(table: &ObservationTable, rows: &[usize], predictors: &[bool]) -> InstanceSet {
    let schema = FeatureSchema::new(table.n_stations());
    let mut set = InstanceSet::new(&schema);
    let mut buf = vec![None; schema.n_features()];
    for &row in rows {
        for s in 0..table.n_stations() {
            if !table.has_data(row, s) {
                continue;
            }
            fill_row(table, &schema, row, predictors, &[s], &mut buf);
            for v in Variable::MODELED {
                if let Some(y) = table.scaled(row, s, v) {
                    set_target(table, &schema, s, v, &mut buf);
                    set.x.push_row(&buf).expect("schema width");
                    set.y.push(y);
                    set.meta.push(InstanceMeta { row, station: s, variable: v });
                }
            }
        }
    }
    set
}

/// Instances for one model run: masked-target train and validation sets and
/// an exhaustive test set.
pub fn build_training_instances(
    table: &ObservationTable,
    folds: &FoldAssignment,
    roles: &FoldRoles,
    predictors: &[bool],
    seed: u64,
) -> FoldInstances {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train_rows = folds.rows_with_role(table, roles, Role::Train);
    let val_rows = folds.rows_with_role(table, roles, Role::Validation);
    let test_rows = folds.rows_with_role(table, roles, Role::Test);
    FoldInstances {
        train: masked_instances(table, &train_rows, predictors, &mut rng),
        validation: masked_instances(table, &val_rows, predictors, &mut rng),
        test: test_instances(table, &test_rows, predictors),
    }
}

/// Station membership as a boolean mask over the table's stations.
pub fn station_mask(n_stations: usize, members: impl IntoIterator<Item = usize>) -> Vec<bool> {
    let mut m = vec![false; n_stations];
    for s in members {
        m[s] = true;
    }
    m
}
