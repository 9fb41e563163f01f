//! Shared fixtures for the integration and acceptance tests.
#![allow(dead_code)]

use stationthin::dataset::{make_folds, FeatureSchema, FoldAssignment, InstanceSet, ObservationTable, Period};
use stationthin::domain::{StationClass, Variable};
use stationthin::gbt::{GbtParams, SplitMode, TreeEnsemble};
use stationthin::pipeline::network_table;
use stationthin::synth::{generate, Layout, ScenarioConfig, StationSpec, SyntheticNetwork};

pub struct Fixture {
    pub net: SyntheticNetwork,
    pub table: ObservationTable,
    pub folds: FoldAssignment,
    pub period: Period,
}

pub fn whole_period(net: &SyntheticNetwork, cadence_minutes: u32) -> Period {
    let end = *net.times.last().unwrap() + chrono::Duration::minutes(cadence_minutes as i64);
    Period::new(net.times[0], end).unwrap()
}

/// Table at `cadence_minutes` over the whole scenario, folds drawn over it.
pub fn table_for(net: SyntheticNetwork, cadence_minutes: u32, seed: u64) -> Fixture {
    let period = whole_period(&net, cadence_minutes);
    let table = network_table(&net, false, cadence_minutes, &period).unwrap();
    let folds = make_folds(&table, &period, seed).unwrap();
    Fixture { net, table, folds, period }
}

pub fn fixture(cfg: &ScenarioConfig, seed: u64, cadence_minutes: u32) -> Fixture {
    table_for(generate(cfg, seed).unwrap(), cadence_minutes, seed)
}

pub fn random_layout(n: usize, days: u32) -> ScenarioConfig {
    ScenarioConfig {
        days,
        cadence_minutes: 30,
        layout: Layout::Random { n_stations: n, extent_km: 10.0 },
        ..ScenarioConfig::default()
    }
}

pub fn spec(id: &str, x_km: f64, y_km: f64) -> StationSpec {
    StationSpec { id: id.into(), x_km, y_km, elevation: 250.0, svf: 0.7, class: StationClass::Open }
}

/// Five clustered stations and one distant outlier.
pub fn cluster_and_outlier(days: u32) -> ScenarioConfig {
    let stations = vec![
        spec("A", 0.0, 0.0),
        spec("B", 1.0, 0.2),
        spec("C", 0.3, 1.1),
        spec("D", 1.2, 1.0),
        spec("E", 0.6, 0.5),
        spec("F", 40.0, 35.0),
    ];
    ScenarioConfig {
        days,
        cadence_minutes: 30,
        layout: Layout::Explicit { stations },
        spatial_std: 1.2,
        correlation_length_km: 2.0,
        ..ScenarioConfig::default()
    }
}

/// Makes station `dst` an exact copy of `src`: metadata apart from the id
/// and every observed value.
pub fn duplicate_station(net: &mut SyntheticNetwork, src: usize, dst: usize) {
    let id = net.stations[dst].id.clone();
    net.stations[dst] = net.stations[src].clone();
    net.stations[dst].id = id;
    net.truth_ta[dst] = net.truth_ta[src].clone();
    net.truth_e[dst] = net.truth_e[src].clone();
    net.observed_ta[dst] = net.observed_ta[src].clone();
    net.observed_rh[dst] = net.observed_rh[src].clone();
}

pub fn fast_params() -> GbtParams {
    GbtParams {
        learning_rate: 0.3,
        max_depth: 5,
        max_rounds: 80,
        early_stopping_rounds: 10,
        split_mode: SplitMode::Histogram { max_bins: 32 },
        ..GbtParams::default()
    }
}

/// Removal objective recomputed from scratch: hidden stations' predictor
/// cells are blanked in a copy of each row, every row is predicted on its
/// own, and the per-station RMSEs are averaged by hand.
pub fn naive_objective(model: &TreeEnsemble, test: &InstanceSet, hidden: &[usize], weights: &[f64]) -> f64 {
    let n = weights.len();
    let schema = FeatureSchema::new(n);
    let mut sse = vec![[0.0; 2]; n];
    let mut cnt = vec![[0usize; 2]; n];
    for i in 0..test.len() {
        let mut row = test.x.row(i).to_vec();
        for &s in hidden {
            for c in schema.station_columns(s) {
                row[c] = None;
            }
        }
        let p = model.predict(&row).unwrap();
        let m = test.meta[i];
        let v = if m.variable == Variable::Ta { 0 } else { 1 };
        sse[m.station][v] += (p - test.y[i]).powi(2);
        cnt[m.station][v] += 1;
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for s in 0..n {
        let r: Vec<f64> = (0..2).filter(|&v| cnt[s][v] > 0).map(|v| (sse[s][v] / cnt[s][v] as f64).sqrt()).collect();
        if r.is_empty() {
            continue;
        }
        num += weights[s] * r.iter().sum::<f64>() / r.len() as f64;
        den += weights[s];
    }
    num / den
}

/// Index of the smallest value; ties go to the lexicographically smallest id.
pub fn argmin_by_id(scores: &[(usize, f64)], ids: &[String]) -> usize {
    let mut best = scores[0];
    for &(s, v) in &scores[1..] {
        if v < best.1 || (v == best.1 && ids[s] < ids[best.0]) {
            best = (s, v);
        }
    }
    best.0
}
