//! Acceptance suite: one pass/fail line per criterion.
//!
//! Exits 0 after printing every line. With `ACCEPTANCE_STRICT=1` any failed
//! criterion makes the process exit with status 1.
#![allow(clippy::excessive_precision)]

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use chrono::{Duration as ChronoDuration, TimeZone, Timelike, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use stationthin::baselines::{fit_glm, random_subsets};
use stationthin::dataset::{station_mask, test_instances, FoldRoles, Period, Role};
use stationthin::domain::{e_to_rh, rh_to_e, saturation_vapor_pressure, Timestamp, Variable};
use stationthin::evaluation::{
    compute_metrics, fit_final, guided_plan, indicator_days, metrics_report, predict_variant, tropical_nights,
    IndicatorCriteria, RunVariant, Selection, SubsetKey, SubsetPlan,
};
use stationthin::gbt::{train, FeatureMatrix, GbtParams, SplitMode, TreeEnsemble, TreeNode};
use stationthin::model::fit_on_folds;
use stationthin::pipeline::network_table;
use stationthin::qc::{apply_qc, persistence_test, range_test, rate_of_change_test, QcConfig};
use stationthin::seed::derive_seed;
use stationthin::series::Series;
use stationthin::synth::{generate, FrontSpec, Layout, ScenarioConfig};
use stationthin::thinning::{
    eliminate, eliminate_folds, eliminate_traced, EliminationInput, ParamsBySize, StationWeights, ThinningConfig,
};

/// Saturation vapor pressure (hPa) at Ta = -35, -32.5, ..., 45 degC,
/// evaluated at 40 significant digits.
const ES_REFERENCE: [(f64, f64); 33] = [
    (-35.0, 0.2857273929718032399565910),
    (-32.5, 0.3681476318534118656657018),
    (-30.0, 0.4714517937883291468017488),
    (-27.5, 0.6001953536504322551588656),
    (-25.0, 0.7597635548067365933833078),
    (-22.5, 0.9564912515563683808532547),
    (-20.0, 1.197795073050571015778756),
    (-17.5, 1.492318534679318461418250),
    (-15.0, 1.850090689189508743744001),
    (-12.5, 2.282698869963546967062715),
    (-10.0, 2.803476033213512876706151),
    (-7.5, 3.427703154681373503943578),
    (-5.0, 4.172827080187409040463856),
    (-2.5, 5.058694168498319285781711),
    (0.0, 6.107800000000000000000000),
    (2.5, 7.345555356101457952426581),
    (5.0, 8.800568602738133496869050),
    (7.5, 10.50494453737760061914254),
    (10.0, 12.49459968316281084414149),
    (12.5, 14.80959393686647591168344),
    (15.0, 17.49447839978029082357217),
    (17.5, 20.59865914311973060883161),
    (20.0, 24.17677658256784240284615),
    (22.5, 28.28910006076634110034608),
    (25.0, 33.00193716241875523312981),
    (27.5, 38.38805721469621807975898),
    (30.0, 44.52712835629451025480539),
    (32.5, 51.50616749220585911666073),
    (35.0, 59.42000238842523009298422),
    (37.5, 68.37174510175095226990612),
    (40.0, 78.47327588486314727907104),
    (42.5, 89.84573665622686875802130),
    (45.0, 102.6200330782831252536419),
];

/// (RH %, Ta degC, e hPa) at 40 significant digits.
const E_REFERENCE: [(f64, f64, f64); 42] = [
    (0.0, -35.0, 0.0),
    (12.5, -35.0, 0.03571592412147540499457387),
    (37.0, -35.0, 0.1057191353995671987839387),
    (50.0, -35.0, 0.1428636964859016199782955),
    (81.25, -35.0, 0.2321535067895901324647301),
    (100.0, -35.0, 0.2857273929718032399565910),
    (0.0, -12.5, 0.0),
    (12.5, -12.5, 0.2853373587454433708828394),
    (37.0, -12.5, 0.8445985818865123778132047),
    (50.0, -12.5, 1.141349434981773483531358),
    (81.25, -12.5, 1.854692831845381910738456),
    (100.0, -12.5, 2.282698869963546967062715),
    (0.0, 0.0, 0.0),
    (12.5, 0.0, 0.7634750000000000000000000),
    (37.0, 0.0, 2.259886000000000000000000),
    (50.0, 0.0, 3.053900000000000000000000),
    (81.25, 0.0, 4.962587500000000000000000),
    (100.0, 0.0, 6.107800000000000000000000),
    (0.0, 7.25, 0.0),
    (12.5, 7.25, 1.290286669767286595650978),
    (37.0, 7.25, 3.819248542511168323126893),
    (50.0, 7.25, 5.161146679069146382603910),
    (81.25, 7.25, 8.386863353487362871731354),
    (100.0, 7.25, 10.32229335813829276520782),
    (0.0, 20.0, 0.0),
    (12.5, 20.0, 3.022097072820980300355769),
    (37.0, 20.0, 8.945407335550101689053077),
    (50.0, 20.0, 12.08838829128392120142308),
    (81.25, 20.0, 19.64363097333637195231250),
    (100.0, 20.0, 24.17677658256784240284615),
    (0.0, 33.5, 0.0),
    (12.5, 33.5, 6.819242801067746322487331),
    (37.0, 33.5, 20.18495869116052911456250),
    (50.0, 33.5, 27.27697120427098528994933),
    (81.25, 33.5, 44.32507820694035109616765),
    (100.0, 33.5, 54.55394240854197057989865),
    (0.0, 45.0, 0.0),
    (12.5, 45.0, 12.82750413478539065670524),
    (37.0, 45.0, 37.96941223896475634384752),
    (50.0, 45.0, 51.31001653914156262682097),
    (81.25, 45.0, 83.37877687610503926858408),
    (100.0, 45.0, 102.6200330782831252536419),
];

/// (e hPa, Ta degC, RH %) at 40 significant digits.
const RH_REFERENCE: [(f64, f64, f64); 36] = [
    (0.0, -35.0, 0.0),
    (0.1, -35.0, 34.99839443461006164322787),
    (1.0, -35.0, 349.9839443461005970042670),
    (6.1078, -35.0, 2137.631935277113267663301),
    (12.5, -35.0, 4374.799304326257462553338),
    (40.0, -35.0, 13999.35777384402388017068),
    (0.0, -5.0, 0.0),
    (0.1, -5.0, 2.396456840370889003659495),
    (1.0, -5.0, 23.96456840370888870629417),
    (6.1078, -5.0, 146.3707908961731532669266),
    (12.5, -5.0, 299.5571050463611088286771),
    (40.0, -5.0, 958.5827361483555482517669),
    (0.0, 0.0, 0.0),
    (0.1, 0.0, 1.637250728576574307461199),
    (1.0, 0.0, 16.37250728576574216575526),
    (6.1078, 0.0, 100.0000000000000019311388),
    (12.5, 0.0, 204.6563410720717770719408),
    (40.0, 0.0, 654.9002914306296866302106),
    (0.0, 15.5, 0.0),
    (0.1, 15.5, 0.5530942803854560412208533),
    (1.0, 15.5, 5.530942803854560105179530),
    (6.1078, 15.5, 33.78189245738288286279076),
    (12.5, 15.5, 69.13678504818200131474413),
    (40.0, 15.5, 221.2377121541824042071812),
    (0.0, 30.0, 0.0),
    (0.1, 30.0, 0.2245821899850041790805099),
    (1.0, 30.0, 2.245821899850041666136940),
    (6.1078, 30.0, 13.71703099990408475332611),
    (12.5, 30.0, 28.07277374812552082671175),
    (40.0, 30.0, 89.83287599400166664547761),
    (0.0, 45.0, 0.0),
    (0.1, 45.0, 0.09744686003337726275672241),
    (1.0, 45.0, 0.9744686003337725734733503),
    (6.1078, 45.0, 5.951859317118616239199192),
    (12.5, 45.0, 12.18085750417215716841688),
    (40.0, 45.0, 38.97874401335090293893401),
];

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

struct Criterion {
    id: usize,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

fn rel(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        a.abs()
    } else {
        ((a - b) / b).abs()
    }
}

fn t0() -> Timestamp {
    Utc.with_ymd_and_hms(2022, 6, 1, 0, 0, 0).unwrap()
}

// 1

fn humidity() -> Outcome {
    let mut worst = 0.0f64;
    for (ta, es) in ES_REFERENCE {
        worst = worst.max(rel(saturation_vapor_pressure(ta).unwrap(), es));
    }
    for (rh, ta, e) in E_REFERENCE {
        worst = worst.max(rel(rh_to_e(rh, ta).unwrap(), e));
    }
    for (e, ta, rh) in RH_REFERENCE {
        worst = worst.max(rel(e_to_rh(e, ta).unwrap(), rh));
    }
    let mut trip = 0.0f64;
    for i in 0..=160 {
        let ta = -35.0 + 0.5 * i as f64;
        for j in 0..=200 {
            let rh = 0.5 * j as f64;
            let back = e_to_rh(rh_to_e(rh, ta).unwrap(), ta).unwrap();
            trip = trip.max(rel(back, rh));
        }
    }
    let n = ES_REFERENCE.len() + E_REFERENCE.len() + RH_REFERENCE.len();
    Outcome::new(
        worst <= 1e-12 && trip <= 1e-12,
        format!("max relative error {worst:.1e} over {n} reference values, round trip {trip:.1e}"),
    )
}

// 2

/// Ten days of 10-minute Ta oscillating between 31.1 and 44.9 degC with
/// planted faults: spikes to 45.4 at five daily peaks, five 11 K steps and
/// five constant runs of 370 minutes across daily troughs.
fn qc_fixture() -> (Series, BTreeSet<usize>, BTreeSet<usize>, BTreeSet<usize>) {
    let day = 144;
    let base = |i: usize| 38.0 + 6.9 * (2.0 * PI * i as f64 / day as f64).sin();
    let range: BTreeSet<usize> = [0, 2, 4, 6, 8].iter().map(|d| d * day + 36).collect();
    let rate = BTreeSet::from([day + 60, day + 100, 3 * day + 60, 3 * day + 100, 9 * day + 60]);
    let runs: Vec<usize> = [0, 2, 4, 6, 8].iter().map(|d| d * day + 90).collect();
    let persistence: BTreeSet<usize> = runs.iter().flat_map(|&s| s..s + 38).collect();
    let mut s = Series::new("Q", Variable::Ta);
    let mut offset = 0.0;
    for i in 0..10 * day {
        if rate.contains(&i) {
            offset = if offset == 0.0 { -11.0 } else { 0.0 };
        }
        let v = if range.contains(&i) {
            45.4
        } else if let Some(&start) = runs.iter().find(|&&st| (st..st + 38).contains(&i)) {
            base(start)
        } else {
            base(i) + offset
        };
        s.push(t0() + ChronoDuration::minutes(10 * i as i64), Some(v));
    }
    (s, range, rate, persistence)
}

fn qc_fixtures() -> Outcome {
    let cfg = QcConfig::default();
    let (s, range, rate, persistence) = qc_fixture();
    let got = |f: stationthin::qc::FlagSet| f.indices().into_iter().collect::<BTreeSet<usize>>();
    let exact = got(range_test(&s, &cfg)) == range
        && got(rate_of_change_test(&s, &cfg)) == rate
        && got(persistence_test(&s, &cfg)) == persistence;
    let (cleaned, report) = apply_qc(&s, &cfg, &[]);
    let planted = range.len() + rate.len() + persistence.len();
    let counts_ok = report.range == range.len()
        && report.rate_of_change == rate.len()
        && report.persistence == persistence.len()
        && report.removed == planted
        && cleaned.present_count() == s.len() - planted;

    let net = generate(&ScenarioConfig { days: 30, ..ScenarioConfig::default() }, 5).unwrap();
    let mut clean_flags = 0;
    let mut clean_samples = 0;
    for series in net.observed_series() {
        let (_, r) = apply_qc(&series, &cfg, &[]);
        clean_flags += r.removed;
        clean_samples += r.present_before;
    }
    Outcome::new(
        exact && counts_ok && clean_flags == 0,
        format!(
            "planted 5 range samples, 5 rate samples and 5 persistence runs ({} samples): {}; clean synthetic data: {clean_flags} of {clean_samples} flagged",
            persistence.len(),
            if exact && counts_ok { "flagged exactly with matching attribution" } else { "flag sets differ" },
        ),
    )
}

// 3

fn gbt_fixture(n: usize, seed: u64) -> (FeatureMatrix, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = FeatureMatrix::new(6);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
        let target = (1.3 * row[0]).sin() + row[1] * row[2] - 0.5 * row[3].abs() + if row[4] > 1.0 { 1.5 } else { 0.0 }
            + 0.2 * rng.random::<f64>();
        let cells: Vec<Option<f64>> = row.iter().map(|v| (rng.random::<f64>() > 0.1).then_some(*v)).collect();
        x.push_row(&cells).unwrap();
        y.push(target);
    }
    (x, y)
}

fn naive_walk(m: &TreeEnsemble, row: &[Option<f64>]) -> f64 {
    let mut total = m.base_score;
    for tree in &m.trees[..m.best_round] {
        let mut node = 0usize;
        loop {
            match tree.nodes[node] {
                TreeNode::Leaf { value } => {
                    total += value;
                    break;
                }
                TreeNode::Split { feature, threshold, default_left, left, right } => {
                    let go_left = match row[feature as usize] {
                        None => default_left,
                        Some(v) => v < threshold,
                    };
                    node = if go_left { left } else { right } as usize;
                }
            }
        }
    }
    total
}

fn gbt_correctness() -> Outcome {
    let (x, y) = gbt_fixture(3000, 1);
    let (xv, yv) = gbt_fixture(600, 2);
    let (probe, _) = gbt_fixture(1000, 3);
    let dir = tempfile::tempdir().unwrap();
    let (mut a, mut b, mut c, mut d) = (true, true, true, true);
    let mut models = 0;
    for mode in [SplitMode::Exact, SplitMode::Histogram { max_bins: 64 }] {
        for depth in [2, 4, 7] {
            let p = GbtParams {
                learning_rate: 0.2,
                max_depth: depth,
                max_rounds: 80,
                early_stopping_rounds: 80,
                subsample: 1.0,
                split_mode: mode,
                ..GbtParams::default()
            };
            let m = train(&x, &y, &xv, &yv, &p, 11).unwrap();
            models += 1;
            a &= m.history.train_rmse.windows(2).all(|w| w[1] <= w[0] + 1e-9);
            let batch = m.predict_batch(&probe).unwrap();
            for (i, row) in probe.rows().enumerate() {
                let naive = naive_walk(&m, row);
                b &= m.predict(row).unwrap() == naive && batch[i] == naive;
            }
            c &= m.trees.iter().all(|t| t.depth() <= depth);
            let back = TreeEnsemble::from_json(&m.to_json().unwrap()).unwrap();
            let path = dir.path().join(format!("m{models}.json"));
            m.save(&path).unwrap();
            let loaded = TreeEnsemble::load(&path).unwrap();
            d &= back.predict_batch(&probe).unwrap() == batch && loaded.predict_batch(&probe).unwrap() == batch;
        }
    }
    let mark = |ok: bool| if ok { "ok" } else { "FAILED" };
    Outcome::new(
        a && b && c && d,
        format!(
            "{models} models; (a) monotone train RMSE {}, (b) naive walk on 1000 vectors {}, (c) depth bound {}, (d) round trip {}",
            mark(a),
            mark(b),
            mark(c),
            mark(d)
        ),
    )
}

// 4

const ORACLE_SEED: u64 = 11;

fn greedy_oracle() -> Outcome {
    let f = fixture(&random_layout(6, 40), ORACLE_SEED, 60);
    let n = f.table.n_stations();
    let ids: Vec<String> = f.table.stations().iter().map(|s| s.id.clone()).collect();
    let params = ParamsBySize::single(fast_params());
    let weights = StationWeights::uniform(n);
    let input = |config| EliminationInput {
        table: &f.table,
        folds: &f.folds,
        fold: 0,
        params: &params,
        weights: &weights,
        config,
        seed: ORACLE_SEED,
    };

    let mut steps = 0;
    let mut mismatches = 0;
    let default = ThinningConfig::default();
    let every = ThinningConfig::retrain_every_step(n);
    for config in [&default, &every] {
        eliminate_traced(&input(config), |t| {
            let scores: Vec<(usize, f64)> = t
                .candidates
                .iter()
                .map(|&(c, _)| {
                    let hidden: Vec<usize> = t.removed.iter().copied().chain([c]).collect();
                    (c, naive_objective(t.model, t.test, &hidden, weights.as_slice()))
                })
                .collect();
            steps += 1;
            if argmin_by_id(&scores, &ids) != t.chosen[0] {
                mismatches += 1;
            }
        })
        .unwrap();
    }

    // Step 1 with retraining at every count against one retrained model per
    // left-out station.
    let seq = eliminate(&input(&every)).unwrap();
    let roles = FoldRoles::for_test_fold(0, f.folds.n_folds);
    let test_rows = f.folds.rows_with_role(&f.table, &roles, Role::Test);
    let loo: Vec<(usize, f64)> = (0..n)
        .map(|c| {
            let predictors = station_mask(n, (0..n).filter(|&s| s != c));
            let seed = derive_seed(ORACLE_SEED, &[0, (n - 1) as u64]);
            let (model, _) = fit_on_folds(&f.table, &f.folds, &roles, &predictors, &fast_params(), seed).unwrap();
            let test = test_instances(&f.table, &test_rows, &predictors);
            (c, naive_objective(&model, &test, &[], weights.as_slice()))
        })
        .collect();
    let loo_choice = &ids[argmin_by_id(&loo, &ids)];
    let step1 = &seq.steps[0].removed;
    Outcome::new(
        mismatches == 0 && step1 == loo_choice,
        format!(
            "{steps} elimination steps, {mismatches} differ from brute force; step 1 removes {step1}, leave-one-out retraining picks {loo_choice}"
        ),
    )
}

// 5

fn duplicate_pair() -> Outcome {
    let params = ParamsBySize::single(fast_params());
    let config = ThinningConfig::default();
    let mut hits = 0;
    let mut positions = Vec::new();
    for seed in 1..=10u64 {
        let mut net = generate(&random_layout(8, 40), seed).unwrap();
        duplicate_station(&mut net, 1, 4);
        let pair = [net.stations[1].id.clone(), net.stations[4].id.clone()];
        let f = table_for(net, 60, seed);
        let weights = StationWeights::uniform(f.table.n_stations());
        let seq = eliminate(&EliminationInput {
            table: &f.table,
            folds: &f.folds,
            fold: 0,
            params: &params,
            weights: &weights,
            config: &config,
            seed,
        })
        .unwrap();
        let first = seq.steps.iter().position(|s| pair.contains(&s.removed)).unwrap() + 1;
        positions.push(first.to_string());
        if first <= 2 {
            hits += 1;
        }
    }
    Outcome::new(
        hits >= 9,
        format!("pair hit within two steps in {hits}/10 seeds; first removal step of the pair per seed: {}", positions.join(",")),
    )
}

// 6 and 7

fn scenario_params() -> GbtParams {
    GbtParams {
        learning_rate: 0.3,
        max_depth: 6,
        max_rounds: 150,
        early_stopping_rounds: 20,
        split_mode: SplitMode::Histogram { max_bins: 64 },
        ..GbtParams::default()
    }
}

/// Network-mean eval-period Ta RMSE per (selection, size), averaged over
/// repeats, for the 12-station scenario trained on 40 days and evaluated on
/// the following 30.
fn twelve_station_run(seed: u64, guided: &[usize], random: &[usize], repeats: usize) -> BTreeMap<(Selection, usize), f64> {
    let cfg = ScenarioConfig {
        start: t0(),
        days: 70,
        cadence_minutes: 10,
        base_temperature: 21.5,
        seasonal_amplitude: 0.0,
        noise_ta: 0.3,
        random_gaps: 4,
        max_random_gap_hours: 24.0,
        layout: Layout::Random { n_stations: 12, extent_km: 12.0 },
        ..ScenarioConfig::default()
    };
    let net = generate(&cfg, derive_seed(seed, &[1])).unwrap();
    let split = t0() + ChronoDuration::days(40);
    let year1 = Period::new(t0(), split).unwrap();
    let year2 = Period::new(split, t0() + ChronoDuration::days(70)).unwrap();
    let table = network_table(&net, false, 60, &year1).unwrap();
    let variant = RunVariant::extrapolation(year1, year2);
    let folds = variant.folds(&table, derive_seed(seed, &[2])).unwrap();
    let params = ParamsBySize::single(scenario_params());
    let weights = StationWeights::uniform(table.n_stations());
    let config = ThinningConfig::default();
    let input = EliminationInput {
        table: &table,
        folds: &folds,
        fold: 0,
        params: &params,
        weights: &weights,
        config: &config,
        seed: derive_seed(seed, &[3]),
    };
    let seqs: Vec<_> = eliminate_folds(&input, &[0, 1]).into_iter().map(|r| r.unwrap()).collect();
    let mut plan: SubsetPlan = guided_plan(&table, &seqs, guided).unwrap();
    if !random.is_empty() {
        let r = random_subsets(table.n_stations(), random, folds.n_folds, repeats, derive_seed(seed, &[4])).unwrap();
        plan.extend(r.into_iter().filter(|(k, _)| k.fold < 2));
    }
    let models = fit_final(&table, &folds, &plan, &params, derive_seed(seed, &[5])).unwrap();
    let preds = predict_variant(&table, &folds, &models, &variant).unwrap();
    let mut sums: BTreeMap<(Selection, usize), (f64, usize)> = BTreeMap::new();
    for row in metrics_report(&table, &variant, &preds) {
        if row.station.is_none() && row.variable == Variable::Ta {
            let e = sums.entry((row.selection, row.size)).or_default();
            e.0 += row.metrics.rmse;
            e.1 += 1;
        }
    }
    sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

fn monotone_degradation() -> Outcome {
    let sizes = [12, 10, 7, 4, 3, 2];
    let r = twelve_station_run(0, &sizes, &[], 0);
    let rmse = |k: usize| r[&(Selection::Guided, k)];
    let large = (rmse(12) + rmse(10) + rmse(7)) / 3.0;
    let ratio = rmse(2) / rmse(12);
    let pass = rmse(2) > rmse(12) && (large - rmse(12)).abs() <= 0.15 * rmse(12) && ratio >= 1.1;
    let curve: Vec<String> = sizes.iter().map(|&k| format!("{k}:{:.3}", rmse(k))).collect();
    Outcome::new(
        pass,
        format!(
            "Ta RMSE by size {}; mean over 12/10/7 is {:+.1}% of size 12; RMSE(2)/RMSE(12) = {ratio:.3}",
            curve.join(" "),
            100.0 * (large / rmse(12) - 1.0)
        ),
    )
}

fn guided_vs_random() -> Outcome {
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 1..=10u64 {
        let r = twelve_station_run(seed, &[3], &[3], 10);
        let g = r[&(Selection::Guided, 3)];
        let rnd = r[&(Selection::Random, 3)];
        if g <= rnd {
            wins += 1;
        }
        pairs.push(format!("{g:.3}/{rnd:.3}"));
    }
    Outcome::new(wins >= 8, format!("guided <= random in {wins}/10 seeds (guided/random Ta RMSE: {})", pairs.join(" ")))
}

// 8

fn glm_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let beta = [1.7, -0.35, 0.82, 0.0125];
    let n = 500;
    let x1: Vec<Option<f64>> = (0..n).map(|i| (i % 37 != 5).then(|| rng.random_range(-10.0..35.0))).collect();
    let x2: Vec<Option<f64>> = (0..n).map(|i| (i % 41 != 7).then(|| rng.random_range(-5.0..30.0))).collect();
    let exact: Vec<Option<f64>> = x1
        .iter()
        .zip(&x2)
        .map(|(a, b)| Some(beta[0] + beta[1] * a.unwrap_or(0.0) + beta[2] * b.unwrap_or(0.0) + beta[3] * a.unwrap_or(0.0) * b.unwrap_or(0.0)))
        .collect();
    let (fit, used, _) = fit_glm(&exact, &x1, &x2).unwrap();
    let recovery = fit.iter().zip(&beta).map(|(f, b)| rel(*f, *b)).fold(0.0, f64::max);

    let noisy: Vec<Option<f64>> = exact.iter().map(|y| y.map(|v| v + rng.random_range(-1.0..1.0))).collect();
    let (b, _, _) = fit_glm(&noisy, &x1, &x2).unwrap();
    let mut cols = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    let mut resid = Vec::new();
    for i in 0..n {
        if let (Some(y), Some(a), Some(c)) = (noisy[i], x1[i], x2[i]) {
            let row = [1.0, a, c, a * c];
            resid.push(y - row.iter().zip(&b).map(|(x, k)| x * k).sum::<f64>());
            for j in 0..4 {
                cols[j].push(row[j]);
            }
        }
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let ortho = cols
        .iter()
        .map(|c| (c.iter().zip(&resid).map(|(x, r)| x * r).sum::<f64>() / (norm(c) * norm(&resid))).abs())
        .fold(0.0, f64::max);
    Outcome::new(
        recovery <= 1e-8 && ortho <= 1e-8,
        format!("{used} complete cases; max relative coefficient error {recovery:.1e}; max residual/column cosine {ortho:.1e}"),
    )
}

// 9

fn indicator_fixture() -> (Vec<Timestamp>, Vec<Option<f64>>) {
    let start = Utc.with_ymd_and_hms(2022, 7, 1, 0, 0, 0).unwrap();
    let mut vals: Vec<f64> = (0..30 * 24).map(|i| 18.0 - 4.0 * (2.0 * PI * ((i % 24) as f64 - 3.0) / 24.0).cos()).collect();
    let at = |d: usize, h: usize| d * 24 + h;
    vals[at(2, 15)] = 25.0; // boundary: summer day
    vals[at(3, 15)] = 24.999;
    vals[at(5, 15)] = 30.0; // summer, hot
    vals[at(7, 14)] = 35.2; // summer, hot, desert
    vals[at(10, 4)] = -0.5; // frost
    vals[at(11, 4)] = 0.0; // not frost
    for h in 0..24 {
        vals[at(12, h)] = -3.0 + 0.1 * h as f64; // ice and frost
        vals[at(13, h)] = -2.3 + 0.1 * h as f64; // max exactly 0.0: frost only
    }
    vals[at(13, 23)] = 0.0;
    // Warm night across midnight, evening of day 15.
    for h in 18..24 {
        vals[at(15, h)] = 22.0 - 0.1 * (h - 18) as f64;
    }
    for h in 0..6 {
        vals[at(16, h)] = 21.0 - 0.1 * h as f64;
    }
    // Warm evening that cools below 20 after midnight.
    for h in 18..24 {
        vals[at(18, h)] = 23.0;
    }
    for h in 0..6 {
        vals[at(19, h)] = if h == 3 { 19.9 } else { 22.0 };
    }
    // Night minimum exactly at the threshold.
    for h in 18..24 {
        vals[at(20, h)] = 21.5;
    }
    for h in 0..6 {
        vals[at(21, h)] = if h == 4 { 20.0 } else { 21.0 };
    }
    let times = (0..vals.len()).map(|i| start + ChronoDuration::hours(i as i64)).collect();
    (times, vals.into_iter().map(Some).collect())
}

fn indicator_days_exact() -> Outcome {
    let (times, ta) = indicator_fixture();
    let c = IndicatorCriteria::default();
    let counts = indicator_days(&times, &ta, &c, 60);
    let expected = [3, 2, 1, 3, 1, 2];
    let nights: Vec<String> = tropical_nights(&times, &ta, &c)
        .into_iter()
        .filter(|(_, warm)| *warm)
        .map(|(d, _)| d.to_string())
        .collect();
    let nights_ok = nights == ["2022-07-16", "2022-07-21"];
    let got = counts.as_array();
    let check_hour = times[15 * 24 + 18].hour() == 18;
    Outcome::new(
        got == expected && nights_ok && counts.coverage == 1.0 && check_hour,
        format!(
            "summer/hot/desert/frost/ice/tropical = {got:?}, hand counts {expected:?}; tropical nights on evenings {}",
            nights.join(", ")
        ),
    )
}

// 10

fn metrics_oracle() -> Outcome {
    let mut worst = 0.0f64;
    let mut identity = 0.0f64;
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..400);
        let scale = 10f64.powf(rng.random_range(-2.0..2.0));
        let obs: Vec<f64> = (0..n).map(|_| scale * rng.random_range(-5.0..25.0)).collect();
        let pred: Vec<f64> = obs.iter().map(|o| o + scale * rng.random_range(-1.5..2.0)).collect();
        let m = compute_metrics(&pred, &obs).unwrap();
        let nf = n as f64;
        let d: Vec<f64> = pred.iter().zip(&obs).map(|(p, o)| p - o).collect();
        let rmse = (d.iter().map(|x| x * x).sum::<f64>() / nf).sqrt();
        let mae = d.iter().map(|x| x.abs()).sum::<f64>() / nf;
        let mbe = d.iter().sum::<f64>() / nf;
        let mean_obs = obs.iter().sum::<f64>() / nf;
        let r2 = 1.0 - d.iter().map(|x| x * x).sum::<f64>() / obs.iter().map(|o| (o - mean_obs).powi(2)).sum::<f64>();
        let err = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
        worst = worst
            .max(err(m.rmse, rmse))
            .max(err(m.mae, mae))
            .max(err(m.mbe, mbe))
            .max(err(m.r2.unwrap(), r2));
        let var = d.iter().map(|x| (x - m.mbe).powi(2)).sum::<f64>() / nf;
        identity = identity.max((m.rmse * m.rmse - (m.mbe * m.mbe + var)).abs() / (m.rmse * m.rmse).max(1.0));
    }
    Outcome::new(
        worst <= 1e-12 && identity <= 1e-9,
        format!("200 random fixtures; max error vs closed form {worst:.1e}; rmse^2 = mbe^2 + var residual {identity:.1e}"),
    )
}

// 11

/// Seven stations on a west-east line, 3 km apart, with cold fronts moving
/// east every four days. Models are trained on 42 days and evaluated on the
/// last 20, which hold five fronts.
fn front_event() -> Outcome {
    let mut stations = vec![spec("W", 0.0, 0.0)];
    for k in 1..=6 {
        stations.push(spec(&format!("D{k}"), 3.0 * k as f64, if k % 2 == 0 { 0.6 } else { -0.6 }));
    }
    let fronts: Vec<FrontSpec> = (0..15)
        .map(|i| FrontSpec {
            start_hour: 24.0 * (2.0 + 4.0 * i as f64) + 13.0,
            amplitude: -8.0,
            direction_deg: 90.0,
            speed_km_h: 10.0,
            onset_hours: 0.2,
            recovery_hours: 10.0,
        })
        .collect();
    let cfg = ScenarioConfig {
        start: t0(),
        days: 62,
        cadence_minutes: 10,
        base_temperature: 21.5,
        seasonal_amplitude: 0.0,
        layout: Layout::Explicit { stations },
        fronts,
        ..ScenarioConfig::default()
    };
    let net = generate(&cfg, 42).unwrap();
    let split = t0() + ChronoDuration::days(42);
    let year1 = Period::new(t0(), split).unwrap();
    let year2 = Period::new(split, t0() + ChronoDuration::days(62)).unwrap();
    let table = network_table(&net, false, 10, &year1).unwrap();
    let variant = RunVariant::extrapolation(year1, year2);
    let folds = variant.folds(&table, 7).unwrap();
    let n = table.n_stations();
    let upwind = table.station_index("W").unwrap();
    let downwind: Vec<usize> = (0..n).filter(|&s| s != upwind).collect();
    let key = |size| SubsetKey { selection: Selection::Guided, size, repeat: 0, fold: 0 };
    let plan: SubsetPlan = [(key(n - 1), downwind.clone()), (key(n), (0..n).collect())].into();
    let params = ParamsBySize::single(scenario_params());
    let models = fit_final(&table, &folds, &plan, &params, 3).unwrap();
    let preds = predict_variant(&table, &folds, &models, &variant).unwrap();

    let mut by_front: BTreeMap<usize, Vec<(String, Timestamp)>> = BTreeMap::new();
    for a in &net.front_arrivals {
        if year2.contains(a.time) {
            by_front.entry(a.front).or_default().push((a.station.clone(), a.time));
        }
    }
    let disturbed = |t: Timestamp| {
        by_front.values().flatten().any(|(_, at)| t >= *at - ChronoDuration::hours(6) && t <= *at + ChronoDuration::hours(36))
    };
    let stats = |size: usize| {
        let errs: Vec<(Timestamp, f64)> = preds
            .iter()
            .filter(|p| p.size == size && p.variable == Variable::Ta && p.station != upwind)
            .map(|p| (table.time(p.row), p.error()))
            .collect();
        let calm: Vec<f64> = errs.iter().filter(|(t, _)| !disturbed(*t)).map(|(_, e)| e * e).collect();
        let background = (calm.iter().sum::<f64>() / calm.len() as f64).sqrt();
        let peaks: Vec<f64> = by_front
            .values()
            .map(|arr| {
                let down: Vec<Timestamp> = arr.iter().filter(|(s, _)| s != "W").map(|(_, t)| *t).collect();
                let lo = *down.iter().min().unwrap() - ChronoDuration::minutes(30);
                let hi = *down.iter().max().unwrap() + ChronoDuration::minutes(60);
                errs.iter().filter(|(t, _)| *t >= lo && *t <= hi).map(|(_, e)| e.abs()).fold(0.0, f64::max)
            })
            .collect();
        (background, peaks.iter().sum::<f64>() / peaks.len() as f64, peaks.len())
    };
    let (background, peak, fronts) = stats(n - 1);
    let (bg_full, peak_full, _) = stats(n);
    Outcome::new(
        peak > 3.0 * background,
        format!(
            "without the upwind station: mean peak downwind error {peak:.2} K over {fronts} fronts vs background RMSE {background:.2} K ({:.1}x); with it: {peak_full:.2} K vs {bg_full:.2} K",
            peak / background
        ),
    )
}

// 12

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect_files(root, &path, out);
        } else {
            out.push(path.strip_prefix(root).unwrap().to_string_lossy().into_owned());
        }
    }
}

fn determinism() -> Outcome {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/small.toml");
    let dir = tempfile::tempdir().unwrap();
    let mut walls = Vec::new();
    let mut trees = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let start = Instant::now();
        let o = Command::new(env!("CARGO_BIN_EXE_stationthin"))
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .arg("run-all")
            .env("RUST_LOG", "warn")
            .output()
            .unwrap();
        if !o.status.success() {
            return Outcome::new(false, format!("run-all failed: {}", String::from_utf8_lossy(&o.stderr).trim()));
        }
        walls.push(start.elapsed().as_secs_f64());
        let mut files = Vec::new();
        collect_files(&out, &out, &mut files);
        files.sort();
        trees.push((out, files));
    }
    let (a, fa) = &trees[0];
    let (b, fb) = &trees[1];
    let differing: Vec<&String> =
        fa.iter().filter(|f| std::fs::read(a.join(f)).ok() != std::fs::read(b.join(f)).ok()).collect();
    let reports = fa.iter().filter(|f| f.starts_with("report")).count();
    let slowest = walls.iter().cloned().fold(0.0, f64::max);
    Outcome::new(
        fa == fb && differing.is_empty() && reports == 4 && slowest < 600.0,
        format!(
            "{} files ({reports} reports), {} differ between runs; wall clock {:.0}s and {:.0}s",
            fa.len(),
            differing.len(),
            walls[0],
            walls[1]
        ),
    )
}

fn main() {
    let secs = |s| Some(Duration::from_secs(s));
    let criteria = [
        Criterion { id: 1, name: "humidity oracle", limit: secs(1), run: humidity },
        Criterion { id: 2, name: "QC fixtures", limit: secs(5), run: qc_fixtures },
        Criterion { id: 3, name: "GBT correctness", limit: secs(120), run: gbt_correctness },
        Criterion { id: 4, name: "greedy-step oracle", limit: secs(300), run: greedy_oracle },
        Criterion { id: 5, name: "duplicate station", limit: secs(300), run: duplicate_pair },
        Criterion { id: 6, name: "monotone degradation", limit: secs(600), run: monotone_degradation },
        Criterion { id: 7, name: "guided vs random", limit: None, run: guided_vs_random },
        Criterion { id: 8, name: "GLM recovery", limit: None, run: glm_recovery },
        Criterion { id: 9, name: "indicator days", limit: None, run: indicator_days_exact },
        Criterion { id: 10, name: "metrics oracle", limit: None, run: metrics_oracle },
        Criterion { id: 11, name: "front event", limit: None, run: front_event },
        Criterion { id: 12, name: "end-to-end determinism", limit: secs(600), run: determinism },
    ];
    let only: Vec<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect())
        .unwrap_or_default();
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = Vec::new();
    let mut ran = 0;
    for c in criteria.iter().filter(|c| only.is_empty() || only.contains(&c.id)) {
        ran += 1;
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::new(false, format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let mut pass = outcome.pass;
        let mut detail = outcome.detail;
        if let Some(limit) = c.limit.filter(|l| elapsed > *l) {
            pass = false;
            detail.push_str(&format!("; over the {}s limit", limit.as_secs()));
        }
        println!(
            "criterion {:>2} {}: {} ({detail}) [{:.1}s]",
            c.id,
            c.name,
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
        if !pass {
            failed.push(c.id);
        }
    }
    println!("acceptance: {}/{ran} criteria passed", ran - failed.len());
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        if strict {
            std::process::exit(1);
        }
    }
}
