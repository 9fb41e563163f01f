//! Pipeline stages. Each stage reads the artifacts of earlier stages from
//! the output directory and writes its own files there.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use log::info;
use serde::{Deserialize, Serialize};

use super::config::{variant_slug, PipelineConfig, ResolvedSeeds};
use super::io::{
    csv_writer, file_sha256, fmt_opt, parse_opt, read_exclusions, read_observations, read_records, read_rows,
    read_stations, write_rows, Manifest,
};
use crate::baselines::{glm_baseline, random_subsets};
use crate::dataset::{FoldAssignment, ObservationTable, Period};
use crate::domain::{Observation, StationMeta, Timestamp, Variable};
use crate::error::{Error, Result};
use crate::evaluation::{
    bias_timeseries, error_splits, fit_final, guided_plan, hot_days, indicator_report, metrics_report,
    predict_variant, FinalModel, RunVariant, Selection, SubsetKey, VariantKind,
};
use crate::gbt::{GbtParams, TreeEnsemble};
use crate::qc::apply_qc;
use crate::series::{derive_vapor_pressure, group_observations, resample, Series};
use crate::synth::generate;
use crate::thinning::{eliminate_folds, EliminationInput, ParamsBySize, RemovalSequence, RemovalStep, StationWeights};
use crate::tuning::{tune, TuningInput};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Simulate,
    Qc,
    Build,
    Tune,
    Thin,
    Fit,
    Evaluate,
    Baseline,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Qc => "qc",
            Stage::Build => "build",
            Stage::Tune => "tune",
            Stage::Thin => "thin",
            Stage::Fit => "fit",
            Stage::Evaluate => "evaluate",
            Stage::Baseline => "baseline",
            Stage::Report => "report",
        }
    }
}

pub struct Context {
    pub config: PipelineConfig,
    pub out: PathBuf,
    pub seeds: ResolvedSeeds,
    hash: String,
}

impl Context {
    pub fn new(config: PipelineConfig, out: PathBuf) -> Self {
        let seeds = config.seeds();
        let hash = config.hash();
        Context { config, out, seeds, hash }
    }

    fn manifest(&self, stage: Stage) -> Manifest {
        Manifest {
            stage: stage.name().into(),
            config_sha256: self.hash.clone(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
            seeds: self.seeds.named().iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            inputs: Vec::new(),
        }
    }

    fn path(&self, stage: Stage, file: &str) -> PathBuf {
        self.out.join(stage.name()).join(file)
    }

    /// Path of an upstream artifact, or an error naming the stage that makes it.
    fn require(&self, stage: Stage, file: &str) -> Result<PathBuf> {
        let p = self.path(stage, file);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::MissingArtifact { path: p, stage: stage.name() })
        }
    }

    fn observations_path(&self) -> Result<PathBuf> {
        match &self.config.data.observations {
            Some(p) => Ok(p.clone()),
            None => self.require(Stage::Simulate, "observations.csv"),
        }
    }

    fn stations(&self) -> Result<Vec<StationMeta>> {
        match &self.config.data.stations {
            Some(p) => read_stations(p),
            None => read_stations(&self.require(Stage::Simulate, "stations.csv")?),
        }
    }
}

pub fn run_stage(ctx: &Context, stage: Stage) -> Result<()> {
    info!("stage {}", stage.name());
    match stage {
        Stage::Simulate => simulate(ctx),
        Stage::Qc => qc(ctx),
        Stage::Build => build(ctx),
        Stage::Tune => tune_stage(ctx),
        Stage::Thin => thin(ctx),
        Stage::Fit => fit(ctx),
        Stage::Evaluate => evaluate(ctx),
        Stage::Baseline => baseline(ctx),
        Stage::Report => report(ctx),
    }
}

/// All stages in order; `simulate` runs only without external data.
pub fn run_all(ctx: &Context) -> Result<()> {
    let mut stages = vec![];
    if ctx.config.data.observations.is_none() {
        stages.push(Stage::Simulate);
    }
    stages.extend([
        Stage::Qc,
        Stage::Build,
        Stage::Tune,
        Stage::Thin,
        Stage::Fit,
        Stage::Evaluate,
        Stage::Baseline,
        Stage::Report,
    ]);
    for s in stages {
        run_stage(ctx, s)?;
    }
    Ok(())
}

fn simulate(ctx: &Context) -> Result<()> {
    let scenario = ctx
        .config
        .scenario
        .as_ref()
        .ok_or_else(|| Error::Config("simulate needs a [scenario] section".into()))?;
    let net = generate(scenario, ctx.seeds.simulate)?;
    let m = ctx.manifest(Stage::Simulate);
    write_rows(&ctx.path(Stage::Simulate, "stations.csv"), &m, &net.stations)?;
    write_rows(&ctx.path(Stage::Simulate, "observations.csv"), &m, &net.observations())?;
    let truth: Vec<Observation> = net
        .truth_series()
        .into_iter()
        .flat_map(series_observations)
        .collect();
    write_rows(&ctx.path(Stage::Simulate, "truth.csv"), &m, &truth)?;
    Ok(())
}

fn series_observations(s: Series) -> Vec<Observation> {
    let Series { station, variable, times, values } = s;
    times
        .into_iter()
        .zip(values)
        .map(|(timestamp, value)| Observation { timestamp, station: station.clone(), variable, value })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct QcRow {
    station: String,
    variable: Variable,
    test: String,
    flagged: usize,
    fraction: f64,
}

fn qc(ctx: &Context) -> Result<()> {
    let obs_path = ctx.observations_path()?;
    let mut m = ctx.manifest(Stage::Qc);
    if ctx.config.data.observations.is_some() {
        m.inputs.push(("observations".into(), file_sha256(&obs_path)?));
    }
    let exclusions = match &ctx.config.data.exclusions {
        Some(p) => {
            m.inputs.push(("exclusions".into(), file_sha256(p)?));
            read_exclusions(p)?
        }
        None => Vec::new(),
    };
    let raw = group_observations(&read_observations(&obs_path)?)?;
    let mut clean = Vec::new();
    let mut rows = Vec::new();
    for s in &raw {
        if s.variable == Variable::E {
            return Err(Error::Data(format!("{}: raw observations must carry RH, not e", s.station)));
        }
        let (c, report) = apply_qc(s, &ctx.config.qc, &exclusions);
        for (test, n) in report.rows() {
            rows.push(QcRow {
                station: report.station.clone(),
                variable: report.variable,
                test: test.into(),
                flagged: n,
                fraction: report.fraction(n),
            });
        }
        clean.extend(series_observations(c));
    }
    write_rows(&ctx.path(Stage::Qc, "qc_report.csv"), &m, &rows)?;
    write_rows(&ctx.path(Stage::Qc, "clean_observations.csv"), &m, &clean)?;
    Ok(())
}

fn build(ctx: &Context) -> Result<()> {
    let stations = ctx.stations()?;
    let obs = read_observations(&ctx.require(Stage::Qc, "clean_observations.csv")?)?;
    let span = ctx.config.periods.both()?;
    let obs: Vec<Observation> = obs.into_iter().filter(|o| span.contains(o.timestamp)).collect();
    let raw = group_observations(&obs)?;
    // QC already ran; only resampling and the humidity conversion remain.
    let series = resample_only(&raw, ctx.config.cadence_minutes)?;
    let table = crate::dataset::build_wide_table(
        &series,
        &stations,
        ctx.config.cadence_minutes,
        &ctx.config.periods.year1()?,
    )?;
    let m = ctx.manifest(Stage::Build);
    write_table(&ctx.path(Stage::Build, "table.csv"), &m, &table)?;
    write_rows(&ctx.path(Stage::Build, "stations.csv"), &m, table.stations())?;
    let folds = crate::dataset::make_folds(&table, &ctx.config.periods.year1()?, ctx.seeds.folds)?;
    write_folds(&ctx.path(Stage::Build, "folds.csv"), &m, &folds)?;
    Ok(())
}

fn resample_only(raw: &[Series], cadence: u32) -> Result<Vec<Series>> {
    let mut out = Vec::new();
    let mut by: BTreeMap<&str, [Option<Series>; 2]> = BTreeMap::new();
    for s in raw {
        let slot = if s.variable == Variable::Ta { 0 } else { 1 };
        by.entry(s.station.as_str()).or_default()[slot] = Some(resample(s, cadence));
    }
    for (station, [ta, rh]) in by {
        let (Some(ta), Some(rh)) = (ta, rh) else {
            return Err(Error::Data(format!("{station}: needs both Ta and RH")));
        };
        out.push(derive_vapor_pressure(&ta, &rh)?);
        out.push(ta);
    }
    Ok(out)
}

fn write_table(path: &Path, m: &Manifest, table: &ObservationTable) -> Result<()> {
    let mut w = csv_writer(path, m)?;
    let mut header = vec!["timestamp".to_string()];
    for s in table.stations() {
        header.push(format!("{}.Ta", s.id));
        header.push(format!("{}.e", s.id));
    }
    w.write_record(&header)?;
    for r in 0..table.n_rows() {
        let mut rec = vec![table.time(r).to_rfc3339_opts(chrono::SecondsFormat::Secs, true)];
        for s in 0..table.n_stations() {
            rec.push(fmt_opt(table.physical(r, s, Variable::Ta)));
            rec.push(fmt_opt(table.physical(r, s, Variable::E)));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// The stored table with scaling fitted on `train_period`.
fn load_table(ctx: &Context, train_period: &Period) -> Result<ObservationTable> {
    let stations: Vec<StationMeta> = read_rows(&ctx.require(Stage::Build, "stations.csv")?)?;
    let (header, records) = read_records(&ctx.require(Stage::Build, "table.csv")?)?;
    if header.len() != 1 + 2 * stations.len() {
        return Err(Error::Data("table columns do not match the station list".into()));
    }
    let mut times = Vec::with_capacity(records.len());
    let mut physical = Vec::with_capacity(records.len() * 2 * stations.len());
    for rec in &records {
        let t: Timestamp = rec[0]
            .parse()
            .map_err(|e| Error::Data(format!("bad timestamp {:?}: {e}", &rec[0])))?;
        times.push(t);
        for v in rec.iter().skip(1) {
            physical.push(parse_opt(v)?);
        }
    }
    ObservationTable::from_physical(times, stations, physical, train_period)
}

#[derive(Debug, Serialize, Deserialize)]
struct FoldRow {
    date: NaiveDate,
    fold: usize,
}

fn write_folds(path: &Path, m: &Manifest, folds: &FoldAssignment) -> Result<()> {
    let rows: Vec<FoldRow> = folds.days.iter().map(|(d, f)| FoldRow { date: *d, fold: *f }).collect();
    write_rows(path, m, &rows)
}

fn read_folds(path: &Path) -> Result<FoldAssignment> {
    let rows: Vec<FoldRow> = read_rows(path)?;
    let days: BTreeMap<NaiveDate, usize> = rows.into_iter().map(|r| (r.date, r.fold)).collect();
    Ok(FoldAssignment { n_folds: crate::dataset::N_FOLDS, days })
}

fn report_sizes(ctx: &Context, n: usize) -> Vec<usize> {
    let mut s: Vec<usize> =
        ctx.config.evaluation.sizes.iter().copied().filter(|k| *k >= 2 && *k <= n).collect();
    s.sort_unstable_by(|a, b| b.cmp(a));
    s.dedup();
    s
}

fn fold_list(listed: &[usize], n_folds: usize) -> Vec<usize> {
    if listed.is_empty() {
        (0..n_folds).collect()
    } else {
        listed.to_vec()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct GridRow {
    size: usize,
    lr: f64,
    depth: usize,
    subsample: f64,
    fold: usize,
    rmse_scaled: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct BestRow {
    size: usize,
    lr: f64,
    depth: usize,
    subsample: f64,
    mean_rmse_scaled: Option<f64>,
}

fn tune_stage(ctx: &Context) -> Result<()> {
    let table = load_table(ctx, &ctx.config.periods.year1()?)?;
    let folds = read_folds(&ctx.require(Stage::Build, "folds.csv")?)?;
    let m = ctx.manifest(Stage::Tune);
    let n = table.n_stations();
    if !ctx.config.tuning.enabled {
        let p = ctx.config.model;
        let rows = [BestRow { size: n, lr: p.learning_rate, depth: p.max_depth, subsample: p.subsample, mean_rmse_scaled: None }];
        write_rows::<GridRow>(&ctx.path(Stage::Tune, "grid_results.csv"), &m, &[])?;
        return write_rows(&ctx.path(Stage::Tune, "best_params.csv"), &m, &rows);
    }
    let sizes = if ctx.config.tuning.sizes.is_empty() {
        report_sizes(ctx, n)
    } else {
        ctx.config.tuning.sizes.clone()
    };
    let grid = ctx.config.grid();
    let test_folds = fold_list(&ctx.config.tuning.folds, folds.n_folds);
    let outcome = tune(&TuningInput {
        table: &table,
        folds: &folds,
        sizes: &sizes,
        grid: &grid,
        test_folds: Some(&test_folds),
        seed: ctx.seeds.tuning,
    })?;
    let rows: Vec<GridRow> = outcome
        .results
        .iter()
        .map(|r| GridRow {
            size: r.subset_size,
            lr: r.params.learning_rate,
            depth: r.params.max_depth,
            subsample: r.params.subsample,
            fold: r.fold,
            rmse_scaled: r.rmse_scaled,
        })
        .collect();
    write_rows(&ctx.path(Stage::Tune, "grid_results.csv"), &m, &rows)?;
    let best: Vec<BestRow> = outcome
        .best
        .0
        .iter()
        .map(|(size, p)| BestRow {
            size: *size,
            lr: p.learning_rate,
            depth: p.max_depth,
            subsample: p.subsample,
            mean_rmse_scaled: outcome
                .summary
                .iter()
                .find(|s| s.subset_size == *size && s.params == *p)
                .map(|s| s.mean_rmse),
        })
        .collect();
    write_rows(&ctx.path(Stage::Tune, "best_params.csv"), &m, &best)
}

fn load_params(ctx: &Context) -> Result<ParamsBySize> {
    let rows: Vec<BestRow> = read_rows(&ctx.require(Stage::Tune, "best_params.csv")?)?;
    let map = rows
        .into_iter()
        .map(|r| {
            let p = GbtParams { learning_rate: r.lr, max_depth: r.depth, subsample: r.subsample, ..ctx.config.model };
            p.validate()?;
            Ok((r.size, p))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    if map.is_empty() {
        return Err(Error::Data("no tuned parameters".into()));
    }
    Ok(ParamsBySize(map))
}

#[derive(Debug, Serialize, Deserialize)]
struct SequenceRow {
    fold: usize,
    step: usize,
    removed_station: String,
    remaining_count: usize,
    objective_rmse_scaled: f64,
    retrained_flag: bool,
    complete: bool,
}

fn thin(ctx: &Context) -> Result<()> {
    let table = load_table(ctx, &ctx.config.periods.year1()?)?;
    let folds = read_folds(&ctx.require(Stage::Build, "folds.csv")?)?;
    let params = load_params(ctx)?;
    let weights = StationWeights::new(
        table
            .stations()
            .iter()
            .map(|s| ctx.config.thinning.weights.get(&s.id).copied().unwrap_or(1.0))
            .collect(),
    )?;
    if let Some(id) = ctx.config.thinning.weights.keys().find(|id| table.station_index(id).is_none()) {
        return Err(Error::Config(format!("thinning weight for unknown station {id}")));
    }
    let config = ctx.config.thinning.config();
    let input = EliminationInput {
        table: &table,
        folds: &folds,
        fold: 0,
        params: &params,
        weights: &weights,
        config: &config,
        seed: ctx.seeds.thinning,
    };
    let results = eliminate_folds(&input, &fold_list(&ctx.config.thinning.folds, folds.n_folds));
    let mut rows = Vec::new();
    let mut first_error = None;
    for r in results {
        let (seq, complete) = match r {
            Ok(seq) => (seq, true),
            Err(f) => {
                first_error.get_or_insert(f.error);
                (f.partial, false)
            }
        };
        for s in &seq.steps {
            rows.push(SequenceRow {
                fold: seq.fold,
                step: s.step,
                removed_station: s.removed.clone(),
                remaining_count: s.remaining,
                objective_rmse_scaled: s.objective,
                retrained_flag: s.retrained,
                complete,
            });
        }
    }
    // Partial sequences are kept on failure.
    write_rows(&ctx.path(Stage::Thin, "sequences.csv"), &ctx.manifest(Stage::Thin), &rows)?;
    match first_error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn load_sequences(ctx: &Context, stations: &[StationMeta]) -> Result<Vec<RemovalSequence>> {
    let rows: Vec<SequenceRow> = read_rows(&ctx.require(Stage::Thin, "sequences.csv")?)?;
    let mut by_fold: BTreeMap<usize, RemovalSequence> = BTreeMap::new();
    for r in rows {
        if !r.complete {
            return Err(Error::Data(format!("elimination of fold {} is incomplete; rerun `thin`", r.fold)));
        }
        by_fold
            .entry(r.fold)
            .or_insert_with(|| RemovalSequence {
                fold: r.fold,
                stations: stations.iter().map(|s| s.id.clone()).collect(),
                steps: Vec::new(),
            })
            .steps
            .push(RemovalStep {
                step: r.step,
                removed: r.removed_station,
                remaining: r.remaining_count,
                objective: r.objective_rmse_scaled,
                retrained: r.retrained_flag,
            });
    }
    Ok(by_fold.into_values().collect())
}

fn variant_table(ctx: &Context, v: &RunVariant) -> Result<ObservationTable> {
    load_table(ctx, &v.train_period)
}

#[derive(Serialize, Deserialize)]
struct ModelLine {
    key: SubsetKey,
    predictors: Vec<String>,
    model: serde_json::Value,
}

fn fit(ctx: &Context) -> Result<()> {
    let params = load_params(ctx)?;
    for v in ctx.config.variants()? {
        let table = variant_table(ctx, &v)?;
        let n = table.n_stations();
        let sequences = load_sequences(ctx, table.stations())?;
        let sizes = report_sizes(ctx, n);
        let folds = v.folds(&table, ctx.seeds.final_folds)?;
        let mut plan = guided_plan(&table, &sequences, &sizes)?;
        let repeats = ctx.config.evaluation.random_repeats;
        if repeats > 0 {
            let random = random_subsets(n, &sizes, folds.n_folds, repeats, ctx.seeds.random_subsets)?;
            let used: BTreeSet<usize> = sequences.iter().map(|s| s.fold).collect();
            // A full-size subset is the same for every repeat.
            plan.extend(
                random
                    .into_iter()
                    .filter(|(k, _)| used.contains(&k.fold) && (k.size < n || k.repeat == 0)),
            );
        }
        let models = fit_final(&table, &folds, &plan, &params, ctx.seeds.final_models)?;
        let m = ctx.manifest(Stage::Fit);
        let slug = variant_slug(v.kind);
        write_folds(&ctx.path(Stage::Fit, &format!("folds_{slug}.csv")), &m, &folds)?;
        let path = ctx.path(Stage::Fit, &format!("models_{slug}.jsonl"));
        std::fs::create_dir_all(path.parent().expect("stage dir"))?;
        let mut w = BufWriter::new(File::create(&path)?);
        m.write_header(&mut w)?;
        for fm in &models {
            let line = ModelLine {
                key: fm.key,
                predictors: fm.predictors.iter().map(|i| table.stations()[*i].id.clone()).collect(),
                model: serde_json::from_str(&fm.model.to_json()?)?,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    Ok(())
}

fn load_models(path: &Path, table: &ObservationTable) -> Result<Vec<FinalModel>> {
    let f = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        let ml: ModelLine = serde_json::from_str(&line)?;
        let predictors = ml
            .predictors
            .iter()
            .map(|id| table.station_index(id).ok_or_else(|| Error::Data(format!("unknown station {id}"))))
            .collect::<Result<Vec<_>>>()?;
        out.push(FinalModel { key: ml.key, predictors, model: TreeEnsemble::from_json(&ml.model.to_string())? });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MetricsCsv {
    variant: String,
    selection: Selection,
    size: usize,
    repeat: usize,
    station: String,
    variable: Variable,
    n: usize,
    rmse: f64,
    mae: f64,
    r2: Option<f64>,
    mbe: f64,
}

const NETWORK_MEAN: &str = "network_mean";

fn metrics_rows(rows: Vec<crate::evaluation::MetricsRow>) -> Vec<MetricsCsv> {
    rows.into_iter()
        .map(|r| MetricsCsv {
            variant: r.variant,
            selection: r.selection,
            size: r.size,
            repeat: r.repeat,
            station: r.station.unwrap_or_else(|| NETWORK_MEAN.into()),
            variable: r.variable,
            n: r.metrics.n,
            rmse: r.metrics.rmse,
            mae: r.metrics.mae,
            r2: r.metrics.r2,
            mbe: r.metrics.mbe,
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct PercentileCsv {
    variant: String,
    selection: Selection,
    size: usize,
    variable: Variable,
    period: String,
    condition: String,
    n: usize,
    p1: f64,
    p5: f64,
    p50: f64,
    p95: f64,
    p99: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct BiasCsv {
    variant: String,
    size: usize,
    station: String,
    variable: Variable,
    timestamp: Timestamp,
    error: Option<f64>,
    moving_mean_7d: Option<f64>,
}

fn evaluate(ctx: &Context) -> Result<()> {
    let m = ctx.manifest(Stage::Evaluate);
    for v in ctx.config.variants()? {
        let table = variant_table(ctx, &v)?;
        let slug = variant_slug(v.kind);
        let folds = read_folds(&ctx.require(Stage::Fit, &format!("folds_{slug}.csv"))?)?;
        let models = load_models(&ctx.require(Stage::Fit, &format!("models_{slug}.jsonl"))?, &table)?;
        let preds = predict_variant(&table, &folds, &models, &v)?;
        write_rows(
            &ctx.path(Stage::Evaluate, &format!("metrics_{slug}.csv")),
            &m,
            &metrics_rows(metrics_report(&table, &v, &preds)),
        )?;
        let ind = indicator_report(&table, &v, &preds, &ctx.config.evaluation.criteria, ctx.config.cadence_minutes);
        write_rows(&ctx.path(Stage::Evaluate, &format!("indicators_{slug}.csv")), &m, &ind)?;
        let eval_rows = table.rows_in(&v.eval_period);
        let hot = hot_days(&table, &eval_rows, ctx.config.evaluation.split.hot_threshold);
        let pct: Vec<PercentileCsv> = error_splits(&table, &preds, &hot, &ctx.config.evaluation.split)
            .into_iter()
            .map(|r| PercentileCsv {
                variant: v.label().into(),
                selection: r.selection,
                size: r.size,
                variable: r.variable,
                period: r.period,
                condition: r.condition,
                n: r.n,
                p1: r.percentiles[0],
                p5: r.percentiles[1],
                p50: r.percentiles[2],
                p95: r.percentiles[3],
                p99: r.percentiles[4],
            })
            .collect();
        write_rows(&ctx.path(Stage::Evaluate, &format!("percentiles_{slug}.csv")), &m, &pct)?;

        let guided: Vec<_> = preds.iter().filter(|p| p.selection == Selection::Guided).copied().collect();
        let steps_per_day = (1440 / ctx.config.cadence_minutes) as usize;
        let mut bias = Vec::new();
        for size in report_sizes(ctx, table.n_stations()) {
            let at_size: Vec<_> = guided.iter().filter(|p| p.size == size).copied().collect();
            if at_size.is_empty() {
                continue;
            }
            for s in 0..table.n_stations() {
                for var in [Variable::Ta, Variable::Rh] {
                    // In-sample variants only predict test-fold rows; the
                    // series still runs over the whole evaluation grid.
                    for b in bias_timeseries(&table, &at_size, s, var, &eval_rows, steps_per_day) {
                        bias.push(BiasCsv {
                            variant: v.label().into(),
                            size,
                            station: table.stations()[s].id.clone(),
                            variable: var,
                            timestamp: b.time,
                            error: b.error,
                            moving_mean_7d: b.moving_mean,
                        });
                    }
                }
            }
        }
        write_rows(&ctx.path(Stage::Evaluate, &format!("bias_{slug}.csv")), &m, &bias)?;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct GlmCsv {
    station: String,
    variable: Variable,
    b0: f64,
    b1: f64,
    b2: f64,
    b3: f64,
    n_obs: usize,
    r2_train: f64,
}

fn baseline(ctx: &Context) -> Result<()> {
    let m = ctx.manifest(Stage::Baseline);
    let Some([a, b]) = &ctx.config.baseline.references else {
        write_rows::<GlmCsv>(&ctx.path(Stage::Baseline, "glm_coefficients.csv"), &m, &[])?;
        return write_rows::<MetricsCsv>(&ctx.path(Stage::Baseline, "glm_metrics.csv"), &m, &[]);
    };
    let y1 = ctx.config.periods.year1()?;
    let y2 = ctx.config.periods.year2()?;
    let table = load_table(ctx, &y1)?;
    let idx = |id: &str| {
        table.station_index(id).ok_or_else(|| Error::Config(format!("unknown reference station {id}")))
    };
    let (models, preds) = glm_baseline(&table, [idx(a)?, idx(b)?], &y1, &y2)?;
    let coef: Vec<GlmCsv> = models
        .iter()
        .map(|g| GlmCsv {
            station: g.station.clone(),
            variable: g.variable,
            b0: g.coefficients[0],
            b1: g.coefficients[1],
            b2: g.coefficients[2],
            b3: g.coefficients[3],
            n_obs: g.n_obs,
            r2_train: g.r2_train,
        })
        .collect();
    write_rows(&ctx.path(Stage::Baseline, "glm_coefficients.csv"), &m, &coef)?;
    let variant = RunVariant::extrapolation(y1, y2);
    write_rows(
        &ctx.path(Stage::Baseline, "glm_metrics.csv"),
        &m,
        &metrics_rows(metrics_report(&table, &variant, &preds)),
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct Table1Row {
    variant: String,
    selection: Selection,
    size: usize,
    variable: Variable,
    repeats: usize,
    rmse: f64,
    mae: f64,
    r2: Option<f64>,
    mbe: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Table2Row {
    indicator: String,
    size: usize,
    observed: f64,
    predicted: f64,
    deviation: f64,
    deviation_pct: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndicatorCsv {
    variant: String,
    selection: Selection,
    size: usize,
    indicator: String,
    observed: f64,
    predicted: f64,
    deviation: f64,
    deviation_pct: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RemovalOrderRow {
    station: String,
    folds: usize,
    mean_removal_step: f64,
    earliest_step: usize,
    latest_step: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct BiasSummaryRow {
    variant: String,
    size: usize,
    station: String,
    variable: Variable,
    mean_error: Option<f64>,
    max_abs_moving_mean_7d: Option<f64>,
}

fn report(ctx: &Context) -> Result<()> {
    let m = ctx.manifest(Stage::Report);
    let variants = ctx.config.variants()?;

    // Network means, random repeats averaged.
    let mut metrics: Vec<MetricsCsv> = Vec::new();
    for v in &variants {
        let slug = variant_slug(v.kind);
        metrics.extend(read_rows::<MetricsCsv>(&ctx.require(Stage::Evaluate, &format!("metrics_{slug}.csv"))?)?);
    }
    metrics.extend(read_rows::<MetricsCsv>(&ctx.require(Stage::Baseline, "glm_metrics.csv")?)?);
    let mut groups: BTreeMap<(String, Selection, std::cmp::Reverse<usize>, Variable), Vec<&MetricsCsv>> = BTreeMap::new();
    for r in metrics.iter().filter(|r| r.station == NETWORK_MEAN) {
        groups
            .entry((r.variant.clone(), r.selection, std::cmp::Reverse(r.size), r.variable))
            .or_default()
            .push(r);
    }
    let table1: Vec<Table1Row> = groups
        .into_iter()
        .map(|((variant, selection, size, variable), rs)| {
            let k = rs.len() as f64;
            let r2s: Vec<f64> = rs.iter().filter_map(|r| r.r2).collect();
            Table1Row {
                variant,
                selection,
                size: size.0,
                variable,
                repeats: rs.len(),
                rmse: rs.iter().map(|r| r.rmse).sum::<f64>() / k,
                mae: rs.iter().map(|r| r.mae).sum::<f64>() / k,
                r2: (!r2s.is_empty()).then(|| r2s.iter().sum::<f64>() / r2s.len() as f64),
                mbe: rs.iter().map(|r| r.mbe).sum::<f64>() / k,
            }
        })
        .collect();
    write_rows(&ctx.path(Stage::Report, "table1.csv"), &m, &table1)?;

    let mut table2 = Vec::new();
    if let Some(v) = variants.iter().find(|v| v.kind == VariantKind::Extrapolation) {
        let rows: Vec<IndicatorCsv> =
            read_rows(&ctx.require(Stage::Evaluate, &format!("indicators_{}.csv", variant_slug(v.kind)))?)?;
        let mut rows: Vec<&IndicatorCsv> = rows.iter().filter(|r| r.selection == Selection::Guided).collect();
        rows.sort_by_key(|r| (crate::evaluation::IndicatorCounts::NAMES.iter().position(|n| *n == r.indicator), std::cmp::Reverse(r.size)));
        for r in rows {
            table2.push(Table2Row {
                indicator: r.indicator.clone(),
                size: r.size,
                observed: r.observed,
                predicted: r.predicted,
                deviation: r.deviation,
                deviation_pct: r.deviation_pct,
            });
        }
    }
    write_rows(&ctx.path(Stage::Report, "table2.csv"), &m, &table2)?;

    let stations: Vec<StationMeta> = read_rows(&ctx.require(Stage::Build, "stations.csv")?)?;
    let sequences = load_sequences(ctx, &stations)?;
    let n = stations.len();
    let order: Vec<RemovalOrderRow> = stations
        .iter()
        .map(|s| {
            // The last survivor counts as removed at step N.
            let steps: Vec<usize> = sequences
                .iter()
                .map(|seq| seq.steps.iter().find(|st| st.removed == s.id).map_or(n, |st| n - st.remaining))
                .collect();
            RemovalOrderRow {
                station: s.id.clone(),
                folds: steps.len(),
                mean_removal_step: steps.iter().sum::<usize>() as f64 / steps.len().max(1) as f64,
                earliest_step: steps.iter().copied().min().unwrap_or(0),
                latest_step: steps.iter().copied().max().unwrap_or(0),
            }
        })
        .collect();
    let mut order = order;
    order.sort_by(|a, b| a.mean_removal_step.total_cmp(&b.mean_removal_step).then(a.station.cmp(&b.station)));
    write_rows(&ctx.path(Stage::Report, "removal_order.csv"), &m, &order)?;

    let mut bias_summary = Vec::new();
    for v in &variants {
        let rows: Vec<BiasCsv> =
            read_rows(&ctx.require(Stage::Evaluate, &format!("bias_{}.csv", variant_slug(v.kind)))?)?;
        let mut acc: BTreeMap<(std::cmp::Reverse<usize>, String, Variable), (f64, usize, Option<f64>)> = BTreeMap::new();
        for r in &rows {
            let e = acc.entry((std::cmp::Reverse(r.size), r.station.clone(), r.variable)).or_insert((0.0, 0, None));
            if let Some(x) = r.error {
                e.0 += x;
                e.1 += 1;
            }
            if let Some(mm) = r.moving_mean_7d {
                e.2 = Some(e.2.map_or(mm.abs(), |b: f64| b.max(mm.abs())));
            }
        }
        for ((size, station, variable), (sum, cnt, max_mm)) in acc {
            bias_summary.push(BiasSummaryRow {
                variant: v.label().into(),
                size: size.0,
                station,
                variable,
                mean_error: (cnt > 0).then(|| sum / cnt as f64),
                max_abs_moving_mean_7d: max_mm,
            });
        }
    }
    write_rows(&ctx.path(Stage::Report, "bias_summary.csv"), &m, &bias_summary)
}

/// Report files written by `report`.
pub const REPORT_FILES: [&str; 4] = ["table1.csv", "table2.csv", "removal_order.csv", "bias_summary.csv"];
