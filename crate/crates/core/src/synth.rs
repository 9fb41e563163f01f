//! Synthetic station networks with known truth.
//!
//! Air temperature is the sum of a seasonal and a diurnal cycle (the latter
//! damped per station class), a network-wide synoptic AR(1) anomaly, class
//! offsets that differ between day and night, a lapse-rate term, spatially
//! correlated station noise (exponential covariance, AR(1) in time) and
//! propagating fronts. Vapor pressure follows its own AR(1) process clipped
//! to saturation at the true temperature. Observations add white noise, gaps
//! and sensor drift to the truth.

use std::f64::consts::TAU;

use chrono::{Duration, TimeZone, Timelike, Utc};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{
    saturation_vapor_pressure, Observation, StationClass, StationMeta, Timestamp, Variable,
};
use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::series::Series;

const ORIGIN_LAT: f64 = 48.0;
const ORIGIN_LON: f64 = 7.85;
const KM_PER_DEG_LAT: f64 = 110.574;
const KM_PER_DEG_LON_EQ: f64 = 111.320;
/// Lower bound of true vapor pressure as a fraction of saturation, so the
/// dry tail of the AR anomaly stays within what a quality-controlled
/// network reports.
const MIN_RELATIVE_HUMIDITY: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationSpec {
    pub id: String,
    pub x_km: f64,
    pub y_km: f64,
    pub elevation: f64,
    pub svf: f64,
    pub class: StationClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layout {
    /// `n_stations` placed uniformly in a square of side `extent_km` with
    /// random attributes.
    Random { n_stations: usize, extent_km: f64 },
    Explicit { stations: Vec<StationSpec> },
}

/// Additive offsets (K) by time of day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassOffset {
    pub day: f64,
    pub night: f64,
    /// Fraction of the diurnal amplitude removed, in `[0, 1]`.
    pub damping: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassOffsets {
    pub built_up: ClassOffset,
    pub open: ClassOffset,
    pub forest: ClassOffset,
    pub water_adjacent: ClassOffset,
}

impl ClassOffsets {
    pub fn get(&self, class: StationClass) -> ClassOffset {
        match class {
            StationClass::BuiltUp => self.built_up,
            StationClass::Open => self.open,
            StationClass::Forest => self.forest,
            StationClass::WaterAdjacent => self.water_adjacent,
        }
    }

    pub fn zero() -> Self {
        let z = ClassOffset { day: 0.0, night: 0.0, damping: 0.0 };
        ClassOffsets { built_up: z, open: z, forest: z, water_adjacent: z }
    }
}

impl Default for ClassOffsets {
    fn default() -> Self {
        ClassOffsets {
            built_up: ClassOffset { day: 0.4, night: 1.8, damping: 0.15 },
            open: ClassOffset { day: 0.0, night: -0.5, damping: 0.0 },
            forest: ClassOffset { day: -1.2, night: 0.4, damping: 0.35 },
            water_adjacent: ClassOffset { day: -0.6, night: 0.8, damping: 0.25 },
        }
    }
}

/// A temperature step (logistic onset, exponential recovery) sweeping across
/// the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontSpec {
    /// Arrival at the most upwind station, hours after the scenario start.
    pub start_hour: f64,
    /// Temperature change in K (negative for a cold front).
    pub amplitude: f64,
    /// Direction of travel in degrees clockwise from north.
    pub direction_deg: f64,
    pub speed_km_h: f64,
    /// Logistic time scale of the onset.
    pub onset_hours: f64,
    pub recovery_hours: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSpec {
    pub station: String,
    pub start_hour: f64,
    pub hours: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub station: String,
    pub variable: Variable,
    pub start_day: f64,
    /// Added per day after `start_day`, in the variable's unit.
    pub rate_per_day: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub start: Timestamp,
    pub days: u32,
    pub cadence_minutes: u32,
    pub layout: Layout,
    pub base_temperature: f64,
    pub seasonal_amplitude: f64,
    pub diurnal_amplitude: f64,
    pub synoptic_std: f64,
    pub synoptic_timescale_hours: f64,
    pub spatial_std: f64,
    pub correlation_length_km: f64,
    pub spatial_timescale_hours: f64,
    pub class_offsets: ClassOffsets,
    /// Temperature change per metre above the network's lowest station.
    pub lapse_rate: f64,
    pub e_mean: f64,
    pub e_seasonal_amplitude: f64,
    pub e_std: f64,
    pub e_timescale_hours: f64,
    /// Station-specific vapor pressure noise, hPa.
    pub e_spatial_std: f64,
    pub fronts: Vec<FrontSpec>,
    /// Additional fronts with random timing and direction.
    pub random_fronts: u32,
    pub gaps: Vec<GapSpec>,
    /// Additional gaps at random stations and times.
    pub random_gaps: u32,
    pub max_random_gap_hours: f64,
    pub drifts: Vec<DriftSpec>,
    pub noise_ta: f64,
    pub noise_rh: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            start: Utc.with_ymd_and_hms(2022, 1, 1, 0, 0, 0).unwrap(),
            days: 365,
            cadence_minutes: 10,
            layout: Layout::Random { n_stations: 12, extent_km: 12.0 },
            base_temperature: 11.0,
            seasonal_amplitude: 9.0,
            diurnal_amplitude: 4.0,
            synoptic_std: 3.0,
            synoptic_timescale_hours: 72.0,
            spatial_std: 0.8,
            correlation_length_km: 3.0,
            spatial_timescale_hours: 6.0,
            class_offsets: ClassOffsets::default(),
            lapse_rate: -0.0065,
            e_mean: 10.0,
            e_seasonal_amplitude: 4.0,
            e_std: 1.5,
            e_timescale_hours: 48.0,
            e_spatial_std: 0.4,
            fronts: Vec::new(),
            random_fronts: 0,
            gaps: Vec::new(),
            random_gaps: 0,
            max_random_gap_hours: 48.0,
            drifts: Vec::new(),
            noise_ta: 0.3,
            noise_rh: 2.0,
        }
    }
}

impl ScenarioConfig {
    /// A scenario without any variability: every station reads
    /// `base_temperature` and `e_mean`.
    pub fn quiet(layout: Layout, days: u32) -> Self {
        ScenarioConfig {
            days,
            layout,
            seasonal_amplitude: 0.0,
            diurnal_amplitude: 0.0,
            synoptic_std: 0.0,
            spatial_std: 0.0,
            class_offsets: ClassOffsets::zero(),
            lapse_rate: 0.0,
            e_seasonal_amplitude: 0.0,
            e_std: 0.0,
            e_spatial_std: 0.0,
            noise_ta: 0.0,
            noise_rh: 0.0,
            ..ScenarioConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.cadence_minutes == 0 || 1440 % self.cadence_minutes != 0 {
            return bad(format!("cadence {} min does not divide one day", self.cadence_minutes));
        }
        if self.days == 0 {
            return bad("scenario needs at least one day".into());
        }
        if !(self.correlation_length_km > 0.0) {
            return bad("correlation length must be positive".into());
        }
        for (name, v) in [
            ("noise_ta", self.noise_ta),
            ("noise_rh", self.noise_rh),
            ("synoptic_std", self.synoptic_std),
            ("spatial_std", self.spatial_std),
            ("e_std", self.e_std),
            ("e_spatial_std", self.e_spatial_std),
            ("max_random_gap_hours", self.max_random_gap_hours),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be finite and non-negative"));
            }
        }
        for (name, v) in [
            ("synoptic_timescale_hours", self.synoptic_timescale_hours),
            ("spatial_timescale_hours", self.spatial_timescale_hours),
            ("e_timescale_hours", self.e_timescale_hours),
        ] {
            if !(v >= 0.0) {
                return bad(format!("{name} must be non-negative"));
            }
        }
        for c in [StationClass::BuiltUp, StationClass::Open, StationClass::Forest, StationClass::WaterAdjacent] {
            if !(0.0..=1.0).contains(&self.class_offsets.get(c).damping) {
                return bad(format!("damping of class {c} outside [0, 1]"));
            }
        }
        for f in &self.fronts {
            if !(f.speed_km_h > 0.0) || !(f.onset_hours > 0.0) || !(f.recovery_hours > 0.0) {
                return bad("front speed, onset and recovery must be positive".into());
            }
        }
        match &self.layout {
            Layout::Random { n_stations, extent_km } => {
                if *n_stations == 0 || !(*extent_km >= 0.0) {
                    return bad("random layout needs stations and a non-negative extent".into());
                }
            }
            Layout::Explicit { stations } => {
                if stations.is_empty() {
                    return bad("explicit layout has no stations".into());
                }
            }
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        self.days as usize * (1440 / self.cadence_minutes as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontArrival {
    pub front: usize,
    pub station: String,
    pub time: Timestamp,
}

/// Generated network. Value vectors are indexed `[station][step]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticNetwork {
    pub stations: Vec<StationMeta>,
    pub times: Vec<Timestamp>,
    pub truth_ta: Vec<Vec<f64>>,
    pub truth_e: Vec<Vec<f64>>,
    pub observed_ta: Vec<Vec<Option<f64>>>,
    pub observed_rh: Vec<Vec<Option<f64>>>,
    pub fronts: Vec<FrontSpec>,
    pub front_arrivals: Vec<FrontArrival>,
}

impl SyntheticNetwork {
    /// Observed Ta and RH series, as the ingestion path would deliver them.
    pub fn observed_series(&self) -> Vec<Series> {
        let mut out = Vec::with_capacity(2 * self.stations.len());
        for (s, meta) in self.stations.iter().enumerate() {
            for (var, vals) in [(Variable::Ta, &self.observed_ta[s]), (Variable::Rh, &self.observed_rh[s])] {
                out.push(Series {
                    station: meta.id.clone(),
                    variable: var,
                    times: self.times.clone(),
                    values: vals.clone(),
                });
            }
        }
        out
    }

    /// True Ta, e and RH series.
    pub fn truth_series(&self) -> Vec<Series> {
        let mut out = Vec::with_capacity(3 * self.stations.len());
        for (s, meta) in self.stations.iter().enumerate() {
            let rh: Vec<Option<f64>> = self.truth_ta[s]
                .iter()
                .zip(&self.truth_e[s])
                .map(|(ta, e)| saturation_vapor_pressure(*ta).ok().map(|es| 100.0 * e / es))
                .collect();
            let ta = self.truth_ta[s].iter().map(|v| Some(*v)).collect();
            let e = self.truth_e[s].iter().map(|v| Some(*v)).collect();
            for (var, values) in [(Variable::Ta, ta), (Variable::E, e), (Variable::Rh, rh)] {
                out.push(Series { station: meta.id.clone(), variable: var, times: self.times.clone(), values });
            }
        }
        out
    }

    pub fn observations(&self) -> Vec<Observation> {
        self.observed_series()
            .into_iter()
            .flat_map(|s| {
                let Series { station, variable, times, values } = s;
                times.into_iter().zip(values).map(move |(timestamp, value)| Observation {
                    timestamp,
                    station: station.clone(),
                    variable,
                    value,
                })
            })
            .collect()
    }
}

/// Planar position (km) of a station relative to the scenario origin.
pub fn station_xy(meta: &StationMeta) -> (f64, f64) {
    let x = (meta.longitude - ORIGIN_LON) * KM_PER_DEG_LON_EQ * ORIGIN_LAT.to_radians().cos();
    let y = (meta.latitude - ORIGIN_LAT) * KM_PER_DEG_LAT;
    (x, y)
}

fn meta_from_xy(id: String, x: f64, y: f64, elevation: f64, svf: f64, class: StationClass) -> StationMeta {
    StationMeta {
        id,
        latitude: ORIGIN_LAT + y / KM_PER_DEG_LAT,
        longitude: ORIGIN_LON + x / (KM_PER_DEG_LON_EQ * ORIGIN_LAT.to_radians().cos()),
        elevation,
        svf,
        class,
    }
}

fn build_layout<R: Rng>(layout: &Layout, rng: &mut R) -> Result<Vec<(StationMeta, (f64, f64))>> {
    let out: Vec<(StationMeta, (f64, f64))> = match layout {
        Layout::Explicit { stations } => stations
            .iter()
            .map(|s| {
                (meta_from_xy(s.id.clone(), s.x_km, s.y_km, s.elevation, s.svf, s.class), (s.x_km, s.y_km))
            })
            .collect(),
        Layout::Random { n_stations, extent_km } => {
            let width = n_stations.to_string().len().max(2);
            (0..*n_stations)
                .map(|i| {
                    let x = rng.random::<f64>() * extent_km;
                    let y = rng.random::<f64>() * extent_km;
                    let class = match rng.random_range(0..10) {
                        0..=3 => StationClass::BuiltUp,
                        4..=6 => StationClass::Open,
                        7..=8 => StationClass::Forest,
                        _ => StationClass::WaterAdjacent,
                    };
                    let svf = match class {
                        StationClass::BuiltUp => rng.random_range(0.3..0.7),
                        StationClass::Forest => rng.random_range(0.1..0.4),
                        _ => rng.random_range(0.7..1.0),
                    };
                    let elevation = 220.0 + rng.random::<f64>() * 180.0;
                    let id = format!("S{:0width$}", i + 1);
                    (meta_from_xy(id, x, y, elevation, svf, class), (x, y))
                })
                .collect()
        }
    };
    let metas: Vec<StationMeta> = out.iter().map(|(m, _)| m.clone()).collect();
    crate::domain::validate_network(&metas)?;
    Ok(out)
}

/// Square root `A` of the exponential covariance, `A·Aᵀ = exp(−d/L)`.
/// An eigendecomposition is used so co-located stations (singular
/// covariance) are handled.
pub fn correlation_root(xy: &[(f64, f64)], length_km: f64) -> DMatrix<f64> {
    let n = xy.len();
    let c = DMatrix::from_fn(n, n, |i, j| {
        let d = ((xy[i].0 - xy[j].0).powi(2) + (xy[i].1 - xy[j].1).powi(2)).sqrt();
        (-d / length_km).exp()
    });
    let eig = SymmetricEigen::new(c);
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let mut root = eig.eigenvectors.clone();
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        // Round-off eigenvalues of a singular covariance are dropped.
        let s = if *lambda > 1e-12 * top { lambda.sqrt() } else { 0.0 };
        root.column_mut(j).scale_mut(s);
    }
    root
}

fn ar_coefficient(dt_hours: f64, timescale_hours: f64) -> f64 {
    if timescale_hours > 0.0 {
        (-dt_hours / timescale_hours).exp()
    } else {
        0.0
    }
}

/// Spatially correlated AR(1) noise with stationary standard deviation `std`,
/// indexed `[step][station]`.
pub fn spatial_noise<R: Rng>(
    root: &DMatrix<f64>,
    std: f64,
    phi: f64,
    steps: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let n = root.nrows();
    let innov = (1.0 - phi * phi).max(0.0).sqrt();
    let mut state = vec![0.0; n];
    let mut z = nalgebra::DVector::zeros(n);
    let mut out = Vec::with_capacity(steps);
    for step in 0..steps {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let draw = root * &z;
        for i in 0..n {
            state[i] = if step == 0 { draw[i] } else { phi * state[i] + innov * draw[i] };
        }
        out.push(state.iter().map(|v| v * std).collect());
    }
    out
}

fn ar1_series<R: Rng>(std: f64, phi: f64, steps: usize, rng: &mut R) -> Vec<f64> {
    let innov = (1.0 - phi * phi).max(0.0).sqrt();
    let mut x: f64 = rng.sample(StandardNormal);
    let mut out = Vec::with_capacity(steps);
    for step in 0..steps {
        if step > 0 {
            let z: f64 = rng.sample(StandardNormal);
            x = phi * x + innov * z;
        }
        out.push(std * x);
    }
    out
}

fn seasonal_shape(t: Timestamp, start: Timestamp) -> f64 {
    // Minimum in mid January, maximum in mid July.
    let day = (t - start).num_seconds() as f64 / 86400.0
        + f64::from(chrono::Datelike::ordinal(&start)) - 1.0;
    -(TAU * (day - 15.0) / 365.25).cos()
}

fn diurnal_shape(t: Timestamp) -> f64 {
    let h = f64::from(t.hour()) + f64::from(t.minute()) / 60.0;
    (TAU * (h - 15.0) / 24.0).cos()
}

fn is_night(t: Timestamp) -> bool {
    let h = t.hour();
    !(6..18).contains(&h)
}

fn front_effect(f: &FrontSpec, hours_since_arrival: f64) -> f64 {
    let onset = 1.0 / (1.0 + (-hours_since_arrival / f.onset_hours).exp());
    let recovery = (-hours_since_arrival.max(0.0) / f.recovery_hours).exp();
    f.amplitude * onset * recovery
}

pub fn generate(config: &ScenarioConfig, seed: u64) -> Result<SyntheticNetwork> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0]));
    let layout = build_layout(&config.layout, &mut rng)?;
    let stations: Vec<StationMeta> = layout.iter().map(|(m, _)| m.clone()).collect();
    let xy: Vec<(f64, f64)> = layout.iter().map(|(_, p)| *p).collect();
    let n = stations.len();
    let steps = config.n_steps();
    let dt_h = f64::from(config.cadence_minutes) / 60.0;
    let times: Vec<Timestamp> = (0..steps)
        .map(|i| config.start + Duration::minutes(i as i64 * i64::from(config.cadence_minutes)))
        .collect();

    let station_idx = |id: &str| {
        stations
            .iter()
            .position(|s| s.id == id)
            .ok_or_else(|| Error::Config(format!("scenario refers to unknown station {id}")))
    };

    let mut fronts = config.fronts.clone();
    let total_hours = steps as f64 * dt_h;
    for _ in 0..config.random_fronts {
        fronts.push(FrontSpec {
            start_hour: rng.random::<f64>() * total_hours,
            amplitude: -rng.random_range(2.0..7.0),
            direction_deg: rng.random::<f64>() * 360.0,
            speed_km_h: rng.random_range(20.0..50.0),
            onset_hours: 0.3,
            recovery_hours: rng.random_range(12.0..48.0),
        });
    }
    // Hours after `start_hour` at which each front reaches each station.
    let delays: Vec<Vec<f64>> = fronts
        .iter()
        .map(|f| {
            let (sin, cos) = f.direction_deg.to_radians().sin_cos();
            let proj: Vec<f64> = xy.iter().map(|(x, y)| x * sin + y * cos).collect();
            let lead = proj.iter().copied().fold(f64::INFINITY, f64::min);
            proj.iter().map(|p| (p - lead) / f.speed_km_h).collect()
        })
        .collect();
    let mut front_arrivals = Vec::new();
    for (k, f) in fronts.iter().enumerate() {
        for (s, d) in delays[k].iter().enumerate() {
            let secs = ((f.start_hour + d) * 3600.0).round() as i64;
            front_arrivals.push(FrontArrival {
                front: k,
                station: stations[s].id.clone(),
                time: config.start + Duration::seconds(secs),
            });
        }
    }

    let synoptic = ar1_series(
        config.synoptic_std,
        ar_coefficient(dt_h, config.synoptic_timescale_hours),
        steps,
        &mut rng,
    );
    let e_anomaly = ar1_series(config.e_std, ar_coefficient(dt_h, config.e_timescale_hours), steps, &mut rng);
    let root = correlation_root(&xy, config.correlation_length_km);
    let ta_noise = spatial_noise(
        &root,
        config.spatial_std,
        ar_coefficient(dt_h, config.spatial_timescale_hours),
        steps,
        &mut rng,
    );
    let e_noise = spatial_noise(
        &root,
        config.e_spatial_std,
        ar_coefficient(dt_h, config.e_timescale_hours),
        steps,
        &mut rng,
    );

    let min_elev = stations.iter().map(|s| s.elevation).fold(f64::INFINITY, f64::min);
    let mut truth_ta = vec![vec![0.0; steps]; n];
    let mut truth_e = vec![vec![0.0; steps]; n];
    for (i, t) in times.iter().enumerate() {
        let seasonal = seasonal_shape(*t, config.start);
        let diurnal = diurnal_shape(*t);
        let night = is_night(*t);
        let hours = i as f64 * dt_h;
        for s in 0..n {
            let off = config.class_offsets.get(stations[s].class);
            let mut ta = config.base_temperature
                + config.seasonal_amplitude * seasonal
                + config.diurnal_amplitude * diurnal * (1.0 - off.damping)
                + synoptic[i]
                + if night { off.night } else { off.day }
                + config.lapse_rate * (stations[s].elevation - min_elev)
                + ta_noise[i][s];
            for (k, f) in fronts.iter().enumerate() {
                ta += front_effect(f, hours - f.start_hour - delays[k][s]);
            }
            truth_ta[s][i] = ta;
            let es = saturation_vapor_pressure(ta)?;
            let e = config.e_mean
                + config.e_seasonal_amplitude * seasonal
                + e_anomaly[i]
                + e_noise[i][s];
            truth_e[s][i] = e.clamp(MIN_RELATIVE_HUMIDITY * es, es);
        }
    }

    // Faults, resolved to per-station step ranges.
    let step_of_hour = |h: f64| ((h / dt_h).round().max(0.0) as usize).min(steps);
    let mut gaps: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for g in &config.gaps {
        gaps[station_idx(&g.station)?].push((step_of_hour(g.start_hour), step_of_hour(g.start_hour + g.hours)));
    }
    for _ in 0..config.random_gaps {
        let s = rng.random_range(0..n);
        let start = rng.random::<f64>() * total_hours;
        let len = rng.random::<f64>() * config.max_random_gap_hours;
        gaps[s].push((step_of_hour(start), step_of_hour(start + len)));
    }
    let mut drifts: Vec<Vec<&DriftSpec>> = vec![Vec::new(); n];
    for d in &config.drifts {
        if d.variable == Variable::E {
            return Err(Error::Config("drift applies to observed variables Ta or RH".into()));
        }
        drifts[station_idx(&d.station)?].push(d);
    }

    let observed: Vec<(Vec<Option<f64>>, Vec<Option<f64>>)> = (0..n)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1, s as u64]));
            let mut ta_obs = Vec::with_capacity(steps);
            let mut rh_obs = Vec::with_capacity(steps);
            for i in 0..steps {
                let days = i as f64 * dt_h / 24.0;
                let drift = |var: Variable| -> f64 {
                    drifts[s]
                        .iter()
                        .filter(|d| d.variable == var && days > d.start_day)
                        .map(|d| d.rate_per_day * (days - d.start_day))
                        .sum()
                };
                let z_ta: f64 = rng.sample(StandardNormal);
                let z_rh: f64 = rng.sample(StandardNormal);
                if gaps[s].iter().any(|(a, b)| (*a..*b).contains(&i)) {
                    ta_obs.push(None);
                    rh_obs.push(None);
                    continue;
                }
                let ta = truth_ta[s][i];
                let rh = 100.0 * truth_e[s][i] / saturation_vapor_pressure(ta).expect("validated");
                ta_obs.push(Some(ta + config.noise_ta * z_ta + drift(Variable::Ta)));
                rh_obs.push(Some((rh + config.noise_rh * z_rh + drift(Variable::Rh)).clamp(0.0, 100.0)));
            }
            (ta_obs, rh_obs)
        })
        .collect();
    let (observed_ta, observed_rh) = observed.into_iter().unzip();

    Ok(SyntheticNetwork { stations, times, truth_ta, truth_e, observed_ta, observed_rh, fronts, front_arrivals })
}
