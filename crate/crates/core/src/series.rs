use std::collections::{BTreeMap, HashMap};

use chrono::{DateTime, Utc};

use crate::domain::{self, Observation, Timestamp, Variable};
use crate::error::{Error, Result};

/// One station's readings of one variable, sorted by time.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub station: String,
    pub variable: Variable,
    pub times: Vec<Timestamp>,
    pub values: Vec<Option<f64>>,
}

impl Series {
    pub fn new(station: impl Into<String>, variable: Variable) -> Self {
        Series { station: station.into(), variable, times: Vec::new(), values: Vec::new() }
    }

    /// Builds a series, sorting by time. Duplicate timestamps are a data error.
    pub fn from_samples(
        station: impl Into<String>,
        variable: Variable,
        mut samples: Vec<(Timestamp, Option<f64>)>,
    ) -> Result<Self> {
        let station = station.into();
        samples.sort_by_key(|(t, _)| *t);
        if let Some(w) = samples.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::Data(format!(
                "duplicate timestamp {} for {station}/{variable}",
                w[0].0
            )));
        }
        let (times, values) = samples.into_iter().unzip();
        Ok(Series { station, variable, times, values })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn present_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    pub fn push(&mut self, t: Timestamp, v: Option<f64>) {
        self.times.push(t);
        self.values.push(v);
    }

    /// Present samples as `(unix seconds, value)`.
    pub(crate) fn present_seconds(&self) -> impl Iterator<Item = (usize, i64, f64)> + '_ {
        self.times
            .iter()
            .zip(&self.values)
            .enumerate()
            .filter_map(|(i, (t, v))| v.map(|v| (i, t.timestamp(), v)))
    }
}

/// Groups long-format observations into per-(station, variable) series.
pub fn group_observations(obs: &[Observation]) -> Result<Vec<Series>> {
    let mut groups: BTreeMap<(String, Variable), Vec<(Timestamp, Option<f64>)>> = BTreeMap::new();
    for o in obs {
        if let Some(v) = o.value {
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "non-finite value at {} for {}/{}",
                    o.timestamp, o.station, o.variable
                )));
            }
        }
        groups.entry((o.station.clone(), o.variable)).or_default().push((o.timestamp, o.value));
    }
    groups
        .into_iter()
        .map(|((station, variable), samples)| Series::from_samples(station, variable, samples))
        .collect()
}

/// Left-closed bin averaging onto a regular grid aligned to the Unix epoch.
///
/// A bin holding at least one present sample gets the arithmetic mean; empty
/// bins are missing.
pub fn resample(series: &Series, cadence_minutes: u32) -> Series {
    let step = i64::from(cadence_minutes) * 60;
    let mut out = Series::new(series.station.clone(), series.variable);
    let (Some(first), Some(last)) = (series.times.first(), series.times.last()) else {
        return out;
    };
    let first_bin = first.timestamp().div_euclid(step);
    let last_bin = last.timestamp().div_euclid(step);
    let n_bins = (last_bin - first_bin + 1) as usize;
    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for (_, secs, v) in series.present_seconds() {
        let b = (secs.div_euclid(step) - first_bin) as usize;
        sums[b] += v;
        counts[b] += 1;
    }
    for b in 0..n_bins {
        let t = DateTime::<Utc>::from_timestamp((first_bin + b as i64) * step, 0)
            .expect("bin start within chrono range");
        let v = (counts[b] > 0).then(|| sums[b] / counts[b] as f64);
        out.push(t, v);
    }
    out
}

pub fn resample_10min(series: &Series) -> Series {
    resample(series, 10)
}

/// Converts a relative-humidity series to vapor pressure using the temperature
/// series of the same station. Samples without a matching present Ta are
/// missing.
pub fn derive_vapor_pressure(ta: &Series, rh: &Series) -> Result<Series> {
    if ta.station != rh.station {
        return Err(Error::Data(format!(
            "cannot combine Ta of {} with RH of {}",
            ta.station, rh.station
        )));
    }
    let ta_at: HashMap<Timestamp, f64> =
        ta.times.iter().zip(&ta.values).filter_map(|(t, v)| v.map(|v| (*t, v))).collect();
    let mut out = Series::new(rh.station.clone(), Variable::E);
    for (t, v) in rh.times.iter().zip(&rh.values) {
        let e = match (v, ta_at.get(t)) {
            (Some(rh), Some(ta)) => Some(domain::rh_to_e(rh.clamp(0.0, 100.0), *ta)?),
            _ => None,
        };
        out.push(*t, e);
    }
    Ok(out)
}
