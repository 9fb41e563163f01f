//! Range, rate-of-change and persistence tests on raw station series.
//!
//! The three tests run independently on the unmodified input and their flags
//! are unioned together with manual exclusion windows. Flagged samples are set
//! to missing; surviving values are never altered.

use serde::{Deserialize, Serialize};

use crate::domain::{Timestamp, Variable};
use crate::error::{Error, Result};
use crate::series::Series;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateLimit {
    pub window_minutes: f64,
    pub max_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QcConfig {
    pub ta_range: [f64; 2],
    pub rh_range: [f64; 2],
    pub rate_limits_ta: Vec<RateLimit>,
    pub rate_limits_rh: Vec<RateLimit>,
    pub persistence_ta_hours: f64,
    pub persistence_rh_hours: f64,
}

impl Default for QcConfig {
    fn default() -> Self {
        let rl = |w, l| RateLimit { window_minutes: w, max_change: l };
        QcConfig {
            ta_range: [-35.0, 45.0],
            rh_range: [10.0, 100.0],
            rate_limits_ta: vec![rl(1.0, 5.0), rl(10.0, 10.0), rl(60.0, 15.0)],
            rate_limits_rh: vec![rl(1.0, 10.0), rl(10.0, 30.0), rl(60.0, 50.0)],
            persistence_ta_hours: 6.0,
            persistence_rh_hours: 72.0,
        }
    }
}

impl QcConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("ta_range", self.ta_range), ("rh_range", self.rh_range)] {
            if !(r[0] < r[1]) {
                return Err(Error::Config(format!("qc.{name}: lower bound must be below upper")));
            }
        }
        for (name, limits) in
            [("rate_limits_ta", &self.rate_limits_ta), ("rate_limits_rh", &self.rate_limits_rh)]
        {
            if limits.iter().any(|l| !(l.window_minutes > 0.0) || !(l.max_change > 0.0)) {
                return Err(Error::Config(format!("qc.{name}: limits must be strictly positive")));
            }
            if limits.windows(2).any(|w| w[0].window_minutes >= w[1].window_minutes) {
                return Err(Error::Config(format!("qc.{name}: windows must be sorted ascending")));
            }
        }
        if !(self.persistence_ta_hours > 0.0) || !(self.persistence_rh_hours > 0.0) {
            return Err(Error::Config("qc persistence thresholds must be positive".into()));
        }
        Ok(())
    }

    fn range_for(&self, v: Variable) -> Option<[f64; 2]> {
        match v {
            Variable::Ta => Some(self.ta_range),
            Variable::Rh => Some(self.rh_range),
            Variable::E => None,
        }
    }

    fn rates_for(&self, v: Variable) -> &[RateLimit] {
        match v {
            Variable::Ta => &self.rate_limits_ta,
            Variable::Rh => &self.rate_limits_rh,
            Variable::E => &[],
        }
    }

    fn persistence_for(&self, v: Variable) -> Option<f64> {
        match v {
            Variable::Ta => Some(self.persistence_ta_hours),
            Variable::Rh => Some(self.persistence_rh_hours),
            Variable::E => None,
        }
    }
}

/// Manual deletion of one station variable over `[start, end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionWindow {
    pub station: String,
    pub variable: Variable,
    pub start: Timestamp,
    pub end: Timestamp,
}

impl ExclusionWindow {
    pub fn validate(&self) -> Result<()> {
        if self.start >= self.end {
            return Err(Error::Config(format!(
                "exclusion window for {}/{} must start before it ends",
                self.station, self.variable
            )));
        }
        Ok(())
    }

    fn covers(&self, station: &str, variable: Variable, t: Timestamp) -> bool {
        self.station == station && self.variable == variable && t >= self.start && t < self.end
    }
}

/// Per-sample boolean flags aligned with a series.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlagSet(Vec<bool>);

impl FlagSet {
    fn new(n: usize) -> Self {
        FlagSet(vec![false; n])
    }

    pub fn is_flagged(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|f| **f).count()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.0.iter().enumerate().filter_map(|(i, f)| f.then_some(i)).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn union(&mut self, other: &FlagSet) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a |= *b;
        }
    }
}

/// Flags present samples strictly outside the closed limits.
pub fn range_test(series: &Series, config: &QcConfig) -> FlagSet {
    let mut flags = FlagSet::new(series.len());
    if let Some([lo, hi]) = config.range_for(series.variable) {
        for (i, _, v) in series.present_seconds() {
            if v < lo || v > hi {
                flags.0[i] = true;
            }
        }
    }
    flags
}

/// For each window `w` and limit `L`, flags the later sample of any present
/// pair at most `w` apart whose absolute difference exceeds `L`.
pub fn rate_of_change_test(series: &Series, config: &QcConfig) -> FlagSet {
    let mut flags = FlagSet::new(series.len());
    let limits = config.rates_for(series.variable);
    if limits.is_empty() {
        return flags;
    }
    let present: Vec<(usize, i64, f64)> = series.present_seconds().collect();
    for limit in limits {
        let window = (limit.window_minutes * 60.0).round() as i64;
        let mut lo = 0;
        for j in 0..present.len() {
            let (idx, tj, vj) = present[j];
            while tj - present[lo].1 > window {
                lo += 1;
            }
            if present[lo..j].iter().any(|&(_, _, vi)| (vj - vi).abs() > limit.max_change) {
                flags.0[idx] = true;
            }
        }
    }
    flags
}

/// Flags every sample of a run of exactly equal consecutive present values
/// lasting strictly longer than the variable's threshold. A missing sample
/// ends a run.
pub fn persistence_test(series: &Series, config: &QcConfig) -> FlagSet {
    let mut flags = FlagSet::new(series.len());
    let Some(hours) = config.persistence_for(series.variable) else {
        return flags;
    };
    let threshold = (hours * 3600.0).round() as i64;
    let n = series.len();
    let mut start = 0;
    while start < n {
        let Some(v0) = series.values[start] else {
            start += 1;
            continue;
        };
        let mut end = start;
        while end + 1 < n && series.values[end + 1] == Some(v0) {
            end += 1;
        }
        let duration = series.times[end].timestamp() - series.times[start].timestamp();
        if duration > threshold {
            flags.0[start..=end].iter_mut().for_each(|f| *f = true);
        }
        start = end + 1;
    }
    flags
}

/// Per-test flag counts for one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcReport {
    pub station: String,
    pub variable: Variable,
    pub present_before: usize,
    pub range: usize,
    pub rate_of_change: usize,
    pub persistence: usize,
    pub manual_exclusion: usize,
    pub removed: usize,
}

impl QcReport {
    /// `(test, flagged_count)` rows in report order.
    pub fn rows(&self) -> [(&'static str, usize); 5] {
        [
            ("range", self.range),
            ("rate_of_change", self.rate_of_change),
            ("persistence", self.persistence),
            ("manual_exclusion", self.manual_exclusion),
            ("total", self.removed),
        ]
    }

    pub fn fraction(&self, count: usize) -> f64 {
        if self.present_before == 0 {
            0.0
        } else {
            count as f64 / self.present_before as f64
        }
    }
}

/// Runs all tests plus manual exclusions and deletes every flagged sample.
pub fn apply_qc(
    series: &Series,
    config: &QcConfig,
    exclusions: &[ExclusionWindow],
) -> (Series, QcReport) {
    let range = range_test(series, config);
    let rate = rate_of_change_test(series, config);
    let persistence = persistence_test(series, config);
    let mut manual = FlagSet::new(series.len());
    for (i, t) in series.times.iter().enumerate() {
        if series.values[i].is_some()
            && exclusions.iter().any(|w| w.covers(&series.station, series.variable, *t))
        {
            manual.0[i] = true;
        }
    }
    let mut all = range.clone();
    all.union(&rate);
    all.union(&persistence);
    all.union(&manual);

    let mut cleaned = series.clone();
    for i in all.indices() {
        cleaned.values[i] = None;
    }
    let report = QcReport {
        station: series.station.clone(),
        variable: series.variable,
        present_before: series.present_count(),
        range: range.count(),
        rate_of_change: rate.count(),
        persistence: persistence.count(),
        manual_exclusion: manual.count(),
        removed: all.count(),
    };
    (cleaned, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, TimeZone, Utc};

    fn t0() -> Timestamp {
        Utc.with_ymd_and_hms(2022, 7, 1, 0, 0, 0).unwrap()
    }

    fn minute_series(var: Variable, values: &[f64]) -> Series {
        Series::from_samples(
            "S1",
            var,
            values
                .iter()
                .enumerate()
                .map(|(i, v)| (t0() + Duration::minutes(i as i64), Some(*v)))
                .collect(),
        )
        .unwrap()
    }

    /// Slowly varying values that never trip a persistence or rate test.
    fn wiggle(n: usize, base: f64) -> Vec<f64> {
        (0..n).map(|i| base + 0.01 * ((i % 7) as f64)).collect()
    }

    #[test]
    fn range_boundaries() {
        let cfg = QcConfig::default();
        let s = minute_series(Variable::Ta, &[44.0, 45.0, 46.0, -35.0, -35.5]);
        assert_eq!(range_test(&s, &cfg).indices(), vec![2, 4]);
        let s = minute_series(Variable::Rh, &[9.0, 10.0, 100.0, 100.1]);
        assert_eq!(range_test(&s, &cfg).indices(), vec![0, 3]);
        assert!(range_test(&minute_series(Variable::Ta, &[]), &cfg).is_empty());
    }

    #[test]
    fn rate_boundaries() {
        let cfg = QcConfig::default();
        // A 6 K step flags only the first sample after the step.
        let mut v = vec![10.0; 5];
        v.extend(vec![16.0; 5]);
        let s = minute_series(Variable::Ta, &v);
        assert_eq!(rate_of_change_test(&s, &cfg).indices(), vec![5]);
        // 5 K is allowed.
        let mut v = vec![10.0; 5];
        v.extend(vec![15.0; 5]);
        assert!(rate_of_change_test(&minute_series(Variable::Ta, &v), &cfg).indices().is_empty());
        // 40 % RH over 10 min in 10 % steps: the 1-min limit holds, the 10-min one does not.
        let v: Vec<f64> = (0..11).map(|i| 50.0 + 4.0 * i as f64).collect();
        let flags = rate_of_change_test(&minute_series(Variable::Rh, &v), &cfg);
        assert!(flags.is_flagged(8), "{:?}", flags.indices());
        assert!(!flags.is_flagged(7));
    }

    #[test]
    fn rate_skips_gaps_longer_than_window() {
        let cfg = QcConfig::default();
        let s = Series::from_samples(
            "S1",
            Variable::Ta,
            vec![(t0(), Some(10.0)), (t0() + Duration::minutes(61), Some(30.0))],
        )
        .unwrap();
        assert_eq!(rate_of_change_test(&s, &cfg).count(), 0);
        let s = Series::from_samples(
            "S1",
            Variable::Ta,
            vec![(t0(), Some(10.0)), (t0() + Duration::minutes(60), Some(30.0))],
        )
        .unwrap();
        assert_eq!(rate_of_change_test(&s, &cfg).indices(), vec![1]);
    }

    fn ten_minute_series(var: Variable, values: &[Option<f64>]) -> Series {
        Series::from_samples(
            "S1",
            var,
            values
                .iter()
                .enumerate()
                .map(|(i, v)| (t0() + Duration::minutes(10 * i as i64), *v))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn persistence_boundaries() {
        let cfg = QcConfig::default();
        // 37 samples at 10 min span exactly 6 h.
        let mut v: Vec<Option<f64>> = vec![Some(1.0)];
        v.extend(vec![Some(12.5); 37]);
        v.push(Some(2.0));
        assert_eq!(persistence_test(&ten_minute_series(Variable::Ta, &v), &cfg).count(), 0);
        // 38 samples span 6 h 10 min.
        v.insert(1, Some(12.5));
        let flags = persistence_test(&ten_minute_series(Variable::Ta, &v), &cfg);
        assert_eq!(flags.indices(), (1..=38).collect::<Vec<_>>());
        // RH: 73 h run flagged.
        let rh: Vec<Option<f64>> = vec![Some(80.0); 73 * 6 + 1];
        assert_eq!(persistence_test(&ten_minute_series(Variable::Rh, &rh), &cfg).count(), 439);
        let rh: Vec<Option<f64>> = vec![Some(80.0); 72 * 6 + 1];
        assert_eq!(persistence_test(&ten_minute_series(Variable::Rh, &rh), &cfg).count(), 0);
    }

    #[test]
    fn missing_sample_breaks_persistence_run() {
        let cfg = QcConfig::default();
        let mut v = vec![Some(3.0); 30];
        v.push(None);
        v.extend(vec![Some(3.0); 30]);
        assert_eq!(persistence_test(&ten_minute_series(Variable::Ta, &v), &cfg).count(), 0);
    }

    #[test]
    fn clean_series_untouched() {
        let s = minute_series(Variable::Ta, &wiggle(500, 20.0));
        let (c, r) = apply_qc(&s, &QcConfig::default(), &[]);
        assert_eq!(c, s);
        assert_eq!(r.removed, 0);
    }

    #[test]
    fn single_spike_removed() {
        let mut v = wiggle(200, 43.0);
        v[100] = 45.5;
        let s = minute_series(Variable::Ta, &v);
        let (c, r) = apply_qc(&s, &QcConfig::default(), &[]);
        assert_eq!(r.removed, 1);
        assert_eq!(c.values[100], None);
        assert_eq!(c.present_count(), 199);
    }

    #[test]
    fn exclusion_window_removes_everything_inside() {
        let s = minute_series(Variable::Rh, &wiggle(100, 60.0));
        let w = ExclusionWindow {
            station: "S1".into(),
            variable: Variable::Rh,
            start: t0() - Duration::hours(1),
            end: t0() + Duration::hours(5),
        };
        let (c, r) = apply_qc(&s, &QcConfig::default(), std::slice::from_ref(&w));
        assert_eq!(c.present_count(), 0);
        assert_eq!(r.manual_exclusion, 100);
        // Other variables of the same station are unaffected.
        let ta = minute_series(Variable::Ta, &wiggle(100, 10.0));
        assert_eq!(apply_qc(&ta, &QcConfig::default(), &[w]).1.removed, 0);
    }

    #[test]
    fn config_validation() {
        assert!(QcConfig::default().validate().is_ok());
        let mut c = QcConfig::default();
        c.rate_limits_ta.swap(0, 1);
        assert!(c.validate().is_err());
        let mut c = QcConfig::default();
        c.rate_limits_rh[0].max_change = 0.0;
        assert!(c.validate().is_err());
        let w = ExclusionWindow {
            station: "S".into(),
            variable: Variable::Ta,
            start: t0(),
            end: t0(),
        };
        assert!(w.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_series() -> impl Strategy<Value = Series> {
            prop::collection::vec(
                prop_oneof![
                    3 => (-40.0f64..50.0).prop_map(|v| Some((v * 2.0).round() / 2.0)),
                    1 => Just(None),
                ],
                0..200,
            )
            .prop_map(|vals| {
                Series::from_samples(
                    "P",
                    Variable::Ta,
                    vals.into_iter()
                        .enumerate()
                        .map(|(i, v)| (t0() + Duration::minutes(3 * i as i64), v))
                        .collect(),
                )
                .unwrap()
            })
        }

        proptest! {
            #[test]
            fn qc_is_idempotent_and_only_deletes(s in arb_series()) {
                let cfg = QcConfig { persistence_ta_hours: 0.25, ..QcConfig::default() };
                let (once, _) = apply_qc(&s, &cfg, &[]);
                let (twice, r2) = apply_qc(&once, &cfg, &[]);
                prop_assert_eq!(&once, &twice);
                prop_assert_eq!(r2.removed, 0);
                for (a, b) in s.values.iter().zip(&once.values) {
                    if let Some(b) = b {
                        prop_assert_eq!(a.unwrap().to_bits(), b.to_bits());
                    }
                }
            }
        }
    }
}
