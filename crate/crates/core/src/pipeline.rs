//! Glue from raw station series to the modelling table.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::dataset::{build_wide_table, ObservationTable, Period};
use crate::domain::{StationMeta, Variable};
use crate::error::{Error, Result};
use crate::qc::{apply_qc, ExclusionWindow, QcConfig, QcReport};
use crate::series::{derive_vapor_pressure, resample, Series};
use crate::synth::SyntheticNetwork;

/// Quality-controls raw Ta and RH series, resamples them to `cadence_minutes`
/// and converts RH to vapor pressure. Returns Ta and e series per station.
pub fn prepare_series(
    raw: &[Series],
    qc: &QcConfig,
    exclusions: &[ExclusionWindow],
    cadence_minutes: u32,
) -> Result<(Vec<Series>, Vec<QcReport>)> {
    qc.validate()?;
    let mut by_station: BTreeMap<&str, (Option<&Series>, Option<&Series>)> = BTreeMap::new();
    for s in raw {
        let e = by_station.entry(s.station.as_str()).or_default();
        let slot = match s.variable {
            Variable::Ta => &mut e.0,
            Variable::Rh => &mut e.1,
            Variable::E => {
                return Err(Error::Data(format!("{}: raw input must carry RH, not e", s.station)));
            }
        };
        if slot.replace(s).is_some() {
            return Err(Error::Data(format!("{}/{}: duplicate series", s.station, s.variable)));
        }
    }
    let per_station: Vec<(Vec<Series>, Vec<QcReport>)> = by_station
        .into_par_iter()
        .map(|(station, (ta, rh))| {
            let ta = ta.ok_or_else(|| Error::Data(format!("{station}: no Ta series")))?;
            let rh = rh.ok_or_else(|| Error::Data(format!("{station}: no RH series")))?;
            let (ta_clean, ta_report) = apply_qc(ta, qc, exclusions);
            let (rh_clean, rh_report) = apply_qc(rh, qc, exclusions);
            let ta_r = resample(&ta_clean, cadence_minutes);
            let rh_r = resample(&rh_clean, cadence_minutes);
            let e = derive_vapor_pressure(&ta_r, &rh_r)?;
            Ok((vec![ta_r, e], vec![ta_report, rh_report]))
        })
        .collect::<Result<_>>()?;
    let mut series = Vec::new();
    let mut reports = Vec::new();
    for (s, r) in per_station {
        series.extend(s);
        reports.extend(r);
    }
    Ok((series, reports))
}

/// Raw series through QC into the wide table.
pub fn build_table(
    raw: &[Series],
    stations: &[StationMeta],
    qc: &QcConfig,
    exclusions: &[ExclusionWindow],
    cadence_minutes: u32,
    train_period: &Period,
) -> Result<(ObservationTable, Vec<QcReport>)> {
    let (series, reports) = prepare_series(raw, qc, exclusions, cadence_minutes)?;
    let table = build_wide_table(&series, stations, cadence_minutes, train_period)?;
    Ok((table, reports))
}

/// Wide table straight from a synthetic network's observed (`truth ==
/// false`) or true values, bypassing QC.
pub fn network_table(net: &SyntheticNetwork, truth: bool, cadence_minutes: u32, train_period: &Period) -> Result<ObservationTable> {
    let series: Vec<Series> = if truth {
        net.truth_series().into_iter().filter(|s| s.variable != Variable::Rh).collect()
    } else {
        let obs = net.observed_series();
        let mut out = Vec::new();
        for pair in obs.chunks(2) {
            let ta = resample(&pair[0], cadence_minutes);
            let rh = resample(&pair[1], cadence_minutes);
            out.push(derive_vapor_pressure(&ta, &rh)?);
            out.push(ta);
        }
        out
    };
    let series: Vec<Series> = series.iter().map(|s| resample(s, cadence_minutes)).collect();
    build_wide_table(&series, &net.stations, cadence_minutes, train_period)
}
