//! Value types shared across the pipeline and the humidity conversions.
//!
//! Canonical units are °C for air temperature, % for relative humidity and
//! hPa for vapor pressure.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Timestamp = DateTime<Utc>;

/// Teten coefficient in kPa.
const TETEN_BASE_KPA: f64 = 0.61078;
const TETEN_EXPONENT: f64 = 17.7;
const TETEN_OFFSET: f64 = 237.3;
const KPA_TO_HPA: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variable {
    /// Air temperature, °C.
    Ta,
    /// Relative humidity, %.
    #[serde(rename = "RH")]
    Rh,
    /// Vapor pressure, hPa.
    #[serde(rename = "e")]
    E,
}

impl Variable {
    /// The two variables carried in the wide table and predicted by the models.
    pub const MODELED: [Variable; 2] = [Variable::Ta, Variable::E];

    pub fn as_str(self) -> &'static str {
        match self {
            Variable::Ta => "Ta",
            Variable::Rh => "RH",
            Variable::E => "e",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Variable::Ta => "degC",
            Variable::Rh => "%",
            Variable::E => "hPa",
        }
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "Ta" | "ta" | "TA" => Ok(Variable::Ta),
            "RH" | "rh" | "Rh" => Ok(Variable::Rh),
            "e" | "E" => Ok(Variable::E),
            other => Err(Error::Data(format!("unknown variable {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StationClass {
    BuiltUp,
    Open,
    Forest,
    WaterAdjacent,
}

impl StationClass {
    pub fn as_str(self) -> &'static str {
        match self {
            StationClass::BuiltUp => "built-up",
            StationClass::Open => "open",
            StationClass::Forest => "forest",
            StationClass::WaterAdjacent => "water-adjacent",
        }
    }
}

impl fmt::Display for StationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StationClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "built-up" => Ok(StationClass::BuiltUp),
            "open" => Ok(StationClass::Open),
            "forest" => Ok(StationClass::Forest),
            "water-adjacent" => Ok(StationClass::WaterAdjacent),
            other => Err(Error::Data(format!("unknown station class {other:?}"))),
        }
    }
}

/// Static attributes of one station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationMeta {
    pub id: String,
    pub latitude: f64,
    pub longitude: f64,
    pub elevation: f64,
    pub svf: f64,
    pub class: StationClass,
}

impl StationMeta {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Data("station id must not be empty".into()));
        }
        if !(0.0..=1.0).contains(&self.svf) {
            return Err(Error::Data(format!(
                "station {}: svf {} outside [0, 1]",
                self.id, self.svf
            )));
        }
        if !self.elevation.is_finite() || !self.latitude.is_finite() || !self.longitude.is_finite()
        {
            return Err(Error::Data(format!(
                "station {}: non-finite coordinates or elevation",
                self.id
            )));
        }
        Ok(())
    }
}

/// Checks every station and that ids are unique within the network.
pub fn validate_network(stations: &[StationMeta]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for s in stations {
        s.validate()?;
        if !seen.insert(s.id.as_str()) {
            return Err(Error::Data(format!("duplicate station id {}", s.id)));
        }
    }
    Ok(())
}

/// A single reading. `value == None` means not available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub timestamp: Timestamp,
    pub station: String,
    pub variable: Variable,
    pub value: Option<f64>,
}

/// Saturation vapor pressure over water in hPa (Teten form, exponent 17.7).
pub fn saturation_vapor_pressure(ta_celsius: f64) -> Result<f64> {
    if !(ta_celsius > -TETEN_OFFSET) {
        return Err(Error::Domain(format!(
            "saturation vapor pressure undefined for Ta = {ta_celsius} degC"
        )));
    }
    let exponent = TETEN_EXPONENT * ta_celsius / (ta_celsius + TETEN_OFFSET);
    Ok(KPA_TO_HPA * TETEN_BASE_KPA * exponent.exp())
}

pub fn rh_to_e(rh_percent: f64, ta_celsius: f64) -> Result<f64> {
    if !(0.0..=100.0).contains(&rh_percent) {
        return Err(Error::Range(format!("relative humidity {rh_percent} outside [0, 100]")));
    }
    Ok(rh_percent / 100.0 * saturation_vapor_pressure(ta_celsius)?)
}

/// Relative humidity in % from vapor pressure.
///
/// Model output can be supersaturated; values above 100 are returned as-is,
/// callers that care use [`is_supersaturated`].
pub fn e_to_rh(e_hpa: f64, ta_celsius: f64) -> Result<f64> {
    if !(e_hpa >= 0.0) {
        return Err(Error::Domain(format!("vapor pressure {e_hpa} hPa is negative")));
    }
    Ok(100.0 * e_hpa / saturation_vapor_pressure(ta_celsius)?)
}

pub fn is_supersaturated(rh_percent: f64) -> bool {
    rh_percent > 100.0
}
