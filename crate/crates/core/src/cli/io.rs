//! CSV artifacts with embedded manifests.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{Observation, StationMeta};
use crate::error::{Error, Result};
use crate::qc::ExclusionWindow;

/// Provenance written at the top of every output file as `# manifest:` lines.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config_sha256: String,
    pub crate_version: String,
    pub seeds: Vec<(String, u64)>,
    /// Hashes of external input files, if any.
    pub inputs: Vec<(String, String)>,
}

impl Manifest {
    pub fn lines(&self) -> Vec<String> {
        let mut out = vec![
            format!("stage={}", self.stage),
            format!("config_sha256={}", self.config_sha256),
            format!("crate_version={}", self.crate_version),
        ];
        out.extend(self.seeds.iter().map(|(k, v)| format!("seed.{k}={v}")));
        out.extend(self.inputs.iter().map(|(k, v)| format!("input.{k}.sha256={v}")));
        out
    }

    pub fn write_header(&self, w: &mut impl Write) -> Result<()> {
        for l in self.lines() {
            writeln!(w, "# manifest: {l}")?;
        }
        Ok(())
    }
}

/// Reads the `# manifest:` lines of a file.
pub fn read_manifest_lines(path: &Path) -> Result<Vec<String>> {
    let f = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        match line.strip_prefix("# manifest: ") {
            Some(rest) => out.push(rest.to_string()),
            None => break,
        }
    }
    Ok(out)
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

/// A CSV writer whose file starts with the manifest.
pub fn csv_writer(path: &Path, manifest: &Manifest) -> Result<csv::Writer<BufWriter<File>>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = BufWriter::new(File::create(path)?);
    manifest.write_header(&mut f)?;
    Ok(csv::Writer::from_writer(f))
}

pub fn write_rows<T: Serialize>(path: &Path, manifest: &Manifest, rows: &[T]) -> Result<()> {
    let mut w = csv_writer(path, manifest)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?)
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = reader(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<T>, _>>();
    rows.map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Header and raw records, for files whose columns depend on the data.
pub fn read_records(path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let mut r = reader(path)?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let records = r.records().collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((header, records))
}

pub fn read_observations(path: &Path) -> Result<Vec<Observation>> {
    read_rows(path)
}

pub fn read_stations(path: &Path) -> Result<Vec<StationMeta>> {
    let stations: Vec<StationMeta> = read_rows(path)?;
    crate::domain::validate_network(&stations)?;
    Ok(stations)
}

pub fn read_exclusions(path: &Path) -> Result<Vec<ExclusionWindow>> {
    let windows: Vec<ExclusionWindow> = read_rows(path)?;
    for w in &windows {
        w.validate()?;
    }
    Ok(windows)
}

/// Shortest round-trip text of an optional value; empty when missing.
pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>().map(Some).map_err(|e| Error::Data(format!("bad number {s:?}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Variable;
    use chrono::{TimeZone, Utc};

    fn manifest() -> Manifest {
        Manifest {
            stage: "qc".into(),
            config_sha256: "ab".into(),
            crate_version: "0.1.0".into(),
            seeds: vec![("folds".into(), 3)],
            inputs: vec![],
        }
    }

    #[test]
    fn observations_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("obs.csv");
        let t = Utc.with_ymd_and_hms(2022, 1, 1, 0, 10, 0).unwrap();
        let obs = vec![
            Observation { timestamp: t, station: "A".into(), variable: Variable::Ta, value: Some(1.25) },
            Observation { timestamp: t, station: "A".into(), variable: Variable::Rh, value: None },
        ];
        write_rows(&path, &manifest(), &obs).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# manifest: stage=qc\n"));
        assert!(text.contains("2022-01-01T00:10:00Z,A,RH,\n"));
        assert_eq!(read_observations(&path).unwrap(), obs);
        assert_eq!(read_manifest_lines(&path).unwrap(), manifest().lines());
    }

    #[test]
    fn optional_numbers() {
        assert_eq!(parse_opt("").unwrap(), None);
        assert_eq!(parse_opt(&fmt_opt(Some(0.1))).unwrap(), Some(0.1));
        assert!(parse_opt("x").is_err());
    }
}
