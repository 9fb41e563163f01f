//! Pipeline configuration file (TOML).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Period;
use crate::error::{Error, Result};
use crate::evaluation::{IndicatorCriteria, RunVariant, SplitConfig, VariantKind};
use crate::gbt::GbtParams;
use crate::qc::QcConfig;
use crate::seed::derive_seed;
use crate::synth::ScenarioConfig;
use crate::thinning::{ThinningConfig, DEFAULT_RETRAINING_POINTS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Base seed; every named seed not given explicitly is derived from it.
    pub seed: u64,
    #[serde(default)]
    pub seeds: NamedSeeds,
    /// Worker threads, 0 for one per core.
    #[serde(default)]
    pub workers: usize,
    pub cadence_minutes: u32,
    #[serde(default)]
    pub data: DataPaths,
    #[serde(default)]
    pub scenario: Option<ScenarioConfig>,
    pub periods: Periods,
    #[serde(default)]
    pub qc: QcConfig,
    #[serde(default)]
    pub model: GbtParams,
    #[serde(default)]
    pub tuning: TuningSection,
    #[serde(default)]
    pub thinning: ThinningSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub baseline: BaselineSection,
}

/// Input files; all optional when the data come from `simulate`. Relative
/// paths are resolved against the config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub observations: Option<PathBuf>,
    pub stations: Option<PathBuf>,
    pub exclusions: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Periods {
    /// `[start, end)` of the training year.
    pub year1: [DateTime<Utc>; 2],
    /// `[start, end)` of the following evaluation year.
    pub year2: [DateTime<Utc>; 2],
}

impl Periods {
    pub fn year1(&self) -> Result<Period> {
        Period::new(self.year1[0], self.year1[1])
    }

    pub fn year2(&self) -> Result<Period> {
        Period::new(self.year2[0], self.year2[1])
    }

    pub fn both(&self) -> Result<Period> {
        Ok(self.year1()?.hull(&self.year2()?))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedSeeds {
    pub simulate: Option<u64>,
    pub folds: Option<u64>,
    pub tuning: Option<u64>,
    pub thinning: Option<u64>,
    pub final_folds: Option<u64>,
    pub final_models: Option<u64>,
    pub random_subsets: Option<u64>,
}

/// Seeds in effect for one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedSeeds {
    pub simulate: u64,
    pub folds: u64,
    pub tuning: u64,
    pub thinning: u64,
    pub final_folds: u64,
    pub final_models: u64,
    pub random_subsets: u64,
}

impl ResolvedSeeds {
    pub fn named(&self) -> [(&'static str, u64); 7] {
        [
            ("simulate", self.simulate),
            ("folds", self.folds),
            ("tuning", self.tuning),
            ("thinning", self.thinning),
            ("final_folds", self.final_folds),
            ("final_models", self.final_models),
            ("random_subsets", self.random_subsets),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridPoint {
    pub learning_rate: f64,
    pub max_depth: usize,
    pub subsample: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningSection {
    /// Without tuning every size uses `[model]`.
    pub enabled: bool,
    /// Grid points overriding `[model]`; the standard 12-point grid if empty.
    pub grid: Vec<GridPoint>,
    pub sizes: Vec<usize>,
    /// Test folds to run; all when empty.
    pub folds: Vec<usize>,
}

impl Default for GridPoint {
    fn default() -> Self {
        let p = GbtParams::default();
        GridPoint { learning_rate: p.learning_rate, max_depth: p.max_depth, subsample: p.subsample }
    }
}

impl Default for TuningSection {
    fn default() -> Self {
        TuningSection { enabled: true, grid: Vec::new(), sizes: Vec::new(), folds: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThinningSection {
    pub retraining_points: Vec<usize>,
    pub step_size: usize,
    /// Test folds to run; all when empty.
    pub folds: Vec<usize>,
    /// Objective weights by station id; unlisted stations weigh 1.
    pub weights: BTreeMap<String, f64>,
}

impl Default for ThinningSection {
    fn default() -> Self {
        ThinningSection {
            retraining_points: DEFAULT_RETRAINING_POINTS.to_vec(),
            step_size: 1,
            folds: Vec::new(),
            weights: BTreeMap::new(),
        }
    }
}

impl ThinningSection {
    pub fn config(&self) -> ThinningConfig {
        ThinningConfig { retraining_points: self.retraining_points.clone(), step_size: self.step_size }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    /// Subset sizes reported; sizes above the station count are dropped.
    pub sizes: Vec<usize>,
    /// Any of `1->1`, `1->2`, `1,2->1,2`.
    pub variants: Vec<String>,
    pub random_repeats: usize,
    pub criteria: IndicatorCriteria,
    pub split: SplitConfig,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            sizes: vec![42, 35, 28, 21, 14, 10, 7, 4, 3, 2],
            variants: vec!["1->1".into(), "1->2".into(), "1,2->1,2".into()],
            random_repeats: 10,
            criteria: IndicatorCriteria::default(),
            split: SplitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    /// Ids of the two reference stations; the GLM baseline is skipped if unset.
    pub references: Option<[String; 2]>,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and resolves relative data paths against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.observations, &mut cfg.data.stations, &mut cfg.data.exclusions]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            if !p.exists() {
                return Err(Error::Config(format!("input file {} does not exist", p.display())));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cadence_minutes == 0 || 1440 % self.cadence_minutes != 0 {
            return Err(Error::Config(format!("cadence {} min does not divide one day", self.cadence_minutes)));
        }
        let y1 = self.periods.year1()?;
        let y2 = self.periods.year2()?;
        if y2.start < y1.end {
            return Err(Error::Config("year2 must start after year1 ends".into()));
        }
        self.qc.validate()?;
        self.model.validate()?;
        self.thinning.config().validate()?;
        for p in self.grid() {
            p.validate()?;
        }
        for v in &self.evaluation.variants {
            parse_variant(v)?;
        }
        if self.data.observations.is_some() != self.data.stations.is_some() {
            return Err(Error::Config("data.observations and data.stations go together".into()));
        }
        if self.data.observations.is_none() && self.scenario.is_none() {
            return Err(Error::Config("either [data] paths or a [scenario] is required".into()));
        }
        if let Some(s) = &self.scenario {
            s.validate()?;
        }
        if let Some(w) = self.thinning.weights.values().find(|w| !(**w >= 0.0)) {
            return Err(Error::Config(format!("thinning weight {w} is negative")));
        }
        Ok(())
    }

    pub fn seeds(&self) -> ResolvedSeeds {
        let s = &self.seeds;
        let d = |k: u64, v: Option<u64>| v.unwrap_or_else(|| derive_seed(self.seed, &[k]));
        ResolvedSeeds {
            simulate: d(1, s.simulate),
            folds: d(2, s.folds),
            tuning: d(3, s.tuning),
            thinning: d(4, s.thinning),
            final_folds: d(5, s.final_folds),
            final_models: d(6, s.final_models),
            random_subsets: d(7, s.random_subsets),
        }
    }

    /// Replaces the base seed and drops explicit named seeds so that all of
    /// them follow the new base.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.seeds = NamedSeeds::default();
    }

    pub fn grid(&self) -> Vec<GbtParams> {
        if self.tuning.grid.is_empty() {
            self.model.default_grid()
        } else {
            self.tuning
                .grid
                .iter()
                .map(|g| GbtParams {
                    learning_rate: g.learning_rate,
                    max_depth: g.max_depth,
                    subsample: g.subsample,
                    ..self.model
                })
                .collect()
        }
    }

    pub fn variants(&self) -> Result<Vec<RunVariant>> {
        let (y1, y2) = (self.periods.year1()?, self.periods.year2()?);
        self.evaluation
            .variants
            .iter()
            .map(|v| {
                Ok(match parse_variant(v)? {
                    VariantKind::InSample => RunVariant::in_sample(y1),
                    VariantKind::Extrapolation => RunVariant::extrapolation(y1, y2),
                    VariantKind::Pooled => RunVariant::pooled(y1, y2),
                })
            })
            .collect()
    }

    /// SHA-256 of the canonical JSON form of the resolved configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

pub fn parse_variant(s: &str) -> Result<VariantKind> {
    match s {
        "1->1" => Ok(VariantKind::InSample),
        "1->2" => Ok(VariantKind::Extrapolation),
        "1,2->1,2" => Ok(VariantKind::Pooled),
        other => Err(Error::Config(format!("unknown variant {other:?}"))),
    }
}

pub fn variant_slug(kind: VariantKind) -> &'static str {
    match kind {
        VariantKind::InSample => "in_sample",
        VariantKind::Extrapolation => "extrapolation",
        VariantKind::Pooled => "pooled",
    }
}
