use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use preid::dataset::{ExtractConfig, SynthConfig};
use preid::eval::{CurveMode, FitSpace, DEFAULT_EPS_GRID};
use preid::model::ModelConfig;
use preid::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub max_positives: usize,
    pub min_points: usize,
    pub threshold: f64,
    pub mode: CurveMode,
    pub thresholds: Vec<usize>,
    pub classes: Option<Vec<String>>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            max_positives: 10,
            min_points: 2,
            threshold: 0.5,
            mode: CurveMode::Both,
            thresholds: vec![2, 4, 8, 16, 32, 64],
            classes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub batch: usize,
    pub trials: usize,
    pub warmup: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            batch: 512,
            trials: 20,
            warmup: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerLawSection {
    pub grid: Vec<f64>,
    pub space: FitSpace,
}

impl Default for PowerLawSection {
    fn default() -> Self {
        Self {
            grid: DEFAULT_EPS_GRID.to_vec(),
            space: FitSpace::default(),
        }
    }
}

/// Everything a run can be configured with. Each run writes the effective
/// values as `resolved_config.json`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    pub threads: usize,
    pub paths: BTreeMap<String, PathBuf>,
    pub synth: SynthConfig,
    pub extract: ExtractConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub bench: BenchSection,
    pub powerlaw: PowerLawSection,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let bytes = preid::fsutil::read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }
}

pub fn parse_list<T: std::str::FromStr>(flag: &str, s: &str) -> Result<Vec<T>, CliError> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| CliError::Usage(format!("--{flag}: cannot parse {t:?}"))))
        .collect()
}

/// `"x,err;x,err;..."`
pub fn parse_points(s: &str) -> Result<Vec<(f64, f64)>, CliError> {
    s.split(';')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| match parse_list::<f64>("points", t)?.as_slice() {
            &[x, e] => Ok((x, e)),
            _ => Err(CliError::Usage(format!("--points: expected \"x,err\", got {t:?}"))),
        })
        .collect()
}

/// `"car=150,pedestrian=150"`
pub fn parse_objects(s: &str) -> Result<BTreeMap<String, usize>, CliError> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            let (class, count) = t
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--objects: expected class=count, got {t:?}")))?;
            let count = count
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("--objects: bad count in {t:?}")))?;
            Ok((class.trim().to_string(), count))
        })
        .collect()
}
