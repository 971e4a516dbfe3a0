use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetVariant;
use crate::error::{Error, Result};
use crate::refine::PromptStyle;
use crate::taxonomy::ActivityType;
use crate::train::TrainConfig;

/// The run configuration file (TOML). Every section is optional; flags override it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub data: DataSection,
    pub train: TrainConfig,
    pub refine: RefineSection,
    pub classify: ClassifySection,
    pub analyze: AnalyzeSection,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Sample JSONL, or an ingest store directory.
    pub samples: Option<PathBuf>,
    /// CoNLL-U sidecar for samples without embedded parses.
    pub parses: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineSection {
    pub style: PromptStyle,
    pub retries: usize,
    pub in_flight: usize,
    pub temperature: f64,
    pub min_interval_ms: u64,
    /// Stub response file used under `--stub`; falls back to `LTC_LLM_STUB_FILE`.
    pub stub_file: Option<PathBuf>,
}

impl Default for RefineSection {
    fn default() -> Self {
        RefineSection {
            style: PromptStyle::RequirementList,
            retries: 3,
            in_flight: 4,
            temperature: 0.0,
            min_interval_ms: 0,
            stub_file: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifySection {
    pub variant: DatasetVariant,
    pub chunk: usize,
    pub geocode: bool,
    /// Offline gazetteer; used whenever set, and required under `--stub` unless
    /// `LTC_GEOCODER_STUB_FILE` is set.
    pub gazetteer: Option<PathBuf>,
    /// Geocoder cache; defaults to `<out>.geocache.json`.
    pub geocode_cache: Option<PathBuf>,
    pub workers: usize,
    pub min_interval_ms: u64,
}

impl Default for ClassifySection {
    fn default() -> Self {
        ClassifySection {
            variant: DatasetVariant::Regular,
            chunk: 256,
            geocode: false,
            gazetteer: None,
            geocode_cache: None,
            workers: 4,
            min_interval_ms: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeSection {
    pub tuples: Option<PathBuf>,
    /// Persons with fewer tuples are dropped before any analysis.
    pub min_tuples: usize,
    pub year_min: i32,
    pub year_max: i32,
    pub width: i32,
    /// Named type groups for `ratios`.
    pub series: BTreeMap<String, Vec<ActivityType>>,
    /// Two series names to correlate over `[correlate_from, correlate_to]`.
    pub correlate: Option<(String, String)>,
    pub correlate_from: i32,
    pub correlate_to: i32,
    pub home_country: Option<String>,
    pub top_n: usize,
    pub min_travel_km: f64,
    pub age_width: u32,
    pub distance_types: Vec<ActivityType>,
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        AnalyzeSection {
            tuples: None,
            min_tuples: 4,
            year_min: 1700,
            year_max: 2000,
            width: 5,
            series: BTreeMap::from([
                ("military".to_string(), vec![ActivityType::Military]),
                ("competition".to_string(), vec![ActivityType::Competition]),
            ]),
            correlate: Some(("military".into(), "competition".into())),
            correlate_from: 1900,
            correlate_to: 1999,
            home_country: None,
            top_n: 8,
            min_travel_km: 0.0,
            age_width: 10,
            distance_types: vec![ActivityType::Education, ActivityType::Career],
        }
    }
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl FileConfig {
    /// Parse a config file; relative paths inside it are taken relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: FileConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        resolve(base, &mut cfg.data.samples);
        resolve(base, &mut cfg.data.parses);
        resolve(base, &mut cfg.train.vocab);
        resolve(base, &mut cfg.refine.stub_file);
        resolve(base, &mut cfg.classify.gazetteer);
        resolve(base, &mut cfg.classify.geocode_cache);
        resolve(base, &mut cfg.analyze.tuples);
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(
            &path,
            r#"
[data]
samples = "store"

[train]
epochs = 2
folds = 3
loss = { lambda = 0.5, tau = 0.2 }

[analyze]
home_country = "Germany"
series = { war = ["Military", "Attack"] }
correlate = ["war", "war"]
"#,
        )
        .unwrap();
        let cfg = FileConfig::load(&path).unwrap();
        assert_eq!(cfg.data.samples, Some(dir.path().join("store")));
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.train.loss.lambda, 0.5);
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.analyze.series["war"], [ActivityType::Military, ActivityType::Attack]);
        assert_eq!(cfg.refine.retries, 3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cfg");
        std::fs::write(&path, "[train]\nepochz = 3\n").unwrap();
        let err = FileConfig::load(&path).unwrap_err();
        assert!(err.to_string().contains("epochz"), "{err}");
        assert_eq!(err.exit_code(), 1);
        let missing = FileConfig::load(&dir.path().join("missing.cfg")).unwrap_err();
        assert!(matches!(missing, Error::InputNotFound(_)));
        assert_eq!(missing.exit_code(), 1);
    }
}
