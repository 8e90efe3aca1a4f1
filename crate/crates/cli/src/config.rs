use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use riskpipe::metrics::DEFAULT_SPEED_P;
use riskpipe::pipeline::{StratifyOn, DEFAULT_SEPARATOR, DEFAULT_VALIDATION_FRACTION};
use riskpipe::regression::{PcaSpec, Strategy, DEFAULT_LAMBDA};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Task {
    #[serde(rename = "2a")]
    A,
    #[serde(rename = "2b")]
    B,
    #[serde(rename = "2c")]
    C,
    #[default]
    #[serde(rename = "2d")]
    D,
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim_start_matches("task").trim_start_matches('_') {
            "2a" | "a" => Ok(Task::A),
            "2b" | "b" => Ok(Task::B),
            "2c" | "c" => Ok(Task::C),
            "2d" | "d" => Ok(Task::D),
            other => Err(format!("unknown task {other:?}; expected 2a, 2b, 2c or 2d")),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::A => "2a",
            Task::B => "2b",
            Task::C => "2c",
            Task::D => "2d",
        })
    }
}

/// Which subjects evaluate/simulate run on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    #[default]
    Validation,
    Train,
    All,
}

impl FromStr for EvalSplit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "validation" | "val" => Ok(EvalSplit::Validation),
            "train" => Ok(EvalSplit::Train),
            "all" => Ok(EvalSplit::All),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// Every setting of a run. Loaded from a JSON file with these keys, then
/// overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_dir: Option<PathBuf>,
    pub labels_path: Vec<PathBuf>,
    pub embeddings_path: Option<PathBuf>,
    pub model_path: Option<PathBuf>,
    pub manifest_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub task: Task,
    pub strategy: Strategy,
    /// More than one value triggers a validation grid search.
    pub lambda: Vec<f64>,
    pub pca_components: Option<usize>,
    pub pca_variance: Option<f64>,
    pub standardize: bool,
    pub augment: bool,
    pub validation_fraction: f64,
    pub stratify_on: StratifyOn,
    pub separator: String,
    pub split: EvalSplit,
    pub threshold: f64,
    pub sticky: bool,
    pub erde_o: Vec<usize>,
    pub speed_p: f64,
    /// Exporter command line for on-the-fly embeddings while streaming.
    pub exporter: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: None,
            labels_path: Vec::new(),
            embeddings_path: None,
            model_path: None,
            manifest_path: None,
            output_dir: PathBuf::from("out"),
            seed: 0,
            task: Task::D,
            strategy: Strategy::Chain,
            lambda: vec![DEFAULT_LAMBDA],
            pca_components: None,
            pca_variance: None,
            standardize: false,
            augment: true,
            validation_fraction: DEFAULT_VALIDATION_FRACTION,
            stratify_on: StratifyOn::TaskC,
            separator: DEFAULT_SEPARATOR.to_string(),
            split: EvalSplit::Validation,
            threshold: 0.5,
            sticky: true,
            erde_o: vec![5, 30],
            speed_p: DEFAULT_SPEED_P,
            exporter: None,
        }
    }
}

/// Keys that name files rather than change results; left out of the hash.
const PATH_KEYS: [&str; 7] = [
    "data_dir",
    "labels_path",
    "embeddings_path",
    "model_path",
    "manifest_path",
    "output_dir",
    "exporter",
];

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&raw)
            .map_err(|e| CliError::Input(format!("bad config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Input(m));
        if self.lambda.is_empty() {
            return bad("at least one lambda is required".into());
        }
        if let Some(l) = self.lambda.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return bad(format!("lambda must be finite and non-negative, got {l}"));
        }
        if self.pca_components.is_some() && self.pca_variance.is_some() {
            return bad("--pca-components and --pca-variance are exclusive".into());
        }
        if let Some(v) = self.pca_variance {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("pca variance target must lie in (0, 1], got {v}"));
            }
        }
        if self.pca_components == Some(0) {
            return bad("pca components must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad(format!("threshold must lie in [0, 1], got {}", self.threshold));
        }
        if self.erde_o.contains(&0) {
            return bad("erde deadlines must be positive".into());
        }
        Ok(())
    }

    pub fn pca(&self) -> PcaSpec {
        match (self.pca_components, self.pca_variance) {
            (Some(k), _) => PcaSpec::Components { k },
            (None, Some(target)) => PcaSpec::Variance { target },
            (None, None) => PcaSpec::None,
        }
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON of every
    /// result-affecting setting.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        let map = value.as_object_mut().expect("config is an object");
        for key in PATH_KEYS {
            map.remove(key);
        }
        let canonical = serde_json::to_string(&value).expect("value serializes");
        hex::encode(&Sha256::digest(canonical.as_bytes())[..8])
    }

    pub fn require_data_dir(&self) -> Result<&Path, CliError> {
        self.data_dir
            .as_deref()
            .ok_or_else(|| CliError::Input("--data-dir is required".into()))
    }

    pub fn require_labels(&self) -> Result<Vec<&Path>, CliError> {
        if self.labels_path.is_empty() {
            return Err(CliError::Input("--labels-path is required".into()));
        }
        Ok(self.labels_path.iter().map(PathBuf::as_path).collect())
    }

    pub fn require_embeddings(&self) -> Result<&Path, CliError> {
        self.embeddings_path
            .as_deref()
            .ok_or_else(|| CliError::Input("--embeddings-path is required".into()))
    }

    pub fn manifest_file(&self) -> PathBuf {
        self.manifest_path
            .clone()
            .unwrap_or_else(|| self.output_dir.join("manifest.json"))
    }

    pub fn model_file(&self) -> PathBuf {
        self.model_path
            .clone()
            .unwrap_or_else(|| self.output_dir.join("model.json"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_paths() {
        let a = RunConfig::default();
        let b = RunConfig {
            output_dir: "elsewhere".into(),
            data_dir: Some("d".into()),
            ..RunConfig::default()
        };
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
        let c = RunConfig {
            seed: 1,
            ..RunConfig::default()
        };
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn file_keys_and_validation() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"task":"2b","lambda":[0.1,1],"pca_variance":0.85}"#).unwrap();
        assert_eq!(cfg.task, Task::B);
        assert_eq!(cfg.pca(), PcaSpec::Variance { target: 0.85 });
        cfg.validate().unwrap();
        assert!(serde_json::from_str::<RunConfig>(r#"{"lamda":[1]}"#).is_err());
        let both = RunConfig {
            pca_components: Some(3),
            pca_variance: Some(0.5),
            ..RunConfig::default()
        };
        assert!(both.validate().is_err());
        assert_eq!("task2c".parse::<Task>().unwrap(), Task::C);
        assert!("2e".parse::<Task>().is_err());
    }
}
