use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Phase, PipelineError};
use crate::cnn::CnnConfig;
use crate::dataset::SplitRatios;
use crate::eval::Headline;
use crate::rf::RfConfig;
use crate::svm::SvmConfig;
use crate::watershed::WatershedParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Rf,
    Svm,
    Cnn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Rf, ModelKind::Svm, ModelKind::Cnn];

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Rf => "RF",
            ModelKind::Svm => "SVM",
            ModelKind::Cnn => "CNN",
        }
    }

    /// 80/0/20 for the forest and the SVM, 70/10/20 for the CNN.
    pub fn default_ratios(self) -> SplitRatios {
        match self {
            ModelKind::Rf | ModelKind::Svm => SplitRatios::TRAIN_TEST,
            ModelKind::Cnn => SplitRatios::TRAIN_VAL_TEST,
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rf" => Ok(ModelKind::Rf),
            "svm" => Ok(ModelKind::Svm),
            "cnn" => Ok(ModelKind::Cnn),
            other => Err(format!("unknown model kind {other:?} (expected rf, svm or cnn)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub seed: u64,
    /// `None` uses the model's default protocol.
    pub ratios: Option<SplitRatios>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { seed: 42, ratios: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset_root: PathBuf,
    /// Working resolution `[width, height]`.
    pub resolution: [usize; 2],
    pub watershed: bool,
    pub watershed_params: WatershedParams,
    /// Feed raw pixels and the watershed overlay side by side.
    pub augment: bool,
    pub model: ModelKind,
    pub rf: RfConfig,
    pub svm: SvmConfig,
    pub cnn: CnnConfig,
    pub split: SplitSpec,
    pub output_dir: PathBuf,
    pub headline: Headline,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset_root: PathBuf::from("data"),
            resolution: [32, 32],
            watershed: false,
            watershed_params: WatershedParams::default(),
            augment: false,
            model: ModelKind::Svm,
            rf: RfConfig::default(),
            svm: SvmConfig::default(),
            cnn: CnnConfig::default(),
            split: SplitSpec::default(),
            output_dir: PathBuf::from("runs"),
            headline: Headline::Macro,
        }
    }
}

impl ExperimentConfig {
    pub fn read(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(Phase::Config, path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<(), PipelineError> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(path, text + "\n").map_err(|e| PipelineError::io(Phase::Config, path, e))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.resolution[0] < 8 || self.resolution[1] < 8 {
            return Err(PipelineError::Config(format!(
                "resolution must be at least 8x8, got {}x{}",
                self.resolution[0], self.resolution[1]
            )));
        }
        self.ratios()
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.augment && !self.watershed {
            return Err(PipelineError::Config("augment requires watershed".into()));
        }
        Ok(())
    }

    pub fn ratios(&self) -> SplitRatios {
        self.split.ratios.unwrap_or_else(|| self.model.default_ratios())
    }

    /// Row name used in the comparison table, e.g. `WS+SVM`.
    pub fn run_name(&self) -> String {
        if self.watershed {
            format!("WS+{}", self.model.label())
        } else {
            self.model.label().to_string()
        }
    }

    /// SHA-256 of the config as JSON with keys in sorted order. The output
    /// directory is left out: it says where results go, not what they are.
    pub fn config_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("output_dir");
        }
        crate::dataset::content_hash(v.to_string().as_bytes())
    }
}
