//! Experiment orchestration: configuration, feature extraction, training,
//! scoring, persistence and the six-way comparison.

mod config;
mod persist;
mod synth;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cnn::{self, CnnError, CnnModel, Tensor, TrainingHistory};
use crate::dataset::{self, Dataset, DatasetError, Image, SplitPartition, NUM_CLASSES};
use crate::eval::{self, ComparisonReport, ConfusionMatrix, EvalError, ScoreCard};
use crate::rf::{self, ForestModel, RfError};
use crate::svm::{self, SvmError, SvmModel};
use crate::watershed::{self, WatershedError, WatershedParams};

pub use config::{ExperimentConfig, ModelKind, SplitSpec};
pub use persist::{decode_artifact, encode_artifact, load_model, save_model, ArtifactMeta, ModelArtifact, MODEL_FORMAT_VERSION};
pub use synth::{synth_image, synthesize_dataset, SynthSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Config,
    Ingest,
    Segment,
    Split,
    Features,
    Train,
    Evaluate,
    Persist,
    Load,
    Synthesize,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Phase::Config => "config",
            Phase::Ingest => "ingest",
            Phase::Segment => "segment",
            Phase::Split => "split",
            Phase::Features => "features",
            Phase::Train => "train",
            Phase::Evaluate => "evaluate",
            Phase::Persist => "persist",
            Phase::Load => "load",
            Phase::Synthesize => "synthesize",
        };
        f.write_str(s)
    }
}

/// Every variant renders as `[phase] message`.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("[config] {0}")]
    Config(String),
    #[error("[{phase}] {source}")]
    Dataset {
        phase: Phase,
        #[source]
        source: DatasetError,
    },
    #[error("[{phase}] {source}")]
    Watershed {
        phase: Phase,
        #[source]
        source: WatershedError,
    },
    #[error("[train] random forest: {0}")]
    Rf(#[source] RfError),
    #[error("[{phase}] svm: {source}")]
    Svm {
        phase: Phase,
        #[source]
        source: SvmError,
    },
    #[error("[{phase}] cnn: {source}")]
    Cnn {
        phase: Phase,
        #[source]
        source: CnnError,
    },
    #[error("[evaluate] {0}")]
    Eval(#[source] EvalError),
    #[error("[{phase}] i/o error on {}: {source}", path.display())]
    Io {
        phase: Phase,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("[load] model format version {found} is not supported (this build reads version {supported})")]
    Version { found: u32, supported: u32 },
    #[error("[load] corrupt model file {}: {reason}", path.display())]
    CorruptModel { path: PathBuf, reason: String },
}

impl PipelineError {
    pub(crate) fn io(phase: Phase, path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            phase,
            path: path.to_path_buf(),
            source,
        }
    }

    fn dataset(phase: Phase) -> impl FnOnce(DatasetError) -> Self {
        move |source| PipelineError::Dataset { phase, source }
    }

    fn svm(phase: Phase) -> impl FnOnce(SvmError) -> Self {
        move |source| PipelineError::Svm { phase, source }
    }

    fn cnn(phase: Phase) -> impl FnOnce(CnnError) -> Self {
        move |source| PipelineError::Cnn { phase, source }
    }

    pub fn phase(&self) -> Phase {
        match self {
            PipelineError::Config(_) => Phase::Config,
            PipelineError::Dataset { phase, .. }
            | PipelineError::Watershed { phase, .. }
            | PipelineError::Svm { phase, .. }
            | PipelineError::Cnn { phase, .. }
            | PipelineError::Io { phase, .. } => *phase,
            PipelineError::Rf(_) => Phase::Train,
            PipelineError::Eval(_) => Phase::Evaluate,
            PipelineError::Version { .. } | PipelineError::CorruptModel { .. } => Phase::Load,
        }
    }
}

/// How an image becomes a feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub resolution: [usize; 2],
    pub watershed: bool,
    pub watershed_params: WatershedParams,
    pub augment: bool,
}

impl FeatureSpec {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            resolution: cfg.resolution,
            watershed: cfg.watershed,
            watershed_params: cfg.watershed_params,
            augment: cfg.augment && cfg.watershed,
        }
    }

    pub fn channels(&self) -> usize {
        if self.augment {
            2
        } else {
            1
        }
    }

    pub fn len(&self) -> usize {
        self.channels() * self.resolution[0] * self.resolution[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// CNN input shape `(channels, height, width)`.
    pub fn tensor_shape(&self) -> [usize; 3] {
        [self.channels(), self.resolution[1], self.resolution[0]]
    }
}

/// Feature rows (pixel values 0..=255) plus the degenerate-segmentation count.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub rows: Vec<Vec<f64>>,
    pub degenerate: usize,
}

fn pixels(img: &Image) -> impl Iterator<Item = f64> + '_ {
    img.pixels().iter().map(|&p| p as f64)
}

/// Extract features from images already at the working resolution.
pub fn extract_features(images: &[Image], spec: &FeatureSpec) -> Result<Features, PipelineError> {
    let [w, h] = spec.resolution;
    if let Some(bad) = images.iter().find(|i| i.width() != w || i.height() != h) {
        return Err(PipelineError::Config(format!(
            "image is {}x{}, expected the working resolution {w}x{h}",
            bad.width(),
            bad.height()
        )));
    }
    if !spec.watershed {
        return Ok(Features {
            rows: crate::exec::map(images, |img| pixels(img).collect()),
            degenerate: 0,
        });
    }
    let feats = watershed::watershed_features_batch(images, &spec.watershed_params).map_err(|source| {
        PipelineError::Watershed {
            phase: Phase::Features,
            source,
        }
    })?;
    let degenerate = feats.iter().filter(|f| f.degenerate).count();
    let rows = images
        .iter()
        .zip(&feats)
        .map(|(img, f)| {
            if spec.augment {
                pixels(img).chain(pixels(&f.image)).collect()
            } else {
                pixels(&f.image).collect()
            }
        })
        .collect();
    Ok(Features { rows, degenerate })
}

/// A trained classifier of any of the three kinds.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Forest(ForestModel),
    Svm(SvmModel),
    Cnn(CnnModel<f32>),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Forest(_) => ModelKind::Rf,
            Model::Svm(_) => ModelKind::Svm,
            Model::Cnn(_) => ModelKind::Cnn,
        }
    }

    pub fn predict(&self, rows: &[Vec<f64>]) -> Result<Vec<usize>, PipelineError> {
        match self {
            Model::Forest(f) => rf::forest_predict_batch(f, rows).map_err(PipelineError::Rf),
            Model::Svm(m) => svm::svm_predict_batch(m, rows).map_err(PipelineError::svm(Phase::Evaluate)),
            Model::Cnn(m) => {
                let xs = to_tensors(rows, m.input_shape)?;
                cnn::cnn_predict_batch(m, &xs).map_err(PipelineError::cnn(Phase::Evaluate))
            }
        }
    }
}

fn to_tensors(rows: &[Vec<f64>], shape: [usize; 3]) -> Result<Vec<Tensor<f32>>, PipelineError> {
    rows.iter()
        .map(|r| cnn::features_to_tensor(r, shape).map_err(PipelineError::cnn(Phase::Features)))
        .collect()
}

fn pick<T: Clone>(xs: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| xs[i].clone()).collect()
}

/// Resolve the split for `labels`, failing before any training when fewer
/// than two classes are present.
pub fn make_split(cfg: &ExperimentConfig, labels: &[usize]) -> Result<SplitPartition, PipelineError> {
    let mut present: Vec<usize> = labels.to_vec();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        let class = present
            .first()
            .and_then(|&c| dataset::CLASS_NAMES.get(c))
            .map_or_else(|| "<none>".to_string(), |s| s.to_string());
        return Err(PipelineError::Dataset {
            phase: Phase::Split,
            source: DatasetError::Stratify {
                class,
                reason: format!("{} class(es) present; classification needs at least 2", present.len()),
            },
        });
    }
    dataset::stratified_split_labels(labels, &cfg.ratios(), cfg.split.seed).map_err(PipelineError::dataset(Phase::Split))
}

/// Load the dataset and resize it to the working resolution.
pub fn load_working_set(cfg: &ExperimentConfig) -> Result<Dataset, PipelineError> {
    let ds = dataset::load_dataset(&cfg.dataset_root).map_err(PipelineError::dataset(Phase::Ingest))?;
    ds.resized(cfg.resolution[0], cfg.resolution[1])
        .map_err(PipelineError::dataset(Phase::Ingest))
}

/// Train the configured model on `train`, with `val` used only for the CNN
/// learning curves.
pub fn train_model(
    cfg: &ExperimentConfig,
    spec: &FeatureSpec,
    train: (&[Vec<f64>], &[usize]),
    val: (&[Vec<f64>], &[usize]),
) -> Result<(Model, Option<TrainingHistory>), PipelineError> {
    match cfg.model {
        ModelKind::Rf => Ok((
            Model::Forest(rf::fit_forest(train.0, train.1, &cfg.rf).map_err(PipelineError::Rf)?),
            None,
        )),
        ModelKind::Svm => Ok((
            Model::Svm(svm::fit_svm(train.0, train.1, &cfg.svm).map_err(PipelineError::svm(Phase::Train))?),
            None,
        )),
        ModelKind::Cnn => {
            let shape = spec.tensor_shape();
            let model = CnnModel::<f32>::init(&cnn::default_architecture(), shape, cfg.cnn.seed)
                .map_err(PipelineError::cnn(Phase::Train))?;
            let tx = to_tensors(train.0, shape)?;
            let vx = to_tensors(val.0, shape)?;
            let val = (!vx.is_empty()).then_some((&vx[..], val.1));
            let (m, h) = cnn::train(model, &tx, train.1, val, &cfg.cnn).map_err(PipelineError::cnn(Phase::Train))?;
            Ok((Model::Cnn(m), Some(h)))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl From<&SplitPartition> for SplitSizes {
    fn from(p: &SplitPartition) -> Self {
        Self {
            train: p.train.len(),
            validation: p.validation.len(),
            test: p.test.len(),
        }
    }
}

/// Everything one run produced. Paths are relative to the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub model: ModelKind,
    pub watershed: bool,
    pub config_hash: String,
    pub split_seed: u64,
    pub split_sizes: SplitSizes,
    pub feature_len: usize,
    pub degenerate_count: usize,
    pub off_size_count: usize,
    /// SVM only: whether every machine met its tolerance.
    pub converged: Option<bool>,
    pub scorecard: ScoreCard,
    pub confusion: ConfusionMatrix,
    pub confusion_csv: String,
    pub confusion_pgm: String,
    pub model_path: String,
    pub history_path: Option<String>,
    /// Seconds per phase; the only field that differs between repeated runs.
    pub wall_clock_s: BTreeMap<String, f64>,
}

impl RunReport {
    /// Directory name for a run, e.g. `ws_svm`.
    pub fn slug(model: ModelKind, watershed: bool) -> String {
        let base = match model {
            ModelKind::Rf => "rf",
            ModelKind::Svm => "svm",
            ModelKind::Cnn => "cnn",
        };
        if watershed {
            format!("ws_{base}")
        } else {
            base.to_string()
        }
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    std::fs::write(path, bytes).map_err(|e| PipelineError::io(Phase::Persist, path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    write_file(path, text + "\n")
}

struct Timer(BTreeMap<String, f64>, Instant);

impl Timer {
    fn new() -> Self {
        Self(BTreeMap::new(), Instant::now())
    }

    fn lap(&mut self, phase: Phase) {
        let now = Instant::now();
        *self.0.entry(phase.to_string()).or_default() += (now - self.1).as_secs_f64();
        self.1 = now;
    }
}

/// Score `model` on the given rows.
pub fn evaluate_rows(model: &Model, rows: &[Vec<f64>], labels: &[usize]) -> Result<(ConfusionMatrix, ScoreCard), PipelineError> {
    let pred = model.predict(rows)?;
    let cm = eval::confusion_matrix(labels, &pred, NUM_CLASSES).map_err(PipelineError::Eval)?;
    let card = eval::score(&cm).map_err(PipelineError::Eval)?;
    Ok((cm, card))
}

/// Train, score and persist one configuration on prepared inputs.
fn run_prepared(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    split: &SplitPartition,
    features: &Features,
    mut timer: Timer,
) -> Result<RunReport, PipelineError> {
    let spec = FeatureSpec::from_config(cfg);
    let labels = ds.labels();
    let (xtr, ytr) = (pick(&features.rows, &split.train), pick(&labels, &split.train));
    let (xva, yva) = (pick(&features.rows, &split.validation), pick(&labels, &split.validation));
    let (model, history) = train_model(cfg, &spec, (&xtr, &ytr), (&xva, &yva))?;
    timer.lap(Phase::Train);

    let (xte, yte) = (pick(&features.rows, &split.test), pick(&labels, &split.test));
    let (cm, card) = evaluate_rows(&model, &xte, &yte)?;
    timer.lap(Phase::Evaluate);

    let dir = cfg.output_dir.join(RunReport::slug(cfg.model, cfg.watershed));
    std::fs::create_dir_all(&dir).map_err(|e| PipelineError::io(Phase::Persist, &dir, e))?;
    let names: Vec<&str> = ds.class_names.iter().map(String::as_str).collect();
    write_file(&dir.join("confusion.csv"), cm.to_csv(&names))?;
    write_file(&dir.join("confusion.pgm"), cm.heatmap(32).to_pgm())?;
    write_json(&dir.join("scorecard.json"), &card)?;
    write_json(&dir.join("split.json"), split)?;
    let history_path = match &history {
        Some(h) => {
            write_json(&dir.join("history.json"), h)?;
            Some("history.json".to_string())
        }
        None => None,
    };
    let converged = match &model {
        Model::Svm(m) => Some(m.converged()),
        _ => None,
    };
    let artifact = ModelArtifact {
        model,
        meta: ArtifactMeta {
            features: spec.clone(),
            class_names: ds.class_names.clone(),
            config_hash: cfg.config_hash(),
            split: split.clone(),
        },
    };
    save_model(&artifact, &dir.join("model.dgm"))?;
    timer.lap(Phase::Persist);

    let report = RunReport {
        name: cfg.run_name(),
        model: cfg.model,
        watershed: cfg.watershed,
        config_hash: cfg.config_hash(),
        split_seed: split.seed,
        split_sizes: split.into(),
        feature_len: spec.len(),
        degenerate_count: features.degenerate,
        off_size_count: ds.off_size_count,
        converged,
        scorecard: card,
        confusion: cm,
        confusion_csv: "confusion.csv".into(),
        confusion_pgm: "confusion.pgm".into(),
        model_path: "model.dgm".into(),
        history_path,
        wall_clock_s: timer.0,
    };
    write_json(&dir.join("report.json"), &report)?;
    Ok(report)
}

/// Ingest, extract features, split, train, evaluate and persist one
/// configuration. Outputs go to `output_dir/<slug>/`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    let mut timer = Timer::new();
    let ds = load_working_set(cfg)?;
    timer.lap(Phase::Ingest);
    let split = make_split(cfg, &ds.labels())?;
    timer.lap(Phase::Split);
    let images: Vec<Image> = ds.samples.iter().map(|s| s.image.clone()).collect();
    let features = extract_features(&images, &FeatureSpec::from_config(cfg))?;
    timer.lap(Phase::Features);
    run_prepared(cfg, &ds, &split, &features, timer)
}

/// Table row order: each model without, then with, watershed features.
pub fn comparison_order() -> Vec<(ModelKind, bool)> {
    ModelKind::ALL
        .iter()
        .flat_map(|&m| [(m, false), (m, true)])
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareOutcome {
    pub reports: Vec<RunReport>,
    pub table: ComparisonReport,
}

#[derive(Serialize)]
struct NamedCard<'a> {
    name: &'a str,
    scorecard: &'a ScoreCard,
}

/// Run all six configurations on one shared dataset load. The forest and
/// SVM share one split, the CNN another; both come from the same seed and
/// are shared between watershed on and off. Each finished run is written
/// before the next starts, so a failure leaves earlier results on disk.
pub fn compare_all(base: &ExperimentConfig) -> Result<CompareOutcome, PipelineError> {
    let cfgs: Vec<ExperimentConfig> = comparison_order()
        .into_iter()
        .map(|(model, watershed)| ExperimentConfig {
            model,
            watershed,
            augment: base.augment && watershed,
            ..base.clone()
        })
        .collect();
    for c in &cfgs {
        c.validate()?;
    }
    let t0 = Instant::now();
    let ds = load_working_set(base)?;
    let ingest_s = t0.elapsed().as_secs_f64();
    let labels = ds.labels();
    let mut splits: BTreeMap<&str, SplitPartition> = BTreeMap::new();
    for c in &cfgs {
        let key = if c.model == ModelKind::Cnn { "cnn" } else { "classic" };
        if !splits.contains_key(key) {
            splits.insert(key, make_split(c, &labels)?);
        }
    }
    let images: Vec<Image> = ds.samples.iter().map(|s| s.image.clone()).collect();
    let t1 = Instant::now();
    let raw = extract_features(&images, &FeatureSpec::from_config(&cfgs[0]))?;
    let ws = extract_features(&images, &FeatureSpec::from_config(&cfgs[1]))?;
    let features_s = t1.elapsed().as_secs_f64();

    let mut reports = Vec::with_capacity(cfgs.len());
    for c in &cfgs {
        let key = if c.model == ModelKind::Cnn { "cnn" } else { "classic" };
        let mut timer = Timer::new();
        timer.0.insert(Phase::Ingest.to_string(), ingest_s);
        timer.0.insert(Phase::Features.to_string(), features_s);
        let feats = if c.watershed { &ws } else { &raw };
        reports.push(run_prepared(c, &ds, &splits[key], feats, timer)?);
    }

    let cards: Vec<(String, ScoreCard)> = reports.iter().map(|r| (r.name.clone(), r.scorecard.clone())).collect();
    let table = eval::comparison_from_cards(&cards, base.headline);
    let out = &base.output_dir;
    write_file(&out.join("comparison.csv"), table.to_csv())?;
    write_file(&out.join("comparison.txt"), table.to_text())?;
    let named: Vec<NamedCard> = reports
        .iter()
        .map(|r| NamedCard {
            name: &r.name,
            scorecard: &r.scorecard,
        })
        .collect();
    write_json(&out.join("scorecards.json"), &named)?;
    Ok(CompareOutcome { reports, table })
}
