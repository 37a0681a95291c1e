//! Single-file model artifacts.
//!
//! ```text
//! magic "DEMGRADE-MODEL\n" | u32 format version | u64 header length | header JSON
//! | u64 blob length | blob (little-endian f32) | SHA-256 of everything before it
//! ```
//!
//! The version is read before anything else so an artifact from another
//! release fails with a version error rather than a parse error.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{FeatureSpec, Model, ModelKind, Phase, PipelineError};
use crate::cnn::{CnnConfig, CnnModel, LayerSpec};
use crate::dataset::SplitPartition;
use crate::rf::ForestModel;
use crate::svm::{BinarySvm, ClassPair, KernelParams, Standardizer, Strategy, SvmModel};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8] = b"DEMGRADE-MODEL\n";

/// A trained model together with what is needed to rebuild its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub model: Model,
    pub meta: ArtifactMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub features: FeatureSpec,
    pub class_names: Vec<String>,
    pub config_hash: String,
    pub split: SplitPartition,
}

#[derive(Serialize, Deserialize)]
struct StoredMachine {
    sv_rows: Vec<usize>,
    sv_indices: Vec<usize>,
    dual_coefs: Vec<f64>,
    bias: f64,
    params: KernelParams,
    converged: bool,
    iterations: usize,
}

#[derive(Serialize, Deserialize)]
struct StoredSvm {
    strategy: Strategy,
    classes: Vec<usize>,
    class_pairs: Vec<ClassPair>,
    n_features: usize,
    standardizer: Option<Standardizer>,
    params: KernelParams,
    /// Rows of the support-vector matrix in the blob.
    matrix_rows: usize,
    machines: Vec<StoredMachine>,
}

#[derive(Serialize, Deserialize)]
struct StoredCnn {
    architecture: Vec<LayerSpec>,
    input_shape: [usize; 3],
    weight_shapes: Vec<Vec<usize>>,
    seed: u64,
    config: CnnConfig,
    param_count: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum StoredModel {
    Rf { forest: ForestModel },
    Svm(StoredSvm),
    Cnn(StoredCnn),
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: ArtifactMeta,
    model: StoredModel,
}

fn encode_svm(m: &SvmModel) -> (StoredSvm, Vec<f32>) {
    let mut rows: Vec<usize> = m.machines.iter().flat_map(|b| b.sv_indices.iter().copied()).collect();
    rows.sort_unstable();
    rows.dedup();
    let mut blob = Vec::with_capacity(rows.len() * m.n_features);
    let mut first_vector = vec![None; rows.len()];
    for b in &m.machines {
        for (sv, idx) in b.support_vectors.iter().zip(&b.sv_indices) {
            let r = rows.binary_search(idx).expect("index collected above");
            if first_vector[r].is_none() {
                first_vector[r] = Some(sv);
            }
        }
    }
    for sv in first_vector.into_iter().flatten() {
        blob.extend(sv.iter().map(|&v| v as f32));
    }
    let machines = m
        .machines
        .iter()
        .map(|b| StoredMachine {
            sv_rows: b
                .sv_indices
                .iter()
                .map(|i| rows.binary_search(i).expect("index collected above"))
                .collect(),
            sv_indices: b.sv_indices.clone(),
            dual_coefs: b.dual_coefs.clone(),
            bias: b.bias,
            params: b.params,
            converged: b.converged,
            iterations: b.iterations,
        })
        .collect();
    (
        StoredSvm {
            strategy: m.strategy,
            classes: m.classes.clone(),
            class_pairs: m.class_pairs.clone(),
            n_features: m.n_features,
            standardizer: m.standardizer.clone(),
            params: m.params,
            matrix_rows: rows.len(),
            machines,
        },
        blob,
    )
}

fn decode_svm(s: StoredSvm, blob: &[f32]) -> Result<SvmModel, String> {
    if blob.len() != s.matrix_rows * s.n_features {
        return Err(format!(
            "support-vector matrix holds {} values, expected {}x{}",
            blob.len(),
            s.matrix_rows,
            s.n_features
        ));
    }
    let row = |r: usize| -> Result<Vec<f64>, String> {
        if r >= s.matrix_rows {
            return Err(format!("support-vector row {r} out of range"));
        }
        Ok(blob[r * s.n_features..(r + 1) * s.n_features]
            .iter()
            .map(|&v| v as f64)
            .collect())
    };
    let mut machines = Vec::with_capacity(s.machines.len());
    for m in s.machines {
        if m.sv_rows.len() != m.dual_coefs.len() {
            return Err("support-vector and coefficient counts differ".into());
        }
        machines.push(BinarySvm {
            support_vectors: m.sv_rows.iter().map(|&r| row(r)).collect::<Result<_, _>>()?,
            sv_indices: m.sv_indices,
            dual_coefs: m.dual_coefs,
            bias: m.bias,
            params: m.params,
            converged: m.converged,
            iterations: m.iterations,
        });
    }
    let model = SvmModel {
        strategy: s.strategy,
        classes: s.classes,
        class_pairs: s.class_pairs,
        machines,
        n_features: s.n_features,
        standardizer: s.standardizer,
        params: s.params,
    };
    model.validate().map_err(|e| e.to_string())?;
    Ok(model)
}

fn encode_cnn(m: &CnnModel<f32>) -> (StoredCnn, Vec<f32>) {
    (
        StoredCnn {
            architecture: m.architecture.clone(),
            input_shape: m.input_shape,
            weight_shapes: m.layers.iter().map(|l| l.weight_shape.clone()).collect(),
            seed: m.seed,
            config: m.config.clone(),
            param_count: m.param_count(),
        },
        m.flat_params(),
    )
}

fn decode_cnn(s: StoredCnn, blob: &[f32]) -> Result<CnnModel<f32>, String> {
    let mut m = CnnModel::<f32>::zeros(&s.architecture, s.input_shape).map_err(|e| e.to_string())?;
    let shapes: Vec<Vec<usize>> = m.layers.iter().map(|l| l.weight_shape.clone()).collect();
    if shapes != s.weight_shapes || m.param_count() != s.param_count {
        return Err("stored layer shapes do not match the architecture".into());
    }
    m.set_flat_params(blob).map_err(|e| e.to_string())?;
    m.seed = s.seed;
    m.config = s.config;
    Ok(m)
}

pub fn encode_artifact(a: &ModelArtifact) -> Vec<u8> {
    let (stored, blob) = match &a.model {
        Model::Forest(f) => (StoredModel::Rf { forest: f.clone() }, Vec::new()),
        Model::Svm(m) => {
            let (s, b) = encode_svm(m);
            (StoredModel::Svm(s), b)
        }
        Model::Cnn(m) => {
            let (s, b) = encode_cnn(m);
            (StoredModel::Cnn(s), b)
        }
    };
    let header = serde_json::to_vec(&Header {
        meta: a.meta.clone(),
        model: stored,
    })
    .expect("header serializes");
    let mut out = Vec::with_capacity(MAGIC.len() + 4 + 16 + header.len() + blob.len() * 4 + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(blob.len() as u64 * 4).to_le_bytes());
    for v in blob {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn decode_artifact(bytes: &[u8], origin: &Path) -> Result<ModelArtifact, PipelineError> {
    let corrupt = |reason: String| PipelineError::CorruptModel {
        path: origin.to_path_buf(),
        reason,
    };
    let fixed = MAGIC.len() + 4;
    if bytes.len() < fixed || &bytes[..MAGIC.len()] != MAGIC {
        return Err(corrupt("missing model file signature".into()));
    }
    let version = u32::from_le_bytes(bytes[MAGIC.len()..fixed].try_into().unwrap());
    if version != MODEL_FORMAT_VERSION {
        return Err(PipelineError::Version {
            found: version,
            supported: MODEL_FORMAT_VERSION,
        });
    }
    if bytes.len() < fixed + 32 {
        return Err(corrupt("file is truncated".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("digest mismatch (truncated or modified)".into()));
    }
    let mut pos = fixed;
    let mut take = |n: usize| -> Result<&[u8], PipelineError> {
        let end = pos.checked_add(n).filter(|&e| e <= body.len());
        let end = end.ok_or_else(|| corrupt("section runs past the end of the file".into()))?;
        let s = &body[pos..end];
        pos = end;
        Ok(s)
    };
    let header_len = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let header: Header = serde_json::from_slice(take(header_len)?).map_err(|e| corrupt(format!("header: {e}")))?;
    let blob_len = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    if !blob_len.is_multiple_of(4) {
        return Err(corrupt("blob length is not a multiple of 4".into()));
    }
    let blob: Vec<f32> = take(blob_len)?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if pos != body.len() {
        return Err(corrupt("trailing bytes after the blob".into()));
    }
    let model = match header.model {
        StoredModel::Rf { forest } => {
            forest.validate().map_err(|e| corrupt(e.to_string()))?;
            Model::Forest(forest)
        }
        StoredModel::Svm(s) => Model::Svm(decode_svm(s, &blob).map_err(corrupt)?),
        StoredModel::Cnn(s) => Model::Cnn(decode_cnn(s, &blob).map_err(corrupt)?),
    };
    Ok(ModelArtifact {
        model,
        meta: header.meta,
    })
}

pub fn save_model(a: &ModelArtifact, path: &Path) -> Result<(), PipelineError> {
    std::fs::write(path, encode_artifact(a)).map_err(|e| PipelineError::io(Phase::Persist, path, e))
}

pub fn load_model(path: &Path) -> Result<ModelArtifact, PipelineError> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::io(Phase::Load, path, e))?;
    decode_artifact(&bytes, path)
}

impl ModelArtifact {
    pub fn kind(&self) -> ModelKind {
        self.model.kind()
    }
}
