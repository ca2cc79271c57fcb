use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_labels, load_matrix, load_tensor, load_vector, HiddenStateTensor, ReadoutHead, ReadoutKind, StateIoError};

/// JSON description of a dataset. Relative paths are resolved against the
/// directory holding the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub tensor_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_path: Option<PathBuf>,
    /// Per-sample valid lengths, same text format as labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lengths_path: Option<PathBuf>,
    /// Readout weights, a `k x c` matrix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readout_path: Option<PathBuf>,
    /// Readout bias, a length-`c` vector; zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readout_bias_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readout_kind: Option<ReadoutKind>,
}

impl DatasetManifest {
    pub fn from_json_str(text: &str) -> Result<Self, StateIoError> {
        serde_json::from_str(text).map_err(|e| StateIoError::Manifest(e.to_string()))
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

/// A manifest together with everything it references, loaded and validated.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub tensor: HiddenStateTensor,
    pub labels: Option<Vec<usize>>,
    pub readout: Option<ReadoutHead>,
}

impl Dataset {
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self, StateIoError> {
        let manifest_path = manifest_path.as_ref();
        let text = fs::read_to_string(manifest_path).map_err(|source| StateIoError::Io {
            path: manifest_path.to_owned(),
            source,
        })?;
        let manifest = DatasetManifest::from_json_str(&text)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        Self::from_manifest(manifest, base)
    }

    pub fn from_manifest(manifest: DatasetManifest, base: &Path) -> Result<Self, StateIoError> {
        let resolve = |p: &Path| base.join(p);
        let mut tensor = load_tensor(resolve(&manifest.tensor_path))?;
        if let Some(p) = &manifest.lengths_path {
            let lengths = load_labels(resolve(p))?;
            tensor = tensor.with_lengths(&lengths)?;
        }
        let labels = match &manifest.labels_path {
            Some(p) => {
                let labels = load_labels(resolve(p))?;
                if labels.len() != tensor.samples() {
                    return Err(StateIoError::Manifest(format!(
                        "{} labels for {} samples",
                        labels.len(),
                        tensor.samples()
                    )));
                }
                Some(labels)
            }
            None => None,
        };
        let readout = match &manifest.readout_path {
            Some(p) => {
                let weights = load_matrix(resolve(p))?;
                let bias = match &manifest.readout_bias_path {
                    Some(b) => load_vector(resolve(b))?,
                    None => vec![0.0; weights.cols()],
                };
                let kind = manifest.readout_kind.ok_or_else(|| {
                    StateIoError::Manifest("readout_path given without readout_kind".into())
                })?;
                let head = ReadoutHead::new(weights, bias, kind)?;
                if head.hidden_dim() != tensor.hidden_dim() {
                    return Err(StateIoError::Manifest(format!(
                        "readout expects hidden size {}, tensor has {}",
                        head.hidden_dim(),
                        tensor.hidden_dim()
                    )));
                }
                Some(head)
            }
            None => None,
        };
        Ok(Self {
            manifest,
            tensor,
            labels,
            readout,
        })
    }
}
