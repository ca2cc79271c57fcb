//! Hidden-state tensors, their on-disk formats, and model readout heads.

mod manifest;
pub mod npy;
mod readout;

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::numerics::{NumericsError, RealMatrix};

pub use manifest::{Dataset, DatasetManifest};
pub use npy::{HeaderField, NpyError};
pub use readout::{logistic, ReadoutHead, ReadoutKind};

#[derive(Debug, Error)]
pub enum StateIoError {
    #[error("{path}: {source}")]
    Npy {
        path: PathBuf,
        #[source]
        source: NpyError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: expected a {expected}-dimensional array, found shape {found:?}")]
    Rank {
        path: PathBuf,
        expected: usize,
        found: Vec<usize>,
    },
    #[error("invalid tensor: {0}")]
    Invalid(String),
    #[error("sample {sample} has {valid} valid steps, at least 2 are needed")]
    TooShort { sample: usize, valid: usize },
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Whether padded (masked-out) steps take part in stacking and fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PaddingMode {
    /// Only pairs of valid steps are used.
    #[default]
    Exclude,
    /// The mask is ignored and every step counts, padding included.
    Include,
}

/// A batch of hidden-state sequences, `samples x timesteps x hidden_dim`,
/// with an optional per-step validity mask whose valid steps form a prefix
/// of each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStateTensor {
    samples: usize,
    timesteps: usize,
    hidden_dim: usize,
    data: Vec<f64>,
    mask: Option<Vec<bool>>,
}

impl HiddenStateTensor {
    pub fn new(samples: usize, timesteps: usize, hidden_dim: usize, data: Vec<f64>) -> Result<Self, StateIoError> {
        if data.len() != samples * timesteps * hidden_dim {
            return Err(StateIoError::Invalid(format!(
                "{} values do not fill shape ({samples}, {timesteps}, {hidden_dim})",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            let k = hidden_dim.max(1);
            let n = timesteps.max(1);
            return Err(StateIoError::Invalid(format!(
                "non-finite value at index [{}, {}, {}]",
                pos / (n * k),
                (pos / k) % n,
                pos % k
            )));
        }
        Ok(Self {
            samples,
            timesteps,
            hidden_dim,
            data,
            mask: None,
        })
    }

    /// Attaches a `samples x timesteps` mask (`true` = valid step).
    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self, StateIoError> {
        if mask.len() != self.samples * self.timesteps {
            return Err(StateIoError::Invalid(format!(
                "mask has {} entries, expected {}",
                mask.len(),
                self.samples * self.timesteps
            )));
        }
        for (s, row) in mask.chunks(self.timesteps.max(1)).enumerate() {
            if row.windows(2).any(|w| !w[0] && w[1]) {
                return Err(StateIoError::Invalid(format!(
                    "mask of sample {s} is not a prefix (padding must be trailing)"
                )));
            }
        }
        self.mask = Some(mask);
        Ok(self)
    }

    /// Attaches a mask given as per-sample valid lengths.
    pub fn with_lengths(self, lengths: &[usize]) -> Result<Self, StateIoError> {
        if lengths.len() != self.samples {
            return Err(StateIoError::Invalid(format!(
                "{} lengths given for {} samples",
                lengths.len(),
                self.samples
            )));
        }
        if let Some((s, &l)) = lengths.iter().enumerate().find(|(_, &l)| l > self.timesteps) {
            return Err(StateIoError::Invalid(format!(
                "sample {s} length {l} exceeds {} timesteps",
                self.timesteps
            )));
        }
        let n = self.timesteps;
        let mask = lengths.iter().flat_map(|&l| (0..n).map(move |t| t < l)).collect();
        self.with_mask(mask)
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.samples, self.timesteps, self.hidden_dim)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn state(&self, s: usize, t: usize) -> &[f64] {
        let k = self.hidden_dim;
        let start = (s * self.timesteps + t) * k;
        &self.data[start..start + k]
    }

    pub fn state_mut(&mut self, s: usize, t: usize) -> &mut [f64] {
        let k = self.hidden_dim;
        let start = (s * self.timesteps + t) * k;
        &mut self.data[start..start + k]
    }

    pub fn is_valid(&self, s: usize, t: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[s * self.timesteps + t])
    }

    /// Number of valid leading steps of sample `s`.
    pub fn valid_len(&self, s: usize) -> usize {
        match &self.mask {
            None => self.timesteps,
            Some(m) => m[s * self.timesteps..(s + 1) * self.timesteps]
                .iter()
                .take_while(|&&v| v)
                .count(),
        }
    }

    fn used_len(&self, s: usize, padding: PaddingMode) -> usize {
        match padding {
            PaddingMode::Exclude => self.valid_len(s),
            PaddingMode::Include => self.timesteps,
        }
    }

    /// Row-stacks every used state, sample-major.
    pub fn stacked_states(&self, padding: PaddingMode) -> RealMatrix {
        let k = self.hidden_dim;
        let mut data = Vec::new();
        for s in 0..self.samples {
            for t in 0..self.used_len(s, padding) {
                data.extend_from_slice(self.state(s, t));
            }
        }
        let rows = data.len() / k.max(1);
        RealMatrix::new(rows, k, data).expect("tensor data is finite")
    }

    /// States at time `t` of the samples listed, as matrix rows.
    pub fn time_slice(&self, t: usize, samples: &[usize]) -> RealMatrix {
        let mut data = Vec::with_capacity(samples.len() * self.hidden_dim);
        for &s in samples {
            data.extend_from_slice(self.state(s, t));
        }
        RealMatrix::new(samples.len(), self.hidden_dim, data).expect("tensor data is finite")
    }

    /// Replaces every state with `f(state)`, which must map `k` values to `new_dim`.
    pub fn map_states(
        &self,
        new_dim: usize,
        mut f: impl FnMut(&RealMatrix) -> Result<RealMatrix, NumericsError>,
    ) -> Result<Self, StateIoError> {
        let rows = RealMatrix::new(
            self.samples * self.timesteps,
            self.hidden_dim,
            self.data.clone(),
        )?;
        let mapped = f(&rows)?;
        if mapped.shape() != (self.samples * self.timesteps, new_dim) {
            return Err(StateIoError::Invalid(format!(
                "state map produced shape {:?}",
                mapped.shape()
            )));
        }
        Ok(Self {
            samples: self.samples,
            timesteps: self.timesteps,
            hidden_dim: new_dim,
            data: mapped.into_vec(),
            mask: self.mask.clone(),
        })
    }
}

/// Consecutive-pair operands of the least-squares fit: rows of `x` are
/// `h[s, t]`, rows of `y` are `h[s, t + 1]`, over valid pairs only.
pub fn flatten_valid(t: &HiddenStateTensor) -> Result<(RealMatrix, RealMatrix), StateIoError> {
    flatten_with(t, PaddingMode::Exclude)
}

pub fn flatten_with(
    tensor: &HiddenStateTensor,
    padding: PaddingMode,
) -> Result<(RealMatrix, RealMatrix), StateIoError> {
    let k = tensor.hidden_dim();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for s in 0..tensor.samples() {
        let len = tensor.used_len(s, padding);
        if len < 2 {
            return Err(StateIoError::TooShort { sample: s, valid: len });
        }
        for t in 0..len - 1 {
            xs.extend_from_slice(tensor.state(s, t));
            ys.extend_from_slice(tensor.state(s, t + 1));
        }
    }
    let rows = xs.len() / k.max(1);
    Ok((RealMatrix::new(rows, k, xs)?, RealMatrix::new(rows, k, ys)?))
}

fn read_array(path: &Path, rank: usize) -> Result<npy::NpyArray, StateIoError> {
    let bytes = fs::read(path).map_err(|source| StateIoError::Io {
        path: path.to_owned(),
        source,
    })?;
    let array = npy::parse_npy(&bytes).map_err(|source| StateIoError::Npy {
        path: path.to_owned(),
        source,
    })?;
    if array.shape.len() != rank {
        return Err(StateIoError::Rank {
            path: path.to_owned(),
            expected: rank,
            found: array.shape,
        });
    }
    Ok(array)
}

fn write_array(path: &Path, shape: &[usize], data: &[f64]) -> Result<(), StateIoError> {
    let io_err = |source| StateIoError::Io {
        path: path.to_owned(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut writer = BufWriter::new(file);
    npy::write_npy(&mut writer, shape, data).map_err(|e| match e {
        NpyError::Io(source) => io_err(source),
        source => StateIoError::Npy {
            path: path.to_owned(),
            source,
        },
    })?;
    std::io::Write::flush(&mut writer).map_err(io_err)
}

/// Loads an `(s, n, k)` tensor file.
pub fn load_tensor(path: impl AsRef<Path>) -> Result<HiddenStateTensor, StateIoError> {
    let array = read_array(path.as_ref(), 3)?;
    let (s, n, k) = (array.shape[0], array.shape[1], array.shape[2]);
    HiddenStateTensor::new(s, n, k, array.data)
}

/// Writes the tensor data; the mask is not part of the file.
pub fn save_tensor(t: &HiddenStateTensor, path: impl AsRef<Path>) -> Result<(), StateIoError> {
    let (s, n, k) = t.shape();
    write_array(path.as_ref(), &[s, n, k], t.data())
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<RealMatrix, StateIoError> {
    let array = read_array(path.as_ref(), 2)?;
    Ok(RealMatrix::new(array.shape[0], array.shape[1], array.data)?)
}

pub fn save_matrix(m: &RealMatrix, path: impl AsRef<Path>) -> Result<(), StateIoError> {
    write_array(path.as_ref(), &[m.rows(), m.cols()], m.as_slice())
}

pub fn load_vector(path: impl AsRef<Path>) -> Result<Vec<f64>, StateIoError> {
    Ok(read_array(path.as_ref(), 1)?.data)
}

pub fn save_vector(v: &[f64], path: impl AsRef<Path>) -> Result<(), StateIoError> {
    write_array(path.as_ref(), &[v.len()], v)
}

/// Parses a labels (or lengths) file: one non-negative integer per line.
pub fn parse_labels(text: &str) -> Result<Vec<usize>, StateIoError> {
    let body = text.strip_suffix('\n').unwrap_or(text);
    if body.is_empty() {
        return Ok(Vec::new());
    }
    body.split('\n')
        .enumerate()
        .map(|(i, line)| {
            let line = line.strip_suffix('\r').unwrap_or(line).trim();
            line.parse::<usize>().map_err(|_| StateIoError::Parse {
                line: i + 1,
                detail: format!("expected a non-negative integer, found {line:?}"),
            })
        })
        .collect()
}

pub fn format_labels(labels: &[usize]) -> String {
    labels.iter().map(|l| format!("{l}\n")).collect()
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<usize>, StateIoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| StateIoError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_labels(&text).map_err(|e| match e {
        StateIoError::Parse { line, detail } => StateIoError::Parse {
            line,
            detail: format!("{}: {detail}", path.display()),
        },
        other => other,
    })
}

pub fn save_labels(labels: &[usize], path: impl AsRef<Path>) -> Result<(), StateIoError> {
    let path = path.as_ref();
    fs::write(path, format_labels(labels)).map_err(|source| StateIoError::Io {
        path: path.to_owned(),
        source,
    })
}
