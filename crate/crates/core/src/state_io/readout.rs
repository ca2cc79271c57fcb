use serde::{Deserialize, Serialize};

use super::StateIoError;
use crate::numerics::RealMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReadoutKind {
    ArgmaxClassifier,
    SigmoidBinary,
}

/// The network component mapping a hidden state to output logits:
/// `logits = state · weights + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutHead {
    weights: RealMatrix,
    bias: Vec<f64>,
    kind: ReadoutKind,
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl ReadoutHead {
    pub fn new(weights: RealMatrix, bias: Vec<f64>, kind: ReadoutKind) -> Result<Self, StateIoError> {
        let c = weights.cols();
        if c == 0 || weights.rows() == 0 {
            return Err(StateIoError::Invalid("readout weights must be non-empty".into()));
        }
        if bias.len() != c {
            return Err(StateIoError::Invalid(format!(
                "readout bias has {} entries for {c} outputs",
                bias.len()
            )));
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(StateIoError::Invalid("readout bias is not finite".into()));
        }
        if kind == ReadoutKind::SigmoidBinary && c != 1 {
            return Err(StateIoError::Invalid(format!(
                "a sigmoid-binary readout has one output, found {c}"
            )));
        }
        Ok(Self { weights, bias, kind })
    }

    pub fn weights(&self) -> &RealMatrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn kind(&self) -> ReadoutKind {
        self.kind
    }

    pub fn hidden_dim(&self) -> usize {
        self.weights.rows()
    }

    /// Number of distinct categories the head can emit.
    pub fn categories(&self) -> usize {
        match self.kind {
            ReadoutKind::ArgmaxClassifier => self.weights.cols(),
            ReadoutKind::SigmoidBinary => 2,
        }
    }

    /// Logits and predicted categories for each state row. Argmax ties go to
    /// the lowest index; the sigmoid head predicts 1 only when the logistic
    /// output is strictly above one half.
    pub fn apply(&self, states: &RealMatrix) -> Result<(RealMatrix, Vec<usize>), StateIoError> {
        if states.cols() != self.hidden_dim() {
            return Err(StateIoError::Invalid(format!(
                "states have {} columns, readout expects {}",
                states.cols(),
                self.hidden_dim()
            )));
        }
        let mut logits = states.matmul(&self.weights)?;
        for i in 0..logits.rows() {
            for (v, b) in logits.row_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        let categories = (0..logits.rows())
            .map(|i| {
                let row = logits.row(i);
                match self.kind {
                    // logistic(z) > 1/2 exactly when z > 0
                    ReadoutKind::SigmoidBinary => usize::from(row[0] > 0.0),
                    ReadoutKind::ArgmaxClassifier => row
                        .iter()
                        .enumerate()
                        .fold(0, |best, (j, &v)| if v > row[best] { j } else { best }),
                }
            })
            .collect();
        Ok((logits, categories))
    }
}
