use rand::Rng;

use super::{rng, HarnessError};
use crate::numerics::RealMatrix;
use crate::state_io::{logistic, HiddenStateTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    ElmanTanh,
    Gru,
}

/// One affine gate: `W_x x + b_x + W_h h + b_h`, with `W_x` of size `k x m`
/// and `W_h` of size `k x k`.
#[derive(Debug, Clone, PartialEq)]
pub struct GateWeights {
    pub w_x: RealMatrix,
    pub w_h: RealMatrix,
    pub b_x: Vec<f64>,
    pub b_h: Vec<f64>,
}

impl GateWeights {
    fn zeros(m: usize, k: usize) -> Self {
        Self {
            w_x: RealMatrix::zeros(k, m),
            w_h: RealMatrix::zeros(k, k),
            b_x: vec![0.0; k],
            b_h: vec![0.0; k],
        }
    }

    fn input_part(&self, x: &[f64]) -> Vec<f64> {
        affine(&self.w_x, x, &self.b_x)
    }

    fn hidden_part(&self, h: &[f64]) -> Vec<f64> {
        affine(&self.w_h, h, &self.b_h)
    }
}

fn affine(w: &RealMatrix, v: &[f64], b: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|i| w.row(i).iter().zip(v).map(|(a, x)| a * x).sum::<f64>() + b[i])
        .collect()
}

/// A recurrent cell `h_t = F(h_{t−1}, x_t)`.
///
/// Elman: `h' = tanh(W_x x + b_x + W_h h + b_h)`.
/// GRU (gates in order reset, update, candidate):
/// `r = σ(·)`, `z = σ(·)`, `n = tanh(W_x x + b_x + r ⊙ (W_h h + b_h))`,
/// `h' = (1 − z) ⊙ n + z ⊙ h`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentCell {
    kind: CellKind,
    input_dim: usize,
    hidden_dim: usize,
    gates: Vec<GateWeights>,
}

impl RecurrentCell {
    /// Weights and biases drawn uniformly from `±1/√k`.
    pub fn new(kind: CellKind, input_dim: usize, hidden_dim: usize, seed: u64) -> Result<Self, HarnessError> {
        let mut cell = Self::zeros(kind, input_dim, hidden_dim)?;
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        let mut r = rng(seed);
        let mut draw = |v: &mut f64| *v = r.random_range(-bound..bound);
        for g in &mut cell.gates {
            for i in 0..hidden_dim {
                g.w_x.row_mut(i).iter_mut().for_each(&mut draw);
                g.w_h.row_mut(i).iter_mut().for_each(&mut draw);
            }
            g.b_x.iter_mut().for_each(&mut draw);
            g.b_h.iter_mut().for_each(&mut draw);
        }
        Ok(cell)
    }

    pub fn zeros(kind: CellKind, input_dim: usize, hidden_dim: usize) -> Result<Self, HarnessError> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(HarnessError::Parameter("cell sizes must be positive".into()));
        }
        let count = match kind {
            CellKind::ElmanTanh => 1,
            CellKind::Gru => 3,
        };
        Ok(Self {
            kind,
            input_dim,
            hidden_dim,
            gates: vec![GateWeights::zeros(input_dim, hidden_dim); count],
        })
    }

    pub fn kind(&self) -> CellKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn gates(&self) -> &[GateWeights] {
        &self.gates
    }

    /// Mutable gate weights. Shapes must be left unchanged.
    pub fn gates_mut(&mut self) -> &mut [GateWeights] {
        &mut self.gates
    }

    pub fn step(&self, h: &[f64], x: &[f64]) -> Vec<f64> {
        match self.kind {
            CellKind::ElmanTanh => {
                let g = &self.gates[0];
                let a = g.input_part(x);
                let b = g.hidden_part(h);
                a.iter().zip(&b).map(|(p, q)| (p + q).tanh()).collect()
            }
            CellKind::Gru => {
                let [reset, update, cand] = [&self.gates[0], &self.gates[1], &self.gates[2]];
                let r: Vec<f64> = sum(&reset.input_part(x), &reset.hidden_part(h)).map(logistic).collect();
                let z: Vec<f64> = sum(&update.input_part(x), &update.hidden_part(h)).map(logistic).collect();
                let nx = cand.input_part(x);
                let nh = cand.hidden_part(h);
                (0..self.hidden_dim)
                    .map(|i| {
                        let n = (nx[i] + r[i] * nh[i]).tanh();
                        (1.0 - z[i]) * n + z[i] * h[i]
                    })
                    .collect()
            }
        }
    }
}

fn sum<'a>(a: &'a [f64], b: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
    a.iter().zip(b).map(|(p, q)| p + q)
}

/// Input sequences, `samples x steps x features`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub samples: usize,
    pub steps: usize,
    pub features: usize,
    pub data: Vec<f64>,
}

impl SequenceBatch {
    pub fn input(&self, s: usize, t: usize) -> &[f64] {
        let at = (s * self.steps + t) * self.features;
        &self.data[at..at + self.features]
    }
}

/// States `h_1..h_n` of the cell driven by each input sequence from `h_0 = 0`.
pub fn run_cell(cell: &RecurrentCell, inputs: &SequenceBatch) -> Result<HiddenStateTensor, HarnessError> {
    if inputs.features != cell.input_dim {
        return Err(HarnessError::Dimension(format!(
            "inputs have {} features, cell expects {}",
            inputs.features, cell.input_dim
        )));
    }
    if inputs.data.len() != inputs.samples * inputs.steps * inputs.features {
        return Err(HarnessError::Dimension("input data does not fill its declared shape".into()));
    }
    let k = cell.hidden_dim;
    let mut data = Vec::with_capacity(inputs.samples * inputs.steps * k);
    for s in 0..inputs.samples {
        let mut h = vec![0.0; k];
        for t in 0..inputs.steps {
            h = cell.step(&h, inputs.input(s, t));
            data.extend_from_slice(&h);
        }
    }
    Ok(HiddenStateTensor::new(inputs.samples, inputs.steps, k, data)?)
}
