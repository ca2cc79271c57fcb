//! Latent-separation curves and network/surrogate agreement.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::koopman::{one_step_predictions, KoopmanError, KoopmanOperator, SpectralBasis};
use crate::numerics::{NumericsError, RealMatrix};
use crate::spectral::{eigen_coords, EigenSystem, ModeIndexSet, SpectralError};
use crate::state_io::{HiddenStateTensor, ReadoutHead, StateIoError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("silhouette needs at least two clusters")]
    SingleCluster,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("category {category} at position {index} is not below {c}")]
    Category { index: usize, category: usize, c: usize },
    #[error("embedding dimension {d} exceeds basis rank {r}")]
    Dimension { d: usize, r: usize },
    #[error(transparent)]
    Koopman(#[from] KoopmanError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    StateIo(#[from] StateIoError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Per-point silhouette values. Points alone in their cluster, and points
/// whose intra- and nearest inter-cluster distances are both zero, get 0.
pub fn silhouette_points(points: &RealMatrix, labels: &[usize]) -> Result<Vec<f64>, MetricsError> {
    let n = points.rows();
    if n == 0 {
        return Err(MetricsError::Empty("silhouette points"));
    }
    if labels.len() != n {
        return Err(MetricsError::Length(format!("{} labels for {n} points", labels.len())));
    }
    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        clusters.entry(l).or_default().push(i);
    }
    if clusters.len() < 2 {
        return Err(MetricsError::SingleCluster);
    }
    let dist = |i: usize, j: usize| -> f64 {
        points
            .row(i)
            .iter()
            .zip(points.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let mut out = vec![0.0; n];
    for (i, value) in out.iter_mut().enumerate() {
        let own = &clusters[&labels[i]];
        if own.len() == 1 {
            continue;
        }
        let a = own.iter().filter(|&&j| j != i).map(|&j| dist(i, j)).sum::<f64>() / (own.len() - 1) as f64;
        let b = clusters
            .iter()
            .filter(|(&l, _)| l != labels[i])
            .map(|(_, members)| members.iter().map(|&j| dist(i, j)).sum::<f64>() / members.len() as f64)
            .fold(f64::INFINITY, f64::min);
        let scale = a.max(b);
        if scale > 0.0 {
            *value = (b - a) / scale;
        }
    }
    Ok(out)
}

/// Coordinates in which silhouettes are measured.
#[derive(Debug, Clone)]
pub enum Embedding<'a> {
    /// All basis coefficients.
    Raw,
    /// The first `d` basis coefficients.
    PcaTop(usize),
    /// Eigen-coordinates on the given modes, as (Re, Im) pairs or moduli.
    Koopman {
        eigsys: &'a EigenSystem,
        modes: ModeIndexSet,
        modulus_only: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilhouetteCurve {
    /// Cumulative mean of the per-point values up to each step.
    pub values: Vec<f64>,
    /// `s x n` silhouettes, each among the states at the same step.
    pub per_point: Vec<Vec<f64>>,
}

/// Silhouettes per time slice, cumulatively averaged over time. Steps at
/// which fewer than two classes have valid states contribute nothing.
pub fn silhouette_curve(
    h: &HiddenStateTensor,
    basis: &SpectralBasis,
    labels: &[usize],
    embedding: &Embedding<'_>,
) -> Result<SilhouetteCurve, MetricsError> {
    let (s, n, _) = h.shape();
    if labels.len() != s {
        return Err(MetricsError::Length(format!("{} labels for {s} samples", labels.len())));
    }
    let mut distinct = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(MetricsError::SingleCluster);
    }
    if let Embedding::PcaTop(d) = embedding {
        if *d == 0 || *d > basis.rank() {
            return Err(MetricsError::Dimension { d: *d, r: basis.rank() });
        }
    }
    let mut per_point = vec![vec![0.0; n]; s];
    let mut values = Vec::with_capacity(n);
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in 0..n {
        let rows: Vec<usize> = (0..s).filter(|&i| h.is_valid(i, t)).collect();
        let slice_labels: Vec<usize> = rows.iter().map(|&i| labels[i]).collect();
        if slice_labels.iter().any(|&l| l != slice_labels[0]) {
            let points = embed(&h.time_slice(t, &rows), basis, embedding)?;
            let sil = silhouette_points(&points, &slice_labels)?;
            for (&i, v) in rows.iter().zip(sil) {
                per_point[i][t] = v;
                sum += v;
                count += 1;
            }
        }
        values.push(if count == 0 { 0.0 } else { sum / count as f64 });
    }
    Ok(SilhouetteCurve { values, per_point })
}

fn embed(states: &RealMatrix, basis: &SpectralBasis, embedding: &Embedding<'_>) -> Result<RealMatrix, MetricsError> {
    match embedding {
        Embedding::Raw => Ok(basis.project(states)?),
        Embedding::PcaTop(d) => {
            let cols: Vec<usize> = (0..*d).collect();
            Ok(basis.project(states)?.select_columns(&cols))
        }
        Embedding::Koopman {
            eigsys,
            modes,
            modulus_only,
        } => {
            let coords = eigen_coords(states, basis, eigsys)?.select_columns(modes.indices());
            let width = if *modulus_only { modes.len() } else { 2 * modes.len() };
            let mut out = RealMatrix::zeros(coords.rows(), width);
            for i in 0..coords.rows() {
                for (jj, z) in coords.row(i).iter().enumerate() {
                    if *modulus_only {
                        out[(i, jj)] = z.norm();
                    } else {
                        out[(i, 2 * jj)] = z.re;
                        out[(i, 2 * jj + 1)] = z.im;
                    }
                }
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub total: usize,
    pub matching: usize,
    /// Rows index the network category, columns the surrogate category.
    pub confusion: Vec<Vec<usize>>,
}

impl AgreementReport {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.matching as f64 / self.total as f64
        }
    }
}

pub fn agreement(network: &[usize], surrogate: &[usize], c: usize) -> Result<AgreementReport, MetricsError> {
    if network.len() != surrogate.len() {
        return Err(MetricsError::Length(format!(
            "{} network categories against {} surrogate categories",
            network.len(),
            surrogate.len()
        )));
    }
    let mut confusion = vec![vec![0usize; c]; c];
    let mut matching = 0;
    for (index, (&a, &b)) in network.iter().zip(surrogate).enumerate() {
        for category in [a, b] {
            if category >= c {
                return Err(MetricsError::Category { index, category, c });
            }
        }
        confusion[a][b] += 1;
        matching += usize::from(a == b);
    }
    Ok(AgreementReport {
        total: network.len(),
        matching,
        confusion,
    })
}

/// Compares the readout on each true next state with the readout on its
/// one-step surrogate prediction, over all valid steps.
pub fn surrogate_agreement(
    h: &HiddenStateTensor,
    op: &KoopmanOperator,
    head: &ReadoutHead,
) -> Result<AgreementReport, MetricsError> {
    let (predicted, actual) = one_step_predictions(h, op)?;
    let (s, n, k) = actual.shape();
    let mut pred_rows = Vec::new();
    let mut true_rows = Vec::new();
    for i in 0..s {
        for t in 0..n {
            if actual.is_valid(i, t) {
                pred_rows.extend_from_slice(predicted.state(i, t));
                true_rows.extend_from_slice(actual.state(i, t));
            }
        }
    }
    let rows = true_rows.len() / k.max(1);
    let (_, net) = head.apply(&RealMatrix::new(rows, k, true_rows)?)?;
    let (_, sur) = head.apply(&RealMatrix::new(rows, k, pred_rows)?)?;
    agreement(&net, &sur, head.categories())
}
