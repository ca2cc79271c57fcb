//! The accumulated analysis report, `report.json` in the output directory.
//!
//! `fit` creates it; every later command reads it, updates its own sections
//! and writes it back.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use kann_core::koopman::{BasisMethod, KoopmanOperator, SpectralBasis};
use kann_core::metrics::AgreementReport;
use kann_core::numerics::NumericsConfig;
use kann_core::spectral::{decompose_matrix, memory_horizon, EigenSystem, Horizon};
use kann_core::state_io::{load_matrix, load_vector, DatasetManifest};
use serde::{Deserialize, Serialize};

use crate::args::Global;
use crate::output::num;

pub const REPORT_FILE: &str = "report.json";
pub const C_FILE: &str = "C.npy";
pub const B_FILE: &str = "B.npy";
pub const SINGULAR_VALUES_FILE: &str = "singular_values.npy";
pub const MEAN_FILE: &str = "mean.npy";

/// The published schema every report must satisfy.
pub const SCHEMA: &str = include_str!("../schema/report.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisReport {
    pub toolkit_version: String,
    pub manifest: DatasetManifest,
    pub basis: BasisSection,
    pub operator: OperatorSection,
    /// Threshold the memory horizons were computed with.
    pub epsilon: f64,
    pub spectrum: Vec<SpectrumEntry>,
    pub dominant_modes: Vec<usize>,
    pub errors: ErrorSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agreement: Option<AgreementSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub silhouette: Option<SilhouetteSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSection {
    pub method: BasisMethod,
    pub r: usize,
    pub singular_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSection {
    pub fit_residual: f64,
    pub c_path: PathBuf,
    pub b_path: PathBuf,
    pub singular_values_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_path: Option<PathBuf>,
    pub include_padding: bool,
    /// The eigenvector matrix was too ill-conditioned to invert reliably.
    pub defective: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumEntry {
    pub index: usize,
    pub lambda_re: f64,
    pub lambda_im: f64,
    pub modulus: f64,
    pub memory_horizon: HorizonValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HorizonValue {
    Steps(f64),
    Label(HorizonLabel),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HorizonLabel {
    Inf,
    Unstable,
}

impl From<Horizon> for HorizonValue {
    fn from(h: Horizon) -> Self {
        match h {
            Horizon::Finite(t) => HorizonValue::Steps(t),
            Horizon::Infinite => HorizonValue::Label(HorizonLabel::Inf),
            Horizon::Unstable => HorizonValue::Label(HorizonLabel::Unstable),
        }
    }
}

impl HorizonValue {
    pub fn text(self) -> String {
        match self {
            HorizonValue::Steps(t) => num(t),
            HorizonValue::Label(HorizonLabel::Inf) => "inf".into(),
            HorizonValue::Label(HorizonLabel::Unstable) => "unstable".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorSection {
    /// Mean one-step relative error; null when some actual state is zero.
    pub relative_error: Option<f64>,
    pub separability_residual: f64,
    /// Relative error after `1..=l` rollout steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rollout: Option<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgreementSection {
    pub total: usize,
    pub matching: usize,
    pub fraction: f64,
    pub confusion: Vec<Vec<usize>>,
}

impl From<&AgreementReport> for AgreementSection {
    fn from(a: &AgreementReport) -> Self {
        Self {
            total: a.total,
            matching: a.matching,
            fraction: a.fraction(),
            confusion: a.confusion.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SilhouetteSection {
    pub dim: usize,
    pub modulus_only: bool,
    pub koopman_modes: Vec<usize>,
    /// Cumulative mean silhouette per step, one curve per embedding.
    pub raw: Vec<f64>,
    pub pca_top: Vec<f64>,
    pub koopman_top: Vec<f64>,
}

pub fn spectrum_entries(eigsys: &EigenSystem, epsilon: f64) -> anyhow::Result<Vec<SpectrumEntry>> {
    eigsys
        .lambdas()
        .iter()
        .enumerate()
        .map(|(index, l)| {
            Ok(SpectrumEntry {
                index,
                lambda_re: l.re,
                lambda_im: l.im,
                modulus: l.norm(),
                memory_horizon: memory_horizon(*l, epsilon)?.into(),
            })
        })
        .collect()
}

impl AnalysisReport {
    pub fn load(out: &Path) -> anyhow::Result<Self> {
        let path = out.join(REPORT_FILE);
        let text = fs::read_to_string(&path)
            .with_context(|| format!("cannot read {} (run `kann fit` first)", path.display()))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("{} is not valid JSON", path.display()))?;
        validate_schema(&value).with_context(|| format!("{} is not a valid report", path.display()))?;
        let report: Self =
            serde_json::from_value(value).with_context(|| format!("{} is not a valid report", path.display()))?;
        report.check().with_context(|| format!("{} is not a valid report", path.display()))?;
        Ok(report)
    }

    pub fn save(&self, out: &Path) -> anyhow::Result<()> {
        self.check()?;
        validate_schema(&serde_json::to_value(self)?)?;
        let path = out.join(REPORT_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
    }

    /// Constraints the JSON types alone do not carry.
    fn check(&self) -> anyhow::Result<()> {
        if self.spectrum.len() != self.basis.r || self.basis.singular_values.len() < self.basis.r {
            bail!("spectrum and basis sizes disagree");
        }
        if self.spectrum.windows(2).any(|w| w[0].modulus < w[1].modulus) {
            bail!("spectrum is not sorted by modulus");
        }
        if self.spectrum.iter().enumerate().any(|(i, e)| e.index != i) {
            bail!("spectrum indices are not consecutive");
        }
        if self.dominant_modes.iter().any(|&j| j >= self.basis.r) {
            bail!("dominant mode out of range");
        }
        Ok(())
    }
}

pub fn validate_schema(value: &serde_json::Value) -> anyhow::Result<()> {
    let schema: serde_json::Value = serde_json::from_str(SCHEMA).context("embedded schema is not JSON")?;
    let validator = jsonschema::validator_for(&schema).map_err(|e| anyhow::anyhow!("embedded schema: {e}"))?;
    let problems: Vec<String> = validator
        .iter_errors(value)
        .map(|e| format!("{}: {e}", e.instance_path()))
        .collect();
    if !problems.is_empty() {
        bail!("schema violations: {}", problems.join("; "));
    }
    Ok(())
}

/// The fitted model as stored in the output directory.
pub struct Fitted {
    pub report: AnalysisReport,
    pub basis: SpectralBasis,
    pub operator: KoopmanOperator,
    pub eigsys: EigenSystem,
}

pub fn load_fitted(out: &Path) -> anyhow::Result<Fitted> {
    let report = AnalysisReport::load(out)?;
    let op = &report.operator;
    let b = load_matrix(out.join(&op.b_path))?;
    let sv = load_vector(out.join(&op.singular_values_path))?;
    let mean = op.mean_path.as_ref().map(|p| load_vector(out.join(p))).transpose()?;
    let basis = SpectralBasis::from_parts(b, sv, report.basis.method, mean)?;
    let c = load_matrix(out.join(&op.c_path))?;
    let operator = KoopmanOperator::from_parts(c, basis.clone(), op.fit_residual)?;
    let eigsys = decompose_matrix(operator.matrix(), &NumericsConfig::default())?;
    Ok(Fitted {
        report,
        basis,
        operator,
        eigsys,
    })
}

pub fn show(global: &Global) -> anyhow::Result<()> {
    let r = AnalysisReport::load(&global.out)?;
    println!("kann {} report for `{}`", r.toolkit_version, r.manifest.name);
    println!(
        "basis: {} rank {} | fit residual {}",
        serde_json::to_value(r.basis.method)?.as_str().unwrap_or("?"),
        r.basis.r,
        num(r.operator.fit_residual)
    );
    println!("spectrum (epsilon {}):", num(r.epsilon));
    for e in &r.spectrum {
        println!(
            "  {:>3}  {} {:+}i  |λ| = {}  horizon {}",
            e.index,
            num(e.lambda_re),
            e.lambda_im,
            num(e.modulus),
            e.memory_horizon.text()
        );
    }
    println!("dominant modes: {:?}", r.dominant_modes);
    match r.errors.relative_error {
        Some(v) => println!("relative error: {}", num(v)),
        None => println!("relative error: undefined (zero-norm state)"),
    }
    println!("separability residual: {}", num(r.errors.separability_residual));
    if let Some(a) = &r.agreement {
        println!("readout agreement: {}/{} ({})", a.matching, a.total, num(a.fraction));
    }
    if let Some(s) = &r.silhouette {
        let last = |v: &[f64]| v.last().copied().map_or("-".into(), num);
        println!(
            "final silhouette (dim {}): raw {} | pca {} | koopman {}",
            s.dim,
            last(&s.raw),
            last(&s.pca_top),
            last(&s.koopman_top)
        );
    }
    Ok(())
}
