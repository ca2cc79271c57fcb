use anyhow::Context;
use kann_core::koopman::{
    compute_basis_with, fit_koopman_with, one_step_predictions, relative_error, BasisMethod, FitConfig, KoopmanError,
};
use kann_core::metrics::{silhouette_curve, surrogate_agreement, Embedding, MetricsError};
use kann_core::spectral::{
    apply_projector, decompose_matrix, dominant_modes, magnitude_series, parse_mode_list, separability_residual,
    subspace_projector_with, ModeIndexSet, SpectralError,
};
use kann_core::state_io::{save_matrix, save_tensor, save_vector, Dataset, HiddenStateTensor, PaddingMode};

use crate::args::{FitArgs, Global, PredictArgs, ProjectArgs, SilhouetteArgs, SpectrumArgs};
use crate::output::{header, num, write_csv};
use crate::report::{
    load_fitted, spectrum_entries, AgreementSection, AnalysisReport, BasisSection, ErrorSection, OperatorSection,
    SilhouetteSection, B_FILE, C_FILE, MEAN_FILE, SINGULAR_VALUES_FILE,
};
use crate::usage;

fn load_dataset(global: &Global) -> anyhow::Result<Dataset> {
    let path = global.manifest_path();
    Dataset::load(&path).with_context(|| format!("cannot load dataset from {}", path.display()))
}

/// One-step relative error, or `None` (with a warning) when an actual
/// state has zero norm and the error is undefined.
fn one_step_error(h: &HiddenStateTensor, op: &kann_core::koopman::KoopmanOperator) -> anyhow::Result<Option<f64>> {
    let (predicted, actual) = one_step_predictions(h, op)?;
    match relative_error(&predicted, &actual) {
        Ok(v) => Ok(Some(v)),
        Err(KoopmanError::ZeroState { sample, step }) => {
            eprintln!(
                "warning: state ({sample}, {}) has zero norm; relative error left undefined",
                step + 1
            );
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

fn dominant_count(requested: usize, r: usize) -> usize {
    requested.min(r)
}

pub fn fit(global: &Global, a: &FitArgs) -> anyhow::Result<()> {
    let data = load_dataset(global)?;
    let h = &data.tensor;
    let method: BasisMethod = global.basis.into();
    let config = FitConfig {
        padding: if a.include_padding {
            PaddingMode::Include
        } else {
            PaddingMode::Exclude
        },
        ..FitConfig::default()
    };
    let basis = compute_basis_with(h, global.rank_choice(), method, &config).map_err(|e| match e {
        KoopmanError::Rank { .. } => usage(e.to_string()),
        other => other.into(),
    })?;
    global.note(format!("basis rank {} of {}", basis.rank(), basis.hidden_dim()));
    let op = fit_koopman_with(h, &basis, &config)?;
    let eigsys = decompose_matrix(op.matrix(), &config.numerics)?;
    if eigsys.is_defective() {
        eprintln!("warning: eigenvector matrix is ill-conditioned; eigen-coordinates are unreliable");
    }
    let out = &global.out;
    save_matrix(op.matrix(), out.join(C_FILE))?;
    save_matrix(basis.matrix(), out.join(B_FILE))?;
    save_vector(basis.singular_values(), out.join(SINGULAR_VALUES_FILE))?;
    if let Some(mean) = basis.mean() {
        save_vector(mean, out.join(MEAN_FILE))?;
    }
    let dominant = dominant_modes(&eigsys, dominant_count(a.dominant, basis.rank()), Some((h, &basis)))?;
    let report = AnalysisReport {
        toolkit_version: env!("CARGO_PKG_VERSION").into(),
        manifest: data.manifest.clone(),
        basis: BasisSection {
            method,
            r: basis.rank(),
            singular_values: basis.singular_values().to_vec(),
        },
        operator: OperatorSection {
            fit_residual: op.fit_residual(),
            c_path: C_FILE.into(),
            b_path: B_FILE.into(),
            singular_values_path: SINGULAR_VALUES_FILE.into(),
            mean_path: basis.mean().map(|_| MEAN_FILE.into()),
            include_padding: a.include_padding,
            defective: eigsys.is_defective(),
        },
        epsilon: global.epsilon,
        spectrum: spectrum_entries(&eigsys, global.epsilon)?,
        dominant_modes: dominant.indices().to_vec(),
        errors: ErrorSection {
            relative_error: one_step_error(h, &op)?,
            separability_residual: separability_residual(h, &basis, &eigsys)?,
            rollout: None,
        },
        agreement: None,
        silhouette: None,
    };
    report.save(out)?;
    println!(
        "rank {} | fit residual {} | leading |λ| {}",
        basis.rank(),
        num(op.fit_residual()),
        num(eigsys.lambdas()[0].norm())
    );
    Ok(())
}

pub fn spectrum(global: &Global, a: &SpectrumArgs) -> anyhow::Result<()> {
    let mut fitted = load_fitted(&global.out)?;
    let data = load_dataset(global)?;
    let entries = spectrum_entries(&fitted.eigsys, global.epsilon)?;
    let rows: Vec<Vec<String>> = entries
        .iter()
        .map(|e| {
            vec![
                e.index.to_string(),
                num(e.lambda_re),
                num(e.lambda_im),
                num(e.modulus),
                e.memory_horizon.text(),
            ]
        })
        .collect();
    write_csv(
        &global.out.join("spectrum.csv"),
        &header(&["index", "re", "im", "modulus", "horizon"]),
        &rows,
    )?;
    let count = dominant_count(a.dominant, fitted.basis.rank());
    let dominant = dominant_modes(&fitted.eigsys, count, Some((&data.tensor, &fitted.basis)))?;
    fitted.report.epsilon = global.epsilon;
    fitted.report.spectrum = entries;
    fitted.report.dominant_modes = dominant.indices().to_vec();
    fitted.report.save(&global.out)?;
    for row in rows.iter().take(count) {
        println!("{}", row.join(","));
    }
    Ok(())
}

fn mode_selection(
    a: &ProjectArgs,
    fitted: &crate::report::Fitted,
    data: &Dataset,
) -> anyhow::Result<ModeIndexSet> {
    let eigsys = &fitted.eigsys;
    if let Some(text) = &a.modes {
        let indices = parse_mode_list(text).map_err(|e| usage(e.to_string()))?;
        return ModeIndexSet::new(&indices, eigsys).map_err(|e| match e {
            SpectralError::NotClosed { completion, .. } => usage(format!(
                "modes {text} are not closed under conjugation; use {}",
                completion.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
            )),
            other => usage(other.to_string()),
        });
    }
    match a.dominant {
        Some(count) => dominant_modes(eigsys, count, Some((&data.tensor, &fitted.basis))).map_err(|e| usage(e.to_string())),
        None => Ok(ModeIndexSet::new(&fitted.report.dominant_modes, eigsys)?),
    }
}

pub fn project(global: &Global, a: &ProjectArgs) -> anyhow::Result<()> {
    if !a.magnitudes && !a.subspace {
        return Err(usage("choose at least one of --magnitudes and --subspace"));
    }
    let fitted = load_fitted(&global.out)?;
    let data = load_dataset(global)?;
    let modes = mode_selection(a, &fitted, &data)?;
    global.note(format!("modes {:?}", modes.indices()));
    let h = &data.tensor;
    if a.magnitudes {
        let series = magnitude_series(h, &fitted.basis, &fitted.eigsys, &modes)?;
        let mut names = vec!["sample".to_string()];
        names.extend((0..h.timesteps()).map(|t| format!("step_{t}")));
        let rows: Vec<Vec<String>> = (0..h.samples())
            .map(|s| std::iter::once(s.to_string()).chain(series.row(s).iter().map(|&v| num(v))).collect())
            .collect();
        write_csv(&global.out.join("magnitudes.csv"), &names, &rows)?;
    }
    if a.subspace {
        let p = subspace_projector_with(&fitted.basis, &fitted.eigsys, &modes, a.projector.into())?;
        save_matrix(&p, global.out.join("projector.npy"))?;
        let projected = h.map_states(h.hidden_dim(), |rows| {
            apply_projector(rows, &fitted.basis, &p).map_err(|e| match e {
                SpectralError::Numerics(n) => n,
                other => kann_core::numerics::NumericsError::Shape(other.to_string()),
            })
        })?;
        save_tensor(&projected, global.out.join("projected.npy"))?;
    }
    println!(
        "modes {}",
        modes.indices().iter().map(usize::to_string).collect::<Vec<_>>().join(",")
    );
    Ok(())
}

/// Mean squared relative error of `l`-step rollouts from every start whose
/// target step is valid, for `l = 1..=steps`.
fn rollout_errors(
    h: &HiddenStateTensor,
    op: &kann_core::koopman::KoopmanOperator,
    steps: usize,
) -> anyhow::Result<Vec<Option<f64>>> {
    let n = h.timesteps();
    let mut sums = vec![0.0; steps];
    let mut counts = vec![0usize; steps];
    let mut undefined = vec![false; steps];
    for t in 0..n.saturating_sub(1) {
        let starts: Vec<usize> = (0..h.samples()).filter(|&s| h.is_valid(s, t) && h.is_valid(s, t + 1)).collect();
        if starts.is_empty() {
            continue;
        }
        let horizon = steps.min(n - 1 - t);
        let predicted = op.rollout(&h.time_slice(t, &starts), horizon)?;
        for (l, pred) in predicted.iter().enumerate() {
            for (row, &s) in starts.iter().enumerate() {
                if !h.is_valid(s, t + l + 1) {
                    continue;
                }
                let actual = h.state(s, t + l + 1);
                let denom: f64 = actual.iter().map(|v| v * v).sum();
                if denom == 0.0 {
                    undefined[l] = true;
                    continue;
                }
                let diff: f64 = pred.row(row).iter().zip(actual).map(|(p, q)| (p - q) * (p - q)).sum();
                sums[l] += diff / denom;
                counts[l] += 1;
            }
        }
    }
    Ok((0..steps)
        .map(|l| (!undefined[l] && counts[l] > 0).then(|| sums[l] / counts[l] as f64))
        .collect())
}

pub fn predict(global: &Global, a: &PredictArgs) -> anyhow::Result<()> {
    if a.steps == 0 {
        return Err(usage("--steps must be positive"));
    }
    let mut fitted = load_fitted(&global.out)?;
    let data = load_dataset(global)?;
    let h = &data.tensor;
    let (predicted, _) = one_step_predictions(h, &fitted.operator)?;
    save_tensor(&predicted, global.out.join("predicted.npy"))?;
    let relative = one_step_error(h, &fitted.operator)?;
    let rollout = if a.steps > 1 {
        let errors = rollout_errors(h, &fitted.operator, a.steps)?;
        let rows: Vec<Vec<String>> = errors
            .iter()
            .enumerate()
            .map(|(l, e)| vec![(l + 1).to_string(), e.map_or(String::new(), num)])
            .collect();
        write_csv(&global.out.join("rollout.csv"), &header(&["steps", "relative_error"]), &rows)?;
        Some(errors)
    } else {
        None
    };
    fitted.report.errors = ErrorSection {
        relative_error: relative,
        separability_residual: separability_residual(h, &fitted.basis, &fitted.eigsys)?,
        rollout,
    };
    if let Some(head) = &data.readout {
        let agreement = surrogate_agreement(h, &fitted.operator, head)?;
        println!("agreement {}/{} ({})", agreement.matching, agreement.total, num(agreement.fraction()));
        fitted.report.agreement = Some(AgreementSection::from(&agreement));
    }
    fitted.report.save(&global.out)?;
    println!("relative error {}", relative.map_or("undefined".into(), num));
    Ok(())
}

pub fn silhouette(global: &Global, a: &SilhouetteArgs) -> anyhow::Result<()> {
    if a.dim == 0 {
        return Err(usage("--dim must be positive"));
    }
    let mut fitted = load_fitted(&global.out)?;
    let data = load_dataset(global)?;
    let labels = data
        .labels
        .as_ref()
        .ok_or_else(|| usage("silhouette needs labels_path in the manifest"))?;
    let h = &data.tensor;
    let dim = a.dim.min(fitted.basis.rank());
    if dim < a.dim {
        global.note(format!("--dim {} exceeds rank; using {dim}", a.dim));
    }
    let koopman = dominant_modes(&fitted.eigsys, dim, Some((h, &fitted.basis)))?;
    let curve = |embedding: &Embedding<'_>| {
        silhouette_curve(h, &fitted.basis, labels, embedding).map_err(|e| match e {
            MetricsError::SingleCluster => usage("silhouette needs at least two classes"),
            other => other.into(),
        })
    };
    let raw = curve(&Embedding::Raw)?.values;
    let pca_top = curve(&Embedding::PcaTop(dim))?.values;
    let koopman_top = curve(&Embedding::Koopman {
        eigsys: &fitted.eigsys,
        modes: koopman.clone(),
        modulus_only: a.modulus_only,
    })?
    .values;
    let rows: Vec<Vec<String>> = (0..h.timesteps())
        .map(|t| vec![t.to_string(), num(raw[t]), num(pca_top[t]), num(koopman_top[t])])
        .collect();
    write_csv(
        &global.out.join("silhouette.csv"),
        &header(&["step", "raw", "pca_top", "koopman_top"]),
        &rows,
    )?;
    println!(
        "final silhouette: raw {} | pca {} | koopman {}",
        num(*raw.last().unwrap_or(&0.0)),
        num(*pca_top.last().unwrap_or(&0.0)),
        num(*koopman_top.last().unwrap_or(&0.0))
    );
    fitted.report.silhouette = Some(SilhouetteSection {
        dim,
        modulus_only: a.modulus_only,
        koopman_modes: koopman.indices().to_vec(),
        raw,
        pca_top,
        koopman_top,
    });
    fitted.report.save(&global.out)?;
    Ok(())
}
