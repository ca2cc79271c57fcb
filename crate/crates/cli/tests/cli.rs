use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kann_core::harness::{gen_linear, LinearDynamics, SpectrumBlock};
use kann_core::state_io::{load_matrix, load_tensor, save_labels, save_tensor, DatasetManifest, HiddenStateTensor};
use serde_json::Value;

fn kann(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kann"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = kann(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = kann(dir, args);
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn write_dataset(dir: &Path, h: &HiddenStateTensor, labels: Option<&[usize]>) {
    fs::create_dir_all(dir).unwrap();
    save_tensor(h, dir.join("states.npy")).unwrap();
    if let Some(labels) = labels {
        save_labels(labels, dir.join("labels.txt")).unwrap();
    }
    let manifest = DatasetManifest {
        name: "test".into(),
        tensor_path: "states.npy".into(),
        labels_path: labels.map(|_| PathBuf::from("labels.txt")),
        lengths_path: None,
        readout_path: None,
        readout_bias_path: None,
        readout_kind: None,
    };
    fs::write(dir.join("manifest.json"), manifest.to_json_string()).unwrap();
}

fn spectrum_dataset(dir: &Path, blocks: &[SpectrumBlock], s: usize, n: usize) {
    let dynamics = LinearDynamics::from_spectrum(blocks, 11, false).unwrap();
    let h = gen_linear(&dynamics, s, n, 0.0, 12).unwrap();
    write_dataset(dir, &h, None);
}

#[test]
fn synth_linear_writes_a_loadable_tensor_and_prints_the_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let stdout = ok(
        tmp.path(),
        &["--out", "d", "--seed", "7", "synth", "linear", "--k", "8", "--s", "16", "--n", "40"],
    );
    assert!(stdout.contains("seed 7"));
    let h = load_tensor(tmp.path().join("d/states.npy")).unwrap();
    assert_eq!(h.shape(), (16, 40, 8));
    let manifest = DatasetManifest::from_json_str(&fs::read_to_string(tmp.path().join("d/manifest.json")).unwrap());
    assert_eq!(manifest.unwrap().tensor_path, PathBuf::from("states.npy"));
}

#[test]
fn counter_labels_follow_the_token_count() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["--out", "d", "--seed", "3", "synth", "counter", "--len", "50", "--s", "32"]);
    let d = tmp.path().join("d");
    let labels: Vec<usize> = fs::read_to_string(d.join("labels.txt"))
        .unwrap()
        .lines()
        .map(|l| l.trim().parse().unwrap())
        .collect();
    // Default vocabulary: ids 0..5 positive, 5..10 negative, the rest neutral.
    let mut count = vec![0i64; 32];
    let (_, rows) = read_csv(&d.join("tokens.csv"));
    assert_eq!(rows.len(), 32 * 50);
    for row in rows {
        let s: usize = row[0].parse().unwrap();
        let token: usize = row[2].parse().unwrap();
        count[s] += match token {
            0..=4 => 1,
            5..=9 => -1,
            _ => 0,
        };
    }
    let h = load_tensor(d.join("states.npy")).unwrap();
    for s in 0..32 {
        assert_eq!(labels[s], usize::from(count[s] > 0), "sample {s}");
        assert_eq!(h.state(s, 49)[0], count[s] as f64, "sample {s}");
    }
    assert!(labels.contains(&0) && labels.contains(&1));
}

#[test]
fn unstable_spectral_radius_needs_force() {
    let tmp = tempfile::tempdir().unwrap();
    let (c, err) = code(tmp.path(), &["--out", "d", "synth", "linear", "--spectral-radius", "1.2"]);
    assert_eq!(c, 2);
    assert!(err.contains("--force"), "{err}");
    ok(tmp.path(), &["--out", "d", "synth", "linear", "--spectral-radius", "1.2", "--force", "--n", "10"]);
}

#[test]
fn fit_on_noiseless_linear_data_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["--out", "d", "--seed", "7", "synth", "linear"]);
    ok(tmp.path(), &["--out", "d", "fit"]);
    for f in ["C.npy", "B.npy", "singular_values.npy", "report.json"] {
        assert!(tmp.path().join("d").join(f).exists(), "{f}");
    }
    let r = report(&tmp.path().join("d"));
    assert!(r["errors"]["relative_error"].as_f64().unwrap() < 1e-8);
    assert_eq!(r["basis"]["r"], 8);
    let c = load_matrix(tmp.path().join("d/C.npy")).unwrap();
    assert_eq!(c.shape(), (8, 8));
}

#[test]
fn lower_rank_fits_leave_a_larger_residual() {
    let tmp = tempfile::tempdir().unwrap();
    // Rank-3 trajectories lifted into 8 dimensions by a fixed map.
    let dynamics = LinearDynamics::from_spectrum(
        &[SpectrumBlock::Rotation { modulus: 0.97, angle: 0.3 }, SpectrumBlock::Real(0.8)],
        5,
        false,
    )
    .unwrap();
    let z = gen_linear(&dynamics, 12, 30, 0.0, 6).unwrap();
    let lift: Vec<[f64; 8]> = vec![
        [1.0, 0.5, -0.2, 0.0, 0.3, 0.1, -0.7, 0.2],
        [0.0, 1.0, 0.4, -0.6, 0.0, 0.2, 0.1, 0.5],
        [0.3, 0.0, 1.0, 0.2, -0.4, 0.6, 0.0, -0.1],
    ];
    let mut data = Vec::new();
    for s in 0..12 {
        for t in 0..30 {
            let zs = z.state(s, t);
            data.extend((0..8).map(|j| (0..3).map(|i| zs[i] * lift[i][j]).sum::<f64>()));
        }
    }
    write_dataset(&tmp.path().join("d"), &HiddenStateTensor::new(12, 30, 8, data).unwrap(), None);
    ok(tmp.path(), &["--out", "d", "--rank", "1", "fit"]);
    let r1 = report(&tmp.path().join("d"))["operator"]["fit_residual"].as_f64().unwrap();
    ok(tmp.path(), &["--out", "d", "--rank", "3", "fit"]);
    let r3 = report(&tmp.path().join("d"))["operator"]["fit_residual"].as_f64().unwrap();
    assert!(r1 > r3, "{r1} vs {r3}");
    assert!(r3 < 1e-8);
}

#[test]
fn missing_tensor_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["--out", "d", "synth", "linear", "--n", "5"]);
    fs::remove_file(tmp.path().join("d/states.npy")).unwrap();
    let (c, err) = code(tmp.path(), &["--out", "d", "fit"]);
    assert_eq!(c, 1);
    assert!(err.contains("states.npy"), "{err}");
}

#[test]
fn diagonal_half_horizon_and_epsilon_ratio() {
    let tmp = tempfile::tempdir().unwrap();
    spectrum_dataset(&tmp.path().join("d"), &[SpectrumBlock::Real(0.5), SpectrumBlock::Real(0.5)], 4, 12);
    ok(tmp.path(), &["--out", "d", "fit"]);
    ok(tmp.path(), &["--out", "d", "spectrum"]);
    let (header, rows) = read_csv(&tmp.path().join("d/spectrum.csv"));
    assert_eq!(header, ["index", "re", "im", "modulus", "horizon"]);
    let expected = 0.01f64.ln() / 0.5f64.ln();
    assert!((expected - 6.6439).abs() < 1e-4);
    for row in &rows {
        let horizon: f64 = row[4].parse().unwrap();
        assert!((horizon - expected).abs() < 1e-9, "{horizon}");
    }
    let horizon_at = |eps: &str| -> Vec<f64> {
        ok(tmp.path(), &["--out", "d", "--epsilon", eps, "spectrum"]);
        let r = report(&tmp.path().join("d"));
        assert_eq!(r["epsilon"].as_f64().unwrap(), eps.parse::<f64>().unwrap());
        r["spectrum"]
            .as_array()
            .unwrap()
            .iter()
            .map(|e| e["memory_horizon"].as_f64().unwrap())
            .collect()
    };
    let quarter = horizon_at("0.25");
    let half = horizon_at("0.5");
    for (a, b) in quarter.iter().zip(&half) {
        assert!((a / b - 2.0).abs() < 1e-12, "{a} / {b}");
    }
}

#[test]
fn counter_spectrum_and_positive_magnitudes() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["--out", "d", "--seed", "3", "synth", "counter"]);
    ok(tmp.path(), &["--out", "d", "fit"]);
    ok(tmp.path(), &["--out", "d", "spectrum"]);
    let (_, rows) = read_csv(&tmp.path().join("d/spectrum.csv"));
    assert!(rows[0][3].parse::<f64>().unwrap() >= 0.999);

    ok(tmp.path(), &["--out", "p", "--seed", "3", "synth", "counter", "--positive-only"]);
    ok(tmp.path(), &["--out", "p", "fit"]);
    ok(tmp.path(), &["--out", "p", "project", "--dominant", "1", "--magnitudes"]);
    let (header, rows) = read_csv(&tmp.path().join("p/magnitudes.csv"));
    assert_eq!(header.len(), 51);
    assert_eq!(rows.len(), 32);
    for row in rows {
        let m: Vec<f64> = row[1..].iter().map(|v| v.parse().unwrap()).collect();
        assert!(m.windows(2).all(|w| w[1] >= w[0]), "{m:?}");
    }
}

#[test]
fn full_mode_subspace_matches_the_basis_filter() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["--out", "d", "--seed", "2", "synth", "linear", "--noise", "0.05"]);
    ok(tmp.path(), &["--out", "d", "--rank", "5", "fit"]);
    ok(tmp.path(), &["--out", "d", "project", "--modes", "0,1,2,3,4", "--subspace"]);
    let d = tmp.path().join("d");
    let h = load_tensor(d.join("states.npy")).unwrap();
    let b = load_matrix(d.join("B.npy")).unwrap();
    let projected = load_tensor(d.join("projected.npy")).unwrap();
    assert_eq!(projected.shape(), h.shape());
    let (k, r) = b.shape();
    let mut worst = 0.0f64;
    for s in 0..h.samples() {
        for t in 0..h.timesteps() {
            let x = h.state(s, t);
            let coords: Vec<f64> = (0..r).map(|j| (0..k).map(|i| x[i] * b[(i, j)]).sum()).collect();
            for i in 0..k {
                let filtered: f64 = (0..r).map(|j| coords[j] * b[(i, j)]).sum();
                worst = worst.max((filtered - projected.state(s, t)[i]).abs());
            }
        }
    }
    assert!(worst < 1e-8, "{worst}");
    assert_eq!(load_matrix(d.join("projector.npy")).unwrap().shape(), (8, 8));
}

#[test]
fn open_conjugate_selection_suggests_the_completion() {
    let tmp = tempfile::tempdir().unwrap();
    spectrum_dataset(
        &tmp.path().join("d"),
        &[
            SpectrumBlock::Real(0.95),
            SpectrumBlock::Real(0.9),
            SpectrumBlock::Real(0.85),
            SpectrumBlock::Rotation { modulus: 0.8, angle: 0.7 },
            SpectrumBlock::Real(0.5),
        ],
        10,
        30,
    );
    ok(tmp.path(), &["--out", "d", "fit"]);
    let r = report(&tmp.path().join("d"));
    assert!(r["spectrum"][3]["lambda_im"].as_f64().unwrap().abs() > 0.1);
    let (c, err) = code(tmp.path(), &["--out", "d", "project", "--modes", "3", "--magnitudes"]);
    assert_eq!(c, 2);
    assert!(err.contains("3,4"), "{err}");
    ok(tmp.path(), &["--out", "d", "project", "--modes", "3,4", "--magnitudes"]);
}

#[test]
fn predict_reports_errors_and_agreement() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["--out", "lin", "--seed", "4", "synth", "linear"]);
    ok(tmp.path(), &["--out", "lin", "fit"]);
    ok(tmp.path(), &["--out", "lin", "predict", "--steps", "5"]);
    let r = report(&tmp.path().join("lin"));
    assert!(r["errors"]["relative_error"].as_f64().unwrap() < 1e-8);
    assert!(r["errors"]["separability_residual"].as_f64().unwrap() < 1e-8);
    let rollout = r["errors"]["rollout"].as_array().unwrap();
    assert_eq!(rollout.len(), 5);
    assert!(rollout.iter().all(|v| v.as_f64().unwrap() < 1e-8));
    assert!(r.get("agreement").is_none());
    assert_eq!(load_tensor(tmp.path().join("lin/predicted.npy")).unwrap().shape(), (16, 39, 8));

    ok(tmp.path(), &["--out", "ctr", "--seed", "3", "synth", "counter"]);
    ok(tmp.path(), &["--out", "ctr", "fit"]);
    ok(tmp.path(), &["--out", "ctr", "predict"]);
    let a = &report(&tmp.path().join("ctr"))["agreement"];
    assert!(a["fraction"].as_f64().unwrap() >= 0.95, "{a}");
    assert_eq!(a["total"], 32 * 49);
}

#[test]
fn silhouette_curves() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["--out", "far", "--seed", "1", "synth", "two-class"]);
    ok(tmp.path(), &["--out", "far", "--rank", "8", "fit"]);
    ok(tmp.path(), &["--out", "far", "silhouette", "--dim", "8"]);
    let s = &report(&tmp.path().join("far"))["silhouette"];
    let curve = |name: &str| -> Vec<f64> { s[name].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect() };
    let raw = curve("raw");
    assert_eq!(raw.len(), 20);
    assert!(*raw.last().unwrap() > 0.8);
    for (a, b) in raw.iter().zip(curve("pca_top")) {
        assert!((a - b).abs() < 1e-12);
    }
    let (header, rows) = read_csv(&tmp.path().join("far/silhouette.csv"));
    assert_eq!(header, ["step", "raw", "pca_top", "koopman_top"]);
    assert_eq!(rows.len(), 20);

    ok(tmp.path(), &["--out", "same", "--seed", "1", "synth", "two-class", "--separation", "0"]);
    ok(tmp.path(), &["--out", "same", "fit"]);
    ok(tmp.path(), &["--out", "same", "silhouette"]);
    let raw = report(&tmp.path().join("same"))["silhouette"]["raw"].clone();
    assert!(raw.as_array().unwrap().last().unwrap().as_f64().unwrap().abs() < 0.15);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["--out", "lin", "synth", "linear", "--n", "10"]);
    ok(dir, &["--out", "tc", "synth", "two-class", "--n", "6"]);
    ok(dir, &["--out", "tc", "fit"]);
    fs::create_dir_all(dir.join("one")).unwrap();
    for f in ["states.npy", "manifest.json"] {
        fs::copy(dir.join("tc").join(f), dir.join("one").join(f)).unwrap();
    }
    save_labels(&[0; 40], dir.join("one/labels.txt")).unwrap();
    ok(dir, &["--out", "one", "fit"]);
    fs::create_dir_all(dir.join("junk")).unwrap();
    fs::write(dir.join("junk/states.npy"), b"not an array").unwrap();
    fs::copy(dir.join("lin/manifest.json"), dir.join("junk/manifest.json")).unwrap();

    let cases: &[(&[&str], i32)] = &[
        (&["--out", "lin", "fit"], 0),
        (&["--out", "lin", "spectrum"], 0),
        (&["--out", "lin", "project", "--magnitudes"], 0),
        (&["--out", "lin", "predict"], 0),
        (&["--out", "lin", "report"], 0),
        (&["--out", "tc", "silhouette"], 0),
        (&["--version"], 0),
        (&["--help"], 0),
        (&["--out", "nowhere", "fit"], 1),
        (&["--out", "nowhere", "--manifest", "lin/manifest.json", "spectrum"], 1),
        (&["--out", "nowhere", "--manifest", "lin/manifest.json", "project", "--magnitudes"], 1),
        (&["--out", "nowhere", "--manifest", "lin/manifest.json", "predict"], 1),
        (&["--out", "nowhere", "--manifest", "tc/manifest.json", "silhouette"], 1),
        (&["--out", "nowhere", "report"], 1),
        (&["--out", "junk", "fit"], 1),
        (&[], 2),
        (&["frobnicate"], 2),
        (&["--out", "lin", "fit", "--bogus"], 2),
        (&["--out", "lin", "--epsilon", "0", "fit"], 2),
        (&["--out", "lin", "--epsilon", "1.5", "spectrum"], 2),
        (&["--out", "lin", "--rank", "0", "fit"], 2),
        (&["--out", "lin", "--rank", "9", "fit"], 2),
        (&["--out", "lin", "--basis", "qr", "fit"], 2),
        (&["--out", "lin", "project"], 2),
        (&["--out", "lin", "project", "--modes", "a,b", "--magnitudes"], 2),
        (&["--out", "lin", "project", "--modes", "99", "--magnitudes"], 2),
        (&["--out", "lin", "predict", "--steps", "0"], 2),
        (&["--out", "lin", "silhouette"], 2),
        (&["--out", "one", "silhouette"], 2),
        (&["--out", "tc", "silhouette", "--dim", "0"], 2),
        (&["--out", "x", "synth", "linear", "--k", "0"], 2),
        (&["--out", "x", "synth", "linear", "--noise", "-1"], 2),
        (&["--out", "x", "synth", "counter", "--k", "1"], 2),
        (&["--out", "x", "synth", "counter", "--decay", "1.5"], 2),
        (&["--out", "x", "synth", "counter", "--p-sentiment", "2"], 2),
        (&["--out", "x", "synth", "two-class", "--s", "1"], 2),
        (&["--out", "x", "synth", "gaussian"], 2),
    ];
    for (args, expected) in cases {
        let (c, err) = code(dir, args);
        assert_eq!(c, *expected, "{args:?}: {err}");
        if *expected != 0 {
            assert!(!err.trim().is_empty(), "{args:?} printed no message");
        }
    }
}

fn pipeline(dir: &Path) {
    let commands: &[&[&str]] = &[
        &["--out", "c", "--seed", "9", "synth", "counter", "--s", "16", "--len", "20"],
        &["--out", "c", "fit"],
        &["--out", "c", "spectrum"],
        &["--out", "c", "project", "--magnitudes", "--subspace"],
        &["--out", "c", "predict", "--steps", "3"],
        &["--out", "c", "silhouette"],
        &["--out", "c", "report"],
        &["--out", "l", "--seed", "9", "synth", "linear", "--noise", "0.1", "--n", "12"],
        &["--out", "l", "--basis", "pca", "fit"],
        &["--out", "l", "spectrum", "--dominant", "3"],
        &["--out", "l", "project", "--subspace", "--projector", "real"],
        &["--out", "l", "predict", "--steps", "4"],
        &["--out", "t", "--seed", "9", "synth", "two-class", "--n", "8"],
        &["--out", "t", "fit"],
        &["--out", "t", "silhouette", "--modulus-only"],
    ];
    let mut log = String::new();
    for args in commands {
        log.push_str(&ok(dir, args));
    }
    fs::write(dir.join("stdout.txt"), log).unwrap();
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert!(ta.len() > 30);
    assert_eq!(
        ta.iter().map(|f| &f.0).collect::<Vec<_>>(),
        tb.iter().map(|f| &f.0).collect::<Vec<_>>()
    );
    for ((name, x), (_, y)) in ta.iter().zip(&tb) {
        assert!(x == y, "{} differs", name.display());
    }
}

#[test]
fn every_report_validates_against_the_shipped_schema() {
    let tmp = tempfile::tempdir().unwrap();
    pipeline(tmp.path());
    let schema_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schema/report.schema.json");
    let schema: Value = serde_json::from_str(&fs::read_to_string(schema_path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    for dir in ["c", "l", "t"] {
        let text = fs::read_to_string(tmp.path().join(dir).join("report.json")).unwrap();
        let value: Value = serde_json::from_str(&text).unwrap();
        let errors: Vec<String> = validator.iter_errors(&value).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{dir}: {errors:?}");
        let again: Value = serde_json::from_str(&serde_json::to_string(&value).unwrap()).unwrap();
        assert_eq!(again, value, "{dir} does not round-trip");
    }
    let c = report(&tmp.path().join("c"));
    assert!(c["agreement"].is_object() && c["silhouette"].is_object());
    assert_eq!(report(&tmp.path().join("l"))["basis"]["method"], "pca-centered");
}

#[test]
fn schema_rejects_malformed_reports() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["--out", "d", "synth", "linear", "--n", "8"]);
    ok(tmp.path(), &["--out", "d", "fit"]);
    let path = tmp.path().join("d/report.json");
    let good = fs::read_to_string(&path).unwrap();
    let edits: [fn(&mut Value); 5] = [
        |v| v["spectrum"][0]["memory_horizon"] = "forever".into(),
        |v| v["basis"]["method"] = "qr".into(),
        |v| v["errors"]["relative_error"] = (-1.0).into(),
        |v| v["extra"] = 1.into(),
        |v| v.as_object_mut().unwrap().remove("dominant_modes").map(drop).unwrap(),
    ];
    for (i, edit) in edits.iter().enumerate() {
        let mut v: Value = serde_json::from_str(&good).unwrap();
        edit(&mut v);
        fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
        let (c, err) = code(tmp.path(), &["--out", "d", "report"]);
        assert_eq!(c, 1, "edit {i}");
        assert!(err.contains("not a valid report"), "edit {i}: {err}");
    }
}
