use std::f64::consts::PI;
use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use kann_core::harness::{
    build_counter_rnn, gen_linear, gen_token_streams, gen_two_class, HarnessError, LinearDynamics, SpectrumBlock,
    StreamConfig, TokenClass, Vocab,
};
use kann_core::state_io::{save_labels, save_matrix, save_tensor, save_vector, DatasetManifest, ReadoutKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::args::{CounterArgs, Generator, Global, LinearArgs, TwoClassArgs};
use crate::output::{header, write_csv};
use crate::usage;

const STATES_FILE: &str = "states.npy";
const LABELS_FILE: &str = "labels.txt";

pub fn run(global: &Global, generator: Generator) -> anyhow::Result<()> {
    match generator {
        Generator::Linear(a) => linear(global, &a),
        Generator::Counter(a) => counter(global, &a),
        Generator::TwoClass(a) => two_class(global, &a),
    }?;
    println!("seed {}", global.seed);
    Ok(())
}

fn check_sizes(sizes: &[(&str, usize, usize)]) -> anyhow::Result<()> {
    for &(name, value, min) in sizes {
        if value < min {
            return Err(usage(format!("--{name} must be at least {min}, got {value}")));
        }
    }
    Ok(())
}

fn check_noise(noise: f64) -> anyhow::Result<()> {
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(usage(format!("--noise must be non-negative, got {noise}")));
    }
    Ok(())
}

/// Random real eigenvalues and rotation pairs filling `k` dimensions, scaled
/// so the largest modulus equals `radius`.
fn random_spectrum(k: usize, radius: f64, seed: u64) -> Vec<SpectrumBlock> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut blocks = Vec::new();
    let mut left = k;
    while left > 0 {
        let modulus = r.random_range(0.3..1.0);
        if left >= 2 && r.random_bool(0.5) {
            blocks.push(SpectrumBlock::Rotation {
                modulus,
                angle: r.random_range(0.05..PI - 0.05),
            });
            left -= 2;
        } else {
            let sign = if r.random_bool(0.5) { 1.0 } else { -1.0 };
            blocks.push(SpectrumBlock::Real(sign * modulus));
            left -= 1;
        }
    }
    let largest = blocks
        .iter()
        .map(|b| match *b {
            SpectrumBlock::Real(v) => v.abs(),
            SpectrumBlock::Rotation { modulus, .. } => modulus,
        })
        .fold(0.0, f64::max);
    let scale = radius / largest;
    blocks
        .into_iter()
        .map(|b| match b {
            SpectrumBlock::Real(v) => SpectrumBlock::Real(v * scale),
            SpectrumBlock::Rotation { modulus, angle } => SpectrumBlock::Rotation {
                modulus: modulus * scale,
                angle,
            },
        })
        .collect()
}

fn dynamics(global: &Global, k: usize, radius: f64, force: bool) -> anyhow::Result<LinearDynamics> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(usage(format!("--spectral-radius must be positive, got {radius}")));
    }
    let blocks = random_spectrum(k, radius, global.seed);
    LinearDynamics::from_spectrum(&blocks, global.seed.wrapping_add(1), force).map_err(|e| match e {
        HarnessError::Unstable { radius, max } => usage(format!(
            "spectral radius {radius} exceeds {max}; pass --force to generate it anyway"
        )),
        other => other.into(),
    })
}

fn write_manifest(global: &Global, manifest: &DatasetManifest) -> anyhow::Result<()> {
    let path = global.out.join("manifest.json");
    let mut text = manifest.to_json_string();
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn plain_manifest(name: &str, labels: bool) -> DatasetManifest {
    DatasetManifest {
        name: name.into(),
        tensor_path: PathBuf::from(STATES_FILE),
        labels_path: labels.then(|| PathBuf::from(LABELS_FILE)),
        lengths_path: None,
        readout_path: None,
        readout_bias_path: None,
        readout_kind: None,
    }
}

fn linear(global: &Global, a: &LinearArgs) -> anyhow::Result<()> {
    check_sizes(&[("k", a.k, 1), ("s", a.s, 1), ("n", a.n, 2)])?;
    check_noise(a.noise)?;
    let dynamics = dynamics(global, a.k, a.spectral_radius, a.force)?;
    let h = gen_linear(&dynamics, a.s, a.n, a.noise, global.seed.wrapping_add(2))?;
    save_tensor(&h, global.out.join(STATES_FILE))?;
    save_matrix(dynamics.matrix(), global.out.join("A.npy"))?;
    write_manifest(global, &plain_manifest("synth-linear", false))?;
    global.note(format!("linear: {} samples x {} steps, spectral radius {}", a.s, a.n, dynamics.spectral_radius()));
    Ok(())
}

fn two_class(global: &Global, a: &TwoClassArgs) -> anyhow::Result<()> {
    check_sizes(&[("k", a.k, 1), ("s", a.s, 2), ("n", a.n, 2)])?;
    check_noise(a.noise)?;
    if !(a.separation.is_finite() && a.separation >= 0.0) {
        return Err(usage(format!("--separation must be non-negative, got {}", a.separation)));
    }
    let dynamics = dynamics(global, a.k, 0.9, false)?;
    let (h, labels) = gen_two_class(&dynamics, a.s, a.n, a.separation, a.noise, global.seed.wrapping_add(2))?;
    save_tensor(&h, global.out.join(STATES_FILE))?;
    save_labels(&labels, global.out.join(LABELS_FILE))?;
    save_matrix(dynamics.matrix(), global.out.join("A.npy"))?;
    write_manifest(global, &plain_manifest("synth-two-class", true))?;
    Ok(())
}

fn counter(global: &Global, a: &CounterArgs) -> anyhow::Result<()> {
    check_sizes(&[("k", a.k, 2), ("s", a.s, 1), ("len", a.len, 2)])?;
    let vocab = Vocab::default();
    let net = build_counter_rnn(a.k, a.decay, vocab, global.seed).map_err(|e| usage(e.to_string()))?;
    let streams: Vec<Vec<usize>> = if a.positive_only {
        (0..a.s)
            .map(|i| (0..a.len).map(|t| vocab.token(TokenClass::Positive, i + t)).collect())
            .collect()
    } else {
        let config = StreamConfig {
            p_sentiment: a.p_sentiment,
            class_bias: a.class_bias,
            evidence_steps: a.evidence_steps,
        };
        gen_token_streams(vocab, a.s, a.len, config, global.seed.wrapping_add(1)).map_err(|e| usage(e.to_string()))?
    };
    let h = net.run(&streams)?;
    let labels = net.final_labels(&h)?;
    save_tensor(&h, global.out.join(STATES_FILE))?;
    save_labels(&labels, global.out.join(LABELS_FILE))?;
    save_matrix(net.readout().weights(), global.out.join("readout_weights.npy"))?;
    save_vector(net.readout().bias(), global.out.join("readout_bias.npy"))?;
    let rows: Vec<Vec<String>> = streams
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.iter().enumerate().map(move |(t, tok)| vec![i.to_string(), t.to_string(), tok.to_string()]))
        .collect();
    write_csv(&global.out.join("tokens.csv"), &header(&["sample", "step", "token"]), &rows)?;
    let manifest = DatasetManifest {
        readout_path: Some("readout_weights.npy".into()),
        readout_bias_path: Some("readout_bias.npy".into()),
        readout_kind: Some(ReadoutKind::SigmoidBinary),
        ..plain_manifest("synth-counter", true)
    };
    write_manifest(global, &manifest)?;
    Ok(())
}
