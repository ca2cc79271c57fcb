use std::fs;

use kann_core::numerics::RealMatrix;
use kann_core::state_io::npy::parse_npy;
use kann_core::state_io::{
    flatten_valid, load_labels, load_matrix, load_tensor, save_labels, save_matrix, save_tensor, Dataset,
    DatasetManifest, HeaderField, HiddenStateTensor, NpyError, ReadoutHead, ReadoutKind, StateIoError,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Builds an npy 1.0 file by hand: magic, version, u16 header length, the
/// dict padded with spaces and a newline to a multiple of 64, then data.
fn handmade(magic: &[u8], version: (u8, u8), dict: &str, data: &[u8]) -> Vec<u8> {
    let mut header = dict.as_bytes().to_vec();
    while !(10 + header.len() + 1).is_multiple_of(64) {
        header.push(b' ');
    }
    header.push(b'\n');
    let mut out = magic.to_vec();
    out.extend([version.0, version.1]);
    out.extend((header.len() as u16).to_le_bytes());
    out.extend(header);
    out.extend(data);
    out
}

fn f8_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn malformed_corpus() -> Vec<(&'static str, Vec<u8>, HeaderField)> {
    let ok_dict = "{'descr': '<f8', 'fortran_order': False, 'shape': (1, 1, 2), }";
    let data = f8_bytes(&[1.0, 2.0]);
    vec![
        ("wrong magic", handmade(b"\x93NUMPX", (1, 0), ok_dict, &data), HeaderField::Magic),
        ("empty file", Vec::new(), HeaderField::Magic),
        ("version 2.0", handmade(b"\x93NUMPY", (2, 0), ok_dict, &data), HeaderField::Version),
        (
            "big-endian",
            handmade(b"\x93NUMPY", (1, 0), "{'descr': '>f8', 'fortran_order': False, 'shape': (1, 1, 2), }", &data),
            HeaderField::Descr,
        ),
        (
            "integer dtype",
            handmade(b"\x93NUMPY", (1, 0), "{'descr': '<i8', 'fortran_order': False, 'shape': (1, 1, 2), }", &data),
            HeaderField::Descr,
        ),
        (
            "fortran order",
            handmade(b"\x93NUMPY", (1, 0), "{'descr': '<f8', 'fortran_order': True, 'shape': (1, 1, 2), }", &data),
            HeaderField::FortranOrder,
        ),
        (
            "missing shape",
            handmade(b"\x93NUMPY", (1, 0), "{'descr': '<f8', 'fortran_order': False, }", &data),
            HeaderField::Shape,
        ),
        ("not a dict", handmade(b"\x93NUMPY", (1, 0), "descr <f8", &data), HeaderField::Dict),
        ("truncated data", handmade(b"\x93NUMPY", (1, 0), ok_dict, &data[..12]), HeaderField::Data),
    ]
}

fn random_tensor(seed: u64) -> HiddenStateTensor {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let (s, n, k) = (r.random_range(1..6), r.random_range(1..9), r.random_range(1..5));
    let data = (0..s * n * k)
        .map(|_| match r.random_range(0..10) {
            0 => 0.0,
            1 => -0.0,
            2 => f64::MIN_POSITIVE / 3.0,
            3 => f64::MAX,
            _ => r.random_range(-1e6..1e6),
        })
        .collect();
    HiddenStateTensor::new(s, n, k, data).unwrap()
}

#[test]
fn seeded_round_trips_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..100 {
        let t = random_tensor(seed);
        let a = dir.path().join("a.npy");
        let b = dir.path().join("b.npy");
        save_tensor(&t, &a).unwrap();
        let back = load_tensor(&a).unwrap();
        assert_eq!(back.shape(), t.shape());
        assert!(back.data().iter().zip(t.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        save_tensor(&back, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap(), "seed {seed}");
    }
}

#[test]
fn malformed_headers_name_their_field() {
    for (name, bytes, field) in malformed_corpus() {
        match parse_npy(&bytes) {
            Err(e @ NpyError::Format { .. }) => assert_eq!(e.field(), Some(field), "{name}: {e}"),
            other => panic!("{name}: expected a format error, got {other:?}"),
        }
    }
}

#[test]
fn handmade_header_is_accepted() {
    let bytes = handmade(
        b"\x93NUMPY",
        (1, 0),
        "{'descr': '<f8', 'fortran_order': False, 'shape': (2, 3, 4), }",
        &f8_bytes(&(0..24).map(f64::from).collect::<Vec<_>>()),
    );
    let array = parse_npy(&bytes).unwrap();
    assert_eq!(array.shape, vec![2, 3, 4]);
    assert_eq!(array.data[23], 23.0);
    let f4: Vec<u8> = [1.5f32, -2.25].iter().flat_map(|v| v.to_le_bytes()).collect();
    let widened = parse_npy(&handmade(b"\x93NUMPY", (1, 0), "{'descr': '<f4', 'fortran_order': False, 'shape': (2,), }", &f4)).unwrap();
    assert_eq!(widened.data, vec![1.5, -2.25]);
}

#[test]
fn non_finite_values_report_their_index() {
    let bytes = handmade(
        b"\x93NUMPY",
        (1, 0),
        "{'descr': '<f8', 'fortran_order': False, 'shape': (1, 2, 2), }",
        &f8_bytes(&[0.0, 1.0, f64::NAN, 2.0]),
    );
    match parse_npy(&bytes) {
        Err(NpyError::NonFinite { index }) => assert_eq!(index, vec![0, 1, 0]),
        other => panic!("expected a non-finite error, got {other:?}"),
    }
}

#[test]
fn loading_reports_rank_and_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.npy");
    save_matrix(&RealMatrix::identity(2), &path).unwrap();
    assert!(matches!(load_tensor(&path), Err(StateIoError::Rank { expected: 3, .. })));
    assert_eq!(load_matrix(&path).unwrap(), RealMatrix::identity(2));
    assert!(matches!(load_tensor(dir.path().join("missing.npy")), Err(StateIoError::Io { .. })));
    let t = HiddenStateTensor::new(1, 1, 1, vec![0.0]).unwrap();
    assert!(matches!(save_tensor(&t, dir.path().join("no/such/dir.npy")), Err(StateIoError::Io { .. })));
}

#[test]
fn manifest_loads_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let t = random_tensor(3);
    save_tensor(&t, dir.path().join("states.npy")).unwrap();
    let labels: Vec<usize> = (0..t.samples()).map(|i| i % 2).collect();
    save_labels(&labels, dir.path().join("labels.txt")).unwrap();
    let mut w = RealMatrix::zeros(t.hidden_dim(), 2);
    w[(0, 1)] = 1.0;
    save_matrix(&w, dir.path().join("w.npy")).unwrap();
    kann_core::state_io::save_vector(&[0.0, 0.5], dir.path().join("b.npy")).unwrap();
    let manifest = DatasetManifest {
        name: "demo".into(),
        tensor_path: "states.npy".into(),
        labels_path: Some("labels.txt".into()),
        lengths_path: None,
        readout_path: Some("w.npy".into()),
        readout_bias_path: Some("b.npy".into()),
        readout_kind: Some(ReadoutKind::ArgmaxClassifier),
    };
    let path = dir.path().join("manifest.json");
    fs::write(&path, manifest.to_json_string()).unwrap();
    let ds = Dataset::load(&path).unwrap();
    assert_eq!(ds.tensor, t);
    assert_eq!(ds.labels.as_deref(), Some(&labels[..]));
    assert_eq!(ds.readout.unwrap().categories(), 2);
    assert_eq!(load_labels(dir.path().join("labels.txt")).unwrap(), labels);

    fs::write(&path, r#"{"name": "x", "tensor_path": "states.npy", "extra": 1}"#).unwrap();
    assert!(Dataset::load(&path).is_err());
    fs::write(&path, r#"{"name": "x", "tensor_path": "gone.npy"}"#).unwrap();
    assert!(Dataset::load(&path).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flatten_pairs_only_valid_steps(seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (s, n, k) = (r.random_range(1..5), r.random_range(2..8), r.random_range(1..4));
        let lengths: Vec<usize> = (0..s).map(|_| r.random_range(2..=n)).collect();
        // Valid entries are positive, padding negative, so any straddling pair shows up.
        let mut data = Vec::new();
        for &len in &lengths {
            for t in 0..n {
                for _ in 0..k {
                    data.push(if t < len { r.random_range(1.0..2.0) } else { -1.0 });
                }
            }
        }
        let t = HiddenStateTensor::new(s, n, k, data).unwrap().with_lengths(&lengths).unwrap();
        let (x, y) = flatten_valid(&t).unwrap();
        prop_assert_eq!(x.rows(), lengths.iter().map(|l| l - 1).sum::<usize>());
        prop_assert!(x.as_slice().iter().chain(y.as_slice()).all(|&v| v > 0.0));
    }

    #[test]
    fn readout_commutes_with_row_permutation(seed in any::<u64>(), sigmoid in any::<bool>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (rows, k) = (r.random_range(1..10), r.random_range(1..5));
        let c = if sigmoid { 1 } else { r.random_range(1..4) };
        let kind = if sigmoid { ReadoutKind::SigmoidBinary } else { ReadoutKind::ArgmaxClassifier };
        let w = RealMatrix::new(k, c, (0..k * c).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
        let head = ReadoutHead::new(w, (0..c).map(|_| r.random_range(-1.0..1.0)).collect(), kind).unwrap();
        let states = RealMatrix::new(rows, k, (0..rows * k).map(|_| r.random_range(-3.0..3.0)).collect()).unwrap();
        let mut order: Vec<usize> = (0..rows).collect();
        order.reverse();
        order.rotate_left(r.random_range(0..rows));
        let permuted = states.select_rows(&order);
        let (logits, cats) = head.apply(&states).unwrap();
        let (plogits, pcats) = head.apply(&permuted).unwrap();
        for (i, &o) in order.iter().enumerate() {
            prop_assert_eq!(pcats[i], cats[o]);
            prop_assert_eq!(plogits.row(i), logits.row(o));
        }
    }
}
