#![no_main]

use kann_core::state_io::npy::parse_npy;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(array) = parse_npy(data) {
        assert_eq!(array.shape.iter().product::<usize>(), array.data.len());
        assert!(array.data.iter().all(|v| v.is_finite()));
    }
});
