#![no_main]

use std::io::Cursor;

use kann_core::state_io::npy::{parse_npy, read_npy};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let streamed = read_npy(&mut Cursor::new(data));
    let whole = parse_npy(data);
    assert_eq!(streamed.is_ok(), whole.is_ok());
});
