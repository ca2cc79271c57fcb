#![no_main]

use kann_core::spectral::parse_mode_list;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(modes) = parse_mode_list(text) {
        let joined = modes.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        assert_eq!(parse_mode_list(&joined).expect("re-parse"), modes);
    }
});
