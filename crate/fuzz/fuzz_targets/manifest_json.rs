#![no_main]

use kann_core::state_io::DatasetManifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(manifest) = DatasetManifest::from_json_str(text) {
        let again = DatasetManifest::from_json_str(&manifest.to_json_string()).expect("re-parse");
        assert_eq!(again, manifest);
    }
});
