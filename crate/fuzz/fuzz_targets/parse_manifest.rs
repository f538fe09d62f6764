#![no_main]

use libfuzzer_sys::fuzz_target;
use std::path::Path;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let paths = mbcrnet::data::parse_manifest(text, Path::new("/base"));
        // Comments and blanks never survive; everything else resolves.
        assert!(paths.iter().all(|p| p.is_absolute()));
    }
});
