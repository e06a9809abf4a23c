#![no_main]

use libfuzzer_sys::fuzz_target;
use misc_observer::embed::parse_static_vectors;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(vectors) = parse_static_vectors(text, "fuzz") {
            let mut widths = vectors.values().map(Vec::len);
            if let Some(w) = widths.next() {
                assert!(widths.all(|x| x == w));
            }
        }
    }
});
