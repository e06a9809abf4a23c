#![no_main]

use libfuzzer_sys::fuzz_target;
use misc_observer::data::tokenize;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    for token in tokenize(&text) {
        assert!(!token.is_empty());
        assert!(!token.chars().any(char::is_whitespace));
    }
});
