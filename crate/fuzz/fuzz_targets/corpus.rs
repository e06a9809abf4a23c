#![no_main]

use libfuzzer_sys::fuzz_target;
use misc_observer::data::parse_corpus;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(sessions) = parse_corpus(text, "fuzz") {
        let mut again = String::new();
        for s in &sessions {
            again.push_str(&serde_json::to_string(s).unwrap());
            again.push('\n');
        }
        assert_eq!(parse_corpus(&again, "fuzz").unwrap(), sessions);
    }
});
