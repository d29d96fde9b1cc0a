#![no_main]

use conformal_sets::io::{labels_to_text, parse_labels};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(labels) = parse_labels(text, "fuzz") {
        assert_eq!(
            parse_labels(&labels_to_text(&labels), "fuzz").expect("re-parse"),
            labels
        );
    }
});
