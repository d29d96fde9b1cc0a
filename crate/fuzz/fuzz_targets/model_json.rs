#![no_main]

use conformal_sets::io::{model_to_json, parse_model_json};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(model) = parse_model_json(text) {
        let json = model_to_json(&model).expect("serialize");
        assert_eq!(parse_model_json(&json).expect("re-parse"), model);
    }
});
