#![no_main]

use conformal_sets::io::{parse_sets, sets_to_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(sets) = parse_sets(text, "fuzz") {
        assert_eq!(parse_sets(&sets_to_csv(&sets), "fuzz").expect("re-parse"), sets);
    }
});
