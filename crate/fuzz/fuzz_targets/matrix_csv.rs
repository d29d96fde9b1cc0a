#![no_main]

use conformal_sets::io::{matrix_to_csv, parse_matrix_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = parse_matrix_csv(data, "fuzz") {
        // anything accepted must survive a write/read cycle unchanged
        let again = parse_matrix_csv(matrix_to_csv(&m).as_bytes(), "fuzz").expect("re-parse");
        assert_eq!(again, m);
    }
});
