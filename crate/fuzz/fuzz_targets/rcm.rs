#![no_main]

use conformal_sets::io::{decode_rcm, encode_rcm};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = decode_rcm(data, "fuzz") {
        let again = decode_rcm(&encode_rcm(&m), "fuzz").expect("re-decode");
        assert_eq!(again, m);
    }
});
