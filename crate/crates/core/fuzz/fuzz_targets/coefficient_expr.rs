#![no_main]

use blochgap::symbols::parse_coefficient;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(src) = std::str::from_utf8(data) {
        if let Ok(p) = parse_coefficient(src) {
            assert!(p.degree() <= 2);
            let _ = p.eval(&[0.5, -0.25, 1.0]);
        }
    }
});
