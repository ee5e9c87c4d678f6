#![no_main]

use blochgap::manifest::parse_eps_rule;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(src) = std::str::from_utf8(data) {
        if let Ok(rule) = parse_eps_rule(src) {
            let v = rule.eval(0.1);
            assert!(v >= 0.0 || v.is_nan());
        }
    }
});
