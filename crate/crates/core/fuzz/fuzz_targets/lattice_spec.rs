#![no_main]

use blochgap::manifest::parse_lattice_spec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Some((&d, rest)) = data.split_first() {
        if let Ok(src) = std::str::from_utf8(rest) {
            let _ = parse_lattice_spec(src, 1 + (d % 3) as usize);
        }
    }
});
