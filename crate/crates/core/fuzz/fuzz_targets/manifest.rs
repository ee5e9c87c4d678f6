#![no_main]

use blochgap::manifest::ExperimentManifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(src) = std::str::from_utf8(data) {
        if let Ok(m) = ExperimentManifest::parse(src) {
            // a manifest that validates must also build its configs
            let _ = m.operator();
            let _ = m.resonance_config();
            let _ = m.xisearch_config();
        }
    }
});
