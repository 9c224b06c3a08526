#![no_main]

use libfuzzer_sys::fuzz_target;
use orlext::geometry::DomainSpec;

fuzz_target!(|data: &str| {
    if let Ok(spec) = data.parse::<DomainSpec>() {
        let _ = spec.diam();
        let _ = spec.contains(0.1, 0.1);
    }
});
