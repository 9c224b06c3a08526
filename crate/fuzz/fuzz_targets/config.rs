#![no_main]

use libfuzzer_sys::fuzz_target;
use orlext::probes::ExperimentConfig;

fuzz_target!(|data: &str| {
    if let Ok(mut cfg) = ExperimentConfig::parse(data) {
        let _ = cfg.verb();
        let _ = cfg.set_pair("seed=1");
    }
});
