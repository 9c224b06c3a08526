#![no_main]

use libfuzzer_sys::fuzz_target;
use orlext::YoungFunction;

fuzz_target!(|data: &str| {
    if let Ok(phi) = YoungFunction::parse(data, 2) {
        // Whatever parses must round-trip through its display form.
        let again = YoungFunction::parse(&phi.to_string(), 2).expect("display form parses");
        assert_eq!(phi, again);
        let _ = phi.eval(1.0);
    }
});
