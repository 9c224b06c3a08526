#![no_main]

use libfuzzer_sys::fuzz_target;
use orlext::geometry::DomainGrid;

// A small cap keeps hostile headers from allocating.
fuzz_target!(|data: &[u8]| {
    let _ = DomainGrid::read_from(data, 1 << 16);
});
