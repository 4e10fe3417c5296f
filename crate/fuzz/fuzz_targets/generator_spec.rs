#![no_main]

use comorbscan::synthgen::GeneratorSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else {
        return;
    };
    // Parsing includes validation; accepted specs must be runnable, but
    // running one here would make throughput depend on population_size.
    let _ = GeneratorSpec::from_toml(s);
});
