#![no_main]

use libfuzzer_sys::fuzz_target;
use nbs_core::harness::MetricsReport;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    let _ = MetricsReport::from_json(s);
});
