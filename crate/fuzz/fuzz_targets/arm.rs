#![no_main]

use libfuzzer_sys::fuzz_target;
use nbs_core::plants::PlanarArm;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(arm) = PlanarArm::from_toml(s) {
        assert_eq!(PlanarArm::from_toml(&arm.to_toml()).expect("round-trip"), arm);
    }
});
