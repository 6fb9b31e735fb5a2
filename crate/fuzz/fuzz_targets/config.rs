#![no_main]

use libfuzzer_sys::fuzz_target;
use nbs_core::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::from_toml(s) {
        let again = RunConfig::from_toml(&cfg.to_toml()).expect("accepted config must round-trip");
        assert_eq!(again.to_toml(), cfg.to_toml());
    }
});
