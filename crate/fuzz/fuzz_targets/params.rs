#![no_main]

use libfuzzer_sys::fuzz_target;
use nbs_core::blocks::NbsParams;
use nbs_core::lnn::LagrangianNet;
use nbs_core::nets::{load_params, save_params};

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(p) = load_params::<NbsParams>(s) {
        assert_eq!(load_params::<NbsParams>(&save_params(&p)).expect("round-trip"), p);
    }
    if let Ok(net) = load_params::<LagrangianNet>(s) {
        assert_eq!(load_params::<LagrangianNet>(&save_params(&net)).expect("round-trip"), net);
    }
});
