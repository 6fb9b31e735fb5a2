#![no_main]

use libfuzzer_sys::fuzz_target;
use nbs_core::lnn::{read_dataset, write_dataset};

fuzz_target!(|data: &[u8]| {
    if let Ok(samples) = read_dataset(data) {
        if samples.is_empty() {
            return;
        }
        let mut buf = Vec::new();
        write_dataset(&mut buf, &samples).expect("accepted samples are writable");
        assert_eq!(read_dataset(buf.as_slice()).expect("round-trip"), samples);
    }
});
