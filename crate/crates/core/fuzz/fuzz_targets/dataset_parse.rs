#![no_main]

use libfuzzer_sys::fuzz_target;
use thr_core::tasks::{dump_dataset, parse_dataset};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(qs) = parse_dataset(text, 7) {
        assert_eq!(parse_dataset(&dump_dataset(&qs), 7).unwrap(), qs);
    }
});
