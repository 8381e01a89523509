#![no_main]

use libfuzzer_sys::fuzz_target;
use thr_core::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::from_text(text) {
        let back = RunConfig::from_text(&cfg.to_text()).expect("printed config parses");
        assert_eq!(back.to_text(), cfg.to_text());
    }
});
