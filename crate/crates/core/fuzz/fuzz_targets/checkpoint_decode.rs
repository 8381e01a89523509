#![no_main]

use libfuzzer_sys::fuzz_target;
use thr_core::checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(params) = checkpoint::decode(data) {
        // Anything accepted must re-encode to a stable byte string.
        let bytes = checkpoint::encode(&params);
        let again = checkpoint::decode(&bytes).expect("encoded checkpoint decodes");
        assert_eq!(checkpoint::encode(&again), bytes);
    }
});
