#![no_main]

use libfuzzer_sys::fuzz_target;
use sosd::io::snapshot::{decode_snapshot, encode_snapshot};

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = decode_snapshot(data) {
        // anything accepted must re-encode to the same bytes
        assert_eq!(encode_snapshot(&m).unwrap(), data);
    }
});
