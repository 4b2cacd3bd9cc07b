#![no_main]

use libfuzzer_sys::fuzz_target;
use sosd::io::trace::{format_row, parse_trace};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(records) = parse_trace(text) {
        for r in &records {
            let row = format_row(r);
            let again = parse_trace(&format!("{}\n{row}\n", sosd::io::trace::header())).unwrap();
            assert_eq!(format_row(&again[0]), row);
        }
    }
});
