#![no_main]

use libfuzzer_sys::fuzz_target;
use sosd::io::config::parse_config;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(c) = parse_config(text) {
        assert_eq!(parse_config(&c.to_toml()).unwrap(), c);
    }
});
