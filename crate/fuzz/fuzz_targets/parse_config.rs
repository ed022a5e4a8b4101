#![no_main]

use burnscope_service::config::parse_config;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(config) = parse_config(text) {
            config.validate().expect("parsed config must validate");
        }
    }
});
