#![no_main]

use burnscope::reconstruction::export::{parse_camera_set, write_camera_set};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(views) = parse_camera_set(text) {
        let again = parse_camera_set(&write_camera_set(&views)).expect("written camera set must parse");
        assert_eq!(again.len(), views.len());
    }
});
