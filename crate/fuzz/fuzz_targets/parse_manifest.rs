#![no_main]

use burnscope::store::parse_manifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(session) = parse_manifest(data) {
        // Whatever parses must survive a serde round trip unchanged.
        let json = serde_json::to_vec(&session).unwrap();
        let back: burnscope::store::AssessmentSession = serde_json::from_slice(&json).unwrap();
        assert_eq!(back, session);
    }
});
