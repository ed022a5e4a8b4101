#![no_main]

use burnscope::mapping::BurnMask;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(mask) = BurnMask::decode(data) {
        assert_eq!(mask.values.len(), mask.width * mask.height);
        assert!(mask.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }
});
