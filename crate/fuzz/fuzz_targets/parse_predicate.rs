#![no_main]

use burnscope::clinical::Predicate;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(p) = Predicate::parse(text) {
        let printed = p.to_string();
        assert_eq!(Predicate::parse(&printed).as_ref(), Ok(&p), "{printed}");
    }
});
