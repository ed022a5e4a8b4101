#![no_main]

use burnscope::image::ImageBuffer;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = ImageBuffer::decode(data) {
        let back = ImageBuffer::decode(&img.encode_png()).expect("encoded PNG must decode");
        assert_eq!(back.pixels(), img.pixels());
    }
});
