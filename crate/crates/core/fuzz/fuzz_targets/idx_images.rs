#![no_main]

use libfuzzer_sys::fuzz_target;
use mudhog::data::{decode_idx_images, encode_idx_images, maybe_gunzip};

fuzz_target!(|data: &[u8]| {
    let Ok(bytes) = maybe_gunzip(data) else {
        return;
    };
    if let Ok(images) = decode_idx_images(&bytes) {
        assert_eq!(
            images.pixels.len(),
            images.count * images.rows * images.cols
        );
        let encoded = encode_idx_images(&images);
        assert!(bytes.starts_with(&encoded));
    }
});
