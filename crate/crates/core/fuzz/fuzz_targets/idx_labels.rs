#![no_main]

use libfuzzer_sys::fuzz_target;
use mudhog::data::{decode_idx_labels, encode_idx_labels, maybe_gunzip};

fuzz_target!(|data: &[u8]| {
    let Ok(bytes) = maybe_gunzip(data) else {
        return;
    };
    if let Ok(labels) = decode_idx_labels(&bytes) {
        assert!(bytes.starts_with(&encode_idx_labels(&labels)));
    }
});
