#![no_main]

use hmic::lossless::{compress_plane, decode_plane_bytes};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(plane) = decode_plane_bytes(data) {
        // the encoder is deterministic, so re-encoding a decoded plane
        // must reproduce it
        let again = decode_plane_bytes(&compress_plane(&plane).into_bytes()).unwrap();
        assert_eq!(again, plane);
    }
});
