#![no_main]

use std::io::Cursor;

use hmic::container::{decode, DecodeLevel, LayeredBitstream};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    for level in [DecodeLevel::Tasks, DecodeLevel::General, DecodeLevel::High] {
        let _ = LayeredBitstream::read_for_level(Cursor::new(data), level);
    }
    if let Ok(bits) = LayeredBitstream::from_bytes(data) {
        let _ = bits.stats();
        // the tasks level decodes stream1 without a model
        let _ = decode(&bits, DecodeLevel::Tasks, None);
    }
});
