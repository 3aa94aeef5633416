#![no_main]

use hmic::imagery::decode_pgm16;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = decode_pgm16(data);
});
