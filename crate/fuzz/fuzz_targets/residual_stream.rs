#![no_main]

use hmic::residual::decode_residual;
use libfuzzer_sys::fuzz_target;

// The first two bytes pick the plane size; the residual stream does not carry
// its own dimensions.
fuzz_target!(|data: &[u8]| {
    let [w, h, rest @ ..] = data else { return };
    let _ = decode_residual(rest, *w as usize % 64 + 1, *h as usize % 64 + 1);
});
