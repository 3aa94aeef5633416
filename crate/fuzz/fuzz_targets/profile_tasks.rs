#![no_main]

use hmic::profile::{decode_tasks, GrayProfile};
use libfuzzer_sys::fuzz_target;

// Arbitrary 16-bit profiles: unpacking must reject or succeed, never panic.
fuzz_target!(|data: &[u8]| {
    let [w, rest @ ..] = data else { return };
    let w = *w as usize % 32 + 1;
    let values: Vec<u16> = rest.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
    let h = values.len() / w;
    if h == 0 {
        return;
    }
    if let Ok(p) = GrayProfile::new(w, h, values[..w * h].to_vec()) {
        let _ = decode_tasks(&p);
    }
});
