#![no_main]

use hmic::networks::Model;
use hmic::tensor::checkpoint::Checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = Checkpoint::from_bytes(data) {
        assert_eq!(Checkpoint::from_bytes(&ck.to_bytes()).unwrap().to_bytes(), ck.to_bytes());
        let _ = Model::<f32>::from_checkpoint(&ck);
    }
});
