#![no_main]

use hmic::imagery::{build_instance_map, parse_annotations, CategoryDictionary};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(anns) = parse_annotations(text) else { return };
    let mut dict = CategoryDictionary::new();
    for id in 1..=256u16 {
        dict.insert(id, format!("c{id}")).unwrap();
    }
    let _ = build_instance_map(&anns, &dict, 48, 40);
});
