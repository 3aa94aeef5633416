#![no_main]

use hmic::imagery::CategoryDictionary;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(dict) = CategoryDictionary::parse(text) {
        let again = CategoryDictionary::parse(&dict.to_tsv()).unwrap();
        assert_eq!(again.len(), dict.len());
    }
});
