#![no_main]

use desdis_core::data::PatchDataset;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = PatchDataset::decode(data) {
        // anything accepted must re-encode to the same bytes
        assert_eq!(ds.encode().unwrap(), data);
    }
});
