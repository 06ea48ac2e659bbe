#![no_main]

use desdis_core::model::{Checkpoint, DescriptorNet};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = Checkpoint::decode(data) {
        assert_eq!(ck.encode().unwrap(), data);
        let _ = DescriptorNet::from_checkpoint(&ck);
    }
});
