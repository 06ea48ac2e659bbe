//! Replays the checked-in fuzz seeds through the same checks the fuzz targets make.

use std::path::PathBuf;

use desdis_core::data::PatchDataset;
use desdis_core::model::{Checkpoint, DescriptorNet};

fn seeds(target: &str) -> Vec<Vec<u8>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fuzz/corpus").join(target);
    let mut out: Vec<Vec<u8>> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| std::fs::read(e.unwrap().path()).unwrap())
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn dataset_seeds_round_trip() {
    for bytes in seeds("dataset_decode") {
        let ds = PatchDataset::decode(&bytes).unwrap();
        assert_eq!(ds.encode().unwrap(), bytes);
    }
}

#[test]
fn checkpoint_seeds_round_trip() {
    for bytes in seeds("checkpoint_decode") {
        let ck = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(ck.encode().unwrap(), bytes);
        // seeds are deliberately incomplete networks
        assert!(DescriptorNet::from_checkpoint(&ck).is_err());
    }
}

#[test]
fn truncated_seeds_are_rejected() {
    for bytes in seeds("dataset_decode") {
        assert!(PatchDataset::decode(&bytes[..bytes.len() - 1]).is_err());
    }
    for bytes in seeds("checkpoint_decode") {
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
    }
}
