//! On-disk format against a committed golden file.

use proptest::prelude::*;
use spcl_core::checkpoint::{self, from_bytes, to_bytes};
use spcl_core::{ParamSet, Tensor};

const GOLDEN: &[u8] = include_bytes!("data/golden_v1.spcl");

fn golden_params() -> ParamSet<f32> {
    let mut p = ParamSet::new();
    p.insert("weight", Tensor::new(vec![2, 2], vec![0.25, 1.5, -3.0, 1e-3]).unwrap());
    p.insert("bias", Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
    p.insert("scale", Tensor::scalar(7.0));
    p
}

fn bits(p: &ParamSet<f32>) -> Vec<(String, Vec<usize>, Vec<u32>)> {
    p.iter().map(|(n, t)| (n.clone(), t.shape().to_vec(), t.data().iter().map(|x| x.to_bits()).collect())).collect()
}

#[test]
fn golden_file_is_little_endian() {
    assert_eq!(&GOLDEN[..4], b"SPCL");
    assert_eq!(&GOLDEN[4..8], &[1, 0, 0, 0]);
    assert_eq!(GOLDEN.len(), 400);
    // payload starts at 256: bias = [1.0, -2.0, 0.5]
    assert_eq!(&GOLDEN[256..268], &[0, 0, 0x80, 0x3f, 0, 0, 0, 0xc0, 0, 0, 0, 0x3f]);
    // scale = 7.0 at +64, weight[0] = 0.25 at +128
    assert_eq!(&GOLDEN[320..324], &[0, 0, 0xe0, 0x40]);
    assert_eq!(&GOLDEN[384..388], &[0, 0, 0x80, 0x3e]);
}

#[test]
fn golden_file_reads_and_writes_identically() {
    assert_eq!(bits(&from_bytes(GOLDEN).unwrap()), bits(&golden_params()));
    assert_eq!(to_bytes(&golden_params()), GOLDEN);
}

#[test]
fn save_and_load_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.spcl");
    checkpoint::save(&golden_params(), &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), GOLDEN);
    assert_eq!(bits(&checkpoint::load(&path).unwrap()), bits(&golden_params()));
}

#[test]
fn every_truncation_is_rejected() {
    for len in 0..GOLDEN.len() {
        assert!(from_bytes(&GOLDEN[..len]).is_err(), "prefix of {len} bytes accepted");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn arbitrary_bit_patterns_round_trip(
        tensors in prop::collection::btree_map(
            "[a-z][a-z0-9_.]{0,12}",
            prop::collection::vec(1usize..5, 0..4).prop_flat_map(|shape| {
                let n: usize = shape.iter().product();
                (Just(shape), prop::collection::vec(any::<u32>(), n.max(1)))
            }),
            1..6,
        )
    ) {
        let p: ParamSet<f32> = tensors
            .into_iter()
            .map(|(name, (shape, raw))| {
                (name, Tensor::new(shape, raw.into_iter().map(f32::from_bits).collect()).unwrap())
            })
            .collect();
        let bytes = to_bytes(&p);
        prop_assert_eq!(bits(&from_bytes(&bytes).unwrap()), bits(&p));
        prop_assert_eq!(to_bytes(&from_bytes(&bytes).unwrap()), bytes);
    }
}
