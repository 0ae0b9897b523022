//! Property tests over the bit-level plumbing and the KL algebra.

use proptest::prelude::*;

use drc_core::bitstream::{BitReader, BitWriter};
use drc_core::explicit::{latent_decode, latent_encode};
use drc_core::gaussian::{kl_bits, DiagonalGaussian};
use drc_core::rcc::{decode_index, encode_index};
use drc_core::Grid;

proptest! {
    #[test]
    fn bit_writer_reader_round_trip(ops in prop::collection::vec((any::<u64>(), 1u32..=64), 1..200)) {
        let mut w = BitWriter::new();
        for &(v, k) in &ops {
            w.write_bits(v, k);
        }
        let expect: u64 = ops.iter().map(|&(_, k)| k as u64).sum();
        prop_assert_eq!(w.len_bits(), expect);
        let bytes = w.into_bytes();
        let mut r = BitReader::new(&bytes);
        for &(v, k) in &ops {
            let mask = if k == 64 { u64::MAX } else { (1u64 << k) - 1 };
            prop_assert_eq!(r.read_bits(k).unwrap(), v & mask);
        }
        r.expect_zero_to_end().unwrap();
    }

    #[test]
    fn index_code_round_trip(ns in prop::collection::vec(1u64..=u64::MAX / 2, 1..100), hint in 0.0f64..64.0) {
        let mut w = BitWriter::new();
        for &n in &ns {
            encode_index(n, hint, &mut w).unwrap();
        }
        let bytes = w.into_bytes();
        let mut r = BitReader::new(&bytes);
        for &n in &ns {
            prop_assert_eq!(decode_index(&mut r, hint).unwrap(), n);
        }
    }

    #[test]
    fn latent_coder_lossless(
        values in prop::collection::vec(-100.0f64..100.0, 1..200),
        delta in 0.05f64..4.0,
    ) {
        let cols = values.len();
        let y = Grid::new(1, cols, values).unwrap();
        let mut w = BitWriter::new();
        let (quant, _) = latent_encode(&y, delta, &mut w).unwrap();
        let bytes = w.into_bytes();
        let mut r = BitReader::new(&bytes);
        let back = latent_decode(&mut r).unwrap();
        prop_assert_eq!(back, quant);
    }

    #[test]
    fn kl_nonnegative_and_zero_iff_equal(
        mean_q in prop::collection::vec(-5.0f64..5.0, 1..24),
        spread in prop::collection::vec(0.1f64..4.0, 1..24),
        shift in prop::collection::vec(-3.0f64..3.0, 1..24),
    ) {
        let d = mean_q.len().min(spread.len()).min(shift.len());
        let q = DiagonalGaussian::new(mean_q[..d].to_vec(), spread[..d].to_vec()).unwrap();
        let p_mean: Vec<f64> = (0..d).map(|i| mean_q[i] + shift[i]).collect();
        let p = DiagonalGaussian::new(p_mean, vec![1.0; d]).unwrap();
        let kl = kl_bits(&q, &p).unwrap();
        prop_assert!(kl >= -1e-12);
        prop_assert!(kl_bits(&q, &q).unwrap().abs() <= 1e-12);
        // Equality detection: a zero KL forces matching moments.
        if kl < 1e-12 {
            for i in 0..d {
                prop_assert!((q.mean()[i] - p.mean()[i]).abs() < 1e-5);
                prop_assert!((q.variance()[i] - p.variance()[i]).abs() < 1e-5);
            }
        }
    }
}
