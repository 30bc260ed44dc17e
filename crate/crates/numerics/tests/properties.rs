use eqsae_numerics::{conv2d, conv_transpose2d, io, linear, topk, ConvParams, Error, Tensor};
use proptest::prelude::*;

fn tensor_strategy(dims: Vec<usize>) -> impl Strategy<Value = Tensor<f64>> {
    let n: usize = dims.iter().product();
    prop::collection::vec(-1.0f64..1.0, n).prop_map(move |d| Tensor::new(dims.clone(), d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn topk_never_keeps_more_than_k(row in prop::collection::vec(-3.0f64..3.0, 1..40), k_frac in 0.0f64..1.0) {
        let n = row.len();
        let k = 1 + ((n - 1) as f64 * k_frac) as usize;
        let nonzero_in = row.iter().filter(|v| **v != 0.0).count();
        let z = Tensor::new(vec![1, n], row).unwrap();
        let out = topk(&z, k).unwrap();
        let nnz = out.data().iter().filter(|v| **v != 0.0).count();
        prop_assert!(nnz <= k);
        if nonzero_in >= n {
            prop_assert_eq!(nnz, k);
        }
        // kept entries are never smaller than dropped ones
        let kept_min = out.data().iter().zip(z.data()).filter(|(o, _)| **o != 0.0).map(|(_, v)| *v).fold(f64::INFINITY, f64::min);
        let dropped_max = out.data().iter().zip(z.data()).filter(|(o, _)| **o == 0.0).map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
        if nnz == k && k < n {
            prop_assert!(kept_min >= dropped_max);
        }
    }

    #[test]
    fn conv_adjoint_identity(
        (ci, co, k, s, p, h) in (1usize..3, 1usize..4, 1usize..4, 1usize..3, 0usize..2, 4usize..9),
        seed in any::<u64>(),
    ) {
        prop_assume!(p < k);
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::from_fn(&[2, ci, h, h], |_| rng.gen_range(-1.0..1.0));
        let ker = Tensor::<f64>::from_fn(&[co, ci, k, k], |_| rng.gen_range(-1.0..1.0));
        let cx = conv2d(&x, &ker, None, ConvParams::new(s, p)).unwrap();
        let g = cx.dims()[2];
        let out_pad = h - ((g - 1) * s + k - 2 * p);
        prop_assume!(out_pad < s || (s == 1 && out_pad == 0));
        let y = Tensor::<f64>::from_fn(cx.dims(), |_| rng.gen_range(-1.0..1.0));
        let cty = conv_transpose2d(&y, &ker, None, ConvParams::with_out_pad(s, p, out_pad)).unwrap();
        let (lhs, rhs) = (cx.dot(&y), x.dot(&cty));
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1e-300));
    }

    #[test]
    fn kernels_are_deterministic(x in tensor_strategy(vec![3, 7]), w in tensor_strategy(vec![5, 7])) {
        prop_assert_eq!(linear(&x, &w, None).unwrap(), linear(&x, &w, None).unwrap());
        let xf = x.convert::<f32>();
        let wf = w.convert::<f32>();
        let a = linear(&xf, &wf, None).unwrap();
        let b = linear(&xf, &wf, None).unwrap();
        prop_assert!(a.data().iter().zip(b.data()).all(|(u, v)| u.to_bits() == v.to_bits()));
    }

    #[test]
    fn etns_round_trip(dims in prop::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let t32 = Tensor::<f32>::from_fn(&dims, |_| rng.gen_range(-1e3..1e3));
        prop_assert_eq!(io::decode::<f32>(&io::encode(&t32)).unwrap(), t32.clone());
        let t64 = t32.convert::<f64>();
        prop_assert_eq!(io::decode::<f64>(&io::encode(&t64)).unwrap(), t64);
    }
}

#[test]
fn etns_layout_is_bit_exact() {
    let t = Tensor::<f32>::new(vec![2, 1], vec![1.0, -2.5]).unwrap();
    let bytes = io::encode(&t);
    let mut expect = b"ETNS".to_vec();
    expect.extend_from_slice(&[1, 0, 2]);
    expect.extend_from_slice(&2u64.to_le_bytes());
    expect.extend_from_slice(&1u64.to_le_bytes());
    expect.extend_from_slice(&1.0f32.to_le_bytes());
    expect.extend_from_slice(&(-2.5f32).to_le_bytes());
    assert_eq!(bytes, expect);
}

#[test]
fn etns_rejects_precision_mismatch_and_garbage() {
    let bytes = io::encode(&Tensor::<f64>::zeros(&[3]));
    assert!(matches!(io::decode::<f32>(&bytes), Err(Error::PrecisionMismatch { .. })));
    assert!(matches!(io::decode::<f64>(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
    assert!(matches!(io::decode::<f64>(b"NOPE\x01\x01\x00"), Err(Error::Format(_))));
}

#[test]
fn tensor_invariants() {
    assert!(Tensor::<f32>::new(vec![2, 2], vec![0.0; 3]).is_err());
    assert!(Tensor::<f32>::new(vec![0, 2], vec![]).is_err());
    let t = Tensor::<f32>::new(vec![1], vec![f32::NAN]).unwrap();
    assert!(matches!(t.check_finite("probe"), Err(Error::NonFinite(_))));
}
