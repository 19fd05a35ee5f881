use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smfnet_core::augment::{augment, hflip, AugmentConfig};
use smfnet_core::fixture::{render, FixtureSpec};
use smfnet_core::metrics::{f_beta_max, f_curve, mae, s_measure};
use smfnet_core::psf::pseudo_gt;
use smfnet_core::{SaliencyMap, Tensor};

const N: usize = 8;

fn map() -> impl Strategy<Value = Tensor> {
    prop::collection::vec(0.0f64..=1.0, N * N).prop_map(|v| Tensor::from_fn([1, N, N], |_, y, x| v[y * N + x]))
}

fn binary() -> impl Strategy<Value = Tensor> {
    prop::collection::vec(any::<bool>(), N * N)
        .prop_map(|v| Tensor::from_fn([1, N, N], |_, y, x| v[y * N + x] as u8 as f64))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn metrics_stay_in_unit_range(p in map(), gt in binary()) {
        let pred = SaliencyMap::new(p).unwrap();
        for v in [mae(&pred, &gt).unwrap(), f_beta_max(&pred, &gt).unwrap(), s_measure(&pred, &gt).unwrap()] {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v), "{v}");
        }
        let curve = f_curve(&pred, &gt).unwrap();
        prop_assert!(curve.iter().all(|f| (0.0..=1.0 + 1e-12).contains(f)));
    }

    #[test]
    fn complement_prediction_is_worst(gt in binary()) {
        prop_assume!(gt.sum() > 0.0 && gt.sum() < (N * N) as f64);
        let inverse = SaliencyMap::new(gt.map(|g| 1.0 - g)).unwrap();
        prop_assert_eq!(mae(&inverse, &gt).unwrap(), 1.0);
        prop_assert_eq!(f_beta_max(&inverse, &gt).unwrap(), 0.0);
    }

    #[test]
    fn mae_is_symmetric_in_the_binary_case(a in binary(), b in binary()) {
        let ab = mae(&SaliencyMap::new(a.clone()).unwrap(), &b).unwrap();
        let ba = mae(&SaliencyMap::new(b).unwrap(), &a).unwrap();
        prop_assert_eq!(ab, ba);
    }

    #[test]
    fn pseudo_gt_is_binary_and_partitioned(s_f in map(), s_d in map(), gt in binary()) {
        let out = pseudo_gt(&s_f, &s_d, &gt).unwrap();
        prop_assert!(out.pgt.is_binary());
        for j in 0..N * N {
            let (s, ns, g) = (out.salient.data()[j], out.non_salient.data()[j], gt.data()[j]);
            prop_assert!(s * ns == 0.0);
            prop_assert!(s <= g && ns <= 1.0 - g);
        }
        // swapping the two maps swaps which side wins, ties stay at zero
        let swapped = pseudo_gt(&s_d, &s_f, &gt).unwrap();
        for j in 0..N * N {
            if s_f.data()[j] == s_d.data()[j] {
                prop_assert_eq!(out.pgt.data()[j], 0.0);
                prop_assert_eq!(swapped.pgt.data()[j], 0.0);
            }
        }
    }

    #[test]
    fn hflip_is_an_involution(t in map()) {
        prop_assert_eq!(hflip(&hflip(&t)), t);
    }

    #[test]
    fn augmentation_keeps_samples_valid(seed in any::<u64>()) {
        let spec = FixtureSpec { frames: 1, height: 32, width: 32, ..FixtureSpec::default() };
        let sample = render(&spec, 3).unwrap().remove(0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = augment(&sample, &AugmentConfig::default(), &mut rng).unwrap();
        out.validate().unwrap();
        prop_assert_eq!(out.gt.shape(), sample.gt.shape());
        prop_assert_eq!(&out.sequence_id, &sample.sequence_id);
    }
}

#[test]
fn fixture_rendering_is_seed_determined() {
    let spec = FixtureSpec::default();
    assert_eq!(render(&spec, 5).unwrap(), render(&spec, 5).unwrap());
    assert_ne!(render(&spec, 5).unwrap(), render(&spec, 6).unwrap());
}
