use proptest::prelude::*;

use ctm_core::ctm::{Grouping, Partition};
use ctm_core::forward::{phi_adjoint, phi_apply, Dims, MaskSet, Measurement};
use ctm_core::gap::gap_project;
use ctm_core::io::{decode, encode, RunConfig, SctData, SctTensor};
use ctm_core::metrics::{psnr, ssim_frame};
use ctm_core::uncertainty::binarize_um;
use ctm_core::Tensor;

fn dims() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..7, 1usize..7, 1usize..5)
}

fn values(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, n)
}

fn capture_case() -> impl Strategy<Value = (Dims, Vec<f64>, Vec<f64>, Vec<f64>)> {
    dims().prop_flat_map(|(w, h, t)| {
        let n = w * h * t;
        (
            Just(Dims::new(w, h, t).unwrap()),
            values(n, 0.05, 1.0),
            values(n, -1.0, 1.0),
            values(w * h, -2.0, 2.0),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_round_trip(
        c in 1usize..4, t in 1usize..6, h in 1usize..7, w in 1usize..7,
        gt in 1usize..4, gs in 1usize..4, dilated in any::<bool>(),
    ) {
        let grouping = if dilated { Grouping::dilated(gs, gt) } else { Grouping::blocked(gs, gt) };
        let p = Partition::new(grouping, [c, t, h, w]).unwrap();
        let n = c * t * h * w;
        let data: Vec<f64> = (0..n).map(|i| i as f64 * 0.5 - 3.0).collect();
        let map = Tensor::from_vec(&[c, t, h, w], data.clone()).unwrap();
        let tokens = p.split(&map).unwrap();
        prop_assert_eq!(tokens.shape(), &[p.groups, p.tokens, c][..]);
        let merged = p.merge(&tokens).unwrap();
        prop_assert_eq!(merged.data(), &data[..]);
        prop_assert_eq!(p.valid.iter().filter(|&&v| v).count(), t * h * w);
    }

    #[test]
    fn projection_is_consistent_and_idempotent((d, m, v, y) in capture_case()) {
        let masks = MaskSet::from_values(d, m, 0).unwrap();
        let y = Measurement::new(d.width, d.height, y, 0.0, 0).unwrap();
        let x = gap_project(&v, &y, &masks).unwrap();
        let phi_x = phi_apply(&x, &masks).unwrap();
        for (a, b) in phi_x.iter().zip(&y.values) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
        let again = gap_project(&x, &y, &masks).unwrap();
        for (a, b) in again.iter().zip(&x) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn adjoint_identity((d, m, v, y) in capture_case()) {
        let masks = MaskSet::from_values(d, m, 0).unwrap();
        let lhs: f64 = phi_apply(&v, &masks).unwrap().iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = v.iter().zip(phi_adjoint(&y, &masks).unwrap()).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn binarization_is_scale_invariant(s in values(24, 1e-3, 10.0), k in -8i32..8) {
        let scale = 2f64.powi(k);
        let scaled: Vec<f64> = s.iter().map(|v| v * scale).collect();
        prop_assert_eq!(binarize_um(&s), binarize_um(&scaled));
    }

    #[test]
    fn softmax_rows_and_shift(v in values(12, -20.0, 20.0), shift in -50.0f64..50.0) {
        let x = Tensor::from_vec(&[3, 4], v.clone()).unwrap();
        let y = x.softmax_last().unwrap();
        for row in y.data().chunks(4) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        let shifted = x.add_scalar(shift).softmax_last().unwrap();
        for (a, b) in y.data().iter().zip(shifted.data()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn permute_round_trip(v in values(24, -1.0, 1.0)) {
        let x = Tensor::from_vec(&[2, 3, 4], v).unwrap();
        let back = x.permute(&[2, 0, 1]).unwrap().permute(&[1, 2, 0]).unwrap();
        prop_assert_eq!(back.data(), x.data());
        let r = x.reshape(&[6, 4]).unwrap().reshape(&[2, 3, 4]).unwrap();
        prop_assert_eq!(r.data(), x.data());
    }

    #[test]
    fn ssim_symmetric_and_bounded(a in values(144, 0.0, 1.0), b in values(144, 0.0, 1.0)) {
        let ab = ssim_frame(&a, &b, 12, 12).unwrap();
        let ba = ssim_frame(&b, &a, 12, 12).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert!((ssim_frame(&a, &a, 12, 12).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn psnr_decreases_with_noise(base in values(64, 0.0, 1.0), pattern in values(64, -1.0, 1.0)) {
        let mean = pattern.iter().sum::<f64>() / 64.0;
        prop_assume!(pattern.iter().any(|p| (p - mean).abs() > 1e-3));
        let mut last = f64::INFINITY;
        for amp in [0.01, 0.02, 0.05, 0.1, 0.2] {
            let noisy: Vec<f64> = base.iter().zip(&pattern).map(|(b, p)| b + amp * (p - mean)).collect();
            let v = psnr(&noisy, &base, 1.0).unwrap();
            prop_assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn sct_round_trip(
        f in values(6, -1e6, 1e6),
        g in prop::collection::vec(any::<f32>(), 0..9),
        u in prop::collection::vec(any::<u8>(), 0..9),
    ) {
        let records = vec![
            SctTensor::f64("f", &[2, 3], f),
            SctTensor { name: "g".into(), shape: vec![g.len()], data: SctData::F32(g) },
            SctTensor::u8("u", &[u.len(), 1], u),
        ];
        let bytes = encode(&records).unwrap();
        let back = decode(&bytes).unwrap();
        prop_assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn config_text_round_trip(
        phases in 1usize..6, um in 0usize..4, seed in any::<u64>(),
        lr in 1e-6f64..1.0, weight in 0.0f64..1.0, outer in 1usize..100,
    ) {
        let mut cfg = RunConfig::default();
        cfg.model.phases = phases;
        cfg.model.um_channels = um;
        cfg.model.ctm.seed = seed;
        cfg.train.unfold_lr = lr;
        cfg.gaptv.tv_weight = weight;
        cfg.gaptv.outer_iters = outer;
        prop_assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
}
