use num_complex::{Complex32, Complex64};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use somamba::diagnostics::{outer_band_leakage, psnr, ssim, SsimParams};
use somamba::field::{fft2c, ifft2c, ComplexField, FeatureMap};
use somamba::fieldio::{FieldFile, Payload};
use somamba::forward::{data_consistency, forward, ForwardConfig};
use somamba::router::{binomial_project, carrier_project, route, RouterWeights};
use somamba::sampling::{generate_mask, MaskKind, MaskSpec};
use somamba::ssm::{random_scan_problem, selective_scan_chunked, SsmConfig, TokenSeq};

fn field(h: usize, w: usize, seed: u64) -> ComplexField {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    ComplexField::from_fn(h, w, |_, _| Complex64::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0))).unwrap()
}

fn features(c: usize, h: usize, w: usize, seed: u64) -> FeatureMap {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    FeatureMap::new(c, h, w, (0..c * h * w).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn even(lo: usize, hi: usize) -> impl Strategy<Value = usize> {
    (lo / 2..=hi / 2).prop_map(|n| 2 * n)
}

fn mask_kind() -> impl Strategy<Value = MaskKind> {
    prop_oneof![Just(MaskKind::Equispaced), Just(MaskKind::Random), Just(MaskKind::Radial)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fft_is_unitary_and_invertible(h in 2usize..24, w in 2usize..24, seed: u64) {
        let x = field(h, w, seed);
        let k = fft2c(&x).unwrap();
        prop_assert!((k.norm() - x.norm()).abs() <= 1e-12 * x.norm().max(1.0));
        prop_assert!(ifft2c(&k).unwrap().max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn single_coil_dc_is_idempotent(kind in mask_kind(), n in even(16, 48), af in 2usize..6, seed: u64) {
        let mask = generate_mask(&MaskSpec::new(kind, n, n, af).with_center_fraction(0.5 / af as f64).with_seed(seed)).unwrap();
        let cfg = ForwardConfig::single_coil(mask);
        let y = forward(&cfg, &field(n, n, seed ^ 1)).unwrap();
        let once = data_consistency(&field(n, n, seed ^ 2), &y, &cfg).unwrap();
        let twice = data_consistency(&once, &y, &cfg).unwrap();
        prop_assert!(twice.max_abs_diff(&once) < 1e-12);
    }

    #[test]
    fn mask_is_deterministic_and_keeps_dc(kind in mask_kind(), n in even(16, 64), af in 2usize..9, seed: u64) {
        let spec = MaskSpec::new(kind, n, n, af).with_center_fraction(0.5 / af as f64).with_seed(seed);
        let a = generate_mask(&spec).unwrap();
        prop_assert_eq!(&a, &generate_mask(&spec).unwrap());
        prop_assert!(a.get(n / 2, n / 2));
        prop_assert!(a.sampled_count() > 0 && a.sampled_count() <= n * n);
    }

    #[test]
    fn binomial_projection_is_linear(c in 1usize..4, h in 5usize..20, w in 5usize..20, a in -3.0f64..3.0, seed: u64) {
        let u = features(c, h, w, seed);
        let v = features(c, h, w, seed ^ 7);
        let mix = FeatureMap::new(c, h, w, u.data().iter().zip(v.data()).map(|(p, q)| a * p + q).collect()).unwrap();
        let pu = binomial_project(&u).unwrap();
        let pv = binomial_project(&v).unwrap();
        let expect = FeatureMap::new(c, h, w, pu.data().iter().zip(pv.data()).map(|(p, q)| a * p + q).collect()).unwrap();
        prop_assert!(binomial_project(&mix).unwrap().max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn carrier_projector_preserves_constants(c in 1usize..4, h in even(8, 32), w in even(8, 32), v in -5.0f64..5.0) {
        let flat = FeatureMap::filled(c, h, w, v);
        prop_assert!(carrier_project(&flat).unwrap().max_abs_diff(&flat) < 1e-12);
    }

    #[test]
    fn rejected_stream_is_pool_minus_carrier(n in even(8, 24), seed: u64) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let w = RouterWeights::uniform(2, 8, &mut r);
        let s = route(&features(8, n, n, seed ^ 3), &w).unwrap();
        prop_assert_eq!(s.carrier.channels(), 4);
        prop_assert_eq!(s.evidence.channels(), 4);
        let diff = s.carrier_pool.sub(&s.carrier).unwrap();
        prop_assert!(diff.max_abs_diff(&s.rejected) < 1e-12);
    }

    #[test]
    fn scan_is_linear_in_tokens(n in 1usize..80, a in -2.0f64..2.0, seed: u64) {
        let cfg = SsmConfig { d_model: 8, d_state: 4, d_head: 8, rank: 2, chunk: 8, ..SsmConfig::default() };
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (u, p) = random_scan_problem(&cfg, n, &mut r);
        let v = TokenSeq::new(n, u.width, (0..n * u.width).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
        let su = selective_scan_chunked(&u, &p, &cfg).unwrap();
        let sv = selective_scan_chunked(&v, &p, &cfg).unwrap();
        let smix = selective_scan_chunked(&u.lin_comb(a, &v, 1.0).unwrap(), &p, &cfg).unwrap();
        for ((m, x), y) in smix.readout.iter().zip(&su.readout).zip(&sv.readout) {
            prop_assert!((m - (a * x + y)).abs() < 1e-9);
        }
    }

    #[test]
    fn leakage_is_bounded_monotone_and_scale_free(
        c in 1usize..3, h in 4usize..33, w in 4usize..33, r1 in 0.0f64..1.5, r2 in 0.0f64..1.5, s in 1e-3f64..1e3, seed: u64,
    ) {
        let z = features(c, h, w, seed);
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        let l_lo = outer_band_leakage(&z, lo).unwrap();
        let l_hi = outer_band_leakage(&z, hi).unwrap();
        prop_assert!((0.0..=1.0).contains(&l_lo));
        prop_assert!(l_hi <= l_lo);
        let scaled = FeatureMap::new(c, h, w, z.data().iter().map(|v| v * s).collect()).unwrap();
        prop_assert!((outer_band_leakage(&scaled, lo).unwrap() - l_lo).abs() < 1e-10);
    }

    #[test]
    fn metrics_are_symmetric(n in 11usize..24, seed: u64) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..n * n).map(|_| r.gen_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..n * n).map(|_| r.gen_range(0.0..1.0)).collect();
        let p = SsimParams::default();
        let s_ab = ssim(&a, &b, n, n, &SsimParams { peak: Some(1.0), ..p }).unwrap();
        let s_ba = ssim(&b, &a, n, n, &SsimParams { peak: Some(1.0), ..p }).unwrap();
        prop_assert!((s_ab - s_ba).abs() < 1e-12 && s_ab <= 1.0 + 1e-12);
        prop_assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
    }

    #[test]
    fn field_files_round_trip(c in 1usize..4, h in 1usize..12, w in 1usize..12, kind in 0u8..3, seed: u64) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let len = c * h * w;
        let payload = match kind {
            0 => Payload::Complex64((0..len).map(|_| Complex32::new(r.gen(), r.gen())).collect()),
            1 => Payload::Float32((0..len).map(|_| r.gen_range(-1e6f32..1e6)).collect()),
            _ => Payload::Bool((0..len).map(|_| r.gen()).collect()),
        };
        let f = FieldFile::new(c, h, w, payload).unwrap();
        let bytes = f.to_bytes();
        prop_assert_eq!(&FieldFile::from_bytes(&bytes).unwrap(), &f);
        prop_assert!(FieldFile::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
