use inspex_core::metrics::{checkerboard, dice, paired_t_test, student_t_sf, wilcoxon_signed_rank};
use inspex_core::volume::{BinaryMask, Grid, Volume};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Two-sided p by enumerating every sign assignment of the observed ranks.
fn brute_force_p(d: &[f64]) -> f64 {
    let d: Vec<f64> = d.iter().copied().filter(|v| *v != 0.0).collect();
    let n = d.len();
    let mut mag: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    mag.sort_by(f64::total_cmp);
    let rank = |v: f64| {
        let lo = mag.iter().filter(|m| **m < v.abs()).count();
        let eq = mag.iter().filter(|m| **m == v.abs()).count();
        lo as f64 + (eq as f64 + 1.0) / 2.0
    };
    let ranks: Vec<f64> = d.iter().map(|v| rank(*v)).collect();
    let total: f64 = ranks.iter().sum();
    let mean = total / 2.0;
    let observed: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let dev = (observed - mean).abs();
    let mut hits = 0u64;
    for signs in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|i| signs >> i & 1 == 1).map(|i| ranks[i]).sum();
        if (w - mean).abs() >= dev - 1e-9 {
            hits += 1;
        }
    }
    hits as f64 / (1u64 << n) as f64
}

#[test]
fn exact_wilcoxon_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut fixtures: Vec<Vec<f64>> = vec![
        vec![1.0, 2.0, 3.0, 4.0, 5.0],
        vec![-1.0, 2.0, -3.0, 4.0, -5.0, 6.0],
        vec![1.0, 1.0, -1.0, 2.0, 2.0, -3.0, 0.0, 4.0],
        vec![0.5, -0.5, 0.5, -0.5, 1.5, 1.5, -2.5, 3.0, 3.0, 3.0, -3.0, 7.0],
    ];
    for n in 5..=12 {
        for _ in 0..4 {
            // rounded draws so ties show up
            fixtures.push((0..n).map(|_| (rng.gen_range(-4.0f64..4.0) * 2.0).round() / 2.0 + 0.3).collect());
        }
    }
    for d in &fixtures {
        let zeros = vec![0.0; d.len()];
        let nz = d.iter().filter(|v| **v != 0.0).count();
        if nz < 5 {
            continue;
        }
        let w = wilcoxon_signed_rank(d, &zeros).unwrap();
        let want = brute_force_p(d);
        assert!((w.p_value - want).abs() <= 1e-12, "{d:?}: {} vs {want}", w.p_value);
    }
}

#[test]
fn wilcoxon_is_calibrated_under_the_null() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for n in [20usize, 40] {
        let mut rejections = 0;
        for _ in 0..1000 {
            let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            if wilcoxon_signed_rank(&x, &y).unwrap().p_value < 0.05 {
                rejections += 1;
            }
        }
        let rate = rejections as f64 / 1000.0;
        assert!((rate - 0.05).abs() <= 0.02, "n {n}: rejection rate {rate}");
    }
}

#[test]
fn t_table_critical_values() {
    // two-sided 5% and 1% critical values
    for (df, t05, t01) in [
        (4.0, 2.7764451051977987, 4.604094871415897),
        (9.0, 2.2621571627409915, 3.2498355440153697),
        (29.0, 2.045229642132703, 2.7563859036706),
    ] {
        assert!((2.0 * student_t_sf(t05, df) - 0.05).abs() < 1e-6, "df {df}");
        assert!((2.0 * student_t_sf(t01, df) - 0.01).abs() < 1e-6, "df {df}");
    }
}

#[test]
fn t_tail_matches_numerical_integration() {
    // Simpson integration of the t density as an independent reference
    let pdf = |x: f64, v: f64| {
        let c = libm::lgamma((v + 1.0) / 2.0) - libm::lgamma(v / 2.0) - 0.5 * (v * std::f64::consts::PI).ln();
        (c - (v + 1.0) / 2.0 * (1.0 + x * x / v).ln()).exp()
    };
    for v in [4.0, 9.0, 29.0] {
        for t in [0.3, 1.1, 2.4] {
            let steps = 20000;
            let h = t / steps as f64;
            let mut s = pdf(0.0, v) + pdf(t, v);
            for i in 1..steps {
                s += pdf(i as f64 * h, v) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            let upper = 0.5 - s * h / 3.0;
            assert!((student_t_sf(t, v) - upper).abs() < 1e-10, "df {v} t {t}");
        }
    }
}

fn mask_from(bits: &[bool]) -> BinaryMask {
    BinaryMask::new([bits.len(), 1, 1], bits.to_vec()).unwrap()
}

proptest! {
    #[test]
    fn dice_is_symmetric_and_bounded(a in prop::collection::vec(any::<bool>(), 64), b in prop::collection::vec(any::<bool>(), 64)) {
        let (ma, mb) = (mask_from(&a), mask_from(&b));
        let ab = dice(&ma, &mb).unwrap();
        let ba = dice(&mb, &ma).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab.value));
        if a.iter().any(|x| *x) {
            prop_assert_eq!(dice(&ma, &ma).unwrap().value, 1.0);
        }
    }

    #[test]
    fn t_test_is_invariant_to_common_affine_maps(
        x in prop::collection::vec(-10.0f64..10.0, 6..20),
        noise in prop::collection::vec(-1.0f64..1.0, 20),
        scale in 0.1f64..10.0,
        shift in -100.0f64..100.0,
    ) {
        let y: Vec<f64> = x.iter().zip(&noise).map(|(a, e)| a + e).collect();
        let base = paired_t_test(&x, &y);
        prop_assume!(base.is_ok());
        let base = base.unwrap();
        let f = |v: &[f64]| v.iter().map(|a| scale * a + shift).collect::<Vec<_>>();
        let moved = paired_t_test(&f(&x), &f(&y)).unwrap();
        prop_assert!((moved.statistic - base.statistic).abs() <= 1e-6 * base.statistic.abs().max(1.0));
        prop_assert!((moved.p_value - base.p_value).abs() <= 1e-8);
        prop_assert!((0.0..=1.0).contains(&moved.p_value));
    }

    #[test]
    fn wilcoxon_p_is_a_probability(d in prop::collection::vec(-5i32..5, 5..40)) {
        let d: Vec<f64> = d.into_iter().map(f64::from).collect();
        let zeros = vec![0.0; d.len()];
        if let Ok(w) = wilcoxon_signed_rank(&d, &zeros) {
            prop_assert!((0.0..=1.0).contains(&w.p_value));
            // swapping the samples leaves the two-sided p unchanged
            let back = wilcoxon_signed_rank(&zeros, &d).unwrap();
            prop_assert!((back.p_value - w.p_value).abs() < 1e-12);
        }
    }

    #[test]
    fn checkerboard_swaps_with_its_sources(vals in prop::collection::vec(-1024.0f32..100.0, 2 * 12 * 10 * 2), n in 2usize..6) {
        let g = Grid::new([12, 10, 2], [1.0; 3]).unwrap();
        let a = Volume::new(g.clone(), vals[..240].to_vec()).unwrap();
        let b = Volume::new(g, vals[240..].to_vec()).unwrap();
        let ab = checkerboard(&a, &b, n).unwrap();
        let ba = checkerboard(&b, &a, n).unwrap();
        for i in 0..240 {
            let from_a = ab.data()[i] == a.data()[i] && ba.data()[i] == b.data()[i];
            let from_b = ab.data()[i] == b.data()[i] && ba.data()[i] == a.data()[i];
            prop_assert!(from_a || from_b);
        }
        prop_assert_eq!(ab.data()[0], a.data()[0]);
    }
}
