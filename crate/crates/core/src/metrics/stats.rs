//! Paired two-sided tests: Wilcoxon signed-rank and Student's t.

use serde::{Deserialize, Serialize};

use crate::error::{InspexError, Result};

/// Largest effective sample size that uses the exact null distribution.
pub const WILCOXON_EXACT_MAX_N: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wilcoxon {
    /// `min(W+, W-)` over the non-zero differences `x - y`.
    pub statistic: f64,
    pub w_plus: f64,
    pub p_value: f64,
    pub n_effective: usize,
    pub exact: bool,
}

/// Two-sided signed-rank test on `x - y`. Zero differences are dropped and
/// tied magnitudes share their mid-rank.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<Wilcoxon> {
    let d = paired_differences(x, y)?;
    let d: Vec<f64> = d.into_iter().filter(|&v| v != 0.0).collect();
    let n = d.len();
    if n < 5 {
        return Err(InspexError::InsufficientData(format!(
            "signed-rank test needs at least 5 non-zero differences, got {n}"
        )));
    }
    let (ranks2, tie_sizes) = doubled_midranks(&d);
    let total2: u64 = ranks2.iter().sum();
    let wp2: u64 = d.iter().zip(&ranks2).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let wmin2 = wp2.min(total2 - wp2);
    let exact = n <= WILCOXON_EXACT_MAX_N;
    let p = if exact {
        let counts = signed_rank_counts(&ranks2);
        let below: f64 = counts[..=wmin2 as usize].iter().sum();
        (2.0 * below / 2f64.powi(n as i32)).min(1.0)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let ties: f64 = tie_sizes.iter().map(|&t| (t * t * t - t) as f64).sum();
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
        let dev = ((wp2 as f64 / 2.0 - mean).abs() - 0.5).max(0.0);
        (2.0 * normal_sf(dev / var.sqrt())).min(1.0)
    };
    Ok(Wilcoxon {
        statistic: wmin2 as f64 / 2.0,
        w_plus: wp2 as f64 / 2.0,
        p_value: p,
        n_effective: n,
        exact,
    })
}

/// Twice the mid-ranks of `|d|` (always integers) and the sizes of tie groups.
fn doubled_midranks(d: &[f64]) -> (Vec<u64>, Vec<u64>) {
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&a, &b| d[a].abs().total_cmp(&d[b].abs()));
    let mut ranks = vec![0u64; d.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && d[order[j]].abs() == d[order[i]].abs() {
            j += 1;
        }
        // positions i+1 ..= j share rank (i + 1 + j) / 2
        let r2 = (i + 1 + j) as u64;
        for &k in &order[i..j] {
            ranks[k] = r2;
        }
        if j - i > 1 {
            ties.push((j - i) as u64);
        }
        i = j;
    }
    (ranks, ties)
}

/// Number of sign assignments giving each doubled positive-rank sum.
fn signed_rank_counts(ranks2: &[u64]) -> Vec<f64> {
    let total: usize = ranks2.iter().sum::<u64>() as usize;
    let mut c = vec![0.0f64; total + 1];
    c[0] = 1.0;
    let mut reach = 0;
    for &r in ranks2 {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if c[s] != 0.0 {
                c[s + r] += c[s];
            }
        }
        reach += r;
    }
    c
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub statistic: f64,
    pub p_value: f64,
    pub df: f64,
}

/// Two-sided paired t-test on `x - y`.
pub fn paired_t_test(x: &[f64], y: &[f64]) -> Result<TTest> {
    let d = paired_differences(x, y)?;
    let n = d.len();
    if n < 2 {
        return Err(InspexError::InsufficientData(format!("paired t-test needs at least 2 pairs, got {n}")));
    }
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    let sd = var.sqrt();
    let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    if !(sd > 1e-12 * scale) {
        return Err(InspexError::Degenerate(format!("paired differences have zero variance (sd = {sd:e})")));
    }
    let t = mean / sd * nf.sqrt();
    let df = nf - 1.0;
    Ok(TTest {
        statistic: t,
        p_value: (2.0 * student_t_sf(t.abs(), df)).min(1.0),
        df,
    })
}

fn paired_differences(x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return Err(InspexError::Argument(format!("paired samples differ in length: {} vs {}", x.len(), y.len())));
    }
    if let Some(v) = x.iter().chain(y).find(|v| !v.is_finite()) {
        return Err(InspexError::Data(format!("non-finite value {v} in paired sample")));
    }
    Ok(x.iter().zip(y).map(|(a, b)| a - b).collect())
}

/// Upper tail of Student's t with `df` degrees of freedom.
pub fn student_t_sf(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    let tail = 0.5 * regularized_incomplete_beta(x, 0.5 * df, 0.5);
    if t >= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// Upper tail of the standard normal.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

/// `I_x(a, b)` by the modified Lentz continued fraction.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_fraction(x, a, b) / a
    } else {
        1.0 - front * beta_fraction(1.0 - x, b, a) / b
    }
}

fn beta_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let guard = |v: f64| if v.abs() < TINY { TINY } else { v };
    let mut c = 1.0;
    let mut d = 1.0 / guard(1.0 - (a + b) * x / (a + 1.0));
    let mut h = d;
    for m in 1..1000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let even = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
        d = 1.0 / guard(1.0 + even * d);
        c = guard(1.0 + even / c);
        h *= d * c;
        let odd = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
        d = 1.0 / guard(1.0 + odd * d);
        c = guard(1.0 + odd / c);
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_shift_gives_the_smallest_exact_p() {
        let x: Vec<f64> = (0..20).map(|i| (i * i) as f64 * 0.37).collect();
        let y: Vec<f64> = x.iter().map(|v| v + 1.0 + 0.01 * v).collect();
        let w = wilcoxon_signed_rank(&x, &y).unwrap();
        assert_eq!(w.statistic, 0.0);
        assert!(w.exact);
        assert!((w.p_value - 2.0 * 2f64.powi(-20)).abs() < 1e-18);
    }

    #[test]
    fn hand_ranked_fixture() {
        // differences +1..+9 and -10: W+ = 45, W- = 10
        let x: Vec<f64> = (1..=9).map(f64::from).chain([-10.0]).collect();
        let y = vec![0.0; 10];
        let w = wilcoxon_signed_rank(&x, &y).unwrap();
        assert_eq!(w.w_plus, 45.0);
        assert_eq!(w.statistic, 10.0);
        // P(W+ <= 10) counts 43 of 1024 subsets
        assert!((w.p_value - 86.0 / 1024.0).abs() < 1e-15);
    }

    #[test]
    fn midranks_are_shared() {
        let (r, t) = doubled_midranks(&[1.0, -1.0, 2.0, 3.0, -3.0, 3.0]);
        assert_eq!(r, vec![3, 3, 6, 10, 10, 10]);
        assert_eq!(t, vec![2, 3]);
    }

    #[test]
    fn too_few_nonzero_differences() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let y = [1.0, 2.0, 0.0, 0.0, 0.0, 0.0];
        assert!(matches!(wilcoxon_signed_rank(&x, &y), Err(InspexError::InsufficientData(_))));
    }

    #[test]
    fn t_test_reference_values() {
        // two-sided p from a reference implementation
        for (df, t, p) in [
            (4.0, 2.0, 0.1161165235168155),
            (9.0, 1.5, 0.16785065605707486),
            (9.0, 3.1, 0.012722455978201952),
            (29.0, 0.7, 0.4895051486144837),
            (29.0, 2.5, 0.01832534433842607),
        ] {
            let got = 2.0 * student_t_sf(t, df);
            assert!((got - p).abs() < 1e-10 * p.max(1e-3), "df {df} t {t}: {got} vs {p}");
        }
    }

    #[test]
    fn t_closed_forms() {
        for t in [0.1, 0.5, 1.0, 3.0, 10.0] {
            let cauchy = 0.5 - (t as f64).atan() / std::f64::consts::PI;
            assert!((student_t_sf(t, 1.0) - cauchy).abs() < 1e-13);
            let two = 0.5 * (1.0 - t / (2.0 + t * t).sqrt());
            assert!((student_t_sf(t, 2.0) - two).abs() < 1e-13);
        }
        assert_eq!(student_t_sf(0.0, 7.0), 0.5);
        assert!((student_t_sf(-1.3, 5.0) + student_t_sf(1.3, 5.0) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn hand_computed_paired_t() {
        let x = [2.1, 1.9, 2.0, 2.2, 1.8];
        let r = paired_t_test(&x, &[0.0; 5]).unwrap();
        let want = 2.0 / 0.025f64.sqrt() * 5f64.sqrt();
        assert!((r.statistic - want).abs() < 1e-9);
        assert_eq!(r.df, 4.0);
        assert!((r.p_value - 9.29738463666688e-06).abs() < 1e-12);
    }

    #[test]
    fn degenerate_t() {
        assert!(matches!(paired_t_test(&[1.0; 4], &[0.0; 4]), Err(InspexError::Degenerate(_))));
        let x = [0.1 + 0.2, 0.3, 0.3, 0.3];
        assert!(matches!(paired_t_test(&x, &[0.3; 4]), Err(InspexError::Degenerate(_))));
        assert!(paired_t_test(&[1.0], &[0.0]).is_err());
        assert!(paired_t_test(&[1.0, 2.0], &[0.0]).is_err());
    }

    #[test]
    fn normal_tail() {
        assert!((normal_sf(0.0) - 0.5).abs() < 1e-16);
        assert!((normal_sf(1.959963984540054) - 0.025).abs() < 1e-12);
    }
}
