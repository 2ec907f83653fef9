//! Correlation and two-sample testing.
//!
//! The Student-t tail is computed through the regularised incomplete beta
//! function (continued fraction, modified Lentz). Internals run in `f64`
//! whatever the sample scalar type.

use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::scalar::Scalar;

/// Significance level used for every test.
pub const ALPHA: f64 = 0.05;

/// Sample Pearson correlation coefficient.
pub fn pearson<T: Scalar>(xs: &[T], ys: &[T]) -> Result<T> {
    if xs.len() != ys.len() {
        return Err(BenchError::Shape {
            what: "pearson samples",
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(BenchError::InvalidArgument("pearson needs at least two points".into()));
    }
    let n = T::from_usize_lossy(xs.len());
    let mx = xs.iter().copied().sum::<T>() / n;
    let my = ys.iter().copied().sum::<T>() / n;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == T::zero() || syy == T::zero() {
        return Err(BenchError::InvalidArgument(
            "pearson correlation undefined for zero variance".into(),
        ));
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    Ok(r.max(-T::one()).min(T::one()))
}

/// Outcome of Welch's unequal-variance t-test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatTestResult {
    pub t: f64,
    pub dof: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    pub significant: bool,
}

impl StatTestResult {
    /// One-sided p-value for the alternative `mean(a) > mean(b)`.
    pub fn p_greater(&self) -> f64 {
        let half = 0.5 * self.p_value;
        if self.t > 0.0 {
            half
        } else {
            1.0 - half
        }
    }
}

fn mean_var<T: Scalar>(xs: &[T]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().map(|x| x.as_f64()).sum::<f64>() / n;
    let v = xs.iter().map(|x| (x.as_f64() - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Welch's t-test with Welch–Satterthwaite degrees of freedom.
pub fn welch_t_test<T: Scalar>(a: &[T], b: &[T]) -> Result<StatTestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(BenchError::InvalidArgument(
            "welch test needs at least two samples per group".into(),
        ));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    if !(va.is_finite() && vb.is_finite() && ma.is_finite() && mb.is_finite()) {
        return Err(BenchError::NonFinite("welch samples"));
    }
    let sa = va / a.len() as f64;
    let sb = vb / b.len() as f64;
    let se2 = sa + sb;
    if se2 == 0.0 {
        return Err(BenchError::InvalidArgument("welch test undefined for zero variance".into()));
    }
    let t = (ma - mb) / se2.sqrt();
    let dof = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    let p = student_t_two_sided(t, dof);
    Ok(StatTestResult {
        t,
        dof,
        p_value: p,
        significant: p < ALPHA,
    })
}

/// `P(|T| ≥ |t|)` for Student's t with `dof` degrees of freedom.
pub fn student_t_two_sided(t: f64, dof: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    let x = dof / (dof + t * t);
    regularized_incomplete_beta(0.5 * dof, 0.5, x).clamp(f64::MIN_POSITIVE, 1.0)
}

/// Student-t CDF.
pub fn student_t_cdf(t: f64, dof: f64) -> f64 {
    let tail = 0.5 * student_t_two_sided(t, dof);
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularised incomplete beta `I_x(a, b)`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 500;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_affine_and_negation() {
        let xs = [1.0, 2.0, 4.0, 7.0, 11.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 3.0).collect();
        assert!((pearson(&xs, &ys).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(pearson(&xs, &[1.0; 5]).is_err());
        assert!(pearson(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn pearson_hand_fixture() {
        // xs = 1..5, ys = [2, 4, 5, 4, 5]: sxy = 6, sxx = 10, syy = 6
        let r = pearson(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 4.0, 5.0, 4.0, 5.0]).unwrap();
        assert!((r - 6.0 / (10.0f64 * 6.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn welch_identical_and_swapped() {
        let a = [2.1, 2.5, 2.3, 2.2];
        let r = welch_t_test(&a, &a).unwrap();
        assert_eq!((r.t, r.p_value), (0.0, 1.0));
        let b = [1.9, 2.0, 1.8, 2.1];
        let ab = welch_t_test(&a, &b).unwrap();
        let ba = welch_t_test(&b, &a).unwrap();
        assert_eq!(ab.t, -ba.t);
        assert_eq!(ab.p_value, ba.p_value);
        assert!(welch_t_test(&[1.0], &b).is_err());
        assert!(welch_t_test(&[1.0, 1.0], &[2.0, 2.0]).is_err());
    }

    #[test]
    fn welch_reference_fixture() {
        // reference values from scipy.stats.ttest_ind(a, b, equal_var=False)
        let r = welch_t_test(&[2.1, 2.5, 2.3, 2.2], &[1.9, 2.0, 1.8, 2.1]).unwrap();
        assert!((r.t - 3.036_145_882_229_937_4).abs() < 1e-6, "t = {}", r.t);
        assert!((r.dof - 5.584_615_384_615_387).abs() < 1e-6, "dof = {}", r.dof);
        assert!((r.p_value - 0.025_081_308_884_364_755).abs() < 1e-6, "p = {}", r.p_value);
        assert!(r.significant);
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
        assert!((ln_gamma(10.0) - 362_880f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn t_cdf_symmetry() {
        for &t in &[0.3, 1.0, 2.5, 7.0] {
            for &v in &[1.0, 3.5, 30.0] {
                assert!((student_t_cdf(t, v) + student_t_cdf(-t, v) - 1.0).abs() < 1e-14);
            }
        }
        // Cauchy: P(T ≤ 1) = 3/4
        assert!((student_t_cdf(1.0, 1.0) - 0.75).abs() < 1e-12);
    }
}
