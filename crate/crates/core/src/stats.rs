//! Special functions and Student-t distribution helpers.

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
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

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Digamma function for `x > 0`.
pub fn digamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let f = 1.0 / (x * x);
    acc + x.ln() - 0.5 / x
        - f * (1.0 / 12.0 - f * (1.0 / 120.0 - f * (1.0 / 252.0 - f * (1.0 / 240.0 - f / 132.0))))
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
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
    for m in 1..=10_000 {
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

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn beta_reg(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Two-sided tail probability `P(|T| > t)` for Student's t with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    beta_reg(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

/// Student-t CDF.
pub fn t_cdf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * t_two_sided_p(t, df);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Two-sided critical value: the `t` with `P(|T| > t) = alpha`.
///
/// Inverts the CDF by bisection to an absolute tolerance of 1e-8.
pub fn t_critical(df: f64, alpha: f64) -> Result<f64> {
    if !(df >= 1.0) || !df.is_finite() {
        return Err(Error::InvalidArgument(format!("degrees of freedom must be >= 1, got {df}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must be in (0, 1), got {alpha}")));
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while t_two_sided_p(hi, df) > alpha {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::InvalidArgument(format!(
                "critical value for df={df}, alpha={alpha} out of range"
            )));
        }
    }
    while hi - lo > 1e-8 {
        let mid = 0.5 * (lo + hi);
        if t_two_sided_p(mid, df) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Welch-Satterthwaite degrees of freedom for two samples.
pub fn welch_df(var_a: f64, n_a: f64, var_b: f64, n_b: f64) -> f64 {
    let qa = var_a / n_a;
    let qb = var_b / n_b;
    (qa + qb).powi(2) / (qa * qa / (n_a - 1.0) + qb * qb / (n_b - 1.0))
}

/// Median of a slice (`None` when empty). NaNs are not expected.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Mean, sample standard deviation (n - 1) and count of a sample.
pub fn sample_moments(values: &[f64]) -> (f64, f64, usize) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, 0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        f64::NAN
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    (mean, std, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, StudentsT};

    #[test]
    fn critical_value_at_38_df() {
        let t = t_critical(38.0, 0.01).unwrap();
        assert!((2.70..=2.72).contains(&t), "{t}");
    }

    #[test]
    fn normal_limit() {
        let t = t_critical(1e6, 0.05).unwrap();
        assert!((t - 1.959_964).abs() < 1e-4, "{t}");
    }

    #[test]
    fn domain_checks() {
        assert!(t_critical(10.0, 1.0).is_err());
        assert!(t_critical(10.0, 0.0).is_err());
        assert!(t_critical(0.5, 0.05).is_err());
    }

    #[test]
    fn cdf_agrees_with_statrs() {
        for df in [1.0, 2.5, 5.0, 30.0, 200.0] {
            let d = StudentsT::new(0.0, 1.0, df).unwrap();
            for t in [-6.0, -2.0, -0.3, 0.0, 0.7, 1.96, 4.0] {
                let a = t_cdf(t, df);
                let b = d.cdf(t);
                assert!((a - b).abs() < 1e-10, "df={df} t={t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn critical_agrees_with_statrs_quantile() {
        for df in [1.0, 4.0, 33.0, 100.0] {
            for alpha in [0.1, 0.05, 0.01, 0.001] {
                let d = StudentsT::new(0.0, 1.0, df).unwrap();
                let expected = d.inverse_cdf(1.0 - alpha / 2.0);
                let got = t_critical(df, alpha).unwrap();
                assert!((got - expected).abs() < 1e-6, "df={df} a={alpha}: {got} vs {expected}");
            }
        }
    }

    #[test]
    fn digamma_values() {
        // psi(1) = -Euler-Mascheroni
        assert!((digamma(1.0) + 0.577_215_664_901_532_9).abs() < 1e-12);
        assert!((digamma(0.5) - (-1.963_510_026_021_423_5)).abs() < 1e-12);
        assert!((digamma(10.0) - 2.251_752_589_066_721).abs() < 1e-12);
    }

    #[test]
    fn moments() {
        let (m, s, n) = sample_moments(&[-10.0, -12.0]);
        assert_eq!((m, n), (-11.0, 2));
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }
}
