//! Special functions and the paired t-test.
//!
//! Self-contained Lanczos ln-gamma and a continued-fraction regularized
//! incomplete beta, which give the Student-t CDF without an external
//! statistics dependency.

use crate::error::{Error, Result};

/// Natural log of the gamma function for `z > 0` (Lanczos approximation).
pub fn ln_gamma(z: f64) -> f64 {
    assert!(z > 0.0, "ln_gamma needs z > 0, got {z}");
    const C: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let mut sum = 1.000000000190015;
    for (i, c) in C.iter().enumerate() {
        sum += c / (z + i as f64 + 1.0);
    }
    let tmp = z + 5.5;
    (z + 0.5) * tmp.ln() - tmp + (2.5066282746310005 * sum / z).ln()
}

const BETACF_TOL: f64 = 1e-12;
const BETACF_MAX_ITER: usize = 500;

/// Continued fraction for the incomplete beta (Lentz's method).
fn betacf(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let tiny = 1e-300;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < tiny {
        d = tiny;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=BETACF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < BETACF_TOL {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn betai(a: f64, b: f64, x: f64) -> f64 {
    assert!((0.0..=1.0).contains(&x), "betai x out of [0,1]: {x}");
    if x == 0.0 {
        return 0.0;
    }
    if x == 1.0 {
        return 1.0;
    }
    let front = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln())
        .exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * betacf(a, b, x) / a
    } else {
        1.0 - front * betacf(b, a, 1.0 - x) / b
    }
}

/// Two-tailed p-value of Student's t with `df` degrees of freedom.
pub fn t_two_tailed_p(t: f64, df: f64) -> f64 {
    betai(df / 2.0, 0.5, df / (df + t * t))
}

/// Outcome of a paired two-tailed t-test.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    /// Zero-variance nonzero-mean differences (t is unbounded).
    pub degenerate: bool,
}

/// Paired t-test on per-fold metrics: `t = mean(d) / (sd(d)/sqrt(n))` with
/// `d = a - b`, sample standard deviation, `df = n - 1`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::contract(format!(
            "paired t-test needs equal lengths, got {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::contract("paired t-test needs n >= 2".to_string()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (nf - 1.0);
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            TTest {
                t: 0.0,
                p: 1.0,
                degenerate: false,
            }
        } else {
            TTest {
                t: if mean > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY },
                p: 0.0,
                degenerate: true,
            }
        });
    }
    let t = mean / (var.sqrt() / nf.sqrt());
    Ok(TTest {
        t,
        p: t_two_tailed_p(t, nf - 1.0),
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_known_values() {
        assert!((ln_gamma(5.0) - 24.0f64.ln()).abs() < 1e-10);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-10);
    }

    #[test]
    fn betai_symmetry_point() {
        assert!((betai(0.5, 0.5, 0.5) - 0.5).abs() < 1e-12);
        assert!((betai(2.0, 3.0, 1.0) - 1.0).abs() < 1e-15);
        assert_eq!(betai(2.0, 3.0, 0.0), 0.0);
    }

    #[test]
    fn t_table_row_n10() {
        // t table: two-tailed p = 0.05 at df = 9 for t = 2.2622
        let p = t_two_tailed_p(2.262157, 9.0);
        assert!((p - 0.05).abs() < 5e-4, "p = {p}");
        // one more row: df=4, t=2.776 -> p ~ 0.05
        let p = t_two_tailed_p(2.776, 4.0);
        assert!((p - 0.05).abs() < 5e-4, "p = {p}");
    }

    #[test]
    fn identical_samples_give_p_one() {
        let a = [0.8, 0.82, 0.85, 0.79];
        let out = paired_t_test(&a, &a).unwrap();
        assert_eq!(out.t, 0.0);
        assert_eq!(out.p, 1.0);
        assert!(!out.degenerate);
    }

    #[test]
    fn constructed_t_statistic_reproduces_table_p() {
        // differences with mean c and sample sd 1 give t = c * sqrt(n)
        let pattern = [1.5, -0.5, 0.5, -1.5, 1.0, -1.0, 0.25, -0.25, 0.75, -0.75];
        let pm = pattern.iter().sum::<f64>() / 10.0;
        let sd = (pattern.iter().map(|x| (x - pm) * (x - pm)).sum::<f64>() / 9.0).sqrt();
        let target_t = 2.262;
        let c = target_t / 10.0f64.sqrt();
        let a: Vec<f64> = pattern.iter().map(|x| c + (x - pm) / sd).collect();
        let b = vec![0.0; 10];
        let out = paired_t_test(&a, &b).unwrap();
        assert!((out.t - target_t).abs() < 1e-9, "t = {}", out.t);
        assert!((out.p - 0.050).abs() < 5e-4, "p = {}", out.p);
    }

    #[test]
    fn degenerate_constant_difference() {
        let a = [1.0, 1.0, 1.0, 1.0];
        let b = [0.0, 0.0, 0.0, 0.0];
        let out = paired_t_test(&a, &b).unwrap();
        assert!(out.degenerate);
        assert_eq!(out.p, 0.0);
    }
}
