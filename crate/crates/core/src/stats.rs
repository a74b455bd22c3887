//! Small statistical helpers shared by the Monte Carlo estimators.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF, StudentsT};

/// Two-sided Student-t quantile `t_{1 - (1-level)/2, df}`.
pub fn t_quantile(level: f64, df: usize) -> f64 {
    let t = StudentsT::new(0.0, 1.0, df.max(1) as f64).expect("positive degrees of freedom");
    t.inverse_cdf(0.5 + 0.5 * level)
}

/// Mean with a Student-t confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub std_err: f64,
    pub low: f64,
    pub high: f64,
}

impl Interval {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.high - self.low)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.low <= x && x <= self.high
    }
}

pub fn mean_interval(xs: &[f64], level: f64) -> Interval {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n.max(1) as f64;
    if n < 2 {
        return Interval {
            mean,
            std_err: f64::INFINITY,
            low: f64::NEG_INFINITY,
            high: f64::INFINITY,
        };
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    let q = t_quantile(level, n - 1);
    Interval {
        mean,
        std_err: se,
        low: mean - q * se,
        high: mean + q * se,
    }
}

/// Clopper-Pearson interval for `k` successes out of `n`; with `k = 0` the
/// upper end is the one-sided bound `1 - (1 - level)^(1/n)`.
pub fn clopper_pearson(k: u64, n: u64, level: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let a = 1.0 - level;
    if k == 0 {
        return (0.0, 1.0 - a.powf(1.0 / n as f64));
    }
    let (kf, nf) = (k as f64, n as f64);
    let lo = Beta::new(kf, nf - kf + 1.0).expect("valid").inverse_cdf(0.5 * a);
    let hi = if k == n {
        1.0
    } else {
        Beta::new(kf + 1.0, nf - kf).expect("valid").inverse_cdf(1.0 - 0.5 * a)
    };
    (lo, hi)
}

/// Ordinary least-squares fit `y = a + b x`; returns `(a, b, se_b)`.
pub fn ols(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let w = vec![1.0; x.len()];
    wls(x, y, &w)
}

/// Weighted least squares with weights `w_i = 1 / var_i`; returns `(a, b, se_b)`.
///
/// The slope error is the model-based one, `sqrt(S / (S S_xx - S_x^2))`,
/// scaled by the residual variance when the weights are all equal.
pub fn wls(x: &[f64], y: &[f64], w: &[f64]) -> (f64, f64, f64) {
    let s: f64 = w.iter().sum();
    let sx: f64 = w.iter().zip(x).map(|(w, x)| w * x).sum();
    let sy: f64 = w.iter().zip(y).map(|(w, y)| w * y).sum();
    let sxx: f64 = w.iter().zip(x).map(|(w, x)| w * x * x).sum();
    let sxy: f64 = w.iter().zip(x.iter().zip(y)).map(|(w, (x, y))| w * x * y).sum();
    let det = s * sxx - sx * sx;
    let b = (s * sxy - sx * sy) / det;
    let a = (sy - b * sx) / s;
    let uniform = w.windows(2).all(|p| p[0] == p[1]);
    let se = if uniform {
        let n = x.len();
        if n <= 2 {
            f64::INFINITY
        } else {
            let rss: f64 = x.iter().zip(y).map(|(x, y)| (y - a - b * x).powi(2)).sum();
            let sigma2 = rss / (n - 2) as f64;
            (sigma2 * s / det * w[0]).sqrt()
        }
    } else {
        (s / det).sqrt()
    };
    (a, b, se)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Mann-Kendall statistic `S = sum_{i<j} sign(y_j - y_i)`.
pub fn kendall_s(y: &[f64]) -> i64 {
    let mut s = 0;
    for i in 0..y.len() {
        for j in i + 1..y.len() {
            s += match y[j].partial_cmp(&y[i]) {
                Some(std::cmp::Ordering::Greater) => 1,
                Some(std::cmp::Ordering::Less) => -1,
                _ => 0,
            };
        }
    }
    s
}

/// One-sided exact p-value of an increasing trend: the fraction of
/// orderings of distinct values whose Kendall statistic is at least `s`.
pub fn kendall_upper_p(n: usize, s: i64) -> f64 {
    // number of permutations of n with a given inversion count (Mahonian numbers)
    let max_inv = n * n.saturating_sub(1) / 2;
    let mut counts = vec![0.0f64; max_inv + 1];
    counts[0] = 1.0;
    for k in 1..n {
        let mut next = vec![0.0; max_inv + 1];
        for (inv, &c) in counts.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for add in 0..=k {
                if inv + add <= max_inv {
                    next[inv + add] += c;
                }
            }
        }
        counts = next;
    }
    // S = max_inv - 2 * inversions
    let total = factorial(n);
    let hits: f64 = counts
        .iter()
        .enumerate()
        .filter(|(inv, _)| max_inv as i64 - 2 * *inv as i64 >= s)
        .map(|(_, c)| c)
        .sum();
    hits / total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_quantile_known_values() {
        assert!((t_quantile(0.95, 10) - 2.228_138_851_986_27).abs() < 1e-6);
        assert!((t_quantile(0.95, 1000) - 1.962_339).abs() < 1e-4);
    }

    #[test]
    fn clopper_pearson_cases() {
        let (lo, hi) = clopper_pearson(0, 100, 0.95);
        assert_eq!(lo, 0.0);
        assert!((hi - (1.0 - 0.05f64.powf(0.01))).abs() < 1e-15);
        let (lo, hi) = clopper_pearson(5, 10, 0.95);
        assert!((lo - 0.187_086_028).abs() < 1e-6);
        assert!((hi - 0.812_913_972).abs() < 1e-6);
        assert_eq!(clopper_pearson(10, 10, 0.95).1, 1.0);
    }

    #[test]
    fn least_squares_recovers_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let (a, b, se) = ols(&x, &y);
        assert!((a - 1.0).abs() < 1e-12 && (b - 2.0).abs() < 1e-12 && se < 1e-6);
        let (a, b, _) = wls(&x, &y, &[1.0, 2.0, 3.0, 4.0]);
        assert!((a - 1.0).abs() < 1e-12 && (b - 2.0).abs() < 1e-12);
    }

    #[test]
    fn kendall_exact_distribution() {
        assert_eq!(kendall_s(&[1.0, 2.0, 3.0, 4.0]), 6);
        assert_eq!(kendall_s(&[4.0, 3.0, 2.0, 1.0]), -6);
        assert!((kendall_upper_p(4, 6) - 1.0 / 24.0).abs() < 1e-15);
        assert!((kendall_upper_p(4, 4) - 4.0 / 24.0).abs() < 1e-15);
        assert_eq!(kendall_upper_p(4, -6), 1.0);
        assert!((kendall_upper_p(5, 10) - 1.0 / 120.0).abs() < 1e-15);
    }
}
