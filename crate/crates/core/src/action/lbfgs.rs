use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsReport {
    pub iterations: usize,
    pub evaluations: usize,
    pub value: f64,
    pub grad_norm: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Limited-memory BFGS with Armijo backtracking. `f` returns `None` where the
/// objective is unavailable; such trial points are treated as too long a step.
pub(crate) fn minimize<F>(mut f: F, x: &mut [f64], max_iter: usize, memory: usize, gtol: f64) -> Option<LbfgsReport>
where
    F: FnMut(&[f64], &mut [f64]) -> Option<f64>,
{
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut fx = f(x, &mut g)?;
    let mut evaluations = 1;
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(memory);
    let mut d = vec![0.0; n];
    let mut xn = vec![0.0; n];
    let mut gn = vec![0.0; n];
    let mut alpha = vec![0.0; memory.max(1)];
    let mut stalls = 0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let gnorm = dot(&g, &g).sqrt();
        if gnorm <= gtol {
            converged = true;
            break;
        }
        // two-loop recursion
        d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi);
        for (k, (s, y, rho)) in hist.iter().enumerate().rev() {
            alpha[k] = rho * dot(s, &d);
            d.iter_mut().zip(y).for_each(|(di, yi)| *di -= alpha[k] * yi);
        }
        if let Some((s, y, _)) = hist.back() {
            let scale = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|di| *di *= scale);
        }
        for (k, (s, y, rho)) in hist.iter().enumerate() {
            let beta = rho * dot(y, &d);
            d.iter_mut().zip(s).for_each(|(di, si)| *di += (alpha[k] - beta) * si);
        }
        let mut slope = dot(&d, &g);
        if !(slope < 0.0) {
            hist.clear();
            d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi);
            slope = -gnorm * gnorm;
        }
        let mut t = if hist.is_empty() { (1.0 / gnorm).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..50 {
            xn.iter_mut().zip(x.iter().zip(&d)).for_each(|(xi, (x0, di))| *xi = x0 + t * di);
            evaluations += 1;
            if let Some(fnew) = f(&xn, &mut gn) {
                if fnew <= fx + 1e-4 * t * slope {
                    accepted = Some(fnew);
                    break;
                }
            }
            t *= 0.5;
        }
        iterations += 1;
        let Some(fnew) = accepted else {
            if hist.is_empty() {
                break;
            }
            hist.clear();
            continue;
        };
        let s: Vec<f64> = xn.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if hist.len() == memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        let decrease = fx - fnew;
        x.copy_from_slice(&xn);
        g.copy_from_slice(&gn);
        fx = fnew;
        if decrease <= 1e-12 * fx.abs().max(1e-12) {
            stalls += 1;
            if stalls >= 3 {
                converged = true;
                break;
            }
        } else {
            stalls = 0;
        }
    }
    Some(LbfgsReport {
        iterations,
        evaluations,
        value: fx,
        grad_norm: dot(&g, &g).sqrt(),
        converged,
    })
}
