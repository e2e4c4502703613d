//! Exponentially scaled modified Bessel functions of the first kind,
//! `I_n(x) e^{-x}` for `n = 0, 1` and `x >= 0`.

use std::f64::consts::PI;

/// Arguments at or below this use the power series, above it the asymptotic expansion.
pub const SWITCHOVER: f64 = 20.0;

fn series(order: u32, x: f64) -> f64 {
    let half = x / 2.0;
    let q = half * half;
    // first term (x/2)^n / n!
    let mut term = if order == 0 { 1.0 } else { half };
    let mut sum = term;
    let n = order as f64;
    for k in 1..500 {
        let k = k as f64;
        term *= q / (k * (k + n));
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum * (-x).exp()
}

fn asymptotic(order: u32, x: f64) -> f64 {
    let mu = 4.0 * (order * order) as f64;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..60 {
        let odd = (2 * k - 1) as f64;
        let next = -term * (mu - odd * odd) / (k as f64 * 8.0 * x);
        if next.abs() >= term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum / (2.0 * PI * x).sqrt()
}

pub fn i0e(x: f64) -> f64 {
    let x = x.abs();
    if x <= SWITCHOVER { series(0, x) } else { asymptotic(0, x) }
}

/// `I_1(|x|) e^{-|x|}`; callers only pass nonnegative arguments.
pub fn i1e(x: f64) -> f64 {
    let x = x.abs();
    if x <= SWITCHOVER { series(1, x) } else { asymptotic(1, x) }
}
