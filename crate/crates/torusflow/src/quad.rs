//! Small numerical utilities: tanh-sinh quadrature for endpoint-singular
//! integrands, stable log-sum-exp, and least-squares slopes.

/// Tanh-sinh quadrature of `f` over `(a, b)` with integrable endpoint
/// singularities. The integrand receives `(x, x - a, b - x)` with the
/// endpoint distances computed in stable form (crucial once `x` rounds to
/// an endpoint in f64). Doubles the level until two successive levels
/// agree to `tol` (relative).
pub fn tanh_sinh_endpoint(f: impl Fn(f64, f64, f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    let g = |t: f64| {
        // x = c + r tanh(pi/2 sinh t); 1 -+ tanh computed via exp to keep
        // the endpoint distances accurate at large |t|.
        let s = std::f64::consts::FRAC_PI_2 * t.sinh();
        let u = s.tanh();
        let one_minus = 2.0 / ((2.0 * s).exp() + 1.0); // 1 - u
        let one_plus = 2.0 / ((-2.0 * s).exp() + 1.0); // 1 + u
        let x = c + r * u;
        let da = r * one_plus;
        let db = r * one_minus;
        let w = r * std::f64::consts::FRAC_PI_2 * t.cosh() / s.cosh().powi(2);
        if da <= 0.0 || db <= 0.0 || !w.is_finite() || w == 0.0 {
            0.0
        } else {
            let v = f(x, da, db) * w;
            if v.is_finite() {
                v
            } else {
                0.0
            }
        }
    };
    let tmax = 6.5;
    let mut h = 1.0;
    let mut sum = g(0.0);
    let mut k = 1.0;
    while k * h <= tmax {
        sum += g(k * h) + g(-k * h);
        k += 1.0;
    }
    let mut prev = h * sum;
    for _level in 0..12 {
        h *= 0.5;
        // Add the new midpoints only.
        let mut add = 0.0;
        let mut t = h;
        while t <= tmax {
            add += g(t) + g(-t);
            t += 2.0 * h;
        }
        sum += add;
        let cur = h * sum;
        if (cur - prev).abs() <= tol * (1.0 + cur.abs()) && _level >= 2 {
            return cur;
        }
        prev = cur;
    }
    prev
}

/// Convenience wrapper for integrands that only need `x`.
pub fn tanh_sinh(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    tanh_sinh_endpoint(|x, _, _| f(x), a, b, tol)
}

/// `log(sum_i exp(x_i))`, stable under large spreads.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// `log(mean_i exp(x_i))`.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    log_sum_exp(xs) - (xs.len() as f64).ln()
}

/// Least-squares slope of `y` against `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Sample mean and standard error of the mean.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}
