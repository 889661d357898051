//! The dispersionless companion system `u' = v`, `v' = -u^k` acting
//! pointwise in space, its conserved Hamiltonian
//! `H = v^2/2 + u^{k+1}/(k+1)`, closed-form period/offset quadrature, and
//! small-scale increment statistics (law-of-iterated-logarithm regime) of
//! the Gaussian samples.
//!
//! Period convention: for energy `H0 > 0` the orbit through
//! `(u_max, 0)`, `u_max = ((k+1) H0)^{1/(k+1)}`, has period
//!
//! ```text
//! T = 4 u_max / sqrt(2 H0) * \int_0^1 (1 - y^{k+1})^{-1/2} dy,
//! ```
//!
//! which scales as `H0^{-(k-1)/(2(k+1))}`. (The exponent is fixed by the
//! rescaling symmetry of `u'' = -u^k`; the quadrature is cross-checked
//! against the ODE return time, which is the ground truth.)

use crate::gaussian::MeasureSpec;
use crate::parallel::map_indexed;
use crate::quad::{ols_slope, tanh_sinh_endpoint};
use crate::rng;
use crate::spectral::{PhasePair, SpectralField, TWO_PI};
use crate::{Result, TfError};
use num_complex::Complex64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarState {
    pub u: f64,
    pub v: f64,
}

impl ScalarState {
    pub fn hamiltonian(&self, k: u32) -> f64 {
        0.5 * self.v * self.v + self.u.powi(k as i32 + 1) / (k as f64 + 1.0)
    }
}

/// Dormand–Prince 5(4) embedded step for the scalar system.
fn dopri_step(s: ScalarState, k: u32, h: f64) -> (ScalarState, f64) {
    let f = |st: ScalarState| ScalarState {
        u: st.v,
        v: -st.u.powi(k as i32),
    };
    let add = |a: ScalarState, c: f64, b: ScalarState| ScalarState {
        u: a.u + c * b.u,
        v: a.v + c * b.v,
    };
    let k1 = f(s);
    let k2 = f(add(s, h * 0.2, k1));
    let k3 = f(add(add(s, h * 3.0 / 40.0, k1), h * 9.0 / 40.0, k2));
    let k4 = f(add(
        add(add(s, h * 44.0 / 45.0, k1), -h * 56.0 / 15.0, k2),
        h * 32.0 / 9.0,
        k3,
    ));
    let k5 = f(add(
        add(
            add(add(s, h * 19372.0 / 6561.0, k1), -h * 25360.0 / 2187.0, k2),
            h * 64448.0 / 6561.0,
            k3,
        ),
        -h * 212.0 / 729.0,
        k4,
    ));
    let k6 = f(add(
        add(
            add(
                add(add(s, h * 9017.0 / 3168.0, k1), -h * 355.0 / 33.0, k2),
                h * 46732.0 / 5247.0,
                k3,
            ),
            h * 49.0 / 176.0,
            k4,
        ),
        -h * 5103.0 / 18656.0,
        k5,
    ));
    // 5th-order solution.
    let y5 = add(
        add(
            add(
                add(add(s, h * 35.0 / 384.0, k1), h * 500.0 / 1113.0, k3),
                h * 125.0 / 192.0,
                k4,
            ),
            -h * 2187.0 / 6784.0,
            k5,
        ),
        h * 11.0 / 84.0,
        k6,
    );
    let k7 = f(y5);
    // Embedded 4th-order solution for the error estimate.
    let y4 = add(
        add(
            add(
                add(
                    add(add(s, h * 5179.0 / 57600.0, k1), h * 7571.0 / 16695.0, k3),
                    h * 393.0 / 640.0,
                    k4,
                ),
                -h * 92097.0 / 339200.0,
                k5,
            ),
            h * 187.0 / 2100.0,
            k6,
        ),
        h / 40.0,
        k7,
    );
    let err = ((y5.u - y4.u).powi(2) + (y5.v - y4.v).powi(2)).sqrt();
    (y5, err)
}

/// Adaptive integration of the scalar system to time `t` (either sign)
/// with local tolerance `tol` per step.
pub fn scalar_flow(s0: ScalarState, k: u32, t: f64, tol: f64) -> Result<ScalarState> {
    if !(tol > 0.0) {
        return Err(TfError::Config("tol must be positive".into()));
    }
    let dir = if t < 0.0 { -1.0 } else { 1.0 };
    let total = t.abs();
    if total == 0.0 {
        return Ok(s0);
    }
    let mut s = s0;
    let mut done = 0.0;
    let scale = 1.0 + s0.u.abs().max(s0.v.abs());
    let mut h = (total / 16.0).min(0.1 / scale).max(1e-12);
    let mut rejected = 0usize;
    while done < total {
        h = h.min(total - done);
        let (next, err) = dopri_step(s, k, dir * h);
        let tol_step = tol * (1.0 + s.u.abs().max(s.v.abs()));
        if err <= tol_step || h <= 1e-14 {
            s = next;
            done += h;
            let grow = 0.9 * (tol_step / err.max(1e-300)).powf(0.2);
            h *= grow.clamp(0.5, 4.0);
        } else {
            rejected += 1;
            if rejected > 100_000 {
                return Err(TfError::Numerical("scalar_flow step failure".into()));
            }
            h *= 0.9 * (tol_step / err).powf(0.25).clamp(0.1, 0.9);
        }
        if !s.u.is_finite() || !s.v.is_finite() {
            return Err(TfError::Numerical("scalar_flow diverged".into()));
        }
    }
    Ok(s)
}

/// Physical-space pair: the dispersionless flow acts pointwise and exits
/// every frequency ball, so the faithful object is the grid sample.
#[derive(Debug, Clone)]
pub struct PhysicalPair {
    pub m: usize,
    pub d: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// Apply the scalar flow at every collocation point of `p0`, sampled on a
/// grid of side `m` (must resolve the band of `p0`).
pub fn field_flow(p0: &PhasePair, k: u32, t: f64, tol: f64, m: usize) -> Result<PhysicalPair> {
    let d = p0.grid().dim();
    let u = p0.u.to_physical(m);
    let v = p0.v.to_physical(m);
    let pts = u.len();
    let flowed = map_indexed(pts, |i| {
        scalar_flow(ScalarState { u: u[i], v: v[i] }, k, t, tol).map(|s| (s.u, s.v))
    });
    let mut uu = Vec::with_capacity(pts);
    let mut vv = Vec::with_capacity(pts);
    for r in flowed {
        let (a, b) = r?;
        uu.push(a);
        vv.push(b);
    }
    Ok(PhysicalPair { m, d, u: uu, v: vv })
}

/// Orbit period through energy level `H0 > 0` by endpoint-stable
/// quadrature (see module docs).
pub fn period(h0: f64, k: u32) -> Result<f64> {
    if !(h0 > 0.0) {
        return Err(TfError::Config("period needs H0 > 0".into()));
    }
    let kf = k as f64;
    let umax = ((kf + 1.0) * h0).powf(1.0 / (kf + 1.0));
    // I = \int_0^1 (1 - y^{k+1})^{-1/2} dy with
    // 1 - y^{k+1} = (1 - y)(1 + y + ... + y^k) evaluated through the
    // distance-to-endpoint argument for full precision at y -> 1.
    let integral = tanh_sinh_endpoint(
        |y, _, db| {
            let poly: f64 = (0..=k).map(|j| y.powi(j as i32)).sum();
            1.0 / (db * poly).sqrt()
        },
        0.0,
        1.0,
        1e-14,
    );
    Ok(4.0 * umax / (2.0 * h0).sqrt() * integral)
}

/// Partial-orbit time
/// `Delta(v0) = \int_{v0}^{sqrt(2 H0)} ((k+1)(H0 - v^2/2))^{-k/(k+1)} dv`,
/// the time from the `|v| = v0` crossing to the `u = 0` crossing;
/// `Delta(0) = T/4`.
pub fn delta_offset(v0_abs: f64, h0: f64, k: u32) -> Result<f64> {
    if !(h0 > 0.0) {
        return Err(TfError::Config("delta_offset needs H0 > 0".into()));
    }
    let vmax = (2.0 * h0).sqrt();
    if !(0.0..=vmax * (1.0 + 1e-12)).contains(&v0_abs) {
        return Err(TfError::Config(format!(
            "v0_abs = {v0_abs} outside [0, sqrt(2 H0) = {vmax}]"
        )));
    }
    if (v0_abs - vmax).abs() < 1e-300 {
        return Ok(0.0);
    }
    let kf = k as f64;
    let e = kf / (kf + 1.0);
    // H0 - v^2/2 = (vmax - v)(vmax + v)/2; db = vmax - v.
    let val = tanh_sinh_endpoint(
        |v, _, db| ((kf + 1.0) * 0.5 * db * (vmax + v)).powf(-e),
        v0_abs,
        vmax,
        1e-14,
    );
    Ok(val)
}

/// ODE return time to the starting point `(u_max, 0)`: twice the time of
/// the first `v`-axis crossing (half period), located by bisection on
/// re-integrated mini-flows.
pub fn return_time(h0: f64, k: u32, tol: f64) -> Result<f64> {
    let kf = k as f64;
    let umax = ((kf + 1.0) * h0).powf(1.0 / (kf + 1.0));
    let start = ScalarState { u: umax, v: 0.0 };
    // March until v changes sign from negative back through zero (i.e. u
    // hits the opposite extremum): first v-zero after t = 0.
    let mut t = 0.0;
    let mut s = start;
    let step = 0.05 * period_rough(h0, k);
    let (mut ta, mut tb) = (0.0, 0.0);
    let mut prev_v = 0.0;
    for i in 1..100_000 {
        let next = scalar_flow(s, k, step, tol)?;
        let tn = t + step;
        // Skip the initial point where v = 0; look for the next crossing.
        if i > 1 && prev_v < 0.0 && next.v >= 0.0 {
            ta = t;
            tb = tn;
            break;
        }
        prev_v = next.v;
        s = next;
        t = tn;
        if i == 99_999 {
            return Err(TfError::Numerical("no return detected".into()));
        }
    }
    // Bisection for v(t) = 0 in [ta, tb] starting from the state at ta.
    let base = s;
    let (mut lo, mut hi) = (0.0, tb - ta);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let v = scalar_flow(base, k, mid, tol)?.v;
        if v < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 * (1.0 + ta) {
            break;
        }
    }
    Ok(2.0 * (ta + 0.5 * (lo + hi)))
}

fn period_rough(h0: f64, k: u32) -> f64 {
    let kf = k as f64;
    let umax = ((kf + 1.0) * h0).powf(1.0 / (kf + 1.0));
    // 2 pi-ish scale from the harmonic comparison; only used to pick a
    // marching step.
    (umax / (2.0 * h0).sqrt() * 4.0).max(1e-3)
}

/// Small-scale increment statistics of `d^r v / dx_1^r` at grid lags.
#[derive(Debug, Clone)]
pub struct LilReport {
    /// Lag magnitudes `h` (strictly decreasing).
    pub h_grid: Vec<f64>,
    /// Per-sample maxima of |increment| at each lag, normalized by
    /// `h^{s - r - 1/2} sqrt(log log 1/h)` (rows: samples).
    pub ratio_samples: Vec<Vec<f64>>,
    /// Mean over samples of log max-increment per lag.
    pub mean_log_max: Vec<f64>,
    /// OLS slope of mean log max-increment against log h.
    pub fitted_exponent: f64,
    /// Theoretical exponent `s - r - 1/2` for the first regime.
    pub theory_exponent: f64,
}

/// Sample the axis trace of `v` — the random series with coefficients
/// `<n>^{-s} h_n` over the one-dimensional frequency sub-lattice
/// `(n, 0, ..., 0)`, `|n| <= N`, which is the process the increment law
/// describes — differentiate `r` times, and record per-sample maxima of
/// increments at the given grid lags (in units of a circle grid of `m`
/// points).
pub fn lil_statistics(
    spec: &MeasureSpec,
    r: u32,
    samples: usize,
    lags: &[usize],
    m: usize,
    seed: u64,
) -> Result<LilReport> {
    if m < 2 * spec.n as usize + 1 {
        return Err(TfError::Config("grid too small for band".into()));
    }
    if lags.is_empty() || lags.windows(2).any(|w| w[1] >= w[0]) || lags.iter().any(|&l| l == 0) {
        return Err(TfError::Config(
            "lags must be nonzero, strictly decreasing grid multiples".into(),
        ));
    }
    if *lags.first().unwrap() >= m / 2 {
        return Err(TfError::Config("largest lag exceeds half the grid".into()));
    }
    let n_cut = spec.n as i32;
    let theory = spec.s - r as f64 - 0.5;
    let h_grid: Vec<f64> = lags.iter().map(|&l| TWO_PI * l as f64 / m as f64).collect();
    let rows: Vec<Vec<f64>> = map_indexed(samples, |i| {
        // Hermitian 1-d coefficient line c[j] for frequency j (negative
        // frequencies wrap at the top), with the same counter-stream
        // conventions as the full sampler.
        let mut coeffs = vec![Complex64::new(0.0, 0.0); m];
        for n in 0..=n_cut {
            let p = [n, 0, 0];
            let (a, b) = rng::normal_pair(seed, rng::tag::FIELD_V, rng::mode_key(&p), i as u64, 0);
            let g = if n == 0 {
                Complex64::new(a, 0.0)
            } else {
                Complex64::new(a, b) / std::f64::consts::SQRT_2
            };
            // d^r/dx^r: multiplier (i n)^r.
            let c = g * spec.weight_v(&p) * Complex64::new(0.0, n as f64).powu(r);
            coeffs[n as usize] = c;
            if n > 0 {
                coeffs[m - n as usize] = c.conj();
            }
        }
        crate::fft::transform_nd(&mut coeffs, 1, m, false);
        let phys: Vec<f64> = coeffs.iter().map(|c| c.re).collect();
        lags.iter()
            .map(|&l| {
                let mut best: f64 = 0.0;
                for j in 0..m {
                    let inc = (phys[(j + l) % m] - phys[j]).abs();
                    best = best.max(inc);
                }
                best
            })
            .collect()
    });
    let nl = lags.len();
    let mean_log_max: Vec<f64> = (0..nl)
        .map(|c| rows.iter().map(|row| row[c].ln()).sum::<f64>() / samples as f64)
        .collect();
    let logs_h: Vec<f64> = h_grid.iter().map(|h| h.ln()).collect();
    let fitted_exponent = ols_slope(&logs_h, &mean_log_max);
    let ratio_samples: Vec<Vec<f64>> = rows
        .iter()
        .map(|row| {
            row.iter()
                .zip(&h_grid)
                .map(|(&mx, &h)| {
                    let ll = (1.0 / h).ln().ln().max(0.5);
                    mx / (h.powf(theory) * ll.sqrt())
                })
                .collect()
        })
        .collect();
    Ok(LilReport {
        h_grid,
        ratio_samples,
        mean_log_max,
        fitted_exponent,
        theory_exponent: theory,
    })
}

/// `(d/dx_1)^r` as the complex multiplier `(i n_1)^r`.
pub fn apply_axis_derivative(f: &SpectralField, r: u32) -> SpectralField {
    if r == 0 {
        return f.clone();
    }
    let mut out = f.clone();
    let grid = f.grid().clone();
    for (idx, c) in out.coeffs_mut().iter_mut().enumerate() {
        let n1 = grid.point(idx)[0] as f64;
        let m = Complex64::new(0.0, n1).powu(r);
        *c *= m;
    }
    out
}
