//! The frequency-truncated wave flow
//! `d/dt u = v`, `d/dt v = Laplacian u - pi_N((pi_N u)^k)`,
//! with two integrators sharing the exact linear propagator:
//!
//! * `strang_split` (default): exact half rotation, exact nonlinear kick,
//!   exact half rotation — symmetric, symplectic, global error O(dt^2);
//! * `duhamel_rk4`: classical RK4 in the interaction (Duhamel) frame with
//!   the linear part applied exactly — global error O(dt^4).
//!
//! Modes above the cutoff `N` never see the nonlinearity and are rotated
//! exactly by the linear propagator.

use crate::gaussian::MeasureSpec;
use crate::spectral::{integral_of_product, power_projected, PhasePair, SpectralField};
use crate::{Result, TfError};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    StrangSplit,
    DuhamelRk4,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub spec: MeasureSpec,
    pub dt: f64,
    pub scheme: Scheme,
    pub t_final: f64,
    /// Snapshot stride in steps (0 = endpoints only).
    #[serde(default)]
    pub record_every: usize,
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if !(self.dt > 0.0) {
            return Err(TfError::Config("dt must be positive".into()));
        }
        if !self.t_final.is_finite() {
            return Err(TfError::Config("t_final must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<PhasePair>,
    pub hamiltonians: Vec<f64>,
    /// `H^sigma` pair norms at the monitoring exponent used by callers.
    pub norms: Vec<f64>,
    pub sigma_monitor: f64,
}

/// Abort threshold: defocusing odd-k dynamics cannot blow up, so a huge
/// coefficient signals numerical failure.
const ABORT_MAGNITUDE: f64 = 1e12;

/// Exact linear propagator: for `n != 0`
/// `(u, v) -> (cos(|n|t) u + sin(|n|t)/|n| v, -|n| sin(|n|t) u + cos(|n|t) v)`
/// and `(u0, v0) -> (u0 + t v0, v0)` at the zero mode (the limit value).
pub fn linear_propagate(p: &PhasePair, t: f64) -> PhasePair {
    let grid = p.grid().clone();
    let mut u = p.u.clone();
    let mut v = p.v.clone();
    for i in 0..grid.len() {
        let r = grid.norm_sq(i).sqrt();
        let (cu, cv) = (p.u.coeffs()[i], p.v.coeffs()[i]);
        if r == 0.0 {
            u.coeffs_mut()[i] = cu + t * cv;
            v.coeffs_mut()[i] = cv;
        } else {
            let (sin, cos) = (r * t).sin_cos();
            u.coeffs_mut()[i] = cos * cu + sin / r * cv;
            v.coeffs_mut()[i] = -r * sin * cu + cos * cv;
        }
    }
    PhasePair { u, v }
}

/// Nonlinear kick `v <- v - t pi_N((pi_N u)^k)` (exact for the kick field).
fn kick(p: &mut PhasePair, t: f64, spec: &MeasureSpec) {
    let n = spec.n.min(p.grid().cutoff());
    let un = p.u.project(n);
    let f = power_projected(&un, spec.k, n);
    let full = f.embed(p.grid().clone());
    p.v.axpy(-t, &full);
}

/// Nonlinear vector field `(0, -pi_N((pi_N u)^k))` as a pair.
fn nonlinear_rhs(p: &PhasePair, spec: &MeasureSpec) -> PhasePair {
    let n = spec.n.min(p.grid().cutoff());
    let un = p.u.project(n);
    let mut f = power_projected(&un, spec.k, n).embed(p.grid().clone());
    f.scale(-1.0);
    PhasePair {
        u: SpectralField::zero(p.grid().clone()),
        v: f,
    }
}

fn pair_axpy(a: &mut PhasePair, s: f64, b: &PhasePair) {
    a.u.axpy(s, &b.u);
    a.v.axpy(s, &b.v);
}

fn strang_step(p: &PhasePair, dt: f64, spec: &MeasureSpec) -> PhasePair {
    let mut q = linear_propagate(p, 0.5 * dt);
    kick(&mut q, dt, spec);
    linear_propagate(&q, 0.5 * dt)
}

/// One step of RK4 in the interaction frame `z(t) = L(-t) y(t)` with the
/// linear flow applied through exact multipliers (Lawson integrator).
fn duhamel_rk4_step(p: &PhasePair, dt: f64, spec: &MeasureSpec) -> PhasePair {
    let h = dt;
    let k1 = nonlinear_rhs(p, spec);
    // Stage at h/2: y = L(h/2)(y0 + h/2 k1'), with k1' = L(h/2) pulled in.
    let mut s2 = p.clone();
    pair_axpy(&mut s2, 0.5 * h, &k1);
    let k2 = {
        let y = linear_propagate(&s2, 0.5 * h);
        let f = nonlinear_rhs(&y, spec);
        linear_propagate(&f, -0.5 * h)
    };
    let mut s3 = p.clone();
    pair_axpy(&mut s3, 0.5 * h, &k2);
    let k3 = {
        let y = linear_propagate(&s3, 0.5 * h);
        let f = nonlinear_rhs(&y, spec);
        linear_propagate(&f, -0.5 * h)
    };
    let mut s4 = p.clone();
    pair_axpy(&mut s4, h, &k3);
    let k4 = {
        let y = linear_propagate(&s4, h);
        let f = nonlinear_rhs(&y, spec);
        linear_propagate(&f, -h)
    };
    let mut z = p.clone();
    pair_axpy(&mut z, h / 6.0, &k1);
    pair_axpy(&mut z, h / 3.0, &k2);
    pair_axpy(&mut z, h / 3.0, &k3);
    pair_axpy(&mut z, h / 6.0, &k4);
    linear_propagate(&z, h)
}

fn max_coeff(p: &PhasePair) -> f64 {
    p.u.coeffs()
        .iter()
        .chain(p.v.coeffs())
        .map(|c| c.norm())
        .fold(0.0, f64::max)
}

/// Truncated Hamiltonian
/// `E_N = 1/2 \int (|grad u_N|^2 + v_N^2) + 1/(k+1) \int u_N^{k+1}`.
pub fn hamiltonian(p: &PhasePair, spec: &MeasureSpec) -> f64 {
    let n = spec.n.min(p.grid().cutoff());
    let pn = p.project(n);
    let grid = pn.grid();
    let vol = grid.volume();
    let mut quad = 0.0;
    for i in 0..grid.len() {
        quad += grid.norm_sq(i) * pn.u.coeffs()[i].norm_sqr() + pn.v.coeffs()[i].norm_sqr();
    }
    let factors: Vec<&SpectralField> = (0..=spec.k as usize).map(|_| &pn.u).collect();
    0.5 * vol * quad + integral_of_product(&factors) / (spec.k as f64 + 1.0)
}

fn pair_sobolev(p: &PhasePair, sigma: f64) -> f64 {
    (p.u.sobolev_norm(sigma).powi(2) + p.v.sobolev_norm(sigma - 1.0).powi(2)).sqrt()
}

/// Integrate to `t_final` (sign gives the direction), recording
/// snapshots, Hamiltonians and `H^sigma` monitor norms.
pub fn evolve(p0: &PhasePair, cfg: &FlowConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let sigma = cfg.spec.s - 0.6; // monitor exponent below the sample class
    let dir = if cfg.t_final < 0.0 { -1.0 } else { 1.0 };
    let total = cfg.t_final.abs();
    let nsteps = (total / cfg.dt).round().max(0.0) as usize;
    let dt_eff = if nsteps == 0 { 0.0 } else { dir * total / nsteps as f64 };
    let mut times = vec![0.0];
    let mut snaps = vec![p0.clone()];
    let mut hams = vec![hamiltonian(p0, &cfg.spec)];
    let mut norms = vec![pair_sobolev(p0, sigma)];
    let mut state = p0.clone();
    for step in 1..=nsteps {
        state = match cfg.scheme {
            Scheme::StrangSplit => strang_step(&state, dt_eff, &cfg.spec),
            Scheme::DuhamelRk4 => duhamel_rk4_step(&state, dt_eff, &cfg.spec),
        };
        let t = dt_eff * step as f64;
        let mag = max_coeff(&state);
        if !mag.is_finite() || mag > ABORT_MAGNITUDE {
            return Err(TfError::Numerical(format!(
                "trajectory aborted at t = {t}: max coefficient {mag:e} (step {step}/{nsteps})"
            )));
        }
        let record = step == nsteps
            || (cfg.record_every > 0 && step % cfg.record_every == 0);
        if record {
            times.push(t);
            snaps.push(state.clone());
            hams.push(hamiltonian(&state, &cfg.spec));
            norms.push(pair_sobolev(&state, sigma));
        }
    }
    Ok(Trajectory {
        times,
        snapshots: snaps,
        hamiltonians: hams,
        norms,
        sigma_monitor: sigma,
    })
}

/// End state of the time-`t` flow map (convenience wrapper).
pub fn flow_map(p0: &PhasePair, t: f64, dt: f64, scheme: Scheme, spec: &MeasureSpec) -> Result<PhasePair> {
    let cfg = FlowConfig {
        spec: *spec,
        dt,
        scheme,
        t_final: t,
        record_every: 0,
    };
    Ok(evolve(p0, &cfg)?.snapshots.pop_unwrap())
}

trait PopUnwrap<T> {
    fn pop_unwrap(self) -> T;
}

impl<T> PopUnwrap<T> for Vec<T> {
    fn pop_unwrap(mut self) -> T {
        self.pop().expect("nonempty")
    }
}

/// Finite-difference Jacobian determinant of the time-`t_final` flow map
/// on the free real coordinates of the truncated pair, with one
/// Richardson extrapolation (`(4 J_{h/2} - J_h)/3`). Requires total real
/// dimension <= 20.
pub fn jacobian_volume_check(p0: &PhasePair, cfg: &FlowConfig, h: f64) -> Result<f64> {
    cfg.validate()?;
    let reps = free_coordinates(p0);
    let dim = reps.len();
    if dim > 20 {
        return Err(TfError::Config(format!(
            "jacobian check limited to 20 real dimensions, got {dim}"
        )));
    }
    let base = pack(p0, &reps);
    let map = |x: &[f64]| -> Result<Vec<f64>> {
        let p = unpack(p0, &reps, x);
        let out = flow_map(&p, cfg.t_final, cfg.dt, cfg.scheme, &cfg.spec)?;
        Ok(pack(&out, &reps))
    };
    let jac_at = |step: f64| -> Result<Vec<f64>> {
        let mut j = vec![0.0; dim * dim];
        for c in 0..dim {
            let mut xp = base.clone();
            let mut xm = base.clone();
            xp[c] += step;
            xm[c] -= step;
            let fp = map(&xp)?;
            let fm = map(&xm)?;
            for r in 0..dim {
                j[r * dim + c] = (fp[r] - fm[r]) / (2.0 * step);
            }
        }
        Ok(j)
    };
    let jh = jac_at(h)?;
    let jh2 = jac_at(0.5 * h)?;
    let richardson: Vec<f64> = jh2
        .iter()
        .zip(&jh)
        .map(|(a, b)| (4.0 * a - b) / 3.0)
        .collect();
    det_lu(&richardson, dim)
        .ok_or_else(|| TfError::Numerical("singular finite-difference Jacobian".into()))
}

/// Free real coordinates: (mode index, 0 = real / 1 = imag, field 0 = u /
/// 1 = v) over lexicographic positive representatives; the zero mode
/// contributes only its real part.
type Coord = (usize, u8, u8);

fn free_coordinates(p: &PhasePair) -> Vec<Coord> {
    let grid = p.grid();
    let mut reps = Vec::new();
    for i in 0..grid.len() {
        let pt = grid.point(i);
        let positive = pt
            .iter()
            .find(|&&c| c != 0)
            .map(|&c| c > 0)
            .unwrap_or(true);
        if !positive {
            continue;
        }
        let zero = pt == [0, 0, 0];
        for field in 0..2u8 {
            reps.push((i, 0, field));
            if !zero {
                reps.push((i, 1, field));
            }
        }
    }
    reps
}

fn pack(p: &PhasePair, reps: &[Coord]) -> Vec<f64> {
    reps.iter()
        .map(|&(i, part, field)| {
            let c = if field == 0 {
                p.u.coeffs()[i]
            } else {
                p.v.coeffs()[i]
            };
            if part == 0 {
                c.re
            } else {
                c.im
            }
        })
        .collect()
}

fn unpack(template: &PhasePair, reps: &[Coord], x: &[f64]) -> PhasePair {
    let mut p = template.clone();
    // Zero out, then fill Hermitian pairs from the free coordinates.
    for c in p.u.coeffs_mut().iter_mut() {
        *c = num_complex::Complex64::default();
    }
    for c in p.v.coeffs_mut().iter_mut() {
        *c = num_complex::Complex64::default();
    }
    let grid = template.grid().clone();
    for (&(i, part, field), &val) in reps.iter().zip(x) {
        let f = if field == 0 { &mut p.u } else { &mut p.v };
        let mut c = f.coeffs()[i];
        if part == 0 {
            c.re = val;
        } else {
            c.im = val;
        }
        f.coeffs_mut()[i] = c;
        let j = grid.negate_index(i);
        if j != i {
            f.coeffs_mut()[j] = c.conj();
        }
    }
    p
}

/// LU determinant with partial pivoting; `None` on exact singularity.
fn det_lu(a: &[f64], n: usize) -> Option<f64> {
    let mut m = a.to_vec();
    let mut det = 1.0;
    for col in 0..n {
        let (piv, &pval) = m
            .iter()
            .enumerate()
            .skip(col * n + col)
            .step_by(n)
            .take(n - col)
            .map(|(i, v)| ((i - col * n - col) / n + col, v))
            .fold((col, &m[col * n + col]), |best, (r, v)| {
                if v.abs() > best.1.abs() {
                    (r, v)
                } else {
                    best
                }
            });
        if pval == 0.0 {
            return None;
        }
        if piv != col {
            for c in 0..n {
                m.swap(col * n + c, piv * n + c);
            }
            det = -det;
        }
        let d = m[col * n + col];
        det *= d;
        for r in col + 1..n {
            let f = m[r * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                m[r * n + c] -= f * m[col * n + c];
            }
        }
    }
    Some(det)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{sample_indexed, MeasureSpec, Variant};
    use crate::quad::ols_slope;
    use crate::spectral::{FrequencyGrid, TWO_PI};
    use approx::assert_relative_eq;
    use num_complex::Complex64;

    fn spec(d: usize, k: u32, n: u32) -> MeasureSpec {
        MeasureSpec {
            d,
            s: 2.6,
            k,
            n,
            q: 1,
            variant: Variant::Nu,
        }
    }

    fn small_sample(sp: &MeasureSpec, seed: u64, amp: f64) -> crate::spectral::PhasePair {
        let mut p = sample_indexed(sp, seed, 0).pair;
        p.u.scale(amp);
        p.v.scale(amp);
        p
    }

    #[test]
    fn hamiltonian_examples() {
        let sp = spec(2, 3, 4);
        let grid = FrequencyGrid::new(2, 4);
        let zero = PhasePair::zero(grid.clone());
        assert_eq!(hamiltonian(&zero, &sp), 0.0);
        // Constant u = c: (2pi)^2 c^4 / 4.
        let mut p = PhasePair::zero(grid.clone());
        p.u.set_coeff(&[0, 0, 0], Complex64::new(0.7, 0.0));
        assert_relative_eq!(
            hamiltonian(&p, &sp),
            TWO_PI.powi(2) * 0.7f64.powi(4) / 4.0,
            max_relative = 1e-12
        );
        // u = cos(x1): 1/2 vol/2 + 1/4 * 3/8 vol.
        let mut p = PhasePair::zero(grid.clone());
        p.u.set_hermitian_pair(&[1, 0, 0], Complex64::new(0.5, 0.0));
        let vol = TWO_PI.powi(2);
        assert_relative_eq!(
            hamiltonian(&p, &sp),
            0.25 * vol + 0.25 * vol * 3.0 / 8.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn zero_is_fixed_point_and_linear_small_amplitude() {
        let sp = spec(2, 3, 6);
        let grid = FrequencyGrid::new(2, 6);
        let cfg = FlowConfig {
            spec: sp,
            dt: 1e-2,
            scheme: Scheme::StrangSplit,
            t_final: 0.5,
            record_every: 0,
        };
        let traj = evolve(&PhasePair::zero(grid.clone()), &cfg).unwrap();
        assert!(traj.snapshots.last().unwrap().u.coeffs().iter().all(|c| c.norm() == 0.0));
        // Amplitude-eps data: distance to the linear propagator ~ eps^k.
        let base = small_sample(&sp, 42, 1.0);
        let mut logs_eps = Vec::new();
        let mut logs_err = Vec::new();
        for &eps in &[0.1f64, 0.05, 0.025] {
            let mut p = base.clone();
            p.u.scale(eps);
            p.v.scale(eps);
            let nl = flow_map(&p, 0.5, 1e-3, Scheme::DuhamelRk4, &sp).unwrap();
            let lin = linear_propagate(&p, 0.5);
            let mut diff = nl.clone();
            diff.u.axpy(-1.0, &lin.u);
            diff.v.axpy(-1.0, &lin.v);
            let err = (diff.u.l2_norm_sq() + diff.v.l2_norm_sq()).sqrt();
            logs_eps.push(eps.ln());
            logs_err.push(err.ln());
        }
        let slope = ols_slope(&logs_eps, &logs_err);
        assert!((slope - 3.0).abs() < 0.2, "slope {slope}");
    }

    #[test]
    fn strang_second_order_and_reversible() {
        let sp = spec(2, 3, 6);
        let p0 = small_sample(&sp, 7, 0.3);
        // Reference with tiny RK4 steps.
        let reference = flow_map(&p0, 0.3, 1e-3, Scheme::DuhamelRk4, &sp).unwrap();
        let mut logs_dt = Vec::new();
        let mut logs_err = Vec::new();
        for &dt in &[1e-2f64, 5e-3, 2.5e-3] {
            let got = flow_map(&p0, 0.3, dt, Scheme::StrangSplit, &sp).unwrap();
            let mut diff = got.clone();
            diff.u.axpy(-1.0, &reference.u);
            diff.v.axpy(-1.0, &reference.v);
            logs_dt.push(dt.ln());
            logs_err.push((diff.u.l2_norm_sq() + diff.v.l2_norm_sq()).sqrt().ln());
        }
        let slope = ols_slope(&logs_dt, &logs_err);
        assert!((slope - 2.0).abs() < 0.15, "slope {slope}");
        // Reversibility: forward then backward returns to start.
        let fw = flow_map(&p0, 0.3, 1e-2, Scheme::StrangSplit, &sp).unwrap();
        let bw = flow_map(&fw, -0.3, 1e-2, Scheme::StrangSplit, &sp).unwrap();
        let mut diff = bw.clone();
        diff.u.axpy(-1.0, &p0.u);
        diff.v.axpy(-1.0, &p0.v);
        let defect = (diff.u.l2_norm_sq() + diff.v.l2_norm_sq()).sqrt();
        assert!(defect < 1e-10, "reversibility defect {defect}");
    }

    #[test]
    fn duhamel_fourth_order() {
        let sp = spec(2, 3, 4);
        let p0 = small_sample(&sp, 9, 0.4);
        let reference = flow_map(&p0, 0.25, 1e-4, Scheme::DuhamelRk4, &sp).unwrap();
        let mut logs_dt = Vec::new();
        let mut logs_err = Vec::new();
        for &dt in &[2e-2f64, 1e-2, 5e-3] {
            let got = flow_map(&p0, 0.25, dt, Scheme::DuhamelRk4, &sp).unwrap();
            let mut diff = got.clone();
            diff.u.axpy(-1.0, &reference.u);
            diff.v.axpy(-1.0, &reference.v);
            logs_dt.push(dt.ln());
            logs_err.push((diff.u.l2_norm_sq() + diff.v.l2_norm_sq()).sqrt().ln());
        }
        let slope = ols_slope(&logs_dt, &logs_err);
        assert!((slope - 4.0).abs() < 0.4, "slope {slope}");
    }

    #[test]
    fn high_modes_evolve_linearly() {
        // State on a bigger grid than the nonlinear cutoff: modes above N
        // must match the exact rotation coefficient-wise.
        let sp = spec(2, 3, 3);
        let big = FrequencyGrid::new(2, 6);
        let mut p0 = PhasePair::zero(big.clone());
        p0.u.set_hermitian_pair(&[5, 1, 0], Complex64::new(0.3, -0.2));
        p0.v.set_hermitian_pair(&[5, 1, 0], Complex64::new(0.1, 0.4));
        p0.u.set_hermitian_pair(&[1, 0, 0], Complex64::new(0.5, 0.0));
        let t = 0.7;
        let got = flow_map(&p0, t, 1e-3, Scheme::StrangSplit, &sp).unwrap();
        let lin = linear_propagate(&p0, t);
        for m in [[5i32, 1, 0], [-5, -1, 0]] {
            assert!((got.u.coeff(&m) - lin.u.coeff(&m)).norm() < 1e-12);
            assert!((got.v.coeff(&m) - lin.v.coeff(&m)).norm() < 1e-12);
        }
    }

    #[test]
    fn jacobian_determinants() {
        let sp = spec(2, 3, 1);
        let grid = FrequencyGrid::new(2, 1);
        let mut p0 = PhasePair::zero(grid.clone());
        p0.u.set_hermitian_pair(&[1, 0, 0], Complex64::new(0.2, 0.1));
        p0.v.set_coeff(&[0, 0, 0], Complex64::new(0.3, 0.0));
        // t = 0: exact identity.
        let cfg0 = FlowConfig {
            spec: sp,
            dt: 1e-3,
            scheme: Scheme::StrangSplit,
            t_final: 0.0,
            record_every: 0,
        };
        let d0 = jacobian_volume_check(&p0, &cfg0, 1e-4).unwrap();
        assert_relative_eq!(d0, 1.0, epsilon = 1e-10);
        // t = 0.5: volume preserved to FD accuracy.
        let cfg = FlowConfig { t_final: 0.5, ..cfg0 };
        let d = jacobian_volume_check(&p0, &cfg, 1e-4).unwrap();
        assert!((d - 1.0).abs() < 1e-6, "det {d}");
    }

    #[test]
    fn abort_on_blowup_threshold() {
        let sp = spec(2, 3, 2);
        let grid = FrequencyGrid::new(2, 2);
        let mut p0 = PhasePair::zero(grid);
        p0.u.set_coeff(&[0, 0, 0], Complex64::new(1e13, 0.0));
        let cfg = FlowConfig {
            spec: sp,
            dt: 1e-2,
            scheme: Scheme::StrangSplit,
            t_final: 0.1,
            record_every: 0,
        };
        assert!(evolve(&p0, &cfg).is_err());
    }
}
