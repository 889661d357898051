//! Variational upper bound on `-log Z_{s,N}` by drift optimization over
//! small parametric families of adapted controls.
//!
//! The cylindrical Brownian motion lives in the free real coordinates of
//! the Hermitian mode lattice, so the Girsanov cost density is exactly
//! `sum_{|n| <= N} |theta_hat(n)|^2` and the time-1 marginal of the
//! weighted path equals the Gaussian sampler's law. Drifted dynamics are
//! simulated directly (drift added to increments), which realizes the
//! tilted-measure expectation without importance reweighting.

use crate::energy::energy_breakdown;
use crate::flow::hamiltonian;
use crate::gaussian::{sample_hermitian_field, MeasureSpec};
use crate::parallel::map_indexed;
use crate::quad::mean_and_se;
use crate::rng;
use crate::spectral::{PhasePair, SpectralField};
use crate::estimates::McEstimate;
use crate::{Result, TfError};

/// Brownian increments per step for the two channels, unweighted: each
/// increment field has variance `dt` per free real coordinate.
#[derive(Debug, Clone)]
pub struct CylindricalPath {
    pub m_steps: usize,
    pub inc1: Vec<SpectralField>,
    pub inc2: Vec<SpectralField>,
}

/// Simulate one cylindrical path with `m` steps; `path_idx` feeds the
/// counter-based generator so paths are independent and reproducible.
pub fn simulate_path(spec: &MeasureSpec, m: usize, seed: u64, path_idx: u64) -> Result<CylindricalPath> {
    if m == 0 {
        return Err(TfError::Config("need at least one step".into()));
    }
    let grid = spec.grid();
    let dt = 1.0 / m as f64;
    let sd = dt.sqrt();
    let mut inc1 = Vec::with_capacity(m);
    let mut inc2 = Vec::with_capacity(m);
    for j in 0..m {
        let idx = path_idx * m as u64 + j as u64;
        inc1.push(sample_hermitian_field(&grid, |_| sd, seed, rng::tag::BROWNIAN_U, idx));
        inc2.push(sample_hermitian_field(&grid, |_| sd, seed, rng::tag::BROWNIAN_V, idx));
    }
    Ok(CylindricalPath { m_steps: m, inc1, inc2 })
}

/// Terminal weighted point `Y(1) = (w_u . X1(1), w_v . X2(1))` of an
/// undrifted path.
pub fn terminal_pair(path: &CylindricalPath, spec: &MeasureSpec) -> PhasePair {
    let grid = spec.grid();
    let mut x1 = SpectralField::zero(grid.clone());
    let mut x2 = SpectralField::zero(grid.clone());
    for j in 0..path.m_steps {
        x1.axpy(1.0, &path.inc1[j]);
        x2.axpy(1.0, &path.inc2[j]);
    }
    weight_pair(&x1, &x2, spec)
}

fn weight_pair(x1: &SpectralField, x2: &SpectralField, spec: &MeasureSpec) -> PhasePair {
    let grid = x1.grid().clone();
    let mut u = x1.clone();
    let mut v = x2.clone();
    for (i, c) in u.coeffs_mut().iter_mut().enumerate() {
        *c *= spec.weight_u(&grid.point(i));
    }
    for (i, c) in v.coeffs_mut().iter_mut().enumerate() {
        *c *= spec.weight_v(&grid.point(i));
    }
    PhasePair { u, v }
}

/// Parametric drift families. Parameters are real amplitudes per integer
/// radius bucket `floor(|n|)` and per channel, so every control field is
/// Hermitian by construction and feedback uses only the current state
/// (adaptedness is structural).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftFamily {
    /// theta_hat(n) = p[bucket(n)], constant over time.
    ConstantInTime,
    /// theta_hat(n) = -p[bucket(n)] X_hat(n) at each step (damping).
    PiecewiseStateFeedback,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct DriftPath {
    pub family: DriftFamily,
    pub m_steps: usize,
    /// Length `2 (N + 1)`: buckets for channel 1, then channel 2.
    pub params: Vec<f64>,
}

impl DriftPath {
    pub fn zero(family: DriftFamily, m_steps: usize, spec: &MeasureSpec) -> Self {
        DriftPath {
            family,
            m_steps,
            params: vec![0.0; 2 * (spec.n as usize + 1)],
        }
    }
}

fn bucket(grid: &crate::spectral::FrequencyGrid, i: usize) -> usize {
    grid.norm_sq(i).sqrt().floor() as usize
}

/// Pathwise objective `R(Y1 + I1) + E^q(Y + I) + (1/2) Int ||theta||^2 dt`
/// split into its three parts.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct ObjectiveParts {
    pub r_term: f64,
    pub e_q_term: f64,
    pub cost_term: f64,
    pub total: f64,
}

pub fn objective(path: &CylindricalPath, drift: &DriftPath, spec: &MeasureSpec) -> Result<ObjectiveParts> {
    if drift.m_steps != path.m_steps {
        return Err(TfError::Config("drift/path step mismatch".into()));
    }
    let grid = spec.grid();
    if path.inc1[0].grid().cutoff() != grid.cutoff() || path.inc1[0].grid().dim() != spec.d {
        return Err(TfError::Config("drift/path grid mismatch".into()));
    }
    let nb = spec.n as usize + 1;
    if drift.params.len() != 2 * nb {
        return Err(TfError::Config("drift parameter length mismatch".into()));
    }
    let m = path.m_steps;
    let dt = 1.0 / m as f64;
    let mut x1 = SpectralField::zero(grid.clone());
    let mut x2 = SpectralField::zero(grid.clone());
    let mut cost = 0.0;
    for j in 0..m {
        // theta for this step, per channel.
        let mut step_cost = 0.0;
        {
            let (p1, p2) = drift.params.split_at(nb);
            let apply = |x: &mut SpectralField, inc: &SpectralField, p: &[f64]| -> f64 {
                let g = x.grid().clone();
                let mut local = 0.0;
                for i in 0..g.len() {
                    let amp = p[bucket(&g, i)];
                    let theta = match drift.family {
                        DriftFamily::ConstantInTime => num_complex::Complex64::new(amp, 0.0),
                        DriftFamily::PiecewiseStateFeedback => -amp * x.coeffs()[i],
                    };
                    local += theta.norm_sqr();
                    let new = x.coeffs()[i] + inc.coeffs()[i] + theta * dt;
                    x.coeffs_mut()[i] = new;
                }
                local
            };
            step_cost += apply(&mut x1, &path.inc1[j], p1);
            step_cost += apply(&mut x2, &path.inc2[j], p2);
        }
        cost += step_cost * dt;
    }
    let pair = weight_pair(&x1, &x2, spec);
    let b = energy_breakdown(&pair, spec);
    let r_term = b.r_term;
    let e_q_term = hamiltonian(&pair, spec).powi(spec.q as i32);
    let cost_term = 0.5 * cost;
    Ok(ObjectiveParts {
        r_term,
        e_q_term,
        cost_term,
        total: r_term + e_q_term + cost_term,
    })
}

/// Mean objective over a path batch.
fn batch_objective(paths: &[CylindricalPath], drift: &DriftPath, spec: &MeasureSpec) -> Result<(f64, f64)> {
    let vals = map_indexed(paths.len(), |i| objective(&paths[i], drift, spec).map(|o| o.total));
    let mut xs = Vec::with_capacity(paths.len());
    for v in vals {
        xs.push(v?);
    }
    Ok(mean_and_se(&xs))
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct OptimizeResult {
    pub drift: DriftPath,
    /// Upper bound on -log Z from fresh paths at the optimized drift.
    pub bound: McEstimate,
    /// Objective at theta = 0 on the same fresh paths.
    pub zero_drift: McEstimate,
    /// (iteration, batch mean, batch std error) per accepted iterate.
    pub trace: Vec<(usize, f64, f64)>,
}

/// Finite-difference stochastic gradient descent on a fixed path batch
/// (common random numbers), with learning-rate backtracking; the final
/// bound is evaluated on fresh paths.
pub fn optimize_drift(
    spec: &MeasureSpec,
    m_steps: usize,
    family: DriftFamily,
    iters: usize,
    batch: usize,
    seed: u64,
) -> Result<OptimizeResult> {
    spec.validate()?;
    if batch < 2 {
        return Err(TfError::Config("need a batch of at least 2 paths".into()));
    }
    let train: Vec<CylindricalPath> = (0..batch)
        .map(|i| simulate_path(spec, m_steps, seed, i as u64))
        .collect::<Result<_>>()?;
    let mut drift = DriftPath::zero(family, m_steps, spec);
    let (mut best, se0) = batch_objective(&train, &drift, spec)?;
    let mut trace = vec![(0usize, best, se0)];
    let mut lr = 0.1;
    let dim = drift.params.len();
    for it in 1..=iters {
        // Central-difference gradient on the common batch.
        let grad: Vec<f64> = (0..dim)
            .map(|a| -> Result<f64> {
                let h = 1e-3 * (1.0 + drift.params[a].abs());
                let mut dp = drift.clone();
                dp.params[a] += h;
                let (up, _) = batch_objective(&train, &dp, spec)?;
                dp.params[a] = drift.params[a] - h;
                let (dn, _) = batch_objective(&train, &dp, spec)?;
                Ok((up - dn) / (2.0 * h))
            })
            .collect::<Result<_>>()?;
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !gnorm.is_finite() {
            return Err(TfError::Numerical(format!(
                "divergent optimization at iter {it}; trace: {trace:?}"
            )));
        }
        if gnorm < 1e-12 {
            break;
        }
        let mut cand = drift.clone();
        for (p, g) in cand.params.iter_mut().zip(&grad) {
            *p -= lr * g;
        }
        let (val, se) = batch_objective(&train, &cand, spec)?;
        if val <= best {
            drift = cand;
            best = val;
            lr *= 1.1;
            trace.push((it, val, se));
        } else {
            lr *= 0.5;
            if lr < 1e-10 {
                break;
            }
        }
    }
    // Fresh paths for an unbiased bound (indices past the training batch).
    let fresh = batch.max(64);
    let test: Vec<CylindricalPath> = (0..fresh)
        .map(|i| simulate_path(spec, m_steps, seed, (batch + i) as u64))
        .collect::<Result<_>>()?;
    let vals: Vec<f64> = test
        .iter()
        .map(|p| objective(p, &drift, spec).map(|o| o.total))
        .collect::<Result<_>>()?;
    let zero = DriftPath::zero(family, m_steps, spec);
    let zvals: Vec<f64> = test
        .iter()
        .map(|p| objective(p, &zero, spec).map(|o| o.total))
        .collect::<Result<_>>()?;
    Ok(OptimizeResult {
        drift,
        bound: McEstimate::from_values(&vals, None),
        zero_drift: McEstimate::from_values(&zvals, None),
        trace,
    })
}

/// Admissibility rule for the exponent q: the arithmetic
/// `(k-1)/(q(k+1)) + 1/r = 1` must admit `r > 1`, i.e.
/// `(k-1)/(q(k+1)) < 1`, which already holds at q = 1 for every odd
/// k >= 3. The default is therefore the smallest admissible integer.
pub fn q_admissible(q: u32, k: u32) -> bool {
    q >= 1 && (k as f64 - 1.0) / (q as f64 * (k as f64 + 1.0)) < 1.0
}

pub fn default_q(k: u32) -> u32 {
    (1..)
        .find(|&q| q_admissible(q, k))
        .expect("q = 1 is always admissible")
}
