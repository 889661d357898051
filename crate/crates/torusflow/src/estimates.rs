//! Monte-Carlo and brute-force verification lab: moment growth of
//! Hölder-norm functionals under the Gaussian measures, lattice
//! convolution sums with rigorous tail bounds, log-space partition
//! function estimation uniform in the frequency cutoff, and finite-N
//! transport diagnostics comparing a forward flow estimator against the
//! exact change-of-variables weight.
//!
//! All estimators are sample-parallel with per-sample counter-based
//! seeds, so results are bit-identical for any worker count.

use crate::energy::{dt_energy_rhs, energy_breakdown, gaussian_quadratic_form};
use crate::flow::{flow_map, hamiltonian, Scheme};
use crate::gaussian::{sample_indexed, MeasureSpec};
use crate::lp::{holder_norm, DyadicSystem};
use crate::parallel::map_indexed;
use crate::quad::{log_mean_exp, mean_and_se, ols_slope, tanh_sinh_endpoint};
use crate::spectral::{product_projected, weighted_pair_norm_sq, PhasePair};
use crate::{Result, TfError};

/// A Monte-Carlo point estimate with its standard error.
#[derive(Debug, Clone, serde::Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
    /// Moment order, where applicable.
    pub p: Option<f64>,
}

impl McEstimate {
    pub fn from_values(xs: &[f64], p: Option<f64>) -> Self {
        let (mean, std_error) = mean_and_se(xs);
        McEstimate {
            mean,
            std_error,
            samples: xs.len(),
            p,
        }
    }
}

/// Scalar functionals of a Gaussian sample whose p-th moment growth is
/// probed.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ChaosFunctional {
    /// Hölder norm of `u` at exponent `s - 1/2 - eps`.
    HolderU,
    /// Hölder norm of `v` at exponent `s - 3/2 - eps`.
    HolderV,
    /// Hölder norm of the de-aliased product `D^{s-alpha}v . D^{s+1-beta}u`
    /// at exponent `min(alpha - 3/2, beta - 3/2, alpha + beta - 3) - eps`.
    ProductField { alpha: f64, beta: f64 },
    /// `|dt_energy_rhs|` restricted to the weighted-norm ball of radius
    /// `r_factor` times the sample median norm.
    DtRhsBounded { r_factor: f64 },
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ChaosReport {
    pub p_list: Vec<u32>,
    /// Centered norms `||X - mean X||_p` per p.
    pub centered: Vec<McEstimate>,
    /// Raw norms `||X||_p` per p.
    pub raw: Vec<McEstimate>,
    /// OLS slope of log centered norm against log p.
    pub fitted_exponent: f64,
    /// OLS slope of log raw norm against log p.
    pub fitted_exponent_raw: f64,
    /// MC mean of the squared L^2 norm of the underlying field.
    pub l2_mc: McEstimate,
    /// Exact lattice-sum value of the same second moment.
    pub l2_exact: f64,
}

/// Moment growth `||X||_{L^p}` of a chaos functional, with the exact
/// second-moment lattice sum as a cross-check anchor.
pub fn chaos_moment_growth(
    spec: &MeasureSpec,
    functional: ChaosFunctional,
    p_list: &[u32],
    samples: usize,
    seed: u64,
    eps: f64,
) -> Result<ChaosReport> {
    spec.validate()?;
    if p_list.is_empty() || p_list.iter().any(|&p| p == 0 || p % 2 != 0 || p > 16) {
        return Err(TfError::Config(
            "p_list must be even integers in [2, 16]".into(),
        ));
    }
    let max_p = *p_list.iter().max().unwrap() as usize;
    if samples < 50 * max_p {
        return Err(TfError::Config(format!(
            "need at least {} samples for p = {max_p} (heavy-tail guard)",
            50 * max_p
        )));
    }
    if !(eps > 0.0) {
        return Err(TfError::Config("eps must be positive".into()));
    }
    // Exponent validity per functional.
    match functional {
        ChaosFunctional::HolderU => {
            if spec.s - 0.5 - eps <= 0.0 {
                return Err(TfError::Config("holder_u exponent not positive".into()));
            }
        }
        ChaosFunctional::HolderV => {
            if spec.s - 1.5 - eps <= 0.0 {
                return Err(TfError::Config("holder_v exponent not positive".into()));
            }
        }
        ChaosFunctional::ProductField { alpha, beta } => {
            let gamma = (alpha - 1.5).min(beta - 1.5).min(alpha + beta - 3.0) - eps;
            if gamma <= 0.0 {
                return Err(TfError::Config("product field exponent not positive".into()));
            }
        }
        ChaosFunctional::DtRhsBounded { r_factor } => {
            if !(r_factor > 0.0) {
                return Err(TfError::Config("r_factor must be positive".into()));
            }
        }
    }
    let grid = spec.grid();
    let sys_ball = DyadicSystem::new(grid.clone());
    // Per sample: (functional value, squared L^2 norm of the underlying
    // field, gating norm for the bounded variant).
    let rows: Vec<(f64, f64, f64)> = map_indexed(samples, |i| {
        let pair = sample_indexed(spec, seed, i as u64).pair;
        match functional {
            ChaosFunctional::HolderU => {
                let x = holder_norm(&pair.u, spec.s - 0.5 - eps, &sys_ball);
                (x, pair.u.l2_norm_sq(), 0.0)
            }
            ChaosFunctional::HolderV => {
                let x = holder_norm(&pair.v, spec.s - 1.5 - eps, &sys_ball);
                (x, pair.v.l2_norm_sq(), 0.0)
            }
            ChaosFunctional::ProductField { alpha, beta } => {
                let a = pair.v.fractional_laplacian(spec.s - alpha);
                let b = pair.u.fractional_laplacian(spec.s + 1.0 - beta);
                // out-cutoff 2N keeps the full product band: the L^2
                // anchor is exact. The Hölder norm is taken of the
                // N-ball projection (same chaos degree, resolvable on
                // the measure's own dyadic system).
                let prod = product_projected(&[&a, &b], 2 * spec.n);
                let gamma = (alpha - 1.5).min(beta - 1.5).min(alpha + beta - 3.0) - eps;
                let x = holder_norm(&prod.project(spec.n), gamma, &sys_ball);
                (x, prod.l2_norm_sq(), 0.0)
            }
            ChaosFunctional::DtRhsBounded { .. } => {
                let x = dt_energy_rhs(&pair, spec).abs();
                let norm = weighted_pair_norm_sq(&pair, spec.s).sqrt();
                (x, pair.u.l2_norm_sq(), norm)
            }
        }
    });
    let mut values: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let l2_values: Vec<f64> = rows.iter().map(|r| r.1).collect();
    // Ball gating for the bounded dt-rhs variant: zero outside B_R with
    // R = r_factor x median gating norm.
    if let ChaosFunctional::DtRhsBounded { r_factor } = functional {
        let mut norms: Vec<f64> = rows.iter().map(|r| r.2).collect();
        norms.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let radius = r_factor * norms[norms.len() / 2];
        for (val, row) in values.iter_mut().zip(&rows) {
            if row.2 > radius {
                *val = 0.0;
            }
        }
    }
    let mean_x = values.iter().sum::<f64>() / samples as f64;
    let moment_norm = |xs: &[f64], p: u32| -> McEstimate {
        let pf = p as f64;
        let powered: Vec<f64> = xs.iter().map(|&x| x.abs().powi(p as i32)).collect();
        let (mp, se_mp) = mean_and_se(&powered);
        if mp <= 0.0 {
            return McEstimate {
                mean: 0.0,
                std_error: 0.0,
                samples: xs.len(),
                p: Some(pf),
            };
        }
        // Delta method: d(m^{1/p})/dm = m^{1/p - 1} / p.
        McEstimate {
            mean: mp.powf(1.0 / pf),
            std_error: se_mp * mp.powf(1.0 / pf - 1.0) / pf,
            samples: xs.len(),
            p: Some(pf),
        }
    };
    let centered_vals: Vec<f64> = values.iter().map(|&x| x - mean_x).collect();
    let centered: Vec<McEstimate> = p_list.iter().map(|&p| moment_norm(&centered_vals, p)).collect();
    let raw: Vec<McEstimate> = p_list.iter().map(|&p| moment_norm(&values, p)).collect();
    let log_p: Vec<f64> = p_list.iter().map(|&p| (p as f64).ln()).collect();
    let fit = |ms: &[McEstimate]| {
        let logs: Vec<f64> = ms.iter().map(|m| m.mean.max(1e-300).ln()).collect();
        ols_slope(&log_p, &logs)
    };
    let l2_exact = exact_l2_second_moment(spec, functional);
    Ok(ChaosReport {
        p_list: p_list.to_vec(),
        fitted_exponent: fit(&centered),
        fitted_exponent_raw: fit(&raw),
        centered,
        raw,
        l2_mc: McEstimate::from_values(&l2_values, Some(2.0)),
        l2_exact,
    })
}

/// Exact `E ||field||_{L^2}^2` by lattice summation: each mode
/// contributes `vol . w(n)^2`, and for the product field stationarity
/// plus independence of `u` and `v` give
/// `vol . E[a(0)^2] . E[b(0)^2]` with pointwise second moments summing
/// `|n|^{2 sigma} w(n)^2` over the ball.
pub fn exact_l2_second_moment(spec: &MeasureSpec, functional: ChaosFunctional) -> f64 {
    let grid = spec.grid();
    let vol = grid.volume();
    let sum_weighted = |sigma: f64, w: &dyn Fn(&[i32; 3]) -> f64| -> f64 {
        (0..grid.len())
            .map(|i| {
                let p = grid.point(i);
                let r2 = grid.norm_sq(i);
                if r2 == 0.0 {
                    // Fractional multipliers annihilate the zero mode.
                    if sigma == 0.0 {
                        w(&p).powi(2)
                    } else {
                        0.0
                    }
                } else {
                    r2.powf(sigma) * w(&p).powi(2)
                }
            })
            .sum()
    };
    match functional {
        ChaosFunctional::HolderU | ChaosFunctional::DtRhsBounded { .. } => {
            vol * sum_weighted(0.0, &|p| spec.weight_u(p))
        }
        ChaosFunctional::HolderV => vol * sum_weighted(0.0, &|p| spec.weight_v(p)),
        ChaosFunctional::ProductField { alpha, beta } => {
            let sv = sum_weighted(spec.s - alpha, &|p| spec.weight_v(p));
            let su = sum_weighted(spec.s + 1.0 - beta, &|p| spec.weight_u(p));
            vol * sv * su
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ConvolutionReport {
    pub n: [i32; 3],
    pub alpha: f64,
    pub beta: f64,
    pub m_cut: i64,
    /// Brute-force sum over the cube |n1|_inf <= M.
    pub cube_sum: f64,
    /// Rigorous upper bound on the omitted tail.
    pub tail_bound: f64,
    /// (cube_sum + tail_bound) / <n>^{-min(2a, 2b, 2a+2b-3) + eps}.
    pub bound_ratio: f64,
    /// Region decomposition of the cube sum:
    /// A1: |n1| <= |n|/2; A2: |n - n1| <= |n|/2 (excluding A1);
    /// A3: remaining |n1| <= 2|n|; A4: the rest of the cube.
    pub regions: [f64; 4],
}

/// Brute-force convolution sum
/// `sum_{n1} <n1>^{-2 alpha} <n - n1>^{-2 beta}` in d = 3 with a rigorous
/// radial-integral tail bound, compared against the expected decay
/// `<n>^{-min(2a, 2b, 2a+2b-3) + eps}`.
pub fn convolution_sum(
    n: [i32; 3],
    alpha: f64,
    beta: f64,
    m_cut: i64,
    eps: f64,
) -> Result<ConvolutionReport> {
    if alpha < 0.0 || beta < 0.0 || 2.0 * alpha + 2.0 * beta <= 3.0 {
        return Err(TfError::Config(
            "need alpha, beta >= 0 and 2 alpha + 2 beta > 3".into(),
        ));
    }
    let n_norm = ((n[0] * n[0] + n[1] * n[1] + n[2] * n[2]) as f64).sqrt();
    if m_cut < (2.0 * n_norm).ceil() as i64 + 4 {
        return Err(TfError::Config("cutoff must be at least 2|n| + 4".into()));
    }
    // Tabulate <r^2>^{-a} by squared norm to avoid per-term powf.
    let reach = (m_cut + n_norm.ceil() as i64 + 1) as usize;
    let max_r2 = 3 * reach * reach + 1;
    let table = |e: f64| -> Vec<f64> {
        (0..=max_r2).map(|r2| (1.0 + r2 as f64).powf(-e)).collect()
    };
    let ta = table(alpha);
    let tb = table(beta);
    let half = n_norm / 2.0;
    let m = m_cut as i32;
    let rows: Vec<[f64; 4]> = map_indexed((2 * m as usize) + 1, |row| {
        let x = row as i32 - m;
        let mut acc = [0.0f64; 4];
        for y in -m..=m {
            for z in -m..=m {
                let r2_1 = (x * x + y * y + z * z) as usize;
                let dx = n[0] - x;
                let dy = n[1] - y;
                let dz = n[2] - z;
                let r2_2 = (dx * dx + dy * dy + dz * dz) as usize;
                let term = ta[r2_1] * tb[r2_2];
                let r1 = (r2_1 as f64).sqrt();
                let r2 = (r2_2 as f64).sqrt();
                let region = if r1 <= half {
                    0
                } else if r2 <= half {
                    1
                } else if r1 <= 2.0 * n_norm {
                    2
                } else {
                    3
                };
                acc[region] += term;
            }
        }
        acc
    });
    let mut regions = [0.0f64; 4];
    for r in &rows {
        for (dst, v) in regions.iter_mut().zip(r) {
            *dst += v;
        }
    }
    let cube_sum: f64 = regions.iter().sum();
    // Outside the cube |n1| >= M + 1 >= 2|n| + 5, so
    // <n - n1> >= <n1>/2 and the tail is bounded by
    // 2^{2 beta} sum_{|n1| > M} <n1>^{-2(alpha + beta)}, compared with
    // the radial integral 4 pi Int_{M + 1 - sqrt3} r^2 <r - sqrt3>^{-2c} dr.
    let c = alpha + beta;
    let sqrt3 = 3f64.sqrt();
    let a0 = m_cut as f64 + 1.0 - sqrt3;
    // Substitute r = a0 / y to map onto (0, 1]; integrable since 2c > 3.
    let radial = tanh_sinh_endpoint(
        |y, _, _| {
            let r = a0 / y;
            let t = r - sqrt3;
            a0 / (y * y) * r * r * (1.0 + t * t).powf(-c)
        },
        0.0,
        1.0,
        1e-12,
    );
    let tail_bound = 4f64.powf(beta) * 4.0 * std::f64::consts::PI * radial;
    let exponent = (2.0 * alpha).min(2.0 * beta).min(2.0 * alpha + 2.0 * beta - 3.0) - eps;
    let target = (1.0 + n_norm * n_norm).powf(-exponent / 2.0);
    Ok(ConvolutionReport {
        n,
        alpha,
        beta,
        m_cut,
        cube_sum,
        tail_bound,
        bound_ratio: (cube_sum + tail_bound) / target,
        regions,
    })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct PartitionReport {
    pub n_list: Vec<u32>,
    /// log Z_N with a delta-method standard error, per N.
    pub log_z: Vec<McEstimate>,
    /// log L^p norms (1/p) log E[e^{p F}] for p in {1, 2, 4}, per N.
    pub lp_log_norms: Vec<[f64; 3]>,
    /// Jensen lower bound -E[R] - E[E^q] on log Z, per N.
    pub jensen_rhs: Vec<McEstimate>,
    /// log ||e^{F_N} - e^{F_N'}||_{L^2} for consecutive N pairs.
    pub l2_diffs: Vec<f64>,
}

/// Per-sample partition exponent `F = -R - E^q` for the truncation of a
/// pair to the ball of radius `n`.
fn partition_exponent(pair: &PhasePair, spec: &MeasureSpec, n: u32) -> (f64, f64) {
    let sub = MeasureSpec { n, ..spec.clone() };
    let truncated = pair.project(n);
    let b = energy_breakdown(&truncated, &sub);
    let r_plus_eq = b.r_term + hamiltonian(&truncated, &sub).powi(spec.q as i32);
    (-r_plus_eq, r_plus_eq)
}

/// Coupled Monte-Carlo estimate of `Z_{s,N} = E[e^{-R_N - E_N^q}]` across
/// a ladder of cutoffs: fields are drawn once at the largest N and
/// truncated, so N-to-N variation reflects truncation rather than MC
/// noise. Everything is accumulated in log space.
pub fn partition_function(
    spec: &MeasureSpec,
    samples: usize,
    n_list: &[u32],
    seed: u64,
) -> Result<PartitionReport> {
    if n_list.is_empty() || n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(TfError::Config("n_list must be strictly increasing".into()));
    }
    if samples < 2 {
        return Err(TfError::Config("need at least 2 samples".into()));
    }
    let n_max = *n_list.last().unwrap();
    let master = MeasureSpec {
        n: n_max,
        ..spec.clone()
    };
    master.validate()?;
    // rows[i] = per-N (F, R + E^q) for sample i.
    let rows: Vec<Vec<(f64, f64)>> = map_indexed(samples, |i| {
        let pair = sample_indexed(&master, seed, i as u64).pair;
        n_list
            .iter()
            .map(|&n| partition_exponent(&pair, spec, n))
            .collect()
    });
    let mut log_z = Vec::new();
    let mut lp_log_norms = Vec::new();
    let mut jensen_rhs = Vec::new();
    for (j, _) in n_list.iter().enumerate() {
        let f: Vec<f64> = rows.iter().map(|r| r[j].0).collect();
        let lz = log_mean_exp(&f);
        // SE of log-mean via normalized weights e^{F - log Z}.
        let w: Vec<f64> = f.iter().map(|&x| (x - lz).exp()).collect();
        let (_, se_w) = mean_and_se(&w);
        log_z.push(McEstimate {
            mean: lz,
            std_error: se_w,
            samples,
            p: None,
        });
        let lp: Vec<f64> = [1.0, 2.0, 4.0]
            .iter()
            .map(|&p| {
                let scaled: Vec<f64> = f.iter().map(|&x| p * x).collect();
                log_mean_exp(&scaled) / p
            })
            .collect();
        lp_log_norms.push([lp[0], lp[1], lp[2]]);
        let req: Vec<f64> = rows.iter().map(|r| r[j].1).collect();
        let (m, se) = mean_and_se(&req);
        jensen_rhs.push(McEstimate {
            mean: -m,
            std_error: se,
            samples,
            p: None,
        });
    }
    // log ||e^{F_N} - e^{F_N'}||_2 = (1/2) log mean (e^{F_N} - e^{F_N'})^2,
    // with each squared difference kept in log form.
    let mut l2_diffs = Vec::new();
    for j in 0..n_list.len() - 1 {
        let log_sq: Vec<f64> = rows
            .iter()
            .map(|r| {
                let (fa, fb) = (r[j].0, r[j + 1].0);
                let hi = fa.max(fb);
                let delta = (fa - fb).abs();
                if delta == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    2.0 * hi + 2.0 * (-(-delta).exp_m1()).ln()
                }
            })
            .collect();
        l2_diffs.push(0.5 * log_mean_exp(&log_sq));
    }
    Ok(PartitionReport {
        n_list: n_list.to_vec(),
        log_z,
        lp_log_norms,
        jensen_rhs,
        l2_diffs,
    })
}

/// One norm-threshold condition defining a measurable event.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EventCondition {
    /// `||u||_{H^sigma} <= max`.
    USobolev { sigma: f64, max: f64 },
    /// `||v||_{H^sigma} <= max`.
    VSobolev { sigma: f64, max: f64 },
    /// Weighted phase-space norm at index s at most `max`.
    PairWeighted { max: f64 },
}

/// Finite intersection of norm-threshold conditions; membership is
/// exactly decidable per sample.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventDescriptor {
    pub conditions: Vec<EventCondition>,
}

impl EventDescriptor {
    pub fn contains(&self, pair: &PhasePair, spec: &MeasureSpec) -> bool {
        self.conditions.iter().all(|c| match *c {
            EventCondition::USobolev { sigma, max } => pair.u.sobolev_norm(sigma) <= max,
            EventCondition::VSobolev { sigma, max } => pair.v.sobolev_norm(sigma) <= max,
            EventCondition::PairWeighted { max } => {
                weighted_pair_norm_sq(pair, spec.s).sqrt() <= max
            }
        })
    }

    /// The full space (no conditions).
    pub fn full() -> Self {
        EventDescriptor { conditions: vec![] }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct TransportReport {
    pub t: f64,
    /// Measure of A at t = 0 (direct MC).
    pub rho_a: McEstimate,
    /// Measure of Phi(t)(A) via the forward estimator (backward-flow
    /// membership test).
    pub rho_flow_forward: McEstimate,
    /// Measure of Phi(t)(A) via the change-of-variables weight,
    /// telescoped over short time increments.
    pub rho_flow_cov: McEstimate,
    /// |forward - cov| in combined standard errors.
    pub agreement_sigma: f64,
    pub p_used: f64,
    /// Observed secant constant (rho(Phi(t)A)^{1/p} - rho(A)^{1/p}) / t.
    pub bound_rhs: f64,
    /// Smallest per-stage effective sample size of the telescoped
    /// change-of-variables ratios.
    pub min_ess: f64,
    /// Set when the event is too rare for the sample count; error bars
    /// are then unreliable.
    pub rare_event: bool,
}

/// Dual estimation of the transported Gaussian measure of an event,
/// `nu(Phi(t)(A))`:
///
/// - forward: plain MC of `E[1_A(Phi_{-t} x)]`, `x ~ nu`, since
///   `Phi_{-t} x in A` iff `x in Phi_t(A)`;
/// - change of variables: `nu(Phi_t A) = integral_A e^{-Q(Phi_t y)/2} dy
///   / Z` with `Q` the exact finite-dimensional Gaussian quadratic form,
///   i.e. `E[1_A(y) e^{-(Q(Phi_t y) - Q(y))/2}]`.
///
/// The raw change-of-variables weight is useless as a direct MC weight:
/// the nonlinear flow pumps `Q` by tens to hundreds of units over unit
/// times, so `e^{-dQ/2}` spans hundreds of log units and its expectation
/// is carried by an exponentially rare tail. The estimator therefore
/// telescopes the weight over short stages `tau_k = k t / K`:
///
/// `nu(Phi_t A) = nu(A) * prod_k E[e^{-dQ_h/2} | z in Phi_{tau_k} A]`,
///
/// which follows by substituting `w = Phi_h z` (the flow preserves
/// Lebesgue measure) in each factor. Per-stage increments `dQ_h` are
/// mild, so each conditional ratio is a healthy MC average. Stage
/// membership comes from one backward trajectory per sample. At `t = 0`
/// every weight is exactly 1 and the estimate reduces to the direct MC
/// value of `nu(A)`. The standard error is a delete-1 jackknife over the
/// whole product, which stays honest under the cross-stage correlations
/// introduced by the shared sample pool.
pub fn transport_diagnostic(
    spec: &MeasureSpec,
    event: &EventDescriptor,
    t: f64,
    samples: usize,
    seed: u64,
    dt: f64,
) -> Result<TransportReport> {
    spec.validate()?;
    if samples < 2 {
        return Err(TfError::Config("need at least 2 samples".into()));
    }
    // Stage count chosen so each increment covers at most 1/32 time unit.
    let stages = ((t.abs() * 32.0).ceil() as usize).max(1);
    let h = t / stages as f64;
    // Per sample: one short forward step for the incremental COV weight,
    // one backward trajectory recording membership at every stage time.
    let rows = map_indexed(samples, |i| -> Result<(f64, Vec<bool>)> {
        let z = sample_indexed(spec, seed, i as u64).pair;
        let q0 = gaussian_quadratic_form(&z, spec);
        let zf = flow_map(&z, h, dt, Scheme::StrangSplit, spec)?;
        let log_w = -0.5 * (gaussian_quadratic_form(&zf, spec) - q0);
        let mut member = Vec::with_capacity(stages + 1);
        member.push(event.contains(&z, spec));
        let mut cur = z;
        for _ in 0..stages {
            cur = flow_map(&cur, -h, dt, Scheme::StrangSplit, spec)?;
            member.push(event.contains(&cur, spec));
        }
        Ok((log_w, member))
    });
    let mut log_w = Vec::with_capacity(samples);
    let mut member: Vec<Vec<bool>> = Vec::with_capacity(samples);
    for r in rows {
        let (lw, m) = r?;
        log_w.push(lw);
        member.push(m);
    }
    let n = samples as f64;
    // Work with max-subtracted weights; the shift cancels in each
    // normalized ratio.
    let lmax = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|&l| (l - lmax).exp()).collect();
    // Per-stage conditional sums over members at time tau_k.
    let mut num = vec![0.0f64; stages];
    let mut den = vec![0usize; stages];
    let mut num_sq = vec![0.0f64; stages];
    for (i, m) in member.iter().enumerate() {
        for k in 0..stages {
            if m[k] {
                num[k] += w[i];
                den[k] += 1;
                num_sq[k] += w[i] * w[i];
            }
        }
    }
    let count_a = member.iter().filter(|m| m[0]).count();
    let count_fwd = member.iter().filter(|m| m[stages]).count();
    let binom = |hits: usize| {
        let p = hits as f64 / n;
        McEstimate {
            mean: p,
            std_error: (p * (1.0 - p) / n).sqrt(),
            samples,
            p: None,
        }
    };
    let rho_a = binom(count_a);
    let rho_flow_forward = binom(count_fwd);
    // Telescoped estimate with a delete-1 jackknife. Each leave-out
    // recomputes every stage ratio without sample i.
    let cov_at = |skip: Option<usize>| -> f64 {
        let nn = match skip {
            Some(_) => n - 1.0,
            None => n,
        };
        let ca = match skip {
            Some(i) if member[i][0] => count_a - 1,
            _ => count_a,
        };
        if ca == 0 {
            return 0.0;
        }
        // The lmax shift enters once per stage; undo it at the end.
        let mut log_est = (ca as f64 / nn).ln() + stages as f64 * lmax;
        for k in 0..stages {
            let (mut nk, mut dk) = (num[k], den[k]);
            if let Some(i) = skip {
                if member[i][k] {
                    nk -= w[i];
                    dk -= 1;
                }
            }
            if dk == 0 || nk <= 0.0 {
                return 0.0;
            }
            log_est += (nk / dk as f64).ln();
        }
        log_est.exp()
    };
    let cov_full = cov_at(None);
    let mut leave_out = Vec::with_capacity(samples);
    for i in 0..samples {
        leave_out.push(cov_at(Some(i)));
    }
    let lo_mean = leave_out.iter().sum::<f64>() / n;
    let ss: f64 = leave_out.iter().map(|v| (v - lo_mean).powi(2)).sum();
    let rho_flow_cov = McEstimate {
        mean: cov_full,
        std_error: ((n - 1.0) / n * ss).sqrt(),
        samples,
        p: None,
    };
    let min_hits = (0..stages).map(|k| den[k]).min().unwrap_or(0).min(count_a);
    let min_ess = (0..stages)
        .map(|k| {
            if num_sq[k] > 0.0 {
                num[k] * num[k] / num_sq[k]
            } else {
                0.0
            }
        })
        .fold(f64::INFINITY, f64::min)
        .min(n);
    let rare_event = !event.conditions.is_empty() && (min_hits < 10 || min_ess < 10.0);
    let combined = (rho_flow_forward.std_error.powi(2) + rho_flow_cov.std_error.powi(2)).sqrt();
    let agreement_sigma = if combined > 0.0 {
        (rho_flow_forward.mean - rho_flow_cov.mean).abs() / combined
    } else {
        0.0
    };
    let p_used = 2.0;
    let bound_rhs = if t != 0.0 {
        (rho_flow_forward.mean.max(0.0).powf(1.0 / p_used)
            - rho_a.mean.max(0.0).powf(1.0 / p_used))
            / t
    } else {
        0.0
    };
    Ok(TransportReport {
        t,
        rho_a,
        rho_flow_forward,
        rho_flow_cov,
        agreement_sigma,
        p_used,
        bound_rhs,
        min_ess,
        rare_event,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::Variant;
    use approx::assert_relative_eq;

    fn small_spec() -> MeasureSpec {
        MeasureSpec {
            d: 3,
            s: 2.6,
            k: 3,
            n: 8,
            q: 1,
            variant: Variant::Nu,
        }
    }

    #[test]
    fn l2_anchor_matches_lattice_sum() {
        let spec = small_spec();
        let report = chaos_moment_growth(&spec, ChaosFunctional::HolderU, &[2, 4], 400, 11, 0.05)
            .unwrap();
        let dev = (report.l2_mc.mean - report.l2_exact).abs();
        assert!(
            dev < 3.0 * report.l2_mc.std_error,
            "MC {} +- {} vs exact {}",
            report.l2_mc.mean,
            report.l2_mc.std_error,
            report.l2_exact
        );
    }

    #[test]
    fn product_field_l2_anchor() {
        let spec = MeasureSpec { n: 6, ..small_spec() };
        let functional = ChaosFunctional::ProductField {
            alpha: 1.75,
            beta: 1.75,
        };
        let report = chaos_moment_growth(&spec, functional, &[2], 400, 3, 0.05).unwrap();
        let dev = (report.l2_mc.mean - report.l2_exact).abs();
        assert!(
            dev < 3.0 * report.l2_mc.std_error,
            "MC {} +- {} vs exact {}",
            report.l2_mc.mean,
            report.l2_mc.std_error,
            report.l2_exact
        );
    }

    #[test]
    fn chaos_guards() {
        let spec = small_spec();
        // Odd p rejected.
        assert!(chaos_moment_growth(&spec, ChaosFunctional::HolderU, &[3], 400, 0, 0.05).is_err());
        // p too large for the sample count.
        assert!(chaos_moment_growth(&spec, ChaosFunctional::HolderU, &[16], 100, 0, 0.05).is_err());
        // Negative exponent regime rejected.
        let shallow = MeasureSpec { s: 1.2, ..spec };
        assert!(
            chaos_moment_growth(&shallow, ChaosFunctional::HolderV, &[2], 400, 0, 0.05).is_err()
        );
    }

    #[test]
    fn convolution_direct_and_partition() {
        // n = 0, alpha = beta = 1: direct sum oracle with small tail.
        let r = convolution_sum([0, 0, 0], 1.0, 1.0, 60, 0.05).unwrap();
        assert!(r.tail_bound < 1e-1 * r.cube_sum);
        let r2 = convolution_sum([0, 0, 0], 1.0, 1.0, 90, 0.05).unwrap();
        // Larger cube only adds (positive) terms, and stays below the
        // previous cube-plus-tail envelope.
        assert!(r2.cube_sum > r.cube_sum);
        assert!(r2.cube_sum <= r.cube_sum + r.tail_bound);
        assert!(r2.tail_bound < r.tail_bound);
        // Region decomposition partitions the cube sum exactly.
        let rr = convolution_sum([6, -3, 2], 1.0, 0.9, 40, 0.05).unwrap();
        let total: f64 = rr.regions.iter().sum();
        assert_relative_eq!(total, rr.cube_sum, max_relative = 1e-14);
        // Monotone decreasing in alpha and beta.
        let base = convolution_sum([4, 0, 0], 1.0, 1.0, 30, 0.05).unwrap();
        let more_a = convolution_sum([4, 0, 0], 1.3, 1.0, 30, 0.05).unwrap();
        let more_b = convolution_sum([4, 0, 0], 1.0, 1.3, 30, 0.05).unwrap();
        assert!(more_a.cube_sum < base.cube_sum && more_b.cube_sum < base.cube_sum);
        // Divergent regime and short cutoff rejected.
        assert!(convolution_sum([0, 0, 0], 0.5, 0.5, 30, 0.05).is_err());
        assert!(convolution_sum([20, 0, 0], 1.0, 1.0, 30, 0.05).is_err());
    }

    #[test]
    fn partition_jensen_and_l2_shadow() {
        let spec = MeasureSpec {
            d: 2,
            s: 2.6,
            k: 5,
            n: 16,
            q: 1,
            variant: Variant::Nu,
        };
        let report = partition_function(&spec, 600, &[4, 8, 16], 7).unwrap();
        for (lz, j) in report.log_z.iter().zip(&report.jensen_rhs) {
            assert!(
                lz.mean >= j.mean - 3.0 * (j.std_error + lz.std_error),
                "Jensen violated: log Z {} vs {}",
                lz.mean,
                j.mean
            );
        }
        // L^p log norms increase with p (Jensen for L^p norms).
        for lp in &report.lp_log_norms {
            assert!(lp[0] <= lp[1] + 1e-12 && lp[1] <= lp[2] + 1e-12);
        }
        assert_eq!(report.l2_diffs.len(), 2);
        assert!(partition_function(&spec, 600, &[8, 4], 7).is_err());
    }

    #[test]
    fn transport_t0_and_full_space() {
        let spec = MeasureSpec {
            d: 2,
            s: 2.6,
            k: 3,
            n: 2,
            q: 1,
            variant: Variant::Nu,
        };
        // Full space: all estimators exactly 1 at t = 0.
        let full = transport_diagnostic(&spec, &EventDescriptor::full(), 0.0, 200, 5, 1e-2)
            .unwrap();
        assert_relative_eq!(full.rho_a.mean, 1.0, epsilon = 1e-12);
        assert_relative_eq!(full.rho_flow_forward.mean, 1.0, epsilon = 1e-12);
        assert_relative_eq!(full.rho_flow_cov.mean, 1.0, epsilon = 1e-10);
        // t = 0 with a nontrivial event: all three estimators coincide
        // (identity flow, COV weight reduces to e^F).
        let event = EventDescriptor {
            conditions: vec![EventCondition::PairWeighted { max: 45.0 }],
        };
        let r = transport_diagnostic(&spec, &event, 0.0, 200, 5, 1e-2).unwrap();
        assert_relative_eq!(r.rho_a.mean, r.rho_flow_forward.mean, epsilon = 1e-12);
        assert_relative_eq!(r.rho_a.mean, r.rho_flow_cov.mean, epsilon = 1e-9);
        assert!(r.rho_a.mean > 0.0 && r.rho_a.mean < 1.0);
    }

    #[test]
    fn transport_dual_estimators_agree_at_positive_time() {
        let spec = MeasureSpec {
            d: 2,
            s: 2.6,
            k: 3,
            n: 2,
            q: 1,
            variant: Variant::Nu,
        };
        let event = EventDescriptor {
            conditions: vec![EventCondition::PairWeighted { max: 35.0 }],
        };
        let r = transport_diagnostic(&spec, &event, 0.5, 2000, 9, 1e-3).unwrap();
        assert!(
            r.agreement_sigma < 3.0,
            "estimators disagree: fwd {} +- {}, cov {} +- {}",
            r.rho_flow_forward.mean,
            r.rho_flow_forward.std_error,
            r.rho_flow_cov.mean,
            r.rho_flow_cov.std_error
        );
    }

    #[test]
    fn doubling_samples_shrinks_errors() {
        let spec = small_spec();
        let a = chaos_moment_growth(&spec, ChaosFunctional::HolderU, &[2], 400, 2, 0.05).unwrap();
        let b = chaos_moment_growth(&spec, ChaosFunctional::HolderU, &[2], 1600, 2, 0.05).unwrap();
        let ratio = b.centered[0].std_error / a.centered[0].std_error;
        assert!(ratio < 0.85, "quadrupling samples gave SE ratio {ratio}");
    }
}
