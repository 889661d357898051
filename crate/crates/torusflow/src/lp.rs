//! Littlewood–Paley theory on the lattice: dyadic shells, paraproducts,
//! Besov/Hölder norms and the Bernstein ratio.
//!
//! Symbols use the standard normalisation: a radial bump `chi` equal to 1
//! on `B(0, 3/4)` and supported in `B(0, 4/3)`, glued with the smooth
//! `exp(-1/t)` step, and the annulus bump `phi(xi) = chi(xi/2) - chi(xi)`
//! (support `3/4 <= |xi| <= 8/3`). Shells are `psi_{-1} = chi` and
//! `psi_j(xi) = phi(2^{-j} xi)`; the partial sums telescope, so
//! `S_j = sum_{k <= j-1} P_k` has symbol `chi(2^{-j} .)` and the
//! partition of unity is exact on any lattice ball once `jmax` satisfies
//! `N <= (3/4) 2^{jmax+1}`.

use crate::fft::next_fast_size;
use crate::spectral::{FrequencyGrid, SpectralField};
use crate::{Result, TfError};
use num_complex::Complex64;
use std::sync::Arc;

fn glue(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        (-1.0 / t).exp()
    }
}

/// Smooth step: 0 for `t <= 0`, 1 for `t >= 1`.
fn smooth_step(t: f64) -> f64 {
    let a = glue(t);
    let b = glue(1.0 - t);
    if a == 0.0 {
        0.0
    } else {
        a / (a + b)
    }
}

/// Radial low bump: 1 on `[0, 3/4]`, 0 on `[4/3, inf)`.
pub fn chi(r: f64) -> f64 {
    1.0 - smooth_step((r - 0.75) / (4.0 / 3.0 - 0.75))
}

/// Annulus bump `phi(r) = chi(r/2) - chi(r)`.
pub fn phi(r: f64) -> f64 {
    chi(0.5 * r) - chi(r)
}

/// Shell symbol `psi_j(r)`; `j = -1` is the low bump.
pub fn psi(j: i32, r: f64) -> f64 {
    if j == -1 {
        chi(r)
    } else {
        phi(r / (1 << j) as f64)
    }
}

/// Tabulated dyadic decomposition for one frequency grid.
#[derive(Debug)]
pub struct DyadicSystem {
    grid: Arc<FrequencyGrid>,
    jmax: i32,
    /// `shells[(j + 1) as usize][idx] = psi_j(n_idx)`
    shells: Vec<Vec<f64>>,
}

impl DyadicSystem {
    pub fn new(grid: Arc<FrequencyGrid>) -> Self {
        let n = grid.cutoff().max(1) as f64;
        // Smallest J with N <= (3/4) 2^{J+1}.
        let mut jmax = 0i32;
        while n > 0.75 * (1u64 << (jmax + 1)) as f64 {
            jmax += 1;
        }
        let shells = (-1..=jmax)
            .map(|j| {
                (0..grid.len())
                    .map(|i| psi(j, grid.norm_sq(i).sqrt()))
                    .collect()
            })
            .collect();
        DyadicSystem { grid, jmax, shells }
    }

    pub fn grid(&self) -> &Arc<FrequencyGrid> {
        &self.grid
    }

    pub fn jmax(&self) -> i32 {
        self.jmax
    }

    /// Largest lattice radius inside shell `j`'s support (clipped to N).
    pub fn shell_band(&self, j: i32) -> u32 {
        let hi = if j == -1 {
            4.0 / 3.0
        } else {
            8.0 / 3.0 * (1u64 << j) as f64
        };
        (hi.floor() as u32).min(self.grid.cutoff())
    }

    /// Tabulated `psi_j(n)` values.
    pub fn shell(&self, j: i32) -> &[f64] {
        &self.shells[(j + 1) as usize]
    }

    /// CSV audit table `(n1, n2, n3, j, psi_j(n))`.
    pub fn symbols_csv(&self) -> String {
        let mut out = String::from("n1,n2,n3,j,psi\n");
        for (i, p) in self.grid.points().iter().enumerate() {
            for j in -1..=self.jmax {
                out.push_str(&format!(
                    "{},{},{},{},{:.17e}\n",
                    p[0],
                    p[1],
                    p[2],
                    j,
                    self.shell(j)[i]
                ));
            }
        }
        out
    }
}

/// Dyadic block `P_j f`.
pub fn pj(f: &SpectralField, j: i32, sys: &DyadicSystem) -> Result<SpectralField> {
    if j < -1 || j > sys.jmax {
        return Err(TfError::Config(format!(
            "shell index {j} outside [-1, {}]",
            sys.jmax
        )));
    }
    let tab = sys.shell(j);
    let mut out = f.clone();
    for (c, &w) in out.coeffs_mut().iter_mut().zip(tab) {
        *c *= w;
    }
    Ok(out)
}

/// Low-frequency partial sum `S_j = sum_{k <= j-1} P_k`
/// (symbol `chi(2^{-j} |n|)` for `j >= 0`, zero for `j < 0`).
pub fn sj(f: &SpectralField, j: i32, _sys: &DyadicSystem) -> SpectralField {
    if j < 0 {
        return SpectralField::zero(f.grid().clone());
    }
    let scale = 1.0 / (1u64 << j) as f64;
    f.apply_radial(|r| chi(r * scale))
}

/// Paraproduct `T_a b = sum_j (S_{j-1} a)(P_j b)` with exact (de-aliased)
/// products, returned on the doubled ball. Operands may be non-Hermitian
/// (e.g. odd-symbol derivatives of real fields), so the accumulation runs
/// on complex collocation grids.
pub fn paraproduct(a: &SpectralField, b: &SpectralField, sys: &DyadicSystem) -> SpectralField {
    assert_eq!(
        a.grid().cutoff(),
        b.grid().cutoff(),
        "paraproduct needs a shared grid"
    );
    let n = a.grid().cutoff();
    let d = a.grid().dim();
    let m = next_fast_size(4 * n as usize + 1);
    let mut acc = vec![Complex64::default(); m.pow(d as u32)];
    for j in 1..=sys.jmax {
        let sa = sj(a, j - 1, sys);
        if sa.coeffs().iter().all(|c| c.norm_sqr() == 0.0) {
            continue;
        }
        let pb = pj(b, j, sys).expect("j in range");
        let fa = sa.to_physical_complex(m);
        let fb = pb.to_physical_complex(m);
        for ((t, x), y) in acc.iter_mut().zip(&fa).zip(&fb) {
            *t += x * y;
        }
    }
    let out_grid = FrequencyGrid::new(d, 2 * n);
    SpectralField::from_physical_complex(out_grid, &acc, m).expect("band resolved")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lebesgue {
    Finite(f64),
    Infinity,
}

impl Lebesgue {
    pub fn validate(&self) -> Result<()> {
        match self {
            Lebesgue::Finite(p) if *p >= 1.0 => Ok(()),
            Lebesgue::Infinity => Ok(()),
            _ => Err(TfError::Config("Lebesgue index must be >= 1".into())),
        }
    }
}

/// `L^p` norm of a (possibly complex) band-limited field, by trapezoidal
/// quadrature on an oversampled grid (band `B` sampled at >= 4B + 1
/// points, spectrally accurate for periodic integrands).
fn shell_lp_norm(f: &SpectralField, band: u32, p: Lebesgue) -> f64 {
    let m = next_fast_size(4 * band as usize + 1).max(8);
    let vals = f.to_physical_complex(m);
    match p {
        Lebesgue::Infinity => vals.iter().map(|c| c.norm()).fold(0.0, f64::max),
        Lebesgue::Finite(p) => {
            let vol = f.grid().volume();
            let mean =
                vals.iter().map(|c| c.norm().powf(p)).sum::<f64>() / vals.len() as f64;
            (vol * mean).powf(1.0 / p)
        }
    }
}

/// Besov norm `|| (2^{sj} ||P_j f||_{L^p})_j ||_{l^q}` over `j >= -1`.
pub fn besov_norm(
    f: &SpectralField,
    s: f64,
    p: Lebesgue,
    q: Lebesgue,
    sys: &DyadicSystem,
) -> Result<f64> {
    p.validate()?;
    q.validate()?;
    let mut terms = Vec::new();
    for j in -1..=sys.jmax {
        let blk = pj(f, j, sys)?.project(sys.shell_band(j));
        let lp = shell_lp_norm(&blk, sys.shell_band(j), p);
        terms.push(2f64.powi(j * 1) .powf(s) * lp);
    }
    Ok(match q {
        Lebesgue::Infinity => terms.iter().cloned().fold(0.0, f64::max),
        Lebesgue::Finite(q) => terms.iter().map(|t| t.powf(q)).sum::<f64>().powf(1.0 / q),
    })
}

/// Hölder norm `C^s = B^s_{inf, inf}`.
pub fn holder_norm(f: &SpectralField, s: f64, sys: &DyadicSystem) -> f64 {
    besov_norm(f, s, Lebesgue::Infinity, Lebesgue::Infinity, sys).expect("valid indices")
}

/// Bernstein ratio `||P_j f||_p / (2^{d j (1/p - 1/q)} ||P_j f||_q)`,
/// `p <= q`; bounded uniformly in `j` by the Bernstein inequality.
pub fn bernstein_check(
    f: &SpectralField,
    j: i32,
    p: Lebesgue,
    q: Lebesgue,
    sys: &DyadicSystem,
) -> Result<f64> {
    let pv = match p {
        Lebesgue::Finite(x) => x,
        Lebesgue::Infinity => f64::INFINITY,
    };
    let qv = match q {
        Lebesgue::Finite(x) => x,
        Lebesgue::Infinity => f64::INFINITY,
    };
    if pv > qv {
        return Err(TfError::Config("bernstein_check needs p <= q".into()));
    }
    let blk = pj(f, j, sys)?.project(sys.shell_band(j));
    let np = shell_lp_norm(&blk, sys.shell_band(j), p);
    let nq = shell_lp_norm(&blk, sys.shell_band(j), q);
    if nq == 0.0 {
        return Ok(0.0);
    }
    let d = f.grid().dim() as f64;
    let inv = |v: f64| if v.is_finite() { 1.0 / v } else { 0.0 };
    let scale = 2f64.powf(d * j as f64 * (inv(pv) - inv(qv)));
    Ok(np / (scale * nq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{sample_indexed, MeasureSpec, Variant};
    use crate::spectral::{integral_of_pair, product_projected};
    use approx::assert_relative_eq;

    const TOL_PARTITION: f64 = 1e-12;

    fn random_field(n: u32, seed: u64) -> SpectralField {
        let spec = MeasureSpec {
            d: 2,
            s: 1.4,
            k: 3,
            n,
            q: 1,
            variant: Variant::Mu,
        };
        sample_indexed(&spec, seed, 0).pair.u
    }

    #[test]
    fn partition_of_unity_exact() {
        for n in [1u32, 5, 16, 33] {
            let grid = FrequencyGrid::new(2, n);
            let sys = DyadicSystem::new(grid.clone());
            for i in 0..grid.len() {
                let r = grid.norm_sq(i).sqrt();
                let total: f64 = (-1..=sys.jmax()).map(|j| psi(j, r)).sum();
                assert!(
                    (total - 1.0).abs() < TOL_PARTITION,
                    "partition off at |n| = {r}, N = {n}: {total}"
                );
            }
        }
    }

    #[test]
    fn blocks_sum_to_identity_and_disjoint_shells_kill() {
        let f = random_field(16, 4);
        let sys = DyadicSystem::new(f.grid().clone());
        let mut sum = SpectralField::zero(f.grid().clone());
        for j in -1..=sys.jmax() {
            sum.axpy(1.0, &pj(&f, j, &sys).unwrap());
        }
        for (a, b) in sum.coeffs().iter().zip(f.coeffs()) {
            assert!((a - b).norm() < TOL_PARTITION);
        }
        // Shells -1 and 3 have disjoint supports (4/3 < 6).
        let p3 = pj(&f, 3, &sys).unwrap();
        let z = pj(&p3, -1, &sys).unwrap();
        assert!(z.coeffs().iter().all(|c| c.norm() < TOL_PARTITION));
        assert!(pj(&f, sys.jmax() + 1, &sys).is_err());
    }

    #[test]
    fn plane_wave_sees_at_most_two_shells() {
        let grid = FrequencyGrid::new(2, 33);
        let sys = DyadicSystem::new(grid.clone());
        let mut f = SpectralField::zero(grid.clone());
        f.set_coeff(&[32, 0, 0], Complex64::new(1.0, 0.0));
        let mut live = 0;
        for j in -1..=sys.jmax() {
            let w = pj(&f, j, &sys).unwrap().coeff(&[32, 0, 0]).norm();
            if w > TOL_PARTITION {
                live += 1;
            }
        }
        assert!(live >= 1 && live <= 2, "{live} shells at |n| = 32");
    }

    #[test]
    fn partial_sums_match_shell_sums() {
        let f = random_field(16, 9);
        let sys = DyadicSystem::new(f.grid().clone());
        // sj(f, -1) = 0.
        assert!(sj(&f, -1, &sys).coeffs().iter().all(|c| c.norm() == 0.0));
        // sj with j > jmax = identity.
        let id = sj(&f, sys.jmax() + 1, &sys);
        for (a, b) in id.coeffs().iter().zip(f.coeffs()) {
            assert!((a - b).norm() < TOL_PARTITION);
        }
        // S_j equals the direct sum of shells < j.
        for j in 0..=sys.jmax() {
            let direct = {
                let mut acc = SpectralField::zero(f.grid().clone());
                for k in -1..j {
                    acc.axpy(1.0, &pj(&f, k, &sys).unwrap());
                }
                acc
            };
            let via = sj(&f, j, &sys);
            for (a, b) in via.coeffs().iter().zip(direct.coeffs()) {
                assert!((a - b).norm() < TOL_PARTITION);
            }
        }
    }

    #[test]
    fn paraproduct_examples() {
        let grid = FrequencyGrid::new(2, 64);
        let sys = DyadicSystem::new(grid.clone());
        // a = 0 -> 0.
        let zero = SpectralField::zero(grid.clone());
        let f = random_field(64, 5);
        let t = paraproduct(&zero, &f, &sys);
        assert!(t.coeffs().iter().all(|c| c.norm() == 0.0));
        // Low-high pair: T_a b = a b exactly when |n_a| = 1, |n_b| = 64.
        let mut a = SpectralField::zero(grid.clone());
        a.set_coeff(&[1, 0, 0], Complex64::new(1.0, 0.0));
        let mut b = SpectralField::zero(grid.clone());
        b.set_coeff(&[64, 0, 0], Complex64::new(1.0, 0.0));
        let t = paraproduct(&a, &b, &sys);
        assert_relative_eq!(t.coeff(&[65, 0, 0]).re, 1.0, epsilon = 1e-10);
        let stray: f64 = t
            .coeffs()
            .iter()
            .map(|c| c.norm_sqr())
            .sum::<f64>()
            - t.coeff(&[65, 0, 0]).norm_sqr();
        assert!(stray.abs() < 1e-20);
    }

    #[test]
    fn paraproduct_decomposition_bookkeeping() {
        // a b = T_a b + T_b a + resonant part; on a 3-mode example the
        // resonant part carries exactly the contributions where the two
        // shells are within one dyadic unit.
        let grid = FrequencyGrid::new(2, 16);
        let sys = DyadicSystem::new(grid.clone());
        let mut a = SpectralField::zero(grid.clone());
        a.set_hermitian_pair(&[1, 0, 0], Complex64::new(0.4, 0.1));
        a.set_hermitian_pair(&[8, 3, 0], Complex64::new(-0.2, 0.3));
        let mut b = SpectralField::zero(grid.clone());
        b.set_hermitian_pair(&[9, 0, 0], Complex64::new(0.7, -0.2));
        let ab = product_projected(&[&a, &b], 32);
        let tab = paraproduct(&a, &b, &sys);
        let tba = paraproduct(&b, &a, &sys);
        let mut res = ab.clone();
        res.axpy(-1.0, &tab);
        res.axpy(-1.0, &tba);
        // Resonant part must be supported where both inputs are high
        // frequency: here |n_a| ~ 8.5, |n_b| = 9 resonate; the (1,0)x(9,0)
        // interaction is paraproduct-only and must cancel.
        let para_mode = res.coeff(&[10, 0, 0]).norm();
        assert!(para_mode < 1e-10, "low-high leaked into resonance: {para_mode}");
        // Total bookkeeping: T_a b + T_b a + resonant = a b identically.
        let mut sum = tab.clone();
        sum.axpy(1.0, &tba);
        sum.axpy(1.0, &res);
        for p in ab.grid().points() {
            assert!((sum.coeff(p) - ab.coeff(p)).norm() < 1e-10);
        }
    }

    #[test]
    fn besov_norm_examples() {
        let grid = FrequencyGrid::new(2, 16);
        let sys = DyadicSystem::new(grid.clone());
        let zero = SpectralField::zero(grid.clone());
        assert_eq!(
            besov_norm(&zero, 1.0, Lebesgue::Finite(2.0), Lebesgue::Finite(2.0), &sys).unwrap(),
            0.0
        );
        // B^0_{2,2} comparable to L^2 with overlap constant <= sqrt(2):
        // sum_j psi_j(n)^2 lies in [1/2, 1] by the partition of unity.
        for seed in 0..5u64 {
            let f = random_field(16, 100 + seed);
            let b = besov_norm(&f, 0.0, Lebesgue::Finite(2.0), Lebesgue::Finite(2.0), &sys)
                .unwrap();
            let l2 = f.l2_norm_sq().sqrt();
            let ratio = b / l2;
            assert!(
                ratio <= 1.0 + 1e-9 && ratio >= 0.5f64.sqrt() - 1e-9,
                "ratio {ratio}"
            );
        }
        // Single plane wave: closed form from tabulated symbols.
        let mut f = SpectralField::zero(grid.clone());
        f.set_coeff(&[8, 0, 0], Complex64::new(1.0, 0.0));
        let s = 1.3;
        let expect = (-1..=sys.jmax())
            .map(|j| 2f64.powf(s * j as f64) * psi(j, 8.0))
            .fold(0.0, f64::max);
        let got = holder_norm(&f, s, &sys);
        assert_relative_eq!(got, expect, max_relative = 1e-9);
        // Invalid index rejected.
        assert!(
            besov_norm(&f, 1.0, Lebesgue::Finite(0.5), Lebesgue::Infinity, &sys).is_err()
        );
    }

    #[test]
    fn besov_monotone_in_s_for_high_frequency_fields() {
        let grid = FrequencyGrid::new(2, 16);
        let sys = DyadicSystem::new(grid.clone());
        // Strip shell -1 so that all live shells have j >= 0.
        let f = {
            let g = random_field(16, 77);
            let low = pj(&g, -1, &sys).unwrap();
            let mut h = g.clone();
            h.axpy(-1.0, &low);
            h
        };
        let b1 = besov_norm(&f, 0.7, Lebesgue::Finite(3.0), Lebesgue::Finite(2.0), &sys).unwrap();
        let b2 = besov_norm(&f, 1.9, Lebesgue::Finite(3.0), Lebesgue::Finite(2.0), &sys).unwrap();
        assert!(b1 <= b2 + 1e-12, "{b1} vs {b2}");
    }

    #[test]
    fn bernstein_ratios() {
        let grid = FrequencyGrid::new(2, 16);
        let sys = DyadicSystem::new(grid.clone());
        // Uniform bound over 100 random fields and all shells.
        let mut worst: f64 = 0.0;
        for seed in 0..100u64 {
            let f = random_field(16, 1000 + seed);
            for j in -1..=sys.jmax() {
                let r = bernstein_check(&f, j, Lebesgue::Finite(2.0), Lebesgue::Infinity, &sys)
                    .unwrap();
                worst = worst.max(r);
            }
        }
        assert!(worst.is_finite() && worst > 0.0);
        // The constant is O(1); generous cap documents the empirical sup.
        assert!(worst < 30.0, "Bernstein constant blew up: {worst}");
        // Constant field at j = -1: finite ratio.
        let mut c = SpectralField::zero(grid.clone());
        c.set_coeff(&[0, 0, 0], Complex64::new(1.0, 0.0));
        let r = bernstein_check(&c, -1, Lebesgue::Finite(1.0), Lebesgue::Finite(2.0), &sys)
            .unwrap();
        assert!(r.is_finite() && r > 0.0);
        // p > q rejected.
        assert!(
            bernstein_check(&c, -1, Lebesgue::Infinity, Lebesgue::Finite(2.0), &sys).is_err()
        );
    }

    #[test]
    fn paraproduct_support_margin() {
        // T_{pi_M a} pi_M b has support inside |n| <= 2M (coefficients on
        // the doubled ball by construction); verify no mass near the edge
        // beyond the symbol-support margin (8/3 + 4/3)/2 * ... — checked
        // simply as: support radius <= 2M.
        let f = random_field(8, 3);
        let g = random_field(8, 4);
        let sys = DyadicSystem::new(f.grid().clone());
        let t = paraproduct(&f, &g, &sys);
        assert_eq!(t.grid().cutoff(), 16);
        // Parseval-level sanity: T_f g is part of the product bookkeeping.
        let prod = product_projected(&[&f, &g], 16);
        let ip = integral_of_pair(&t, &prod);
        assert!(ip.is_finite());
    }
}
