//! Ball-truncated spectral fields on `T^d = [0, 2*pi)^d`.
//!
//! A field `u` is stored through its Fourier coefficients on the lattice
//! ball `{ n in Z^d : |n| <= N }` (Euclidean norm), with the conventions
//!
//! ```text
//! u(x) = sum_n  c(n) e^{i n.x},     c(n) = (2 pi)^{-d} \int u(x) e^{-i n.x} dx,
//! \int u v dx = (2 pi)^d sum_n c_u(n) c_v(-n).
//! ```
//!
//! Real fields satisfy the Hermitian constraint `c(-n) = conj(c(n))`.
//! Pointwise products are always computed on grids large enough that no
//! aliased image can land on a retained bin, so product coefficients and
//! integrals of products are exact up to rounding.

use crate::fft::{next_fast_size, transform_nd};
use crate::{Result, TfError};
use num_complex::Complex64;
use std::sync::Arc;

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Lattice ball `{ |n| <= cutoff }` in dimension `d` (2 or 3), with a
/// dense cube index for O(1) coefficient lookup. Points are enumerated in
/// lexicographic order of `(n_1, ..., n_d)`, which fixes the storage and
/// file-format order.
#[derive(Debug)]
pub struct FrequencyGrid {
    d: usize,
    cutoff: u32,
    points: Vec<[i32; 3]>,
    /// cube offset -> index into `points`, `u32::MAX` when outside the ball
    cube: Vec<u32>,
}

impl FrequencyGrid {
    pub fn new(d: usize, cutoff: u32) -> Arc<Self> {
        assert!(d == 2 || d == 3, "dimension must be 2 or 3");
        let n = cutoff as i64;
        let side = (2 * n + 1) as usize;
        let cube_len = side.pow(d as u32);
        let mut points = Vec::new();
        let mut cube = vec![u32::MAX; cube_len];
        let r2 = n * n;
        let range = -n..=n;
        let push = |p: [i32; 3], cube: &mut Vec<u32>, points: &mut Vec<[i32; 3]>| {
            let nr2: i64 = p.iter().map(|&c| (c as i64) * (c as i64)).sum();
            if nr2 <= r2 {
                let off = Self::cube_offset_raw(d, n, &p);
                cube[off] = points.len() as u32;
                points.push(p);
            }
        };
        if d == 2 {
            for a in range.clone() {
                for b in -n..=n {
                    push([a as i32, b as i32, 0], &mut cube, &mut points);
                }
            }
        } else {
            for a in range {
                for b in -n..=n {
                    for c in -n..=n {
                        push([a as i32, b as i32, c as i32], &mut cube, &mut points);
                    }
                }
            }
        }
        Arc::new(FrequencyGrid {
            d,
            cutoff,
            points,
            cube,
        })
    }

    fn cube_offset_raw(d: usize, n: i64, p: &[i32; 3]) -> usize {
        let side = (2 * n + 1) as usize;
        let mut off = 0usize;
        for a in 0..d {
            off = off * side + (p[a] as i64 + n) as usize;
        }
        off
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn cutoff(&self) -> u32 {
        self.cutoff
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[i32; 3]] {
        &self.points
    }

    pub fn point(&self, idx: usize) -> [i32; 3] {
        self.points[idx]
    }

    /// Index of lattice point `p`, if it lies in the ball.
    pub fn index_of(&self, p: &[i32; 3]) -> Option<usize> {
        let n = self.cutoff as i64;
        for a in 0..self.d {
            if (p[a] as i64).abs() > n {
                return None;
            }
        }
        for a in self.d..3 {
            if p[a] != 0 {
                return None;
            }
        }
        let off = Self::cube_offset_raw(self.d, n, p);
        let idx = self.cube[off];
        if idx == u32::MAX {
            None
        } else {
            Some(idx as usize)
        }
    }

    /// Squared Euclidean norm of the `idx`-th point.
    pub fn norm_sq(&self, idx: usize) -> f64 {
        let p = self.points[idx];
        p.iter().map(|&c| (c as f64) * (c as f64)).sum()
    }

    /// Torus volume `(2 pi)^d`.
    pub fn volume(&self) -> f64 {
        TWO_PI.powi(self.d as i32)
    }

    /// Index of the zero mode.
    pub fn zero_index(&self) -> usize {
        self.index_of(&[0, 0, 0]).expect("ball contains 0")
    }

    /// Index of `-n` for the `idx`-th point `n`.
    pub fn negate_index(&self, idx: usize) -> usize {
        let p = self.points[idx];
        self.index_of(&[-p[0], -p[1], -p[2]])
            .expect("ball is symmetric")
    }
}

/// Complex coefficient field on a [`FrequencyGrid`].
#[derive(Debug, Clone)]
pub struct SpectralField {
    grid: Arc<FrequencyGrid>,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn zero(grid: Arc<FrequencyGrid>) -> Self {
        let coeffs = vec![Complex64::default(); grid.len()];
        SpectralField { grid, coeffs }
    }

    pub fn from_fn(grid: Arc<FrequencyGrid>, f: impl Fn(&[i32; 3]) -> Complex64) -> Self {
        let coeffs = grid.points().iter().map(&f).collect();
        SpectralField { grid, coeffs }
    }

    pub fn from_coeffs(grid: Arc<FrequencyGrid>, coeffs: Vec<Complex64>) -> Self {
        assert_eq!(coeffs.len(), grid.len());
        SpectralField { grid, coeffs }
    }

    pub fn grid(&self) -> &Arc<FrequencyGrid> {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn coeff(&self, p: &[i32; 3]) -> Complex64 {
        self.grid
            .index_of(p)
            .map(|i| self.coeffs[i])
            .unwrap_or_default()
    }

    pub fn set_coeff(&mut self, p: &[i32; 3], v: Complex64) {
        let i = self.grid.index_of(p).expect("point outside grid");
        self.coeffs[i] = v;
    }

    /// Set `c(n) = v` and `c(-n) = conj(v)` in one call.
    pub fn set_hermitian_pair(&mut self, p: &[i32; 3], v: Complex64) {
        self.set_coeff(p, v);
        self.set_coeff(&[-p[0], -p[1], -p[2]], v.conj());
    }

    /// Dirichlet projection: keep modes with `|n| <= m`, on a fresh grid.
    pub fn project(&self, m: u32) -> SpectralField {
        let target = FrequencyGrid::new(self.grid.d, m.min(self.grid.cutoff));
        let coeffs = target
            .points()
            .iter()
            .map(|p| self.coeffs[self.grid.index_of(p).expect("subset")])
            .collect();
        SpectralField {
            grid: target,
            coeffs,
        }
    }

    /// Embed into a (possibly larger) grid, zero-padding new modes.
    pub fn embed(&self, target: Arc<FrequencyGrid>) -> SpectralField {
        assert!(target.cutoff >= self.grid.cutoff && target.d == self.grid.d);
        let mut out = SpectralField::zero(target);
        for (i, p) in self.grid.points().iter().enumerate() {
            let j = out.grid.index_of(p).expect("superset");
            out.coeffs[j] = self.coeffs[i];
        }
        out
    }

    /// Apply a radial Fourier multiplier `m(|n|)`; the zero mode is left
    /// untouched only through `m(0)` (callers use [`fractional_laplacian`]
    /// for the `|n|^s` convention).
    pub fn apply_radial(&self, m: impl Fn(f64) -> f64) -> SpectralField {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| c * m(self.grid.norm_sq(i).sqrt()))
            .collect();
        SpectralField {
            grid: self.grid.clone(),
            coeffs,
        }
    }

    /// Apply a general real symbol `m(n)` (kept real so Hermitian fields
    /// stay Hermitian when `m(-n) = m(n)`; odd symbols such as `n_a`
    /// produce anti-Hermitian fields, which downstream code accepts).
    pub fn apply_symbol(&self, m: impl Fn(&[i32; 3]) -> f64) -> SpectralField {
        let coeffs = self
            .coeffs
            .iter()
            .zip(self.grid.points())
            .map(|(c, p)| c * m(p))
            .collect();
        SpectralField {
            grid: self.grid.clone(),
            coeffs,
        }
    }

    /// `D^s`: multiplier `|n|^s`, with the zero mode mapped to zero for
    /// every `s` (including negative exponents).
    pub fn fractional_laplacian(&self, s: f64) -> SpectralField {
        self.apply_radial(|r| if r == 0.0 { 0.0 } else { r.powf(s) })
    }

    /// `\int u dx = (2 pi)^d c(0)` (real part; imaginary part is zero for
    /// Hermitian fields).
    pub fn integral(&self) -> f64 {
        self.grid.volume() * self.coeffs[self.grid.zero_index()].re
    }

    /// `(1 + |n|^2)^{sigma/2}`-weighted l2 norm times the volume factor:
    /// `||f||_{H^sigma} = ((2 pi)^d sum <n>^{2 sigma} |c(n)|^2)^{1/2}`.
    pub fn sobolev_norm(&self, sigma: f64) -> f64 {
        let s: f64 = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| (1.0 + self.grid.norm_sq(i)).powf(sigma) * c.norm_sqr())
            .sum();
        (self.grid.volume() * s).sqrt()
    }

    /// Squared `L^2` norm `\int |f|^2 = (2 pi)^d sum |c(n)|^2`.
    pub fn l2_norm_sq(&self) -> f64 {
        let s: f64 = self.coeffs.iter().map(|c| c.norm_sqr()).sum();
        self.grid.volume() * s
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.grid.points().iter().enumerate().all(|(i, _)| {
            let j = self.grid.negate_index(i);
            (self.coeffs[i] - self.coeffs[j].conj()).norm() <= tol
        })
    }

    /// Linear combination `self + a * other` (same grid).
    pub fn axpy(&mut self, a: f64, other: &SpectralField) {
        assert!(Arc::ptr_eq(&self.grid, &other.grid) || self.grid.cutoff == other.grid.cutoff);
        for (c, o) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *c += a * o;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for c in self.coeffs.iter_mut() {
            *c *= a;
        }
    }

    /// Synthesis on an `m^d` collocation grid; `m` must resolve the band
    /// (`m >= 2*cutoff + 1`) so that `from_physical` inverts exactly.
    pub fn to_physical_complex(&self, m: usize) -> Vec<Complex64> {
        assert!(
            m >= 2 * self.grid.cutoff as usize + 1,
            "grid too small for band"
        );
        let d = self.grid.d;
        let mut data = vec![Complex64::default(); m.pow(d as u32)];
        for (i, p) in self.grid.points().iter().enumerate() {
            let mut off = 0usize;
            for a in 0..d {
                let bin = (p[a] as i64).rem_euclid(m as i64) as usize;
                off = off * m + bin;
            }
            data[off] = self.coeffs[i];
        }
        transform_nd(&mut data, d, m, false);
        data
    }

    /// Real-part synthesis for Hermitian fields.
    pub fn to_physical(&self, m: usize) -> Vec<f64> {
        self.to_physical_complex(m).iter().map(|c| c.re).collect()
    }

    /// Analysis: recover ball coefficients from grid samples. Exact when
    /// the samples come from a field band-limited to the ball and
    /// `m >= 2*cutoff + 1`.
    pub fn from_physical_complex(
        grid: Arc<FrequencyGrid>,
        values: &[Complex64],
        m: usize,
    ) -> Result<SpectralField> {
        if m < 2 * grid.cutoff as usize + 1 {
            return Err(TfError::Config(format!(
                "physical grid side {m} cannot resolve cutoff {}",
                grid.cutoff
            )));
        }
        let d = grid.d;
        if values.len() != m.pow(d as u32) {
            return Err(TfError::Config("sample count != m^d".into()));
        }
        let mut data = values.to_vec();
        transform_nd(&mut data, d, m, true);
        let scale = 1.0 / (m.pow(d as u32) as f64);
        let coeffs = grid
            .points()
            .iter()
            .map(|p| {
                let mut off = 0usize;
                for a in 0..d {
                    let bin = (p[a] as i64).rem_euclid(m as i64) as usize;
                    off = off * m + bin;
                }
                data[off] * scale
            })
            .collect();
        Ok(SpectralField { grid, coeffs })
    }

    pub fn from_physical(
        grid: Arc<FrequencyGrid>,
        values: &[f64],
        m: usize,
    ) -> Result<SpectralField> {
        let complex: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        SpectralField::from_physical_complex(grid, &complex, m)
    }
}

/// Dirichlet projection `pi_M` as a free function (the spec-level name).
pub fn project_dirichlet(f: &SpectralField, m: u32) -> SpectralField {
    f.project(m)
}

/// `\int f g dx = (2 pi)^d sum_n c_f(n) c_g(-n)`, fields may live on
/// different grids (the sum runs over the smaller ball).
pub fn integral_of_pair(f: &SpectralField, g: &SpectralField) -> f64 {
    assert_eq!(f.grid.d, g.grid.d);
    let (small, big) = if f.grid.len() <= g.grid.len() {
        (f, g)
    } else {
        (g, f)
    };
    let mut acc = Complex64::default();
    for (i, p) in small.grid.points().iter().enumerate() {
        let q = [-p[0], -p[1], -p[2]];
        if let Some(j) = big.grid.index_of(&q) {
            acc += small.coeffs[i] * big.coeffs[j];
        }
    }
    small.grid.volume() * acc.re
}

fn total_band(factors: &[&SpectralField]) -> usize {
    factors.iter().map(|f| f.grid.cutoff as usize).sum()
}

/// Exact coefficients of `prod_i f_i` restricted to `|n| <= out_cutoff`,
/// via a single de-aliased collocation grid (`m > sum N_i + out_cutoff`).
pub fn product_projected(factors: &[&SpectralField], out_cutoff: u32) -> SpectralField {
    assert!(!factors.is_empty());
    let d = factors[0].grid.d;
    assert!(factors.iter().all(|f| f.grid.d == d));
    let band = total_band(factors);
    let m = next_fast_size(band + out_cutoff as usize + 1);
    let mut phys = factors[0].to_physical_complex(m);
    for f in &factors[1..] {
        let g = f.to_physical_complex(m);
        for (a, b) in phys.iter_mut().zip(&g) {
            *a *= b;
        }
    }
    let grid = FrequencyGrid::new(d, out_cutoff);
    // The analysis guard wants m >= 2*out_cutoff+1; the de-alias bound
    // band + out_cutoff + 1 is weaker only when band < out_cutoff, in
    // which case the product band itself is below out_cutoff.
    let m_ok = m.max(next_fast_size(2 * out_cutoff as usize + 1));
    let phys = if m_ok == m {
        phys
    } else {
        // Re-synthesise on the larger grid (cheap corner case).
        let tmp =
            SpectralField::from_physical_complex(FrequencyGrid::new(d, band as u32), &phys, m)
                .expect("band resolved");
        tmp.to_physical_complex(m_ok)
    };
    SpectralField::from_physical_complex(grid, &phys, m_ok).expect("de-aliased")
}

/// Exact `\int prod_i f_i dx` via a de-aliased grid and the zero bin.
pub fn integral_of_product(factors: &[&SpectralField]) -> f64 {
    assert!(!factors.is_empty());
    if factors.len() == 1 {
        return factors[0].integral();
    }
    if factors.len() == 2 {
        return integral_of_pair(factors[0], factors[1]);
    }
    let d = factors[0].grid.d;
    let band = total_band(factors);
    let m = next_fast_size(band + 1).max(3);
    let mut phys = factors[0].to_physical_complex(m);
    for f in &factors[1..] {
        let g = f.to_physical_complex(m);
        for (a, b) in phys.iter_mut().zip(&g) {
            *a *= b;
        }
    }
    // Zero bin of the forward transform = mean; integral = mean * (2pi)^d.
    let mean: Complex64 = phys.iter().sum::<Complex64>() / (phys.len() as f64);
    TWO_PI.powi(d as i32) * mean.re
}

/// `u^k` exactly, restricted to `|n| <= out_cutoff`.
pub fn power_projected(u: &SpectralField, k: u32, out_cutoff: u32) -> SpectralField {
    let factors: Vec<&SpectralField> = (0..k).map(|_| u).collect();
    product_projected(&factors, out_cutoff)
}

/// Phase-space point `(u, v)`.
#[derive(Debug, Clone)]
pub struct PhasePair {
    pub u: SpectralField,
    pub v: SpectralField,
}

impl PhasePair {
    pub fn zero(grid: Arc<FrequencyGrid>) -> Self {
        PhasePair {
            u: SpectralField::zero(grid.clone()),
            v: SpectralField::zero(grid),
        }
    }

    pub fn grid(&self) -> &Arc<FrequencyGrid> {
        self.u.grid()
    }

    pub fn project(&self, m: u32) -> PhasePair {
        PhasePair {
            u: self.u.project(m),
            v: self.v.project(m),
        }
    }
}

/// `||(u,v)||^2 = \int (D^s v)^2 + \int (D^{s+1} u)^2 + \int |grad u|^2
///              + \int v^2 + (\int u)^2`, all by exact spectral quadrature.
pub fn weighted_pair_norm_sq(p: &PhasePair, s: f64) -> f64 {
    let grid = p.grid();
    let vol = grid.volume();
    let mut acc = 0.0;
    for (i, _) in grid.points().iter().enumerate() {
        let r2 = grid.norm_sq(i);
        let cu = p.u.coeffs()[i].norm_sqr();
        let cv = p.v.coeffs()[i].norm_sqr();
        if r2 > 0.0 {
            acc += r2.powf(s) * cv; // (D^s v)^2
            acc += r2.powf(s + 1.0) * cu; // (D^{s+1} u)^2
            acc += r2 * cu; // |grad u|^2
        }
        acc += cv; // v^2
    }
    let zero = grid.zero_index();
    vol * acc + (vol * p.u.coeffs()[zero].re).powi(2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const TOL_EXACT: f64 = 1e-12;

    fn cos_x1(grid: &Arc<FrequencyGrid>) -> SpectralField {
        let mut f = SpectralField::zero(grid.clone());
        f.set_hermitian_pair(&[1, 0, 0], Complex64::new(0.5, 0.0));
        f
    }

    #[test]
    fn ball_counts() {
        // d = 2, N = 2: points with n1^2 + n2^2 <= 4 -> 13.
        assert_eq!(FrequencyGrid::new(2, 2).len(), 13);
        // d = 3, N = 1: 7 points.
        assert_eq!(FrequencyGrid::new(3, 1).len(), 7);
    }

    #[test]
    fn parseval_round_trip() {
        let grid = FrequencyGrid::new(2, 5);
        let f = SpectralField::from_fn(grid.clone(), |p| {
            let t = (p[0] * 3 + p[1]) as f64;
            Complex64::new((0.3 * t).sin(), (0.11 * t).cos()) / (1.0 + t * t)
        });
        // Coefficient round trip through an oversampled grid.
        let m = next_fast_size(2 * 5 + 3);
        let phys = f.to_physical_complex(m);
        let back = SpectralField::from_physical_complex(grid.clone(), &phys, m).unwrap();
        for (a, b) in back.coeffs().iter().zip(f.coeffs()) {
            assert!((a - b).norm() < TOL_EXACT);
        }
        // Parseval: grid quadrature of |f|^2 equals (2pi)^d sum |c|^2.
        let quad: f64 =
            phys.iter().map(|c| c.norm_sqr()).sum::<f64>() / (phys.len() as f64) * grid.volume();
        let spec: f64 = f.coeffs().iter().map(|c| c.norm_sqr()).sum::<f64>() * grid.volume();
        assert_relative_eq!(quad, spec, max_relative = TOL_EXACT);
    }

    #[test]
    fn cube_of_cosine() {
        // cos^3(x1) = (3/4) cos(x1) + (1/4) cos(3 x1).
        let grid = FrequencyGrid::new(2, 1);
        let f = cos_x1(&grid);
        let cube = power_projected(&f, 3, 3);
        assert_relative_eq!(cube.coeff(&[1, 0, 0]).re, 3.0 / 8.0, epsilon = TOL_EXACT);
        assert_relative_eq!(cube.coeff(&[3, 0, 0]).re, 1.0 / 8.0, epsilon = TOL_EXACT);
        assert!(cube.coeff(&[2, 0, 0]).norm() < TOL_EXACT);
        assert!(cube.coeff(&[0, 0, 0]).norm() < TOL_EXACT);
        // Cosine-basis amplitudes: 2 * c(n).
        assert_relative_eq!(2.0 * cube.coeff(&[1, 0, 0]).re, 0.75, epsilon = TOL_EXACT);
        assert_relative_eq!(2.0 * cube.coeff(&[3, 0, 0]).re, 0.25, epsilon = TOL_EXACT);
    }

    #[test]
    fn fractional_laplacian_conventions() {
        let grid = FrequencyGrid::new(3, 2);
        // Plane wave |n| = 1 is an eigenfunction with eigenvalue 1 for s = 2.
        let mut f = SpectralField::zero(grid.clone());
        f.set_coeff(&[1, 0, 0], Complex64::new(1.0, 0.0));
        let g = f.fractional_laplacian(2.0);
        assert_relative_eq!(g.coeff(&[1, 0, 0]).re, 1.0, epsilon = TOL_EXACT);
        // Constant field with negative exponent -> zero field.
        let mut c = SpectralField::zero(grid.clone());
        c.set_coeff(&[0, 0, 0], Complex64::new(2.5, 0.0));
        let h = c.fractional_laplacian(-1.0);
        assert!(h.coeffs().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn weighted_pair_norm_example() {
        // u = cos(x1), v = 0, s = 1, d = 2:
        // D^2 u = u and grad u both give (2pi)^2/2; mean of u is 0.
        let grid = FrequencyGrid::new(2, 1);
        let p = PhasePair {
            u: cos_x1(&grid),
            v: SpectralField::zero(grid.clone()),
        };
        let expect = TWO_PI.powi(2); // (2pi)^2/2 + (2pi)^2/2
        assert_relative_eq!(weighted_pair_norm_sq(&p, 1.0), expect, epsilon = 1e-10);
    }

    #[test]
    fn projection_dirichlet_examples() {
        let grid = FrequencyGrid::new(2, 4);
        let f = SpectralField::from_fn(grid.clone(), |p| {
            Complex64::new(1.0 / (1.0 + (p[0] * p[0] + p[1] * p[1]) as f64), 0.0)
        });
        // M >= N: identity.
        let id = project_dirichlet(&f, 4);
        for p in id.grid().points() {
            assert_eq!(id.coeff(p), f.coeff(p));
        }
        // Euclidean ball: mode (3, 3) has |n| > 4 and is absent already;
        // project to 3 and check (3, 1) (norm sqrt(10) > 3) is dropped.
        let pr = project_dirichlet(&f, 3);
        assert!(pr.grid().index_of(&[3, 1, 0]).is_none());
        assert_eq!(pr.coeff(&[3, 0, 0]), f.coeff(&[3, 0, 0]));
    }

    proptest! {
        #[test]
        fn multiplier_composition(seed in 0u64..1000) {
            // D^{s1} D^{s2} = D^{s1+s2} on a random mean-zero field.
            let grid = FrequencyGrid::new(2, 3);
            let f = SpectralField::from_fn(grid.clone(), |p| {
                if p == &[0, 0, 0] { return Complex64::default(); }
                let t = crate::rng::mix3(seed, p[0] as u64 as u64, p[1] as u64);
                Complex64::new((t % 1000) as f64 / 1000.0 - 0.5, ((t >> 10) % 1000) as f64 / 1000.0 - 0.5)
            });
            let a = f.fractional_laplacian(1.3).fractional_laplacian(0.9);
            let b = f.fractional_laplacian(2.2);
            for (x, y) in a.coeffs().iter().zip(b.coeffs()) {
                prop_assert!((x - y).norm() < 1e-11 * (1.0 + y.norm()));
            }
        }

        #[test]
        fn projection_commutes_with_multiplier(seed in 0u64..1000) {
            let grid = FrequencyGrid::new(2, 5);
            let f = SpectralField::from_fn(grid.clone(), |p| {
                let t = crate::rng::mix3(seed, p[0] as u64, p[1] as u64);
                Complex64::new((t % 997) as f64 / 997.0, ((t >> 7) % 997) as f64 / 997.0)
            });
            let a = project_dirichlet(&f.fractional_laplacian(1.7), 3);
            let b = project_dirichlet(&f, 3).fractional_laplacian(1.7);
            for p in a.grid().points() {
                prop_assert!((a.coeff(p) - b.coeff(p)).norm() < TOL_EXACT);
            }
        }

        #[test]
        fn product_integral_matches_pairing(seed in 0u64..200) {
            let grid = FrequencyGrid::new(2, 4);
            let mk = |salt: u64| {
                let mut f = SpectralField::zero(grid.clone());
                for i in 0..grid.len() {
                    let p = grid.point(i);
                    let rep = (p[0], p[1]) > (0, 0) || (p[0] == 0 && p[1] == 0);
                    if rep {
                        let t = crate::rng::mix3(seed ^ salt, p[0] as u64, p[1] as u64);
                        let re = (t % 2003) as f64 / 2003.0 - 0.5;
                        let im = if p == [0, 0, 0] { 0.0 } else { ((t >> 17) % 2003) as f64 / 2003.0 - 0.5 };
                        f.set_hermitian_pair(&p, Complex64::new(re, im));
                    }
                }
                f
            };
            let f = mk(1);
            let g = mk(2);
            let direct = integral_of_pair(&f, &g);
            let via_fft = integral_of_product(&[&f, &g, &SpectralField::from_fn(grid.clone(), |p| {
                if p == &[0, 0, 0] { Complex64::new(1.0, 0.0) } else { Complex64::default() }
            })]);
            prop_assert!((direct - via_fft).abs() < 1e-10 * (1.0 + direct.abs()));
        }
    }
}
