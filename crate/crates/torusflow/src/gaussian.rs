//! The two Gaussian reference measures on truncated phase space, sampled
//! as random Fourier series, plus the lattice renormalisation constant
//! `sigma_N` and the Wick square `Q_{s,N}(f) = (D^s f)^2 - sigma_N`.
//!
//! Weight conventions (Japanese bracket `<n> = (1 + |n|^2)^{1/2}`):
//!
//! * `mu` variant: `w_u(n) = <n>^{-(s+1)}`, `w_v(n) = <n>^{-s}`.
//! * `nu` variant: `w_u(0) = 1`, `w_u(n) = (|n|^2 + |n|^{2s+2})^{-1/2}`
//!   for `n != 0`, and `w_v(n) = (1 + |n|^{2s})^{-1/2}`.
//!
//! Coefficients are `u_hat(n) = g_n w_u(n)`, `v_hat(n) = h_n w_v(n)` with
//! `g_n = (a + ib)/sqrt(2)` standard complex Gaussians, `g_{-n} = conj(g_n)`
//! and `g_0` real standard; each `{n, -n}` pair is drawn once from the
//! counter RNG keyed by the positive representative, so sampling is
//! order-independent.

use crate::rng::{self, mode_key, normal_pair};
use crate::spectral::{FrequencyGrid, PhasePair, SpectralField};
use crate::{Result, TfError};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Mu,
    Nu,
}

/// Parameters of the truncated measure and its polynomial data.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSpec {
    pub d: usize,
    pub s: f64,
    pub k: u32,
    pub n: u32,
    pub q: u32,
    pub variant: Variant,
}

impl MeasureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d != 2 && self.d != 3 {
            return Err(TfError::Config("d must be 2 or 3".into()));
        }
        if !(self.s > 0.5) {
            return Err(TfError::Config("s must exceed 1/2".into()));
        }
        if self.k < 3 || self.k % 2 == 0 {
            return Err(TfError::Config("k must be an odd integer >= 3".into()));
        }
        if self.n < 1 {
            return Err(TfError::Config("N must be >= 1".into()));
        }
        if self.q < 1 {
            return Err(TfError::Config("q must be >= 1".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Arc<FrequencyGrid> {
        FrequencyGrid::new(self.d, self.n)
    }

    /// u-coefficient standard deviation at mode `n`.
    pub fn weight_u(&self, p: &[i32; 3]) -> f64 {
        let r2: f64 = p.iter().map(|&c| (c as f64) * (c as f64)).sum();
        match self.variant {
            Variant::Mu => (1.0 + r2).powf(-(self.s + 1.0) / 2.0),
            Variant::Nu => {
                if r2 == 0.0 {
                    1.0
                } else {
                    (r2 + r2.powf(self.s + 1.0)).powf(-0.5)
                }
            }
        }
    }

    /// v-coefficient standard deviation at mode `n`.
    pub fn weight_v(&self, p: &[i32; 3]) -> f64 {
        let r2: f64 = p.iter().map(|&c| (c as f64) * (c as f64)).sum();
        match self.variant {
            Variant::Mu => (1.0 + r2).powf(-self.s / 2.0),
            Variant::Nu => (1.0 + r2.powf(self.s)).powf(-0.5),
        }
    }
}

/// One draw from the truncated measure.
#[derive(Debug, Clone)]
pub struct GaussianSample {
    pub pair: PhasePair,
    pub seed: u64,
    pub spec: MeasureSpec,
}

/// Lexicographically positive representative: first nonzero coordinate
/// positive (the zero mode is its own representative).
fn is_representative(p: &[i32; 3]) -> bool {
    for &c in p {
        if c > 0 {
            return true;
        }
        if c < 0 {
            return false;
        }
    }
    true
}

/// Hermitian Gaussian field with per-mode standard deviation `w(n)` and
/// unit-variance complex Gaussians, from counter stream `(seed, tag, idx)`.
pub fn sample_hermitian_field(
    grid: &Arc<FrequencyGrid>,
    w: impl Fn(&[i32; 3]) -> f64,
    seed: u64,
    tag: u64,
    sample_idx: u64,
) -> SpectralField {
    let mut f = SpectralField::zero(grid.clone());
    for i in 0..grid.len() {
        let p = grid.point(i);
        if !is_representative(&p) {
            continue;
        }
        let (a, b) = normal_pair(seed, tag, mode_key(&p), sample_idx, 0);
        let g = if p == [0, 0, 0] {
            Complex64::new(a, 0.0)
        } else {
            Complex64::new(a, b) / std::f64::consts::SQRT_2
        };
        f.set_hermitian_pair(&p, g * w(&p));
    }
    f
}

/// Draw the pair `(u, v)` for `spec` from `(seed, sample_idx)`; the
/// spec-level `sample` is `sample_indexed(spec, seed, 0)`.
pub fn sample_indexed(spec: &MeasureSpec, seed: u64, sample_idx: u64) -> GaussianSample {
    let grid = spec.grid();
    let u = sample_hermitian_field(&grid, |p| spec.weight_u(p), seed, rng::tag::FIELD_U, sample_idx);
    let v = sample_hermitian_field(&grid, |p| spec.weight_v(p), seed, rng::tag::FIELD_V, sample_idx);
    GaussianSample {
        pair: PhasePair { u, v },
        seed,
        spec: *spec,
    }
}

pub fn sample(spec: &MeasureSpec, seed: u64) -> GaussianSample {
    sample_indexed(spec, seed, 0)
}

/// Exact lattice sum `sigma_N = sum_{0 < |n| <= N} |n|^{2s} w_u(n)^2`.
pub fn sigma_n(spec: &MeasureSpec) -> f64 {
    sigma_at_cutoff(spec, spec.n)
}

/// Same sum with an explicit cutoff (used for ratio diagnostics).
pub fn sigma_at_cutoff(spec: &MeasureSpec, cutoff: u32) -> f64 {
    if cutoff == 0 {
        return 0.0;
    }
    let n = cutoff as i64;
    let r2max = n * n;
    let mut acc = 0.0;
    let mut term = |p: [i32; 3]| {
        let r2: i64 = p.iter().map(|&c| (c as i64) * (c as i64)).sum();
        if r2 == 0 || r2 > r2max {
            return;
        }
        let w = spec.weight_u(&p);
        acc += (r2 as f64).powf(spec.s) * w * w;
    };
    if spec.d == 2 {
        for a in -n..=n {
            for b in -n..=n {
                term([a as i32, b as i32, 0]);
            }
        }
    } else {
        for a in -n..=n {
            for b in -n..=n {
                for c in -n..=n {
                    term([a as i32, b as i32, c as i32]);
                }
            }
        }
    }
    acc
}

/// Pointwise Wick square `(D^s f)^2 - sigma_N` sampled on the de-aliased
/// physical grid of side `m` (must satisfy `m >= 2 cutoff(f) + 1`; the
/// square itself is band-limited to `2 cutoff`, exact when `m >= 4N + 1`
/// is used by integral callers).
pub fn wick_square(f: &SpectralField, spec: &MeasureSpec, m: usize) -> Result<Vec<f64>> {
    if f.grid().cutoff() > spec.n {
        return Err(TfError::Config(format!(
            "wick_square: field cutoff {} exceeds spec N {}",
            f.grid().cutoff(),
            spec.n
        )));
    }
    let sigma = sigma_n(spec);
    let ds = f.fractional_laplacian(spec.s);
    let phys = ds.to_physical(m);
    Ok(phys.iter().map(|&x| x * x - sigma).collect())
}

/// `\int Q_{s,N}(u) prod_i g_i dx` exactly in coefficient space:
/// `\int (D^s u)^2 prod g_i - sigma_N \int prod g_i`.
pub fn wick_integral(u: &SpectralField, spec: &MeasureSpec, extra: &[&SpectralField]) -> f64 {
    let ds = u.fractional_laplacian(spec.s);
    let mut factors: Vec<&SpectralField> = vec![&ds, &ds];
    factors.extend_from_slice(extra);
    let quad = crate::spectral::integral_of_product(&factors);
    let plain = if extra.is_empty() {
        u.grid().volume()
    } else {
        crate::spectral::integral_of_product(extra)
    };
    quad - sigma_n(spec) * plain
}
