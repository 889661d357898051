//! Multi-dimensional FFT on top of `rustfft`, with planner/scratch caching.
//!
//! Conventions: `inverse_nd` computes the unnormalised synthesis sum
//! `u_j = sum_k c_k e^{+2 pi i j.k / m}` axis by axis, and `forward_nd`
//! the analysis sum with `e^{-2 pi i j.k / m}`; dividing the forward
//! output by `m^d` recovers coefficients exactly (in exact arithmetic)
//! for band-limited data. Grids are cubes of side `m` in row-major order
//! with the last axis fastest.

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};
use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

thread_local! {
    static PLAN_CACHE: RefCell<HashMap<(usize, bool), Arc<dyn Fft<f64>>>> =
        RefCell::new(HashMap::new());
}

fn plan(m: usize, forward: bool) -> Arc<dyn Fft<f64>> {
    PLAN_CACHE.with(|c| {
        c.borrow_mut()
            .entry((m, forward))
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                let dir = if forward {
                    FftDirection::Forward
                } else {
                    FftDirection::Inverse
                };
                planner.plan_fft(m, dir)
            })
            .clone()
    })
}

/// Smallest integer `>= m` whose only prime factors are 2, 3 and 5.
pub fn next_fast_size(m: usize) -> usize {
    let mut m = m.max(1);
    loop {
        let mut r = m;
        for p in [2usize, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// In-place unnormalised DFT over every axis of a `d`-dimensional cube of
/// side `m` stored row-major in `data` (`data.len() == m^d`).
pub fn transform_nd(data: &mut [Complex64], d: usize, m: usize, forward: bool) {
    assert_eq!(data.len(), m.pow(d as u32), "grid size mismatch");
    let fft = plan(m, forward);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    let mut line = vec![Complex64::default(); m];
    // Axis `a` has stride m^(d-1-a); the last axis is contiguous.
    for a in 0..d {
        let stride = m.pow((d - 1 - a) as u32);
        if stride == 1 {
            for chunk in data.chunks_exact_mut(m) {
                fft.process_with_scratch(chunk, &mut scratch);
            }
        } else {
            // Enumerate line starts: indices whose coordinate along `a` is 0.
            let block = stride * m; // span of one line along axis a
            let nblocks = data.len() / block;
            for b in 0..nblocks {
                for off in 0..stride {
                    let base = b * block + off;
                    for (k, slot) in line.iter_mut().enumerate() {
                        *slot = data[base + k * stride];
                    }
                    fft.process_with_scratch(&mut line, &mut scratch);
                    for (k, v) in line.iter().enumerate() {
                        data[base + k * stride] = *v;
                    }
                }
            }
        }
    }
}
