//! Discrete mollification with a compactly supported polynomial bump.
//!
//! The kernel is a tensor product of 1D kernels phi(r) = (1 - r^2)^4 on
//! |r| < 1, sampled at the grid nodes and renormalized so the discrete
//! weights sum to one: constants are reproduced to round-off, and a radius
//! below the grid spacing degrades to the exact identity (the delta -> 0
//! limit of the smoothing pipeline is the unsmoothed data, bitwise).
//!
//! Phases are never mixed: the volume variant reflects evenly at both ends
//! of each phase column, so mollifying discontinuous two-phase data does not
//! smear across the interface.

use std::sync::Arc;

use crate::error::{Result, SimError};
use crate::grid::{Phase, ScalarField, SlabGrid, VectorField};

fn bump(r: f64) -> f64 {
    if r.abs() < 1.0 {
        let s = 1.0 - r * r;
        s * s * s * s
    } else {
        0.0
    }
}

/// Normalized kernel weights at integer offsets -k..=k for radius/h ratio.
/// Returns (half_width, weights); half_width = 0 means identity.
fn kernel_weights(radius: f64, h: f64) -> (usize, Vec<f64>) {
    let ratio = radius / h;
    // Strictly inside the support: offsets k with |k| * h < radius.
    let half = if ratio <= 1.0 {
        0
    } else {
        (ratio - 1e-12).floor() as usize
    };
    if half == 0 {
        return (0, vec![1.0]);
    }
    let mut w: Vec<f64> = (-(half as i64)..=half as i64)
        .map(|k| bump(k as f64 / ratio))
        .collect();
    let s: f64 = w.iter().sum();
    for v in w.iter_mut() {
        *v /= s;
    }
    (half, w)
}

/// Even reflection of an out-of-range level index into 0..=n.
#[inline]
fn reflect(idx: i64, n: i64) -> usize {
    let period = 2 * n;
    let mut m = idx.rem_euclid(period);
    if m > n {
        m = period - m;
    }
    m as usize
}

#[derive(Debug, Clone)]
pub struct Mollifier {
    grid: Arc<SlabGrid>,
    radius: f64,
    half_t: usize,
    w_t: Vec<f64>,
    half_n: usize,
    w_n: Vec<f64>,
}

impl Mollifier {
    pub fn new(grid: &Arc<SlabGrid>, radius: f64) -> Result<Self> {
        if !radius.is_finite() || radius < 0.0 {
            return Err(SimError::InvalidMollifierRadius {
                radius,
                reason: "radius must be finite and nonnegative".into(),
            });
        }
        if radius >= 1.0 {
            return Err(SimError::InvalidMollifierRadius {
                radius,
                reason: "radius must stay below the phase thickness".into(),
            });
        }
        let (half_t, w_t) = kernel_weights(radius, grid.h_t());
        let (half_n, w_n) = kernel_weights(radius, grid.h_n());
        Ok(Mollifier {
            grid: Arc::clone(grid),
            radius,
            half_t,
            w_t,
            half_n,
            w_n,
        })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// True when this radius resolves to the exact identity on this grid.
    pub fn is_identity(&self) -> bool {
        self.half_t == 0 && self.half_n == 0
    }

    fn convolve_tan_axis(&self, f: &ScalarField, axis: usize) -> ScalarField {
        if self.half_t == 0 {
            return f.clone();
        }
        let g = &self.grid;
        let n_t = g.n_t() as i64;
        let half = self.half_t as i64;
        let mut out = ScalarField::zeros(g);
        for phase in Phase::BOTH {
            for it in 0..g.n_tan() {
                let (i1, i2) = g.tan_split(it);
                for j in 0..g.n_levels() {
                    let mut acc = 0.0;
                    for (kw, w) in self.w_t.iter().enumerate() {
                        let k = kw as i64 - half;
                        let it_s = match axis {
                            0 => g.tan_idx((i1 as i64 + k).rem_euclid(n_t) as usize, i2),
                            1 => g.tan_idx(i1, (i2 as i64 + k).rem_euclid(n_t) as usize),
                            _ => unreachable!(),
                        };
                        acc += w * f.val(phase, it_s, j);
                    }
                    out.set(phase, it, j, acc);
                }
            }
        }
        out
    }

    fn convolve_normal(&self, f: &ScalarField) -> ScalarField {
        if self.half_n == 0 {
            return f.clone();
        }
        let g = &self.grid;
        let n = g.n_n() as i64;
        let half = self.half_n as i64;
        let mut out = ScalarField::zeros(g);
        for phase in Phase::BOTH {
            for it in 0..g.n_tan() {
                for j in 0..g.n_levels() {
                    let mut acc = 0.0;
                    for (kw, w) in self.w_n.iter().enumerate() {
                        let k = kw as i64 - half;
                        let js = reflect(j as i64 + k, n);
                        acc += w * f.val(phase, it, js);
                    }
                    out.set(phase, it, j, acc);
                }
            }
        }
        out
    }

    /// Mollify along the tangential directions only: every normal level is
    /// smoothed in-plane, the normal profile is untouched.
    pub fn tangential(&self, f: &ScalarField) -> ScalarField {
        let mut out = self.convolve_tan_axis(f, 0);
        if self.grid.dim() == 3 {
            out = self.convolve_tan_axis(&out, 1);
        }
        out
    }

    /// Full volume mollification, even reflection at phase column ends.
    pub fn volume(&self, f: &ScalarField) -> ScalarField {
        self.convolve_normal(&self.tangential(f))
    }

    pub fn tangential_vec(&self, v: &VectorField) -> VectorField {
        VectorField {
            comps: v.comps.iter().map(|c| self.tangential(c)).collect(),
        }
    }

    pub fn volume_vec(&self, v: &VectorField) -> VectorField {
        VectorField {
            comps: v.comps.iter().map(|c| self.volume(c)).collect(),
        }
    }

    /// Mollify an interface/wall trace array (layout = tangential flat index).
    pub fn trace(&self, tr: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        debug_assert_eq!(tr.len(), g.n_tan());
        if self.half_t == 0 {
            return tr.to_vec();
        }
        let n_t = g.n_t() as i64;
        let half = self.half_t as i64;
        let conv_axis = |src: &[f64], axis: usize| -> Vec<f64> {
            let mut out = vec![0.0; src.len()];
            for it in 0..g.n_tan() {
                let (i1, i2) = g.tan_split(it);
                let mut acc = 0.0;
                for (kw, w) in self.w_t.iter().enumerate() {
                    let k = kw as i64 - half;
                    let it_s = match axis {
                        0 => g.tan_idx((i1 as i64 + k).rem_euclid(n_t) as usize, i2),
                        1 => g.tan_idx(i1, (i2 as i64 + k).rem_euclid(n_t) as usize),
                        _ => unreachable!(),
                    };
                    acc += w * src[it_s];
                }
                out[it] = acc;
            }
            out
        };
        let mut out = conv_axis(tr, 0);
        if g.dim() == 3 {
            out = conv_axis(&out, 1);
        }
        out
    }
}
