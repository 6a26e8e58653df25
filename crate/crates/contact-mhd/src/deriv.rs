//! Derivative operators: spectral tangential derivatives, high-order finite
//! differences in the normal direction, and the weighted normal derivative
//! x_n (x_n^2 - 1) d/dx_n whose weight vanishes on the interface and walls.
//!
//! Tangential derivatives along different axes commute exactly (they act on
//! disjoint index axes via exact FFT multipliers in floating point up to
//! round-off; more importantly, curl constructions that need *exact* discrete
//! cancellation use the same operator twice, and the operator is linear).

use std::sync::Arc;

use rustfft::num_complex::Complex64;

use crate::error::{Result, SimError};
use crate::grid::{Phase, ScalarField, SlabGrid, VectorField};

/// Finite-difference weights for the m-th derivative at point `x0` given
/// stencil nodes `xs` (Fornberg's algorithm). Row `k` of the result holds the
/// weights for the k-th derivative, k = 0..=m.
pub fn fd_weights(x0: f64, xs: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = xs.len();
    assert!(n > m, "stencil must have more nodes than the derivative order");
    let mut c = vec![vec![0.0f64; n]; m + 1];
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Uniform-grid first-derivative weights of the given order of accuracy at
/// node offset `at` within a stencil of `width` consecutive nodes, spacing 1.
/// Scale by 1/h at use sites.
fn first_deriv_weights(width: usize, at: usize) -> Vec<f64> {
    let xs: Vec<f64> = (0..width).map(|i| i as f64).collect();
    fd_weights(at as f64, &xs, 1).remove(1)
}

/// Stencil table for normal derivatives at a fixed order of accuracy on a
/// column of n_n + 1 nodes. Interior nodes use the centered stencil; nodes
/// near the column ends use progressively shifted one-sided stencils of the
/// same width, so the formal order is uniform across the column.
#[derive(Debug, Clone)]
pub struct NormalStencil {
    /// Stencil width (order + 1 for odd offsets; 5 for classical order 4).
    pub width: usize,
    /// weights[at] = weights for evaluation point at offset `at` in a window
    /// of `width` nodes, spacing 1 (caller divides by h).
    pub weights: Vec<Vec<f64>>,
}

impl NormalStencil {
    /// Classical stencil of formal order `order` (width = order + 1).
    pub fn of_order(order: usize) -> Self {
        let width = order + 1;
        let weights = (0..width).map(|at| first_deriv_weights(width, at)).collect();
        NormalStencil { width, weights }
    }

    /// Window start for a column of `n_levels` nodes when evaluating at `j`.
    #[inline]
    pub fn window_start(&self, n_levels: usize, j: usize) -> usize {
        let half = self.width / 2;
        if j < half {
            0
        } else if j + (self.width - half) > n_levels {
            n_levels - self.width
        } else {
            j - half
        }
    }
}

/// Per-grid derivative engine. Holds the normal stencils and a scratch FFT
/// buffer size; cheap to clone (stencils are small).
#[derive(Debug, Clone)]
pub struct DerivOps {
    grid: Arc<SlabGrid>,
    /// Production one-sided/centered stencil (order 4, width 5).
    pub stencil: NormalStencil,
    /// Higher-order alternate (order 5, width 6) used by truncation-error
    /// estimators: the difference of the two estimates the order-4 LTE.
    pub stencil_alt: NormalStencil,
}

impl DerivOps {
    pub fn new(grid: &Arc<SlabGrid>) -> Self {
        DerivOps {
            grid: Arc::clone(grid),
            stencil: NormalStencil::of_order(4),
            stencil_alt: NormalStencil::of_order(5),
        }
    }

    pub fn grid(&self) -> &Arc<SlabGrid> {
        &self.grid
    }

    /// Spectral derivative along tangential axis `axis` (0-based, < dim-1).
    /// The Nyquist mode is zeroed: its derivative multiplier ik is purely
    /// odd and a real signal cannot represent it faithfully.
    pub fn d_tan(&self, f: &ScalarField, axis: usize) -> ScalarField {
        assert!(axis < self.grid.n_tan_axes(), "tangential axis out of range");
        let g = &self.grid;
        let n_t = g.n_t();
        let ks = g.wavenumbers();
        let nyquist = n_t / 2;
        let mut out = ScalarField::zeros(g);
        let mut buf = vec![Complex64::new(0.0, 0.0); n_t];

        // Iterate over all 1D lines along `axis`.
        for phase in Phase::BOTH {
            for j in 0..g.n_levels() {
                match (g.dim(), axis) {
                    (2, 0) => {
                        for (i1, z) in buf.iter_mut().enumerate() {
                            *z = Complex64::new(f.val(phase, i1, j), 0.0);
                        }
                        self.line_deriv(&mut buf, &ks, nyquist);
                        for (i1, z) in buf.iter().enumerate() {
                            out.set(phase, i1, j, z.re);
                        }
                    }
                    (3, 0) => {
                        for i2 in 0..n_t {
                            for i1 in 0..n_t {
                                buf[i1] = Complex64::new(f.val(phase, g.tan_idx(i1, i2), j), 0.0);
                            }
                            self.line_deriv(&mut buf, &ks, nyquist);
                            for i1 in 0..n_t {
                                out.set(phase, g.tan_idx(i1, i2), j, buf[i1].re);
                            }
                        }
                    }
                    (3, 1) => {
                        for i1 in 0..n_t {
                            for i2 in 0..n_t {
                                buf[i2] = Complex64::new(f.val(phase, g.tan_idx(i1, i2), j), 0.0);
                            }
                            self.line_deriv(&mut buf, &ks, nyquist);
                            for i2 in 0..n_t {
                                out.set(phase, g.tan_idx(i1, i2), j, buf[i2].re);
                            }
                        }
                    }
                    _ => unreachable!(),
                }
            }
        }
        out
    }

    fn line_deriv(&self, buf: &mut [Complex64], ks: &[i64], nyquist: usize) {
        // A constant line differentiates to exactly zero; the FFT round trip
        // would instead leave k_max-amplified round-off. Rest states and the
        // constant tails near the walls rely on the exact zero.
        if buf.iter().all(|z| z.re == buf[0].re) {
            buf.fill(Complex64::new(0.0, 0.0));
            return;
        }
        self.grid.fft_forward(buf);
        for (idx, z) in buf.iter_mut().enumerate() {
            if idx == nyquist {
                *z = Complex64::new(0.0, 0.0);
            } else {
                let ik = Complex64::new(0.0, ks[idx] as f64);
                *z *= ik;
            }
        }
        self.grid.fft_inverse(buf);
    }

    /// Normal derivative with the production order-4 stencil.
    pub fn d_normal(&self, f: &ScalarField) -> ScalarField {
        self.d_normal_with(f, &self.stencil)
    }

    /// Normal derivative with the alternate order-5 stencil.
    pub fn d_normal_alt(&self, f: &ScalarField) -> ScalarField {
        self.d_normal_with(f, &self.stencil_alt)
    }

    fn d_normal_with(&self, f: &ScalarField, st: &NormalStencil) -> ScalarField {
        let g = &self.grid;
        let n_levels = g.n_levels();
        assert!(
            n_levels >= st.width,
            "normal resolution below stencil width"
        );
        let inv_h = 1.0 / g.h_n();
        let mut out = ScalarField::zeros(g);
        for phase in Phase::BOTH {
            for it in 0..g.n_tan() {
                for j in 0..n_levels {
                    let s = st.window_start(n_levels, j);
                    // Locally constant data differentiates to exactly zero;
                    // the stencil weights only sum to zero up to round-off.
                    // Fields that are constant near a wall keep exactly-zero
                    // derivatives there, which the boundary compatibility
                    // arguments lean on.
                    let first = f.val(phase, it, s);
                    if (1..st.width).all(|k| f.val(phase, it, s + k) == first) {
                        continue;
                    }
                    let w = &st.weights[j - s];
                    let mut acc = 0.0;
                    for (k, wk) in w.iter().enumerate() {
                        acc += wk * f.val(phase, it, s + k);
                    }
                    out.set(phase, it, j, acc * inv_h);
                }
            }
        }
        out
    }

    /// Partial derivative along coordinate axis `axis` (normal = dim - 1).
    pub fn d_axis(&self, f: &ScalarField, axis: usize) -> ScalarField {
        if axis == self.grid.dim() - 1 {
            self.d_normal(f)
        } else {
            self.d_tan(f, axis)
        }
    }

    /// Gradient as a vector field (components ordered by axis; for dim == 2
    /// the axes are [tangential, normal]).
    pub fn grad(&self, f: &ScalarField) -> VectorField {
        VectorField {
            comps: (0..self.grid.dim()).map(|a| self.d_axis(f, a)).collect(),
        }
    }

    /// Jacobian-style gradient of a vector field: rows are components, columns
    /// axes, entry (i, j) = d_j v_i.
    pub fn grad_vec(&self, v: &VectorField) -> crate::grid::MatrixField {
        let d = self.grid.dim();
        let mut m = crate::grid::MatrixField::zeros(&self.grid);
        for i in 0..d {
            for j in 0..d {
                *m.get_mut(i, j) = self.d_axis(&v.comps[i], j);
            }
        }
        m
    }

    /// The weighted normal derivative x_n (x_n^2 - 1) d_n f. The weight is
    /// evaluated exactly at the nodes, so it vanishes identically on the
    /// interface (x_n = 0) and the walls (x_n = +-1): any application of this
    /// operator has exactly zero trace contribution from the weight factor.
    pub fn z_normal(&self, f: &ScalarField) -> ScalarField {
        let df = self.d_normal(f);
        let g = &self.grid;
        let mut out = ScalarField::zeros(g);
        for phase in Phase::BOTH {
            for j in 0..g.n_levels() {
                let x = g.x_normal(phase, j);
                let w = x * (x * x - 1.0);
                for it in 0..g.n_tan() {
                    out.set(phase, it, j, w * df.val(phase, it, j));
                }
            }
        }
        out
    }

    /// Apply the tangential/weighted-normal family Z^alpha: alpha lists the
    /// exponents (a_1[, a_2], a_n) with the weighted operator last. Budget
    /// guard: each weighted-normal application costs a stencil-width of
    /// effective resolution, so |alpha_n| is capped relative to n_n.
    pub fn z_alpha(&self, f: &ScalarField, alpha: &[usize]) -> Result<ScalarField> {
        let d = self.grid.dim();
        if alpha.len() != d {
            return Err(SimError::Config(format!(
                "multi-index length {} does not match dim {}",
                alpha.len(),
                d
            )));
        }
        let budget = self.grid.n_n() / 4;
        let a_n = alpha[d - 1];
        if a_n > budget {
            return Err(SimError::DerivativeBudgetExceeded {
                requested: a_n,
                budget,
            });
        }
        let mut out = f.clone();
        for axis in 0..d - 1 {
            for _ in 0..alpha[axis] {
                out = self.d_tan(&out, axis);
            }
        }
        for _ in 0..a_n {
            out = self.z_normal(&out);
        }
        Ok(out)
    }

    /// Plain mixed partial d^alpha (normal derivative unweighted).
    pub fn d_alpha(&self, f: &ScalarField, alpha: &[usize]) -> Result<ScalarField> {
        let d = self.grid.dim();
        if alpha.len() != d {
            return Err(SimError::Config(format!(
                "multi-index length {} does not match dim {}",
                alpha.len(),
                d
            )));
        }
        let budget = self.grid.n_n() / 2;
        if alpha[d - 1] > budget {
            return Err(SimError::DerivativeBudgetExceeded {
                requested: alpha[d - 1],
                budget,
            });
        }
        let mut out = f.clone();
        for axis in 0..d - 1 {
            for _ in 0..alpha[axis] {
                out = self.d_tan(&out, axis);
            }
        }
        for _ in 0..alpha[d - 1] {
            out = self.d_normal(&out);
        }
        Ok(out)
    }

    /// All multi-indices alpha with |alpha| <= l, dim components.
    pub fn multi_indices(dim: usize, l: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        match dim {
            2 => {
                for total in 0..=l {
                    for a1 in 0..=total {
                        out.push(vec![a1, total - a1]);
                    }
                }
            }
            3 => {
                for total in 0..=l {
                    for a1 in 0..=total {
                        for a2 in 0..=(total - a1) {
                            out.push(vec![a1, a2, total - a1 - a2]);
                        }
                    }
                }
            }
            _ => unreachable!(),
        }
        out
    }
}

/// Gradient of the flow map when the map is stored as a periodic displacement
/// u (eta = id + u): grad eta = I + grad u, the identity added in closed form
/// so the non-periodic identity part never passes through the FFT.
pub fn grad_flow_map(ops: &DerivOps, disp: &VectorField) -> crate::grid::MatrixField {
    let mut m = ops.grad_vec(disp);
    let d = m.dim;
    for i in 0..d {
        let comp = m.get_mut(i, i);
        *comp = comp.map(|v| v + 1.0);
    }
    m
}
