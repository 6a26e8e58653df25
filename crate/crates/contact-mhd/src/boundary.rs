//! Boundary trace dynamics at a material surface.
//!
//! The continuous traces along the interface are
//!
//!   U = (p, v.tau1, [v.tau2,] v.n, b.tau1 [, b.tau2]),
//!
//! 2*dim components; b.n is excluded because its jump vanishes identically
//! through the flux closure. The ideal evolution
//!
//!   dt p = -gamma p div_A v,
//!   dt v = (1/rho) ( -grad_A q + (b . grad_A) b ),
//!   dt b = (b . grad_A) v - b div_A v
//!
//! is affine in the spatial gradients, so dt U = E d_n U + (terms carrying
//! only tangential derivatives and values). `normal_matrix` builds E in
//! closed form; `StatePoint::time_deriv` evaluates the kernel on raw
//! gradients. The two are tied together by an exact-affinity test: bumping
//! the normal-derivative slot of one trace component must move the kernel
//! output by the matching column of E.

use crate::constitutive::PhaseFields;
use crate::deriv::DerivOps;
use crate::error::{Result, SimError};
use crate::geometry::Geometry;
use crate::grid::{Phase, VectorField};
use nalgebra::DMatrix;

/// Everything the trace kernel needs at one boundary point. Vectors are
/// padded to three entries; a 2D state uses slots 0 (tangential) and 1
/// (normal) and leaves slot 2 at zero.
#[derive(Clone, Debug)]
pub struct StatePoint {
    pub dim: usize,
    pub gamma: f64,
    pub rho: f64,
    pub jac: f64,
    /// A = (grad eta)^{-T}, a[i][l].
    pub a: [[f64; 3]; 3],
    /// Orthonormal frame: pushed tangents and the unit material normal.
    pub tau1: [f64; 3],
    pub tau2: [f64; 3],
    pub normal: [f64; 3],
    /// |N|, the unnormalized cofactor-normal magnitude.
    pub n_mag: f64,
    pub p: f64,
    pub v: [f64; 3],
    pub b: [f64; 3],
    pub grad_p: [f64; 3],
    /// grad_v[i][l] = d_l v_i.
    pub grad_v: [[f64; 3]; 3],
    pub grad_b: [[f64; 3]; 3],
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl StatePoint {
    pub fn n_traces(&self) -> usize {
        2 * self.dim
    }

    /// Trace values of U at the point.
    pub fn trace_values(&self) -> Vec<f64> {
        let mut u = Vec::with_capacity(self.n_traces());
        u.push(self.p);
        u.push(dot(&self.v, &self.tau1));
        if self.dim == 3 {
            u.push(dot(&self.v, &self.tau2));
        }
        u.push(dot(&self.v, &self.normal));
        u.push(dot(&self.b, &self.tau1));
        if self.dim == 3 {
            u.push(dot(&self.b, &self.tau2));
        }
        u
    }

    /// Ideal-evolution time derivatives of the traces, frame frozen at the
    /// point. Affine in the gradient slots.
    pub fn time_deriv(&self) -> Vec<f64> {
        let d = self.dim;
        let a = &self.a;

        let mut div_av = 0.0;
        for i in 0..d {
            for l in 0..d {
                div_av += a[i][l] * self.grad_v[i][l];
            }
        }

        // grad q = grad p + b_j grad b_j.
        let mut gq = [0.0; 3];
        for l in 0..d {
            let mut s = self.grad_p[l];
            for j in 0..d {
                s += self.b[j] * self.grad_b[j][l];
            }
            gq[l] = s;
        }

        // Pullback directions: (A^T b)_l and the A-contraction of gq.
        let mut dtv = [0.0; 3];
        let mut dtb = [0.0; 3];
        for i in 0..d {
            let mut agq = 0.0;
            for l in 0..d {
                agq += a[i][l] * gq[l];
            }
            let mut tension = 0.0;
            let mut stretch = 0.0;
            for j in 0..d {
                let mut adj = 0.0;
                for l in 0..d {
                    adj += a[j][l] * self.grad_b[i][l];
                }
                tension += self.b[j] * adj;
                let mut adv = 0.0;
                for l in 0..d {
                    adv += a[j][l] * self.grad_v[i][l];
                }
                stretch += self.b[j] * adv;
            }
            dtv[i] = (tension - agq) / self.rho;
            dtb[i] = stretch - self.b[i] * div_av;
        }

        let dtp = -self.gamma * self.p * div_av;

        let mut out = Vec::with_capacity(self.n_traces());
        out.push(dtp);
        out.push(dot(&dtv, &self.tau1));
        if d == 3 {
            out.push(dot(&dtv, &self.tau2));
        }
        out.push(dot(&dtv, &self.normal));
        out.push(dot(&dtb, &self.tau1));
        if d == 3 {
            out.push(dot(&dtb, &self.tau2));
        }
        out
    }
}

/// The coefficient matrix E of the normal derivatives in dt U = E d_n U + ...,
/// in closed form. Trace ordering matches `trace_values`.
pub fn normal_matrix(sp: &StatePoint) -> DMatrix<f64> {
    let n = sp.n_traces();
    let mut e = DMatrix::zeros(n, n);
    let nm = sp.n_mag;
    let j = sp.jac;
    let rho = sp.rho;
    let bn = dot(&sp.b, &sp.normal) * nm;
    let bt1 = dot(&sp.b, &sp.tau1);

    if sp.dim == 2 {
        // Rows/cols: 0 = p, 1 = v.tau, 2 = v.n, 3 = b.tau.
        e[(0, 2)] = -sp.gamma * sp.p * nm / j;
        e[(1, 3)] = bn / (rho * j);
        e[(2, 0)] = -nm / (rho * j);
        e[(2, 3)] = -nm * bt1 / (rho * j);
        e[(3, 1)] = bn / j;
        e[(3, 2)] = -nm * bt1 / j;
    } else {
        let bt2 = dot(&sp.b, &sp.tau2);
        // Rows/cols: 0 = p, 1 = v.tau1, 2 = v.tau2, 3 = v.n, 4 = b.tau1,
        // 5 = b.tau2.
        e[(0, 3)] = -sp.gamma * sp.p * nm / j;
        e[(1, 4)] = bn / (rho * j);
        e[(2, 5)] = bn / (rho * j);
        e[(3, 0)] = -nm / (rho * j);
        e[(3, 4)] = -nm * bt1 / (rho * j);
        e[(3, 5)] = -nm * bt2 / (rho * j);
        e[(4, 1)] = bn / j;
        e[(4, 3)] = -nm * bt1 / j;
        e[(5, 2)] = bn / j;
        e[(5, 3)] = -nm * bt2 / j;
    }
    e
}

/// Closed-form determinant of E. Negative in 3D, positive in 2D whenever
/// the state is nondegenerate, so invertibility needs only |b.N| > 0 along
/// with the bulk positivity already enforced elsewhere.
pub fn normal_matrix_det(sp: &StatePoint) -> f64 {
    let nm = sp.n_mag;
    let j = sp.jac;
    let rho = sp.rho;
    let bn = dot(&sp.b, &sp.normal) * nm;
    let gp = sp.gamma * sp.p;
    if sp.dim == 2 {
        gp * nm * nm * bn * bn / (rho * rho * j.powi(4))
    } else {
        -gp * nm * nm * bn.powi(4) / (rho.powi(3) * j.powi(6))
    }
}

/// Reject states whose trace system degenerates.
pub fn check_invertible(sp: &StatePoint, floor: f64) -> Result<()> {
    let det = normal_matrix_det(sp);
    if !det.is_finite() || det.abs() < floor {
        return Err(SimError::SingularBoundaryMatrix {
            det: det.abs(),
            floor,
        });
    }
    Ok(())
}

/// Assemble the per-node states of one phase at a fixed normal level from
/// grid fields (the production route into the pointwise kernel).
pub fn states_at_level(
    ops: &DerivOps,
    geom: &Geometry,
    fields: &PhaseFields,
    vel: &VectorField,
    gamma: f64,
    phase: Phase,
    level: usize,
) -> Result<Vec<StatePoint>> {
    let grid = ops.grid();
    let d = grid.dim();
    let frame = geom.boundary_frame(phase, level)?;

    let grad_p = ops.grad(&fields.p);
    let grad_v: Vec<Vec<_>> = (0..d)
        .map(|i| (0..d).map(|l| ops.d_axis(&vel.comps[i], l)).collect())
        .collect();
    let grad_b: Vec<Vec<_>> = (0..d)
        .map(|i| (0..d).map(|l| ops.d_axis(&fields.b.comps[i], l)).collect())
        .collect();

    let mut out = Vec::with_capacity(grid.n_tan());
    for it in 0..grid.n_tan() {
        let mut sp = StatePoint {
            dim: d,
            gamma,
            rho: fields.rho.val(phase, it, level),
            jac: geom.jac.val(phase, it, level),
            a: [[0.0; 3]; 3],
            tau1: frame.tau1[it],
            tau2: frame.tau2[it],
            normal: frame.normal[it],
            n_mag: frame.n_mag[it],
            p: fields.p.val(phase, it, level),
            v: [0.0; 3],
            b: [0.0; 3],
            grad_p: [0.0; 3],
            grad_v: [[0.0; 3]; 3],
            grad_b: [[0.0; 3]; 3],
        };
        for i in 0..d {
            sp.v[i] = vel.comps[i].val(phase, it, level);
            sp.b[i] = fields.b.comps[i].val(phase, it, level);
            sp.grad_p[i] = grad_p.comps[i].val(phase, it, level);
            for l in 0..d {
                sp.a[i][l] = geom.a_mat.get(i, l).val(phase, it, level);
                sp.grad_v[i][l] = grad_v[i][l].val(phase, it, level);
                sp.grad_b[i][l] = grad_b[i][l].val(phase, it, level);
            }
        }
        out.push(sp);
    }
    Ok(out)
}
