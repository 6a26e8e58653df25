//! Geometry of the flow map: gradient, cofactor matrix, Jacobian, inverse
//! transpose, material normal, boundary frames, and the metric differential
//! operators grad_A, div_A, laplace_A.
//!
//! The map is handled as identity plus periodic displacement. The cofactor
//! matrix JA is assembled in closed form, so the column JA e_n *is* the
//! cross product of the tangential map derivatives (in 2D the rotated
//! tangent) with no derivative of a product anywhere: identities that only
//! involve this pointwise algebra hold to round-off on the grid, while
//! identities with an outer derivative (Piola) inherit the stencil
//! truncation error.

use std::sync::Arc;

use crate::deriv::{grad_flow_map, DerivOps};
use crate::error::{Result, SimError};
use crate::grid::{MatrixField, Phase, ScalarField, SlabGrid, VectorField};

/// Cached geometric quantities of one flow map snapshot.
#[derive(Clone, Debug)]
pub struct Geometry {
    grid: Arc<SlabGrid>,
    /// grad eta, entry (i, j) = d_j eta_i.
    pub grad_eta: MatrixField,
    /// Cofactor matrix of grad eta, equal to J A.
    pub ja: MatrixField,
    /// J = det grad eta.
    pub jac: ScalarField,
    /// A = (grad eta)^{-T}.
    pub a_mat: MatrixField,
    /// Material normal N = JA e_n (last column of the cofactor matrix).
    pub normal: VectorField,
}

/// Orthonormal boundary frame per tangential node at a fixed normal level.
/// Components are padded to 3 entries; in 2D tau2 is zero and the third
/// entry of every vector is unused.
#[derive(Clone, Debug)]
pub struct BoundaryFrame {
    pub tau1: Vec<[f64; 3]>,
    pub tau2: Vec<[f64; 3]>,
    pub normal: Vec<[f64; 3]>,
    /// |N| per node (the unnormalized material normal magnitude).
    pub n_mag: Vec<f64>,
}

const TANGENT_FLOOR: f64 = 1e-10;

impl Geometry {
    /// Build the geometry from a displacement field; fails when the Jacobian
    /// dips below `j_floor` anywhere (orientation loss or near-singular map).
    pub fn build(ops: &DerivOps, disp: &VectorField, j_floor: f64) -> Result<Geometry> {
        let grid = Arc::clone(ops.grid());
        let d = grid.dim();
        let grad_eta = grad_flow_map(ops, disp);
        let m = &grad_eta;

        let (ja, jac) = match d {
            2 => {
                let mut ja = MatrixField::zeros(&grid);
                *ja.get_mut(0, 0) = m.get(1, 1).clone();
                *ja.get_mut(0, 1) = m.get(1, 0).scale(-1.0);
                *ja.get_mut(1, 0) = m.get(0, 1).scale(-1.0);
                *ja.get_mut(1, 1) = m.get(0, 0).clone();
                let jac = m
                    .get(0, 0)
                    .mul(m.get(1, 1))
                    .sub(&m.get(0, 1).mul(m.get(1, 0)));
                (ja, jac)
            }
            3 => {
                let minor = |a: (usize, usize), b: (usize, usize), c: (usize, usize), e: (usize, usize)| {
                    m.get(a.0, a.1).mul(m.get(b.0, b.1)).sub(&m.get(c.0, c.1).mul(m.get(e.0, e.1)))
                };
                let mut ja = MatrixField::zeros(&grid);
                *ja.get_mut(0, 0) = minor((1, 1), (2, 2), (1, 2), (2, 1));
                *ja.get_mut(0, 1) = minor((1, 2), (2, 0), (1, 0), (2, 2));
                *ja.get_mut(0, 2) = minor((1, 0), (2, 1), (1, 1), (2, 0));
                *ja.get_mut(1, 0) = minor((0, 2), (2, 1), (0, 1), (2, 2));
                *ja.get_mut(1, 1) = minor((0, 0), (2, 2), (0, 2), (2, 0));
                *ja.get_mut(1, 2) = minor((0, 1), (2, 0), (0, 0), (2, 1));
                *ja.get_mut(2, 0) = minor((0, 1), (1, 2), (0, 2), (1, 1));
                *ja.get_mut(2, 1) = minor((0, 2), (1, 0), (0, 0), (1, 2));
                *ja.get_mut(2, 2) = minor((0, 0), (1, 1), (0, 1), (1, 0));
                // Row-1 cofactor expansion; deliberately a different grouping
                // from the column-n expansion (d_n eta . N), so comparing the
                // two is a meaningful round-off-class check.
                let mut jac = m.get(0, 0).mul(ja.get(0, 0));
                jac.add_assign(&m.get(0, 1).mul(ja.get(0, 1)));
                jac.add_assign(&m.get(0, 2).mul(ja.get(0, 2)));
                (ja, jac)
            }
            _ => unreachable!(),
        };

        let min_j = jac.min_value();
        if min_j < j_floor {
            return Err(SimError::SingularMap {
                min_jac: min_j,
                floor: j_floor,
            });
        }

        let inv_j = jac.map(|v| 1.0 / v);
        let mut a_mat = MatrixField::zeros(&grid);
        for i in 0..d {
            for j in 0..d {
                *a_mat.get_mut(i, j) = ja.get(i, j).mul(&inv_j);
            }
        }

        let normal = VectorField {
            comps: (0..d).map(|i| ja.get(i, d - 1).clone()).collect(),
        };

        Ok(Geometry {
            grid,
            grad_eta,
            ja,
            jac,
            a_mat,
            normal,
        })
    }

    pub fn grid(&self) -> &Arc<SlabGrid> {
        &self.grid
    }

    /// Metric gradient (grad_A f)_i = A_il d_l f.
    pub fn grad_a(&self, ops: &DerivOps, f: &ScalarField) -> VectorField {
        let df = ops.grad(f);
        self.a_mat.mat_vec(&df)
    }

    /// Metric divergence div_A v = A_il d_l v_i.
    pub fn div_a(&self, ops: &DerivOps, v: &VectorField) -> ScalarField {
        let d = self.grid.dim();
        let mut acc = ScalarField::zeros(&self.grid);
        for i in 0..d {
            let dv = ops.grad(&v.comps[i]);
            for l in 0..d {
                acc.add_assign(&self.a_mat.get(i, l).mul(&dv.comps[l]));
            }
        }
        acc
    }

    /// Metric directional derivative (w . grad_A) f = w_i A_il d_l f.
    pub fn dir_deriv_a(&self, ops: &DerivOps, w: &VectorField, f: &ScalarField) -> ScalarField {
        let df = self.grad_a(ops, f);
        w.dot(&df)
    }

    /// Metric Laplacian laplace_A f = div_A grad_A f.
    pub fn laplace_a(&self, ops: &DerivOps, f: &ScalarField) -> ScalarField {
        let gf = self.grad_a(ops, f);
        self.div_a(ops, &gf)
    }

    /// Componentwise metric Laplacian of a vector field.
    pub fn laplace_a_vec(&self, ops: &DerivOps, v: &VectorField) -> VectorField {
        VectorField {
            comps: v.comps.iter().map(|c| self.laplace_a(ops, c)).collect(),
        }
    }

    /// Residual of the Piola identity d_j (J A_ij) = 0 as a vector field.
    /// Zero only up to stencil truncation: the cofactors are products of map
    /// derivatives and the outer derivative does not telescope discretely.
    pub fn piola_residual(&self, ops: &DerivOps) -> VectorField {
        let d = self.grid.dim();
        let mut comps = Vec::with_capacity(d);
        for i in 0..d {
            let mut acc = ScalarField::zeros(&self.grid);
            for j in 0..d {
                acc.add_assign(&ops.d_axis(self.ja.get(i, j), j));
            }
            comps.push(acc);
        }
        VectorField { comps }
    }

    /// Normal component of the material normal against a vector field,
    /// pointwise: v . N.
    pub fn dot_normal(&self, v: &VectorField) -> ScalarField {
        v.dot(&self.normal)
    }

    /// Orthonormal frame at a fixed normal level of one phase, built from the
    /// pushed-forward tangential directions by Gram-Schmidt, with the unit
    /// material normal completing the triple.
    pub fn boundary_frame(&self, phase: Phase, level: usize) -> Result<BoundaryFrame> {
        let g = &self.grid;
        let d = g.dim();
        let n_tan = g.n_tan();
        let mut tau1 = vec![[0.0; 3]; n_tan];
        let mut tau2 = vec![[0.0; 3]; n_tan];
        let mut normal = vec![[0.0; 3]; n_tan];
        let mut n_mag = vec![0.0; n_tan];

        for it in 0..n_tan {
            let mut t1 = [0.0; 3];
            for i in 0..d {
                t1[i] = self.grad_eta.get(i, 0).val(phase, it, level);
            }
            let t1n = (t1[0] * t1[0] + t1[1] * t1[1] + t1[2] * t1[2]).sqrt();
            if t1n < TANGENT_FLOOR {
                return Err(SimError::DegenerateTangent { norm: t1n });
            }
            for c in t1.iter_mut() {
                *c /= t1n;
            }

            let mut t2 = [0.0; 3];
            if d == 3 {
                for i in 0..d {
                    t2[i] = self.grad_eta.get(i, 1).val(phase, it, level);
                }
                let proj = t2[0] * t1[0] + t2[1] * t1[1] + t2[2] * t1[2];
                for (c, t) in t2.iter_mut().zip(t1.iter()) {
                    *c -= proj * t;
                }
                let t2n = (t2[0] * t2[0] + t2[1] * t2[1] + t2[2] * t2[2]).sqrt();
                if t2n < TANGENT_FLOOR {
                    return Err(SimError::DegenerateTangent { norm: t2n });
                }
                for c in t2.iter_mut() {
                    *c /= t2n;
                }
            }

            let mut nv = [0.0; 3];
            for i in 0..d {
                nv[i] = self.normal.comps[i].val(phase, it, level);
            }
            let nn = (nv[0] * nv[0] + nv[1] * nv[1] + nv[2] * nv[2]).sqrt();
            if nn < TANGENT_FLOOR {
                return Err(SimError::DegenerateTangent { norm: nn });
            }
            n_mag[it] = nn;
            for c in nv.iter_mut() {
                *c /= nn;
            }

            tau1[it] = t1;
            tau2[it] = t2;
            normal[it] = nv;
        }

        Ok(BoundaryFrame {
            tau1,
            tau2,
            normal,
            n_mag,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SlabGrid;

    fn identity_geometry(dim: usize) -> (Arc<SlabGrid>, DerivOps, Geometry) {
        let grid = SlabGrid::new(dim, 8, 8).unwrap();
        let ops = DerivOps::new(&grid);
        let disp = VectorField::zeros(&grid);
        let geom = Geometry::build(&ops, &disp, 0.1).unwrap();
        (grid, ops, geom)
    }

    #[test]
    fn identity_map_geometry_is_exact() {
        for dim in [2usize, 3] {
            let (grid, _, geom) = identity_geometry(dim);
            assert_eq!(geom.jac.linf(), 1.0);
            assert_eq!(geom.jac.min_value(), 1.0);
            for i in 0..dim {
                for j in 0..dim {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert_eq!(geom.a_mat.get(i, j).linf(), expect);
                }
            }
            // N = e_n exactly.
            for i in 0..dim {
                let expect = if i == dim - 1 { 1.0 } else { 0.0 };
                assert_eq!(geom.normal.comps[i].linf(), expect);
            }
            let _ = grid;
        }
    }

    #[test]
    fn graph_map_matches_closed_forms() {
        // eta = (x1, x2 + a sin(x1) chi(x2)), chi = (1 - x2^2)^2: polynomial
        // in the normal direction (order-4 stencil exact on quartics) and a
        // single Fourier mode tangentially (spectral exact).
        let grid = SlabGrid::new(2, 16, 16).unwrap();
        let ops = DerivOps::new(&grid);
        let a = 0.07;
        let chi = |z: f64| (1.0 - z * z) * (1.0 - z * z);
        let dchi = |z: f64| -4.0 * z * (1.0 - z * z);
        let disp = VectorField::from_fn(&grid, |_, x| {
            vec![0.0, a * x[0].sin() * chi(x[2])]
        });
        let geom = Geometry::build(&ops, &disp, 0.1).unwrap();

        let j_expect = ScalarField::from_fn(&grid, |_, x| 1.0 + a * x[0].sin() * dchi(x[2]));
        assert!(geom.jac.linf_diff(&j_expect) < 1e-12);

        // Material normal (-d1 eta_2, d1 eta_1) = (-a cos(x1) chi(x2), 1).
        let n0_expect = ScalarField::from_fn(&grid, |_, x| -a * x[0].cos() * chi(x[2]));
        assert!(geom.normal.comps[0].linf_diff(&n0_expect) < 1e-12);
        assert!((geom.normal.comps[1].linf() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn jacobian_times_det_inverse_is_one() {
        let grid = SlabGrid::new(3, 8, 8).unwrap();
        let ops = DerivOps::new(&grid);
        let disp = VectorField::from_fn(&grid, |_, x| {
            let chi = (1.0 - x[2] * x[2]) * (1.0 - x[2] * x[2]);
            vec![
                0.03 * (x[0] + 2.0 * x[1]).sin() * chi,
                -0.02 * (2.0 * x[0] - x[1]).cos() * chi,
                0.04 * x[0].sin() * x[1].cos() * chi,
            ]
        });
        let geom = Geometry::build(&ops, &disp, 0.1).unwrap();
        // det(A) computed from the inverse-transpose entries must satisfy
        // J * det(A) = 1 to round-off: pure pointwise algebra.
        let a = &geom.a_mat;
        let det_a = {
            let m00 = a.get(0, 0);
            let m01 = a.get(0, 1);
            let m02 = a.get(0, 2);
            let m10 = a.get(1, 0);
            let m11 = a.get(1, 1);
            let m12 = a.get(1, 2);
            let m20 = a.get(2, 0);
            let m21 = a.get(2, 1);
            let m22 = a.get(2, 2);
            let c0 = m11.mul(m22).sub(&m12.mul(m21));
            let c1 = m10.mul(m22).sub(&m12.mul(m20));
            let c2 = m10.mul(m21).sub(&m11.mul(m20));
            m00.mul(&c0).sub(&m01.mul(&c1)).add(&m02.mul(&c2))
        };
        let prod = geom.jac.mul(&det_a);
        let dev = prod.map(|v| v - 1.0).linf();
        assert!(dev < 1e-12, "J det(A) - 1 = {dev}");
    }

    #[test]
    fn jacobian_equals_normal_column_expansion() {
        // J computed by row-1 expansion vs d_n eta . N (column-n expansion):
        // different association order, must agree to round-off.
        let grid = SlabGrid::new(3, 8, 8).unwrap();
        let ops = DerivOps::new(&grid);
        let disp = VectorField::from_fn(&grid, |_, x| {
            let chi = (1.0 - x[2] * x[2]) * (1.0 - x[2] * x[2]);
            vec![
                0.05 * (x[1]).sin() * chi,
                0.05 * (x[0]).cos() * chi,
                0.06 * (x[0] + x[1]).sin() * chi,
            ]
        });
        let geom = Geometry::build(&ops, &disp, 0.1).unwrap();
        let d = 3;
        let mut alt = geom.grad_eta.get(0, d - 1).mul(&geom.normal.comps[0]);
        for i in 1..d {
            alt.add_assign(&geom.grad_eta.get(i, d - 1).mul(&geom.normal.comps[i]));
        }
        assert!(geom.jac.linf_diff(&alt) < 1e-13);
    }

    #[test]
    fn piola_residual_two_d_is_roundoff() {
        // In 2D the cofactor divergence is a bare commutator of mixed
        // partials (no products), and the tangential/normal operators act on
        // disjoint index axes: the residual sits at round-off, not at the
        // stencil truncation level.
        let grid = SlabGrid::new(2, 16, 16).unwrap();
        let ops = DerivOps::new(&grid);
        let disp = VectorField::from_fn(&grid, |_, x| {
            let prof = (std::f64::consts::FRAC_PI_2 * x[2]).cos();
            vec![0.08 * (x[0]).sin() * prof, 0.08 * (x[0]).cos() * prof]
        });
        let geom = Geometry::build(&ops, &disp, 0.1).unwrap();
        assert!(geom.piola_residual(&ops).linf() < 1e-12);
    }

    #[test]
    fn piola_residual_three_d_converges_at_stencil_order() {
        // In 3D the cofactors are products of map derivatives; the discrete
        // Leibniz failure puts the residual at the stencil truncation order.
        let mut errs = Vec::new();
        for n in [8usize, 16, 32] {
            let grid = SlabGrid::new(3, 8, n).unwrap();
            let ops = DerivOps::new(&grid);
            let disp = VectorField::from_fn(&grid, |_, x| {
                let prof = (std::f64::consts::FRAC_PI_2 * x[2]).cos();
                vec![
                    0.08 * (x[0] + x[1]).sin() * prof,
                    0.06 * (x[0]).cos() * prof,
                    0.05 * (x[1]).sin() * prof,
                ]
            });
            let geom = Geometry::build(&ops, &disp, 0.1).unwrap();
            errs.push(geom.piola_residual(&ops).linf());
        }
        let p1 = (errs[0] / errs[1]).log2();
        let p2 = (errs[1] / errs[2]).log2();
        assert!(
            p1 > 3.3 && p2 > 3.3,
            "Piola residual orders {p1:.2} {p2:.2} from {errs:?}"
        );
    }

    #[test]
    fn metric_laplacian_reduces_to_flat_on_identity() {
        let grid = SlabGrid::new(2, 16, 16).unwrap();
        let ops = DerivOps::new(&grid);
        let disp = VectorField::zeros(&grid);
        let geom = Geometry::build(&ops, &disp, 0.1).unwrap();
        let f = ScalarField::from_fn(&grid, |_, x| (2.0 * x[0]).sin() + x[2] * x[2] * x[2]);
        let lap = geom.laplace_a(&ops, &f);
        let expect = ScalarField::from_fn(&grid, |_, x| -4.0 * (2.0 * x[0]).sin() + 6.0 * x[2]);
        assert!(lap.linf_diff(&expect) < 1e-9, "{}", lap.linf_diff(&expect));
    }

    #[test]
    fn boundary_frame_is_orthonormal() {
        let grid = SlabGrid::new(3, 8, 8).unwrap();
        let ops = DerivOps::new(&grid);
        let disp = VectorField::from_fn(&grid, |_, x| {
            let chi = (1.0 - x[2] * x[2]) * (1.0 - x[2] * x[2]);
            vec![0.0, 0.0, 0.1 * (x[0].sin() + x[1].cos()) * chi]
        });
        let geom = Geometry::build(&ops, &disp, 0.1).unwrap();
        let frame = geom
            .boundary_frame(Phase::Plus, grid.interface_level(Phase::Plus))
            .unwrap();
        let dot = |a: &[f64; 3], b: &[f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        for it in 0..grid.n_tan() {
            let t1 = &frame.tau1[it];
            let t2 = &frame.tau2[it];
            let n = &frame.normal[it];
            assert!((dot(t1, t1) - 1.0).abs() < 1e-12);
            assert!((dot(t2, t2) - 1.0).abs() < 1e-12);
            assert!((dot(n, n) - 1.0).abs() < 1e-12);
            assert!(dot(t1, t2).abs() < 1e-12);
            assert!(dot(t1, n).abs() < 1e-12);
            assert!(dot(t2, n).abs() < 1e-12);
            assert!(frame.n_mag[it] > 0.9);
        }
    }

    #[test]
    fn singular_map_detected() {
        let grid = SlabGrid::new(2, 8, 8).unwrap();
        let ops = DerivOps::new(&grid);
        // Compress the normal direction to collapse: eta_2 = x2 - x2 => J ~ 0.
        // Displacement must be periodic-friendly: depend on x2 only.
        let disp = VectorField::from_fn(&grid, |_, x| vec![0.0, -0.999 * x[2]]);
        let err = Geometry::build(&ops, &disp, 0.1).unwrap_err();
        assert!(matches!(err, SimError::SingularMap { .. }));
    }
}
