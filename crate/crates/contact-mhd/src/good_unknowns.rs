//! Shifted highest-order tangential derivatives and the commutator algebra
//! behind them.
//!
//! Applying a Z-family derivative of order m to a metric gradient leaves the
//! order-m map derivative behind as an uncontrolled byproduct. Subtracting
//! the transport correction `Z^a eta . grad_A` from the plain derivative
//! cancels it; the shifted quantities (Alinhac's good unknowns) obey the same
//! interface problem up to lower-order forcing and carry jump relations
//! driven only by the normal-derivative mismatch of the underlying field.
//!
//! Discrete fine print, fixed here once: every commutator bracket below is
//! the literal difference of composed grid operators, never a hand-expanded
//! product rule. With that convention the Leibniz expansion of
//! `Z^a(metric_partial f)` telescopes to round-off on any state
//! (`leibniz_residual`). The closed commutator form additionally rewrites
//! `Z^a A` through the map, which uses the product rule of the continuum;
//! that step is exact only where the stencils differentiate exactly, so
//! `alinhac_residual` is round-off clean on tangentially sheared maps and
//! converges at stencil order otherwise.

use crate::deriv::DerivOps;
use crate::energy::z_alpha_map;
use crate::error::{Result, SimError};
use crate::geometry::Geometry;
use crate::grid::{Phase, ScalarField, VectorField};

/// Total pressure q = p + |b|^2 / 2.
pub fn total_pressure(p: &ScalarField, b: &VectorField) -> ScalarField {
    p.add(&b.norm_sq().scale(0.5))
}

/// The metric partial along slot i: (metric_partial f)_i = A_ij d_j f.
pub fn metric_partial(ops: &DerivOps, geom: &Geometry, i: usize, f: &ScalarField) -> ScalarField {
    let df = ops.grad(f);
    let d = ops.grid().dim();
    let mut acc = ScalarField::zeros(ops.grid());
    for j in 0..d {
        acc.add_assign(&geom.a_mat.get(i, j).mul(&df.comps[j]));
    }
    acc
}

/// The order-m shifted derivatives of one state snapshot for a single
/// multi-index. Velocity and total pressure shift along the current map,
/// the magnetic field and the map itself along the initial one.
#[derive(Clone, Debug)]
pub struct GoodUnknowns {
    pub alpha: Vec<usize>,
    /// Z^a v - Z^a eta . grad_A v.
    pub v_m: VectorField,
    /// Z^a q - Z^a eta . grad_A q, q the total pressure.
    pub q_m: ScalarField,
    /// Z^a b - Z^a eta_0 . grad_{A_0} b.
    pub b_m: VectorField,
    /// Z^a eta - Z^a eta_0 . grad_{A_0} eta.
    pub xi_m: VectorField,
    /// Z^a eta, kept because the jump relations reuse it.
    pub z_eta: VectorField,
    /// Z^a eta_0.
    pub z_eta0: VectorField,
}

/// Assemble the good unknowns of (p, v, b) for the multi-index `alpha`.
/// `geom`/`disp` describe the current map, `geom0`/`disp0` the initial one.
#[allow(clippy::too_many_arguments)]
pub fn good_unknowns(
    ops: &DerivOps,
    geom: &Geometry,
    disp: &VectorField,
    geom0: &Geometry,
    disp0: &VectorField,
    p: &ScalarField,
    v: &VectorField,
    b: &VectorField,
    alpha: &[usize],
) -> Result<GoodUnknowns> {
    let z_eta = z_alpha_map(ops, disp, alpha)?;
    let z_eta0 = z_alpha_map(ops, disp0, alpha)?;

    let q = total_pressure(p, b);
    let q_m = ops
        .z_alpha(&q, alpha)?
        .sub(&geom.dir_deriv_a(ops, &z_eta, &q));

    let shift_vec = |field: &VectorField, g: &Geometry, zeta: &VectorField| -> Result<VectorField> {
        let comps = field
            .comps
            .iter()
            .map(|c| Ok(ops.z_alpha(c, alpha)?.sub(&g.dir_deriv_a(ops, zeta, c))))
            .collect::<Result<Vec<_>>>()?;
        Ok(VectorField { comps })
    };
    let v_m = shift_vec(v, geom, &z_eta)?;
    let b_m = shift_vec(b, geom0, &z_eta0)?;

    // Z^a eta_0 . grad_{A_0} eta, with d_j eta taken from the assembled map
    // gradient so the identity part never meets a raw coordinate stencil.
    let w0 = geom0.a_mat.mat_t_vec(&z_eta0);
    let drag = geom.grad_eta.mat_vec(&w0);
    let xi_m = z_eta.sub(&drag);

    Ok(GoodUnknowns {
        alpha: alpha.to_vec(),
        v_m,
        q_m,
        b_m,
        xi_m,
        z_eta,
        z_eta0,
    })
}

/// [Z^a, d_3] f = Z^a(d_3 f) - d_3(Z^a f), a literal composition difference.
/// Nonzero because the weighted normal derivative does not commute with the
/// plain one; pure tangential multi-indices give round-off only.
pub fn z_normal_commutator(
    ops: &DerivOps,
    f: &ScalarField,
    alpha: &[usize],
) -> Result<ScalarField> {
    let lhs = ops.z_alpha(&ops.d_normal(f), alpha)?;
    let rhs = ops.d_normal(&ops.z_alpha(f, alpha)?);
    Ok(lhs.sub(&rhs))
}

/// [Z^a, d_3] applied to the flow map id + disp, componentwise. The identity
/// contributes the constant normal column of the map gradient on one side
/// and the analytically injected Z^a of the map on the other.
pub fn z_normal_commutator_map(
    ops: &DerivOps,
    disp: &VectorField,
    alpha: &[usize],
) -> Result<VectorField> {
    let d = ops.grid().dim();
    let z_eta = z_alpha_map(ops, disp, alpha)?;
    let mut comps = Vec::with_capacity(d);
    for k in 0..d {
        let mut d3 = ops.d_normal(&disp.comps[k]);
        if k + 1 == d {
            d3 = d3.map(|v| v + 1.0);
        }
        let lhs = ops.z_alpha(&d3, alpha)?;
        let rhs = ops.d_normal(&z_eta.comps[k]);
        comps.push(lhs.sub(&rhs));
    }
    Ok(VectorField { comps })
}

/// Multiplier commutator [Z^a, g] h = Z^a(g h) - g Z^a h.
pub fn multiplier_commutator(
    ops: &DerivOps,
    g: &ScalarField,
    h: &ScalarField,
    alpha: &[usize],
) -> Result<ScalarField> {
    let lhs = ops.z_alpha(&g.mul(h), alpha)?;
    let rhs = g.mul(&ops.z_alpha(h, alpha)?);
    Ok(lhs.sub(&rhs))
}

/// Symmetric commutator [Z^a, g, h] = Z^a(g h) - g Z^a h - (Z^a g) h.
pub fn symmetric_commutator(
    ops: &DerivOps,
    g: &ScalarField,
    h: &ScalarField,
    alpha: &[usize],
) -> Result<ScalarField> {
    let lhs = ops.z_alpha(&g.mul(h), alpha)?;
    let mid = g.mul(&ops.z_alpha(h, alpha)?);
    let top = ops.z_alpha(g, alpha)?.mul(h);
    Ok(lhs.sub(&mid).sub(&top))
}

/// Split one derivative off `alpha`: the single-factor index of the lowest
/// active axis and the remainder. The family factors commute, so the choice
/// is a convention, not a branch of the algebra.
fn peel_one(alpha: &[usize]) -> Option<(Vec<usize>, Vec<usize>)> {
    let axis = alpha.iter().position(|&a| a > 0)?;
    let mut single = vec![0usize; alpha.len()];
    single[axis] = 1;
    let mut rest = alpha.to_vec();
    rest[axis] -= 1;
    Some((single, rest))
}

/// The commutator C_i^a(f) of the shifted-derivative calculus, in the closed
/// form whose every bracket is a literal operator difference:
///
///   A_i3 [Z^a, d_3] f
/// + Z^a eta . grad_A(metric_partial_i f)
/// - A_i3 ([Z^a, d_3] eta)_k A_kj d_j f
/// - [Z^{a-e}, A_il A_kj] (Z^e d_l eta_k) d_j f
/// + [Z^a, A_ij, d_j f]
pub fn alinhac_commutator(
    ops: &DerivOps,
    geom: &Geometry,
    disp: &VectorField,
    f: &ScalarField,
    alpha: &[usize],
    i: usize,
) -> Result<ScalarField> {
    let grid = ops.grid();
    let d = grid.dim();
    let (single, rest) = peel_one(alpha).ok_or_else(|| {
        SimError::Config("the shifted-derivative commutator needs order at least one".into())
    })?;

    let df = ops.grad(f);
    let grad_af = geom.a_mat.mat_vec(&df);
    let a_i3 = geom.a_mat.get(i, d - 1);

    let t1 = a_i3.mul(&z_normal_commutator(ops, f, alpha)?);

    let z_eta = z_alpha_map(ops, disp, alpha)?;
    let da_if = metric_partial(ops, geom, i, f);
    let t2 = geom.dir_deriv_a(ops, &z_eta, &da_if);

    let comm_eta = z_normal_commutator_map(ops, disp, alpha)?;
    let t3 = a_i3.mul(&comm_eta.dot(&grad_af));

    let mut t4 = ScalarField::zeros(grid);
    for l in 0..d {
        for k in 0..d {
            let z_dleta = ops.z_alpha(geom.grad_eta.get(k, l), &single)?;
            for j in 0..d {
                let gg = geom.a_mat.get(i, l).mul(geom.a_mat.get(k, j));
                let comm = multiplier_commutator(ops, &gg, &z_dleta, &rest)?;
                t4.add_assign(&comm.mul(&df.comps[j]));
            }
        }
    }

    let mut t5 = ScalarField::zeros(grid);
    for j in 0..d {
        t5.add_assign(&symmetric_commutator(ops, geom.a_mat.get(i, j), &df.comps[j], alpha)?);
    }

    Ok(t1.add(&t2).sub(&t3).sub(&t4).add(&t5))
}

/// Residual of the raw Leibniz expansion
///
///   Z^a(metric_partial_i f) = metric_partial_i(Z^a f) + A_i3 [Z^a, d_3] f
///                           + (Z^a A_ij) d_j f + [Z^a, A_ij, d_j f].
///
/// The expansion only regroups one grid field and its literal brackets, so
/// the residual is round-off on any state. It is the plumbing check for the
/// commutator assembly.
pub fn leibniz_residual(
    ops: &DerivOps,
    geom: &Geometry,
    f: &ScalarField,
    alpha: &[usize],
    i: usize,
) -> Result<ScalarField> {
    let grid = ops.grid();
    let d = grid.dim();
    let df = ops.grad(f);

    let lhs = ops.z_alpha(&metric_partial(ops, geom, i, f), alpha)?;

    let mut rhs = metric_partial(ops, geom, i, &ops.z_alpha(f, alpha)?);
    rhs.add_assign(&geom.a_mat.get(i, d - 1).mul(&z_normal_commutator(ops, f, alpha)?));
    for j in 0..d {
        rhs.add_assign(&ops.z_alpha(geom.a_mat.get(i, j), alpha)?.mul(&df.comps[j]));
        rhs.add_assign(&symmetric_commutator(ops, geom.a_mat.get(i, j), &df.comps[j], alpha)?);
    }
    Ok(lhs.sub(&rhs))
}

/// Residual of the shifted-derivative identity
///
///   Z^a(metric_partial_i f) = metric_partial_i(Z^a f - Z^a eta . grad_A f)
///                           + C_i^a(f).
///
/// Exact in the continuum. Discretely the closed form of C rewrites Z^a A
/// through the map by the product rule, so the residual is round-off only
/// where the stencils differentiate the map products exactly (tangential
/// shears) and stencil-order small otherwise.
pub fn alinhac_residual(
    ops: &DerivOps,
    geom: &Geometry,
    disp: &VectorField,
    f: &ScalarField,
    alpha: &[usize],
    i: usize,
) -> Result<ScalarField> {
    let lhs = ops.z_alpha(&metric_partial(ops, geom, i, f), alpha)?;
    let z_eta = z_alpha_map(ops, disp, alpha)?;
    let shifted = ops
        .z_alpha(f, alpha)?
        .sub(&geom.dir_deriv_a(ops, &z_eta, f));
    let rhs = metric_partial(ops, geom, i, &shifted)
        .add(&alinhac_commutator(ops, geom, disp, f, alpha, i)?);
    Ok(lhs.sub(&rhs))
}

/// One interface identity: the sup-norm residual of the balance and the
/// sup-norm of the driving mismatch term, for relative judgment.
#[derive(Clone, Copy, Debug)]
pub struct JumpCheck {
    pub residual: f64,
    pub drive: f64,
}

/// Residuals of the interface and wall relations of the good unknowns:
///
///   [Q^a] = -J^-1 Z^a eta . N [d_3 q]
///   [B^a] = -J_0^-1 Z^a eta_0 . N_0 [d_3 b]
///   [V^a] = 0
///   [d_3 V^a] = -Z^a eta . [d_3(grad_A v)]   on the interface,
///   V^a = 0                                   on the walls.
///
/// Continuous coefficients (J, N, Z^a eta) are taken as the average of the
/// two one-sided traces.
#[derive(Clone, Debug)]
pub struct InterfaceResiduals {
    pub q: JumpCheck,
    pub b: JumpCheck,
    pub v_jump: f64,
    pub dv3: JumpCheck,
    pub v_wall: f64,
}

fn avg_trace(f: &ScalarField) -> Vec<f64> {
    let p = f.interface_trace(Phase::Plus);
    let m = f.interface_trace(Phase::Minus);
    p.iter().zip(&m).map(|(a, b)| 0.5 * (a + b)).collect()
}

fn sup(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Evaluate all interface and wall residuals of the good unknowns for one
/// multi-index. See `InterfaceResiduals` for the relations checked.
#[allow(clippy::too_many_arguments)]
pub fn interface_residuals(
    ops: &DerivOps,
    geom: &Geometry,
    disp: &VectorField,
    geom0: &Geometry,
    disp0: &VectorField,
    p: &ScalarField,
    v: &VectorField,
    b: &VectorField,
    alpha: &[usize],
) -> Result<InterfaceResiduals> {
    let gu = good_unknowns(ops, geom, disp, geom0, disp0, p, v, b, alpha)?;
    let n_tan = ops.grid().n_tan();

    // coeff = J^-1 Z^a eta . N per tangential node, averaged across phases.
    let jump_coeff = |g: &Geometry, zeta: &VectorField| -> Vec<f64> {
        let zn = avg_trace(&g.dot_normal(zeta));
        let jac = avg_trace(&g.jac);
        zn.iter().zip(&jac).map(|(z, j)| z / j).collect()
    };

    let q = total_pressure(p, b);
    let coeff = jump_coeff(geom, &gu.z_eta);
    let d3q_jump = ops.d_normal(&q).interface_jump();
    let qm_jump = gu.q_m.interface_jump();
    let q_resid = (0..n_tan).map(|it| qm_jump[it] + coeff[it] * d3q_jump[it]);
    let q_drive = (0..n_tan).map(|it| coeff[it] * d3q_jump[it]);
    let q_check = JumpCheck {
        residual: sup(q_resid),
        drive: sup(q_drive),
    };

    let coeff0 = jump_coeff(geom0, &gu.z_eta0);
    let mut b_resid = 0.0f64;
    let mut b_drive = 0.0f64;
    for c in 0..b.dim() {
        let d3b_jump = ops.d_normal(&b.comps[c]).interface_jump();
        let bm_jump = gu.b_m.comps[c].interface_jump();
        b_resid = b_resid.max(sup(
            (0..n_tan).map(|it| bm_jump[it] + coeff0[it] * d3b_jump[it]),
        ));
        b_drive = b_drive.max(sup((0..n_tan).map(|it| coeff0[it] * d3b_jump[it])));
    }
    let b_check = JumpCheck {
        residual: b_resid,
        drive: b_drive,
    };

    let v_jump = gu.v_m.interface_jump_linf();

    let zeta_trace: Vec<Vec<f64>> = gu.z_eta.comps.iter().map(avg_trace).collect();
    let mut dv3_resid = 0.0f64;
    let mut dv3_drive = 0.0f64;
    for c in 0..v.dim() {
        let dvm_jump = ops.d_normal(&gu.v_m.comps[c]).interface_jump();
        let grad_av = geom.grad_a(ops, &v.comps[c]);
        let mismatch: Vec<Vec<f64>> = grad_av
            .comps
            .iter()
            .map(|g| ops.d_normal(g).interface_jump())
            .collect();
        let drive: Vec<f64> = (0..n_tan)
            .map(|it| {
                (0..v.dim())
                    .map(|k| zeta_trace[k][it] * mismatch[k][it])
                    .sum::<f64>()
            })
            .collect();
        dv3_resid = dv3_resid.max(sup((0..n_tan).map(|it| dvm_jump[it] + drive[it])));
        dv3_drive = dv3_drive.max(sup(drive));
    }
    let dv3_check = JumpCheck {
        residual: dv3_resid,
        drive: dv3_drive,
    };

    let mut v_wall = 0.0f64;
    for c in &gu.v_m.comps {
        for phase in Phase::BOTH {
            v_wall = v_wall.max(sup(c.wall_trace(phase)));
        }
    }

    Ok(InterfaceResiduals {
        q: q_check,
        b: b_check,
        v_jump,
        dv3: dv3_check,
        v_wall,
    })
}
