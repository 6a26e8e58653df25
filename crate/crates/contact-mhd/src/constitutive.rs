//! Reference data and the algebraic closures that reconstruct density,
//! pressure, and magnetic field from the flow map.
//!
//! The closures are
//!   rho = rho0 J0 / J,
//!   p   = p0 (J0 / J)^gamma,
//!   b   = J^{-1} (grad eta) w0,   w0 := J0 A0^T b0,
//! so mass and the magnetic flux through material surfaces are carried by
//! construction. The reconstruction uses only pointwise algebra on top of
//! the map gradient; the invariants J A^T b = w0 and b . N = w0_n therefore
//! hold to round-off at any time, independent of the time stepper.

use std::sync::Arc;

use crate::deriv::DerivOps;
use crate::error::{Result, SimError};
use crate::geometry::Geometry;
use crate::grid::{Phase, ScalarField, SlabGrid, VectorField};

/// Reference (initial) data of one run: thermodynamic fields and the frozen
/// combinations the closures consume.
#[derive(Clone, Debug)]
pub struct ReferenceData {
    pub gamma: f64,
    pub eps: f64,
    /// Initial displacement of the flow map (eta0 = id + disp0).
    pub disp0: VectorField,
    pub rho0: ScalarField,
    pub p0: ScalarField,
    pub b0: VectorField,
    pub v0: VectorField,
    /// Geometry of the initial map.
    pub geom0: Geometry,
    /// w0 = J0 A0^T b0, the flux coordinate of the magnetic field.
    pub w0: VectorField,
    /// rho0 J0, the mass density in flow-map coordinates.
    pub mass0: ScalarField,
    /// p0 J0^gamma, the entropy-carrying pressure coefficient.
    pub pcoef0: ScalarField,
    /// Reference divergence J0 div_{A0} b0 = div w0 (flux defect, reported).
    pub div_defect: f64,
    /// Structural floor c0: min over rho0, p0, J0 and |b0 . N0| on the
    /// interface and walls.
    pub c0: f64,
}

/// Floors applied while validating reference data.
#[derive(Clone, Copy, Debug)]
pub struct DataFloors {
    pub rho_min: f64,
    pub p_min: f64,
    pub jac_min: f64,
    pub bn_min: f64,
}

impl Default for DataFloors {
    fn default() -> Self {
        DataFloors {
            rho_min: 1e-8,
            p_min: 1e-8,
            jac_min: 1e-8,
            bn_min: 1e-10,
        }
    }
}

impl ReferenceData {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ops: &DerivOps,
        gamma: f64,
        eps: f64,
        disp0: VectorField,
        rho0: ScalarField,
        p0: ScalarField,
        b0: VectorField,
        v0: VectorField,
        floors: DataFloors,
    ) -> Result<ReferenceData> {
        if !(gamma > 1.0) {
            return Err(SimError::Config(format!("gamma must exceed 1, got {gamma}")));
        }
        if !(eps >= 0.0) {
            return Err(SimError::Config(format!("eps must be nonnegative, got {eps}")));
        }
        let rho_min = rho0.min_value();
        if rho_min < floors.rho_min {
            return Err(SimError::NonPositiveThermo {
                quantity: "rho0",
                value: rho_min,
                floor: floors.rho_min,
            });
        }
        let p_min = p0.min_value();
        if p_min < floors.p_min {
            return Err(SimError::NonPositiveThermo {
                quantity: "p0",
                value: p_min,
                floor: floors.p_min,
            });
        }
        let geom0 = Geometry::build(ops, &disp0, floors.jac_min)?;

        // w0 = J0 A0^T b0 = (cofactor)^T b0, pointwise.
        let w0 = geom0.ja.mat_t_vec(&b0);

        // Transversality: |b0 . N0| = |w0_n| on the interface and the walls.
        let grid = ops.grid();
        let d = grid.dim();
        let mut min_bn = f64::INFINITY;
        for phase in Phase::BOTH {
            for level in [grid.interface_level(phase), grid.wall_level(phase)] {
                for it in 0..grid.n_tan() {
                    min_bn = min_bn.min(w0.comps[d - 1].val(phase, it, level).abs());
                }
            }
        }
        if min_bn < floors.bn_min {
            return Err(SimError::TransversalityLost {
                min_bn,
                floor: floors.bn_min,
            });
        }

        let mass0 = rho0.mul(&geom0.jac);
        let jpow = geom0.jac.map(|j| j.powf(gamma));
        let pcoef0 = p0.mul(&jpow);

        // div w0 = d_i w0_i; zero for admissible data (the magnetic field is
        // divergence-free in the reference frame). Reported, not enforced.
        let mut divw = ScalarField::zeros(grid);
        for i in 0..d {
            divw.add_assign(&ops.d_axis(&w0.comps[i], i));
        }
        let div_defect = divw.linf();

        let c0 = rho_min.min(p_min).min(geom0.jac.min_value()).min(min_bn);

        Ok(ReferenceData {
            gamma,
            eps,
            disp0,
            rho0,
            p0,
            b0,
            v0,
            geom0,
            w0,
            mass0,
            pcoef0,
            div_defect,
            c0,
        })
    }

    pub fn grid(&self) -> &Arc<SlabGrid> {
        self.geom0.grid()
    }

    /// Specific entropy function s0 = ln(p0) - gamma ln(rho0), constant along
    /// particle paths under the closures. Used by round-trip validation.
    pub fn entropy(&self) -> ScalarField {
        let gamma = self.gamma;
        self.p0
            .zip_with(&self.rho0, move |p, r| p.ln() - gamma * r.ln())
    }
}

/// Fields reconstructed from a map snapshot via the closures.
#[derive(Clone, Debug)]
pub struct PhaseFields {
    pub rho: ScalarField,
    pub p: ScalarField,
    pub b: VectorField,
}

/// Reconstruct (rho, p, b) from the current geometry and reference data.
pub fn reconstruct(refd: &ReferenceData, geom: &Geometry) -> Result<PhaseFields> {
    let inv_j = geom.jac.map(|j| 1.0 / j);
    let rho = refd.mass0.mul(&inv_j);
    let gamma = refd.gamma;
    let p = refd
        .pcoef0
        .zip_with(&geom.jac, move |c, j| c * j.powf(-gamma));
    // b = J^{-1} grad(eta) w0.
    let b_raw = geom.grad_eta.mat_vec(&refd.w0);
    let b = VectorField {
        comps: b_raw.comps.iter().map(|c| c.mul(&inv_j)).collect(),
    };

    let rho_min = rho.min_value();
    if rho_min <= 0.0 {
        return Err(SimError::NonPositiveThermo {
            quantity: "rho",
            value: rho_min,
            floor: 0.0,
        });
    }
    let p_min = p.min_value();
    if p_min <= 0.0 {
        return Err(SimError::NonPositiveThermo {
            quantity: "p",
            value: p_min,
            floor: 0.0,
        });
    }
    Ok(PhaseFields { rho, p, b })
}

/// Residual of the flux invariant J A^T b - w0, pointwise algebra only:
/// stays at round-off for closure-reconstructed b at any time.
pub fn flux_invariant_residual(refd: &ReferenceData, geom: &Geometry, b: &VectorField) -> f64 {
    let jab = geom.ja.mat_t_vec(b);
    jab.sub(&refd.w0).linf()
}

/// Residual of b . N - w0_n (the material-surface flux), pointwise.
pub fn normal_flux_residual(refd: &ReferenceData, geom: &Geometry, b: &VectorField) -> f64 {
    let d = geom.grid().dim();
    let bn = geom.dot_normal(b);
    bn.sub(&refd.w0.comps[d - 1]).linf()
}

/// Residual of the mass invariant rho J - rho0 J0, pointwise.
pub fn mass_invariant_residual(refd: &ReferenceData, geom: &Geometry, rho: &ScalarField) -> f64 {
    rho.mul(&geom.jac).sub(&refd.mass0).linf()
}

/// Residual of entropy transport ln p - gamma ln rho - s0, pointwise.
pub fn entropy_residual(refd: &ReferenceData, fields: &PhaseFields) -> f64 {
    let gamma = refd.gamma;
    let s = fields
        .p
        .zip_with(&fields.rho, move |p, r| p.ln() - gamma * r.ln());
    s.sub(&refd.entropy()).linf()
}
