//! Forcing corrector for the viscous seeding.
//!
//! Data prepared for the ideal recursion stop matching once the viscous
//! term enters: every time-jet of the acceleration picks up an
//! eps-proportional Laplacian stack, and the interface conditions inherit
//! the mismatch. The fix is a time-polynomial body force whose jets cancel
//! the viscous stacks at t = 0, so the viscous seeding reproduces the ideal
//! jets exactly through order m-1 and the data stay compatible without
//! being rebuilt per viscosity.
//!
//! The prescription fixes the jets of rho^{-1} Psi: minus the viscous
//! coefficient stacks for all orders except m-2, where the difference
//! between the top ideal velocity jet and its mollification (radius eps) is
//! added. That extra term buys one more matched normal derivative of the
//! top velocity jet at the interface, which the viscous problem's energy
//! setup needs; it costs nothing in the limit because the mollification
//! difference itself vanishes with eps.
//!
//! The force is stored twice: as the raw seeding slots (consumed verbatim,
//! so the cancellation against the in-seed viscous stacks is bitwise), and
//! as Taylor coefficients of Psi itself, recovered by a triangular solve
//! against the density-reciprocal jets, for evaluation at run time.

use serde::Serialize;

use crate::constitutive::ReferenceData;
use crate::deriv::DerivOps;
use crate::error::{Result, SimError};
use crate::grid::{ScalarField, VectorField};
use crate::mollify::Mollifier;
use crate::norms::NormOps;
use crate::seeding::{binom, seed_reference, viscous_coefficients, Algebra};

/// Time-polynomial forcing field for one viscosity level.
#[derive(Debug, Clone)]
pub struct PsiCorrector {
    pub eps: f64,
    pub m: usize,
    /// dt^j (rho^{-1} Psi)(0) for j = 0..m-1: the slots the seeding
    /// consumes directly.
    pub g_jets: Vec<Vec<ScalarField>>,
    /// dt^j Psi(0) for j = 0..m-1: Taylor coefficients of the force.
    pub psi_jets: Vec<VectorField>,
}

/// Size summary of a built corrector, for reports and sweeps.
#[derive(Debug, Clone, Serialize)]
pub struct PsiReport {
    pub eps: f64,
    pub m: usize,
    /// sum_j ||dt^j Psi||^2_{m-j}.
    pub norm_sq: f64,
    /// Largest pointwise magnitude across all jets.
    pub linf: f64,
}

impl PsiCorrector {
    /// Slots shaped for the seeding's forcing parameter.
    pub fn g_slots(&self) -> &[Vec<ScalarField>] {
        &self.g_jets
    }

    /// Force field at time t.
    pub fn eval(&self, t: f64) -> VectorField {
        let mut acc = self.psi_jets[0].clone();
        let mut coef = 1.0;
        for (j, jet) in self.psi_jets.iter().enumerate().skip(1) {
            coef *= t / j as f64;
            acc.axpy(coef, jet);
        }
        acc
    }

    /// sum_j ||dt^j Psi||^2_{m-j}. Jets above the polynomial degree vanish
    /// identically and contribute nothing.
    pub fn norm_sq(&self, norms: &NormOps) -> Result<f64> {
        let mut acc = 0.0;
        for (j, jet) in self.psi_jets.iter().enumerate() {
            let n = norms.hk_vec(jet, self.m - j)?;
            acc += n * n;
        }
        Ok(acc)
    }

    pub fn report(&self, norms: &NormOps) -> Result<PsiReport> {
        let linf = self
            .psi_jets
            .iter()
            .map(VectorField::linf)
            .fold(0.0, f64::max);
        Ok(PsiReport {
            eps: self.eps,
            m: self.m,
            norm_sq: self.norm_sq(norms)?,
            linf,
        })
    }
}

/// Build the corrector for data `refd` at viscosity `eps`, matching orders
/// 0..m-1. `eps` = 0 yields the exactly-zero corrector.
pub fn build_psi_corrector(
    ops: &DerivOps,
    refd: &ReferenceData,
    eps: f64,
    m: usize,
) -> Result<PsiCorrector> {
    if m < 1 {
        return Err(SimError::Config("corrector depth m must be at least 1".into()));
    }
    if eps < 0.0 {
        return Err(SimError::Config("viscosity must be nonnegative".into()));
    }
    let grid = ops.grid();
    let d = grid.dim();

    let ideal = seed_reference(ops, refd, m - 1, 0.0, None);
    let x = viscous_coefficients(ops, &ideal, eps, m - 1);

    let mut g_jets: Vec<Vec<ScalarField>> = x
        .iter()
        .map(|xk| xk.iter().map(|c| c.scale(-1.0)).collect())
        .collect();

    // The m-2 slot additionally carries the mollified-velocity difference:
    // it shifts the seeded top velocity jet to its own mollification, whose
    // extra interior regularity makes the normal derivative of that jet
    // match across the interface too.
    if m >= 2 {
        let moll = Mollifier::new(grid, eps)?;
        let top = &ideal.v[m - 1];
        for i in 0..d {
            let diff = moll.volume(&top[i]).sub(&top[i]);
            g_jets[m - 2][i] = g_jets[m - 2][i].add(&diff);
        }
    }

    // Triangular solve: dt^j(rho^{-1} Psi) = sum_a C(j,a) rho_inv_a Psi_{j-a}
    // pins Psi_j once the lower coefficients are known.
    let rho0 = ideal.rho_inv[0].recip();
    let mut psi_jets: Vec<VectorField> = Vec::with_capacity(m);
    for j in 0..m {
        let mut comps = Vec::with_capacity(d);
        for i in 0..d {
            let mut rhs = g_jets[j][i].clone();
            for a in 1..=j {
                let term = ideal.rho_inv[a].mul(&psi_jets[j - a].comps[i]);
                rhs = rhs.sub(&term.scale(binom(j, a)));
            }
            comps.push(rhs.mul(&rho0));
        }
        psi_jets.push(VectorField { comps });
    }

    Ok(PsiCorrector {
        eps,
        m,
        g_jets,
        psi_jets,
    })
}
