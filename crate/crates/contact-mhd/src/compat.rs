//! Compatibility assessment of seeded initial data.
//!
//! The trace components p, v and the tangential part of b must be continuous
//! across the interface, and every time derivative of them inherits that
//! requirement; at the walls the velocity and all its time derivatives must
//! vanish and the normal displacement stays pinned. This module measures all
//! of those residuals on seeded stacks, order by order, without enforcing
//! anything: the smoothing pipeline consumes the report, tests freeze it.
//!
//! The normal component of the magnetic jump is reported separately: it is
//! not an independent condition (the flux closure ties it to lower-order
//! jumps), so it belongs in the "derived" column of the report.

use crate::constitutive::ReferenceData;
use crate::deriv::DerivOps;
use crate::error::Result;
use crate::grid::{Phase, ScalarField};
use crate::seeding::Seeded;
use serde::Serialize;

/// Residuals of one time-derivative order.
#[derive(Debug, Clone, Serialize)]
pub struct OrderResidual {
    pub order: usize,
    /// linf of the pressure-derivative jump across the interface.
    pub jump_p: f64,
    /// linf over Cartesian components of the velocity-derivative jump.
    pub jump_v: f64,
    /// linf of the tangential magnetic-derivative jump (the condition).
    pub jump_b_tan: f64,
    /// linf of the normal magnetic-derivative jump (derived, not enforced).
    pub jump_b_nor: f64,
    /// linf of the velocity derivative over both walls.
    pub wall_v: f64,
}

impl OrderResidual {
    /// The largest genuine condition residual at this order.
    pub fn worst(&self) -> f64 {
        self.jump_p
            .max(self.jump_v)
            .max(self.jump_b_tan)
            .max(self.wall_v)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CompatReport {
    pub dim: usize,
    pub j_max: usize,
    /// linf of the magnetic flux jump [[b . N]] at t = 0 (closure-automatic
    /// for shared-trace data).
    pub flux_jump: f64,
    /// linf of the normal displacement at the walls (the pinning condition).
    pub wall_disp: f64,
    pub orders: Vec<OrderResidual>,
    /// Derived residuals [[d_n dt^j v]] for j < j_max: the normal derivative
    /// of every velocity stack must be continuous across the interface as a
    /// consequence of the primary conditions one order up, never enforced.
    pub jump_dv3: Vec<f64>,
}

impl CompatReport {
    pub fn worst_through(&self, j: usize) -> f64 {
        self.orders[..=j.min(self.orders.len() - 1)]
            .iter()
            .fold(self.wall_disp, |m, o| m.max(o.worst()))
    }
}

fn wall_linf(f: &ScalarField) -> f64 {
    let mut m = 0.0f64;
    for phase in Phase::BOTH {
        for v in f.wall_trace(phase) {
            m = m.max(v.abs());
        }
    }
    m
}

/// Measure every compatibility residual of the stacks through order `j_max`
/// (which must not exceed the seeded order).
pub fn assess(
    ops: &DerivOps,
    refd: &ReferenceData,
    seeded: &Seeded<ScalarField>,
    j_max: usize,
) -> Result<CompatReport> {
    assert!(
        j_max <= seeded.orders,
        "stacks seeded to order {} but order {} requested",
        seeded.orders,
        j_max
    );
    let grid = ops.grid();
    let d = grid.dim();
    let geom = &refd.geom0;
    let level_p = grid.interface_level(Phase::Plus);
    let frame = geom.boundary_frame(Phase::Plus, level_p)?;

    let mut orders = Vec::with_capacity(j_max + 1);
    for j in 0..=j_max {
        let jump_p = seeded.p_jet[j].interface_jump_linf();
        let mut jump_v = 0.0f64;
        for comp in &seeded.v[j] {
            jump_v = jump_v.max(comp.interface_jump_linf());
        }

        let db: Vec<Vec<f64>> = (0..d)
            .map(|i| seeded.b_jet[j][i].interface_jump())
            .collect();
        let mut jump_b_tan = 0.0f64;
        let mut jump_b_nor = 0.0f64;
        for it in 0..grid.n_tan() {
            let mut t1 = 0.0;
            let mut t2 = 0.0;
            let mut nr = 0.0;
            for i in 0..d {
                t1 += db[i][it] * frame.tau1[it][i];
                t2 += db[i][it] * frame.tau2[it][i];
                nr += db[i][it] * frame.normal[it][i];
            }
            jump_b_tan = jump_b_tan.max(t1.abs()).max(t2.abs());
            jump_b_nor = jump_b_nor.max(nr.abs());
        }

        let mut wall_v = 0.0f64;
        for comp in &seeded.v[j] {
            wall_v = wall_v.max(wall_linf(comp));
        }

        orders.push(OrderResidual {
            order: j,
            jump_p,
            jump_v,
            jump_b_tan,
            jump_b_nor,
            wall_v,
        });
    }

    let flux_jump = geom.dot_normal(&refd.b0).interface_jump_linf();
    let wall_disp = wall_linf(&refd.disp0.comps[d - 1]);

    let mut jump_dv3 = Vec::with_capacity(j_max);
    for j in 0..j_max {
        let mut worst = 0.0f64;
        for comp in &seeded.v[j] {
            worst = worst.max(ops.d_normal(comp).interface_jump_linf());
        }
        jump_dv3.push(worst);
    }

    Ok(CompatReport {
        dim: d,
        j_max,
        flux_jump,
        wall_disp,
        orders,
        jump_dv3,
    })
}
