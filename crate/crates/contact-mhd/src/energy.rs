//! High-order energy functionals over a run's history ring.
//!
//! The monitors live on two layers. `TimeJets` turns the ring of past
//! states into time derivatives of the physical fields at the newest time,
//! using finite-difference weights on the actual (possibly uneven) ring
//! timestamps; the reconstruction closures supply p and b per entry, so the
//! jets inherit the closure identities instead of drifting independently.
//! `functionals` is pure algebra on such jets and produces every norm the
//! report carries. `EnergyMonitor` strings reports along a run,
//! accumulating the running functional (sup of the energy plus the time
//! integral of the dissipation pair by trapezoid quadrature).
//!
//! Conventions fixed here once:
//! - Tuple norms treat the listed fields as one stacked object per family
//!   derivative (see `NormOps::aniso_tuple`).
//! - Map norms are norms of the flow map, not the displacement. The
//!   identity part is injected analytically (coordinate fields, constant
//!   first derivatives, the weighted-derivative cascade of the normal
//!   coordinate) because spectral differentiation must never see the
//!   non-periodic coordinate sawtooth.
//! - The normal-trace term pairs the time-differenced one-sided normal
//!   derivative of b with the material normal of the newest map.

use serde::{Deserialize, Serialize};

use crate::constitutive::{
    flux_invariant_residual, mass_invariant_residual, normal_flux_residual, reconstruct,
    ReferenceData,
};
use crate::deriv::DerivOps;
use crate::error::{Result, SimError};
use crate::geometry::Geometry;
use crate::grid::{Phase, ScalarField, SlabGrid, VectorField};
use crate::integrator::{state_floor, SolverState};
use crate::norms::NormOps;
use std::sync::Arc;

/// Finite-difference weights on arbitrary nodes `x` for derivatives of
/// order 0..=m evaluated at `z`. Returns w[i][k]: the weight of node i in
/// the k-th derivative.
pub fn fornberg_weights(z: f64, x: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut c = vec![vec![0.0f64; m + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c
}

/// Time derivatives of the physical fields at the newest ring time.
/// Order 0 is the newest state itself; higher orders are the weighted
/// combinations over the whole ring.
pub struct TimeJets {
    pub t: f64,
    pub eps: f64,
    /// dt^j p, j = 0..=m.
    pub p: Vec<ScalarField>,
    pub v: Vec<VectorField>,
    pub b: Vec<VectorField>,
    /// (dt^j of the one-sided normal derivative of b) . N, j = 0..=m-1,
    /// with N taken from the newest map.
    pub db_n: Vec<ScalarField>,
    /// Displacement of the newest map.
    pub disp: VectorField,
}

/// Assemble jets of order m from the solver's history ring.
pub fn time_jets(ops: &DerivOps, refd: &ReferenceData, st: &SolverState, m: usize) -> Result<TimeJets> {
    let have = st.history.len();
    if have < m + 1 {
        return Err(SimError::InsufficientHistory { have, need: m + 1 });
    }
    let entries: Vec<_> = st.history.iter().collect();
    let ts: Vec<f64> = entries.iter().map(|e| e.t).collect();
    let z = *ts.last().unwrap();
    let w = fornberg_weights(z, &ts, m);

    let floor = state_floor(refd);
    let mut ps = Vec::with_capacity(have);
    let mut bs = Vec::with_capacity(have);
    let mut dbs = Vec::with_capacity(have);
    let mut geom_now = None;
    for (i, e) in entries.iter().enumerate() {
        let geom = Geometry::build(ops, &e.disp, floor)?;
        let fields = reconstruct(refd, &geom)?;
        dbs.push(VectorField {
            comps: fields.b.comps.iter().map(|c| ops.d_normal(c)).collect(),
        });
        ps.push(fields.p);
        bs.push(fields.b);
        if i + 1 == have {
            geom_now = Some(geom);
        }
    }
    let geom_now = geom_now.unwrap();

    let combine_s = |fields: &[ScalarField], k: usize| -> ScalarField {
        let mut out = ScalarField::zeros(fields[0].grid());
        for (i, f) in fields.iter().enumerate() {
            out.axpy(w[i][k], f);
        }
        out
    };
    let combine_v = |fields: &[&VectorField], k: usize| -> VectorField {
        let mut out = VectorField::zeros(fields[0].grid());
        for (i, f) in fields.iter().enumerate() {
            out.axpy(w[i][k], f);
        }
        out
    };

    let vs: Vec<&VectorField> = entries.iter().map(|e| &e.v).collect();
    let brefs: Vec<&VectorField> = bs.iter().collect();
    let dbrefs: Vec<&VectorField> = dbs.iter().collect();

    let mut p_jets = vec![ps.last().unwrap().clone()];
    let mut v_jets = vec![entries.last().unwrap().v.clone()];
    let mut b_jets = vec![bs.last().unwrap().clone()];
    for k in 1..=m {
        p_jets.push(combine_s(&ps, k));
        v_jets.push(combine_v(&vs, k));
        b_jets.push(combine_v(&brefs, k));
    }
    let dot_n = |f: &VectorField| -> ScalarField {
        let mut out = f.comps[0].mul(&geom_now.normal.comps[0]);
        for c in 1..f.comps.len() {
            out.add_assign(&f.comps[c].mul(&geom_now.normal.comps[c]));
        }
        out
    };
    let mut db_n = vec![dot_n(dbs.last().unwrap())];
    for k in 1..m {
        db_n.push(dot_n(&combine_v(&dbrefs, k)));
    }

    Ok(TimeJets {
        t: z,
        eps: st.eps,
        p: p_jets,
        v: v_jets,
        b: b_jets,
        db_n,
        disp: st.disp.clone(),
    })
}

/// Coordinate field of map component `comp` (the identity map part).
fn coord_field(grid: &Arc<SlabGrid>, comp: usize) -> ScalarField {
    let axis = if comp + 1 == grid.dim() { 2 } else { comp };
    ScalarField::from_fn(grid, |_, x| x[axis])
}

/// Multiply polynomial coefficient vectors (ascending powers).
fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_diff(a: &[f64]) -> Vec<f64> {
    if a.len() <= 1 {
        return vec![0.0];
    }
    a.iter()
        .enumerate()
        .skip(1)
        .map(|(i, c)| i as f64 * c)
        .collect()
}

fn poly_eval(a: &[f64], x: f64) -> f64 {
    a.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// The weighted normal operator applied q times to the normal coordinate:
/// w_1 = x(x^2-1), w_{q+1} = w_1 * w_q'. Exact polynomial cascade.
fn weighted_identity_poly(q: usize) -> Vec<f64> {
    let w1 = vec![0.0, -1.0, 0.0, 1.0];
    let mut out = w1.clone();
    for _ in 1..q {
        out = poly_mul(&w1, &poly_diff(&out));
    }
    out
}

/// Z^alpha applied to the flow map id + disp, the identity part handled
/// analytically: the coordinate fields at order zero, constant first
/// tangential derivatives, and the polynomial cascade for pure powers of
/// the weighted normal derivative. Everything else of the identity dies.
pub(crate) fn z_alpha_map(
    ops: &DerivOps,
    disp: &VectorField,
    alpha: &[usize],
) -> Result<VectorField> {
    let grid = ops.grid();
    let d = grid.dim();
    let mut comps = Vec::with_capacity(d);
    for i in 0..d {
        let mut z = ops.z_alpha(&disp.comps[i], alpha)?;
        let total: usize = alpha.iter().sum();
        let a_n = alpha[d - 1];
        if total == 0 {
            z.add_assign(&coord_field(grid, i));
        } else if a_n == 0 && total == 1 {
            let axis = alpha.iter().position(|&a| a == 1).unwrap();
            if axis == i {
                z = z.map(|v| v + 1.0);
            }
        } else if a_n == total && i + 1 == d {
            let poly = weighted_identity_poly(a_n);
            let id_part = ScalarField::from_fn(grid, |_, x| poly_eval(&poly, x[2]));
            z.add_assign(&id_part);
        }
        comps.push(z);
    }
    Ok(VectorField { comps })
}

/// d^alpha of the flow map: identity contributes the coordinate fields at
/// order zero and the Kronecker constants at first order.
fn d_alpha_map(no: &NormOps, disp: &VectorField, alpha: &[usize]) -> Result<VectorField> {
    let grid = no.quad.grid();
    let d = grid.dim();
    let mut comps = Vec::with_capacity(d);
    for i in 0..d {
        let mut df = no.ops.d_alpha(&disp.comps[i], alpha)?;
        let total: usize = alpha.iter().sum();
        if total == 0 {
            df.add_assign(&coord_field(grid, i));
        } else if total == 1 {
            let axis = alpha.iter().position(|&a| a == 1).unwrap();
            if axis == i {
                df = df.map(|v| v + 1.0);
            }
        }
        comps.push(df);
    }
    Ok(VectorField { comps })
}

/// Squared broken H^k norm of the flow map.
pub fn map_hk_sq(no: &NormOps, disp: &VectorField, k: usize) -> Result<f64> {
    let grid = no.quad.grid();
    let budget = grid.n_n() / 2;
    if k > budget {
        return Err(SimError::DerivativeBudgetExceeded {
            requested: k,
            budget,
        });
    }
    let mut acc = 0.0;
    for alpha in DerivOps::multi_indices(grid.dim(), k) {
        let df = d_alpha_map(no, disp, &alpha)?;
        acc += no.quad.l2_sq_vec(&df);
    }
    Ok(acc)
}

/// Anisotropic norm of the flow map (linear sum over the family of joint
/// component H^k norms).
pub fn map_aniso(no: &NormOps, disp: &VectorField, k: usize, l: usize) -> Result<f64> {
    let grid = no.quad.grid();
    let budget = grid.n_n() / 4;
    if k + l > budget {
        return Err(SimError::DerivativeBudgetExceeded {
            requested: k + l,
            budget,
        });
    }
    let mut acc = 0.0;
    for alpha in DerivOps::multi_indices(grid.dim(), l) {
        let zeta = z_alpha_map(&no.ops, disp, &alpha)?;
        let mut sq = 0.0;
        for c in &zeta.comps {
            sq += no.hk_sq(c, k)?;
        }
        acc += sq.sqrt();
    }
    Ok(acc)
}

/// Squared interface H^m trace norm of the flow map: tangential derivatives
/// of the (single-valued) interface trace. The identity part contributes
/// the tangential coordinates and their constant first derivatives.
pub fn map_trace_hm_sq(no: &NormOps, disp: &VectorField, m: usize) -> Result<f64> {
    let grid = no.quad.grid();
    let d = grid.dim();
    let n_axes = d - 1;
    let mut acc = 0.0;
    for l in 0..=m {
        for alpha_t in tangential_indices(n_axes, l) {
            let mut alpha = alpha_t.clone();
            alpha.push(0);
            let eta = d_alpha_map(no, disp, &alpha)?;
            for c in &eta.comps {
                acc += no.quad.trace_l2_sq(&c.interface_trace(Phase::Minus));
            }
        }
    }
    Ok(acc)
}

/// All tangential multi-indices with |alpha| exactly l.
fn tangential_indices(n_axes: usize, l: usize) -> Vec<Vec<usize>> {
    match n_axes {
        1 => vec![vec![l]],
        2 => (0..=l).map(|a| vec![a, l - a]).collect(),
        _ => unreachable!("slab grids are 2- or 3-dimensional"),
    }
}

/// The instantaneous functional family of order m.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Functionals {
    /// Sum over j of the squared H^{m-j} norms of the order-j jets plus the
    /// map volume and trace norms.
    pub e_m: f64,
    /// The weighted-family energy with the viscosity-scaled map terms.
    pub frak_e: f64,
    /// The viscous dissipation rate.
    pub frak_dbar: f64,
    /// The recovered-derivative dissipation rate.
    pub frak_d: f64,
    /// The transported functional (order reduced by one, same map terms).
    pub frak_f: f64,
    /// Interface trace norm of the map.
    pub boundary_norm: f64,
}

/// Evaluate every instantaneous functional on given jets.
pub fn functionals(no: &NormOps, jets: &TimeJets, m: usize) -> Result<Functionals> {
    let eps = jets.eps;
    let trace_sq = map_trace_hm_sq(no, &jets.disp, m)?;
    let map_m_sq = map_hk_sq(no, &jets.disp, m)?;
    let map_1m = map_aniso(no, &jets.disp, 1, m)?;
    let map_m1_sq = map_hk_sq(no, &jets.disp, m + 1)?;

    let mut e_m = map_m_sq + trace_sq;
    for j in 0..=m {
        e_m += no.hk_sq(&jets.p[j], m - j)?;
        for c in &jets.v[j].comps {
            e_m += no.hk_sq(c, m - j)?;
        }
        for c in &jets.b[j].comps {
            e_m += no.hk_sq(c, m - j)?;
        }
    }

    let mut frak_e = trace_sq + map_m_sq + eps * map_1m * map_1m + eps * eps * map_m1_sq;
    for j in 0..=m {
        let t = no.aniso_tuple(&[&jets.p[j]], &[&jets.v[j], &jets.b[j]], 0, m - j)?;
        frak_e += t * t;
    }
    for j in 0..m {
        let t = no.aniso_vec(&jets.v[j], 1, m - j - 1)?;
        frak_e += t * t;
        let s = no.aniso(&jets.db_n[j], 0, m - j - 1)?;
        frak_e += s * s;
    }

    let mut frak_dbar = 0.0;
    for j in 0..=m {
        let t = no.aniso_vec(&jets.v[j], 1, m - j)?;
        frak_dbar += t * t;
    }
    frak_dbar *= eps;

    let mut frak_d = 0.0;
    for j in 0..m {
        frak_d += no.hk_sq(&jets.p[j], m - j)?;
        for c in &jets.b[j].comps {
            frak_d += no.hk_sq(c, m - j)?;
        }
    }
    for j in 0..m.saturating_sub(1) {
        for c in &jets.v[j].comps {
            frak_d += no.hk_sq(c, m - j)?;
        }
    }
    for j in 0..m {
        let mut sq = 0.0;
        for c in &jets.v[j].comps {
            sq += no.hk_sq(c, m - j + 1)?;
        }
        frak_d += eps * eps * sq;
    }

    let mut frak_f = map_m_sq + eps * map_1m * map_1m + eps * eps * map_m1_sq;
    for j in 0..m {
        frak_f += no.hk_sq(&jets.p[j], m - j - 1)?;
        for c in &jets.v[j].comps {
            frak_f += no.hk_sq(c, m - j - 1)?;
        }
        for c in &jets.b[j].comps {
            frak_f += no.hk_sq(c, m - j - 1)?;
        }
    }

    Ok(Functionals {
        e_m,
        frak_e,
        frak_dbar,
        frak_d,
        frak_f,
        boundary_norm: trace_sq.sqrt(),
    })
}

/// Data functional: squared order-m norms of the reference fields plus the
/// squared interface trace norm of the initial map.
pub fn data_functional(no: &NormOps, refd: &ReferenceData, m: usize) -> Result<f64> {
    let mut acc = map_hk_sq(no, &refd.disp0, m)?;
    acc += no.hk_sq(&refd.p0, m)?;
    acc += no.hk_sq(&refd.rho0, m)?;
    for c in refd.v0.comps.iter().chain(refd.b0.comps.iter()) {
        acc += no.hk_sq(c, m)?;
    }
    acc += map_trace_hm_sq(no, &refd.disp0, m)?;
    Ok(acc)
}

/// One energy report along a run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnergyReport {
    pub t: f64,
    pub m: usize,
    pub eps: f64,
    pub fun: Functionals,
    /// Running functional: sup of frak_e so far plus the trapezoid time
    /// integral of frak_dbar + frak_d.
    pub g_m: f64,
    /// Data functional of the reference state.
    pub m0: f64,
    /// Closure-identity residuals at the newest state (round-off class).
    pub mass_drift: f64,
    pub flux_drift: f64,
    pub bn_drift: f64,
}

/// Stateful monitor accumulating the running functional along a run.
pub struct EnergyMonitor {
    pub m: usize,
    no: NormOps,
    m0: std::cell::OnceCell<f64>,
    sup_e: f64,
    integral: f64,
    last: Option<(f64, f64)>,
}

impl EnergyMonitor {
    pub fn new(grid: &Arc<SlabGrid>, m: usize) -> Self {
        EnergyMonitor {
            m,
            no: NormOps::new(grid),
            m0: std::cell::OnceCell::new(),
            sup_e: 0.0,
            integral: 0.0,
            last: None,
        }
    }

    pub fn norms(&self) -> &NormOps {
        &self.no
    }

    /// Evaluate the functionals at the solver's current state and fold them
    /// into the running accumulators. Requires the ring to hold m+1 states.
    pub fn observe(&mut self, refd: &ReferenceData, st: &SolverState) -> Result<EnergyReport> {
        let jets = time_jets(&self.no.ops, refd, st, self.m)?;
        let fun = functionals(&self.no, &jets, self.m)?;
        let m0 = match self.m0.get() {
            Some(v) => *v,
            None => {
                let v = data_functional(&self.no, refd, self.m)?;
                let _ = self.m0.set(v);
                v
            }
        };
        self.sup_e = self.sup_e.max(fun.frak_e);
        let rate = fun.frak_dbar + fun.frak_d;
        if let Some((t_prev, rate_prev)) = self.last {
            if st.t > t_prev {
                self.integral += 0.5 * (st.t - t_prev) * (rate + rate_prev);
            }
        }
        self.last = Some((st.t, rate));

        let geom = Geometry::build(&self.no.ops, &st.disp, state_floor(refd))?;
        let fields = reconstruct(refd, &geom)?;
        Ok(EnergyReport {
            t: st.t,
            m: self.m,
            eps: st.eps,
            g_m: self.sup_e + self.integral,
            m0,
            mass_drift: mass_invariant_residual(refd, &geom, &fields.rho),
            flux_drift: flux_invariant_residual(refd, &geom, &fields.b),
            bn_drift: normal_flux_residual(refd, &geom, &fields.b),
            fun,
        })
    }
}

/// One-shot report at the current state: the running functional degenerates
/// to the instantaneous energy (empty time integral).
pub fn energy_report(
    no: &NormOps,
    refd: &ReferenceData,
    st: &SolverState,
    m: usize,
) -> Result<EnergyReport> {
    let jets = time_jets(&no.ops, refd, st, m)?;
    let fun = functionals(no, &jets, m)?;
    let m0 = data_functional(no, refd, m)?;
    let geom = Geometry::build(&no.ops, &st.disp, state_floor(refd))?;
    let fields = reconstruct(refd, &geom)?;
    Ok(EnergyReport {
        t: st.t,
        m,
        eps: st.eps,
        g_m: fun.frak_e,
        m0,
        mass_drift: mass_invariant_residual(refd, &geom, &fields.rho),
        flux_drift: flux_invariant_residual(refd, &geom, &fields.b),
        bn_drift: normal_flux_residual(refd, &geom, &fields.b),
        fun,
    })
}
