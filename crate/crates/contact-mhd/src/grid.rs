//! Periodic slab grid and the field containers everything else operates on.
//!
//! The domain is T^{d-1} x (-1, 1) with tangential period 2*pi and the two
//! phases separated by the interface {x_n = 0}. Each phase stores its own
//! block of nodes including the interface level, so interface traces exist
//! one-sided from both phases; the walls {x_n = -1} and {x_n = +1} belong to
//! the minus and plus phase respectively.

use std::sync::Arc;

use rustfft::{num_complex::Complex64, Fft, FftPlanner};

use crate::error::{Result, SimError};

/// Fixed tangential period of the slab.
pub const TANGENTIAL_PERIOD: f64 = 2.0 * std::f64::consts::PI;

/// Phase label. `Minus` occupies x_n in [-1, 0], `Plus` occupies [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Phase {
    Minus,
    Plus,
}

impl Phase {
    pub const BOTH: [Phase; 2] = [Phase::Minus, Phase::Plus];

    pub fn index(self) -> usize {
        match self {
            Phase::Minus => 0,
            Phase::Plus => 1,
        }
    }

    /// Sign of the phase's outward wall coordinate (-1 or +1).
    pub fn sign(self) -> f64 {
        match self {
            Phase::Minus => -1.0,
            Phase::Plus => 1.0,
        }
    }
}

struct FftPlans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// Discretization of the slab: `n_t` nodes per tangential direction
/// (uniform, periodic), `n_n` cells per phase in the normal direction
/// (n_n + 1 nodes per phase, interface level duplicated between phases).
pub struct SlabGrid {
    dim: usize,
    n_t: usize,
    n_n: usize,
    plans: FftPlans,
}

impl std::fmt::Debug for SlabGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SlabGrid")
            .field("dim", &self.dim)
            .field("n_t", &self.n_t)
            .field("n_n", &self.n_n)
            .finish()
    }
}

impl SlabGrid {
    pub fn new(dim: usize, n_t: usize, n_n: usize) -> Result<Arc<Self>> {
        if dim != 2 && dim != 3 {
            return Err(SimError::GridConfig(format!("dim must be 2 or 3, got {dim}")));
        }
        if n_t < 4 || n_t % 2 != 0 {
            return Err(SimError::GridConfig(format!(
                "n_t must be even and at least 4, got {n_t}"
            )));
        }
        if n_n < 4 {
            return Err(SimError::GridConfig(format!(
                "n_n must be at least the one-sided stencil width 4, got {n_n}"
            )));
        }
        let mut planner = FftPlanner::new();
        let plans = FftPlans {
            forward: planner.plan_fft_forward(n_t),
            inverse: planner.plan_fft_inverse(n_t),
        };
        Ok(Arc::new(SlabGrid { dim, n_t, n_n, plans }))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of tangential directions (dim - 1).
    pub fn n_tan_axes(&self) -> usize {
        self.dim - 1
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn n_n(&self) -> usize {
        self.n_n
    }

    /// Nodes per normal column (per phase), interface and wall included.
    pub fn n_levels(&self) -> usize {
        self.n_n + 1
    }

    /// Tangential nodes per normal level: n_t^(dim-1).
    pub fn n_tan(&self) -> usize {
        self.n_t.pow(self.dim as u32 - 1)
    }

    /// Nodes per phase.
    pub fn n_nodes(&self) -> usize {
        self.n_tan() * self.n_levels()
    }

    pub fn h_t(&self) -> f64 {
        TANGENTIAL_PERIOD / self.n_t as f64
    }

    pub fn h_n(&self) -> f64 {
        1.0 / self.n_n as f64
    }

    /// Flat node index from tangential flat index and normal level.
    #[inline]
    pub fn idx(&self, it: usize, j: usize) -> usize {
        it * self.n_levels() + j
    }

    /// Tangential flat index from per-axis indices (i2 ignored when dim == 2).
    #[inline]
    pub fn tan_idx(&self, i1: usize, i2: usize) -> usize {
        if self.dim == 2 {
            i1
        } else {
            i1 * self.n_t + i2
        }
    }

    /// Decompose a tangential flat index into per-axis indices.
    #[inline]
    pub fn tan_split(&self, it: usize) -> (usize, usize) {
        if self.dim == 2 {
            (it, 0)
        } else {
            (it / self.n_t, it % self.n_t)
        }
    }

    /// Physical coordinates of a node; x[1] is 0 when dim == 2 and x[2] is
    /// always the normal coordinate.
    pub fn coords(&self, phase: Phase, it: usize, j: usize) -> [f64; 3] {
        let (i1, i2) = self.tan_split(it);
        [
            i1 as f64 * self.h_t(),
            if self.dim == 3 { i2 as f64 * self.h_t() } else { 0.0 },
            self.x_normal(phase, j),
        ]
    }

    /// Normal coordinate of level j in the given phase.
    pub fn x_normal(&self, phase: Phase, j: usize) -> f64 {
        match phase {
            Phase::Minus => -1.0 + j as f64 * self.h_n(),
            Phase::Plus => j as f64 * self.h_n(),
        }
    }

    /// Normal level holding the interface trace for the given phase.
    pub fn interface_level(&self, phase: Phase) -> usize {
        match phase {
            Phase::Minus => self.n_n,
            Phase::Plus => 0,
        }
    }

    /// Normal level holding the wall trace for the given phase.
    pub fn wall_level(&self, phase: Phase) -> usize {
        match phase {
            Phase::Minus => 0,
            Phase::Plus => self.n_n,
        }
    }

    /// Signed integer wavenumbers along one tangential axis, FFT layout.
    pub fn wavenumbers(&self) -> Vec<i64> {
        let n = self.n_t as i64;
        (0..n).map(|k| if k <= n / 2 { k } else { k - n }).collect()
    }

    /// Largest resolved tangential wavenumber.
    pub fn k_max(&self) -> f64 {
        (self.n_t / 2) as f64
    }

    pub(crate) fn fft_forward(&self, buf: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.n_t);
        self.plans.forward.process(buf);
    }

    pub(crate) fn fft_inverse(&self, buf: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.n_t);
        self.plans.inverse.process(buf);
        let scale = 1.0 / self.n_t as f64;
        for z in buf.iter_mut() {
            *z *= scale;
        }
    }

    /// Two grids are compatible when their parameters agree.
    pub fn same_layout(&self, other: &SlabGrid) -> bool {
        self.dim == other.dim && self.n_t == other.n_t && self.n_n == other.n_n
    }
}

/// Scalar field on the slab: one value per node, both phases.
#[derive(Clone)]
pub struct ScalarField {
    grid: Arc<SlabGrid>,
    data: [Vec<f64>; 2],
}

impl std::fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ScalarField(grid={:?}, linf={:.3e})", self.grid, self.linf())
    }
}

impl ScalarField {
    pub fn zeros(grid: &Arc<SlabGrid>) -> Self {
        let n = grid.n_nodes();
        ScalarField {
            grid: Arc::clone(grid),
            data: [vec![0.0; n], vec![0.0; n]],
        }
    }

    pub fn constant(grid: &Arc<SlabGrid>, c: f64) -> Self {
        let n = grid.n_nodes();
        ScalarField {
            grid: Arc::clone(grid),
            data: [vec![c; n], vec![c; n]],
        }
    }

    /// Build from a pointwise function of (phase, coords).
    pub fn from_fn(grid: &Arc<SlabGrid>, mut f: impl FnMut(Phase, [f64; 3]) -> f64) -> Self {
        let mut out = ScalarField::zeros(grid);
        for phase in Phase::BOTH {
            for it in 0..grid.n_tan() {
                for j in 0..grid.n_levels() {
                    let x = grid.coords(phase, it, j);
                    out.data[phase.index()][grid.idx(it, j)] = f(phase, x);
                }
            }
        }
        out
    }

    /// Build from a function of the phase values per level, constant per phase.
    pub fn piecewise_constant(grid: &Arc<SlabGrid>, minus: f64, plus: f64) -> Self {
        let n = grid.n_nodes();
        ScalarField {
            grid: Arc::clone(grid),
            data: [vec![minus; n], vec![plus; n]],
        }
    }

    pub fn grid(&self) -> &Arc<SlabGrid> {
        &self.grid
    }

    #[inline]
    pub fn val(&self, phase: Phase, it: usize, j: usize) -> f64 {
        self.data[phase.index()][self.grid.idx(it, j)]
    }

    #[inline]
    pub fn set(&mut self, phase: Phase, it: usize, j: usize, v: f64) {
        let i = self.grid.idx(it, j);
        self.data[phase.index()][i] = v;
    }

    pub fn phase(&self, phase: Phase) -> &[f64] {
        &self.data[phase.index()]
    }

    pub fn phase_mut(&mut self, phase: Phase) -> &mut [f64] {
        &mut self.data[phase.index()]
    }

    /// Pointwise unary map.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        let mut out = self.clone();
        for p in 0..2 {
            for v in out.data[p].iter_mut() {
                *v = f(*v);
            }
        }
        out
    }

    /// Pointwise binary map against another field on the same grid.
    pub fn zip_with(&self, other: &ScalarField, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        debug_assert!(self.grid.same_layout(&other.grid));
        let mut out = self.clone();
        for p in 0..2 {
            for (v, w) in out.data[p].iter_mut().zip(&other.data[p]) {
                *v = f(*v, *w);
            }
        }
        out
    }

    pub fn add(&self, other: &ScalarField) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ScalarField) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &ScalarField) -> Self {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|a| a * c)
    }

    pub fn add_assign(&mut self, other: &ScalarField) {
        for p in 0..2 {
            for (v, w) in self.data[p].iter_mut().zip(&other.data[p]) {
                *v += *w;
            }
        }
    }

    /// self += c * other.
    pub fn axpy(&mut self, c: f64, other: &ScalarField) {
        for p in 0..2 {
            for (v, w) in self.data[p].iter_mut().zip(&other.data[p]) {
                *v += c * *w;
            }
        }
    }

    pub fn linf(&self) -> f64 {
        let mut m = 0.0f64;
        for p in 0..2 {
            for v in &self.data[p] {
                m = m.max(v.abs());
            }
        }
        m
    }

    pub fn min_value(&self) -> f64 {
        let mut m = f64::INFINITY;
        for p in 0..2 {
            for v in &self.data[p] {
                m = m.min(*v);
            }
        }
        m
    }

    /// One-sided interface trace (values at x_n = 0 seen from `phase`).
    pub fn interface_trace(&self, phase: Phase) -> Vec<f64> {
        let j = self.grid.interface_level(phase);
        (0..self.grid.n_tan())
            .map(|it| self.val(phase, it, j))
            .collect()
    }

    /// Wall trace of the given phase.
    pub fn wall_trace(&self, phase: Phase) -> Vec<f64> {
        let j = self.grid.wall_level(phase);
        (0..self.grid.n_tan())
            .map(|it| self.val(phase, it, j))
            .collect()
    }

    /// Interface jump (plus trace minus minus trace).
    pub fn interface_jump(&self) -> Vec<f64> {
        let jp = self.grid.interface_level(Phase::Plus);
        let jm = self.grid.interface_level(Phase::Minus);
        (0..self.grid.n_tan())
            .map(|it| self.val(Phase::Plus, it, jp) - self.val(Phase::Minus, it, jm))
            .collect()
    }

    /// Sup-norm of the interface jump.
    pub fn interface_jump_linf(&self) -> f64 {
        self.interface_jump().iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Replace the duplicated interface nodes of both phases by their average.
    pub fn symmetrize_interface(&mut self) {
        let jp = self.grid.interface_level(Phase::Plus);
        let jm = self.grid.interface_level(Phase::Minus);
        for it in 0..self.grid.n_tan() {
            let avg = 0.5 * (self.val(Phase::Plus, it, jp) + self.val(Phase::Minus, it, jm));
            self.set(Phase::Plus, it, jp, avg);
            self.set(Phase::Minus, it, jm, avg);
        }
    }

    /// Maximum absolute difference against another field.
    pub fn linf_diff(&self, other: &ScalarField) -> f64 {
        let mut m = 0.0f64;
        for p in 0..2 {
            for (v, w) in self.data[p].iter().zip(&other.data[p]) {
                m = m.max((v - w).abs());
            }
        }
        m
    }
}

/// Vector field: `dim` scalar components.
#[derive(Clone, Debug)]
pub struct VectorField {
    pub comps: Vec<ScalarField>,
}

impl VectorField {
    pub fn zeros(grid: &Arc<SlabGrid>) -> Self {
        VectorField {
            comps: (0..grid.dim()).map(|_| ScalarField::zeros(grid)).collect(),
        }
    }

    pub fn from_fn(grid: &Arc<SlabGrid>, mut f: impl FnMut(Phase, [f64; 3]) -> Vec<f64>) -> Self {
        let dim = grid.dim();
        let mut comps: Vec<ScalarField> = (0..dim).map(|_| ScalarField::zeros(grid)).collect();
        for phase in Phase::BOTH {
            for it in 0..grid.n_tan() {
                for j in 0..grid.n_levels() {
                    let x = grid.coords(phase, it, j);
                    let v = f(phase, x);
                    debug_assert_eq!(v.len(), dim);
                    for (c, comp) in v.iter().zip(comps.iter_mut()) {
                        comp.set(phase, it, j, *c);
                    }
                }
            }
        }
        VectorField { comps }
    }

    pub fn grid(&self) -> &Arc<SlabGrid> {
        self.comps[0].grid()
    }

    pub fn dim(&self) -> usize {
        self.comps.len()
    }

    /// Pointwise value as a small vector.
    pub fn val(&self, phase: Phase, it: usize, j: usize) -> Vec<f64> {
        self.comps.iter().map(|c| c.val(phase, it, j)).collect()
    }

    pub fn add(&self, other: &VectorField) -> Self {
        VectorField {
            comps: self
                .comps
                .iter()
                .zip(&other.comps)
                .map(|(a, b)| a.add(b))
                .collect(),
        }
    }

    pub fn sub(&self, other: &VectorField) -> Self {
        VectorField {
            comps: self
                .comps
                .iter()
                .zip(&other.comps)
                .map(|(a, b)| a.sub(b))
                .collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        VectorField {
            comps: self.comps.iter().map(|a| a.scale(c)).collect(),
        }
    }

    pub fn axpy(&mut self, c: f64, other: &VectorField) {
        for (a, b) in self.comps.iter_mut().zip(&other.comps) {
            a.axpy(c, b);
        }
    }

    /// Pointwise dot product.
    pub fn dot(&self, other: &VectorField) -> ScalarField {
        let mut out = self.comps[0].mul(&other.comps[0]);
        for k in 1..self.comps.len() {
            out.add_assign(&self.comps[k].mul(&other.comps[k]));
        }
        out
    }

    /// Pointwise squared magnitude.
    pub fn norm_sq(&self) -> ScalarField {
        self.dot(self)
    }

    pub fn linf(&self) -> f64 {
        self.comps.iter().fold(0.0f64, |m, c| m.max(c.linf()))
    }

    pub fn linf_diff(&self, other: &VectorField) -> f64 {
        self.comps
            .iter()
            .zip(&other.comps)
            .fold(0.0f64, |m, (a, b)| m.max(a.linf_diff(b)))
    }

    pub fn interface_jump_linf(&self) -> f64 {
        self.comps
            .iter()
            .fold(0.0f64, |m, c| m.max(c.interface_jump_linf()))
    }

    pub fn symmetrize_interface(&mut self) {
        for c in self.comps.iter_mut() {
            c.symmetrize_interface();
        }
    }
}

/// Matrix field: dim x dim scalar components, row-major (entry (i, j) is
/// component i differentiated along / paired with direction j).
#[derive(Clone, Debug)]
pub struct MatrixField {
    pub dim: usize,
    pub comps: Vec<ScalarField>,
}

impl MatrixField {
    pub fn zeros(grid: &Arc<SlabGrid>) -> Self {
        let dim = grid.dim();
        MatrixField {
            dim,
            comps: (0..dim * dim).map(|_| ScalarField::zeros(grid)).collect(),
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> &ScalarField {
        &self.comps[i * self.dim + j]
    }

    #[inline]
    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut ScalarField {
        &mut self.comps[i * self.dim + j]
    }

    /// Pointwise matrix value, row-major.
    pub fn val(&self, phase: Phase, it: usize, j: usize) -> Vec<f64> {
        self.comps.iter().map(|c| c.val(phase, it, j)).collect()
    }

    /// Matrix-vector product (M v)_i = M_ij v_j.
    pub fn mat_vec(&self, v: &VectorField) -> VectorField {
        let d = self.dim;
        let mut out = Vec::with_capacity(d);
        for i in 0..d {
            let mut acc = self.get(i, 0).mul(&v.comps[0]);
            for j in 1..d {
                acc.add_assign(&self.get(i, j).mul(&v.comps[j]));
            }
            out.push(acc);
        }
        VectorField { comps: out }
    }

    /// Transposed matrix-vector product (M^T v)_j = M_ij v_i.
    pub fn mat_t_vec(&self, v: &VectorField) -> VectorField {
        let d = self.dim;
        let mut out = Vec::with_capacity(d);
        for j in 0..d {
            let mut acc = self.get(0, j).mul(&v.comps[0]);
            for i in 1..d {
                acc.add_assign(&self.get(i, j).mul(&v.comps[i]));
            }
            out.push(acc);
        }
        VectorField { comps: out }
    }
}
