//! Truncated multivariate Taylor jets at a point, with elementary functions.
//!
//! A jet stores the Taylor coefficients c_alpha = d^alpha f(x0) / alpha! of
//! a smooth function up to a fixed total degree. Arithmetic is exact
//! truncated polynomial algebra, and the derivative is a coefficient shift:
//! no grid, no stencils. Running the same generic recursions over jets and
//! over grid fields gives two routes to the same quantity whose only
//! disagreement is the stencil truncation error of the grid route, which is
//! what makes jets useful as an independent oracle.

use std::collections::HashMap;
use std::sync::Arc;

/// Index space of multi-indices with |alpha| <= deg in `dim` variables.
#[derive(Debug)]
pub struct JetSpace {
    pub dim: usize,
    pub deg: usize,
    indices: Vec<[u8; 3]>,
    pos: HashMap<[u8; 3], usize>,
}

impl JetSpace {
    pub fn new(dim: usize, deg: usize) -> Arc<JetSpace> {
        assert!(dim == 2 || dim == 3);
        assert!(deg <= 12, "jet degree unreasonably large");
        let mut indices = Vec::new();
        for total in 0..=deg {
            for a1 in 0..=total {
                if dim == 2 {
                    indices.push([a1 as u8, 0, (total - a1) as u8]);
                } else {
                    for a2 in 0..=(total - a1) {
                        indices.push([a1 as u8, a2 as u8, (total - a1 - a2) as u8]);
                    }
                }
            }
        }
        let pos = indices
            .iter()
            .enumerate()
            .map(|(i, a)| (*a, i))
            .collect();
        Arc::new(JetSpace {
            dim,
            deg,
            indices,
            pos,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn total(a: &[u8; 3]) -> usize {
        a[0] as usize + a[1] as usize + a[2] as usize
    }

    fn position(&self, a: &[u8; 3]) -> Option<usize> {
        self.pos.get(a).copied()
    }
}

/// A truncated Taylor expansion at a point.
#[derive(Clone, Debug)]
pub struct PointJet {
    space: Arc<JetSpace>,
    /// Taylor coefficients, ordered as in the space's index list.
    pub c: Vec<f64>,
}

impl PointJet {
    pub fn zero(space: &Arc<JetSpace>) -> PointJet {
        PointJet {
            space: Arc::clone(space),
            c: vec![0.0; space.len()],
        }
    }

    pub fn constant(space: &Arc<JetSpace>, v: f64) -> PointJet {
        let mut j = PointJet::zero(space);
        j.c[0] = v;
        j
    }

    /// Jet of the coordinate function x_axis centered at value x0.
    pub fn variable(space: &Arc<JetSpace>, axis: usize, x0: f64) -> PointJet {
        assert!(axis < space.dim);
        let mut j = PointJet::constant(space, x0);
        // The multi-index layout packs 2D as (a1, 0, an): the normal axis is
        // slot 2 in both dimensions, tangential axes are slots 0 and 1.
        let slot = if space.dim == 2 && axis == 1 { 2 } else { axis };
        let mut e = [0u8; 3];
        e[slot] = 1;
        if let Some(p) = space.position(&e) {
            j.c[p] = 1.0;
        }
        j
    }

    pub fn space(&self) -> &Arc<JetSpace> {
        &self.space
    }

    /// Constant term: the function value at the base point.
    pub fn value(&self) -> f64 {
        self.c[0]
    }

    /// Derivative value d^alpha f(x0) = c_alpha * alpha!.
    pub fn deriv_value(&self, alpha: &[usize]) -> f64 {
        let a = self.pack(alpha);
        let fact = |n: u8| -> f64 { (1..=n as u64).product::<u64>() as f64 };
        match self.space.position(&a) {
            Some(p) => self.c[p] * fact(a[0]) * fact(a[1]) * fact(a[2]),
            None => 0.0,
        }
    }

    fn pack(&self, alpha: &[usize]) -> [u8; 3] {
        if self.space.dim == 2 {
            [alpha[0] as u8, 0, alpha[1] as u8]
        } else {
            [alpha[0] as u8, alpha[1] as u8, alpha[2] as u8]
        }
    }

    pub fn add(&self, o: &PointJet) -> PointJet {
        let mut out = self.clone();
        for (a, b) in out.c.iter_mut().zip(&o.c) {
            *a += b;
        }
        out
    }

    pub fn sub(&self, o: &PointJet) -> PointJet {
        let mut out = self.clone();
        for (a, b) in out.c.iter_mut().zip(&o.c) {
            *a -= b;
        }
        out
    }

    pub fn scale(&self, s: f64) -> PointJet {
        let mut out = self.clone();
        for a in out.c.iter_mut() {
            *a *= s;
        }
        out
    }

    pub fn axpy(&mut self, s: f64, o: &PointJet) {
        for (a, b) in self.c.iter_mut().zip(&o.c) {
            *a += s * b;
        }
    }

    /// Truncated product.
    pub fn mul(&self, o: &PointJet) -> PointJet {
        let sp = &self.space;
        let deg = sp.deg;
        let mut out = PointJet::zero(sp);
        for (i, ai) in sp.indices.iter().enumerate() {
            let ca = self.c[i];
            if ca == 0.0 {
                continue;
            }
            let ta = JetSpace::total(ai);
            for (j, bj) in sp.indices.iter().enumerate() {
                if ta + JetSpace::total(bj) > deg {
                    continue;
                }
                let cb = o.c[j];
                if cb == 0.0 {
                    continue;
                }
                let sum = [ai[0] + bj[0], ai[1] + bj[1], ai[2] + bj[2]];
                let p = sp.position(&sum).expect("within degree");
                out.c[p] += ca * cb;
            }
        }
        out
    }

    /// Multiplicative inverse (value at the point must be nonzero), by
    /// Newton iteration on the jet: quadratic convergence in nilpotents.
    pub fn recip(&self) -> PointJet {
        assert!(self.c[0] != 0.0, "jet reciprocal at zero value");
        let sp = &self.space;
        let mut g = PointJet::constant(sp, 1.0 / self.c[0]);
        let two = PointJet::constant(sp, 2.0);
        let mut needed = 1usize;
        while needed <= sp.deg {
            g = g.mul(&two.sub(&self.mul(&g)));
            needed *= 2;
        }
        g = g.mul(&two.sub(&self.mul(&g)));
        g
    }

    /// Real power via the binomial series around the (positive) value.
    pub fn powf(&self, p: f64) -> PointJet {
        let f0 = self.c[0];
        assert!(f0 > 0.0, "jet power requires positive value");
        let sp = &self.space;
        // u = f/f0 - 1 is nilpotent.
        let mut u = self.scale(1.0 / f0);
        u.c[0] -= 1.0;
        let mut out = PointJet::constant(sp, 1.0);
        let mut term = PointJet::constant(sp, 1.0);
        let mut coef = 1.0;
        for k in 1..=sp.deg {
            term = term.mul(&u);
            coef *= (p - (k as f64 - 1.0)) / k as f64;
            out.axpy(coef, &term);
        }
        out.scale(f0.powf(p))
    }

    pub fn sqrt(&self) -> PointJet {
        self.powf(0.5)
    }

    fn nilpotent_series(&self, coeffs: impl Fn(usize) -> f64) -> PointJet {
        // sum_k coeffs(k) u^k for nilpotent u = self - value.
        let sp = &self.space;
        let mut u = self.clone();
        u.c[0] = 0.0;
        let mut out = PointJet::constant(sp, coeffs(0));
        let mut term = PointJet::constant(sp, 1.0);
        for k in 1..=sp.deg {
            term = term.mul(&u);
            out.axpy(coeffs(k), &term);
        }
        out
    }

    pub fn exp(&self) -> PointJet {
        let e0 = self.c[0].exp();
        let mut fact = 1.0;
        let facts: Vec<f64> = (0..=self.space.deg)
            .map(|k| {
                if k > 0 {
                    fact *= k as f64;
                }
                1.0 / fact
            })
            .collect();
        self.nilpotent_series(|k| facts[k]).scale(e0)
    }

    pub fn sin(&self) -> PointJet {
        let (s0, c0) = self.c[0].sin_cos();
        let deg = self.space.deg;
        let mut fact = 1.0;
        let facts: Vec<f64> = (0..=deg)
            .map(|k| {
                if k > 0 {
                    fact *= k as f64;
                }
                1.0 / fact
            })
            .collect();
        // sin(a + u) = sin a cos u + cos a sin u.
        let cos_u = self.nilpotent_series(|k| {
            if k % 2 == 0 {
                if k % 4 == 0 { facts[k] } else { -facts[k] }
            } else {
                0.0
            }
        });
        let sin_u = self.nilpotent_series(|k| {
            if k % 2 == 1 {
                if k % 4 == 1 { facts[k] } else { -facts[k] }
            } else {
                0.0
            }
        });
        cos_u.scale(s0).add(&sin_u.scale(c0))
    }

    pub fn cos(&self) -> PointJet {
        let (s0, c0) = self.c[0].sin_cos();
        let deg = self.space.deg;
        let mut fact = 1.0;
        let facts: Vec<f64> = (0..=deg)
            .map(|k| {
                if k > 0 {
                    fact *= k as f64;
                }
                1.0 / fact
            })
            .collect();
        let cos_u = self.nilpotent_series(|k| {
            if k % 2 == 0 {
                if k % 4 == 0 { facts[k] } else { -facts[k] }
            } else {
                0.0
            }
        });
        let sin_u = self.nilpotent_series(|k| {
            if k % 2 == 1 {
                if k % 4 == 1 { facts[k] } else { -facts[k] }
            } else {
                0.0
            }
        });
        cos_u.scale(c0).sub(&sin_u.scale(s0))
    }

    /// Exact derivative along an axis: coefficient shift. The result loses
    /// one representable degree at the top (standard jet truncation).
    pub fn deriv(&self, axis: usize) -> PointJet {
        let sp = &self.space;
        assert!(axis < sp.dim);
        let slot = if sp.dim == 2 && axis == 1 { 2 } else { axis };
        let mut out = PointJet::zero(sp);
        for (i, a) in sp.indices.iter().enumerate() {
            if a[slot] == 0 {
                continue;
            }
            let mut shifted = *a;
            shifted[slot] -= 1;
            let p = sp.position(&shifted).expect("shift stays in space");
            out.c[p] += self.c[i] * a[slot] as f64;
        }
        out
    }
}
