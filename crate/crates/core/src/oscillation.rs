//! The skew wave operator `L` on velocity/electric-field pairs, its
//! spectral projections and the rotation group `e^{τL}`.
//!
//! Pairs are stored through their Hodge split `(u, E) = (v + ∇q, e + ∇φ)`
//! with `div v = div e = 0` and mean-zero potentials. `L` annihilates
//! `(v, e)` and maps `(∇q, ∇φ) ↦ (−∇φ, ∇q)`, so every operation below acts
//! on the potentials `(q, φ)` only and gradients are materialized on demand.

use crate::error::{Error, Result};
use crate::field::{ScalarField, VectorField};
use crate::grid::Grid;
use crate::spectral::{self, grad};

/// Divergence tolerance accepted by [`PhasePair::from_parts`].
pub const DIVERGENCE_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct PhasePair {
    v: VectorField,
    e: VectorField,
    q: ScalarField,
    phi: ScalarField,
}

impl PhasePair {
    /// Hodge-splits both slots of `(u, E)`.
    pub fn new(u: &VectorField, e_field: &VectorField) -> Self {
        let pu = spectral::leray_decompose(u);
        let pe = spectral::leray_decompose(e_field);
        PhasePair { v: pu.solenoidal, e: pe.solenoidal, q: pu.potential, phi: pe.potential }
    }

    /// Assembles a pair from an already split representation.
    pub fn from_parts(v: VectorField, e: VectorField, q: ScalarField, phi: ScalarField) -> Result<Self> {
        let grid = v.grid();
        for g in [e.grid(), q.grid(), phi.grid()] {
            grid.ensure_same(&g)?;
        }
        for (label, f) in [("v", &v), ("e", &e)] {
            let d = spectral::div(f).l2_norm();
            if d > DIVERGENCE_TOL {
                return Err(Error::Config(format!("{label} is not divergence free (|div| = {d:e})")));
            }
        }
        for (label, f) in [("q", &q), ("phi", &phi)] {
            if f.mean().abs() > DIVERGENCE_TOL {
                return Err(Error::NonZeroMean { mean: f.mean(), tol: DIVERGENCE_TOL })
                    .map_err(|e| Error::Config(format!("potential {label}: {e}")));
            }
        }
        Ok(PhasePair { v, e, q, phi })
    }

    /// Pure oscillatory pair `(∇q, ∇φ)`. The means of the potentials are dropped.
    pub fn from_potentials(q: &ScalarField, phi: &ScalarField) -> Self {
        let grid = q.grid();
        PhasePair {
            v: VectorField::zeros(grid),
            e: VectorField::zeros(grid),
            q: q.add_scaled(-1.0, &ScalarField::constant(grid, q.mean())),
            phi: phi.add_scaled(-1.0, &ScalarField::constant(grid, phi.mean())),
        }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::from_potentials(&ScalarField::zeros(grid), &ScalarField::zeros(grid))
    }

    pub fn grid(&self) -> Grid {
        self.q.grid()
    }

    fn with_potentials(&self, q: ScalarField, phi: ScalarField) -> Self {
        PhasePair { v: self.v.clone(), e: self.e.clone(), q, phi }
    }

    pub fn solenoidal_u(&self) -> &VectorField {
        &self.v
    }

    pub fn solenoidal_e(&self) -> &VectorField {
        &self.e
    }

    pub fn q(&self) -> &ScalarField {
        &self.q
    }

    pub fn phi(&self) -> &ScalarField {
        &self.phi
    }

    pub fn grad_q(&self) -> VectorField {
        grad(&self.q)
    }

    pub fn grad_phi(&self) -> VectorField {
        grad(&self.phi)
    }

    /// Velocity slot `u = v + ∇q`.
    pub fn u_comp(&self) -> VectorField {
        &self.v + &self.grad_q()
    }

    /// Electric-field slot `E = e + ∇φ`.
    pub fn e_comp(&self) -> VectorField {
        &self.e + &self.grad_phi()
    }

    pub fn add_scaled(&self, a: f64, other: &PhasePair) -> PhasePair {
        PhasePair {
            v: self.v.add_scaled(a, &other.v),
            e: self.e.add_scaled(a, &other.e),
            q: self.q.add_scaled(a, &other.q),
            phi: self.phi.add_scaled(a, &other.phi),
        }
    }

    pub fn scale(&self, a: f64) -> PhasePair {
        PhasePair { v: self.v.scale(a), e: self.e.scale(a), q: self.q.scale(a), phi: self.phi.scale(a) }
    }

    /// `‖(u, E)‖_{L²×L²}`; the Hodge parts are orthogonal.
    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    fn norm_squared(&self) -> f64 {
        self.v.inner(&self.v) + self.e.inner(&self.e) + {
            let gq = self.grad_q();
            gq.inner(&gq)
        } + {
            let gp = self.grad_phi();
            gp.inner(&gp)
        }
    }

    /// `‖self − other‖_{L²×L²}`.
    pub fn distance(&self, other: &PhasePair) -> f64 {
        self.add_scaled(-1.0, other).norm()
    }
}

/// `L(v + ∇q, e + ∇φ) = (−∇φ, ∇q)`.
pub fn apply_l(p: &PhasePair) -> PhasePair {
    let grid = p.grid();
    PhasePair { v: VectorField::zeros(grid), e: VectorField::zeros(grid), q: -&p.phi, phi: p.q.clone() }
}

/// `e^{τL}`: identity on the divergence-free parts, rotation by `τ` on
/// `(∇q, ∇φ)`.
pub fn exp_tau_l(tau: f64, p: &PhasePair) -> PhasePair {
    let (s, c) = tau.sin_cos();
    let q = p.q.scale(c).add_scaled(-s, &p.phi);
    let phi = p.phi.scale(c).add_scaled(s, &p.q);
    p.with_potentials(q, phi)
}

/// `P_0 (u, E) = (v, e)`.
pub fn project_p0(p: &PhasePair) -> PhasePair {
    let grid = p.grid();
    p.clone().with_potentials(ScalarField::zeros(grid), ScalarField::zeros(grid))
}

/// Complex-valued pair `re + i·im`.
#[derive(Debug, Clone)]
pub struct ComplexPair {
    pub re: PhasePair,
    pub im: PhasePair,
}

impl ComplexPair {
    pub fn conj(&self) -> ComplexPair {
        ComplexPair { re: self.re.clone(), im: self.im.scale(-1.0) }
    }

    pub fn add(&self, other: &ComplexPair) -> ComplexPair {
        ComplexPair { re: self.re.add_scaled(1.0, &other.re), im: self.im.add_scaled(1.0, &other.im) }
    }

    pub fn distance(&self, other: &ComplexPair) -> f64 {
        let dr = self.re.distance(&other.re);
        let di = self.im.distance(&other.im);
        (dr * dr + di * di).sqrt()
    }

    /// Complex-linear extension of `L`.
    pub fn apply_l(&self) -> ComplexPair {
        ComplexPair { re: apply_l(&self.re), im: apply_l(&self.im) }
    }

    /// Multiplication by `i`.
    pub fn times_i(&self) -> ComplexPair {
        ComplexPair { re: self.im.scale(-1.0), im: self.re.clone() }
    }
}

fn half_rotation(p: &PhasePair, sign: f64) -> ComplexPair {
    let grid = p.grid();
    let zero = || PhasePair::from_potentials(&ScalarField::zeros(grid), &ScalarField::zeros(grid));
    let re = zero().with_potentials(p.q.scale(0.5), p.phi.scale(0.5));
    let im = zero().with_potentials(p.phi.scale(0.5 * sign), p.q.scale(-0.5 * sign));
    ComplexPair { re, im }
}

/// `P_i (u, E) = ½(∇q + i∇φ, −i∇q + ∇φ)`.
pub fn project_pi(p: &PhasePair) -> ComplexPair {
    half_rotation(p, 1.0)
}

/// `P_{−i} (u, E) = ½(∇q − i∇φ, i∇q + ∇φ)`.
pub fn project_pmi(p: &PhasePair) -> ComplexPair {
    half_rotation(p, -1.0)
}

/// Complex-linear extension of `P_i`.
pub fn project_pi_complex(z: &ComplexPair) -> ComplexPair {
    let a = project_pi(&z.re);
    let b = project_pi(&z.im);
    ComplexPair { re: a.re.add_scaled(-1.0, &b.im), im: a.im.add_scaled(1.0, &b.re) }
}

/// Complex-linear extension of `P_{−i}`.
pub fn project_pmi_complex(z: &ComplexPair) -> ComplexPair {
    let a = project_pmi(&z.re);
    let b = project_pmi(&z.im);
    ComplexPair { re: a.re.add_scaled(-1.0, &b.im), im: a.im.add_scaled(1.0, &b.re) }
}
