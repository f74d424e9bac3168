//! Real periodic grid functions with a lazily cached spectrum.

use std::ops::{Add, Index, Mul, Neg, Sub};
use std::sync::OnceLock;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft;
use crate::grid::Grid;

/// Real-valued scalar field sampled on a [`Grid`].
///
/// The spectrum is computed on first use and then cached; it is always the
/// exact (normalized) discrete transform of `values`.
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
    spectrum: OnceLock<Vec<Complex64>>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        ScalarField { grid, values: vec![c; grid.len()], spectrum: OnceLock::new() }
    }

    /// Samples `f(x)` at every node; unused coordinates are zero.
    pub fn from_fn(grid: Grid, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.coords(i))).collect();
        ScalarField { grid, values, spectrum: OnceLock::new() }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "expected {} samples, got {}",
                grid.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("from_values".into()));
        }
        Ok(ScalarField { grid, values, spectrum: OnceLock::new() })
    }

    /// Builds the real field whose transform is the Hermitian part of
    /// `spectrum`. The symmetrized spectrum is cached.
    pub fn from_spectrum(grid: Grid, mut spectrum: Vec<Complex64>) -> Self {
        assert_eq!(spectrum.len(), grid.len(), "spectrum length does not match grid");
        fft::hermitianize(grid, &mut spectrum);
        let values = fft::inverse(grid, &spectrum).into_iter().map(|c| c.re).collect();
        let cache = OnceLock::new();
        let _ = cache.set(spectrum);
        ScalarField { grid, values, spectrum: cache }
    }

    fn from_values_unchecked(grid: Grid, values: Vec<f64>) -> Self {
        ScalarField { grid, values, spectrum: OnceLock::new() }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn spectrum(&self) -> &[Complex64] {
        self.spectrum.get_or_init(|| fft::forward(self.grid, &self.values))
    }

    /// Applies a per-mode multiplier `f(flat_index, coefficient)` in Fourier
    /// space.
    pub fn map_spectrum(&self, f: impl Fn(usize, Complex64) -> Complex64) -> ScalarField {
        let spec = self.spectrum().iter().enumerate().map(|(i, &c)| f(i, c)).collect();
        ScalarField::from_spectrum(self.grid, spec)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `∫ f g dx` by the (spectrally exact) rectangle rule.
    pub fn inner(&self, other: &ScalarField) -> f64 {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        let cell = self.grid.volume() / self.grid.len() as f64;
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>() * cell
    }

    pub fn l2_norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        Self::from_values_unchecked(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Self::from_values_unchecked(self.grid, values)
    }

    /// Raw pointwise product (no dealiasing).
    pub fn pointwise(&self, other: &ScalarField) -> ScalarField {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, a: f64) -> ScalarField {
        self.map(|v| a * v)
    }

    /// `self + a * other`
    pub fn add_scaled(&self, a: f64, other: &ScalarField) -> ScalarField {
        self.zip_map(other, |x, y| x + a * y)
    }
}

impl Add for &ScalarField {
    type Output = ScalarField;
    fn add(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &ScalarField {
    type Output = ScalarField;
    fn sub(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Neg for &ScalarField {
    type Output = ScalarField;
    fn neg(self) -> ScalarField {
        self.map(|v| -v)
    }
}

impl Mul<f64> for &ScalarField {
    type Output = ScalarField;
    fn mul(self, rhs: f64) -> ScalarField {
        self.scale(rhs)
    }
}

/// `d` scalar components on a shared grid.
#[derive(Debug, Clone)]
pub struct VectorField {
    grid: Grid,
    components: Vec<ScalarField>,
}

impl VectorField {
    pub fn zeros(grid: Grid) -> Self {
        VectorField { grid, components: (0..grid.dim()).map(|_| ScalarField::zeros(grid)).collect() }
    }

    pub fn from_components(components: Vec<ScalarField>) -> Result<Self> {
        let grid = components
            .first()
            .map(|c| c.grid())
            .ok_or_else(|| Error::InvalidGrid("vector field needs components".into()))?;
        if components.len() != grid.dim() {
            return Err(Error::InvalidGrid(format!(
                "expected {} components, got {}",
                grid.dim(),
                components.len()
            )));
        }
        for c in &components {
            grid.ensure_same(&c.grid())?;
        }
        Ok(VectorField { grid, components })
    }

    pub(crate) fn from_components_unchecked(grid: Grid, components: Vec<ScalarField>) -> Self {
        debug_assert_eq!(components.len(), grid.dim());
        VectorField { grid, components }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(usize, [f64; 3]) -> f64) -> Self {
        let components = (0..grid.dim()).map(|j| ScalarField::from_fn(grid, |x| f(j, x))).collect();
        VectorField { grid, components }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[ScalarField] {
        &self.components
    }

    pub fn into_components(self) -> Vec<ScalarField> {
        self.components
    }

    pub fn map_components(&self, f: impl Fn(usize, &ScalarField) -> ScalarField) -> VectorField {
        let components = self.components.iter().enumerate().map(|(j, c)| f(j, c)).collect();
        VectorField { grid: self.grid, components }
    }

    pub fn zip_components(
        &self,
        other: &VectorField,
        f: impl Fn(&ScalarField, &ScalarField) -> ScalarField,
    ) -> VectorField {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        let components = self.components.iter().zip(&other.components).map(|(a, b)| f(a, b)).collect();
        VectorField { grid: self.grid, components }
    }

    pub fn scale(&self, a: f64) -> VectorField {
        self.map_components(|_, c| c.scale(a))
    }

    pub fn add_scaled(&self, a: f64, other: &VectorField) -> VectorField {
        self.zip_components(other, |x, y| x.add_scaled(a, y))
    }

    /// Componentwise multiplication by a scalar field (no dealiasing).
    pub fn pointwise_scalar(&self, s: &ScalarField) -> VectorField {
        self.map_components(|_, c| c.pointwise(s))
    }

    /// Pointwise `|F|²` (no dealiasing).
    pub fn norm_squared_pointwise(&self) -> ScalarField {
        let mut acc = ScalarField::zeros(self.grid);
        for c in &self.components {
            acc = &acc + &c.pointwise(c);
        }
        acc
    }

    pub fn inner(&self, other: &VectorField) -> f64 {
        self.components.iter().zip(&other.components).map(|(a, b)| a.inner(b)).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.components.iter().map(|c| c.max_abs()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.components.iter().all(|c| c.is_finite())
    }
}

impl Index<usize> for VectorField {
    type Output = ScalarField;
    fn index(&self, j: usize) -> &ScalarField {
        &self.components[j]
    }
}

impl Add for &VectorField {
    type Output = VectorField;
    fn add(self, rhs: &VectorField) -> VectorField {
        self.zip_components(rhs, |a, b| a + b)
    }
}

impl Sub for &VectorField {
    type Output = VectorField;
    fn sub(self, rhs: &VectorField) -> VectorField {
        self.zip_components(rhs, |a, b| a - b)
    }
}

impl Neg for &VectorField {
    type Output = VectorField;
    fn neg(self) -> VectorField {
        self.scale(-1.0)
    }
}

impl Mul<f64> for &VectorField {
    type Output = VectorField;
    fn mul(self, rhs: f64) -> VectorField {
        self.scale(rhs)
    }
}

/// Symmetric rank-2 tensor field; only entries with `i <= j` are stored.
#[derive(Debug, Clone)]
pub struct TensorField {
    grid: Grid,
    entries: Vec<ScalarField>,
}

impl TensorField {
    fn slot(dim: usize, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        // row-major upper triangle
        i * dim - i * (i + 1) / 2 + j
    }

    /// Builds the tensor from `f(i, j)` evaluated for `i <= j`.
    pub fn from_symmetric(grid: Grid, f: impl Fn(usize, usize) -> ScalarField) -> Self {
        let d = grid.dim();
        let mut entries = Vec::with_capacity(d * (d + 1) / 2);
        for i in 0..d {
            for j in i..d {
                entries.push(f(i, j));
            }
        }
        TensorField { grid, entries }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn get(&self, i: usize, j: usize) -> &ScalarField {
        &self.entries[Self::slot(self.grid.dim(), i, j)]
    }

    pub fn trace(&self) -> ScalarField {
        let mut acc = ScalarField::zeros(self.grid);
        for i in 0..self.grid.dim() {
            acc = &acc + self.get(i, i);
        }
        acc
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().map(|e| e.max_abs()).fold(0.0, f64::max)
    }
}
