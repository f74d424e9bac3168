use std::f64::consts::PI;
use std::fmt;

use crate::error::{Error, Result};

/// Uniform periodic grid on the torus `[0, 2π)^d`.
///
/// Nodes are stored row-major: axis 0 is the slowest index. Coordinate
/// `x_1` in the equations is axis 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Grid {
    dim: usize,
    n: usize,
    shift: u32,
}

impl Grid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidGrid(format!("dimension must be 2 or 3, got {dim}")));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "points per dimension must be a power of two >= 8, got {n}"
            )));
        }
        Ok(Grid { dim, n, shift: n.trailing_zeros() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.n as f64
    }

    /// `(2π)^d`, the torus volume.
    pub fn volume(&self) -> f64 {
        (2.0 * PI).powi(self.dim as i32)
    }

    pub fn ensure_same(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch { left: self.to_string(), right: other.to_string() });
        }
        Ok(())
    }

    /// Per-axis integer indices of a flat index.
    pub fn indices(&self, flat: usize) -> [usize; 3] {
        let mask = self.n - 1;
        let mut out = [0usize; 3];
        let mut rem = flat;
        for axis in (0..self.dim).rev() {
            out[axis] = rem & mask;
            rem >>= self.shift;
        }
        out
    }

    /// Node coordinates of a flat index (unused axes are zero).
    pub fn coords(&self, flat: usize) -> [f64; 3] {
        let idx = self.indices(flat);
        let h = self.spacing();
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = idx[a] as f64 * h;
        }
        x
    }

    /// Signed wavenumber of a per-axis FFT index, in `[-N/2, N/2)`.
    pub fn wavenumber(&self, m: usize) -> i64 {
        let n = self.n as i64;
        let m = m as i64;
        if m < n / 2 {
            m
        } else {
            m - n
        }
    }

    /// Wavevector of a flat spectral index.
    pub fn wavevector(&self, flat: usize) -> [i64; 3] {
        let idx = self.indices(flat);
        let mut k = [0i64; 3];
        for a in 0..self.dim {
            k[a] = self.wavenumber(idx[a]);
        }
        k
    }

    /// Wavevector used for odd derivatives: the Nyquist component is zeroed
    /// so that first derivatives of real fields stay real.
    pub fn derivative_wavevector(&self, flat: usize) -> [f64; 3] {
        let k = self.wavevector(flat);
        let nyq = -(self.n as i64) / 2;
        let mut kd = [0.0; 3];
        for a in 0..self.dim {
            kd[a] = if k[a] == nyq { 0.0 } else { k[a] as f64 };
        }
        kd
    }

    pub fn k_squared(&self, flat: usize) -> f64 {
        let k = self.wavevector(flat);
        k.iter().map(|&c| (c * c) as f64).sum()
    }

    /// Flat index of the mode `-k` (the Hermitian partner).
    pub fn conjugate_index(&self, flat: usize) -> usize {
        let idx = self.indices(flat);
        let mask = self.n - 1;
        let mut out = 0usize;
        for a in 0..self.dim {
            out = (out << self.shift) | (self.n - idx[a]) & mask;
        }
        out
    }

    /// True when some component exceeds the two-thirds cutoff `N/3`.
    pub fn is_aliased(&self, flat: usize) -> bool {
        let k = self.wavevector(flat);
        let n = self.n as i64;
        k[..self.dim].iter().any(|&c| 3 * c.abs() > n)
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "d={} N={}", self.dim, self.n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_sizes() {
        assert!(Grid::new(2, 4).is_err());
        assert!(Grid::new(2, 24).is_err());
        assert!(Grid::new(1, 32).is_err());
        assert!(Grid::new(3, 16).is_ok());
    }

    #[test]
    fn index_round_trip() {
        let g = Grid::new(3, 8).unwrap();
        for flat in 0..g.len() {
            let idx = g.indices(flat);
            assert_eq!(idx[0] * 64 + idx[1] * 8 + idx[2], flat);
            let c = g.conjugate_index(flat);
            let (k, kc) = (g.wavevector(flat), g.wavevector(c));
            for a in 0..3 {
                assert_eq!((k[a] + kc[a]).rem_euclid(8), 0);
            }
        }
    }

    #[test]
    fn cutoff() {
        let g = Grid::new(2, 64).unwrap();
        // k = (21, 0) kept, (22, 0) removed.
        assert!(!g.is_aliased(21 * 64));
        assert!(g.is_aliased(22 * 64));
    }
}
