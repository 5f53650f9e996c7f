//! Tensor-product spatial grids.
//!
//! An axis holds `len` uniformly spaced points `x_j = lo + j * dx` with
//! `dx = (hi - lo) / len`; the upper bound itself is not a grid point, which
//! makes the grid periodic-friendly for the discrete Fourier transforms in
//! [`crate::spectral`]. Point counts are restricted to powers of two.

use ndarray::{ArrayD, IxDyn};

use crate::error::{CoreError, Result};

/// One uniformly spaced axis.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisSpec {
    pub lo: f64,
    pub hi: f64,
    pub len: usize,
}

impl AxisSpec {
    pub fn new(lo: f64, hi: f64, len: usize) -> Self {
        Self { lo, hi, len }
    }

    #[inline]
    pub fn delta(&self) -> f64 {
        (self.hi - self.lo) / self.len as f64
    }

    #[inline]
    pub fn point(&self, j: usize) -> f64 {
        self.lo + j as f64 * self.delta()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len).map(|j| self.point(j)).collect()
    }

    /// Angular wavenumbers in DFT layout: 0, dk, ..., -2dk, -dk.
    pub fn wavenumbers(&self) -> Vec<f64> {
        let dk = std::f64::consts::TAU / (self.len as f64 * self.delta());
        (0..self.len)
            .map(|i| {
                if i <= self.len / 2 - 1 {
                    i as f64 * dk
                } else {
                    (i as f64 - self.len as f64) * dk
                }
            })
            .collect()
    }

    /// The conjugate (momentum) axis: ascending frequencies centred on zero.
    pub fn conjugate(&self) -> AxisSpec {
        let dk = std::f64::consts::TAU / (self.len as f64 * self.delta());
        let half = (self.len / 2) as f64;
        AxisSpec::new(-half * dk, half * dk, self.len)
    }

    /// Fractional index of `x`, clamped to the axis range.
    #[inline]
    pub fn locate(&self, x: f64) -> f64 {
        let t = (x - self.lo) / self.delta();
        t.clamp(0.0, (self.len - 1) as f64)
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

/// Tensor-product grid for an n-dimensional configuration space, n in {1, 2}.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub axes: Vec<AxisSpec>,
}

impl GridSpec {
    pub fn new(axes: Vec<AxisSpec>) -> Result<Self> {
        let grid = Self { axes };
        grid.validate()?;
        Ok(grid)
    }

    pub fn line(lo: f64, hi: f64, len: usize) -> Result<Self> {
        Self::new(vec![AxisSpec::new(lo, hi, len)])
    }

    pub fn square(lo: f64, hi: f64, len: usize) -> Result<Self> {
        Self::new(vec![AxisSpec::new(lo, hi, len), AxisSpec::new(lo, hi, len)])
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.axes.len();
        if n == 0 || n > 2 {
            return Err(CoreError::InvalidSpec(format!(
                "grid.axes: axis count must be 1 or 2, got {n}"
            )));
        }
        for (i, ax) in self.axes.iter().enumerate() {
            if !(ax.hi > ax.lo) {
                return Err(CoreError::InvalidSpec(format!(
                    "grid.axes[{i}]: upper bound must exceed lower bound"
                )));
            }
            if ax.len < 64 || !ax.len.is_power_of_two() {
                return Err(CoreError::InvalidSpec(format!(
                    "grid.axes[{i}]: point count must be a power of two >= 64, got {}",
                    ax.len
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn ndim(&self) -> usize {
        self.axes.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.len).collect()
    }

    pub fn num_points(&self) -> usize {
        self.axes.iter().map(|a| a.len).product()
    }

    /// Product of the axis spacings.
    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(|a| a.delta()).product()
    }

    /// Coordinates of the grid point with the given multi-index.
    pub fn coords(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .zip(&self.axes)
            .map(|(&j, ax)| ax.point(j))
            .collect()
    }

    pub fn zeros(&self) -> ArrayD<f64> {
        ArrayD::zeros(IxDyn(&self.shape()))
    }
}

/// Trapezoid rule over every axis of a grid-shaped field.
pub fn integrate(field: &ArrayD<f64>, axes: &[AxisSpec]) -> f64 {
    let shape = field.shape();
    let mut total = 0.0;
    for (lin, v) in field.iter().enumerate() {
        let mut w = 1.0;
        let mut rem = lin;
        for (d, ax) in axes.iter().enumerate().rev() {
            let j = rem % shape[d];
            rem /= shape[d];
            let edge = j == 0 || j == ax.len - 1;
            w *= if edge { 0.5 * ax.delta() } else { ax.delta() };
        }
        total += v * w;
    }
    total
}

/// Trapezoid-reduce a 2-D field over one axis, leaving a 1-D marginal.
pub fn reduce_axis(field: &ArrayD<f64>, axes: &[AxisSpec], axis: usize) -> Vec<f64> {
    assert_eq!(axes.len(), 2, "reduce_axis expects a 2-D field");
    let keep = 1 - axis;
    let view = field.view().into_dimensionality::<ndarray::Ix2>().unwrap();
    let (n_keep, n_red) = if keep == 0 {
        (view.shape()[0], view.shape()[1])
    } else {
        (view.shape()[1], view.shape()[0])
    };
    let d = axes[axis].delta();
    let mut out = vec![0.0; n_keep];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for j in 0..n_red {
            let v = if keep == 0 { view[[i, j]] } else { view[[j, i]] };
            let w = if j == 0 || j == n_red - 1 { 0.5 } else { 1.0 };
            acc += w * v;
        }
        *o = acc * d;
    }
    out
}

/// Multilinear interpolation of a real field at a physical point.
///
/// Coordinates are clamped to the grid, so evaluation immediately outside the
/// box returns the boundary value.
pub fn interp_linear(field: &ArrayD<f64>, axes: &[AxisSpec], point: &[f64]) -> f64 {
    match axes.len() {
        1 => {
            let t = axes[0].locate(point[0]);
            let i = (t.floor() as usize).min(axes[0].len - 2);
            let w = t - i as f64;
            let f = field.view().into_dimensionality::<ndarray::Ix1>().unwrap();
            f[i] * (1.0 - w) + f[i + 1] * w
        }
        2 => {
            let t0 = axes[0].locate(point[0]);
            let t1 = axes[1].locate(point[1]);
            let i = (t0.floor() as usize).min(axes[0].len - 2);
            let j = (t1.floor() as usize).min(axes[1].len - 2);
            let u = t0 - i as f64;
            let v = t1 - j as f64;
            let f = field.view().into_dimensionality::<ndarray::Ix2>().unwrap();
            f[[i, j]] * (1.0 - u) * (1.0 - v)
                + f[[i + 1, j]] * u * (1.0 - v)
                + f[[i, j + 1]] * (1.0 - u) * v
                + f[[i + 1, j + 1]] * u * v
        }
        n => panic!("unsupported dimension {n}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn axis_point_count_must_be_power_of_two() {
        assert!(GridSpec::line(-1.0, 1.0, 100).is_err());
        assert!(GridSpec::line(-1.0, 1.0, 32).is_err());
        assert!(GridSpec::line(-1.0, 1.0, 128).is_ok());
    }

    #[test]
    fn trapezoid_integrates_a_constant() {
        let g = GridSpec::line(0.0, 1.0, 128).unwrap();
        let f = ArrayD::from_elem(IxDyn(&[128]), 2.0);
        // last node is 1 - dx, so the covered span is (len-1) * dx
        let span = 127.0 / 128.0;
        assert_relative_eq!(integrate(&f, &g.axes), 2.0 * span, epsilon = 1e-12);
    }

    #[test]
    fn conjugate_axis_is_symmetric() {
        let ax = AxisSpec::new(-8.0, 8.0, 128);
        let ca = ax.conjugate();
        assert_relative_eq!(ca.lo, -ca.hi + ca.delta() * 0.0, epsilon = 1e-12);
        assert_relative_eq!(ca.delta(), std::f64::consts::TAU / 16.0, epsilon = 1e-12);
    }

    #[test]
    fn bilinear_interpolation_reproduces_affine_fields() {
        let g = GridSpec::square(-2.0, 2.0, 64).unwrap();
        let mut f = g.zeros();
        for i in 0..64 {
            for j in 0..64 {
                let x = g.axes[0].point(i);
                let y = g.axes[1].point(j);
                f[[i, j]] = 3.0 * x - 2.0 * y + 0.5;
            }
        }
        let v = interp_linear(&f, &g.axes, &[0.33, -1.27]);
        assert_relative_eq!(v, 3.0 * 0.33 + 2.0 * 1.27 + 0.5, epsilon = 1e-12);
    }
}
