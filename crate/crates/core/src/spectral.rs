//! Continuum-normalized discrete Fourier transforms and derivative operators.
//!
//! Conventions (ħ = 1, symmetric normalization):
//!
//! ```text
//! ψ̃(p) = (2π)^{-1/2} ∫ ψ(x) e^{-ipx} dx
//! ψ(x) = (2π)^{-1/2} ∫ ψ̃(p) e^{+ipx} dp
//! ```
//!
//! realized on an axis of `N` points with spacing `dx` starting at `lo` as an
//! FFT with `dx` scaling, a half-spectrum frequency shift (so the momentum
//! axis ascends through zero) and the `e^{-ip·lo}` offset phase. The pair is
//! exactly unitary on the grid: round-trips reproduce the input to FFT
//! round-off and Parseval holds with rectangle weights.

use ndarray::{ArrayD, Axis};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::grid::AxisSpec;

const SQRT_TAU: f64 = 2.5066282746310002; // sqrt(2*pi)

fn for_each_lane<F>(arr: &mut ArrayD<Complex64>, axis: usize, mut f: F)
where
    F: FnMut(&mut [Complex64]),
{
    let mut buf = vec![Complex64::default(); arr.shape()[axis]];
    for mut lane in arr.lanes_mut(Axis(axis)) {
        for (b, v) in buf.iter_mut().zip(lane.iter()) {
            *b = *v;
        }
        f(&mut buf);
        for (v, b) in lane.iter_mut().zip(buf.iter()) {
            *v = *b;
        }
    }
}

/// In-place position → momentum transform along one axis.
///
/// Returns the momentum axis (ascending, centred on zero). The input axis
/// must be the position axis the data lives on.
pub fn forward_axis(arr: &mut ArrayD<Complex64>, axis: usize, pos: &AxisSpec) -> AxisSpec {
    let n = pos.len;
    let mom = pos.conjugate();
    let dx = pos.delta();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    // alternating signs shift the spectrum so index k maps to p_k = (k - N/2) dp
    let post: Vec<Complex64> = (0..n)
        .map(|k| {
            let p = mom.point(k);
            Complex64::from_polar(dx / SQRT_TAU, -p * pos.lo)
        })
        .collect();
    for_each_lane(arr, axis, |buf| {
        for (j, b) in buf.iter_mut().enumerate() {
            if j % 2 == 1 {
                *b = -*b;
            }
        }
        fft.process(buf);
        for (k, b) in buf.iter_mut().enumerate() {
            *b *= post[k];
        }
    });
    mom
}

/// In-place momentum → position transform along one axis (inverse of
/// [`forward_axis`]); `pos` is the position axis being restored.
pub fn inverse_axis(arr: &mut ArrayD<Complex64>, axis: usize, pos: &AxisSpec) {
    let n = pos.len;
    let mom = pos.conjugate();
    let dp = mom.delta();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_inverse(n);
    let pre: Vec<Complex64> = (0..n)
        .map(|k| Complex64::from_polar(1.0, mom.point(k) * pos.lo))
        .collect();
    let scale = dp / SQRT_TAU;
    for_each_lane(arr, axis, |buf| {
        for (k, b) in buf.iter_mut().enumerate() {
            *b *= pre[k];
        }
        fft.process(buf);
        for (j, b) in buf.iter_mut().enumerate() {
            *b *= if j % 2 == 1 { -scale } else { scale };
        }
    });
}

/// Spectral first derivative of a complex field along one axis.
pub fn derivative_complex(
    arr: &ArrayD<Complex64>,
    axis: usize,
    ax: &AxisSpec,
) -> ArrayD<Complex64> {
    let n = ax.len;
    let ks = ax.wavenumbers();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let norm = 1.0 / n as f64;
    let mut out = arr.clone();
    for_each_lane(&mut out, axis, |buf| {
        fwd.process(buf);
        for (k, b) in buf.iter_mut().enumerate() {
            // drop the unpaired Nyquist mode for odd-order derivatives
            let factor = if k == n / 2 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(0.0, ks[k])
            };
            *b *= factor;
        }
        inv.process(buf);
        for b in buf.iter_mut() {
            *b *= norm;
        }
    });
    out
}

/// Spectral first derivative of a real field along one axis.
pub fn derivative_real(field: &ArrayD<f64>, axis: usize, ax: &AxisSpec) -> ArrayD<f64> {
    let complex = field.mapv(|v| Complex64::new(v, 0.0));
    derivative_complex(&complex, axis, ax).mapv(|c| c.re)
}

/// Spectral second derivative of a real field along one axis.
pub fn second_derivative_real(field: &ArrayD<f64>, axis: usize, ax: &AxisSpec) -> ArrayD<f64> {
    let n = ax.len;
    let ks = ax.wavenumbers();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let norm = 1.0 / n as f64;
    let mut out = field.mapv(|v| Complex64::new(v, 0.0));
    for_each_lane(&mut out, axis, |buf| {
        fwd.process(buf);
        for (k, b) in buf.iter_mut().enumerate() {
            *b *= -ks[k] * ks[k];
        }
        inv.process(buf);
        for b in buf.iter_mut() {
            *b *= norm;
        }
    });
    out.mapv(|c| c.re)
}

/// Second-order centred difference with cyclic wrap along one axis.
///
/// Used for fields defined only on the grid (momentum maps, W, structure
/// tensors) where spectral differentiation of non-periodic data would ring.
/// As a convolution it commutes exactly with the spectral operators, which
/// keeps curl-divergence cancellations at round-off scale.
pub fn centered_derivative(field: &ArrayD<f64>, axis: usize, delta: f64) -> ArrayD<f64> {
    let n = field.shape()[axis];
    let mut out = field.clone();
    let inv2d = 1.0 / (2.0 * delta);
    let mut buf = vec![0.0; n];
    for mut lane in out.lanes_mut(Axis(axis)) {
        for (b, v) in buf.iter_mut().zip(lane.iter()) {
            *b = *v;
        }
        for j in 0..n {
            let jp = if j + 1 == n { 0 } else { j + 1 };
            let jm = if j == 0 { n - 1 } else { j - 1 };
            lane[j] = (buf[jp] - buf[jm]) * inv2d;
        }
    }
    out
}

/// Centred difference with one-sided first-order stencils at the ends of the
/// axis, for fields that are not periodic (momentum maps, structure tensors):
/// the cyclic wrap of [`centered_derivative`] would manufacture huge jumps at
/// the frame that leak into interpolation near the edges.
pub fn centered_derivative_edged(field: &ArrayD<f64>, axis: usize, delta: f64) -> ArrayD<f64> {
    let n = field.shape()[axis];
    let mut out = field.clone();
    let inv2d = 1.0 / (2.0 * delta);
    let invd = 1.0 / delta;
    let mut buf = vec![0.0; n];
    for mut lane in out.lanes_mut(Axis(axis)) {
        for (b, v) in buf.iter_mut().zip(lane.iter()) {
            *b = *v;
        }
        lane[0] = (buf[1] - buf[0]) * invd;
        lane[n - 1] = (buf[n - 1] - buf[n - 2]) * invd;
        for j in 1..n - 1 {
            lane[j] = (buf[j + 1] - buf[j - 1]) * inv2d;
        }
    }
    out
}

/// Rectangle-rule L2 norm of a complex field (exact under the unitary
/// transform pair; equals the trapezoid norm to round-off for fields that
/// decay at the grid edge).
pub fn grid_norm(arr: &ArrayD<Complex64>, cell_volume: f64) -> f64 {
    (arr.iter().map(|c| c.norm_sqr()).sum::<f64>() * cell_volume).sqrt()
}

/// Scale a field to unit [`grid_norm`]; returns the norm it had.
pub fn normalize(arr: &mut ArrayD<Complex64>, cell_volume: f64) -> f64 {
    let norm = grid_norm(arr, cell_volume);
    if norm > 0.0 {
        let s = 1.0 / norm;
        arr.mapv_inplace(|c| c * s);
    }
    norm
}
