//! Probability currents, de Broglie-Bohm velocities, the structure tensors of
//! the momentum map, and the antisymmetric correction field W.
//!
//! The continuity constraint `Σ_i ∂_i(v_i |ψ|² - j_i) = 0` fixes the velocity
//! field only up to a divergence-free correction: `(v_i - v_{i,B})|ψ|² =
//! Σ_ℓ ∂_ℓ W_{iℓ}` with antisymmetric W. Requiring that a causal Hamiltonian
//! generate the flow adds, for n = 2, the first-order equation
//!
//! ```text
//! (∂₂ g) ∂₁W - (∂₁ g) ∂₂W = F,   g = f/|ψ|²,
//! f = ∂₁ p̂₂ - ∂₂ p̂₁,             F = ∂_t f + ∇·(f v_B)
//! ```
//!
//! solved here along characteristics (level curves of g traced to the x₁ = 0
//! section) and, independently, by a regularized least-squares inversion of
//! the discretized operator. When a characteristic closes without meeting the
//! section, the loop integral of F is an obstruction to a single-valued
//! solution; it is reported as a diagnostic rather than hidden.
//!
//! Only W₁₂ is stored: the antisymmetric partner W₂₁ = -W₁₂ exists by storage
//! convention, so the representation cannot express a symmetric component.

use ndarray::{ArrayD, IxDyn};

use crate::error::{CoreError, Result};
use crate::grid::{interp_linear, GridSpec};
use crate::marginal_chain::MomentumMap;
use crate::spectral;
use crate::wavepacket::{density_floor_mask, WavefunctionState};

/// Stationary points of g (|∇g| below this fraction of its maximum) are
/// excluded from characteristic tracing and pinned to W = 0 in the
/// least-squares solve.
pub const STATIONARY_GRAD_REL: f64 = 1e-6;

/// Probability flux components j_i with a validity mask.
#[derive(Debug, Clone)]
pub struct CurrentField {
    pub components: Vec<ArrayD<f64>>,
    pub valid: ArrayD<bool>,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    DeBroglieBohm,
    Assembled,
}

/// System-point velocity field.
#[derive(Debug, Clone)]
pub struct VelocityField {
    pub components: Vec<ArrayD<f64>>,
    pub valid: ArrayD<bool>,
    pub provenance: Provenance,
    pub time: f64,
}

impl VelocityField {
    pub fn at(&self, axes: &[crate::grid::AxisSpec], point: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| interp_linear(c, axes, point))
            .collect()
    }
}

/// j_i = Re[ψ* (-i/m_i) ∂_i ψ] with spectral derivatives.
pub fn probability_current(state: &WavefunctionState, masses: &[f64]) -> CurrentField {
    let density = state.position_density();
    let valid = density_floor_mask(&density);
    let mut components = Vec::with_capacity(state.grid.ndim());
    for axis in 0..state.grid.ndim() {
        let dpsi = spectral::derivative_complex(&state.amplitudes, axis, &state.grid.axes[axis]);
        let mut j = state.grid.zeros();
        ndarray::Zip::from(&mut j)
            .and(&state.amplitudes)
            .and(&dpsi)
            .for_each(|ji, psi, dp| {
                *ji = (psi.conj() * dp).im / masses[axis];
            });
        components.push(j);
    }
    CurrentField {
        components,
        valid,
        time: state.time,
    }
}

/// v_{i,B} = j_i / |ψ|² on valid points, zero (and flagged) elsewhere.
pub fn dbb_velocity(current: &CurrentField, density: &ArrayD<f64>) -> VelocityField {
    let valid = {
        let floor = density_floor_mask(density);
        let mut v = current.valid.clone();
        ndarray::Zip::from(&mut v).and(&floor).for_each(|a, b| *a = *a && *b);
        v
    };
    let components = current
        .components
        .iter()
        .map(|j| {
            let mut v = j.clone();
            ndarray::Zip::from(&mut v)
                .and(density)
                .and(&valid)
                .for_each(|vi, rho, ok| {
                    *vi = if *ok { *vi / rho } else { 0.0 };
                });
            v
        })
        .collect();
    VelocityField {
        components,
        valid,
        provenance: Provenance::DeBroglieBohm,
        time: current.time,
    }
}

// ---------------------------------------------------------------------------
// structure tensors
// ---------------------------------------------------------------------------

/// The antisymmetric structure tensors of a 2-D momentum map: only the (1,2)
/// component of each is stored; the (2,1) components are their negations and
/// the diagonals vanish identically.
#[derive(Debug, Clone)]
pub struct StructureTensors {
    /// f₁₂ = ∂₁ p̂₂ - ∂₂ p̂₁ (centred differences on the map grids).
    pub curl: ArrayD<f64>,
    /// g₁₂ = f₁₂ / |ψ|² on valid points.
    pub scaled_curl: ArrayD<f64>,
    /// F₁₂ = ∂_t f₁₂ + ∂₁(f₁₂ v_{1,B}) + ∂₂(f₁₂ v_{2,B}); filled by
    /// [`source_tensor`].
    pub source: Option<ArrayD<f64>>,
    /// max |∂_i p̂_j| over valid points: the scale against which curl and
    /// source noise floors are judged.
    pub derivative_scale: f64,
    pub valid: ArrayD<bool>,
    pub time: f64,
}

/// Build f₁₂ and g₁₂ from a momentum map and the position density.
pub fn f_tensor(map: &MomentumMap, density: &ArrayD<f64>) -> Result<StructureTensors> {
    if map.components.len() != 2 {
        return Err(CoreError::SnapshotMismatch(
            "structure tensors require a 2-D momentum map".into(),
        ));
    }
    let grid = &map.grid;
    let d1p2 = spectral::centered_derivative_edged(&map.components[1], 0, grid.axes[0].delta());
    let d2p1 = spectral::centered_derivative_edged(&map.components[0], 1, grid.axes[1].delta());
    let floor = density_floor_mask(density);
    let mut valid = map.valid.clone();
    ndarray::Zip::from(&mut valid)
        .and(&floor)
        .for_each(|a, b| *a = *a && *b);
    // a centred difference is only trusted where the whole stencil is valid
    let valid = erode_mask(&valid);
    let mut curl = grid.zeros();
    ndarray::Zip::from(&mut curl)
        .and(&d1p2)
        .and(&d2p1)
        .and(&valid)
        .for_each(|c, a, b, ok| {
            *c = if *ok { a - b } else { 0.0 };
        });
    let mut scaled = grid.zeros();
    ndarray::Zip::from(&mut scaled)
        .and(&curl)
        .and(density)
        .and(&valid)
        .for_each(|s, c, rho, ok| {
            *s = if *ok { c / rho } else { 0.0 };
        });
    let mut derivative_scale = 0.0f64;
    let d2p2 = spectral::centered_derivative_edged(&map.components[1], 1, grid.axes[1].delta());
    let d1p1 = spectral::centered_derivative_edged(&map.components[0], 0, grid.axes[0].delta());
    for (((a, b), (c, d)), ok) in d1p2
        .iter()
        .zip(d2p1.iter())
        .zip(d1p1.iter().zip(d2p2.iter()))
        .zip(valid.iter())
    {
        if *ok {
            derivative_scale = derivative_scale.max(a.abs()).max(b.abs()).max(c.abs()).max(d.abs());
        }
    }
    Ok(StructureTensors {
        curl,
        scaled_curl: scaled,
        source: None,
        derivative_scale,
        valid,
        time: map.time,
    })
}

/// Shrink a mask by one cell in every axis direction; frame cells become
/// false.
pub fn erode_mask(mask: &ArrayD<bool>) -> ArrayD<bool> {
    let shape: Vec<usize> = mask.shape().to_vec();
    let mut out = mask.clone();
    match shape.len() {
        1 => {
            let n = shape[0];
            for j in 0..n {
                out[[j]] = mask[[j]] && j > 0 && j < n - 1 && mask[[j - 1]] && mask[[j + 1]];
            }
        }
        2 => {
            let (n0, n1) = (shape[0], shape[1]);
            for i in 0..n0 {
                for j in 0..n1 {
                    let interior = i > 0 && i < n0 - 1 && j > 0 && j < n1 - 1;
                    out[[i, j]] = interior
                        && mask[[i, j]]
                        && mask[[i - 1, j]]
                        && mask[[i + 1, j]]
                        && mask[[i, j - 1]]
                        && mask[[i, j + 1]];
                }
            }
        }
        _ => unreachable!(),
    }
    out
}

/// Fill the transport source F₁₂ from tensors at three uniformly spaced
/// times (central time difference) and the dBB velocity at the middle time.
pub fn source_tensor(
    prev: &StructureTensors,
    curr: &StructureTensors,
    next: &StructureTensors,
    v_b: &VelocityField,
    grid: &GridSpec,
) -> Result<StructureTensors> {
    let dt_a = curr.time - prev.time;
    let dt_b = next.time - curr.time;
    if (dt_a - dt_b).abs() > 1e-9 * dt_a.abs().max(1.0) || dt_a == 0.0 {
        return Err(CoreError::SnapshotMismatch(format!(
            "source tensor needs uniform time spacing, got {dt_a} and {dt_b}"
        )));
    }
    let dt = dt_a;
    let mut flux1 = grid.zeros();
    ndarray::Zip::from(&mut flux1)
        .and(&curr.curl)
        .and(&v_b.components[0])
        .for_each(|o, f, v| *o = f * v);
    let mut flux2 = grid.zeros();
    ndarray::Zip::from(&mut flux2)
        .and(&curr.curl)
        .and(&v_b.components[1])
        .for_each(|o, f, v| *o = f * v);
    let d1 = spectral::centered_derivative_edged(&flux1, 0, grid.axes[0].delta());
    let d2 = spectral::centered_derivative_edged(&flux2, 1, grid.axes[1].delta());

    let mut valid = curr.valid.clone();
    ndarray::Zip::from(&mut valid)
        .and(&prev.valid)
        .and(&next.valid)
        .and(&v_b.valid)
        .for_each(|o, a, b, c| *o = *o && *a && *b && *c);
    let valid = erode_mask(&valid);

    let mut source = grid.zeros();
    ndarray::Zip::from(&mut source)
        .and(&next.curl)
        .and(&prev.curl)
        .and(&d1)
        .and(&d2)
        .for_each(|s, fa, fb, a, b| {
            *s = (fa - fb) / (2.0 * dt) + a + b;
        });
    ndarray::Zip::from(&mut source)
        .and(&valid)
        .for_each(|s, ok| {
            if !*ok {
                *s = 0.0;
            }
        });
    Ok(StructureTensors {
        curl: curr.curl.clone(),
        scaled_curl: curr.scaled_curl.clone(),
        source: Some(source),
        derivative_scale: curr.derivative_scale,
        valid,
        time: curr.time,
    })
}

// ---------------------------------------------------------------------------
// the W field
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WSolveMethod {
    Characteristics,
    LeastSquares,
}

impl WSolveMethod {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Characteristics => "characteristics",
            Self::LeastSquares => "least-squares",
        }
    }
}

/// The per-characteristic gauge freedom h(g₁₂, t): zero by default, or a
/// tabulated function of g applied on top of the particular solution.
#[derive(Debug, Clone)]
pub enum GaugeSpec {
    Zero,
    Table { g: Vec<f64>, h: Vec<f64> },
}

impl GaugeSpec {
    pub fn apply(&self, g: f64) -> f64 {
        match self {
            GaugeSpec::Zero => 0.0,
            GaugeSpec::Table { g: gs, h: hs } => {
                if gs.is_empty() {
                    return 0.0;
                }
                if g <= gs[0] {
                    return hs[0];
                }
                if g >= gs[gs.len() - 1] {
                    return hs[hs.len() - 1];
                }
                let idx = gs.partition_point(|&v| v < g);
                let (g0, g1) = (gs[idx - 1], gs[idx]);
                let w = if g1 > g0 { (g - g0) / (g1 - g0) } else { 0.0 };
                hs[idx - 1] * (1.0 - w) + hs[idx] * w
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GaugeSpec::Zero => "zero",
            GaugeSpec::Table { .. } => "tabulated",
        }
    }
}

/// Residual field with its evaluation mask and summary statistics.
#[derive(Debug, Clone)]
pub struct ResidualField {
    pub field: ArrayD<f64>,
    pub mask: ArrayD<bool>,
    pub max_abs: f64,
    pub rms: f64,
}

/// Max-abs and RMS of a field over a mask.
pub fn summarize(field: &ArrayD<f64>, mask: &ArrayD<bool>) -> (f64, f64) {
    let mut max_abs = 0.0f64;
    let mut sum_sq = 0.0f64;
    let mut count = 0usize;
    for (v, ok) in field.iter().zip(mask.iter()) {
        if *ok {
            max_abs = max_abs.max(v.abs());
            sum_sq += v * v;
            count += 1;
        }
    }
    let rms = if count > 0 {
        (sum_sq / count as f64).sqrt()
    } else {
        0.0
    };
    (max_abs, rms)
}

fn residual_from(field: ArrayD<f64>, mask: ArrayD<bool>) -> ResidualField {
    let (max_abs, rms) = summarize(&field, &mask);
    ResidualField {
        field,
        mask,
        max_abs,
        rms,
    }
}

/// Closed-characteristic diagnostic: orbits that never reach the x₁ = 0
/// section, with the largest loop integral of F (which must vanish for a
/// single-valued solution to exist).
#[derive(Debug, Clone)]
pub struct LoopDiagnostic {
    pub closed_orbits: usize,
    pub max_loop_residual: f64,
}

/// The antisymmetric correction field W₁₂ together with how it was obtained.
#[derive(Debug, Clone)]
pub struct AntisymmetricField {
    pub w12: ArrayD<f64>,
    /// Points the solver actually determined (traced / in the solve set).
    pub solved: ArrayD<bool>,
    pub method: WSolveMethod,
    pub gauge: String,
    /// Residual of the transport equation for the returned W on the solved
    /// points.
    pub residual: ResidualField,
    /// The same residual per unit arc length along characteristics (divided
    /// by |∇g|), which removes the exponential tail weighting of g = f/|ψ|².
    pub residual_scaled: ResidualField,
    pub loop_warning: Option<LoopDiagnostic>,
    pub time: f64,
}

/// RMS of |∇g| over the density core (ρ within six orders of its peak).
pub(crate) fn core_gradient_scale(
    a: &ArrayD<f64>,
    b: &ArrayD<f64>,
    density: &ArrayD<f64>,
    valid: &ArrayD<bool>,
) -> f64 {
    let peak = density.iter().cloned().fold(0.0f64, f64::max);
    let mut sum = 0.0;
    let mut count = 0usize;
    for (((x, y), rho), ok) in a
        .iter()
        .zip(b.iter())
        .zip(density.iter())
        .zip(valid.iter())
    {
        if *ok && *rho >= 1e-6 * peak {
            let m = x.hypot(*y);
            sum += m * m;
            count += 1;
        }
    }
    if count > 0 {
        (sum / count as f64).sqrt()
    } else {
        1.0
    }
}

/// Residual of the transport equation in unit-speed (arc-length) form:
/// the raw residual divided by max(|∇g|, floor). Because g carries a 1/|ψ|²
/// factor, the raw residual is dominated by the exponentially large tail
/// gradients; per unit arc length the comparison is meaningful everywhere.
pub fn transport_residual_scaled(
    w12: &ArrayD<f64>,
    tensors: &StructureTensors,
    density: &ArrayD<f64>,
    grid: &GridSpec,
    extra_mask: Option<&ArrayD<bool>>,
) -> Result<ResidualField> {
    let raw = transport_residual(w12, tensors, grid, extra_mask)?;
    let g = &tensors.scaled_curl;
    let a = spectral::centered_derivative_edged(g, 1, grid.axes[1].delta());
    let b = spectral::centered_derivative_edged(g, 0, grid.axes[0].delta());
    let scale = core_gradient_scale(&a, &b, density, &raw.mask);
    let floor = 1e-3 * scale.max(1e-300);
    let mut field = raw.field;
    ndarray::Zip::from(&mut field)
        .and(&a)
        .and(&b)
        .for_each(|r, x, y| *r /= x.hypot(*y).max(floor));
    Ok(residual_from(field, raw.mask))
}

/// Residual of the first-order transport equation
/// `(∂₂g) ∂₁W - (∂₁g) ∂₂W - F` with centred differences, over the erosion of
/// the tensor validity mask intersected with `extra_mask` (if given).
pub fn transport_residual(
    w12: &ArrayD<f64>,
    tensors: &StructureTensors,
    grid: &GridSpec,
    extra_mask: Option<&ArrayD<bool>>,
) -> Result<ResidualField> {
    let source = tensors.source.as_ref().ok_or_else(|| {
        CoreError::SnapshotMismatch("transport residual requires the source tensor".into())
    })?;
    let g = &tensors.scaled_curl;
    let a = spectral::centered_derivative_edged(g, 1, grid.axes[1].delta()); // ∂₂g
    let b = spectral::centered_derivative_edged(g, 0, grid.axes[0].delta()); // ∂₁g
    let d1w = spectral::centered_derivative_edged(w12, 0, grid.axes[0].delta());
    let d2w = spectral::centered_derivative_edged(w12, 1, grid.axes[1].delta());
    let mut mask = erode_mask(&tensors.valid);
    if let Some(extra) = extra_mask {
        ndarray::Zip::from(&mut mask)
            .and(extra)
            .for_each(|m, e| *m = *m && *e);
    }
    let mut field = grid.zeros();
    ndarray::Zip::from(&mut field)
        .and(&a)
        .and(&b)
        .and(&d1w)
        .and(&d2w)
        .for_each(|r, a, b, w1, w2| {
            *r = a * w1 - b * w2;
        });
    ndarray::Zip::from(&mut field)
        .and(source)
        .and(&mask)
        .for_each(|r, f, ok| {
            *r = if *ok { *r - f } else { 0.0 };
        });
    Ok(residual_from(field, mask))
}

/// Solve the transport equation for W₁₂ at one time.
///
/// * `Characteristics`: trace the level curve of g through each grid point to
///   the x₁ = 0 section with RK4, accumulating ∫ F dτ; W is the gauge value
///   at the section plus the accumulated integral. Stationary points of g are
///   excluded; orbits that close without meeting the section are reported in
///   the loop diagnostic and left at W = 0.
/// * `LeastSquares`: minimize the squared residual of the centred-difference
///   operator over the valid set plus a Tikhonov term 1e-6 ‖∇W‖², with W = 0
///   pinned outside the solve set and on the grid frame.
pub fn solve_w(
    tensors: &StructureTensors,
    density: &ArrayD<f64>,
    gauge: &GaugeSpec,
    method: WSolveMethod,
    grid: &GridSpec,
) -> Result<AntisymmetricField> {
    let source = tensors.source.as_ref().ok_or_else(|| {
        CoreError::SnapshotMismatch("solve_w requires the source tensor".into())
    })?;
    if grid.ndim() != 2 {
        return Err(CoreError::SnapshotMismatch(
            "the W field exists for n = 2 only".into(),
        ));
    }
    let g = &tensors.scaled_curl;
    let floor = density_floor_mask(density);
    let mut valid = tensors.valid.clone();
    ndarray::Zip::from(&mut valid)
        .and(&floor)
        .for_each(|a, b| *a = *a && *b);
    let valid = erode_mask(&valid);

    let a = spectral::centered_derivative_edged(g, 1, grid.axes[1].delta()); // ∂₂g = dx₁/ds
    let b = spectral::centered_derivative_edged(g, 0, grid.axes[0].delta()); // ∂₁g = -dx₂/ds
    // the stationary floor is judged against the gradient scale of the
    // density core; |∇g| grows like 1/ρ toward the tail, so its maximum is
    // not a usable scale
    let grad_scale = core_gradient_scale(&a, &b, density, &valid);
    let grad_floor = STATIONARY_GRAD_REL * grad_scale;
    let mut solve_set = valid.clone();
    ndarray::Zip::from(&mut solve_set)
        .and(&a)
        .and(&b)
        .for_each(|m, x, y| *m = *m && x.hypot(*y) >= grad_floor);

    let (w12, solved, loop_warning) = match method {
        WSolveMethod::Characteristics => {
            trace_characteristics(grid, &a, &b, source, &solve_set)
        }
        WSolveMethod::LeastSquares => {
            let (w, s) = least_squares_w(grid, &a, &b, source, &solve_set, grad_scale, density);
            (w, s, None)
        }
    };

    // per-characteristic gauge term
    let mut w12 = w12;
    if !matches!(gauge, GaugeSpec::Zero) {
        ndarray::Zip::from(&mut w12)
            .and(g)
            .and(&solved)
            .for_each(|w, gv, ok| {
                if *ok {
                    *w += gauge.apply(*gv);
                }
            });
    }

    let eval_mask = erode_mask(&solved);
    let residual = transport_residual(&w12, tensors, grid, Some(&eval_mask))?;
    let residual_scaled =
        transport_residual_scaled(&w12, tensors, density, grid, Some(&eval_mask))?;
    Ok(AntisymmetricField {
        w12,
        solved,
        method,
        gauge: gauge.name().into(),
        residual,
        residual_scaled,
        loop_warning,
        time: tensors.time,
    })
}

fn trace_characteristics(
    grid: &GridSpec,
    a: &ArrayD<f64>,
    b: &ArrayD<f64>,
    source: &ArrayD<f64>,
    solve_set: &ArrayD<bool>,
) -> (ArrayD<f64>, ArrayD<bool>, Option<LoopDiagnostic>) {
    let (ax0, ax1) = (&grid.axes[0], &grid.axes[1]);
    let (n0, n1) = (ax0.len, ax1.len);
    let min_dx = ax0.delta().min(ax1.delta());
    let axes = &grid.axes;
    let mut w12 = grid.zeros();
    let mut solved = ArrayD::from_elem(IxDyn(&[n0, n1]), false);
    let mut closed_orbits = 0usize;
    let mut max_loop = 0.0f64;
    let max_steps = 20_000usize;

    let vel = |x: &[f64]| -> (f64, f64) {
        (interp_linear(a, axes, x), -interp_linear(b, axes, x))
    };
    let in_set = |x: &[f64]| -> bool {
        let t0 = ax0.locate(x[0]);
        let t1 = ax1.locate(x[1]);
        let i = (t0.round() as usize).min(n0 - 1);
        let j = (t1.round() as usize).min(n1 - 1);
        solve_set[[i, j]]
    };

    for i in 0..n0 {
        for j in 0..n1 {
            if !solve_set[[i, j]] {
                continue;
            }
            let start = [ax0.point(i), ax1.point(j)];
            if start[0] == 0.0 {
                w12[[i, j]] = 0.0;
                solved[[i, j]] = true;
                continue;
            }
            let (vx0, _) = vel(&start);
            let mut dir = -(start[0].signum()) * vx0.signum();
            if dir == 0.0 {
                dir = 1.0;
            }
            let mut x = start;
            let mut w_acc = 0.0f64;
            let mut ok = false;
            let mut closed = false;
            for step in 0..max_steps {
                let (vx, vy) = vel(&x);
                let speed = vx.hypot(vy);
                if speed < 1e-30 {
                    break;
                }
                let h = 0.5 * min_dx / speed;
                // RK4 on (x, w)
                let f1 = (dir * vx, dir * vy, dir * interp_linear(source, axes, &x));
                let x2 = [x[0] + 0.5 * h * f1.0, x[1] + 0.5 * h * f1.1];
                let (v2x, v2y) = vel(&x2);
                let f2 = (dir * v2x, dir * v2y, dir * interp_linear(source, axes, &x2));
                let x3 = [x[0] + 0.5 * h * f2.0, x[1] + 0.5 * h * f2.1];
                let (v3x, v3y) = vel(&x3);
                let f3 = (dir * v3x, dir * v3y, dir * interp_linear(source, axes, &x3));
                let x4 = [x[0] + h * f3.0, x[1] + h * f3.1];
                let (v4x, v4y) = vel(&x4);
                let f4 = (dir * v4x, dir * v4y, dir * interp_linear(source, axes, &x4));
                let new = [
                    x[0] + h / 6.0 * (f1.0 + 2.0 * f2.0 + 2.0 * f3.0 + f4.0),
                    x[1] + h / 6.0 * (f1.1 + 2.0 * f2.1 + 2.0 * f3.1 + f4.1),
                ];
                let dw = h / 6.0 * (f1.2 + 2.0 * f2.2 + 2.0 * f3.2 + f4.2);

                if new[0] == 0.0 || (x[0] > 0.0) != (new[0] > 0.0) {
                    // crossed the section: linear fraction of the last step
                    let frac = x[0] / (x[0] - new[0]);
                    w_acc += dw * frac;
                    ok = true;
                    break;
                }
                w_acc += dw;
                x = new;
                if !ax0.contains(x[0]) || !ax1.contains(x[1]) || !in_set(&x) {
                    break;
                }
                if step > 8 {
                    let d = (x[0] - start[0]).hypot(x[1] - start[1]);
                    if d < 0.5 * min_dx {
                        closed = true;
                        break;
                    }
                }
            }
            if ok {
                // W at the section is the gauge value (zero here); walking the
                // orbit from the point accumulated ∫ F dτ, so undo it
                w12[[i, j]] = -w_acc;
                solved[[i, j]] = true;
            } else if closed {
                closed_orbits += 1;
                max_loop = max_loop.max(w_acc.abs());
            }
        }
    }
    // orbit closure through the section: g-level curves that cross x₁ = 0
    // and close must carry a vanishing loop integral of F for the traced
    // solution to be single-valued; measure it from sampled section points
    if let Some(col) = (0..n0).find(|&i| ax0.point(i) == 0.0) {
        for j in (0..n1).step_by(4) {
            if !solve_set[[col, j]] {
                continue;
            }
            let start = [ax0.point(col), ax1.point(j)];
            let mut x = start;
            let mut w_acc = 0.0f64;
            let mut travelled = 0.0f64;
            for step in 0..max_steps {
                let (vx, vy) = vel(&x);
                let speed = vx.hypot(vy);
                if speed < 1e-30 {
                    break;
                }
                let h = 0.5 * min_dx / speed;
                let f1 = (vx, vy, interp_linear(source, axes, &x));
                let x2 = [x[0] + 0.5 * h * f1.0, x[1] + 0.5 * h * f1.1];
                let (v2x, v2y) = vel(&x2);
                let f2 = (v2x, v2y, interp_linear(source, axes, &x2));
                let x3 = [x[0] + 0.5 * h * f2.0, x[1] + 0.5 * h * f2.1];
                let (v3x, v3y) = vel(&x3);
                let f3 = (v3x, v3y, interp_linear(source, axes, &x3));
                let x4 = [x[0] + h * f3.0, x[1] + h * f3.1];
                let (v4x, v4y) = vel(&x4);
                let f4 = (v4x, v4y, interp_linear(source, axes, &x4));
                x = [
                    x[0] + h / 6.0 * (f1.0 + 2.0 * f2.0 + 2.0 * f3.0 + f4.0),
                    x[1] + h / 6.0 * (f1.1 + 2.0 * f2.1 + 2.0 * f3.1 + f4.1),
                ];
                w_acc += h / 6.0 * (f1.2 + 2.0 * f2.2 + 2.0 * f3.2 + f4.2);
                travelled += 0.5 * min_dx;
                if !ax0.contains(x[0]) || !ax1.contains(x[1]) || !in_set(&x) {
                    break;
                }
                if step > 8 {
                    let d = (x[0] - start[0]).hypot(x[1] - start[1]);
                    if d < 0.5 * min_dx {
                        closed_orbits += 1;
                        max_loop = max_loop.max(w_acc.abs());
                        break;
                    }
                }
                if travelled > 16.0 * (ax0.hi - ax0.lo + ax1.hi - ax1.lo) {
                    break;
                }
            }
        }
    }
    let warning = if closed_orbits > 0 {
        Some(LoopDiagnostic {
            closed_orbits,
            max_loop_residual: max_loop,
        })
    } else {
        None
    };
    (w12, solved, warning)
}

fn least_squares_w(
    grid: &GridSpec,
    a: &ArrayD<f64>,
    b: &ArrayD<f64>,
    source: &ArrayD<f64>,
    solve_set: &ArrayD<bool>,
    grad_scale: f64,
    density: &ArrayD<f64>,
) -> (ArrayD<f64>, ArrayD<bool>) {
    let (n0, n1) = (grid.axes[0].len, grid.axes[1].len);
    let nn = n0 * n1;
    let c0 = 1.0 / (2.0 * grid.axes[0].delta());
    let c1 = 1.0 / (2.0 * grid.axes[1].delta());
    let sqrt_lambda = 1e-3; // Tikhonov weight sqrt(1e-6)
    let t0 = sqrt_lambda / grid.axes[0].delta();
    let t1 = sqrt_lambda / grid.axes[1].delta();

    // flat copies for fast indexed access
    let idx = |i: usize, j: usize| i * n1 + j;
    let mut in_set = vec![false; nn];
    let mut av = vec![0.0; nn];
    let mut bv = vec![0.0; nn];
    let mut fv = vec![0.0; nn];
    let mut rhov = vec![0.0; nn];
    let peak = density.iter().cloned().fold(0.0f64, f64::max);
    for i in 0..n0 {
        for j in 0..n1 {
            in_set[idx(i, j)] = solve_set[[i, j]];
            av[idx(i, j)] = a[[i, j]];
            bv[idx(i, j)] = b[[i, j]];
            fv[idx(i, j)] = source[[i, j]];
            rhov[idx(i, j)] = (density[[i, j]] / peak).max(1e-12);
        }
    }

    // row equilibration: normalize each transport row by the local |grad g|;
    // the solution of the consistent system is unchanged while the normal
    // equations become far better conditioned
    let row_floor = 1e-3 * grad_scale.max(1e-300);

    // normal equations M = AᵀA (+ pinned unit diagonals) in banded lower
    // storage: entry (r, r - d) at band[r * (q + 1) + d], 0 <= d <= q
    let q = 2 * n1;
    let mut band = vec![0.0f64; nn * (q + 1)];
    let mut rhs = vec![0.0f64; nn];
    let mut entries: Vec<(usize, f64)> = Vec::with_capacity(4);
    let add_row = |entries: &[(usize, f64)], rhs_val: f64, band: &mut [f64], rhs: &mut [f64]| {
        for &(r, vr) in entries {
            rhs[r] += vr * rhs_val;
            for &(c, vc) in entries {
                if c <= r {
                    band[r * (q + 1) + (r - c)] += vr * vc;
                }
            }
        }
    };

    for i in 0..n0 {
        for j in 0..n1 {
            let k = idx(i, j);
            if !in_set[k] {
                // pinned: decoupled unit diagonal, w = 0
                band[k * (q + 1)] += 1.0;
                continue;
            }
            let scale = 1.0 / av[k].hypot(bv[k]).max(row_floor);
            let (ca, cb) = (av[k] * scale * c0, bv[k] * scale * c1);
            entries.clear();
            if i + 1 < n0 && in_set[idx(i + 1, j)] {
                entries.push((idx(i + 1, j), ca));
            }
            if i > 0 && in_set[idx(i - 1, j)] {
                entries.push((idx(i - 1, j), -ca));
            }
            if j + 1 < n1 && in_set[idx(i, j + 1)] {
                entries.push((idx(i, j + 1), -cb));
            }
            if j > 0 && in_set[idx(i, j - 1)] {
                entries.push((idx(i, j - 1), cb));
            }
            add_row(&entries, fv[k] * scale, &mut band, &mut rhs);
        }
    }
    // Tikhonov rows over every adjacency with an in-set endpoint, weighted
    // by 1/density: the penalty then bounds the velocity correction
    // ∂W/|ψ|² itself, so W flattens where the density cannot support a
    // meaningful correction (on a uniform density this is the plain
    // gradient penalty)
    for i in 0..n0 {
        for j in 0..n1 {
            if i + 1 < n0 {
                let wgt = t0 / rhov[idx(i, j)].min(rhov[idx(i + 1, j)]);
                entries.clear();
                if in_set[idx(i + 1, j)] {
                    entries.push((idx(i + 1, j), wgt));
                }
                if in_set[idx(i, j)] {
                    entries.push((idx(i, j), -wgt));
                }
                if !entries.is_empty() {
                    add_row(&entries, 0.0, &mut band, &mut rhs);
                }
            }
            if j + 1 < n1 {
                let wgt = t1 / rhov[idx(i, j)].min(rhov[idx(i, j + 1)]);
                entries.clear();
                if in_set[idx(i, j + 1)] {
                    entries.push((idx(i, j + 1), wgt));
                }
                if in_set[idx(i, j)] {
                    entries.push((idx(i, j), -wgt));
                }
                if !entries.is_empty() {
                    add_row(&entries, 0.0, &mut band, &mut rhs);
                }
            }
        }
    }

    // banded Cholesky M = L Lᵀ, then two triangular solves
    for r in 0..nn {
        let lo = r.saturating_sub(q);
        for c in lo..=r {
            let mut sum = band[r * (q + 1) + (r - c)];
            let kk = lo.max(c.saturating_sub(q));
            for k in kk..c {
                sum -= band[r * (q + 1) + (r - k)] * band[c * (q + 1) + (c - k)];
            }
            if c == r {
                band[r * (q + 1)] = sum.max(1e-300).sqrt();
            } else {
                band[r * (q + 1) + (r - c)] = sum / band[c * (q + 1)];
            }
        }
    }
    // forward solve L y = rhs
    for r in 0..nn {
        let lo = r.saturating_sub(q);
        let mut sum = rhs[r];
        for k in lo..r {
            sum -= band[r * (q + 1) + (r - k)] * rhs[k];
        }
        rhs[r] = sum / band[r * (q + 1)];
    }
    // backward solve Lᵀ w = y
    for r in (0..nn).rev() {
        let hi = (r + q).min(nn - 1);
        let mut sum = rhs[r];
        for k in r + 1..=hi {
            sum -= band[k * (q + 1) + (k - r)] * rhs[k];
        }
        rhs[r] = sum / band[r * (q + 1)];
    }

    let mut w = grid.zeros();
    for i in 0..n0 {
        for j in 0..n1 {
            w[[i, j]] = if in_set[idx(i, j)] { rhs[idx(i, j)] } else { 0.0 };
        }
    }
    (w, solve_set.clone())
}

// ---------------------------------------------------------------------------
// velocity assembly and residuals
// ---------------------------------------------------------------------------

/// Smooth taper from one (dense region) to zero (below 1e-8 of peak density),
/// applied to W before differentiation so the spectral derivative sees a
/// smooth, compactly supported field.
fn density_window(density: &ArrayD<f64>) -> ArrayD<f64> {
    let peak = density.iter().cloned().fold(0.0f64, f64::max);
    density.mapv(|d| {
        let r = d / peak;
        if r <= 1e-8 {
            0.0
        } else if r >= 1e-6 {
            1.0
        } else {
            let t = (r.log10() + 8.0) / 2.0;
            t * t * (3.0 - 2.0 * t)
        }
    })
}

/// v_i = v_{i,B} + (Σ_ℓ ∂_ℓ W_{iℓ}) / |ψ|²: the W term adds (∂₂W₁₂)/ρ to the
/// first component and -(∂₁W₁₂)/ρ to the second.
///
/// The W term is differentiated with the same centred operator used by
/// [`continuity_residual`]; the two convolutions commute exactly, so the
/// added term is divergence-free on the grid to round-off, and the local
/// stencil keeps it identically zero outside the window support.
pub fn assemble_velocity(
    v_b: &VelocityField,
    w: Option<&AntisymmetricField>,
    density: &ArrayD<f64>,
    grid: &GridSpec,
) -> VelocityField {
    let mut out = v_b.clone();
    out.provenance = Provenance::Assembled;
    let Some(w) = w else {
        return out;
    };
    let mut w_win = w.w12.clone();
    let window = density_window(density);
    ndarray::Zip::from(&mut w_win)
        .and(&window)
        .for_each(|w, win| *w *= win);
    let d2w = spectral::centered_derivative(&w_win, 1, grid.axes[1].delta());
    let d1w = spectral::centered_derivative(&w_win, 0, grid.axes[0].delta());
    ndarray::Zip::from(&mut out.components[0])
        .and(&d2w)
        .and(density)
        .and(&out.valid)
        .for_each(|v, d, rho, ok| {
            if *ok {
                *v += d / rho;
            }
        });
    ndarray::Zip::from(&mut out.components[1])
        .and(&d1w)
        .and(density)
        .and(&out.valid)
        .for_each(|v, d, rho, ok| {
            if *ok {
                *v -= d / rho;
            }
        });
    out
}

/// Residual of the continuity constraint `Σ_i ∂_i(v_i |ψ|² - j_i)`.
///
/// For v = v_B the flux difference vanishes pointwise, so any derivative
/// operator reports round-off. The divergence is taken with the cyclic
/// centred operator: it commutes exactly with the centred derivatives that
/// build the W term of an assembled field, which keeps the antisymmetric
/// correction invisible to this constraint at round-off scale (a spectral
/// divergence of the masked, non-periodic flux would not cancel).
pub fn continuity_residual(
    v: &VelocityField,
    density: &ArrayD<f64>,
    current: &CurrentField,
    grid: &GridSpec,
) -> ResidualField {
    let mut total = grid.zeros();
    for axis in 0..grid.ndim() {
        let mut flux = grid.zeros();
        ndarray::Zip::from(&mut flux)
            .and(&v.components[axis])
            .and(density)
            .and(&current.components[axis])
            .for_each(|f, vi, rho, ji| {
                *f = vi * rho - ji;
            });
        let d = spectral::centered_derivative(&flux, axis, grid.axes[axis].delta());
        ndarray::Zip::from(&mut total).and(&d).for_each(|t, d| *t += d);
    }
    let mut mask = v.valid.clone();
    ndarray::Zip::from(&mut mask)
        .and(&current.valid)
        .for_each(|m, c| *m = *m && *c);
    let mut field = grid.zeros();
    ndarray::Zip::from(&mut field)
        .and(&total)
        .and(&mask)
        .for_each(|f, t, ok| {
            *f = if *ok { *t } else { 0.0 };
        });
    residual_from(field, mask)
}

/// Residual of the integrability condition for a causal Hamiltonian:
/// `∂₁(f v₁) + ∂₂(f v₂) + ∂_t f` with the given velocity field (the form the
/// W equation restates through v = v_B + divergence term).
pub fn integrability_residual(
    v: &VelocityField,
    prev: &StructureTensors,
    curr: &StructureTensors,
    next: &StructureTensors,
    grid: &GridSpec,
) -> Result<ResidualField> {
    let dt_a = curr.time - prev.time;
    let dt_b = next.time - curr.time;
    if (dt_a - dt_b).abs() > 1e-9 * dt_a.abs().max(1.0) || dt_a == 0.0 {
        return Err(CoreError::SnapshotMismatch(
            "integrability residual needs uniform time spacing".into(),
        ));
    }
    let dt = dt_a;
    let mut flux1 = grid.zeros();
    ndarray::Zip::from(&mut flux1)
        .and(&curr.curl)
        .and(&v.components[0])
        .for_each(|o, f, vi| *o = f * vi);
    let mut flux2 = grid.zeros();
    ndarray::Zip::from(&mut flux2)
        .and(&curr.curl)
        .and(&v.components[1])
        .for_each(|o, f, vi| *o = f * vi);
    let d1 = spectral::centered_derivative_edged(&flux1, 0, grid.axes[0].delta());
    let d2 = spectral::centered_derivative_edged(&flux2, 1, grid.axes[1].delta());

    let mut mask = curr.valid.clone();
    ndarray::Zip::from(&mut mask)
        .and(&prev.valid)
        .and(&next.valid)
        .and(&v.valid)
        .for_each(|m, a, b, c| *m = *m && *a && *b && *c);
    let mask = erode_mask(&mask);

    let mut field = grid.zeros();
    ndarray::Zip::from(&mut field)
        .and(&next.curl)
        .and(&prev.curl)
        .and(&d1)
        .and(&d2)
        .and(&mask)
        .for_each(|r, fa, fb, a, b, ok| {
            *r = if *ok {
                (fa - fb) / (2.0 * dt) + a + b
            } else {
                0.0
            };
        });
    Ok(residual_from(field, mask))
}
