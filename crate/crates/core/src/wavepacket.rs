//! Wavefunctions on spectral grids: construction from a catalog of gaussian
//! states, split-step Schrödinger evolution, mixed position/momentum
//! representations and the polar decomposition ψ = R e^{iS}.
//!
//! All units have ħ = 1. Gaussian packets are parameterized so that the
//! position density of a single term has standard deviation σ per axis and a
//! minimum-uncertainty momentum width 1/(2σ).

use ndarray::{ArrayD, IxDyn};
use num_complex::Complex64;

use crate::error::{CoreError, Result};
use crate::grid::{AxisSpec, GridSpec};
use crate::spectral;

/// Relative density floor: points with |ψ|² below this fraction of the peak
/// are flagged invalid wherever a formula divides by the density.
pub const DENSITY_FLOOR_REL: f64 = 1e-12;

/// Per-axis representation flag for mixed states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AxisRep {
    Position,
    Momentum,
}

/// One gaussian packet: `N exp(-(x-c)ᵀ Σ⁻¹ (x-c)/4 + i k·(x-c))` with the
/// covariance Σ of the position density built from per-axis widths and, for
/// n = 2, a correlation coefficient.
#[derive(Debug, Clone)]
pub struct GaussianTerm {
    pub center: Vec<f64>,
    pub sigma: Vec<f64>,
    pub wavenumber: Vec<f64>,
    pub correlation: f64,
    pub coefficient: Complex64,
}

impl GaussianTerm {
    pub fn centered(sigma: Vec<f64>, wavenumber: Vec<f64>, correlation: f64) -> Self {
        let n = sigma.len();
        Self {
            center: vec![0.0; n],
            sigma,
            wavenumber,
            correlation,
            coefficient: Complex64::new(1.0, 0.0),
        }
    }
}

/// Catalog of initial states.
#[derive(Debug, Clone)]
pub enum WavefunctionSpec {
    Gaussian(GaussianTerm),
    Superposition(Vec<GaussianTerm>),
}

impl WavefunctionSpec {
    pub fn terms(&self) -> &[GaussianTerm] {
        match self {
            WavefunctionSpec::Gaussian(t) => std::slice::from_ref(t),
            WavefunctionSpec::Superposition(ts) => ts,
        }
    }

    pub fn validate(&self, ndim: usize) -> Result<()> {
        let terms = self.terms();
        if terms.is_empty() {
            return Err(CoreError::InvalidSpec(
                "wavefunction.terms: at least one term required".into(),
            ));
        }
        if terms.iter().all(|t| t.coefficient.norm() == 0.0) {
            return Err(CoreError::InvalidSpec(
                "wavefunction.terms: all coefficients vanish".into(),
            ));
        }
        for (i, t) in terms.iter().enumerate() {
            if t.center.len() != ndim || t.sigma.len() != ndim || t.wavenumber.len() != ndim {
                return Err(CoreError::InvalidSpec(format!(
                    "wavefunction.terms[{i}]: expected {ndim} components per field"
                )));
            }
            for (a, &s) in t.sigma.iter().enumerate() {
                if !(s > 0.0) {
                    return Err(CoreError::InvalidSpec(format!(
                        "wavefunction.terms[{i}].sigma[{a}]: width must be positive, got {s}"
                    )));
                }
            }
            if ndim == 2 && t.correlation.abs() >= 1.0 {
                return Err(CoreError::InvalidSpec(format!(
                    "wavefunction.terms[{i}].correlation: |c| must be < 1, got {}",
                    t.correlation
                )));
            }
        }
        Ok(())
    }
}

/// Complex amplitudes on a position grid at one instant.
#[derive(Debug, Clone)]
pub struct WavefunctionState {
    pub grid: GridSpec,
    pub amplitudes: ArrayD<Complex64>,
    pub time: f64,
}

impl WavefunctionState {
    pub fn norm(&self) -> f64 {
        spectral::grid_norm(&self.amplitudes, self.grid.cell_volume())
    }

    /// |ψ(x)|² on the position grid.
    pub fn position_density(&self) -> ArrayD<f64> {
        self.amplitudes.mapv(|c| c.norm_sqr())
    }
}

/// Amplitudes in a mixed representation: per-axis position or momentum.
#[derive(Debug, Clone)]
pub struct MixedState {
    /// The position axes of the underlying state (needed to invert the
    /// transform; momentum axes are their conjugates).
    pub position_axes: Vec<AxisSpec>,
    pub rep: Vec<AxisRep>,
    pub amplitudes: ArrayD<Complex64>,
    pub time: f64,
}

impl MixedState {
    /// The actual domain of each axis in this representation.
    pub fn domain_axes(&self) -> Vec<AxisSpec> {
        self.position_axes
            .iter()
            .zip(&self.rep)
            .map(|(ax, r)| match r {
                AxisRep::Position => ax.clone(),
                AxisRep::Momentum => ax.conjugate(),
            })
            .collect()
    }

    pub fn cell_volume(&self) -> f64 {
        self.domain_axes().iter().map(|a| a.delta()).product()
    }

    pub fn norm(&self) -> f64 {
        spectral::grid_norm(&self.amplitudes, self.cell_volume())
    }
}

/// Magnitude and phase gradient of a wavefunction. The phase itself is never
/// unwrapped; only `∇S = Im(ψ* ∇ψ)/|ψ|²` is formed, which is well defined
/// away from nodes and avoids branch cuts.
#[derive(Debug, Clone)]
pub struct PolarFields {
    pub magnitude: ArrayD<f64>,
    pub grad_phase: Vec<ArrayD<f64>>,
    pub valid: ArrayD<bool>,
}

/// External potential catalog together with the particle masses.
#[derive(Debug, Clone)]
pub enum PotentialKind {
    Free,
    Harmonic { omega: Vec<f64> },
    Tabulated { values: ArrayD<f64> },
}

#[derive(Debug, Clone)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    pub masses: Vec<f64>,
}

impl PotentialSpec {
    pub fn free(masses: Vec<f64>) -> Self {
        Self {
            kind: PotentialKind::Free,
            masses,
        }
    }

    pub fn harmonic(omega: Vec<f64>, masses: Vec<f64>) -> Self {
        Self {
            kind: PotentialKind::Harmonic { omega },
            masses,
        }
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        if self.masses.len() != grid.ndim() {
            return Err(CoreError::InvalidSpec(format!(
                "potential.masses: expected {} entries",
                grid.ndim()
            )));
        }
        for (i, &m) in self.masses.iter().enumerate() {
            if !(m > 0.0) {
                return Err(CoreError::InvalidSpec(format!(
                    "potential.masses[{i}]: mass must be positive, got {m}"
                )));
            }
        }
        match &self.kind {
            PotentialKind::Free => Ok(()),
            PotentialKind::Harmonic { omega } => {
                if omega.len() != grid.ndim() {
                    return Err(CoreError::InvalidSpec(format!(
                        "potential.omega: expected {} entries",
                        grid.ndim()
                    )));
                }
                Ok(())
            }
            PotentialKind::Tabulated { values } => {
                if values.shape() != grid.shape().as_slice() {
                    return Err(CoreError::InvalidSpec(
                        "potential.values: shape does not match the grid".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Potential samples on the grid; `None` for free motion.
    pub fn values(&self, grid: &GridSpec) -> Option<ArrayD<f64>> {
        match &self.kind {
            PotentialKind::Free => None,
            PotentialKind::Harmonic { omega } => {
                let mut u = grid.zeros();
                fill_by_coords(&mut u, grid, |x| {
                    x.iter()
                        .zip(omega)
                        .zip(&self.masses)
                        .map(|((&xi, &w), &m)| 0.5 * m * w * w * xi * xi)
                        .sum()
                });
                Some(u)
            }
            PotentialKind::Tabulated { values } => Some(values.clone()),
        }
    }
}

fn fill_by_coords<F: Fn(&[f64]) -> f64>(out: &mut ArrayD<f64>, grid: &GridSpec, f: F) {
    let shape = grid.shape();
    match grid.ndim() {
        1 => {
            for j in 0..shape[0] {
                out[[j]] = f(&[grid.axes[0].point(j)]);
            }
        }
        2 => {
            for i in 0..shape[0] {
                let x0 = grid.axes[0].point(i);
                for j in 0..shape[1] {
                    out[[i, j]] = f(&[x0, grid.axes[1].point(j)]);
                }
            }
        }
        _ => unreachable!(),
    }
}

// ---------------------------------------------------------------------------
// gaussian evaluation (t = 0 and the free closed form at t > 0)
// ---------------------------------------------------------------------------

/// Symmetric complex 2x2 matrix helpers for the dispersed-gaussian closed
/// form; the n = 1 case uses the same code with the off-diagonal zero.
#[derive(Clone, Copy)]
struct CSym2 {
    xx: Complex64,
    xy: Complex64,
    yy: Complex64,
}

impl CSym2 {
    fn det(&self) -> Complex64 {
        self.xx * self.yy - self.xy * self.xy
    }
    fn inv(&self) -> CSym2 {
        let d = self.det();
        CSym2 {
            xx: self.yy / d,
            xy: -self.xy / d,
            yy: self.xx / d,
        }
    }
    fn quad(&self, b0: Complex64, b1: Complex64) -> Complex64 {
        self.xx * b0 * b0 + 2.0 * self.xy * b0 * b1 + self.yy * b1 * b1
    }
}

/// Real precision matrix B = Σ⁻¹ of |ψ|² for one term, embedded as 2x2.
fn term_precision(term: &GaussianTerm, ndim: usize) -> CSym2 {
    if ndim == 1 {
        let s2 = term.sigma[0] * term.sigma[0];
        CSym2 {
            xx: Complex64::new(1.0 / s2, 0.0),
            xy: Complex64::new(0.0, 0.0),
            yy: Complex64::new(1.0, 0.0),
        }
    } else {
        let (s1, s2, c) = (term.sigma[0], term.sigma[1], term.correlation);
        let det = s1 * s1 * s2 * s2 * (1.0 - c * c);
        CSym2 {
            xx: Complex64::new(s2 * s2 / det, 0.0),
            xy: Complex64::new(-c * s1 * s2 / det, 0.0),
            yy: Complex64::new(s1 * s1 / det, 0.0),
        }
    }
}

fn term_norm_constant(term: &GaussianTerm, ndim: usize) -> f64 {
    let det_b = if ndim == 1 {
        1.0 / (term.sigma[0] * term.sigma[0])
    } else {
        let (s1, s2, c) = (term.sigma[0], term.sigma[1], term.correlation);
        1.0 / (s1 * s1 * s2 * s2 * (1.0 - c * c))
    };
    (std::f64::consts::TAU).powf(-(ndim as f64) / 4.0) * det_b.powf(0.25)
}

/// Evaluate one term of the free closed form at an arbitrary time.
///
/// For t = 0 this reduces to `N exp(-u'Bu/4 + i k·u)`; for t > 0 the packet
/// disperses through the complex width matrix G = B⁻¹ + i t M / 2 where M is
/// the inverse-mass diagonal.
fn term_amplitude(
    term: &GaussianTerm,
    masses: &[f64],
    ndim: usize,
    t: f64,
    x: &[f64],
) -> Complex64 {
    let n0 = term_norm_constant(term, ndim);
    let u0 = x[0] - term.center[0];
    let u1 = if ndim == 2 { x[1] - term.center[1] } else { 0.0 };
    if t == 0.0 {
        let b = term_precision(term, ndim);
        let quad = b
            .quad(Complex64::new(u0, 0.0), Complex64::new(u1, 0.0))
            .re;
        let phase = term.wavenumber[0] * u0
            + if ndim == 2 {
                term.wavenumber[1] * u1
            } else {
                0.0
            };
        return term.coefficient * n0 * (-0.25 * quad).exp() * Complex64::from_polar(1.0, phase);
    }
    let b = term_precision(term, ndim);
    let b_inv = b.inv();
    let g = CSym2 {
        xx: b_inv.xx + Complex64::new(0.0, 0.5 * t / masses[0]),
        xy: b_inv.xy,
        yy: b_inv.yy
            + if ndim == 2 {
                Complex64::new(0.0, 0.5 * t / masses[1])
            } else {
                Complex64::new(0.0, 0.0)
            },
    };
    let g_inv = g.inv();
    let k0 = Complex64::new(term.wavenumber[0], 0.0);
    let k1 = Complex64::new(
        if ndim == 2 { term.wavenumber[1] } else { 0.0 },
        0.0,
    );
    let b0 = 2.0 * (b_inv.xx * k0 + b_inv.xy * k1) + Complex64::new(0.0, u0);
    let b1 = 2.0 * (b_inv.xy * k0 + b_inv.yy * k1) + Complex64::new(0.0, u1);
    let exponent = 0.25 * g_inv.quad(b0, b1) - b_inv.quad(k0, k1);
    // det(B)^(-1/2) det(G)^(-1/2); the principal branch is continuous in t
    // because every eigenvalue of G keeps a positive real part
    let det_b = b.det().re;
    let prefactor = (det_b.sqrt() * g.det().sqrt()).finv();
    term.coefficient * n0 * prefactor * exponent.exp()
}

fn evaluate_spec(
    spec: &WavefunctionSpec,
    grid: &GridSpec,
    masses: &[f64],
    t: f64,
) -> ArrayD<Complex64> {
    let ndim = grid.ndim();
    let shape = grid.shape();
    let mut arr = ArrayD::<Complex64>::zeros(IxDyn(&shape));
    match ndim {
        1 => {
            for j in 0..shape[0] {
                let x = [grid.axes[0].point(j)];
                let mut acc = Complex64::default();
                for term in spec.terms() {
                    acc += term_amplitude(term, masses, 1, t, &x);
                }
                arr[[j]] = acc;
            }
        }
        2 => {
            for i in 0..shape[0] {
                let x0 = grid.axes[0].point(i);
                for j in 0..shape[1] {
                    let x = [x0, grid.axes[1].point(j)];
                    let mut acc = Complex64::default();
                    for term in spec.terms() {
                        acc += term_amplitude(term, masses, 2, t, &x);
                    }
                    arr[[i, j]] = acc;
                }
            }
        }
        _ => unreachable!(),
    }
    arr
}

// ---------------------------------------------------------------------------
// operations
// ---------------------------------------------------------------------------

/// Build a normalized state at t = 0 from a catalog spec.
pub fn build_state(spec: &WavefunctionSpec, grid: &GridSpec) -> Result<WavefunctionState> {
    grid.validate()?;
    let ndim = grid.ndim();
    spec.validate(ndim)?;
    for (i, term) in spec.terms().iter().enumerate() {
        for a in 0..ndim {
            let reach = 4.0 * term.sigma[a];
            let ax = &grid.axes[a];
            if term.center[a] - reach < ax.lo || term.center[a] + reach > ax.hi {
                return Err(CoreError::GridTooSmall(format!(
                    "term {i}: center {:.3} +/- 4 sigma exits axis {a} range [{:.3}, {:.3}]",
                    term.center[a], ax.lo, ax.hi
                )));
            }
        }
    }
    let masses = vec![1.0; ndim]; // irrelevant at t = 0
    let mut amplitudes = evaluate_spec(spec, grid, &masses, 0.0);
    spectral::normalize(&mut amplitudes, grid.cell_volume());
    Ok(WavefunctionState {
        grid: grid.clone(),
        amplitudes,
        time: 0.0,
    })
}

/// Exact dispersed-gaussian state under free evolution; independent oracle
/// for [`evolve`].
pub fn analytic_free_gaussian(
    spec: &WavefunctionSpec,
    masses: &[f64],
    grid: &GridSpec,
    t: f64,
) -> Result<WavefunctionState> {
    // reuse the construction checks at t = 0
    build_state(spec, grid)?;
    let mut amplitudes = evaluate_spec(spec, grid, masses, t);
    spectral::normalize(&mut amplitudes, grid.cell_volume());
    Ok(WavefunctionState {
        grid: grid.clone(),
        amplitudes,
        time: t,
    })
}

fn max_kinetic_eigenvalue(grid: &GridSpec, masses: &[f64]) -> f64 {
    grid.axes
        .iter()
        .zip(masses)
        .map(|(ax, &m)| {
            let k_max = std::f64::consts::PI / ax.delta();
            k_max * k_max / (2.0 * m)
        })
        .sum()
}

/// Split-step propagation: half potential phase, full kinetic phase applied
/// in the spectral basis, half potential phase. Returns `steps + 1` snapshots
/// including the input. Each snapshot is renormalized; a norm drift beyond
/// 1e-8 or a non-finite amplitude aborts.
pub fn evolve(
    state: &WavefunctionState,
    potential: &PotentialSpec,
    dt: f64,
    steps: usize,
) -> Result<Vec<WavefunctionState>> {
    if !(dt > 0.0) {
        return Err(CoreError::InvalidSpec(format!(
            "evolve.dt: must be positive, got {dt}"
        )));
    }
    evolve_signed(state, potential, dt, steps)
}

/// Signed-step variant used by the pipeline to pre-roll one snapshot before
/// the initial time (the propagator is unitary either way).
pub(crate) fn evolve_signed(
    state: &WavefunctionState,
    potential: &PotentialSpec,
    dt: f64,
    steps: usize,
) -> Result<Vec<WavefunctionState>> {
    potential.validate(&state.grid)?;
    let guard = dt.abs() * max_kinetic_eigenvalue(&state.grid, &potential.masses);
    if guard >= std::f64::consts::PI {
        return Err(CoreError::AliasingGuard { value: guard });
    }
    let grid = &state.grid;
    let u = potential.values(grid);
    let half_phase = u.as_ref().map(|u| u.mapv(|v| Complex64::from_polar(1.0, -0.5 * v * dt)));

    // kinetic phases per axis in DFT layout
    let kin_phase: Vec<Vec<Complex64>> = grid
        .axes
        .iter()
        .zip(&potential.masses)
        .map(|(ax, &m)| {
            ax.wavenumbers()
                .iter()
                .map(|&k| Complex64::from_polar(1.0, -k * k / (2.0 * m) * dt))
                .collect()
        })
        .collect();

    let mut planner = rustfft::FftPlanner::new();
    let plans: Vec<_> = grid
        .axes
        .iter()
        .map(|ax| {
            (
                planner.plan_fft_forward(ax.len),
                planner.plan_fft_inverse(ax.len),
                1.0 / ax.len as f64,
            )
        })
        .collect();

    let mut snapshots = Vec::with_capacity(steps + 1);
    snapshots.push(state.clone());
    let mut amps = state.amplitudes.clone();
    let mut time = state.time;
    for step in 0..steps {
        if let Some(hp) = &half_phase {
            amps.zip_mut_with(hp, |a, p| *a *= p);
        }
        for (axis, (fwd, inv, norm)) in plans.iter().enumerate() {
            let phase = &kin_phase[axis];
            let mut buf = vec![Complex64::default(); grid.axes[axis].len];
            for mut lane in amps.lanes_mut(ndarray::Axis(axis)) {
                for (b, v) in buf.iter_mut().zip(lane.iter()) {
                    *b = *v;
                }
                fwd.process(&mut buf);
                for (b, p) in buf.iter_mut().zip(phase) {
                    *b *= p;
                }
                inv.process(&mut buf);
                for (v, b) in lane.iter_mut().zip(buf.iter()) {
                    *v = *b * *norm;
                }
            }
        }
        if let Some(hp) = &half_phase {
            amps.zip_mut_with(hp, |a, p| *a *= p);
        }
        time += dt;
        if amps.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(CoreError::NonFinite {
                stage: format!("evolve step {}", step + 1),
            });
        }
        let mut snap = amps.clone();
        let norm = spectral::normalize(&mut snap, grid.cell_volume());
        if (norm - 1.0).abs() > 1e-8 {
            return Err(CoreError::NormDrift {
                stage: format!("evolve step {}", step + 1),
                drift: (norm - 1.0).abs(),
            });
        }
        amps = snap.clone();
        snapshots.push(WavefunctionState {
            grid: grid.clone(),
            amplitudes: snap,
            time,
        });
    }
    Ok(snapshots)
}

/// Transform a position state into the requested mixed representation by
/// applying the continuum-normalized transform along each momentum-tagged
/// axis. The all-position tag returns the amplitudes unchanged.
pub fn to_mixed_representation(state: &WavefunctionState, rep: &[AxisRep]) -> MixedState {
    assert_eq!(rep.len(), state.grid.ndim());
    let mut amplitudes = state.amplitudes.clone();
    for (axis, r) in rep.iter().enumerate() {
        if *r == AxisRep::Momentum {
            spectral::forward_axis(&mut amplitudes, axis, &state.grid.axes[axis]);
        }
    }
    MixedState {
        position_axes: state.grid.axes.clone(),
        rep: rep.to_vec(),
        amplitudes,
        time: state.time,
    }
}

/// Pointwise squared modulus of a mixed-representation state.
pub fn density(mixed: &MixedState) -> ArrayD<f64> {
    mixed.amplitudes.mapv(|c| c.norm_sqr())
}

/// Validity mask: density at or above [`DENSITY_FLOOR_REL`] times its peak.
pub fn density_floor_mask(density: &ArrayD<f64>) -> ArrayD<bool> {
    let peak = density.iter().cloned().fold(0.0f64, f64::max);
    let floor = DENSITY_FLOOR_REL * peak;
    density.mapv(|d| d >= floor)
}

/// Polar decomposition: magnitude R = |ψ| and the phase gradient
/// `∇S = Im(ψ* ∇ψ)/|ψ|²` from spectral derivatives, flagged invalid below
/// the density floor.
pub fn polar_decompose(state: &WavefunctionState) -> PolarFields {
    let density = state.position_density();
    let valid = density_floor_mask(&density);
    let magnitude = density.mapv(f64::sqrt);
    let mut grad_phase = Vec::with_capacity(state.grid.ndim());
    for axis in 0..state.grid.ndim() {
        let dpsi = spectral::derivative_complex(&state.amplitudes, axis, &state.grid.axes[axis]);
        let mut g = state.grid.zeros();
        ndarray::Zip::from(&mut g)
            .and(&state.amplitudes)
            .and(&dpsi)
            .and(&density)
            .and(&valid)
            .for_each(|gi, psi, dp, rho, ok| {
                *gi = if *ok { (psi.conj() * dp).im / rho } else { 0.0 };
            });
        grad_phase.push(g);
    }
    PolarFields {
        magnitude,
        grad_phase,
        valid,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid_1d() -> GridSpec {
        GridSpec::line(-12.0, 12.0, 128).unwrap()
    }

    fn grid_small() -> GridSpec {
        GridSpec::line(-8.0, 8.0, 128).unwrap()
    }

    fn gaussian_spec_1d(sigma: f64, k: f64) -> WavefunctionSpec {
        WavefunctionSpec::Gaussian(GaussianTerm::centered(vec![sigma], vec![k], 0.0))
    }

    #[test]
    fn build_state_normalizes() {
        let state = build_state(&gaussian_spec_1d(1.0, 0.0), &grid_1d()).unwrap();
        assert_relative_eq!(state.norm(), 1.0, epsilon = 1e-12);
        let trap = crate::grid::integrate(&state.position_density(), &state.grid.axes);
        assert!((trap - 1.0).abs() < 1e-8);
    }

    #[test]
    fn symmetric_superposition_has_even_density() {
        let mut a = GaussianTerm::centered(vec![1.0], vec![0.0], 0.0);
        a.center = vec![-3.0];
        let mut b = a.clone();
        b.center = vec![3.0];
        let spec = WavefunctionSpec::Superposition(vec![a, b]);
        let state = build_state(&spec, &grid_1d()).unwrap();
        assert_relative_eq!(state.norm(), 1.0, epsilon = 1e-12);
        let rho = state.position_density();
        // x_j = -8 + j dx pairs with x_{128-j} = -x_j (j >= 1)
        for j in 1..128 {
            let asym: f64 = rho[[j]] - rho[[128 - j]];
            assert!(asym.abs() < 1e-12, "asymmetry {asym} at {j}");
        }
    }

    #[test]
    fn off_grid_gaussian_is_rejected() {
        let err = build_state(&WavefunctionSpec::Gaussian(GaussianTerm {
            center: vec![7.5],
            sigma: vec![1.0],
            wavenumber: vec![0.0],
            correlation: 0.0,
            coefficient: Complex64::new(1.0, 0.0),
        }), &grid_small());
        assert!(matches!(err, Err(CoreError::GridTooSmall(_))));
    }

    #[test]
    fn analytic_matches_build_state_at_t_zero() {
        let spec = gaussian_spec_1d(1.0, 2.0);
        let a = build_state(&spec, &grid_1d()).unwrap();
        let b = analytic_free_gaussian(&spec, &[1.0], &grid_1d(), 0.0).unwrap();
        let err = a
            .amplitudes
            .iter()
            .zip(b.amplitudes.iter())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0f64, f64::max);
        assert!(err < 1e-13);
    }

    #[test]
    fn free_gaussian_spreads_with_the_closed_form_width() {
        let grid = grid_1d();
        let (sigma, m, t) = (1.0, 1.0, 2.0);
        let state = analytic_free_gaussian(&gaussian_spec_1d(sigma, 0.0), &[m], &grid, t).unwrap();
        let rho = state.position_density();
        let dx = grid.axes[0].delta();
        let var: f64 = (0..128)
            .map(|j| {
                let x = grid.axes[0].point(j);
                x * x * rho[[j]] * dx
            })
            .sum();
        let expected = sigma * sigma + t * t / (4.0 * m * m * sigma * sigma);
        assert_relative_eq!(var, expected, epsilon = 1e-4);
    }

    #[test]
    fn boosted_gaussian_translates_at_group_velocity() {
        let grid = grid_1d();
        let (k, m, t) = (2.0, 1.0, 1.0);
        let state = analytic_free_gaussian(&gaussian_spec_1d(0.7, k), &[m], &grid, t).unwrap();
        let rho = state.position_density();
        let dx = grid.axes[0].delta();
        let mean: f64 = (0..128)
            .map(|j| {
                let x = grid.axes[0].point(j);
                x * rho[[j]] * dx
            })
            .sum();
        assert_relative_eq!(mean, k * t / m, epsilon = 1e-4);
    }

    #[test]
    fn evolve_zero_steps_returns_input() {
        let state = build_state(&gaussian_spec_1d(1.0, 0.0), &grid_1d()).unwrap();
        let snaps = evolve(&state, &PotentialSpec::free(vec![1.0]), 0.005, 0).unwrap();
        assert_eq!(snaps.len(), 1);
        assert_eq!(snaps[0].amplitudes, state.amplitudes);
    }

    #[test]
    fn evolve_rejects_aliasing_steps() {
        let state = build_state(&gaussian_spec_1d(1.0, 0.0), &grid_1d()).unwrap();
        // kinetic eigenvalue max = (pi/dx)^2/2 ~ 316; dt = 0.1 violates
        let err = evolve(&state, &PotentialSpec::free(vec![1.0]), 0.1, 1);
        assert!(matches!(err, Err(CoreError::AliasingGuard { .. })));
    }

    #[test]
    fn free_evolution_matches_the_analytic_oracle() {
        let grid = grid_1d();
        let spec = gaussian_spec_1d(1.0, 0.0);
        let state = build_state(&spec, &grid).unwrap();
        let pot = PotentialSpec::free(vec![1.0]);
        let snaps = evolve(&state, &pot, 0.005, 200).unwrap();
        let oracle = analytic_free_gaussian(&spec, &[1.0], &grid, 1.0).unwrap();
        let last = snaps.last().unwrap();
        assert_relative_eq!(last.time, 1.0, epsilon = 1e-12);
        let err = last
            .amplitudes
            .iter()
            .zip(oracle.amplitudes.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0f64, f64::max);
        assert!(err < 1e-6, "pointwise amplitude error {err}");
    }

    #[test]
    fn norms_stay_within_1e8_over_evolution() {
        let grid = grid_1d();
        let state = build_state(&gaussian_spec_1d(0.8, 1.0), &grid).unwrap();
        let pot = PotentialSpec::harmonic(vec![1.0], vec![1.0]);
        let snaps = evolve(&state, &pot, 0.005, 100).unwrap();
        for s in &snaps {
            assert!((s.norm() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn harmonic_ground_state_returns_after_one_period() {
        let grid = grid_1d();
        let (m, omega) = (1.0_f64, 1.0_f64);
        let sigma = (2.0 * m * omega).powf(-0.5); // ground-state width
        let state = build_state(&gaussian_spec_1d(sigma, 0.0), &grid).unwrap();
        let pot = PotentialSpec::harmonic(vec![omega], vec![m]);
        let period = std::f64::consts::TAU / omega;
        let steps = 1000;
        let snaps = evolve(&state, &pot, period / steps as f64, steps).unwrap();
        let last = snaps.last().unwrap();
        let overlap: Complex64 = state
            .amplitudes
            .iter()
            .zip(last.amplitudes.iter())
            .map(|(a, b)| a.conj() * b)
            .sum::<Complex64>()
            * grid.cell_volume();
        assert!(overlap.norm() > 1.0 - 1e-6, "overlap {}", overlap.norm());
    }

    #[test]
    fn even_data_stays_even_under_free_evolution() {
        let grid = grid_1d();
        let state = build_state(&gaussian_spec_1d(1.0, 0.0), &grid).unwrap();
        let snaps = evolve(&state, &PotentialSpec::free(vec![1.0]), 0.005, 100).unwrap();
        let rho = snaps.last().unwrap().position_density();
        for j in 1..128 {
            assert!((rho[[j]] - rho[[128 - j]]).abs() < 1e-10);
        }
    }

    #[test]
    fn mixed_representation_round_trips_and_is_unitary() {
        let grid = grid_1d();
        let state = build_state(&gaussian_spec_1d(1.0, 1.5), &grid).unwrap();
        let mixed = to_mixed_representation(&state, &[AxisRep::Momentum]);
        assert!((mixed.norm() - 1.0).abs() < 1e-10);
        let mut back = mixed.amplitudes.clone();
        spectral::inverse_axis(&mut back, 0, &grid.axes[0]);
        let err = back
            .iter()
            .zip(state.amplitudes.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0f64, f64::max);
        assert!(err < 1e-10);
    }

    #[test]
    fn all_position_tag_is_identity() {
        let grid = grid_1d();
        let state = build_state(&gaussian_spec_1d(1.0, 0.3), &grid).unwrap();
        let mixed = to_mixed_representation(&state, &[AxisRep::Position]);
        assert_eq!(mixed.amplitudes, state.amplitudes);
    }

    #[test]
    fn momentum_density_of_gaussian_has_conjugate_width() {
        let grid = grid_1d();
        let sigma = 1.0;
        let state = build_state(&gaussian_spec_1d(sigma, 0.0), &grid).unwrap();
        let mixed = to_mixed_representation(&state, &[AxisRep::Momentum]);
        let rho = density(&mixed);
        let axes = mixed.domain_axes();
        let dp = axes[0].delta();
        let var: f64 = (0..axes[0].len)
            .map(|k| {
                let p = axes[0].point(k);
                p * p * rho[[k]] * dp
            })
            .sum();
        assert_relative_eq!(var.sqrt(), 1.0 / (2.0 * sigma), epsilon = 1e-4);
    }

    #[test]
    fn interference_fringes_have_the_expected_spacing() {
        let grid = GridSpec::line(-16.0, 16.0, 256).unwrap();
        let mut a = GaussianTerm::centered(vec![0.5], vec![0.0], 0.0);
        a.center = vec![-3.0];
        let mut b = a.clone();
        b.center = vec![3.0];
        let spec = WavefunctionSpec::Superposition(vec![a, b]);
        let state = build_state(&spec, &grid).unwrap();
        let mixed = to_mixed_representation(&state, &[AxisRep::Momentum]);
        let rho = density(&mixed);
        let axes = mixed.domain_axes();
        // local maxima with parabolic refinement, measured near the envelope peak
        let top = rho.iter().cloned().fold(0.0f64, f64::max);
        let mut peaks = Vec::new();
        for k in 1..axes[0].len - 1 {
            if rho[[k]] > rho[[k - 1]] && rho[[k]] > rho[[k + 1]] && rho[[k]] > 0.1 * top {
                let denom = rho[[k - 1]] - 2.0 * rho[[k]] + rho[[k + 1]];
                let shift = 0.5 * (rho[[k - 1]] - rho[[k + 1]]) / denom;
                peaks.push(axes[0].point(k) + shift * axes[0].delta());
            }
        }
        assert!(peaks.len() >= 3, "expected several fringes");
        let spacing: f64 =
            (peaks.last().unwrap() - peaks.first().unwrap()) / (peaks.len() - 1) as f64;
        let expected = std::f64::consts::TAU / 6.0; // centre separation 6
        assert!((spacing - expected).abs() / expected < 0.05);
    }

    #[test]
    fn odd_superposition_has_a_node_at_the_origin() {
        let grid = grid_1d();
        let mut a = GaussianTerm::centered(vec![1.0], vec![0.0], 0.0);
        a.center = vec![-2.0];
        let mut b = a.clone();
        b.center = vec![2.0];
        b.coefficient = Complex64::new(-1.0, 0.0);
        let spec = WavefunctionSpec::Superposition(vec![a, b]);
        let state = build_state(&spec, &grid).unwrap();
        let rho = state.position_density();
        // x = 0 is grid point j = 64
        assert!(rho[[64]] < 1e-10);
    }

    #[test]
    fn real_gaussian_has_zero_phase_gradient() {
        let state = build_state(&gaussian_spec_1d(1.0, 0.0), &grid_1d()).unwrap();
        let polar = polar_decompose(&state);
        let max = polar
            .grad_phase[0]
            .iter()
            .zip(polar.valid.iter())
            .filter(|(_, ok)| **ok)
            .map(|(g, _)| g.abs())
            .fold(0.0f64, f64::max);
        // round-off in the spectral derivative is amplified by 1/rho at the
        // far edge of the valid region
        assert!(max < 1e-8, "max |grad S| = {max}");
    }

    #[test]
    fn plane_wave_phase_gradient_is_the_wavenumber() {
        let state = build_state(&gaussian_spec_1d(1.0, 1.3), &grid_1d()).unwrap();
        let polar = polar_decompose(&state);
        let max_err = polar
            .grad_phase[0]
            .iter()
            .zip(polar.valid.iter())
            .filter(|(_, ok)| **ok)
            .map(|(g, _)| (g - 1.3).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err < 1e-6, "max error {max_err}");
    }

    #[test]
    fn spreading_gaussian_phase_gradient_matches_the_closed_form() {
        let grid = grid_1d();
        let (sigma, m, t) = (1.0, 1.0, 1.0);
        let state =
            analytic_free_gaussian(&gaussian_spec_1d(sigma, 0.0), &[m], &grid, t).unwrap();
        let polar = polar_decompose(&state);
        // grad S = x t / (4 m (sigma^4 + t^2/(4 m^2)))
        let denom = 4.0 * m * (sigma.powi(4) + t * t / (4.0 * m * m));
        let mut max_err = 0.0f64;
        for j in 0..128 {
            if polar.valid[[j]] {
                let x = grid.axes[0].point(j);
                max_err = max_err.max((polar.grad_phase[0][[j]] - x * t / denom).abs());
            }
        }
        assert!(max_err < 1e-4, "max error {max_err}");
    }
}
