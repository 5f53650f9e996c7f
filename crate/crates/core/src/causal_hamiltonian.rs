//! Construction of the causal Hamiltonian that generates the phase-space
//! flow, in the ansatz `H_c(x, p, t) = Σ_i (p_i - A_i(x, t))²/2m_i + V(x, t)`.
//!
//! Hamilton's equations on the delta support p = p̂(x, t) give
//!
//! ```text
//! ∂_i Ĥ_c = -dp̂_i/dt + Σ_k (∂_i p̂_k) v_k,    Ĥ_c(x) = H_c(x, p̂(x), t),
//! dp̂_i/dt = ∂_t p̂_i + Σ_k (∂_k p̂_i) v_k,
//! ```
//!
//! so Ĥ_c is found by line-integrating that gradient (path independence is
//! exactly the integrability condition the W field enforces), and then
//!
//! ```text
//! A_i = p̂_i - m_i v_i,    V = Ĥ_c - Σ_i (p̂_i - A_i)²/2m_i ,
//! ```
//!
//! which makes `H_c(x, p̂(x)) = Ĥ_c(x)` hold by construction and
//! `∂H_c/∂p_i = v_i` on the support. Ĥ_c is determined only up to a function
//! of time; the anchor value at the density peak is fixed to zero by
//! convention. The de Broglie-Bohm reference Hamiltonian, with its single
//! quantum potential `Q = -Σ_i (1/2m_i R) ∂_i² R`, is provided alongside.

use ndarray::ArrayD;

use crate::error::{CoreError, Result};
use crate::grid::{interp_linear, GridSpec};
use crate::marginal_chain::MomentumMap;
use crate::spectral;
use crate::velocity_solver::{erode_mask, summarize, VelocityField};
use crate::wavepacket::{density_floor_mask, PotentialSpec, WavefunctionState};

/// The fields of the causal Hamiltonian ansatz at one time.
#[derive(Debug, Clone)]
pub struct CausalHamiltonianFields {
    /// A_i(x) = p̂_i - m_i v_i.
    pub vector_potential: Vec<ArrayD<f64>>,
    /// V(x) = Ĥ_c - Σ (p̂_i - A_i)²/2m_i.
    pub scalar_potential: ArrayD<f64>,
    /// Ĥ_c(x): the Hamiltonian evaluated on the momentum-map support,
    /// anchored to zero at the density peak.
    pub hc_on_support: ArrayD<f64>,
    pub masses: Vec<f64>,
    pub valid: ArrayD<bool>,
    pub time: f64,
}

/// Convergence diagnostics of the Ĥ_c construction.
#[derive(Debug, Clone)]
pub struct HamiltonianDiagnostics {
    /// Max |∂₁G₂ - ∂₂G₁| over valid points (n = 2; zero for n = 1).
    pub curl_max: f64,
    /// RMS of the same curl residual.
    pub curl_rms: f64,
    /// Max |x₁-first - x₂-first| path discrepancy of the line integral.
    pub path_discrepancy: f64,
    /// RMS magnitude of the Ĥ_c gradient over valid points (the scale the
    /// curl residual is judged against).
    pub gradient_scale: f64,
    /// Spread (max - min) of Ĥ_c over valid points (the scale for the path
    /// discrepancy).
    pub hc_range: f64,
}

/// The de Broglie-Bohm reference Hamiltonian fields: classical potential plus
/// the quantum potential built from the wave amplitude.
#[derive(Debug, Clone)]
pub struct DbbHamiltonianFields {
    /// Q(x) = -Σ_i (1/2 m_i R) ∂_i² R.
    pub quantum_potential: ArrayD<f64>,
    pub classical_potential: ArrayD<f64>,
    pub masses: Vec<f64>,
    pub valid: ArrayD<bool>,
}

/// The right-hand side of the Ĥ_c gradient relation from maps at three
/// uniformly spaced times and the velocity field at the middle time.
pub fn hc_gradient(
    prev: &MomentumMap,
    curr: &MomentumMap,
    next: &MomentumMap,
    v: &VelocityField,
) -> Result<(Vec<ArrayD<f64>>, ArrayD<bool>)> {
    let dt_a = curr.time - prev.time;
    let dt_b = next.time - curr.time;
    if (dt_a - dt_b).abs() > 1e-9 * dt_a.abs().max(1.0) || dt_a == 0.0 {
        return Err(CoreError::SnapshotMismatch(
            "hc_gradient needs maps at uniformly spaced times".into(),
        ));
    }
    let dt = dt_a;
    let grid = &curr.grid;
    let n = grid.ndim();

    let mut mask = curr.valid.clone();
    ndarray::Zip::from(&mut mask)
        .and(&prev.valid)
        .and(&next.valid)
        .and(&v.valid)
        .for_each(|m, a, b, c| *m = *m && *a && *b && *c);
    let mask = erode_mask(&mask);

    // spatial derivatives of every map component: dmap[k][i] = ∂_i p̂_k
    let mut dmap = vec![vec![grid.zeros(); n]; n];
    for k in 0..n {
        for (i, slot) in dmap[k].iter_mut().enumerate() {
            *slot = spectral::centered_derivative_edged(
                &curr.components[k],
                i,
                grid.axes[i].delta(),
            );
        }
    }

    let mut gradient = Vec::with_capacity(n);
    for i in 0..n {
        let mut gi = grid.zeros();
        // -∂_t p̂_i
        ndarray::Zip::from(&mut gi)
            .and(&next.components[i])
            .and(&prev.components[i])
            .for_each(|g, a, b| *g = -(a - b) / (2.0 * dt));
        // - Σ_k v_k ∂_k p̂_i + Σ_k (∂_i p̂_k) v_k
        for k in 0..n {
            ndarray::Zip::from(&mut gi)
                .and(&v.components[k])
                .and(&dmap[i][k])
                .and(&dmap[k][i])
                .for_each(|g, vk, d_k_pi, d_i_pk| {
                    *g += vk * (d_i_pk - d_k_pi);
                });
        }
        ndarray::Zip::from(&mut gi).and(&mask).for_each(|g, ok| {
            if !*ok {
                *g = 0.0;
            }
        });
        gradient.push(gi);
    }
    Ok((gradient, mask))
}

/// Curl residual of a gradient-field candidate (n = 2): ∂₁G₂ - ∂₂G₁.
/// Returns (max, rms) over the eroded mask; (0, 0) for n = 1.
pub fn curl_residual(gradient: &[ArrayD<f64>], mask: &ArrayD<bool>, grid: &GridSpec) -> (f64, f64) {
    if gradient.len() != 2 {
        return (0.0, 0.0);
    }
    let d1g2 = spectral::centered_derivative_edged(&gradient[1], 0, grid.axes[0].delta());
    let d2g1 = spectral::centered_derivative_edged(&gradient[0], 1, grid.axes[1].delta());
    let mask = erode_mask(mask);
    let mut field = grid.zeros();
    ndarray::Zip::from(&mut field)
        .and(&d1g2)
        .and(&d2g1)
        .and(&mask)
        .for_each(|f, a, b, ok| {
            *f = if *ok { a - b } else { 0.0 };
        });
    summarize(&field, &mask)
}

/// Cumulative trapezoid along a lane, anchored (to zero) at index `ia`.
fn cumtrapz_from(values: &[f64], ia: usize, delta: f64) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    for i in ia + 1..n {
        out[i] = out[i - 1] + 0.5 * delta * (values[i - 1] + values[i]);
    }
    for i in (0..ia).rev() {
        out[i] = out[i + 1] - 0.5 * delta * (values[i] + values[i + 1]);
    }
    out
}

/// Line-integrate a gradient field from an anchor point, averaging the
/// x₁-first and x₂-first axis-ordered paths (which symmetrizes the residual
/// curl error). Returns the integrated field and the maximum discrepancy
/// between the two path orders, the latter taken over `mask` when given
/// (points whose paths cross masked-out regions are meaningless).
pub fn integrate_hc(
    gradient: &[ArrayD<f64>],
    grid: &GridSpec,
    anchor: &[usize],
    anchor_value: f64,
    mask: Option<&ArrayD<bool>>,
) -> (ArrayD<f64>, f64) {
    match grid.ndim() {
        1 => {
            let vals: Vec<f64> = gradient[0].iter().cloned().collect();
            let cum = cumtrapz_from(&vals, anchor[0], grid.axes[0].delta());
            let mut out = grid.zeros();
            for (i, c) in cum.iter().enumerate() {
                out[[i]] = c + anchor_value;
            }
            (out, 0.0)
        }
        2 => {
            let (n0, n1) = (grid.axes[0].len, grid.axes[1].len);
            let (d0, d1) = (grid.axes[0].delta(), grid.axes[1].delta());
            let (ia, ja) = (anchor[0], anchor[1]);
            let g1 = gradient[0]
                .view()
                .into_dimensionality::<ndarray::Ix2>()
                .unwrap();
            let g2 = gradient[1]
                .view()
                .into_dimensionality::<ndarray::Ix2>()
                .unwrap();

            // path A: along axis 0 at j = ja, then along axis 1
            let col: Vec<f64> = (0..n0).map(|i| g1[[i, ja]]).collect();
            let base_a = cumtrapz_from(&col, ia, d0);
            let mut ha = ndarray::Array2::<f64>::zeros((n0, n1));
            for i in 0..n0 {
                let row: Vec<f64> = (0..n1).map(|j| g2[[i, j]]).collect();
                let cum = cumtrapz_from(&row, ja, d1);
                for j in 0..n1 {
                    ha[[i, j]] = base_a[i] + cum[j];
                }
            }
            // path B: along axis 1 at i = ia, then along axis 0
            let row: Vec<f64> = (0..n1).map(|j| g2[[ia, j]]).collect();
            let base_b = cumtrapz_from(&row, ja, d1);
            let mut hb = ndarray::Array2::<f64>::zeros((n0, n1));
            for j in 0..n1 {
                let col: Vec<f64> = (0..n0).map(|i| g1[[i, j]]).collect();
                let cum = cumtrapz_from(&col, ia, d0);
                for i in 0..n0 {
                    hb[[i, j]] = base_b[j] + cum[i];
                }
            }
            let mut out = grid.zeros();
            let mut disc = 0.0f64;
            for i in 0..n0 {
                for j in 0..n1 {
                    out[[i, j]] = 0.5 * (ha[[i, j]] + hb[[i, j]]) + anchor_value;
                    let counted = mask.map(|m| m[[i, j]]).unwrap_or(true);
                    if counted {
                        disc = disc.max((ha[[i, j]] - hb[[i, j]]).abs());
                    }
                }
            }
            (out, disc)
        }
        _ => unreachable!(),
    }
}

/// A_i = p̂_i - m_i v_i.
pub fn vector_potential(map: &MomentumMap, v: &VelocityField, masses: &[f64]) -> Vec<ArrayD<f64>> {
    map.components
        .iter()
        .zip(&v.components)
        .zip(masses)
        .map(|((p, vi), &m)| {
            let mut a = p.clone();
            ndarray::Zip::from(&mut a).and(vi).for_each(|a, v| *a -= m * v);
            a
        })
        .collect()
}

/// V = Ĥ_c - Σ_i (p̂_i - A_i)²/2m_i.
pub fn scalar_potential(
    hc_hat: &ArrayD<f64>,
    map: &MomentumMap,
    vector_potential: &[ArrayD<f64>],
    masses: &[f64],
) -> ArrayD<f64> {
    let mut v = hc_hat.clone();
    for ((p, a), &m) in map.components.iter().zip(vector_potential).zip(masses) {
        ndarray::Zip::from(&mut v).and(p).and(a).for_each(|v, p, a| {
            let dp = p - a;
            *v -= dp * dp / (2.0 * m);
        });
    }
    v
}

/// Assemble the full causal Hamiltonian at one time from maps at three
/// uniformly spaced times, the velocity field and the position density
/// (which locates the anchor point).
pub fn build_hamiltonian(
    prev: &MomentumMap,
    curr: &MomentumMap,
    next: &MomentumMap,
    v: &VelocityField,
    density: &ArrayD<f64>,
    masses: &[f64],
) -> Result<(CausalHamiltonianFields, HamiltonianDiagnostics)> {
    let grid = &curr.grid;
    let (gradient, mask) = hc_gradient(prev, curr, next, v)?;
    let (curl_max, curl_rms) = curl_residual(&gradient, &mask, grid);

    // anchor at the density peak, value zero
    let mut anchor = vec![0usize; grid.ndim()];
    let mut best = f64::MIN;
    for (lin, d) in density.iter().enumerate() {
        if *d > best {
            best = *d;
            let mut rem = lin;
            for ax in (0..grid.ndim()).rev() {
                anchor[ax] = rem % grid.shape()[ax];
                rem /= grid.shape()[ax];
            }
        }
    }
    let (hc_hat, path_discrepancy) = integrate_hc(&gradient, grid, &anchor, 0.0, Some(&mask));
    let mut grad_sq = 0.0f64;
    let mut count = 0usize;
    let mut hc_min = f64::MAX;
    let mut hc_max = f64::MIN;
    for (lin, ok) in mask.iter().enumerate() {
        if *ok {
            let mut g2 = 0.0;
            for gi in &gradient {
                let v = gi.as_slice().unwrap()[lin];
                g2 += v * v;
            }
            grad_sq += g2;
            count += 1;
            let h = hc_hat.as_slice().unwrap()[lin];
            hc_min = hc_min.min(h);
            hc_max = hc_max.max(h);
        }
    }
    let gradient_scale = if count > 0 {
        (grad_sq / count as f64).sqrt()
    } else {
        0.0
    };
    let hc_range = if count > 0 { hc_max - hc_min } else { 0.0 };
    let a = vector_potential(curr, v, masses);
    let scalar = scalar_potential(&hc_hat, curr, &a, masses);
    Ok((
        CausalHamiltonianFields {
            vector_potential: a,
            scalar_potential: scalar,
            hc_on_support: hc_hat,
            masses: masses.to_vec(),
            valid: mask,
            time: curr.time,
        },
        HamiltonianDiagnostics {
            curl_max,
            curl_rms,
            path_discrepancy,
            gradient_scale,
            hc_range,
        },
    ))
}

/// H_c(x, p) = Σ_i (p_i - A_i(x))²/2m_i + V(x) with multilinear field
/// interpolation; errors if x lies outside the grid.
pub fn evaluate_hamiltonian(
    fields: &CausalHamiltonianFields,
    grid: &GridSpec,
    x: &[f64],
    p: &[f64],
) -> Result<f64> {
    for (ax, &xi) in grid.axes.iter().zip(x) {
        if !ax.contains(xi) {
            return Err(CoreError::OutOfGrid { point: x.to_vec() });
        }
    }
    let mut h = interp_linear(&fields.scalar_potential, &grid.axes, x);
    for ((a, &pi), &m) in fields.vector_potential.iter().zip(p).zip(&fields.masses) {
        let ai = interp_linear(a, &grid.axes, x);
        h += (pi - ai) * (pi - ai) / (2.0 * m);
    }
    Ok(h)
}

/// The dBB reference: quantum potential from spectral second derivatives of
/// R = |ψ|, alongside the classical potential samples.
pub fn dbb_hamiltonian(state: &WavefunctionState, potential: &PotentialSpec) -> DbbHamiltonianFields {
    let grid = &state.grid;
    let density = state.position_density();
    let valid = density_floor_mask(&density);
    let r = density.mapv(f64::sqrt);
    let mut q = grid.zeros();
    for axis in 0..grid.ndim() {
        let d2r = spectral::second_derivative_real(&r, axis, &grid.axes[axis]);
        let m = potential.masses[axis];
        ndarray::Zip::from(&mut q)
            .and(&d2r)
            .and(&r)
            .and(&valid)
            .for_each(|q, d2, r, ok| {
                if *ok {
                    *q -= d2 / (2.0 * m * r);
                }
            });
    }
    let classical = potential.values(grid).unwrap_or_else(|| grid.zeros());
    DbbHamiltonianFields {
        quantum_potential: q,
        classical_potential: classical,
        masses: potential.masses.clone(),
        valid,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::marginal_chain::{
        build_chain, momentum_map, ChainVariant, RepresentationSet, SignVector,
    };
    use crate::velocity_solver::{dbb_velocity, probability_current, Provenance};
    use crate::wavepacket::{
        analytic_free_gaussian, build_state, GaussianTerm, PotentialKind, WavefunctionSpec,
    };
    use ndarray::{ArrayD, IxDyn};

    fn fine_grid_1d() -> GridSpec {
        GridSpec::line(-96.0, 96.0, 4096).unwrap()
    }

    fn gaussian_1d(sigma: f64) -> WavefunctionSpec {
        WavefunctionSpec::Gaussian(GaussianTerm::centered(vec![sigma], vec![0.0], 0.0))
    }

    fn pipeline_1d(
        grid: &GridSpec,
        sigma: f64,
        t: f64,
        dt: f64,
    ) -> (
        MomentumMap,
        MomentumMap,
        MomentumMap,
        VelocityField,
        ArrayD<f64>,
    ) {
        let chain = build_chain(1, ChainVariant::Forward).unwrap();
        let mut maps = Vec::new();
        for time in [t - dt, t, t + dt] {
            let state = analytic_free_gaussian(&gaussian_1d(sigma), &[1.0], grid, time).unwrap();
            let reps = RepresentationSet::compute(&state, &chain);
            maps.push(momentum_map(&reps, &chain, &SignVector::plus(1)).unwrap());
        }
        let state = analytic_free_gaussian(&gaussian_1d(sigma), &[1.0], grid, t).unwrap();
        let rho = state.position_density();
        let j = probability_current(&state, &[1.0]);
        let v = dbb_velocity(&j, &rho);
        let next = maps.pop().unwrap();
        let curr = maps.pop().unwrap();
        let prev = maps.pop().unwrap();
        (prev, curr, next, v, rho)
    }

    #[test]
    fn conservative_synthetic_field_is_recovered() {
        // G = grad((x² + y²)/2) = (x, y)
        let grid = GridSpec::square(-4.0, 4.0, 64).unwrap();
        let mut g1 = grid.zeros();
        let mut g2 = grid.zeros();
        for i in 0..64 {
            for j in 0..64 {
                g1[[i, j]] = grid.axes[0].point(i);
                g2[[i, j]] = grid.axes[1].point(j);
            }
        }
        let (h, disc) = integrate_hc(&[g1, g2], &grid, &[32, 32], 0.0, None);
        assert!(disc < 1e-12, "path discrepancy {disc}");
        for i in 0..64 {
            for j in 0..64 {
                let x = grid.axes[0].point(i);
                let y = grid.axes[1].point(j);
                // anchor sits at (0, 0), so the constant is zero
                assert!(
                    (h[[i, j]] - 0.5 * (x * x + y * y)).abs() < 1e-6,
                    "quadratic recovery at ({x}, {y})"
                );
            }
        }
    }

    #[test]
    fn zero_gradient_integrates_to_a_constant() {
        let grid = GridSpec::square(-4.0, 4.0, 64).unwrap();
        let (h, disc) = integrate_hc(&[grid.zeros(), grid.zeros()], &grid, &[10, 50], 3.5, None);
        assert!(disc == 0.0);
        for v in h.iter() {
            assert_eq!(*v, 3.5);
        }
    }

    #[test]
    fn stationary_maps_have_zero_hc_gradient() {
        // p̂ independent of time and v = 0: every term vanishes
        let grid = GridSpec::square(-4.0, 4.0, 64).unwrap();
        let mut comp = vec![grid.zeros(), grid.zeros()];
        for i in 0..64 {
            for j in 0..64 {
                let x = grid.axes[0].point(i);
                let y = grid.axes[1].point(j);
                comp[0][[i, j]] = 0.3 * x + 0.1 * y;
                comp[1][[i, j]] = -0.2 * x + 0.4 * y;
            }
        }
        let mk = |t: f64| MomentumMap {
            grid: grid.clone(),
            components: comp.clone(),
            valid: ArrayD::from_elem(IxDyn(&grid.shape()), true),
            signs: SignVector::plus(2),
            variant: ChainVariant::Forward,
            time: t,
        };
        let v = VelocityField {
            components: vec![grid.zeros(), grid.zeros()],
            valid: ArrayD::from_elem(IxDyn(&grid.shape()), true),
            provenance: Provenance::DeBroglieBohm,
            time: 0.1,
        };
        let (g, mask) = hc_gradient(&mk(0.0), &mk(0.1), &mk(0.2), &v).unwrap();
        let (m0, _) = summarize(&g[0], &mask);
        let (m1, _) = summarize(&g[1], &mask);
        assert!(m0 < 1e-12 && m1 < 1e-12, "stationary gradient {m0} {m1}");
    }

    #[test]
    fn one_dimensional_hc_gradient_matches_the_gaussian_closed_form() {
        // for the free spreading gaussian the map is p̂ = ε x/(2 σ0 σ(t)) and
        // momentum is conserved along trajectories, so
        // ∂_x Ĥ_c = ε x σ'(t)/(2 σ0 σ(t)²)
        let grid = fine_grid_1d();
        let (sigma0, t, dt) = (1.0, 0.5, 0.01);
        let (prev, curr, next, v, _rho) = pipeline_1d(&grid, sigma0, t, dt);
        let (g, mask) = hc_gradient(&prev, &curr, &next, &v).unwrap();
        let var = sigma0 * sigma0 + t * t / (4.0 * sigma0 * sigma0);
        let sig = var.sqrt();
        let sig_dot = t / (2.0 * sigma0 * sigma0) / (2.0 * sig);
        let mut max_err = 0.0f64;
        for i in 0..grid.axes[0].len {
            let x = grid.axes[0].point(i);
            if mask[[i]] && x.abs() < 4.0 {
                let expected = x * sig_dot / (2.0 * sigma0 * sig * sig);
                max_err = max_err.max((g[0][[i]] - expected).abs());
            }
        }
        assert!(max_err < 1e-3, "gradient error {max_err}");
    }

    #[test]
    fn vector_potential_cancels_in_dbb_mode() {
        // p̂ = ∇S and v = ∇S/m give A = 0 identically
        let grid = GridSpec::line(-12.0, 12.0, 128).unwrap();
        let state = analytic_free_gaussian(&gaussian_1d(1.0), &[1.5], &grid, 0.7).unwrap();
        let polar = crate::wavepacket::polar_decompose(&state);
        let map = MomentumMap {
            grid: grid.clone(),
            components: polar.grad_phase.clone(),
            valid: polar.valid.clone(),
            signs: SignVector::plus(1),
            variant: ChainVariant::Forward,
            time: state.time,
        };
        let rho = state.position_density();
        let j = probability_current(&state, &[1.5]);
        let v = dbb_velocity(&j, &rho);
        let a = vector_potential(&map, &v, &[1.5]);
        let mut max = 0.0f64;
        for i in 0..128 {
            if v.valid[[i]] {
                max = max.max(a[0][[i]].abs());
            }
        }
        assert!(max < 1e-10, "dBB vector potential {max}");
    }

    #[test]
    fn vector_potential_equals_the_map_at_rest() {
        // minimum-uncertainty gaussian at t = 0: v_B = 0 and p̂(x) = x
        let grid = fine_grid_1d();
        let sigma = std::f64::consts::FRAC_1_SQRT_2;
        let state = build_state(&gaussian_1d(sigma), &grid).unwrap();
        let chain = build_chain(1, ChainVariant::Forward).unwrap();
        let reps = RepresentationSet::compute(&state, &chain);
        let map = momentum_map(&reps, &chain, &SignVector::plus(1)).unwrap();
        let rho = state.position_density();
        let j = probability_current(&state, &[1.0]);
        let v = dbb_velocity(&j, &rho);
        let a = vector_potential(&map, &v, &[1.0]);
        let mut max_err = 0.0f64;
        for i in 0..grid.axes[0].len {
            let x = grid.axes[0].point(i);
            if v.valid[[i]] && x.abs() < 4.0 {
                max_err = max_err.max((a[0][[i]] - x).abs());
            }
        }
        assert!(max_err < 1e-3, "A(x) = x error {max_err}");
    }

    #[test]
    fn vector_potential_is_boost_invariant() {
        let grid = GridSpec::line(-4.0, 4.0, 64).unwrap();
        let mk_map = |shift: f64| {
            let mut c = grid.zeros();
            for i in 0..64 {
                c[[i]] = 0.5 * grid.axes[0].point(i) + shift;
            }
            MomentumMap {
                grid: grid.clone(),
                components: vec![c],
                valid: ArrayD::from_elem(IxDyn(&[64]), true),
                signs: SignVector::plus(1),
                variant: ChainVariant::Forward,
                time: 0.0,
            }
        };
        let mk_v = |shift: f64| VelocityField {
            components: vec![ArrayD::from_elem(IxDyn(&[64]), shift)],
            valid: ArrayD::from_elem(IxDyn(&[64]), true),
            provenance: Provenance::DeBroglieBohm,
            time: 0.0,
        };
        let m = 2.0;
        let a0 = vector_potential(&mk_map(0.0), &mk_v(0.0), &[m]);
        let k = 1.3;
        let a1 = vector_potential(&mk_map(k), &mk_v(k / m), &[m]);
        for i in 0..64 {
            assert!((a0[0][[i]] - a1[0][[i]]).abs() < 1e-12);
        }
    }

    #[test]
    fn hamiltonian_on_the_support_reproduces_hc_hat() {
        let grid = fine_grid_1d();
        let (prev, curr, next, v, rho) = pipeline_1d(&grid, 1.0, 0.5, 0.01);
        let (fields, _diag) = build_hamiltonian(&prev, &curr, &next, &v, &rho, &[1.0]).unwrap();
        // H(x, p̂(x)) = Ĥ_c(x) by construction; evaluate at grid nodes where
        // the interpolation is exact
        let mut max_err = 0.0f64;
        for i in 0..grid.axes[0].len {
            let x = grid.axes[0].point(i);
            if fields.valid[[i]] && x.abs() < 4.0 {
                let p = curr.components[0][[i]];
                let h = evaluate_hamiltonian(&fields, &grid, &[x], &[p]).unwrap();
                max_err = max_err.max((h - fields.hc_on_support[[i]]).abs());
            }
        }
        assert!(max_err < 1e-6, "support identity error {max_err}");
        // p = A gives V exactly
        let x = grid.axes[0].point(2048);
        let a = fields.vector_potential[0][[2048]];
        let h = evaluate_hamiltonian(&fields, &grid, &[x], &[a]).unwrap();
        assert!((h - fields.scalar_potential[[2048]]).abs() < 1e-12);
        // out-of-grid points error
        assert!(evaluate_hamiltonian(&fields, &grid, &[200.0], &[0.0]).is_err());
    }

    #[test]
    fn momentum_derivative_of_hamiltonian_is_the_velocity() {
        let grid = fine_grid_1d();
        let (prev, curr, next, v, rho) = pipeline_1d(&grid, 1.0, 0.5, 0.01);
        let (fields, _) = build_hamiltonian(&prev, &curr, &next, &v, &rho, &[1.0]).unwrap();
        let dp = 1e-4;
        let mut max_err = 0.0f64;
        for i in (0..grid.axes[0].len).step_by(16) {
            let x = grid.axes[0].point(i);
            if fields.valid[[i]] && x.abs() < 4.0 {
                let p = curr.components[0][[i]];
                let hp = evaluate_hamiltonian(&fields, &grid, &[x], &[p + dp]).unwrap();
                let hm = evaluate_hamiltonian(&fields, &grid, &[x], &[p - dp]).unwrap();
                max_err = max_err.max(((hp - hm) / (2.0 * dp) - v.components[0][[i]]).abs());
            }
        }
        assert!(max_err < 1e-3, "Hamilton velocity error {max_err}");
    }

    #[test]
    fn position_derivative_of_hamiltonian_balances_momentum_transport() {
        // free spreading gaussian: momentum is conserved along trajectories,
        // so -∂H_c/∂x evaluated on the support must be small
        let grid = fine_grid_1d();
        let (prev, curr, next, v, rho) = pipeline_1d(&grid, 1.0, 0.5, 0.01);
        let (fields, _) = build_hamiltonian(&prev, &curr, &next, &v, &rho, &[1.0]).unwrap();
        // -dH/dx|_p̂ = (p̂ - A) A'/m - V'
        let d = grid.axes[0].delta();
        let a_prime = spectral::centered_derivative_edged(&fields.vector_potential[0], 0, d);
        let v_prime = spectral::centered_derivative_edged(&fields.scalar_potential, 0, d);
        let mut max_err = 0.0f64;
        for i in 0..grid.axes[0].len {
            let x = grid.axes[0].point(i);
            if fields.valid[[i]] && x.abs() < 4.0 {
                let kin = curr.components[0][[i]] - fields.vector_potential[0][[i]];
                let dpdt = kin * a_prime[[i]] - v_prime[[i]];
                max_err = max_err.max(dpdt.abs());
            }
        }
        assert!(max_err < 1e-2, "momentum transport error {max_err}");
    }

    #[test]
    fn harmonic_ground_state_energy_is_flat() {
        // U + Q = ω/2 everywhere the density is valid
        let grid = GridSpec::line(-12.0, 12.0, 256).unwrap();
        let (m, omega) = (1.0_f64, 1.0_f64);
        let sigma = 1.0 / (2.0 * m * omega).sqrt();
        let state = build_state(&gaussian_1d(sigma), &grid).unwrap();
        let pot = PotentialSpec {
            kind: PotentialKind::Harmonic { omega: vec![omega] },
            masses: vec![m],
        };
        let fields = dbb_hamiltonian(&state, &pot);
        let mut max_err = 0.0f64;
        for i in 0..256 {
            if fields.valid[[i]] {
                let total = fields.quantum_potential[[i]] + fields.classical_potential[[i]];
                max_err = max_err.max((total - omega / 2.0).abs());
            }
        }
        assert!(max_err < 1e-3, "ground energy error {max_err}");
    }

    #[test]
    fn free_gaussian_quantum_potential_matches_the_symbolic_form() {
        // Q = (1/2m)(1/(2σ²) - x²/(4σ⁴)) for a real gaussian
        let grid = GridSpec::line(-12.0, 12.0, 256).unwrap();
        let (m, sigma) = (1.0, 1.0);
        let state = build_state(&gaussian_1d(sigma), &grid).unwrap();
        let pot = PotentialSpec::free(vec![m]);
        let fields = dbb_hamiltonian(&state, &pot);
        let mut max_err = 0.0f64;
        for i in 0..256 {
            let x = grid.axes[0].point(i);
            if fields.valid[[i]] && x.abs() < 6.0 {
                let expected =
                    (1.0 / (2.0 * sigma * sigma) - x * x / (4.0 * sigma.powi(4))) / (2.0 * m);
                max_err = max_err.max((fields.quantum_potential[[i]] - expected).abs());
            }
        }
        assert!(max_err < 1e-3, "quantum potential error {max_err}");
    }

    #[test]
    fn quantum_potential_ignores_plane_wave_phases() {
        let grid = GridSpec::line(-12.0, 12.0, 128).unwrap();
        let plain = build_state(&gaussian_1d(1.0), &grid).unwrap();
        let boosted = build_state(
            &WavefunctionSpec::Gaussian(GaussianTerm::centered(vec![1.0], vec![2.0], 0.0)),
            &grid,
        )
        .unwrap();
        let pot = PotentialSpec::free(vec![1.0]);
        let qa = dbb_hamiltonian(&plain, &pot);
        let qb = dbb_hamiltonian(&boosted, &pot);
        let mut max_diff = 0.0f64;
        for i in 0..128 {
            if qa.valid[[i]] && qb.valid[[i]] {
                max_diff =
                    max_diff.max((qa.quantum_potential[[i]] - qb.quantum_potential[[i]]).abs());
            }
        }
        assert!(max_diff < 1e-8, "phase sensitivity {max_diff}");
    }
}
