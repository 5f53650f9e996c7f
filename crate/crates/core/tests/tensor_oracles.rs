//! Independent finite-difference oracles for the transport source tensor and
//! the integrability residual, built from maps at five consecutive times.

use causalqm::grid::GridSpec;
use causalqm::marginal_chain::{
    build_chain, momentum_map, ChainVariant, MomentumMap, RepresentationSet, SignVector,
};
use causalqm::spectral;
use causalqm::velocity_solver::{
    dbb_velocity, f_tensor, integrability_residual, probability_current, source_tensor,
    summarize, StructureTensors,
};
use causalqm::wavepacket::{
    analytic_free_gaussian, polar_decompose, GaussianTerm, WavefunctionSpec, WavefunctionState,
};

fn correlated_state(grid: &GridSpec, t: f64) -> WavefunctionState {
    let spec =
        WavefunctionSpec::Gaussian(GaussianTerm::centered(vec![1.0, 1.0], vec![0.0, 0.0], 0.5));
    analytic_free_gaussian(&spec, &[1.0, 1.0], grid, t).unwrap()
}

fn map_at(grid: &GridSpec, t: f64) -> (MomentumMap, WavefunctionState) {
    let state = correlated_state(grid, t);
    let chain = build_chain(2, ChainVariant::Forward).unwrap();
    let reps = RepresentationSet::compute(&state, &chain);
    (
        momentum_map(&reps, &chain, &SignVector::plus(2)).unwrap(),
        state,
    )
}

#[test]
fn source_tensor_matches_a_five_point_oracle() {
    let grid = GridSpec::square(-12.0, 12.0, 128).unwrap();
    let (t0, dt) = (0.5, 0.02);
    let mut tensors: Vec<StructureTensors> = Vec::new();
    let mut states = Vec::new();
    for k in -2i64..=2 {
        let t = t0 + k as f64 * dt;
        let (map, state) = map_at(&grid, t);
        let rho = state.position_density();
        tensors.push(f_tensor(&map, &rho).unwrap());
        states.push(state);
    }
    let center = &states[2];
    let rho = center.position_density();
    let j = probability_current(center, &[1.0, 1.0]);
    let v_b = dbb_velocity(&j, &rho);
    let with_source = source_tensor(&tensors[1], &tensors[2], &tensors[3], &v_b, &grid).unwrap();

    // fourth-order five-point time derivative of f plus the same advective
    // flux terms, assembled independently
    let d1 = spectral::centered_derivative_edged(
        &{
            let mut fx = grid.zeros();
            ndarray::Zip::from(&mut fx)
                .and(&tensors[2].curl)
                .and(&v_b.components[0])
                .for_each(|o, f, v| *o = f * v);
            fx
        },
        0,
        grid.axes[0].delta(),
    );
    let d2 = spectral::centered_derivative_edged(
        &{
            let mut fy = grid.zeros();
            ndarray::Zip::from(&mut fy)
                .and(&tensors[2].curl)
                .and(&v_b.components[1])
                .for_each(|o, f, v| *o = f * v);
            fy
        },
        1,
        grid.axes[1].delta(),
    );
    let mut max_rel = 0.0f64;
    let mut f_scale = 0.0f64;
    let source = with_source.source.as_ref().unwrap();
    // toward the tail the map's own discretization error varies quickly in
    // time and swamps the stencil comparison; the oracle is meaningful on
    // the probability-carrying bulk
    let peak = rho.iter().cloned().fold(0.0f64, f64::max);
    for (lin, ok) in with_source.valid.iter().enumerate() {
        if !*ok || rho.as_slice().unwrap()[lin] < 1e-2 * peak {
            continue;
        }
        let fm2 = tensors[0].curl.as_slice().unwrap()[lin];
        let fm1 = tensors[1].curl.as_slice().unwrap()[lin];
        let fp1 = tensors[3].curl.as_slice().unwrap()[lin];
        let fp2 = tensors[4].curl.as_slice().unwrap()[lin];
        let dfdt = (fm2 - 8.0 * fm1 + 8.0 * fp1 - fp2) / (12.0 * dt);
        let oracle =
            dfdt + d1.as_slice().unwrap()[lin] + d2.as_slice().unwrap()[lin];
        f_scale = f_scale.max(oracle.abs());
        max_rel = max_rel.max((source.as_slice().unwrap()[lin] - oracle).abs());
    }
    assert!(f_scale > 0.05, "oracle scale {f_scale}");
    assert!(
        max_rel / f_scale < 0.05,
        "source vs five-point oracle: {:.3e} relative",
        max_rel / f_scale
    );
}

#[test]
fn gradient_maps_have_zero_source() {
    // a dBB-type map p̂ = grad S has f = 0 at every time, so every term of
    // the transport source vanishes
    let grid = GridSpec::square(-12.0, 12.0, 128).unwrap();
    let mk = |t: f64| {
        let state = correlated_state(&grid, t);
        let polar = polar_decompose(&state);
        let map = MomentumMap {
            grid: grid.clone(),
            components: polar.grad_phase.clone(),
            valid: polar.valid.clone(),
            signs: SignVector::plus(2),
            variant: ChainVariant::Forward,
            time: t,
        };
        let rho = state.position_density();
        (f_tensor(&map, &rho).unwrap(), state)
    };
    let (tm, _) = mk(0.48);
    let (tc, state) = mk(0.5);
    let (tp, _) = mk(0.52);
    let rho = state.position_density();
    let j = probability_current(&state, &[1.0, 1.0]);
    let v_b = dbb_velocity(&j, &rho);
    let with_source = source_tensor(&tm, &tc, &tp, &v_b, &grid).unwrap();
    let (max_abs, _) = summarize(with_source.source.as_ref().unwrap(), &with_source.valid);
    assert!(max_abs < 1e-5, "dBB-map source {max_abs}");
}

#[test]
fn dbb_velocity_integrability_residual_is_the_source() {
    // with v = v_B the integrability residual is the definition of F
    let grid = GridSpec::square(-12.0, 12.0, 128).unwrap();
    let (t0, dt) = (0.5, 0.02);
    let mut tensors = Vec::new();
    let mut states = Vec::new();
    for k in -1i64..=1 {
        let t = t0 + k as f64 * dt;
        let (map, state) = map_at(&grid, t);
        let rho = state.position_density();
        tensors.push(f_tensor(&map, &rho).unwrap());
        states.push(state);
    }
    let rho = states[1].position_density();
    let j = probability_current(&states[1], &[1.0, 1.0]);
    let v_b = dbb_velocity(&j, &rho);
    let with_source = source_tensor(&tensors[0], &tensors[1], &tensors[2], &v_b, &grid).unwrap();
    let res = integrability_residual(&v_b, &tensors[0], &tensors[1], &tensors[2], &grid).unwrap();
    let source = with_source.source.as_ref().unwrap();
    let mut max_diff = 0.0f64;
    for (lin, ok) in res.mask.iter().enumerate() {
        if *ok && with_source.valid.as_slice().unwrap()[lin] {
            max_diff = max_diff.max(
                (res.field.as_slice().unwrap()[lin] - source.as_slice().unwrap()[lin]).abs(),
            );
        }
    }
    assert!(max_diff < 1e-10, "residual vs source {max_diff}");
}
