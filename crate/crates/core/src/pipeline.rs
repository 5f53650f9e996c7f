//! End-to-end orchestration: evolve a state, build the momentum map at every
//! field time, derive structure tensors and the W field, assemble velocities
//! and the causal Hamiltonian, and collect the residual summaries that the
//! command-line front end and the acceptance battery report.

use ndarray::ArrayD;

use crate::causal_hamiltonian::{
    build_hamiltonian, CausalHamiltonianFields, HamiltonianDiagnostics,
};
use crate::error::{CoreError, Result};
use crate::grid::GridSpec;
use crate::marginal_chain::{
    build_chain, momentum_map, CCSChain, ChainVariant, MomentumMap, RepresentationSet, SignVector,
};
use crate::trajectories::VelocitySeries;
use crate::velocity_solver::{
    assemble_velocity, continuity_residual, dbb_velocity, f_tensor, integrability_residual,
    probability_current, solve_w, source_tensor, AntisymmetricField, CurrentField, GaugeSpec,
    Provenance, StructureTensors, VelocityField, WSolveMethod,
};
use crate::wavepacket::{evolve_signed, PotentialSpec, WavefunctionState};

/// Pipeline controls: which chain, sign branch, gauge and solver to use, and
/// the time discretization (field snapshots every `stride` evolution steps).
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub variant: ChainVariant,
    pub signs: SignVector,
    pub gauge: GaugeSpec,
    pub method: WSolveMethod,
    /// Split-step substep; must respect the aliasing guard.
    pub dt_evolve: f64,
    /// Evolution steps per field snapshot.
    pub stride: usize,
    /// Field snapshots after the initial time (the pipeline adds one margin
    /// snapshot on each side for centred time derivatives).
    pub n_snapshots: usize,
    /// Build the causal Hamiltonian fields per snapshot.
    pub hamiltonian: bool,
}

impl PipelineConfig {
    pub fn field_dt(&self) -> f64 {
        self.dt_evolve * self.stride as f64
    }
}

/// Everything the pipeline derives at one field time.
#[derive(Debug)]
pub struct FieldStack {
    pub time: f64,
    pub state: WavefunctionState,
    pub density: ArrayD<f64>,
    pub current: CurrentField,
    pub map: MomentumMap,
    pub tensors: Option<StructureTensors>,
    pub w: Option<AntisymmetricField>,
    pub v_b: VelocityField,
    pub v: VelocityField,
    /// (max, rms) of the continuity residual for v_B and for the assembled v.
    pub continuity_vb: (f64, f64),
    pub continuity_assembled: (f64, f64),
    /// (max, rms) of the integrability residual with v_B / assembled v.
    pub integrability_vb: Option<(f64, f64)>,
    pub integrability_assembled: Option<(f64, f64)>,
    pub hamiltonian: Option<(CausalHamiltonianFields, HamiltonianDiagnostics)>,
}

/// The pipeline result: stacks at times t0, t0 + dt, ..., t0 + n dt.
#[derive(Debug)]
pub struct PipelineOutput {
    pub grid: GridSpec,
    pub chain: CCSChain,
    pub stacks: Vec<FieldStack>,
}

impl PipelineOutput {
    pub fn times(&self) -> Vec<f64> {
        self.stacks.iter().map(|s| s.time).collect()
    }

    pub fn velocity_series(&self, flow: Provenance) -> Result<VelocitySeries> {
        let fields = self
            .stacks
            .iter()
            .map(|s| match flow {
                Provenance::Assembled => s.v.clone(),
                Provenance::DeBroglieBohm => s.v_b.clone(),
            })
            .collect();
        VelocitySeries::new(self.grid.clone(), self.times(), fields)
    }

    pub fn maps(&self) -> Vec<MomentumMap> {
        self.stacks.iter().map(|s| s.map.clone()).collect()
    }
}

struct Snapshot {
    state: WavefunctionState,
    density: ArrayD<f64>,
    map: MomentumMap,
    v_b: VelocityField,
    current: CurrentField,
    tensors: Option<StructureTensors>,
}

/// Run the full field pipeline over `n_snapshots + 1` field times starting at
/// the state's own time. Centred time derivatives use one margin snapshot on
/// each side (the pre-roll is a single signed split-step run; the propagator
/// is unitary in both directions).
pub fn run_fields(
    state0: &WavefunctionState,
    potential: &PotentialSpec,
    config: &PipelineConfig,
) -> Result<PipelineOutput> {
    let grid = state0.grid.clone();
    let n = grid.ndim();
    if config.signs.0.len() != n {
        return Err(CoreError::InvalidSpec(format!(
            "signs: expected {n} entries, got {}",
            config.signs.0.len()
        )));
    }
    let chain = build_chain(n, config.variant)?;
    let masses = &potential.masses;

    // states at every field time from t0 - dt to t0 + (n_snapshots + 1) dt
    let pre = evolve_signed(state0, potential, -config.dt_evolve, config.stride)?;
    let fwd = evolve_signed(
        state0,
        potential,
        config.dt_evolve,
        config.stride * (config.n_snapshots + 1),
    )?;
    let mut states: Vec<WavefunctionState> = vec![pre.last().unwrap().clone()];
    for k in 0..=config.n_snapshots + 1 {
        states.push(fwd[k * config.stride].clone());
    }

    // per-time primitives
    let mut snaps: Vec<Snapshot> = Vec::with_capacity(states.len());
    for state in states {
        let reps = RepresentationSet::compute(&state, &chain);
        let map = momentum_map(&reps, &chain, &config.signs)?;
        let density = state.position_density();
        let current = probability_current(&state, masses);
        let v_b = dbb_velocity(&current, &density);
        let tensors = if n == 2 {
            Some(f_tensor(&map, &density)?)
        } else {
            None
        };
        snaps.push(Snapshot {
            state,
            density,
            map,
            v_b,
            current,
            tensors,
        });
    }

    // interior assembly
    let mut stacks = Vec::with_capacity(config.n_snapshots + 1);
    for k in 1..snaps.len() - 1 {
        let (before, rest) = snaps.split_at(k);
        let (mid, after) = rest.split_at(1);
        let prev = &before[k - 1];
        let curr = &mid[0];
        let next = &after[0];

        let (tensors, w) = if n == 2 {
            let with_source = source_tensor(
                prev.tensors.as_ref().unwrap(),
                curr.tensors.as_ref().unwrap(),
                next.tensors.as_ref().unwrap(),
                &curr.v_b,
                &grid,
            )?;
            // degenerate-source suppression: a transport source at numerical
            // noise scale (factorizable or dBB-type maps) would produce a
            // pure-noise W whose divergence is amplified by 1/density; the
            // exact statement of degeneracy is W = 0
            let src_max = with_source
                .source
                .as_ref()
                .unwrap()
                .iter()
                .zip(with_source.valid.iter())
                .filter(|(_, ok)| **ok)
                .map(|(v, _)| v.abs())
                .fold(0.0f64, f64::max);
            let noise_floor =
                1e-4 * with_source.derivative_scale / config.field_dt().max(1e-9);
            let w = if src_max >= noise_floor {
                Some(solve_w(
                    &with_source,
                    &curr.density,
                    &config.gauge,
                    config.method,
                    &grid,
                )?)
            } else {
                None
            };
            (Some(with_source), w)
        } else {
            (None, None)
        };

        let v = assemble_velocity(&curr.v_b, w.as_ref(), &curr.density, &grid);
        let cont_b = continuity_residual(&curr.v_b, &curr.density, &curr.current, &grid);
        let cont_a = continuity_residual(&v, &curr.density, &curr.current, &grid);

        let (int_b, int_a) = if n == 2 {
            let rb = integrability_residual(
                &curr.v_b,
                prev.tensors.as_ref().unwrap(),
                tensors.as_ref().unwrap(),
                next.tensors.as_ref().unwrap(),
                &grid,
            )?;
            let ra = integrability_residual(
                &v,
                prev.tensors.as_ref().unwrap(),
                tensors.as_ref().unwrap(),
                next.tensors.as_ref().unwrap(),
                &grid,
            )?;
            (Some((rb.max_abs, rb.rms)), Some((ra.max_abs, ra.rms)))
        } else {
            (None, None)
        };

        let hamiltonian = if config.hamiltonian {
            Some(build_hamiltonian(
                &prev.map,
                &curr.map,
                &next.map,
                &v,
                &curr.density,
                masses,
            )?)
        } else {
            None
        };

        stacks.push(FieldStack {
            time: curr.state.time,
            state: curr.state.clone(),
            density: curr.density.clone(),
            current: curr.current.clone(),
            map: curr.map.clone(),
            tensors,
            w,
            v_b: curr.v_b.clone(),
            v,
            continuity_vb: (cont_b.max_abs, cont_b.rms),
            continuity_assembled: (cont_a.max_abs, cont_a.rms),
            integrability_vb: int_b,
            integrability_assembled: int_a,
            hamiltonian,
        });
    }
    Ok(PipelineOutput {
        grid,
        chain,
        stacks,
    })
}
