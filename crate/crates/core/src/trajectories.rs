//! Ensembles of system points advected by velocity-field time series, with
//! momenta attached through the momentum map, and the statistical
//! diagnostics run on them: equivariance of every marginal family and the
//! paired-seed comparison between the assembled flow and de Broglie-Bohm
//! flow.

use ndarray::Array2;

use crate::error::{CoreError, Result};
use crate::grid::GridSpec;
use crate::marginal_chain::{
    ks_critical, ks_distance, momentum_map, transport, CCSChain, CdfTable, FamilyReport,
    MomentumMap, RepresentationSet, SignVector,
};
use crate::velocity_solver::{dbb_velocity, probability_current, Provenance, VelocityField};
use crate::wavepacket::{AxisRep, WavefunctionState};

/// Velocity snapshots at uniformly spaced times.
#[derive(Debug, Clone)]
pub struct VelocitySeries {
    pub grid: GridSpec,
    pub times: Vec<f64>,
    pub fields: Vec<VelocityField>,
}

impl VelocitySeries {
    pub fn new(grid: GridSpec, times: Vec<f64>, fields: Vec<VelocityField>) -> Result<Self> {
        if times.len() != fields.len() || times.len() < 2 {
            return Err(CoreError::SnapshotMismatch(
                "velocity series needs at least two aligned snapshots".into(),
            ));
        }
        let dt = times[1] - times[0];
        for w in times.windows(2) {
            if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.abs().max(1.0) {
                return Err(CoreError::SnapshotMismatch(
                    "velocity snapshots must be uniformly spaced".into(),
                ));
            }
        }
        Ok(Self {
            grid,
            times,
            fields,
        })
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }
}

/// Time-indexed particle positions with derived momenta; every entry is a
/// pure function of the initial sample and the field snapshots.
#[derive(Debug, Clone)]
pub struct TrajectoryEnsemble {
    pub times: Vec<f64>,
    /// positions[t] has shape (particles, ndim).
    pub positions: Vec<Array2<f64>>,
    /// momenta[t] = p̂(positions[t], t); empty until [`attach_momenta`].
    pub momenta: Vec<Array2<f64>>,
    /// Sticky escape flags; escaped particles freeze at the boundary.
    pub escaped: Vec<bool>,
    pub provenance: Provenance,
    pub seed: u64,
}

impl TrajectoryEnsemble {
    pub fn n_particles(&self) -> usize {
        self.positions[0].shape()[0]
    }

    pub fn escaped_fraction(&self) -> f64 {
        self.escaped.iter().filter(|e| **e).count() as f64 / self.escaped.len() as f64
    }
}

/// RK4 advection of an initial sample through a velocity series, with
/// multilinear spatial interpolation and linear-in-time interpolation of the
/// field between snapshots. One RK4 step spans one snapshot interval.
/// Particles leaving the grid freeze at the boundary and are flagged, which
/// keeps the ensemble paired for seed-matched comparisons.
pub fn propagate(
    initial: &Array2<f64>,
    series: &VelocitySeries,
    seed: u64,
    provenance: Provenance,
) -> Result<TrajectoryEnsemble> {
    let ndim = series.grid.ndim();
    if initial.shape()[1] != ndim {
        return Err(CoreError::EnsembleMismatch(format!(
            "initial sample has dimension {}, grid has {ndim}",
            initial.shape()[1]
        )));
    }
    let n = initial.shape()[0];
    let axes = &series.grid.axes;
    let h = series.dt();
    let mut escaped = vec![false; n];
    let mut positions = Vec::with_capacity(series.times.len());
    positions.push(initial.clone());
    let mut current = initial.clone();

    let lo: Vec<f64> = axes.iter().map(|a| a.lo).collect();
    let hi: Vec<f64> = axes.iter().map(|a| a.point(a.len - 1)).collect();

    for k in 0..series.times.len() - 1 {
        let va = &series.fields[k];
        let vb = &series.fields[k + 1];
        let eval = |x: &[f64], theta: f64| -> Vec<f64> {
            let a = va.at(axes, x);
            let b = vb.at(axes, x);
            a.iter()
                .zip(&b)
                .map(|(a, b)| (1.0 - theta) * a + theta * b)
                .collect()
        };
        let mut next = current.clone();
        for p in 0..n {
            if escaped[p] {
                continue;
            }
            let x0: Vec<f64> = (0..ndim).map(|d| current[[p, d]]).collect();
            let k1 = eval(&x0, 0.0);
            let x1: Vec<f64> = x0.iter().zip(&k1).map(|(x, v)| x + 0.5 * h * v).collect();
            let k2 = eval(&x1, 0.5);
            let x2: Vec<f64> = x0.iter().zip(&k2).map(|(x, v)| x + 0.5 * h * v).collect();
            let k3 = eval(&x2, 0.5);
            let x3: Vec<f64> = x0.iter().zip(&k3).map(|(x, v)| x + h * v).collect();
            let k4 = eval(&x3, 1.0);
            let mut out_of_grid = false;
            for d in 0..ndim {
                let v = (k1[d] + 2.0 * (k2[d] + k3[d]) + k4[d]) / 6.0;
                if !v.is_finite() {
                    return Err(CoreError::NonFinite {
                        stage: format!("propagate step {k} particle {p}"),
                    });
                }
                let x = x0[d] + h * v;
                if x < lo[d] || x > hi[d] {
                    out_of_grid = true;
                }
                next[[p, d]] = x.clamp(lo[d], hi[d]);
            }
            if out_of_grid {
                escaped[p] = true;
            }
        }
        positions.push(next.clone());
        current = next;
    }
    Ok(TrajectoryEnsemble {
        times: series.times.clone(),
        positions,
        momenta: Vec::new(),
        escaped,
        provenance,
        seed,
    })
}

/// Build the de Broglie-Bohm velocity series from state snapshots and advect
/// the initial sample along it.
pub fn dbb_propagate(
    initial: &Array2<f64>,
    states: &[WavefunctionState],
    masses: &[f64],
    seed: u64,
) -> Result<TrajectoryEnsemble> {
    if states.len() < 2 {
        return Err(CoreError::SnapshotMismatch(
            "dbb_propagate needs at least two state snapshots".into(),
        ));
    }
    let grid = states[0].grid.clone();
    let times: Vec<f64> = states.iter().map(|s| s.time).collect();
    let fields: Vec<VelocityField> = states
        .iter()
        .map(|s| {
            let rho = s.position_density();
            let j = probability_current(s, masses);
            dbb_velocity(&j, &rho)
        })
        .collect();
    let series = VelocitySeries::new(grid, times, fields)?;
    propagate(initial, &series, seed, Provenance::DeBroglieBohm)
}

/// Fill the ensemble's momenta through maps aligned with its time grid, so
/// that the stored momenta equal p̂ evaluated at the stored positions with
/// the same interpolation the transport uses.
pub fn attach_momenta(ensemble: &mut TrajectoryEnsemble, maps: &[MomentumMap]) -> Result<()> {
    if maps.len() != ensemble.times.len() {
        return Err(CoreError::SnapshotMismatch(format!(
            "{} maps for {} ensemble times",
            maps.len(),
            ensemble.times.len()
        )));
    }
    for (m, &t) in maps.iter().zip(&ensemble.times) {
        if (m.time - t).abs() > 1e-9 * t.abs().max(1.0) {
            return Err(CoreError::SnapshotMismatch(format!(
                "map at t = {} attached to ensemble time {t}",
                m.time
            )));
        }
    }
    ensemble.momenta = maps
        .iter()
        .zip(&ensemble.positions)
        .map(|(m, x)| transport(m, x))
        .collect();
    Ok(())
}

/// Per-time KS distances of ensemble positions and mapped momenta against
/// the evolving quantum marginals of every CCS in the chain.
#[derive(Debug, Clone)]
pub struct EquivarianceEntry {
    pub time: f64,
    pub families: Vec<FamilyReport>,
}

#[derive(Debug, Clone)]
pub struct EquivarianceReport {
    pub entries: Vec<EquivarianceEntry>,
    pub n_samples: usize,
    pub critical: f64,
}

impl EquivarianceReport {
    /// Largest KS distance over every family, axis and time.
    pub fn max_ks(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| e.families.iter())
            .flat_map(|f| f.ks.iter())
            .cloned()
            .fold(0.0, f64::max)
    }

    pub fn all_pass(&self) -> bool {
        self.max_ks() < self.critical
    }

    /// Largest KS distance of the all-position family alone (the guarantee
    /// the dBB flow carries).
    pub fn max_position_ks(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| e.families.iter())
            .filter(|f| f.tag.iter().all(|r| *r == AxisRep::Position))
            .flat_map(|f| f.ks.iter())
            .cloned()
            .fold(0.0, f64::max)
    }
}

/// Test the ensemble against the marginals of the chain at the given state
/// snapshots (each must match one of the ensemble's stored times). Momenta
/// are transported through the chain's map for the given sign branch at each
/// requested time.
pub fn equivariance_test(
    ensemble: &TrajectoryEnsemble,
    states: &[&WavefunctionState],
    chain: &CCSChain,
    signs: &SignVector,
) -> Result<EquivarianceReport> {
    let n_samples = ensemble.n_particles();
    let mut entries = Vec::new();
    for state in states {
        let idx = ensemble
            .times
            .iter()
            .position(|&t| (t - state.time).abs() < 1e-9 * state.time.abs().max(1.0))
            .ok_or_else(|| {
                CoreError::SnapshotMismatch(format!(
                    "no ensemble snapshot at t = {}",
                    state.time
                ))
            })?;
        let reps = RepresentationSet::compute(state, chain);
        let map = momentum_map(&reps, chain, signs)?;
        let positions = &ensemble.positions[idx];
        let momenta = transport(&map, positions);
        let mut families = Vec::new();
        for tag in &chain.tags {
            let dens = reps.density(tag);
            let axes = reps.domain_axes(tag);
            let mut ks = Vec::new();
            for a in 0..chain.n {
                let marginal: Vec<f64> = if chain.n == 1 {
                    dens.iter().cloned().collect()
                } else {
                    crate::grid::reduce_axis(dens, &axes, 1 - a)
                };
                let table = CdfTable::from_density(axes[a].clone(), &marginal, vec![]);
                let values: Vec<f64> = (0..n_samples)
                    .map(|s| match tag[a] {
                        AxisRep::Position => positions[[s, a]],
                        AxisRep::Momentum => momenta[[s, a]],
                    })
                    .collect();
                ks.push(ks_distance(&values, &table));
            }
            families.push(FamilyReport {
                tag: tag.clone(),
                ks,
            });
        }
        entries.push(EquivarianceEntry {
            time: state.time,
            families,
        });
    }
    Ok(EquivarianceReport {
        entries,
        n_samples,
        critical: ks_critical(n_samples, 0.01),
    })
}

/// Position divergence between two seed-paired ensembles on the same times.
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub times: Vec<f64>,
    pub rms_divergence: Vec<f64>,
    pub max_divergence: Vec<f64>,
}

impl ComparisonReport {
    pub fn final_rms(&self) -> f64 {
        *self.rms_divergence.last().unwrap()
    }
}

/// Per-time RMS and max position distance between matched ensembles.
pub fn compare_dbb(a: &TrajectoryEnsemble, b: &TrajectoryEnsemble) -> Result<ComparisonReport> {
    if a.times.len() != b.times.len()
        || a.n_particles() != b.n_particles()
        || a.seed != b.seed
    {
        return Err(CoreError::EnsembleMismatch(
            "compared ensembles must share times, size and seed".into(),
        ));
    }
    for (ta, tb) in a.times.iter().zip(&b.times) {
        if (ta - tb).abs() > 1e-12 {
            return Err(CoreError::EnsembleMismatch(
                "compared ensembles must share their time grid".into(),
            ));
        }
    }
    let n = a.n_particles();
    let ndim = a.positions[0].shape()[1];
    let mut rms = Vec::with_capacity(a.times.len());
    let mut max = Vec::with_capacity(a.times.len());
    for (xa, xb) in a.positions.iter().zip(&b.positions) {
        let mut sum_sq = 0.0;
        let mut worst = 0.0f64;
        for p in 0..n {
            let mut d2 = 0.0;
            for d in 0..ndim {
                let diff = xa[[p, d]] - xb[[p, d]];
                d2 += diff * diff;
            }
            sum_sq += d2;
            worst = worst.max(d2.sqrt());
        }
        rms.push((sum_sq / n as f64).sqrt());
        max.push(worst);
    }
    Ok(ComparisonReport {
        times: a.times.clone(),
        rms_divergence: rms,
        max_divergence: max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marginal_chain::{build_chain, sample_positions, ChainVariant};
    use crate::wavepacket::{analytic_free_gaussian, GaussianTerm, WavefunctionSpec};
    use ndarray::{ArrayD, IxDyn};

    fn uniform_series(grid: &GridSpec, v: Vec<f64>, times: Vec<f64>) -> VelocitySeries {
        let ndim = grid.ndim();
        let fields = times
            .iter()
            .map(|&t| VelocityField {
                components: (0..ndim)
                    .map(|d| ArrayD::from_elem(IxDyn(&grid.shape()), v[d]))
                    .collect(),
                valid: ArrayD::from_elem(IxDyn(&grid.shape()), true),
                provenance: Provenance::Assembled,
                time: t,
            })
            .collect();
        VelocitySeries::new(grid.clone(), times, fields).unwrap()
    }

    #[test]
    fn constant_field_shifts_exactly() {
        let grid = GridSpec::square(-8.0, 8.0, 64).unwrap();
        let times: Vec<f64> = (0..11).map(|k| k as f64 * 0.1).collect();
        let series = uniform_series(&grid, vec![1.0, 0.0], times);
        let mut initial = Array2::<f64>::zeros((5, 2));
        for (p, x) in [-2.0, -1.0, 0.0, 1.0, 2.0].iter().enumerate() {
            initial[[p, 0]] = *x;
            initial[[p, 1]] = 0.3 * x;
        }
        let ens = propagate(&initial, &series, 0, Provenance::Assembled).unwrap();
        let last = ens.positions.last().unwrap();
        for p in 0..5 {
            assert!((last[[p, 0]] - (initial[[p, 0]] + 1.0)).abs() < 1e-8);
            assert!((last[[p, 1]] - initial[[p, 1]]).abs() < 1e-8);
        }
        assert_eq!(ens.escaped_fraction(), 0.0);
    }

    #[test]
    fn zero_field_keeps_particles_still() {
        let grid = GridSpec::line(-8.0, 8.0, 64).unwrap();
        let times: Vec<f64> = (0..6).map(|k| k as f64 * 0.2).collect();
        let series = uniform_series(&grid, vec![0.0], times);
        let mut initial = Array2::<f64>::zeros((3, 1));
        initial[[1, 0]] = 1.5;
        initial[[2, 0]] = -2.5;
        let ens = propagate(&initial, &series, 0, Provenance::Assembled).unwrap();
        assert_eq!(ens.positions.last().unwrap(), &initial);
    }

    #[test]
    fn escaping_particles_freeze_and_flag() {
        let grid = GridSpec::line(-8.0, 8.0, 64).unwrap();
        let times: Vec<f64> = (0..21).map(|k| k as f64 * 0.5).collect();
        let series = uniform_series(&grid, vec![1.0], times);
        let mut initial = Array2::<f64>::zeros((2, 1));
        initial[[0, 0]] = 0.0; // will cross the edge around t = 8
        initial[[1, 0]] = -7.0;
        let ens = propagate(&initial, &series, 0, Provenance::Assembled).unwrap();
        assert!(ens.escaped[0]);
        let hi = grid.axes[0].point(63);
        assert!((ens.positions.last().unwrap()[[0, 0]] - hi).abs() < 1e-12);
    }

    #[test]
    fn dbb_flow_follows_the_spreading_gaussian() {
        // x(t) = x0 sigma(t)/sigma(0) for the free gaussian dBB flow
        let grid = GridSpec::line(-12.0, 12.0, 256).unwrap();
        let spec = WavefunctionSpec::Gaussian(GaussianTerm::centered(vec![1.0], vec![0.0], 0.0));
        let dt = 0.025;
        let states: Vec<WavefunctionState> = (0..41)
            .map(|k| analytic_free_gaussian(&spec, &[1.0], &grid, k as f64 * dt).unwrap())
            .collect();
        let mut initial = Array2::<f64>::zeros((5, 1));
        for (p, x) in [-2.0, -1.0, 0.5, 1.0, 2.0].iter().enumerate() {
            initial[[p, 0]] = *x;
        }
        let ens = dbb_propagate(&initial, &states, &[1.0], 0).unwrap();
        let t = 1.0;
        let stretch = (1.0f64 + t * t / 4.0).sqrt();
        let last = ens.positions.last().unwrap();
        for p in 0..5 {
            let expected = initial[[p, 0]] * stretch;
            assert!(
                (last[[p, 0]] - expected).abs() < 1e-4,
                "particle {p}: {} vs {expected}",
                last[[p, 0]]
            );
        }
    }

    #[test]
    fn propagation_is_deterministic() {
        let grid = GridSpec::line(-12.0, 12.0, 128).unwrap();
        let spec = WavefunctionSpec::Gaussian(GaussianTerm::centered(vec![1.0], vec![0.0], 0.0));
        let states: Vec<WavefunctionState> = (0..11)
            .map(|k| analytic_free_gaussian(&spec, &[1.0], &grid, k as f64 * 0.05).unwrap())
            .collect();
        let rho = states[0].position_density();
        let initial = sample_positions(&rho, &grid.axes, 500, 9);
        let a = dbb_propagate(&initial, &states, &[1.0], 9).unwrap();
        let b = dbb_propagate(&initial, &states, &[1.0], 9).unwrap();
        assert_eq!(a.positions.last().unwrap(), b.positions.last().unwrap());
        // identical ensembles have zero divergence
        let cmp = compare_dbb(&a, &b).unwrap();
        assert_eq!(cmp.final_rms(), 0.0);
    }

    #[test]
    fn momenta_attach_through_the_map() {
        let grid = GridSpec::line(-12.0, 12.0, 128).unwrap();
        let spec = WavefunctionSpec::Gaussian(GaussianTerm::centered(vec![1.0], vec![0.0], 0.0));
        let chain = build_chain(1, ChainVariant::Forward).unwrap();
        let states: Vec<WavefunctionState> = (0..3)
            .map(|k| analytic_free_gaussian(&spec, &[1.0], &grid, k as f64 * 0.05).unwrap())
            .collect();
        let rho = states[0].position_density();
        let initial = sample_positions(&rho, &grid.axes, 200, 4);
        let mut ens = dbb_propagate(&initial, &states, &[1.0], 4).unwrap();
        let maps: Vec<MomentumMap> = states
            .iter()
            .map(|s| {
                let reps = RepresentationSet::compute(s, &chain);
                momentum_map(&reps, &chain, &SignVector::plus(1)).unwrap()
            })
            .collect();
        attach_momenta(&mut ens, &maps).unwrap();
        assert_eq!(ens.momenta.len(), 3);
        // stored momenta equal the transport of stored positions exactly
        let direct = transport(&maps[2], &ens.positions[2]);
        assert_eq!(ens.momenta[2], direct);
        // mismatched map count errors
        let mut short = ens.clone();
        assert!(attach_momenta(&mut short, &maps[..2.min(maps.len())]).is_err());
    }

    #[test]
    fn dbb_flow_is_equivariant_for_positions_and_map_marginals_in_1d() {
        // in one dimension the assembled flow is the dBB flow, and every
        // marginal family must track the evolving state
        let grid = GridSpec::line(-12.0, 12.0, 128).unwrap();
        let spec = WavefunctionSpec::Gaussian(GaussianTerm::centered(vec![1.0], vec![0.0], 0.0));
        let dt = 0.01;
        let states: Vec<WavefunctionState> = (0..81)
            .map(|k| analytic_free_gaussian(&spec, &[1.0], &grid, k as f64 * dt).unwrap())
            .collect();
        let rho = states[0].position_density();
        let n = 20_000;
        let initial = sample_positions(&rho, &grid.axes, n, 13);
        let ens = dbb_propagate(&initial, &states, &[1.0], 13).unwrap();
        let chain = build_chain(1, ChainVariant::Forward).unwrap();
        let probes: Vec<&WavefunctionState> = vec![&states[0], &states[40], &states[80]];
        let report = equivariance_test(&ens, &probes, &chain, &SignVector::plus(1)).unwrap();
        assert!(
            report.all_pass(),
            "max KS {} >= {}",
            report.max_ks(),
            report.critical
        );
    }
}
