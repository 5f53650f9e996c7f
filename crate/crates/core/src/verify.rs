//! The acceptance battery: the full invariant suite run on the standard
//! fixtures, printing one measured line per check and one verdict per
//! criterion. The command-line `verify` subcommand and the acceptance test
//! target share this code.
//!
//! Fixtures (free evolution, unit masses, box [-12, 12) at 128 points per
//! axis): a 1-D gaussian with σ = 1, a factorizable 2-D gaussian with
//! σ = (1, 0.8), and a correlated 2-D gaussian with σ = (1, 1), c = 0.5.

use crate::causal_hamiltonian::evaluate_hamiltonian;
use crate::error::Result;
use crate::grid::GridSpec;
use crate::marginal_chain::{
    build_chain, conditional_cdf, momentum_map, verify_marginals, ChainVariant, RepresentationSet,
    Sign, SignVector,
};
use crate::pipeline::{run_fields, PipelineConfig, PipelineOutput};
use crate::rng;
use crate::trajectories::{
    compare_dbb, equivariance_test, propagate, TrajectoryEnsemble,
};
use crate::velocity_solver::{
    solve_w, summarize, transport_residual_scaled, GaugeSpec, Provenance, WSolveMethod,
};
use crate::wavepacket::{
    analytic_free_gaussian, build_state, evolve, AxisRep, GaussianTerm, PotentialSpec,
    WavefunctionSpec, WavefunctionState,
};
use ndarray::{ArrayD, IxDyn};

/// Controls for the battery.
#[derive(Debug, Clone)]
pub struct VerifyConfig {
    pub n_samples: usize,
    pub seed: u64,
    /// Negative-control injection: scale the momentum map by 1.1 before the
    /// marginal battery, which must then fail.
    pub corrupt_map: bool,
    /// Restrict the sign-branch battery to one branch index.
    pub branch: Option<usize>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            n_samples: 100_000,
            seed: 29,
            corrupt_map: false,
            branch: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckLine {
    pub label: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub index: usize,
    pub name: &'static str,
    pub passed: bool,
    pub error: Option<String>,
    pub lines: Vec<CheckLine>,
}

impl CriterionResult {
    fn from_lines(index: usize, name: &'static str, lines: Vec<CheckLine>) -> Self {
        let passed = lines.iter().all(|l| l.passed);
        Self {
            index,
            name,
            passed,
            error: None,
            lines,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub criteria: Vec<CriterionResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }

    pub fn has_errors(&self) -> bool {
        self.criteria.iter().any(|c| c.error.is_some())
    }

    /// One pass/fail line per criterion, followed by the measured details.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.criteria {
            let verdict = if c.passed { "PASS" } else { "FAIL" };
            out.push_str(&format!("[{verdict}] criterion {}: {}\n", c.index, c.name));
            if let Some(err) = &c.error {
                out.push_str(&format!("         error: {err}\n"));
            }
            for l in &c.lines {
                let mark = if l.passed { "ok  " } else { "FAIL" };
                out.push_str(&format!("    [{mark}] {}: {}\n", l.label, l.detail));
            }
        }
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        out.push_str(&format!("overall: {verdict}\n"));
        out
    }
}

// ---------------------------------------------------------------------------
// fixtures
// ---------------------------------------------------------------------------

fn grid_1d() -> GridSpec {
    GridSpec::line(-12.0, 12.0, 128).unwrap()
}

fn grid_2d() -> GridSpec {
    GridSpec::square(-12.0, 12.0, 128).unwrap()
}

fn spec_1d() -> WavefunctionSpec {
    WavefunctionSpec::Gaussian(GaussianTerm::centered(vec![1.0], vec![0.0], 0.0))
}

fn spec_2d_product() -> WavefunctionSpec {
    WavefunctionSpec::Gaussian(GaussianTerm::centered(vec![1.0, 0.8], vec![0.0, 0.0], 0.0))
}

fn spec_2d_correlated() -> WavefunctionSpec {
    WavefunctionSpec::Gaussian(GaussianTerm::centered(vec![1.0, 1.0], vec![0.0, 0.0], 0.5))
}

fn pipeline_config(n: usize, n_snapshots: usize, stride: usize) -> PipelineConfig {
    PipelineConfig {
        variant: ChainVariant::Forward,
        signs: SignVector::plus(n),
        gauge: GaugeSpec::Zero,
        method: WSolveMethod::LeastSquares,
        dt_evolve: 0.005,
        stride,
        n_snapshots,
        hamiltonian: false,
    }
}

fn line(label: impl Into<String>, passed: bool, detail: String) -> CheckLine {
    CheckLine {
        label: label.into(),
        passed,
        detail,
    }
}

// ---------------------------------------------------------------------------
// criteria
// ---------------------------------------------------------------------------

/// Criterion 1: every sign branch of the correlated fixture reproduces all
/// n + 1 marginal families at α = 0.01 with N samples.
fn criterion_1(cfg: &VerifyConfig) -> Result<CriterionResult> {
    let grid = grid_2d();
    let state0 = build_state(&spec_2d_correlated(), &grid)?;
    let pot = PotentialSpec::free(vec![1.0, 1.0]);
    let snaps = evolve(&state0, &pot, 0.005, 100)?;
    let state = snaps.last().unwrap();
    let chain = build_chain(2, ChainVariant::Forward)?;
    let reps = RepresentationSet::compute(state, &chain);

    let branches: Vec<SignVector> = match cfg.branch {
        Some(b) => vec![SignVector::from_branch_index(2, b)],
        None => SignVector::all_branches(2),
    };
    let mut lines = Vec::new();
    for signs in &branches {
        let mut map = momentum_map(&reps, &chain, signs)?;
        if cfg.corrupt_map {
            for c in &mut map.components {
                c.mapv_inplace(|v| 1.1 * v);
            }
        }
        let report = verify_marginals(&map, &reps, &chain, cfg.n_samples, cfg.seed)?;
        let detail = format!(
            "max KS {:.4e} vs critical {:.4e} (N = {}, families {})",
            report.max_ks(),
            report.critical,
            report.n_samples,
            report.families.len()
        );
        lines.push(line(
            format!("branch {}", signs.label()),
            report.all_pass(),
            detail,
        ));
    }
    Ok(CriterionResult::from_lines(
        1,
        "marginal reproduction across all sign branches",
        lines,
    ))
}

/// Criterion 2: the one-dimensional delta support satisfies
/// CDF_p(p̂(x)) = CDF_x(εx) pointwise.
fn criterion_2(_cfg: &VerifyConfig) -> Result<CriterionResult> {
    let grid = grid_1d();
    let chain = build_chain(1, ChainVariant::Forward)?;
    let mut lines = Vec::new();
    for t in [0.0, 0.5] {
        let state = analytic_free_gaussian(&spec_1d(), &[1.0], &grid, t)?;
        let reps = RepresentationSet::compute(&state, &chain);
        let x_table = conditional_cdf(reps.density(&[AxisRep::Position]), &grid.axes, 0, &[]);
        let mom_axes = reps.domain_axes(&[AxisRep::Momentum]);
        let p_table = conditional_cdf(reps.density(&[AxisRep::Momentum]), &mom_axes, 0, &[]);
        for sign in [Sign::Plus, Sign::Minus] {
            let map = momentum_map(&reps, &chain, &SignVector(vec![sign]))?;
            let mut max_diff = 0.0f64;
            for i in 0..grid.axes[0].len {
                let x = grid.axes[0].point(i);
                let lhs = p_table.value_at(map.components[0][[i]]);
                let rhs = x_table.value_at(sign.as_f64() * x);
                max_diff = max_diff.max((lhs - rhs).abs());
            }
            lines.push(line(
                format!("t = {t}, ε = {}", sign.as_f64()),
                max_diff < 1e-6,
                format!("max |CDF_p(p̂(x)) - CDF_x(εx)| = {max_diff:.3e} < 1e-6"),
            ));
        }
    }
    Ok(CriterionResult::from_lines(
        2,
        "one-dimensional closed-form delta support",
        lines,
    ))
}

fn fixture_pipelines() -> Result<Vec<(&'static str, PipelineOutput)>> {
    let pot1 = PotentialSpec::free(vec![1.0]);
    let pot2 = PotentialSpec::free(vec![1.0, 1.0]);
    let s1 = build_state(&spec_1d(), &grid_1d())?;
    let s2p = build_state(&spec_2d_product(), &grid_2d())?;
    let s2c = build_state(&spec_2d_correlated(), &grid_2d())?;
    // field times 0, 0.25, 0.5
    let mut cfg1 = pipeline_config(1, 2, 50);
    cfg1.hamiltonian = true;
    let mut cfg2 = pipeline_config(2, 2, 50);
    cfg2.hamiltonian = true;
    Ok(vec![
        ("1d gaussian", run_fields(&s1, &pot1, &cfg1)?),
        ("2d product", run_fields(&s2p, &pot2, &cfg2)?),
        ("2d correlated", run_fields(&s2c, &pot2, &cfg2)?),
    ])
}

/// Criterion 3: the continuity constraint holds for v_B at round-off scale
/// and the assembled velocity stays within ten times that baseline.
fn criterion_3(pipelines: &[(&'static str, PipelineOutput)]) -> CriterionResult {
    let mut lines = Vec::new();
    for (name, out) in pipelines {
        for stack in &out.stacks {
            let (base, _) = stack.continuity_vb;
            let (asm, _) = stack.continuity_assembled;
            // both sides sit at round-off; the ratio is meaningful only above
            // machine-noise scale
            let ok = base < 1e-8 && asm <= (10.0 * base).max(1e-14);
            lines.push(line(
                format!("{name} t = {:.2}", stack.time),
                ok,
                format!("baseline max {base:.3e} < 1e-8, assembled max {asm:.3e} <= 10x baseline"),
            ));
        }
    }
    CriterionResult::from_lines(3, "velocity continuity constraint", lines)
}

/// Criterion 4: the transport equation for W on the correlated fixture —
/// residual reduction, cross-method agreement, and manufactured-solution
/// recovery for both solvers.
fn criterion_4(pipelines: &[(&'static str, PipelineOutput)]) -> Result<CriterionResult> {
    let mut lines = Vec::new();

    // the correlated stack at t = 0.5 carries the live source tensor
    let out = &pipelines
        .iter()
        .find(|(n, _)| *n == "2d correlated")
        .unwrap()
        .1;
    let stack = out.stacks.last().unwrap();
    let tensors = stack.tensors.as_ref().unwrap();
    let grid = &out.grid;
    let density = &stack.density;

    let w_char = solve_w(
        tensors,
        density,
        &GaugeSpec::Zero,
        WSolveMethod::Characteristics,
        grid,
    )?;
    let w_lsq = solve_w(
        tensors,
        density,
        &GaugeSpec::Zero,
        WSolveMethod::LeastSquares,
        grid,
    )?;

    // residual reduction vs W = 0, each method on its own evaluation mask,
    // in the unit-speed measure (per arc length along characteristics): the
    // raw form is weighted by |∇g| ~ 1/|ψ|² and means nothing in the tail
    let mut best_reduction = 0.0f64;
    for w in [&w_char, &w_lsq] {
        let base = transport_residual_scaled(
            &grid.zeros(),
            tensors,
            density,
            grid,
            Some(&w.residual_scaled.mask),
        )?;
        let reduction = base.rms / w.residual_scaled.rms.max(1e-300);
        best_reduction = best_reduction.max(reduction);
        lines.push(line(
            format!("{} residual", w.method.name()),
            true, // informational; the verdict line follows
            format!(
                "scaled rms {:.3e} vs W=0 baseline {:.3e} (reduction {:.1}x); raw rms {:.3e}",
                w.residual_scaled.rms, base.rms, reduction, w.residual.rms
            ),
        ));
    }
    if let Some(warn) = &w_char.loop_warning {
        lines.push(line(
            "closed-characteristic diagnostic",
            true, // informational
            format!(
                "{} closed orbits never reach the section; max loop integral of F = {:.3e} (must vanish for a single-valued W)",
                warn.closed_orbits, warn.max_loop_residual
            ),
        ));
    }
    lines.push(line(
        "residual reduction >= 1e3",
        best_reduction >= 1e3,
        format!("best reduction {best_reduction:.1}x"),
    ));

    // cross-method agreement on a common evaluation mask
    let mut common = w_char.residual.mask.clone();
    ndarray::Zip::from(&mut common)
        .and(&w_lsq.residual.mask)
        .for_each(|a, b| *a = *a && *b);
    let rc = transport_residual_scaled(&w_char.w12, tensors, density, grid, Some(&common))?;
    let rl = transport_residual_scaled(&w_lsq.w12, tensors, density, grid, Some(&common))?;
    let ratio = if rl.rms > 0.0 { rc.rms / rl.rms } else { 1.0 };
    let ratio = if ratio < 1.0 { 1.0 / ratio } else { ratio };
    lines.push(line(
        "solver methods agree on residual scale",
        ratio < 10.0,
        format!(
            "characteristics rms {:.3e} vs least-squares rms {:.3e} (ratio {ratio:.2})",
            rc.rms, rl.rms
        ),
    ));

    // manufactured recovery: quadratic fixture for characteristics (no
    // third-derivative truncation in the residual evaluation), enveloped
    // fixture for least squares (compatible with its W = 0 frame condition)
    let man_char_res = {
        let mgrid = GridSpec::square(-6.0, 6.0, 256)?;
        let a = 0.15;
        let tensors = manufactured(&mgrid, |x, y| y + a * x.sin(), move |x, y| y - a * x.cos() * x);
        let ones = ArrayD::from_elem(IxDyn(&mgrid.shape()), 1.0);
        solve_w(&tensors, &ones, &GaugeSpec::Zero, WSolveMethod::Characteristics, &mgrid)?
            .residual
            .rms
    };
    lines.push(line(
        "manufactured recovery (characteristics)",
        man_char_res < 1e-4,
        format!("residual rms {man_char_res:.3e} < 1e-4"),
    ));
    let man_lsq_res = {
        let mgrid = GridSpec::square(-6.0, 6.0, 128)?;
        let a = 0.15;
        let tensors = manufactured(&mgrid, move |x, y| y + a * x.sin(), move |x, y| {
            let env = (-(x * x + y * y) / 4.0).exp();
            y * (1.0 - x * x / 2.0) * env - a * x.cos() * x * (1.0 - y * y / 2.0) * env
        });
        let ones = ArrayD::from_elem(IxDyn(&mgrid.shape()), 1.0);
        solve_w(&tensors, &ones, &GaugeSpec::Zero, WSolveMethod::LeastSquares, &mgrid)?
            .residual
            .rms
    };
    lines.push(line(
        "manufactured recovery (least squares)",
        man_lsq_res < 1e-3,
        format!("residual rms {man_lsq_res:.3e} < 1e-3"),
    ));

    Ok(CriterionResult::from_lines(
        4,
        "W-field necessity and solution",
        lines,
    ))
}

fn manufactured(
    grid: &GridSpec,
    g_fn: impl Fn(f64, f64) -> f64,
    f_fn: impl Fn(f64, f64) -> f64,
) -> crate::velocity_solver::StructureTensors {
    let mut g = grid.zeros();
    let mut f = grid.zeros();
    for i in 0..grid.axes[0].len {
        for j in 0..grid.axes[1].len {
            let x = grid.axes[0].point(i);
            let y = grid.axes[1].point(j);
            g[[i, j]] = g_fn(x, y);
            f[[i, j]] = f_fn(x, y);
        }
    }
    crate::velocity_solver::StructureTensors {
        curl: g.clone(),
        scaled_curl: g,
        source: Some(f),
        derivative_scale: 1.0,
        valid: ArrayD::from_elem(IxDyn(&grid.shape()), true),
        time: 0.0,
    }
}

/// Criterion 5: factorizable fixtures are dBB-degenerate.
fn criterion_5(pipelines: &[(&'static str, PipelineOutput)]) -> CriterionResult {
    let out = &pipelines
        .iter()
        .find(|(n, _)| *n == "2d product")
        .unwrap()
        .1;
    let mut lines = Vec::new();
    for stack in &out.stacks {
        let tensors = stack.tensors.as_ref().unwrap();
        let scale = tensors.derivative_scale.max(1.0);
        let (f_max, _) = summarize(&tensors.curl, &tensors.valid);
        let (src_max, _) = summarize(tensors.source.as_ref().unwrap(), &tensors.valid);
        let w_max = stack
            .w
            .as_ref()
            .map(|w| w.w12.iter().map(|v| v.abs()).fold(0.0f64, f64::max))
            .unwrap_or(0.0);
        let dv = stack
            .v
            .components
            .iter()
            .zip(&stack.v_b.components)
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
            .fold(0.0f64, f64::max);
        let ok = f_max / scale < 1e-5 && src_max / scale < 1e-5 && w_max / scale < 1e-5 && dv < 1e-6;
        lines.push(line(
            format!("t = {:.2}", stack.time),
            ok,
            format!(
                "max|f| {f_max:.2e}, max|F| {src_max:.2e}, max|W| {w_max:.2e} (all < 1e-5 scaled); max|v - v_B| {dv:.2e} < 1e-6"
            ),
        ));
    }
    CriterionResult::from_lines(5, "dBB degeneracy of factorizable states", lines)
}

/// Criterion 6: a causal Hamiltonian exists — curl and path-independence
/// residuals of Ĥ_c, and Hamilton's velocity equation on the support.
fn criterion_6(pipelines: &[(&'static str, PipelineOutput)]) -> Result<CriterionResult> {
    let mut lines = Vec::new();
    for (name, out) in pipelines {
        // the latest stack is the most evolved (largest fields)
        let stack = out.stacks.last().unwrap();
        let (fields, diag) = stack.hamiltonian.as_ref().unwrap();
        let curl_scaled = diag.curl_rms / diag.gradient_scale.max(1e-300);
        let path_scaled = diag.path_discrepancy / diag.hc_range.max(1e-300);
        let n1 = out.grid.ndim() == 1;
        let curl_ok = n1 || curl_scaled < 1e-2;
        let path_ok = n1 || path_scaled < 1e-2;

        // dH/dp at the support reproduces the assembled velocity
        let dp = 1e-4;
        let mut max_err = 0.0f64;
        let mut v_scale = 1.0f64;
        let shape = out.grid.shape();
        let probe_stride = 8;
        match out.grid.ndim() {
            1 => {
                for i in (0..shape[0]).step_by(probe_stride) {
                    if !fields.valid[[i]] {
                        continue;
                    }
                    let x = [out.grid.axes[0].point(i)];
                    let p0 = stack.map.components[0][[i]];
                    let hp = evaluate_hamiltonian(fields, &out.grid, &x, &[p0 + dp])?;
                    let hm = evaluate_hamiltonian(fields, &out.grid, &x, &[p0 - dp])?;
                    let v = stack.v.components[0][[i]];
                    v_scale = v_scale.max(v.abs());
                    max_err = max_err.max(((hp - hm) / (2.0 * dp) - v).abs());
                }
            }
            2 => {
                for i in (0..shape[0]).step_by(probe_stride) {
                    for j in (0..shape[1]).step_by(probe_stride) {
                        if !fields.valid[[i, j]] {
                            continue;
                        }
                        let x = [out.grid.axes[0].point(i), out.grid.axes[1].point(j)];
                        let p0 = [
                            stack.map.components[0][[i, j]],
                            stack.map.components[1][[i, j]],
                        ];
                        for k in 0..2 {
                            let mut pp = p0;
                            pp[k] += dp;
                            let mut pm = p0;
                            pm[k] -= dp;
                            let hp = evaluate_hamiltonian(fields, &out.grid, &x, &pp)?;
                            let hm = evaluate_hamiltonian(fields, &out.grid, &x, &pm)?;
                            let v = stack.v.components[k][[i, j]];
                            v_scale = v_scale.max(v.abs());
                            max_err = max_err.max(((hp - hm) / (2.0 * dp) - v).abs());
                        }
                    }
                }
            }
            _ => unreachable!(),
        }
        let hamilton_ok = max_err / v_scale < 1e-3;
        lines.push(line(
            format!("{name} t = {:.2}", stack.time),
            curl_ok && path_ok && hamilton_ok,
            format!(
                "curl {curl_scaled:.3e} (scaled, < 1e-2), path {path_scaled:.3e} (scaled, < 1e-2), dH/dp vs v {:.3e} (< 1e-3)",
                max_err / v_scale
            ),
        ));
    }
    Ok(CriterionResult::from_lines(
        6,
        "causal Hamiltonian existence",
        lines,
    ))
}

struct TrajectoryArtifacts {
    corr_assembled: TrajectoryEnsemble,
    corr_dbb: TrajectoryEnsemble,
    corr_states: Vec<WavefunctionState>,
    one_d_assembled: TrajectoryEnsemble,
    one_d_dbb: TrajectoryEnsemble,
}

fn trajectory_artifacts(cfg: &VerifyConfig) -> Result<TrajectoryArtifacts> {
    // correlated fixture over t in [0, 1] with field snapshots every 0.05
    let grid = grid_2d();
    let state0 = build_state(&spec_2d_correlated(), &grid)?;
    let pot = PotentialSpec::free(vec![1.0, 1.0]);
    let pcfg = pipeline_config(2, 20, 10);
    let out = run_fields(&state0, &pot, &pcfg)?;
    let rho0 = out.stacks[0].density.clone();
    let initial = crate::marginal_chain::sample_positions(&rho0, &grid.axes, cfg.n_samples, cfg.seed);
    let series_a = out.velocity_series(Provenance::Assembled)?;
    let series_b = out.velocity_series(Provenance::DeBroglieBohm)?;
    let corr_assembled = propagate(&initial, &series_a, cfg.seed, Provenance::Assembled)?;
    let corr_dbb = propagate(&initial, &series_b, cfg.seed, Provenance::DeBroglieBohm)?;
    let corr_states = out.stacks.iter().map(|s| s.state.clone()).collect();

    // one-dimensional fixture for the collapse check and integrator error
    let grid1 = grid_1d();
    let s1 = build_state(&spec_1d(), &grid1)?;
    let pot1 = PotentialSpec::free(vec![1.0]);
    let out1 = run_fields(&s1, &pot1, &pipeline_config(1, 20, 10))?;
    let rho1 = out1.stacks[0].density.clone();
    let seed1 = cfg.seed ^ 0x517e;
    let initial1 = crate::marginal_chain::sample_positions(&rho1, &grid1.axes, 2000, seed1);
    let sa = out1.velocity_series(Provenance::Assembled)?;
    let sb = out1.velocity_series(Provenance::DeBroglieBohm)?;
    let one_d_assembled = propagate(&initial1, &sa, seed1, Provenance::Assembled)?;
    let one_d_dbb = propagate(&initial1, &sb, seed1, Provenance::DeBroglieBohm)?;
    Ok(TrajectoryArtifacts {
        corr_assembled,
        corr_dbb,
        corr_states,
        one_d_assembled,
        one_d_dbb,

    })
}

/// Criterion 7: equivariance of the assembled flow for every marginal family
/// and of the dBB flow for the position family.
fn criterion_7(arts: &TrajectoryArtifacts) -> Result<CriterionResult> {
    let chain = build_chain(2, ChainVariant::Forward)?;
    let probes: Vec<&WavefunctionState> = vec![
        &arts.corr_states[0],
        &arts.corr_states[10],
        &arts.corr_states[20],
    ];
    let mut lines = Vec::new();
    let rep_a = equivariance_test(&arts.corr_assembled, &probes, &chain, &SignVector::plus(2))?;
    lines.push(line(
        "assembled flow, all families at t in {0, 0.5, 1}",
        rep_a.all_pass(),
        format!("max KS {:.4e} vs critical {:.4e}", rep_a.max_ks(), rep_a.critical),
    ));
    let rep_b = equivariance_test(&arts.corr_dbb, &probes, &chain, &SignVector::plus(2))?;
    lines.push(line(
        "dBB flow, position family at every time",
        rep_b.max_position_ks() < rep_b.critical,
        format!(
            "position max KS {:.4e} vs critical {:.4e}",
            rep_b.max_position_ks(),
            rep_b.critical
        ),
    ));
    // the dBB flow does not reproduce the momentum families; measured only
    lines.push(line(
        "dBB flow, all families (reported)",
        true,
        format!("max KS {:.4e} (degradation expected where f != 0)", rep_b.max_ks()),
    ));
    lines.push(line(
        "escaped fraction below 0.1%",
        arts.corr_assembled.escaped_fraction() < 1e-3
            && arts.corr_dbb.escaped_fraction() < 1e-3,
        format!(
            "assembled {:.2e}, dBB {:.2e}",
            arts.corr_assembled.escaped_fraction(),
            arts.corr_dbb.escaped_fraction()
        ),
    ));
    Ok(CriterionResult::from_lines(
        7,
        "equivariance of advected ensembles",
        lines,
    ))
}

/// Criterion 8: the flows coincide for n = 1 and genuinely diverge for the
/// correlated n = 2 fixture, judged against the measured integrator error.
fn criterion_8(arts: &TrajectoryArtifacts) -> Result<CriterionResult> {
    let mut lines = Vec::new();
    // n = 1 collapse
    let cmp1 = compare_dbb(&arts.one_d_assembled, &arts.one_d_dbb)?;
    lines.push(line(
        "n = 1 assembled vs dBB",
        cmp1.final_rms() < 1e-6,
        format!("rms divergence at t = 1: {:.3e} < 1e-6", cmp1.final_rms()),
    ));
    // integrator error: the dBB flow of the spreading gaussian is
    // x(t) = x0 sigma(t)/sigma(0)
    let stretch = (1.0f64 + 1.0 / 4.0).sqrt();
    let n1 = arts.one_d_dbb.n_particles();
    let x0 = &arts.one_d_dbb.positions[0];
    let xt = arts.one_d_dbb.positions.last().unwrap();
    let mut err_int = 0.0f64;
    for p in 0..n1 {
        err_int = err_int.max((xt[[p, 0]] - x0[[p, 0]] * stretch).abs());
    }
    // n = 2 divergence
    let cmp2 = compare_dbb(&arts.corr_assembled, &arts.corr_dbb)?;
    lines.push(line(
        "n = 2 correlated divergence >= 10x integrator error",
        cmp2.final_rms() >= 10.0 * err_int,
        format!(
            "rms divergence at t = 1: {:.3e} vs integrator error {:.3e}",
            cmp2.final_rms(),
            err_int
        ),
    ));
    // coarse monotone growth over the early checkpoints
    let rd = &cmp2.rms_divergence;
    let monotone = rd[0] <= rd[5] && rd[5] <= rd[10] && rd[10] <= rd[20];
    lines.push(line(
        "divergence grows monotonically at early times",
        monotone,
        format!(
            "rms at t = 0, 0.25, 0.5, 1: {:.2e}, {:.2e}, {:.2e}, {:.2e}",
            rd[0], rd[5], rd[10], rd[20]
        ),
    ));
    Ok(CriterionResult::from_lines(
        8,
        "n = 1 collapse and n = 2 divergence",
        lines,
    ))
}

/// Criterion 9: determinism — the stochastic artifacts rebuild bit-identically
/// from the same seed and configuration.
fn criterion_9(cfg: &VerifyConfig, first_c1: &CriterionResult) -> Result<CriterionResult> {
    let mut lines = Vec::new();
    // the full marginal battery renders to identical bytes
    let rerun = criterion_1(cfg)?;
    let same_render = render_lines(&rerun) == render_lines(first_c1);
    lines.push(line(
        "marginal battery reruns byte-identically",
        same_render,
        format!("{} detail lines compared", rerun.lines.len()),
    ));
    // sampled positions reproduce bit-for-bit
    let grid = grid_2d();
    let state = build_state(&spec_2d_correlated(), &grid)?;
    let rho = state.position_density();
    let a = crate::marginal_chain::sample_positions(&rho, &grid.axes, cfg.n_samples, cfg.seed);
    let b = crate::marginal_chain::sample_positions(&rho, &grid.axes, cfg.n_samples, cfg.seed);
    let bits = |arr: &ndarray::Array2<f64>| -> u64 {
        arr.iter().fold(0u64, |acc, v| {
            acc.rotate_left(7) ^ v.to_bits()
        })
    };
    lines.push(line(
        "sampler reproduces bit-identically",
        a == b,
        format!("fold hash {:#018x}", bits(&a)),
    ));
    // counter-based stream is splittable: drawing word i directly matches
    // the sequential stream
    let mut seq = rng::CounterRng::new(cfg.seed);
    let direct: Vec<u64> = (0..16).map(|i| rng::word_at(cfg.seed, i)).collect();
    let sequential: Vec<u64> = (0..16).map(|_| seq.next_u64()).collect();
    lines.push(line(
        "counter stream splits consistently",
        direct == sequential,
        "16 words compared".into(),
    ));
    Ok(CriterionResult::from_lines(9, "determinism", lines))
}

fn render_lines(c: &CriterionResult) -> String {
    c.lines
        .iter()
        .map(|l| format!("{}|{}|{}", l.label, l.passed, l.detail))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Run the whole battery. Criteria that error out are reported as failed
/// with the error message instead of aborting the battery.
pub fn run_all(cfg: &VerifyConfig) -> VerifyReport {
    let mut criteria = Vec::new();

    let c1 = criterion_1(cfg);
    let c1_for_9 = c1.as_ref().ok().cloned();
    criteria.push(unwrap_criterion(1, "marginal reproduction across all sign branches", c1));
    criteria.push(unwrap_criterion(
        2,
        "one-dimensional closed-form delta support",
        criterion_2(cfg),
    ));

    match fixture_pipelines() {
        Ok(pipelines) => {
            criteria.push(criterion_3(&pipelines));
            criteria.push(unwrap_criterion(
                4,
                "W-field necessity and solution",
                criterion_4(&pipelines),
            ));
            criteria.push(criterion_5(&pipelines));
            criteria.push(unwrap_criterion(
                6,
                "causal Hamiltonian existence",
                criterion_6(&pipelines),
            ));
        }
        Err(e) => {
            for (i, name) in [
                (3, "velocity continuity constraint"),
                (4, "W-field necessity and solution"),
                (5, "dBB degeneracy of factorizable states"),
                (6, "causal Hamiltonian existence"),
            ] {
                criteria.push(CriterionResult {
                    index: i,
                    name,
                    passed: false,
                    error: Some(format!("fixture pipeline failed: {e}")),
                    lines: vec![],
                });
            }
        }
    }

    match trajectory_artifacts(cfg) {
        Ok(arts) => {
            criteria.push(unwrap_criterion(
                7,
                "equivariance of advected ensembles",
                criterion_7(&arts),
            ));
            criteria.push(unwrap_criterion(
                8,
                "n = 1 collapse and n = 2 divergence",
                criterion_8(&arts),
            ));
        }
        Err(e) => {
            for (i, name) in [
                (7, "equivariance of advected ensembles"),
                (8, "n = 1 collapse and n = 2 divergence"),
            ] {
                criteria.push(CriterionResult {
                    index: i,
                    name,
                    passed: false,
                    error: Some(format!("trajectory pipeline failed: {e}")),
                    lines: vec![],
                });
            }
        }
    }

    let c9 = match &c1_for_9 {
        Some(first) => criterion_9(cfg, first),
        None => Ok(CriterionResult {
            index: 9,
            name: "determinism",
            passed: false,
            error: Some("criterion 1 unavailable for the rerun comparison".into()),
            lines: vec![],
        }),
    };
    criteria.push(unwrap_criterion(9, "determinism", c9));

    criteria.sort_by_key(|c| c.index);
    VerifyReport { criteria }
}

fn unwrap_criterion(
    index: usize,
    name: &'static str,
    result: Result<CriterionResult>,
) -> CriterionResult {
    match result {
        Ok(c) => c,
        Err(e) => CriterionResult {
            index,
            name,
            passed: false,
            error: Some(e.to_string()),
            lines: vec![],
        },
    }
}
