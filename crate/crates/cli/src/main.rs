//! Command-line front end: run the evolution, field and trajectory pipelines
//! from a TOML configuration and export plot-ready datasets, or run the full
//! verification battery.
//!
//! Exit codes: 0 success, 1 verification failure, 2 configuration error,
//! 3 numerical failure.

mod config;
mod output;

use clap::{Parser, Subcommand};
use config::{config_hash, Resolved, RunConfig};
use output::{write_field_csv, write_json, write_trajectories_csv, Provenance};
use std::path::{Path, PathBuf};

use causalqm::marginal_chain::{sample_positions, SignVector};
use causalqm::pipeline::{run_fields, PipelineConfig, PipelineOutput};
use causalqm::trajectories::{attach_momenta, compare_dbb, equivariance_test, propagate};
use causalqm::velocity_solver::Provenance as Flow;
use causalqm::verify::{run_all, VerifyConfig};
use causalqm::wavepacket::{build_state, evolve};

#[derive(Parser)]
#[command(
    name = "causalqm",
    about = "Phase-space causal quantum mechanics: evolve wavepackets, build momentum maps and causal Hamiltonians, advect trajectory ensembles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve the configured state and write per-time densities and
    /// amplitudes.
    Evolve(CommonArgs),
    /// Run the field pipeline: momentum maps, W field, velocities, causal
    /// Hamiltonian, residual summary.
    Fields(CommonArgs),
    /// Advect a sampled ensemble and write trajectories plus the
    /// equivariance report.
    Trajectories {
        #[command(flatten)]
        common: CommonArgs,
        /// Which flow drives the ensemble.
        #[arg(long, value_parser = ["assembled", "dbb"], default_value = "assembled")]
        flow: String,
        /// Also advect the other flow with the same seed and write the
        /// paired comparison report.
        #[arg(long)]
        compare: bool,
    },
    /// Run the acceptance battery and exit nonzero on failure.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Sign branch: an index (0..2^n) or "all".
        #[arg(long, default_value = "all")]
        branch: String,
        /// Negative control: corrupt the momentum map and demand failure.
        #[arg(long)]
        inject_corrupt_map: bool,
    },
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Path to the TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the configuration).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
}

enum AppError {
    Config(String),
    Numerical(String),
}

impl AppError {
    fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            AppError::Config(m) | AppError::Numerical(m) => m,
        }
    }
}

impl From<causalqm::CoreError> for AppError {
    fn from(e: causalqm::CoreError) -> Self {
        match e {
            causalqm::CoreError::InvalidSpec(_)
            | causalqm::CoreError::UnknownVariant { .. }
            | causalqm::CoreError::GridTooSmall(_) => AppError::Config(e.to_string()),
            other => AppError::Numerical(other.to_string()),
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Numerical(format!("io error: {e}"))
    }
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Evolve(common) => with_setup(common, cmd_evolve),
        Command::Fields(common) => with_setup(common, cmd_fields),
        Command::Trajectories {
            common,
            flow,
            compare,
        } => with_setup(common, |setup| cmd_trajectories(setup, &flow, compare)),
        Command::Verify {
            common,
            branch,
            inject_corrupt_map,
        } => {
            return match with_setup(common, |setup| {
                cmd_verify(setup, &branch, inject_corrupt_map)
            }) {
                Ok(pass) => {
                    if pass {
                        0
                    } else {
                        1
                    }
                }
                Err(e) => {
                    eprintln!("error: {}", e.message());
                    e.exit_code()
                }
            };
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

struct Setup {
    resolved: Resolved,
    prov: Provenance,
    out_dir: PathBuf,
}

fn with_setup<T>(common: CommonArgs, f: impl FnOnce(Setup) -> Result<T, AppError>) -> Result<T, AppError> {
    let bytes = std::fs::read(&common.config)
        .map_err(|e| AppError::Config(format!("config {}: {e}", common.config.display())))?;
    let parsed: RunConfig = toml::from_str(
        std::str::from_utf8(&bytes)
            .map_err(|e| AppError::Config(format!("config: not utf-8: {e}")))?,
    )
    .map_err(|e| AppError::Config(format!("config: {e}")))?;
    let mut resolved = parsed.resolve().map_err(AppError::Config)?;
    if let Some(seed) = common.seed {
        resolved.seed = seed;
    }
    let out_dir = common
        .out
        .unwrap_or_else(|| PathBuf::from(&resolved.out_dir));
    let prov = Provenance {
        config_hash: config_hash(&bytes),
        seed: resolved.seed,
    };
    f(Setup {
        resolved,
        prov,
        out_dir,
    })
}

fn pipeline_config(r: &Resolved) -> PipelineConfig {
    PipelineConfig {
        variant: r.variant,
        signs: r.signs.clone(),
        gauge: r.gauge.clone(),
        method: r.method,
        dt_evolve: r.dt_evolve,
        stride: r.stride,
        n_snapshots: r.snapshots,
        hamiltonian: true,
    }
}

fn cmd_evolve(setup: Setup) -> Result<(), AppError> {
    let r = &setup.resolved;
    let state0 = build_state(&r.spec, &r.grid)?;
    let steps = r.stride * r.snapshots;
    let snaps = evolve(&state0, &r.potential, r.dt_evolve, steps)?;
    let mut norms = Vec::new();
    for (k, snap) in snaps.iter().step_by(r.stride).enumerate() {
        let rho = snap.position_density();
        write_field_csv(
            &setup.out_dir.join(format!("density_{k:04}.csv")),
            &r.grid,
            &rho,
            &setup.prov,
        )?;
        let re = snap.amplitudes.mapv(|c| c.re);
        let im = snap.amplitudes.mapv(|c| c.im);
        write_field_csv(
            &setup.out_dir.join(format!("wavefunction_re_{k:04}.csv")),
            &r.grid,
            &re,
            &setup.prov,
        )?;
        write_field_csv(
            &setup.out_dir.join(format!("wavefunction_im_{k:04}.csv")),
            &r.grid,
            &im,
            &setup.prov,
        )?;
        norms.push(serde_json::json!({
            "index": k,
            "time": snap.time,
            "norm": snap.norm(),
        }));
    }
    let report = serde_json::json!({
        "provenance": setup.prov.json_fields(),
        "snapshots": norms,
    });
    write_json(&setup.out_dir.join("evolve_summary.json"), &report)?;
    println!("wrote {} snapshots to {}", r.snapshots + 1, setup.out_dir.display());
    Ok(())
}

fn field_stack_files(
    out_dir: &Path,
    prefix: &str,
    stacks_out: &PipelineOutput,
    prov: &Provenance,
) -> Result<serde_json::Value, AppError> {
    let grid = &stacks_out.grid;
    let n = grid.ndim();
    let mut residuals = Vec::new();
    for (k, stack) in stacks_out.stacks.iter().enumerate() {
        for c in 0..n {
            write_field_csv(
                &out_dir.join(format!("{prefix}map_p{}_{k:04}.csv", c + 1)),
                grid,
                &stack.map.components[c],
                prov,
            )?;
            write_field_csv(
                &out_dir.join(format!("{prefix}velocity_v{}_{k:04}.csv", c + 1)),
                grid,
                &stack.v.components[c],
                prov,
            )?;
        }
        if let Some(w) = &stack.w {
            write_field_csv(
                &out_dir.join(format!("{prefix}w12_{k:04}.csv")),
                grid,
                &w.w12,
                prov,
            )?;
        } else if n == 2 {
            // degenerate source: the solve is skipped and W is exactly zero
            write_field_csv(
                &out_dir.join(format!("{prefix}w12_{k:04}.csv")),
                grid,
                &grid.zeros(),
                prov,
            )?;
        }
        if let Some((fields, _)) = &stack.hamiltonian {
            for c in 0..n {
                write_field_csv(
                    &out_dir.join(format!("{prefix}vector_potential_a{}_{k:04}.csv", c + 1)),
                    grid,
                    &fields.vector_potential[c],
                    prov,
                )?;
            }
            write_field_csv(
                &out_dir.join(format!("{prefix}scalar_potential_{k:04}.csv")),
                grid,
                &fields.scalar_potential,
                prov,
            )?;
            write_field_csv(
                &out_dir.join(format!("{prefix}hc_support_{k:04}.csv")),
                grid,
                &fields.hc_on_support,
                prov,
            )?;
        }
        let mut entry = serde_json::json!({
            "index": k,
            "time": stack.time,
            "continuity_dbb_max": stack.continuity_vb.0,
            "continuity_assembled_max": stack.continuity_assembled.0,
        });
        let map = entry.as_object_mut().unwrap();
        if let Some((max, rms)) = stack.integrability_vb {
            map.insert("integrability_dbb_max".into(), serde_json::json!(max));
            map.insert("integrability_dbb_rms".into(), serde_json::json!(rms));
        }
        if let Some((max, rms)) = stack.integrability_assembled {
            map.insert("integrability_assembled_max".into(), serde_json::json!(max));
            map.insert(
                "integrability_assembled_rms".into(),
                serde_json::json!(rms),
            );
        }
        if let Some(w) = &stack.w {
            map.insert("w_solver".into(), serde_json::json!(w.method.name()));
            map.insert("w_gauge".into(), serde_json::json!(w.gauge));
            map.insert(
                "w_residual_rms".into(),
                serde_json::json!(w.residual.rms),
            );
            map.insert(
                "w_residual_scaled_rms".into(),
                serde_json::json!(w.residual_scaled.rms),
            );
            if let Some(warn) = &w.loop_warning {
                map.insert(
                    "w_closed_characteristics".into(),
                    serde_json::json!(warn.closed_orbits),
                );
                map.insert(
                    "w_max_loop_residual".into(),
                    serde_json::json!(warn.max_loop_residual),
                );
            }
        }
        if let Some((_, diag)) = &stack.hamiltonian {
            map.insert("hc_curl_rms".into(), serde_json::json!(diag.curl_rms));
            map.insert(
                "hc_path_discrepancy".into(),
                serde_json::json!(diag.path_discrepancy),
            );
        }
        residuals.push(entry);
    }
    Ok(serde_json::json!(residuals))
}

fn cmd_fields(setup: Setup) -> Result<(), AppError> {
    let r = &setup.resolved;
    let state0 = build_state(&r.spec, &r.grid)?;
    let out = run_fields(&state0, &r.potential, &pipeline_config(r))?;
    let residuals = field_stack_files(&setup.out_dir, "", &out, &setup.prov)?;
    let report = serde_json::json!({
        "provenance": setup.prov.json_fields(),
        "chain_variant": r.variant.name(),
        "sign_branch": r.signs.label(),
        "snapshots": residuals,
    });
    write_json(&setup.out_dir.join("fields_summary.json"), &report)?;
    println!(
        "wrote field stacks for {} times to {}",
        out.stacks.len(),
        setup.out_dir.display()
    );
    Ok(())
}

fn cmd_trajectories(setup: Setup, flow: &str, compare: bool) -> Result<(), AppError> {
    let r = &setup.resolved;
    let state0 = build_state(&r.spec, &r.grid)?;
    let out = run_fields(&state0, &r.potential, &pipeline_config(r))?;
    let rho0 = out.stacks[0].density.clone();
    let initial = sample_positions(&rho0, &r.grid.axes, r.particles, r.seed);
    let maps = out.maps();

    let advect = |which: Flow| -> Result<causalqm::trajectories::TrajectoryEnsemble, AppError> {
        let series = out.velocity_series(which.clone())?;
        let mut ens = propagate(&initial, &series, r.seed, which)?;
        attach_momenta(&mut ens, &maps)?;
        Ok(ens)
    };

    let primary_flow = if flow == "dbb" {
        Flow::DeBroglieBohm
    } else {
        Flow::Assembled
    };
    let ens = advect(primary_flow.clone())?;
    let flow_name = if flow == "dbb" { "dbb" } else { "assembled" };
    write_trajectories_csv(
        &setup.out_dir.join(format!("trajectories_{flow_name}.csv")),
        &ens,
        &setup.prov,
    )?;

    // equivariance at the first, middle and last snapshot times
    let idx = [0, out.stacks.len() / 2, out.stacks.len() - 1];
    let probes: Vec<&causalqm::WavefunctionState> =
        idx.iter().map(|&k| &out.stacks[k].state).collect();
    let eq = equivariance_test(&ens, &probes, &out.chain, &r.signs)?;
    let mut table = Vec::new();
    for entry in &eq.entries {
        for family in &entry.families {
            let tag: String = family
                .tag
                .iter()
                .map(|t| match t {
                    causalqm::AxisRep::Position => 'x',
                    causalqm::AxisRep::Momentum => 'p',
                })
                .collect();
            table.push(serde_json::json!({
                "time": entry.time,
                "family": tag,
                "ks": family.ks,
            }));
        }
    }
    let mut report = serde_json::json!({
        "provenance": setup.prov.json_fields(),
        "flow": flow_name,
        "particles": r.particles,
        "critical_alpha_0_01": eq.critical,
        "escaped_fraction": ens.escaped_fraction(),
        "equivariance": table,
    });
    if compare {
        let other = advect(match primary_flow {
            Flow::Assembled => Flow::DeBroglieBohm,
            Flow::DeBroglieBohm => Flow::Assembled,
        })?;
        let cmp = compare_dbb(&ens, &other)?;
        report.as_object_mut().unwrap().insert(
            "comparison".into(),
            serde_json::json!({
                "times": cmp.times,
                "rms_divergence": cmp.rms_divergence,
                "max_divergence": cmp.max_divergence,
            }),
        );
        write_trajectories_csv(
            &setup.out_dir.join("trajectories_compare.csv"),
            &other,
            &setup.prov,
        )?;
    }
    write_json(&setup.out_dir.join("trajectories_report.json"), &report)?;
    println!(
        "wrote {} ensemble(s) of {} particles to {}",
        if compare { 2 } else { 1 },
        r.particles,
        setup.out_dir.display()
    );
    Ok(())
}

fn cmd_verify(setup: Setup, branch: &str, inject: bool) -> Result<bool, AppError> {
    let r = &setup.resolved;
    let branch = match branch {
        "all" => None,
        idx => Some(
            idx.parse::<usize>()
                .map_err(|_| AppError::Config(format!("--branch: expected an index or 'all', got {idx:?}")))?,
        ),
    };
    if let Some(b) = branch {
        let n = r.grid.ndim();
        if b >= 1 << n {
            return Err(AppError::Config(format!(
                "--branch: index {b} out of range for n = {n}"
            )));
        }
        let _ = SignVector::from_branch_index(n, b);
    }
    let cfg = VerifyConfig {
        n_samples: r.verify_samples,
        seed: r.seed,
        corrupt_map: inject,
        branch,
    };
    let report = run_all(&cfg);
    print!("{}", report.render());
    let json = serde_json::json!({
        "provenance": setup.prov.json_fields(),
        "passed": report.passed(),
        "criteria": report
            .criteria
            .iter()
            .map(|c| {
                serde_json::json!({
                    "index": c.index,
                    "name": c.name,
                    "passed": c.passed,
                    "error": c.error,
                    "checks": c
                        .lines
                        .iter()
                        .map(|l| {
                            serde_json::json!({
                                "label": l.label,
                                "passed": l.passed,
                                "detail": l.detail,
                            })
                        })
                        .collect::<Vec<_>>(),
                })
            })
            .collect::<Vec<_>>(),
    });
    write_json(&setup.out_dir.join("verify_report.json"), &json)?;
    if report.has_errors() {
        return Err(AppError::Numerical(
            "verification aborted by a numerical failure".into(),
        ));
    }
    Ok(report.passed())
}
