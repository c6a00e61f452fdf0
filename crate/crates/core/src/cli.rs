//! Command-line entry point: `run`, `bench`, `scale`, and `verify`
//! subcommands wiring the config file to the library. Also defines the
//! structured text format of the run report. Every text output starts with
//! a comment carrying the effective config hash.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::bench;
use crate::config::{ConfigError, RunConfig};
use crate::grid::decompose;
use crate::pulse::{self, field_checksum, RunOptions, RunReport};
use crate::solver::Outcome;
use crate::verify::{self, CheckId, ALL_CHECKS};

#[derive(Parser)]
#[command(
    name = "rdmini",
    version,
    about = "Matrix-free implicit radiation-diffusion mini-app: pulse runs, kernel benches, topology sweeps, oracle checks"
)]
pub struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct CommonArgs {
    /// Config file (TOML sections [grid] [problem] [solver] [topology] [bench]);
    /// defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. --set solver.variant=classic (repeatable).
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    /// Directory for report and CSV outputs.
    #[arg(long, default_value = ".")]
    output: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute the pulse workload and write the run report.
    Run(CommonArgs),
    /// Time the five solver kernels on both code paths.
    Bench(CommonArgs),
    /// Run the pulse workload once per tile topology and tabulate timings.
    Scale {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated topology list, e.g. 1x1,10x1,5x4.
        #[arg(long)]
        topologies: String,
    },
    /// Run the small-instance oracle suite and report pass/fail per check.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated subset of checks (an empty string selects none):
        /// operator-assembly, solver-direct, spai-columns,
        /// variant-equivalence, analytic-pulse.
        #[arg(long)]
        checks: Option<String>,
    },
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.cmd {
        Cmd::Run(common) => cmd_run(&common),
        Cmd::Bench(common) => cmd_bench(&common),
        Cmd::Scale { common, topologies } => cmd_scale(&common, &topologies),
        Cmd::Verify { common, checks } => cmd_verify(&common, checks.as_deref()),
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid topology list entry '{0}': expected NxM with positive integers")]
    BadTopology(String),
    #[error("unknown check '{0}'")]
    UnknownCheck(String),
    #[error(transparent)]
    Pulse(#[from] pulse::PulseError),
    #[error(transparent)]
    Bench(#[from] bench::BenchError),
    #[error("cannot write {path}: {source}")]
    Write { path: String, source: std::io::Error },
}

fn load_config(common: &CommonArgs) -> Result<RunConfig, ConfigError> {
    match &common.config {
        Some(path) => RunConfig::load(path, &common.set),
        None => RunConfig::from_overrides(&common.set),
    }
}

fn write_output(dir: &Path, name: &str, content: &str) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|source| CliError::Write { path: dir.display().to_string(), source })?;
    let path = dir.join(name);
    std::fs::write(&path, content)
        .map_err(|source| CliError::Write { path: path.display().to_string(), source })?;
    Ok(path)
}

fn write_effective_config(dir: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    write_output(dir, "effective_config.toml", &cfg.effective_toml()).map(|_| ())
}

fn cmd_run(common: &CommonArgs) -> Result<ExitCode, CliError> {
    let cfg = load_config(common)?;
    write_effective_config(&common.output, &cfg)?;
    let problem = cfg.to_problem()?;
    let (nprx1, nprx2) = cfg.topology_counts();
    let topo = decompose(&problem.grid, nprx1, nprx2)
        .map_err(|e| ConfigError::Invalid { key: "topology".into(), reason: e.to_string() })?;
    let report = pulse::run_with_options(&problem, &topo, &RunOptions::default())?;

    let text = render_run_report(&report, &cfg);
    let path = write_output(&common.output, "run_report.txt", &text)?;
    let field_path = common.output.join("final_field.bin");
    pulse::write_snapshot(&field_path, &report.final_field)
        .map_err(|source| CliError::Write { path: field_path.display().to_string(), source })?;

    let converged = report.solve_stats.iter().filter(|s| s.outcome == Outcome::Converged).count();
    println!(
        "{} solves ({} converged) in {:.3} s over {} workers; report at {}",
        report.solve_stats.len(),
        converged,
        report.wall_seconds,
        topo.n_workers(),
        path.display()
    );
    if report.all_converged {
        Ok(ExitCode::SUCCESS)
    } else {
        if let Some((step, stage)) = report.aborted_at {
            eprintln!("aborted: solve failed at step {step}, stage {stage}");
        }
        Ok(ExitCode::FAILURE)
    }
}

/// Structured text rendering of a run report.
pub fn render_run_report(report: &RunReport, cfg: &RunConfig) -> String {
    let mut out = String::new();
    out.push_str("# radiation pulse run report\n");
    out.push_str(&format!("# config_hash: {:#018x}\n", cfg.hash()));
    out.push_str("[summary]\n");
    out.push_str(&format!("nsteps = {}\n", report.nsteps));
    out.push_str(&format!("solves_per_step = {}\n", report.solves_per_step));
    out.push_str(&format!("solves = {}\n", report.solve_stats.len()));
    let converged = report.solve_stats.iter().filter(|s| s.outcome == Outcome::Converged).count();
    out.push_str(&format!("converged_solves = {converged}\n"));
    out.push_str(&format!("all_converged = {}\n", report.all_converged));
    if let Some((step, stage)) = report.aborted_at {
        out.push_str(&format!("aborted_at_step = {step}\naborted_at_stage = {stage}\n"));
    }
    out.push_str(&format!("iterations_total = {}\n", report.total_iterations()));
    out.push_str(&format!("reduction_events_total = {}\n", report.total_reduction_events()));
    out.push_str(&format!("matvecs_total = {}\n", report.total_matvecs()));
    out.push_str(&format!("wall_seconds = {:.6}\n", report.wall_seconds));
    out.push_str(&format!("initial_energy = {:.17e}\n", report.initial_energy));
    out.push_str(&format!("final_energy = {:.17e}\n", report.final_energy));
    out.push_str(&format!("min_final_value = {:.17e}\n", report.min_final_value));
    out.push_str(&format!("final_field_checksum = {:#018x}\n", field_checksum(&report.final_field)));
    out.push_str("\n[solves]\n");
    out.push_str("# step stage iterations reduction_events matvecs outcome final_relative_residual\n");
    let sps = report.solves_per_step.max(1);
    for (i, s) in report.solve_stats.iter().enumerate() {
        let (step, stage) = (i / sps + 1, i % sps + 1);
        let outcome = match s.outcome {
            Outcome::Converged => "converged".to_string(),
            Outcome::MaxIter => "max_iter".to_string(),
            Outcome::Breakdown(kind) => format!("breakdown:{kind:?}").to_lowercase(),
        };
        out.push_str(&format!(
            "{step} {stage} {} {} {} {outcome} {:.6e}\n",
            s.iterations, s.reduction_events, s.matvec_count, s.final_relative_residual
        ));
    }
    out
}

fn cmd_bench(common: &CommonArgs) -> Result<ExitCode, CliError> {
    let cfg = load_config(common)?;
    write_effective_config(&common.output, &cfg)?;
    let report = bench::run_kernel_bench(&cfg.to_bench())?;
    let mut csv = format!("# config_hash: {:#018x}\n", cfg.hash());
    csv.push_str(&bench::bench_csv(&report));
    let path = write_output(&common.output, "kernel_bench.csv", &csv)?;
    print!("{}", bench::bench_table(&report));
    println!("csv at {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn parse_topologies(list: &str) -> Result<Vec<(usize, usize)>, CliError> {
    list.split(',')
        .map(|entry| {
            let e = entry.trim();
            let (a, b) = e.split_once('x').ok_or_else(|| CliError::BadTopology(e.into()))?;
            let p1: usize = a.parse().map_err(|_| CliError::BadTopology(e.into()))?;
            let p2: usize = b.parse().map_err(|_| CliError::BadTopology(e.into()))?;
            if p1 == 0 || p2 == 0 {
                return Err(CliError::BadTopology(e.into()));
            }
            Ok((p1, p2))
        })
        .collect()
}

/// Sweep repetition count ("median of k").
const SWEEP_RUNS: usize = 3;

fn cmd_scale(common: &CommonArgs, topologies: &str) -> Result<ExitCode, CliError> {
    let cfg = load_config(common)?;
    write_effective_config(&common.output, &cfg)?;
    let problem = cfg.to_problem()?;
    let topos = parse_topologies(topologies)?;
    let rows = bench::run_scaling_sweep(&problem, &topos, SWEEP_RUNS);
    let mut csv = format!("# config_hash: {:#018x}\n", cfg.hash());
    csv.push_str(&bench::sweep_csv(&rows));
    let path = write_output(&common.output, "scale_sweep.csv", &csv)?;
    print!("{}", bench::sweep_table(&rows));
    println!("csv at {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(common: &CommonArgs, checks: Option<&str>) -> Result<ExitCode, CliError> {
    // The checks are self-contained small instances; the config is parsed
    // (so bad configs still fail fast) but does not shape them.
    let _ = load_config(common)?;
    let selection: Vec<CheckId> = match checks {
        None => ALL_CHECKS.to_vec(),
        Some(list) => list
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| CheckId::from_name(s.trim()).ok_or_else(|| CliError::UnknownCheck(s.trim().into())))
            .collect::<Result<_, _>>()?,
    };
    let results = verify::run_checks(&selection, None);
    let mut all_ok = true;
    for r in &results {
        let tag = if r.passed { "PASS" } else { "FAIL" };
        println!("{tag} {:<20} {}", r.id.name(), r.detail);
        all_ok &= r.passed;
    }
    if all_ok {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::FAILURE)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topology_list_parsing() {
        assert_eq!(parse_topologies("1x1,10x1,5x4").unwrap(), vec![(1, 1), (10, 1), (5, 4)]);
        assert!(parse_topologies("0x4").is_err());
        assert!(parse_topologies("3").is_err());
        assert!(parse_topologies("axb").is_err());
    }

    #[test]
    fn report_rendering_contains_schema() {
        let cfg = RunConfig::from_overrides(&[
            "grid.nx1=16".into(),
            "grid.nx2=12".into(),
            "problem.center=[8.0,6.0]".into(),
            "problem.nsteps=1".into(),
        ])
        .unwrap();
        let problem = cfg.to_problem().unwrap();
        let topo = crate::grid::TileTopology::serial(&problem.grid);
        let report = pulse::run(&problem, &topo).unwrap();
        let text = render_run_report(&report, &cfg);
        assert!(text.contains("# config_hash: 0x"));
        assert!(text.contains("solves = 3"));
        assert!(text.contains("[solves]"));
        assert!(text.contains("converged"));
        assert!(text.contains("final_field_checksum"));
    }
}
