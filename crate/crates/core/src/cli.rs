//! Command-line entry point: mesh generation, single solves, and
//! convergence studies.
//!
//! Exit codes: 0 success, 1 usage error, 2 solver failure or
//! non-convergence, 3 I/O or file-format error. All outputs are written
//! atomically (temporary file plus rename).

use std::path::PathBuf;

use clap::error::ErrorKind as ClapErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::dual_solver::{run_flow_with_progress, FlowParams};
use crate::duality::{discrete_gap_estimator, dump_indicators_csv, marini_reconstruct};
use crate::energy::{dual_energy_h, primal_energy_h};
use crate::error::{Error, Result};
use crate::experiments::{
    run_aposteriori_study, run_apriori_study, ManufacturedCase, StudyConfig,
};
use crate::mesh::disk::build_disk_mesh;
use crate::mesh::io::{load_mesh, save_mesh};
use crate::mesh::compute_geometry;
use crate::spaces::{cr_gradient, dump_fields_csv};

pub use crate::fsutil::write_atomic;

#[derive(Parser, Debug)]
#[command(
    name = "torsion",
    about = "Gradient-constrained variational problems: dual gradient flow, \
             Marini reconstruction, and primal-dual gap convergence studies",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a disk mesh and write it as a plain-text mesh file.
    Mesh(MeshArgs),
    /// Solve one problem with the semi-implicit dual gradient flow.
    Solve(SolveArgs),
    /// Interpolant-based convergence study of the discrete gap identity.
    Apriori(StudyArgs),
    /// Post-processing-based convergence study of the continuous gap identity.
    Aposteriori(StudyArgs),
}

#[derive(Args, Debug)]
struct MeshArgs {
    /// Disk radius.
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    /// Refinement level (0..=8); the mesh size tracks 0.36 / 2^level.
    #[arg(long, default_value_t = 0)]
    level: u32,
    /// Output mesh file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SolveArgs {
    /// Mesh file to solve on (conflicts with --disk-level).
    #[arg(long, conflicts_with = "disk_level")]
    mesh: Option<PathBuf>,
    /// Generate the disk mesh of this level instead of loading one.
    #[arg(long)]
    disk_level: Option<u32>,
    /// Load constant C of the manufactured problem.
    #[arg(long = "C", value_name = "C")]
    c: f64,
    /// Disk radius of the manufactured problem.
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    /// Flow step size τ.
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Residual stopping tolerance.
    #[arg(long, default_value_t = 1e-4)]
    eps_stop: f64,
    /// Iteration cap.
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    /// Write the solve report (JSON) here; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dump the reconstructed fields as kind,index,value CSV.
    #[arg(long)]
    dump_fields: Option<PathBuf>,
    /// Dump per-element gap contributions as refinement indicators.
    #[arg(long)]
    dump_indicators: Option<PathBuf>,
    /// Log the residual after every flow iteration.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args, Debug)]
struct StudyArgs {
    /// Load constant C [default: 10].
    #[arg(long = "C", value_name = "C")]
    c: Option<f64>,
    /// Disk radius [default: 1].
    #[arg(long)]
    radius: Option<f64>,
    /// Mesh levels, as an inclusive range "1:5" or a comma list [default: 1:5].
    #[arg(long)]
    levels: Option<String>,
    /// Flow step size τ [default: 1000].
    #[arg(long)]
    tau: Option<f64>,
    /// Residual stopping tolerance [default: 1e-8].
    #[arg(long)]
    eps_stop: Option<f64>,
    /// Iteration cap [default: 10000].
    #[arg(long)]
    max_iter: Option<usize>,
    /// Output CSV path (required here or in the config file).
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON config file; explicit flags win over config values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of levels solved concurrently [default: 1].
    #[arg(long)]
    jobs: Option<usize>,
}

/// JSON study configuration:
/// `{case:{C,r}, levels:[...], flow:{tau,eps_stop,max_iter}, study, out}`.
#[derive(Deserialize, Debug, Default)]
struct ConfigFile {
    case: Option<CaseConfig>,
    levels: Option<Vec<u32>>,
    flow: Option<FlowConfig>,
    #[allow(dead_code)]
    study: Option<String>,
    out: Option<String>,
}

#[derive(Deserialize, Debug)]
struct CaseConfig {
    #[serde(rename = "C")]
    c: Option<f64>,
    r: Option<f64>,
}

#[derive(Deserialize, Debug)]
struct FlowConfig {
    tau: Option<f64>,
    eps_stop: Option<f64>,
    max_iter: Option<usize>,
}

/// Parses argv and runs the selected subcommand, mapping errors to exit
/// codes (1 usage, 2 solver, 3 I/O).
pub fn run_cli(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ClapErrorKind::DisplayHelp | ClapErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Mesh(args) => cmd_mesh(args),
        Command::Solve(args) => cmd_solve(args),
        Command::Apriori(args) => cmd_study(args, true),
        Command::Aposteriori(args) => cmd_study(args, false),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Parameter(_) | Error::Data(_) | Error::Geometry(_) => 1,
                Error::NonConvergence { .. } | Error::Solver(_) | Error::Study { .. } => 2,
                Error::Io(_) | Error::Parse { .. } => 3,
            }
        }
    }
}

fn cmd_mesh(args: MeshArgs) -> Result<()> {
    let mesh = build_disk_mesh(args.radius, args.level)?;
    save_mesh(&mesh, &args.out)
}

fn cmd_solve(args: SolveArgs) -> Result<()> {
    let case = ManufacturedCase::new(args.c, args.radius)?;
    let mesh = match (&args.mesh, args.disk_level) {
        (Some(path), None) => load_mesh(path)?,
        (None, Some(level)) => build_disk_mesh(args.radius, level)?,
        (None, None) => {
            return Err(Error::Parameter(
                "one of --mesh or --disk-level is required".into(),
            ))
        }
        (Some(_), Some(_)) => unreachable!("clap enforces the conflict"),
    };
    let geo = compute_geometry(&mesh)?;
    let data = case.project(&mesh, &geo)?;

    let params = FlowParams {
        tau: args.tau,
        eps_stop: args.eps_stop,
        max_iter: args.max_iter,
        ..FlowParams::default()
    };
    let verbose = args.verbose;
    let report = run_flow_with_progress(&mesh, &geo, &data, &params, |k, res| {
        if verbose {
            eprintln!("iter {k:5}  residual {res:.6e}");
        }
    })?;

    let (u_cr, _defect) = marini_reconstruct(&mesh, &geo, &report.z, &report.lambda, &data);
    let primal = primal_energy_h(&mesh, &geo, &u_cr, &data).value;
    let dual = dual_energy_h(&mesh, &geo, &report.z, &data).value;

    let json = serde_json::json!({
        "iterations": report.iterations,
        "residual_norm": report.residual_norm,
        "dual_energy": {
            "final": dual,
            "history": report.dual_energy_history,
        },
        "primal_energy": primal,
        "duality_gap": primal - dual,
    });
    let text = serde_json::to_string_pretty(&json).expect("report serializes") + "\n";
    match &args.out {
        Some(path) => write_atomic(path, text.as_bytes())?,
        None => print!("{text}"),
    }

    if let Some(path) = &args.dump_fields {
        let grad = cr_gradient(&mesh, &geo, &u_cr);
        let csv = dump_fields_csv(
            Some(&u_cr),
            Some(&report.z),
            Some(&report.lambda),
            Some(&grad),
        );
        write_atomic(path, csv.as_bytes())?;
    }
    if let Some(path) = &args.dump_indicators {
        let gap = discrete_gap_estimator(&mesh, &geo, &u_cr, &report.z, &data);
        write_atomic(path, dump_indicators_csv(&gap).as_bytes())?;
    }
    Ok(())
}

fn cmd_study(args: StudyArgs, apriori: bool) -> Result<()> {
    let config_file: ConfigFile = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                line: e.line(),
                msg: format!("config: {e}"),
            })?
        }
        None => ConfigFile::default(),
    };

    let c = args
        .c
        .or(config_file.case.as_ref().and_then(|c| c.c))
        .unwrap_or(10.0);
    let r = args
        .radius
        .or(config_file.case.as_ref().and_then(|c| c.r))
        .unwrap_or(1.0);
    let levels = match &args.levels {
        Some(arg) => parse_levels(arg)?,
        None => config_file.levels.clone().unwrap_or_else(|| vec![1, 2, 3, 4, 5]),
    };
    let flow_cfg = config_file.flow.as_ref();
    let flow = FlowParams {
        tau: args.tau.or(flow_cfg.and_then(|f| f.tau)).unwrap_or(1000.0),
        eps_stop: args
            .eps_stop
            .or(flow_cfg.and_then(|f| f.eps_stop))
            .unwrap_or(1e-8),
        max_iter: args
            .max_iter
            .or(flow_cfg.and_then(|f| f.max_iter))
            .unwrap_or(10_000),
        ..FlowParams::default()
    };
    let out: PathBuf = match args.out.or(config_file.out.map(PathBuf::from)) {
        Some(p) => p,
        None => {
            return Err(Error::Parameter(
                "--out (or \"out\" in the config file) is required".into(),
            ))
        }
    };

    let case = ManufacturedCase::new(c, r)?;
    let mut config = StudyConfig::new(case, levels, flow)?;
    config.jobs = args.jobs.unwrap_or(1).max(1);

    let table = if apriori {
        run_apriori_study(&config)?
    } else {
        run_aposteriori_study(&config)?
    };
    write_atomic(&out, table.to_csv().as_bytes())
}

/// Accepts "a:b" (inclusive range) or a comma-separated list.
fn parse_levels(arg: &str) -> Result<Vec<u32>> {
    let bad = |msg: &str| Error::Parameter(format!("invalid --levels '{arg}': {msg}"));
    let levels: Vec<u32> = if let Some((a, b)) = arg.split_once(':') {
        let lo: u32 = a.trim().parse().map_err(|_| bad("expected integers"))?;
        let hi: u32 = b.trim().parse().map_err(|_| bad("expected integers"))?;
        if lo > hi {
            return Err(bad("range start exceeds end"));
        }
        (lo..=hi).collect()
    } else {
        arg.split(',')
            .map(|part| part.trim().parse::<u32>().map_err(|_| bad("expected integers")))
            .collect::<Result<_>>()?
    };
    if levels.iter().any(|&l| l > 8) {
        return Err(bad("levels must lie in 0..=8"));
    }
    Ok(levels)
}

/// Convenience for tests and the thin binary.
pub fn run_cli_from<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    run_cli(args.into_iter().map(Into::into).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_levels_accepts_range_and_list() {
        assert_eq!(parse_levels("1:5").unwrap(), vec![1, 2, 3, 4, 5]);
        assert_eq!(parse_levels("0,2,3").unwrap(), vec![0, 2, 3]);
        assert!(parse_levels("5:1").is_err());
        assert!(parse_levels("abc").is_err());
        assert!(parse_levels("7:9").is_err());
    }

    #[test]
    fn usage_errors_exit_one_help_exits_zero() {
        assert_eq!(run_cli_from(["torsion", "solve", "--C", "-1", "--disk-level", "0"]), 1);
        assert_eq!(run_cli_from(["torsion", "--help"]), 0);
        assert_eq!(run_cli_from(["torsion", "bogus"]), 1);
        assert_eq!(run_cli_from(["torsion", "solve", "--C", "1"]), 1);
    }
}
