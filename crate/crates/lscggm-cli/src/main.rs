//! Batch front end for latent-variable sparse conditional Gaussian graphical
//! model experiments: dataset simulation, fitting, regularisation paths,
//! stability selection, identifiability diagnostics, SDP export and method
//! evaluation. Every run writes its artifacts plus a run log under --out and
//! never mutates its inputs.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use config::{Mode, PenaltyKind, SolverFlags};

#[derive(Parser, Debug)]
#[command(name = "lscggm", version, about = "Latent sparse conditional Gaussian graphical models")]
struct Cli {
    /// Worker threads for independent fits (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// TOML file whose keys override this subcommand's flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic datasets over a (d_Z, d_H) grid.
    Simulate(SimulateArgs),
    /// Fit one estimator at a single (lambda, gamma).
    Fit(FitArgs),
    /// Fit a decreasing-lambda path with warm starts.
    Path(PathArgs),
    /// Complementary-pairs stability selection over a lambda grid.
    Stability(StabilityArgs),
    /// Identifiability and consistency diagnostics of a dataset's truth.
    Diagnose(DiagnoseArgs),
    /// Export the fitting problem in sparse SDPA format.
    ExportSdp(ExportSdpArgs),
    /// Compare estimator modes by precision/recall against the truth.
    Eval(EvalArgs),
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateArgs {
    /// Output dimension; must be a power of two.
    #[arg(long, default_value_t = 32)]
    pub p: usize,
    /// Sample count per dataset.
    #[arg(long, default_value_t = 3000)]
    pub n: usize,
    /// Comma-separated d_Z values.
    #[arg(long, default_value = "2")]
    pub dz: String,
    /// Comma-separated d_H values.
    #[arg(long, default_value = "2")]
    pub dh: String,
    /// Replicates per design cell.
    #[arg(long, default_value_t = 1)]
    pub replicates: usize,
    /// Base seed; per-run seeds derive deterministically from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite a non-empty output directory.
    #[arg(long, default_value_t = false)]
    pub force: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitArgs {
    /// Dataset directory (data_z.csv, data_x.csv).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Lscggm)]
    pub mode: Mode,
    #[arg(long)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.5)]
    pub gamma: f64,
    #[arg(long, value_enum, default_value_t = PenaltyKind::Ratio01)]
    pub penalty: PenaltyKind,
    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverFlags,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = false)]
    pub force: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Lscggm)]
    pub mode: Mode,
    /// Explicit comma-separated decreasing lambda grid.
    #[arg(long)]
    pub lambda_grid: Option<String>,
    /// Geometric grid upper end (used when --lambda-grid is absent).
    #[arg(long, default_value_t = 1.0)]
    pub lambda_max: f64,
    #[arg(long, default_value_t = 0.02)]
    pub lambda_min: f64,
    #[arg(long, default_value_t = 10)]
    pub lambda_count: usize,
    #[arg(long, default_value_t = 0.5)]
    pub gamma: f64,
    #[arg(long, value_enum, default_value_t = PenaltyKind::Ratio01)]
    pub penalty: PenaltyKind,
    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverFlags,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = false)]
    pub force: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Lscggm)]
    pub mode: Mode,
    /// Complementary subsample pairs.
    #[arg(long, default_value_t = 50)]
    pub pairs: usize,
    /// Expected-false-edge bound E(V).
    #[arg(long, default_value_t = 1.0)]
    pub ev_max: f64,
    #[arg(long, default_value = "0.5,0.4,0.3,0.2,0.1")]
    pub lambda_grid: String,
    /// Comma-separated gamma values; two or more trigger the Jaccard heatmap.
    #[arg(long, default_value = "0.5")]
    pub gamma_grid: String,
    #[arg(long, value_enum, default_value_t = PenaltyKind::Ratio01)]
    pub penalty: PenaltyKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverFlags,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = false)]
    pub force: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseArgs {
    /// Dataset directory with a truth/ subdirectory.
    #[arg(long)]
    pub data: PathBuf,
    /// Stand-in for the FIM-dependent constant.
    #[arg(long, default_value_t = 1.0)]
    pub c_const: f64,
    /// Comma-separated Q1..Q6 placeholder constants.
    #[arg(long, default_value = "1,1,1,1,1,1")]
    pub q_constants: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = false)]
    pub force: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportSdpArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.5)]
    pub gamma: f64,
    #[arg(long, value_enum, default_value_t = PenaltyKind::Ratio01)]
    pub penalty: PenaltyKind,
    /// Strict-feasibility margin standing in for S_X − L_X ≻ 0.
    #[arg(long, default_value_t = 1e-8)]
    pub epsilon: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = false)]
    pub force: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalArgs {
    /// Dataset directory with a truth/ subdirectory.
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated modes to compare.
    #[arg(long, default_value = "lscggm,scggm,lrps,glasso")]
    pub modes: String,
    #[arg(long)]
    pub lambda_grid: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_max: f64,
    #[arg(long, default_value_t = 0.02)]
    pub lambda_min: f64,
    #[arg(long, default_value_t = 10)]
    pub lambda_count: usize,
    #[arg(long, default_value = "0.1,0.3,0.5,0.7,0.9")]
    pub gamma_grid: String,
    #[arg(long, value_enum, default_value_t = PenaltyKind::Ratio01)]
    pub penalty: PenaltyKind,
    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverFlags,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = false)]
    pub force: bool,
}

/// Exit taxonomy: 0 success, 1 usage error, 2 numerical failure (with a
/// diagnostics file when an output directory is known).
fn classify(err: &anyhow::Error) -> u8 {
    if let Some(core) = err.downcast_ref::<lscggm::Error>() {
        match core {
            lscggm::Error::NotPositiveDefinite(_) | lscggm::Error::Numerical(_) => 2,
            _ => 1,
        }
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version through the error path with status 0
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.jobs > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global();
    }

    let config = cli.config.as_deref();
    let (out_dir, result) = match cli.command {
        Command::Simulate(args) => commands::simulate(args, config),
        Command::Fit(args) => commands::fit(args, config),
        Command::Path(args) => commands::path(args, config),
        Command::Stability(args) => commands::stability(args, config),
        Command::Diagnose(args) => commands::diagnose(args, config),
        Command::ExportSdp(args) => commands::export_sdp(args, config),
        Command::Eval(args) => commands::eval(args, config),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = classify(&err);
            eprintln!("error: {err:#}");
            if code == 2 {
                if let Some(dir) = out_dir {
                    let diag = serde_json::json!({
                        "error": format!("{err:#}"),
                        "kind": "numerical",
                    });
                    let _ = std::fs::create_dir_all(&dir);
                    let _ = std::fs::write(
                        dir.join("diagnostics_error.json"),
                        serde_json::to_string_pretty(&diag).unwrap_or_default(),
                    );
                }
            }
            ExitCode::from(code)
        }
    }
}
