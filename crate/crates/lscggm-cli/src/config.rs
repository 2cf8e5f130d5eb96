//! Resolved run configurations. Every subcommand owns a config struct that
//! mirrors its flags; a TOML file passed with --config overrides flag values
//! field by field. Unknown keys in the file are rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use lscggm::model::Parametrisation;
use lscggm::solver::{FitMode, SolverOptions};

/// Estimator selector exposed on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Full latent sparse conditional estimator.
    Lscggm,
    /// Sparse conditional estimator (no latent component).
    Scggm,
    /// Joint low-rank-plus-sparse baseline with submatrix extraction.
    Lrps,
    /// Joint graphical lasso baseline with submatrix extraction.
    Glasso,
}

impl Mode {
    /// Whether the mode models Z and X jointly rather than conditionally.
    pub fn is_joint(self) -> bool {
        matches!(self, Mode::Lrps | Mode::Glasso)
    }

    /// Solver mode used on the (possibly joint-packed) covariance.
    pub fn fit_mode(self) -> FitMode {
        match self {
            Mode::Lscggm => FitMode::Full,
            Mode::Scggm => FitMode::NoLatent,
            Mode::Lrps => FitMode::NoConditioningJoint,
            Mode::Glasso => FitMode::NoLatent,
        }
    }

    pub fn keeps_latent(self) -> bool {
        matches!(self, Mode::Lscggm | Mode::Lrps)
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Lscggm => "lscggm",
            Mode::Scggm => "scggm",
            Mode::Lrps => "lrps",
            Mode::Glasso => "glasso",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyKind {
    Ratio01,
    Raw,
}

impl From<PenaltyKind> for Parametrisation {
    fn from(k: PenaltyKind) -> Self {
        match k {
            PenaltyKind::Ratio01 => Parametrisation::Ratio01,
            PenaltyKind::Raw => Parametrisation::Raw,
        }
    }
}

/// Solver flags shared by the fitting subcommands.
#[derive(Debug, Clone, Copy, clap::Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverFlags {
    /// Augmented-Lagrangian weight.
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    /// Per-entry primal/dual tolerance.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Outer iteration cap.
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    /// Inner proximal-solver tolerance.
    #[arg(long, default_value_t = 1e-8)]
    pub inner_tol: f64,
    /// Inner sweep cap.
    #[arg(long, default_value_t = 50)]
    pub inner_max_iter: usize,
    /// Disable adaptive rho rescaling.
    #[arg(long, default_value_t = false)]
    pub no_rho_adapt: bool,
}

impl Default for SolverFlags {
    fn default() -> Self {
        Self {
            rho: 1.0,
            tol: 1e-6,
            max_iter: 500,
            inner_tol: 1e-8,
            inner_max_iter: 50,
            no_rho_adapt: false,
        }
    }
}

impl SolverFlags {
    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            rho: self.rho,
            max_iter: self.max_iter,
            tol_primal: self.tol,
            tol_dual: self.tol,
            inner_max_iter: self.inner_max_iter,
            inner_tol: self.inner_tol,
            rho_adapt: !self.no_rho_adapt,
        }
    }
}

/// Parse a comma-separated list of reals.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for tok in text.split(',') {
        let tok = tok.trim();
        if tok.is_empty() {
            continue;
        }
        out.push(
            tok.parse::<f64>()
                .with_context(|| format!("invalid grid value '{tok}'"))?,
        );
    }
    if out.is_empty() {
        bail!("empty grid");
    }
    Ok(out)
}

/// Geometric grid from hi down to lo.
pub fn geometric_grid(hi: f64, lo: f64, count: usize) -> Result<Vec<f64>> {
    if !(hi > lo && lo > 0.0) {
        bail!("need hi > lo > 0 for a geometric grid");
    }
    if count < 2 {
        bail!("need at least two grid points");
    }
    let ratio = (lo / hi).powf(1.0 / (count as f64 - 1.0));
    Ok((0..count).map(|i| hi * ratio.powi(i as i32)).collect())
}

/// Merge a TOML override file into a config struct: the file's present keys
/// win. Unknown keys are rejected by the target's `deny_unknown_fields`.
pub fn apply_toml_overrides<T>(config: &T, path: &Path) -> Result<T>
where
    T: Serialize + serde::de::DeserializeOwned,
{
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))?;
    let overrides: toml::Value = toml::from_str(&text)
        .with_context(|| format!("parsing config file {}", path.display()))?;
    let mut base =
        toml::Value::try_from(config).context("serialising current configuration")?;
    merge_toml(&mut base, &overrides);
    base.try_into()
        .with_context(|| format!("applying config file {} (unknown or ill-typed key?)", path.display()))
}

fn merge_toml(base: &mut toml::Value, overrides: &toml::Value) {
    match (base, overrides) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge_toml(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

/// Refuse to reuse a non-empty output directory unless forced.
pub fn prepare_out_dir(out: &PathBuf, force: bool) -> Result<()> {
    if out.exists() {
        let non_empty = std::fs::read_dir(out)?.next().is_some();
        if non_empty && !force {
            bail!(
                "output directory {} is not empty (use --force to overwrite)",
                out.display()
            );
        }
    } else {
        std::fs::create_dir_all(out)?;
    }
    Ok(())
}
