//! Consensus ADMM for the penalised MLE.
//!
//! Splitting: variables (R, S, L, P) with constraints `R = S − L` (scaled
//! dual U) and `P = L_X` (scaled dual V). The R-update is the iterative loss
//! prox, the S-update entrywise soft-thresholding, the L-update
//! singular-value thresholding, and the P-update a PSD projection. The
//! L-subproblem's second quadratic only touches the X-block, so its target
//! reuses the previous Z-rows; this is the semi-proximal majorisation whose
//! fixed points coincide with the original problem's.

pub mod prox;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{self, CovarianceTriple, DecomposedParams, MarginalParams, PenaltyConfig};
use prox::{psd_project, soft_threshold_stacked, svt_prox, sym_eig};

pub use prox::{prox_loss, solve_rx_block, solve_rzx_block, soft_threshold, ProxOutcome};

/// Relative singular-value threshold defining the numerical rank of L̂.
pub const RANK_REL_TOL: f64 = 1e-8;

/// ADMM controls. Tolerances are per-entry: the stopping thresholds are
/// `tol_primal·√dim` and `tol_dual·√dim` with `dim` the number of scalar
/// consensus constraints.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub rho: f64,
    pub max_iter: usize,
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub inner_max_iter: usize,
    pub inner_tol: f64,
    /// Rescale ρ by 2 whenever one residual exceeds 10× the other.
    pub rho_adapt: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rho: 1.0,
            max_iter: 500,
            tol_primal: 1e-6,
            tol_dual: 1e-6,
            inner_max_iter: 50,
            inner_tol: 1e-8,
            rho_adapt: true,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) {
            return Err(Error::InvalidArgument("rho must be positive".into()));
        }
        if self.max_iter == 0 || self.inner_max_iter == 0 {
            return Err(Error::InvalidArgument(
                "max_iter and inner_max_iter must be at least 1".into(),
            ));
        }
        if !(self.tol_primal > 0.0 && self.tol_dual > 0.0 && self.inner_tol > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Which estimator variant to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    /// The full sparse + low-rank conditional estimator.
    Full,
    /// L forced to zero: the sparse conditional model.
    NoLatent,
    /// Joint modelling of (Z ∪ X): the caller packs the joint covariance
    /// into `sigma_x` with m = 0. With latent structure this is the
    /// low-rank-plus-sparse baseline; combined with `NoLatent` semantics it
    /// reduces to the graphical lasso.
    NoConditioningJoint,
}

/// All ADMM iterates: the marginal-shaped R, the stacked S and L, the PSD
/// consensus copy of L_X and the two scaled duals.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub r: MarginalParams,
    pub s: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub p_block: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    /// ρ at the final iteration (needed to unscale the duals).
    pub rho: f64,
}

/// Scaled-form residuals over both consensus constraints.
///
/// primal = √(‖R−S+L‖² + ‖P−L_X‖²);
/// dual = ρ·√(‖(S−S_prev) − (L−L_prev)‖² + ‖L_X − L_X,prev‖²).
pub fn admm_residuals(prev: &AdmmState, curr: &AdmmState, rho: f64) -> (f64, f64) {
    let p = curr.r.p();
    let r_stacked = curr.r.stacked();
    let gap = &r_stacked - &curr.s + &curr.l;
    let (l_x, _) = linalg::split(&curr.l, p);
    let primal = (gap.norm_squared() + (&curr.p_block - &l_x).norm_squared()).sqrt();

    let ds = (&curr.s - &prev.s) - (&curr.l - &prev.l);
    let (l_x_prev, _) = linalg::split(&prev.l, p);
    let dual = rho * (ds.norm_squared() + (&l_x - &l_x_prev).norm_squared()).sqrt();
    (primal, dual)
}

/// Converged estimate plus solver telemetry.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "FitResultJson", into = "FitResultJson")]
pub struct FitResult {
    pub params: DecomposedParams,
    pub objective: f64,
    pub iterations: usize,
    pub inner_iteration_counts: Vec<usize>,
    pub primal_residuals: Vec<f64>,
    pub dual_residuals: Vec<f64>,
    /// Numerical rank of the stacked L̂ at threshold 1e-8·σ_max.
    pub rank_l: usize,
    pub converged: bool,
    /// Split-form objective per iteration (solver telemetry, not serialised).
    pub objective_history: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct FitResultJson {
    s_x: Vec<Vec<f64>>,
    l_x: Vec<Vec<f64>>,
    s_zx: Vec<Vec<f64>>,
    l_zx: Vec<Vec<f64>>,
    objective: f64,
    iterations: usize,
    rank_l: usize,
    converged: bool,
    primal_residuals: Vec<f64>,
    dual_residuals: Vec<f64>,
}

impl From<FitResult> for FitResultJson {
    fn from(r: FitResult) -> Self {
        Self {
            s_x: linalg::to_rows(r.params.s_x()),
            l_x: linalg::to_rows(r.params.l_x()),
            s_zx: linalg::to_rows(r.params.s_zx()),
            l_zx: linalg::to_rows(r.params.l_zx()),
            objective: r.objective,
            iterations: r.iterations,
            rank_l: r.rank_l,
            converged: r.converged,
            primal_residuals: r.primal_residuals,
            dual_residuals: r.dual_residuals,
        }
    }
}

impl TryFrom<FitResultJson> for FitResult {
    type Error = Error;

    fn try_from(j: FitResultJson) -> Result<Self> {
        let p = j.s_x.len();
        let m = j.s_zx.len();
        let fix = |rows: &[Vec<f64>], r: usize, c: usize| -> Result<DMatrix<f64>> {
            if rows.is_empty() {
                Ok(DMatrix::zeros(r, c))
            } else {
                linalg::from_rows(rows)
            }
        };
        let params = DecomposedParams::new(
            linalg::from_rows(&j.s_x)?,
            linalg::from_rows(&j.l_x)?,
            fix(&j.s_zx, m, p)?,
            fix(&j.l_zx, m, p)?,
        )?;
        Ok(Self {
            params,
            objective: j.objective,
            iterations: j.iterations,
            inner_iteration_counts: Vec::new(),
            primal_residuals: j.primal_residuals,
            dual_residuals: j.dual_residuals,
            rank_l: j.rank_l,
            converged: j.converged,
            objective_history: Vec::new(),
        })
    }
}

/// Minimise the penalised objective by consensus ADMM.
pub fn fit(
    cov: &CovarianceTriple,
    pen: &PenaltyConfig,
    opts: &SolverOptions,
    mode: FitMode,
) -> Result<FitResult> {
    fit_with_state(cov, pen, opts, mode, None).map(|(r, _)| r)
}

/// As [`fit`], optionally warm-started, and returning the final ADMM state
/// (duals included) for certification.
pub fn fit_with_state(
    cov: &CovarianceTriple,
    pen: &PenaltyConfig,
    opts: &SolverOptions,
    mode: FitMode,
    init: Option<&DecomposedParams>,
) -> Result<(FitResult, AdmmState)> {
    pen.validate()?;
    opts.validate()?;
    if mode == FitMode::NoConditioningJoint && cov.m() != 0 {
        return Err(Error::InvalidArgument(
            "no_conditioning_joint mode expects the joint covariance packed into sigma_x with m = 0"
                .into(),
        ));
    }
    let p = cov.p();
    let m = cov.m();
    let latent = mode != FitMode::NoLatent;

    let mut s;
    let mut l;
    let mut r;
    match init {
        Some(dp) if dp.p() == p && dp.m() == m => {
            s = dp.s_stacked();
            l = if latent { dp.l_stacked() } else { DMatrix::zeros(m + p, p) };
            let r_x = linalg::split(&(&s - &l), p).0;
            r = match MarginalParams::new(r_x, linalg::split(&(&s - &l), p).1) {
                Ok(mp) => mp,
                Err(_) => default_marginal(p, m),
            };
        }
        _ => {
            s = linalg::stack(&DMatrix::identity(p, p), &DMatrix::zeros(m, p));
            l = DMatrix::zeros(m + p, p);
            r = default_marginal(p, m);
        }
    }
    let mut p_block = if latent {
        psd_project(&linalg::split(&l, p).0)
    } else {
        DMatrix::zeros(p, p)
    };
    let mut u = DMatrix::<f64>::zeros(m + p, p);
    let mut v = DMatrix::<f64>::zeros(p, p);
    let mut rho = opts.rho;

    let sigz = sym_eig(cov.sigma_z());
    let dim = ((m + p) * p + if latent { p * p } else { 0 }) as f64;
    let eps_primal = opts.tol_primal * dim.sqrt();
    let eps_dual = opts.tol_dual * dim.sqrt();

    let mut inner_counts = Vec::new();
    let mut primal_hist: Vec<f64> = Vec::new();
    let mut dual_hist = Vec::new();
    let mut objective_hist = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=opts.max_iter {
        let s_prev = s.clone();
        let l_prev = l.clone();

        let target_r = &s - &l - &u;
        // inexact ADMM: solve the prox loosely while the consensus gap is
        // large, tightening towards the configured inner tolerance
        let mut inner_opts = *opts;
        inner_opts.inner_tol = match primal_hist.last() {
            Some(&last) => (0.05 * last).clamp(opts.inner_tol, 1e-3),
            None => opts.inner_tol.max(1e-3),
        };
        let outcome = prox::prox_loss_with(&target_r, cov, rho, &r, &inner_opts, &sigz)?;
        r = outcome.params;
        inner_counts.push(outcome.sweeps);
        let r_stacked = r.stacked();

        let target_s = &r_stacked + &l + &u;
        s = soft_threshold_stacked(
            &target_s,
            pen.weight_l1() / rho,
            p,
            pen.exclude_diagonal,
        );

        if latent {
            let t1 = &s - &r_stacked - &u;
            let l_zx_prev = linalg::split(&l, p).1;
            let t2 = linalg::stack(&(&p_block + &v), &l_zx_prev);
            let target_l = (t1 + t2) * 0.5;
            l = svt_prox(&target_l, pen.weight_nuclear() / (2.0 * rho));
            let l_x = linalg::split(&l, p).0;
            p_block = psd_project(&(&l_x - &v));
            u += &r_stacked - &s + &l;
            v += &p_block - &l_x;
        } else {
            u += &r_stacked - &s;
        }
        iterations = iter;

        let gap = &r_stacked - &s + &l;
        let l_x = linalg::split(&l, p).0;
        let primal = (gap.norm_squared() + (&p_block - &l_x).norm_squared()).sqrt();
        let ds = (&s - &s_prev) - (&l - &l_prev);
        let l_x_prev = linalg::split(&l_prev, p).0;
        let dual = rho * (ds.norm_squared() + (&l_x - &l_x_prev).norm_squared()).sqrt();
        primal_hist.push(primal);
        dual_hist.push(dual);
        objective_hist.push(split_objective(&r, &s, &l, cov, pen)?);

        if primal <= eps_primal && dual <= eps_dual {
            converged = true;
            break;
        }
        // freeze ρ in the endgame so the prox thresholds stabilise and the
        // thresholding updates can settle on exact zeros
        let far_from_tol = primal > 10.0 * eps_primal || dual > 10.0 * eps_dual;
        if opts.rho_adapt && far_from_tol {
            if primal > 10.0 * dual && rho < 1e6 {
                rho *= 2.0;
                u /= 2.0;
                v /= 2.0;
            } else if dual > 10.0 * primal && rho > 1e-6 {
                rho /= 2.0;
                u *= 2.0;
                v *= 2.0;
            }
        }
    }

    let (s_x, s_zx) = linalg::split(&s, p);
    let (l_x_raw, mut l_zx) = linalg::split(&l, p);
    // an L whose spectral norm sits below the certified accuracy is
    // indistinguishable from zero; report it as exactly zero
    let l_x = if linalg::spectral_norm(&l) <= 10.0 * eps_primal {
        l_zx = DMatrix::zeros(m, p);
        DMatrix::zeros(p, p)
    } else {
        psd_project(&l_x_raw)
    };
    let params = match DecomposedParams::new(s_x, l_x.clone(), s_zx.clone(), l_zx.clone()) {
        Ok(ps) => ps,
        Err(_) => {
            // the consensus gap left S − L indefinite: rebuild S_X from the
            // strictly feasible R_X so the returned params honour their
            // invariants, and report the fit as not converged
            converged = false;
            DecomposedParams::new(r.r_x() + &l_x, l_x, s_zx, l_zx)?
        }
    };
    let objective = match model::objective(&params, cov, pen) {
        Ok(v) => v,
        Err(_) => split_objective(&r, &s, &l, cov, pen)?,
    };
    let rank_l = linalg::numerical_rank(&params.l_stacked(), RANK_REL_TOL);
    let result = FitResult {
        params,
        objective,
        iterations,
        inner_iteration_counts: inner_counts,
        primal_residuals: primal_hist,
        dual_residuals: dual_hist,
        rank_l,
        converged,
        objective_history: objective_hist,
    };
    let state = AdmmState { r, s, l, p_block, u, v, rho };
    Ok((result, state))
}

fn default_marginal(p: usize, m: usize) -> MarginalParams {
    MarginalParams::new(DMatrix::identity(p, p), DMatrix::zeros(m, p))
        .expect("identity marginal is feasible")
}

/// Objective in split form: smooth part at R, penalties at (S, L). Used for
/// iteration telemetry and as fallback when S − L is not yet PD.
fn split_objective(
    r: &MarginalParams,
    s: &DMatrix<f64>,
    l: &DMatrix<f64>,
    cov: &CovarianceTriple,
    pen: &PenaltyConfig,
) -> Result<f64> {
    let smooth = model::neg_log_likelihood(r, cov)?;
    let p = cov.p();
    let mut l1 = linalg::l1_norm(s);
    if pen.exclude_diagonal {
        for i in 0..p {
            l1 -= s[(i, i)].abs();
        }
    }
    Ok(smooth + pen.weight_l1() * l1 + pen.weight_nuclear() * linalg::nuclear_norm(l))
}

/// First-order certificate for a reported-converged fit.
#[derive(Debug, Clone, Serialize)]
pub struct KktReport {
    /// max over Ŝᵢⱼ ≠ 0 of |Gᵢⱼ + λγ·sign(Ŝᵢⱼ)|.
    pub l1_support_violation: f64,
    /// max over Ŝᵢⱼ = 0 of (|Gᵢⱼ| − λγ)₊.
    pub l1_bound_violation: f64,
    /// (σ_max of the tangent-complement part of G + [Λ; 0] − w_nuc)₊.
    pub nuclear_orth_violation: f64,
    /// ‖P_T(G + [Λ; 0]) − w_nuc·UVᵀ‖_∞ over the tangent space of L̂.
    /// Diagnostic only: tiny retained singular values amplify this
    /// direction-wise, so it is not part of the pass/fail certificate.
    pub nuclear_tangent_mismatch: f64,
}

impl KktReport {
    /// Largest violation among the subgradient conditions: ℓ₁ sign equality
    /// on the support, ℓ₁ bound off the support, nuclear-norm bound on the
    /// tangent complement.
    pub fn max_violation(&self) -> f64 {
        self.l1_support_violation
            .max(self.l1_bound_violation)
            .max(self.nuclear_orth_violation)
    }
}

/// Evaluate the subgradient optimality conditions at a fit. The smooth
/// gradient is taken at the consensus iterate R̂ (the strictly feasible prox
/// output whose stationarity the duals encode), the sparsity pattern from the
/// thresholded Ŝ, the tangent space from the raw singular-value-thresholded
/// L, and the PSD multiplier from the final scaled dual.
pub fn kkt_report(
    result: &FitResult,
    state: &AdmmState,
    cov: &CovarianceTriple,
    pen: &PenaltyConfig,
) -> Result<KktReport> {
    let params = &result.params;
    let p = params.p();
    let (gx, gzx) = model::nll_gradient(&state.r, cov)?;
    let g = linalg::stack(&gx, &gzx);
    let w1 = pen.weight_l1();
    let w_nuc = pen.weight_nuclear();

    let s = params.s_stacked();
    let mut support_violation = 0.0f64;
    let mut bound_violation = 0.0f64;
    for i in 0..s.nrows() {
        for j in 0..s.ncols() {
            if pen.exclude_diagonal && i == j && i < p {
                support_violation = support_violation.max(g[(i, j)].abs());
                continue;
            }
            if s[(i, j)] != 0.0 {
                support_violation =
                    support_violation.max((g[(i, j)] + w1 * s[(i, j)].signum()).abs());
            } else {
                bound_violation = bound_violation.max(g[(i, j)].abs() - w1);
            }
        }
    }
    bound_violation = bound_violation.max(0.0);

    // Multipliers recovered from the scaled duals. The symmetric part of
    // ρV is the PSD multiplier (clipped for numerical safety); the
    // antisymmetric parts of ρV and ρU are the free multipliers of the
    // symmetry constraints on L_X carried by the two consensus copies.
    // The gradient-verifiable content of the certificate stays in the
    // symmetric X and ZX components, which come from G.
    let y_v = &state.v * state.rho;
    let y_v_sym = linalg::symmetrized(&y_v);
    let y_u_x = state.u.view((0, 0), (p, p)).into_owned() * state.rho;
    let y_u_x_asym = &y_u_x - linalg::symmetrized(&y_u_x);
    let lambda_top = psd_project(&y_v_sym) + (&y_v - &y_v_sym) - y_u_x_asym;
    let mut msub = g.clone();
    let top = msub.view((0, 0), (p, p)).into_owned();
    msub.view_mut((0, 0), (p, p)).copy_from(&(top + &lambda_top));

    // the raw SVT output has exact zeros, so its rank is the active manifold
    let l_hat = &state.l;
    let svt_rank = if l_hat.is_empty() || l_hat.norm() == 0.0 {
        0
    } else {
        let sv = l_hat.clone().singular_values();
        let smax = sv.max();
        sv.iter().filter(|&&s| s > (1e-12 * smax).max(1e-14)).count()
    };
    let (orth, tangent) = if svt_rank == 0 {
        ((linalg::spectral_norm(&msub) - w_nuc).max(0.0), 0.0)
    } else {
        let svd = l_hat.clone().svd(true, true);
        let u_full = svd.u.expect("svd u");
        let v_t_full = svd.v_t.expect("svd v_t");
        let rank = svt_rank;
        let u_r = u_full.columns(0, rank).into_owned();
        let v_r = v_t_full.rows(0, rank).transpose();
        let pu = &u_r * u_r.transpose();
        let pv = &v_r * v_r.transpose();
        let tangent_part = &pu * &msub + &msub * &pv - &pu * &msub * &pv;
        let orth_part = &msub - &tangent_part;
        let mismatch = linalg::inf_norm(&(&tangent_part - &u_r * v_r.transpose() * w_nuc));
        (
            (linalg::spectral_norm(&orth_part) - w_nuc).max(0.0),
            mismatch,
        )
    };

    Ok(KktReport {
        l1_support_violation: support_violation,
        l1_bound_violation: bound_violation,
        nuclear_orth_violation: orth,
        nuclear_tangent_mismatch: tangent,
    })
}
