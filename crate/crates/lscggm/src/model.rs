//! Shared domain types, sample-covariance construction, the conditional
//! log-likelihood, its gradient, the penalised objective and ground-truth
//! marginalisation.
//!
//! The model: outputs X (p variables) given inputs Z (m variables), with the
//! conditional precision decomposed as `S_X − L_X` (sparse minus low-rank)
//! and the input effects as `S_ZX − L_ZX`. Stacked parameters put the X-block
//! on top: `S = [S_X; S_ZX]`, `L = [L_X; L_ZX]`, both (m+p)×p.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Entrywise symmetry tolerance accepted by validating constructors.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Most-negative eigenvalue accepted for nominally PSD matrices.
pub const PSD_EIG_TOL: f64 = -1e-10;

/// Sample second-moment matrices of one dataset: Σ_Z (m×m), Σ_X (p×p),
/// Σ_ZX (m×p), all (1/n)-normalised.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "CovarianceTripleJson", into = "CovarianceTripleJson")]
pub struct CovarianceTriple {
    sigma_z: DMatrix<f64>,
    sigma_x: DMatrix<f64>,
    sigma_zx: DMatrix<f64>,
    n: usize,
}

impl CovarianceTriple {
    /// Validates symmetry (1e-12 entrywise), PSD-ness (eigenvalues ≥ −1e-10)
    /// and mutual dimension consistency, then stores exactly symmetrised blocks.
    pub fn new(
        sigma_z: DMatrix<f64>,
        sigma_x: DMatrix<f64>,
        sigma_zx: DMatrix<f64>,
        n: usize,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample count n must be positive".into()));
        }
        let m = sigma_z.nrows();
        let p = sigma_x.nrows();
        if sigma_z.ncols() != m || sigma_x.ncols() != p {
            return Err(Error::DimensionMismatch(
                "sigma_z and sigma_x must be square".into(),
            ));
        }
        if sigma_zx.nrows() != m || sigma_zx.ncols() != p {
            return Err(Error::DimensionMismatch(format!(
                "sigma_zx is {}x{}, expected {m}x{p}",
                sigma_zx.nrows(),
                sigma_zx.ncols()
            )));
        }
        for (mat, name) in [(&sigma_z, "sigma_z"), (&sigma_x, "sigma_x")] {
            if linalg::asymmetry(mat) > SYMMETRY_TOL {
                return Err(Error::InvalidArgument(format!("{name} is not symmetric")));
            }
            if linalg::min_eigenvalue(mat) < PSD_EIG_TOL {
                return Err(Error::InvalidArgument(format!(
                    "{name} has an eigenvalue below {PSD_EIG_TOL}"
                )));
            }
        }
        Ok(Self {
            sigma_z: linalg::symmetrized(&sigma_z),
            sigma_x: linalg::symmetrized(&sigma_x),
            sigma_zx,
            n,
        })
    }

    pub fn sigma_z(&self) -> &DMatrix<f64> {
        &self.sigma_z
    }

    pub fn sigma_x(&self) -> &DMatrix<f64> {
        &self.sigma_x
    }

    pub fn sigma_zx(&self) -> &DMatrix<f64> {
        &self.sigma_zx
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of conditioning variables (inputs).
    pub fn m(&self) -> usize {
        self.sigma_z.nrows()
    }

    /// Number of modelled variables (outputs).
    pub fn p(&self) -> usize {
        self.sigma_x.nrows()
    }

    /// Joint (m+p)×(m+p) second-moment matrix `[[Σ_Z, Σ_ZX], [Σ_ZXᵀ, Σ_X]]`.
    pub fn joint(&self) -> DMatrix<f64> {
        let (m, p) = (self.m(), self.p());
        let mut out = DMatrix::<f64>::zeros(m + p, m + p);
        out.view_mut((0, 0), (m, m)).copy_from(&self.sigma_z);
        out.view_mut((0, m), (m, p)).copy_from(&self.sigma_zx);
        out.view_mut((m, 0), (p, m))
            .copy_from(&self.sigma_zx.transpose());
        out.view_mut((m, m), (p, p)).copy_from(&self.sigma_x);
        out
    }

    /// Repackage the joint second-moment matrix as a triple with m = 0,
    /// the form consumed by joint-modelling baselines.
    pub fn as_joint_output_only(&self) -> Result<Self> {
        let d = self.m() + self.p();
        Self::new(
            DMatrix::zeros(0, 0),
            self.joint(),
            DMatrix::zeros(0, d),
            self.n,
        )
    }
}

#[derive(Serialize, Deserialize)]
struct CovarianceTripleJson {
    n: usize,
    m: usize,
    p: usize,
    sigma_z: Vec<Vec<f64>>,
    sigma_x: Vec<Vec<f64>>,
    sigma_zx: Vec<Vec<f64>>,
}

impl From<CovarianceTriple> for CovarianceTripleJson {
    fn from(c: CovarianceTriple) -> Self {
        Self {
            n: c.n,
            m: c.m(),
            p: c.p(),
            sigma_z: linalg::to_rows(&c.sigma_z),
            sigma_x: linalg::to_rows(&c.sigma_x),
            sigma_zx: linalg::to_rows(&c.sigma_zx),
        }
    }
}

impl TryFrom<CovarianceTripleJson> for CovarianceTriple {
    type Error = Error;

    fn try_from(j: CovarianceTripleJson) -> Result<Self> {
        let sigma_z = linalg::from_rows(&j.sigma_z)?;
        let sigma_x = linalg::from_rows(&j.sigma_x)?;
        let mut sigma_zx = linalg::from_rows(&j.sigma_zx)?;
        if j.m == 0 || j.p == 0 {
            // an empty nested array loses one dimension
            sigma_zx = DMatrix::zeros(j.m, j.p);
        }
        if sigma_z.nrows() != j.m || sigma_x.nrows() != j.p {
            return Err(Error::DimensionMismatch(
                "declared m/p do not match matrix shapes".into(),
            ));
        }
        Self::new(sigma_z, sigma_x, sigma_zx, j.n)
    }
}

/// The marginal parameters the likelihood sees: `R_X = S_X − L_X` (PD) and
/// `R_ZX = S_ZX − L_ZX`.
#[derive(Debug, Clone)]
pub struct MarginalParams {
    r_x: DMatrix<f64>,
    r_zx: DMatrix<f64>,
}

impl MarginalParams {
    /// Symmetrises `r_x` and checks strict positive definiteness.
    pub fn new(r_x: DMatrix<f64>, r_zx: DMatrix<f64>) -> Result<Self> {
        let p = r_x.nrows();
        if r_x.ncols() != p {
            return Err(Error::DimensionMismatch("r_x must be square".into()));
        }
        if r_zx.ncols() != p {
            return Err(Error::DimensionMismatch(format!(
                "r_zx has {} columns, expected {p}",
                r_zx.ncols()
            )));
        }
        let r_x = linalg::symmetrized(&r_x);
        if r_x.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("r_x"));
        }
        Ok(Self { r_x, r_zx })
    }

    pub fn r_x(&self) -> &DMatrix<f64> {
        &self.r_x
    }

    pub fn r_zx(&self) -> &DMatrix<f64> {
        &self.r_zx
    }

    pub fn p(&self) -> usize {
        self.r_x.nrows()
    }

    pub fn m(&self) -> usize {
        self.r_zx.nrows()
    }

    /// Stacked (m+p)×p view `[R_X; R_ZX]`.
    pub fn stacked(&self) -> DMatrix<f64> {
        linalg::stack(&self.r_x, &self.r_zx)
    }
}

/// The estimate quadruple (S_X, L_X, S_ZX, L_ZX). Stacked views are derived,
/// never stored.
#[derive(Debug, Clone)]
pub struct DecomposedParams {
    s_x: DMatrix<f64>,
    l_x: DMatrix<f64>,
    s_zx: DMatrix<f64>,
    l_zx: DMatrix<f64>,
}

impl DecomposedParams {
    /// Symmetrises the X-blocks, then checks `S_X − L_X ≻ 0` and `L_X ⪰ 0`
    /// (eigenvalues ≥ −1e-10).
    pub fn new(
        s_x: DMatrix<f64>,
        l_x: DMatrix<f64>,
        s_zx: DMatrix<f64>,
        l_zx: DMatrix<f64>,
    ) -> Result<Self> {
        let p = s_x.nrows();
        if s_x.ncols() != p || l_x.nrows() != p || l_x.ncols() != p {
            return Err(Error::DimensionMismatch("s_x and l_x must be p x p".into()));
        }
        let m = s_zx.nrows();
        if l_zx.nrows() != m || s_zx.ncols() != p || l_zx.ncols() != p {
            return Err(Error::DimensionMismatch("s_zx and l_zx must be m x p".into()));
        }
        let s_x = linalg::symmetrized(&s_x);
        let l_x = linalg::symmetrized(&l_x);
        if (&s_x - &l_x).cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("s_x - l_x"));
        }
        if linalg::min_eigenvalue(&l_x) < PSD_EIG_TOL {
            return Err(Error::InvalidArgument(
                "l_x has an eigenvalue below -1e-10".into(),
            ));
        }
        Ok(Self { s_x, l_x, s_zx, l_zx })
    }

    pub fn s_x(&self) -> &DMatrix<f64> {
        &self.s_x
    }

    pub fn l_x(&self) -> &DMatrix<f64> {
        &self.l_x
    }

    pub fn s_zx(&self) -> &DMatrix<f64> {
        &self.s_zx
    }

    pub fn l_zx(&self) -> &DMatrix<f64> {
        &self.l_zx
    }

    pub fn p(&self) -> usize {
        self.s_x.nrows()
    }

    pub fn m(&self) -> usize {
        self.s_zx.nrows()
    }

    /// Stacked sparse component `S = [S_X; S_ZX]`, (m+p)×p.
    pub fn s_stacked(&self) -> DMatrix<f64> {
        linalg::stack(&self.s_x, &self.s_zx)
    }

    /// Stacked low-rank component `L = [L_X; L_ZX]`, (m+p)×p.
    pub fn l_stacked(&self) -> DMatrix<f64> {
        linalg::stack(&self.l_x, &self.l_zx)
    }

    /// The marginal parameters `(S_X − L_X, S_ZX − L_ZX)`.
    pub fn marginal(&self) -> Result<MarginalParams> {
        MarginalParams::new(&self.s_x - &self.l_x, &self.s_zx - &self.l_zx)
    }
}

/// How (λ, γ) parametrise the penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parametrisation {
    /// λ(γ‖S‖₁ + (1−γ)‖L‖_*), γ ∈ (0, 1).
    Ratio01,
    /// λ(γ‖S‖₁ + ‖L‖_*), γ > 0.
    Raw,
}

/// Penalty configuration of the regularised MLE.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub lambda: f64,
    pub gamma: f64,
    pub parametrisation: Parametrisation,
    /// Exclude the diagonal of S_X from the ℓ₁ penalty. Default false: the
    /// stacked ‖S‖₁ penalises the diagonal too.
    #[serde(default)]
    pub exclude_diagonal: bool,
}

impl PenaltyConfig {
    pub fn new(lambda: f64, gamma: f64, parametrisation: Parametrisation) -> Result<Self> {
        let cfg = Self { lambda, gamma, parametrisation, exclude_diagonal: false };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn raw(lambda: f64, gamma: f64) -> Result<Self> {
        Self::new(lambda, gamma, Parametrisation::Raw)
    }

    pub fn ratio01(lambda: f64, gamma: f64) -> Result<Self> {
        Self::new(lambda, gamma, Parametrisation::Ratio01)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidArgument("lambda must be >= 0".into()));
        }
        match self.parametrisation {
            Parametrisation::Ratio01 => {
                if !(self.gamma > 0.0 && self.gamma < 1.0) {
                    return Err(Error::InvalidArgument(
                        "ratio01 parametrisation requires 0 < gamma < 1".into(),
                    ));
                }
            }
            Parametrisation::Raw => {
                if !(self.gamma > 0.0) {
                    return Err(Error::InvalidArgument(
                        "raw parametrisation requires gamma > 0".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Weight multiplying ‖S‖₁.
    pub fn weight_l1(&self) -> f64 {
        self.lambda * self.gamma
    }

    /// Weight multiplying ‖L‖_*.
    pub fn weight_nuclear(&self) -> f64 {
        match self.parametrisation {
            Parametrisation::Ratio01 => self.lambda * (1.0 - self.gamma),
            Parametrisation::Raw => self.lambda,
        }
    }
}

/// Nominal model: joint precision blocks over (X, H) plus the input effects,
/// with the marginalised `(S*, L*)` derived at construction.
#[derive(Debug, Clone)]
pub struct GroundTruthModel {
    m_x: DMatrix<f64>,
    m_xh: DMatrix<f64>,
    m_h: DMatrix<f64>,
    m_zx: DMatrix<f64>,
    m_zh: DMatrix<f64>,
    s_star: DMatrix<f64>,
    l_star: DMatrix<f64>,
}

impl GroundTruthModel {
    /// Validates that the joint (X, H) precision is positive definite and
    /// that dimensions are mutually consistent.
    pub fn new(
        m_x: DMatrix<f64>,
        m_xh: DMatrix<f64>,
        m_h: DMatrix<f64>,
        m_zx: DMatrix<f64>,
        m_zh: DMatrix<f64>,
    ) -> Result<Self> {
        let p = m_x.nrows();
        let h = m_h.nrows();
        let m = m_zx.nrows();
        if m_x.ncols() != p || m_h.ncols() != h {
            return Err(Error::DimensionMismatch("m_x and m_h must be square".into()));
        }
        if m_xh.nrows() != p || m_xh.ncols() != h {
            return Err(Error::DimensionMismatch(format!(
                "m_xh is {}x{}, expected {p}x{h}",
                m_xh.nrows(),
                m_xh.ncols()
            )));
        }
        if m_zx.ncols() != p || m_zh.nrows() != m || m_zh.ncols() != h {
            return Err(Error::DimensionMismatch(
                "m_zx must be m x p and m_zh must be m x h".into(),
            ));
        }
        let joint = joint_precision(&m_x, &m_xh, &m_h);
        if joint.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("joint (X,H) precision"));
        }
        let (s_star, l_star) = marginalize_parts(&m_x, &m_xh, &m_h, &m_zx, &m_zh)?;
        Ok(Self { m_x, m_xh, m_h, m_zx, m_zh, s_star, l_star })
    }

    pub fn m_x(&self) -> &DMatrix<f64> {
        &self.m_x
    }

    pub fn m_xh(&self) -> &DMatrix<f64> {
        &self.m_xh
    }

    pub fn m_h(&self) -> &DMatrix<f64> {
        &self.m_h
    }

    pub fn m_zx(&self) -> &DMatrix<f64> {
        &self.m_zx
    }

    pub fn m_zh(&self) -> &DMatrix<f64> {
        &self.m_zh
    }

    /// Marginalised stacked `S* = [S*_X; S*_ZX]`.
    pub fn s_star(&self) -> &DMatrix<f64> {
        &self.s_star
    }

    /// Marginalised stacked `L* = [L*_X; L*_ZX]`.
    pub fn l_star(&self) -> &DMatrix<f64> {
        &self.l_star
    }

    pub fn p(&self) -> usize {
        self.m_x.nrows()
    }

    pub fn h(&self) -> usize {
        self.m_h.nrows()
    }

    pub fn m(&self) -> usize {
        self.m_zx.nrows()
    }

    /// Joint (p+h)×(p+h) precision over (X, H).
    pub fn joint_precision(&self) -> DMatrix<f64> {
        joint_precision(&self.m_x, &self.m_xh, &self.m_h)
    }
}

fn joint_precision(m_x: &DMatrix<f64>, m_xh: &DMatrix<f64>, m_h: &DMatrix<f64>) -> DMatrix<f64> {
    let p = m_x.nrows();
    let h = m_h.nrows();
    let mut joint = DMatrix::<f64>::zeros(p + h, p + h);
    joint.view_mut((0, 0), (p, p)).copy_from(m_x);
    if h > 0 {
        joint.view_mut((0, p), (p, h)).copy_from(m_xh);
        joint.view_mut((p, 0), (h, p)).copy_from(&m_xh.transpose());
        joint.view_mut((p, p), (h, h)).copy_from(m_h);
    }
    joint
}

fn marginalize_parts(
    m_x: &DMatrix<f64>,
    m_xh: &DMatrix<f64>,
    m_h: &DMatrix<f64>,
    m_zx: &DMatrix<f64>,
    m_zh: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let p = m_x.nrows();
    let h = m_h.nrows();
    let m = m_zx.nrows();
    let (l_x, l_zx) = if h == 0 {
        (DMatrix::zeros(p, p), DMatrix::zeros(m, p))
    } else {
        let chol = m_h
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("m_h"))?;
        // M_H^{-1} M_XHᵀ, solved once and reused by both blocks
        let hinv_xh_t = chol.solve(&m_xh.transpose());
        let l_x = linalg::symmetrized(&(m_xh * &hinv_xh_t));
        let l_zx = m_zh * &hinv_xh_t;
        (l_x, l_zx)
    };
    let s_star = linalg::stack(m_x, m_zx);
    let l_star = linalg::stack(&l_x, &l_zx);
    Ok((s_star, l_star))
}

/// (1/n)-normalised sample second moments of already-centred data.
///
/// `data_z` is n×m, `data_x` is n×p; rows are observations.
pub fn sample_covariances(data_z: &DMatrix<f64>, data_x: &DMatrix<f64>) -> Result<CovarianceTriple> {
    let n = data_x.nrows();
    if data_z.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "data_z has {} rows, data_x has {n}",
            data_z.nrows()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one observation".into()));
    }
    if data_z.iter().chain(data_x.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("data contains non-finite values".into()));
    }
    let inv_n = 1.0 / n as f64;
    let sigma_z = linalg::symmetrized(&(data_z.transpose() * data_z * inv_n));
    let sigma_x = linalg::symmetrized(&(data_x.transpose() * data_x * inv_n));
    let sigma_zx = data_z.transpose() * data_x * inv_n;
    CovarianceTriple::new(sigma_z, sigma_x, sigma_zx, n)
}

/// Negated conditional log-likelihood:
/// `−ℓ = −logdet R_X + Tr(Σ_X R_X) + 2 Tr(Σ_ZX R_ZXᵀ) + Tr(R_X⁻¹ R_ZXᵀ Σ_Z R_ZX)`.
///
/// Uses a single Cholesky factorisation of `R_X`; a non-PD `R_X` is a domain
/// error, never +∞.
pub fn neg_log_likelihood(params: &MarginalParams, cov: &CovarianceTriple) -> Result<f64> {
    check_dims(params.p(), params.m(), cov)?;
    let chol = params
        .r_x
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("r_x"))?;
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let mut value = -logdet + cov.sigma_x().dot(&params.r_x);
    if cov.m() > 0 {
        let sig_z_rzx = cov.sigma_z() * &params.r_zx; // m×p
        let c = params.r_zx.transpose() * &sig_z_rzx; // p×p PSD
        let rinv_c = chol.solve(&c);
        value += 2.0 * cov.sigma_zx().dot(&params.r_zx) + rinv_c.trace();
    }
    if !value.is_finite() {
        return Err(Error::Numerical("non-finite likelihood value".into()));
    }
    Ok(value)
}

/// Analytic gradient of [`neg_log_likelihood`] with respect to (R_X, R_ZX):
/// `∇_{R_X} = −R_X⁻¹ + Σ_X − R_X⁻¹ R_ZXᵀ Σ_Z R_ZX R_X⁻¹`,
/// `∇_{R_ZX} = 2Σ_ZX + 2Σ_Z R_ZX R_X⁻¹`.
pub fn nll_gradient(
    params: &MarginalParams,
    cov: &CovarianceTriple,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_dims(params.p(), params.m(), cov)?;
    let chol = params
        .r_x
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("r_x"))?;
    let r_inv = chol.inverse();
    let mut grad_x = cov.sigma_x() - &r_inv;
    let grad_zx = if cov.m() > 0 {
        let sig_z_rzx = cov.sigma_z() * &params.r_zx; // m×p
        let c = params.r_zx.transpose() * &sig_z_rzx; // p×p PSD
        grad_x -= &r_inv * &c * &r_inv;
        cov.sigma_zx() * 2.0 + sig_z_rzx * &r_inv * 2.0
    } else {
        DMatrix::zeros(0, params.p())
    };
    grad_x = linalg::symmetrized(&grad_x);
    if grad_x.iter().any(|v| !v.is_finite()) || grad_zx.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite gradient".into()));
    }
    Ok((grad_x, grad_zx))
}

/// ℓ₁ penalty term over the stacked S, honouring the diagonal-exclusion flag.
pub fn l1_penalty_term(params: &DecomposedParams, pen: &PenaltyConfig) -> f64 {
    let mut total = linalg::l1_norm(&params.s_x) + linalg::l1_norm(&params.s_zx);
    if pen.exclude_diagonal {
        total -= params.s_x.diagonal().iter().map(|v| v.abs()).sum::<f64>();
    }
    total
}

/// Full penalised objective: `neg_log_likelihood(S−L) + λ-weighted penalties`.
pub fn objective(
    params: &DecomposedParams,
    cov: &CovarianceTriple,
    pen: &PenaltyConfig,
) -> Result<f64> {
    pen.validate()?;
    let marginal = params.marginal()?;
    let smooth = neg_log_likelihood(&marginal, cov)?;
    let nuclear = linalg::nuclear_norm(&params.l_stacked());
    Ok(smooth + pen.weight_l1() * l1_penalty_term(params, pen) + pen.weight_nuclear() * nuclear)
}

/// Marginalise a nominal model:
/// `S* = [M*_X; M*_ZX]`, `L* = [M*_XH M*_H⁻¹ M*_XHᵀ; M*_ZH M*_H⁻¹ M*_XHᵀ]`.
pub fn marginalize_ground_truth(model: &GroundTruthModel) -> (DMatrix<f64>, DMatrix<f64>) {
    marginalize_parts(&model.m_x, &model.m_xh, &model.m_h, &model.m_zx, &model.m_zh)
        .expect("model was validated at construction")
}

fn check_dims(p: usize, m: usize, cov: &CovarianceTriple) -> Result<()> {
    if cov.p() != p || cov.m() != m {
        return Err(Error::DimensionMismatch(format!(
            "params are (p={p}, m={m}) but covariances are (p={}, m={})",
            cov.p(),
            cov.m()
        )));
    }
    Ok(())
}
