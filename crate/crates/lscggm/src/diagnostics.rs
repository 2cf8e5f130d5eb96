//! Identifiability quantities of the low-rank-plus-sparse decomposition and
//! the consistency-theorem scalings.
//!
//! ξ(T(L)) is computed exactly through the dual-norm identity
//! `max_{N∈T, ‖N‖₂≤1} ⟨e_i e_jᵀ, N⟩ = ‖P_T(e_i e_jᵀ)‖_*`; μ(Ω(S)) exactly by
//! vertex enumeration for supports of at most 16 entries and by a monotone
//! alternating ascent (a certified lower bound) otherwise.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::CovarianceTriple;

/// Singular values below this fraction of σ_max do not count towards the
/// tangent space.
const TANGENT_RANK_TOL: f64 = 1e-10;

/// Support capacity of the exact μ branch (2^16 sign patterns).
pub const MU_EXACT_MAX_SUPPORT: usize = 16;

/// Row- and column-space projectors of a matrix at the tangent rank
/// threshold.
fn space_projectors(l: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if l.is_empty() || l.norm() == 0.0 {
        return Err(Error::InvalidArgument(
            "tangent space of the zero matrix is degenerate".into(),
        ));
    }
    let svd = l.clone().svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let smax = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > TANGENT_RANK_TOL * smax)
        .count();
    let u_r = u.columns(0, rank).into_owned();
    let v_r = v_t.rows(0, rank).transpose();
    Ok((&u_r * u_r.transpose(), &v_r * v_r.transpose()))
}

/// Project `target` onto the tangent space of the rank variety at `l`:
/// `P_T(N) = P_U N + N P_V − P_U N P_V`.
pub fn tangent_project(l: &DMatrix<f64>, target: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if l.shape() != target.shape() {
        return Err(Error::DimensionMismatch(
            "target must have the shape of l".into(),
        ));
    }
    let (pu, pv) = space_projectors(l)?;
    Ok(&pu * target + target * &pv - &pu * target * &pv)
}

/// ξ(T(L)): the largest entry magnitude achievable by a unit-spectral-norm
/// tangent element, computed exactly as `max_{ij} ‖P_T(e_i e_jᵀ)‖_*`.
pub fn xi_tangent(l: &DMatrix<f64>) -> Result<f64> {
    let (pu, pv) = space_projectors(l)?;
    let (rows, cols) = l.shape();
    let mut best = 0.0f64;
    for i in 0..rows {
        for j in 0..cols {
            // P_T(e_i e_jᵀ) = a e_jᵀ + e_i bᵀ − a bᵀ with a = P_U e_i, b = P_V e_j
            let a = pu.column(i).into_owned();
            let b = pv.column(j).into_owned();
            let mut mat = DMatrix::<f64>::zeros(rows, cols);
            for r in 0..rows {
                mat[(r, j)] += a[r];
            }
            for c in 0..cols {
                mat[(i, c)] += b[c];
            }
            mat -= &a * b.transpose();
            best = best.max(linalg::nuclear_norm(&mat));
        }
    }
    // ‖N‖_∞ ≤ ‖N‖₂ caps the true value at 1; the subspace-restricted dual
    // value ‖P_T(E)‖_* can overshoot it when row and column spaces correlate
    Ok(best.min(1.0))
}

/// Randomised lower bound on ξ: max entry magnitude over random tangent
/// elements normalised to unit spectral norm.
pub fn xi_sampling_lower_bound(l: &DMatrix<f64>, samples: usize, seed: u64) -> Result<f64> {
    let (pu, pv) = space_projectors(l)?;
    let (rows, cols) = l.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    for _ in 0..samples {
        let g = DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let n = &pu * &g + &g * &pv - &pu * &g * &pv;
        let spec = linalg::spectral_norm(&n);
        if spec > 1e-14 {
            best = best.max(linalg::inf_norm(&n) / spec);
        }
    }
    Ok(best)
}

fn support(s: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..s.nrows() {
        for j in 0..s.ncols() {
            if s[(i, j)] != 0.0 {
                out.push((i, j));
            }
        }
    }
    out
}

/// Exact μ(Ω(S)) by enumerating ±1 sign assignments over the support (the
/// maximum of a convex function over a box sits at a vertex). Only feasible
/// for supports of at most [`MU_EXACT_MAX_SUPPORT`] entries.
pub fn mu_omega_enumerated(s: &DMatrix<f64>) -> Result<f64> {
    let omega = support(s);
    if omega.is_empty() {
        return Err(Error::InvalidArgument("mu of the zero matrix".into()));
    }
    if omega.len() > MU_EXACT_MAX_SUPPORT {
        return Err(Error::InvalidArgument(format!(
            "support size {} exceeds the exact-enumeration cap {MU_EXACT_MAX_SUPPORT}",
            omega.len()
        )));
    }
    let mut best = 0.0f64;
    // M and −M share a spectral norm: pin the first support entry to +1
    let patterns = 1usize << (omega.len() - 1);
    let mut mat = DMatrix::<f64>::zeros(s.nrows(), s.ncols());
    for bits in 0..patterns {
        mat.fill(0.0);
        mat[omega[0]] = 1.0;
        for (k, &idx) in omega.iter().enumerate().skip(1) {
            mat[idx] = if (bits >> (k - 1)) & 1 == 1 { 1.0 } else { -1.0 };
        }
        best = best.max(linalg::spectral_norm(&mat));
    }
    Ok(best)
}

/// Lower bound on μ(Ω(S)) by monotone alternating ascent from several sign
/// starts: the top singular pair (u, v) yields the next vertex sign(u vᵀ)
/// restricted to the support, which never decreases the spectral norm.
pub fn mu_omega_ascent(s: &DMatrix<f64>) -> Result<f64> {
    let omega = support(s);
    if omega.is_empty() {
        return Err(Error::InvalidArgument("mu of the zero matrix".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut starts: Vec<DMatrix<f64>> = Vec::new();
    let mut base = DMatrix::<f64>::zeros(s.nrows(), s.ncols());
    for &idx in &omega {
        base[idx] = s[idx].signum();
    }
    starts.push(base.clone());
    base.fill(0.0);
    for &idx in &omega {
        base[idx] = 1.0;
    }
    starts.push(base.clone());
    for _ in 0..6 {
        let mut m = DMatrix::<f64>::zeros(s.nrows(), s.ncols());
        for &idx in &omega {
            m[idx] = if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
        starts.push(m);
    }

    let mut best = 0.0f64;
    for mut m in starts {
        let mut last = linalg::spectral_norm(&m);
        for _ in 0..100 {
            let svd = m.clone().svd(true, true);
            let u = svd.u.expect("svd u");
            let v_t = svd.v_t.expect("svd v_t");
            let mut next = DMatrix::<f64>::zeros(s.nrows(), s.ncols());
            for &(i, j) in &omega {
                let w = u[(i, 0)] * v_t[(0, j)];
                next[(i, j)] = if w >= 0.0 { 1.0 } else { -1.0 };
            }
            let val = linalg::spectral_norm(&next);
            if val <= last + 1e-12 {
                break;
            }
            m = next;
            last = val;
        }
        best = best.max(last);
    }
    Ok(best)
}

/// μ(Ω(S)) with an exactness flag: exact for supports of at most 16 entries,
/// otherwise the ascent lower bound.
pub fn mu_omega(s: &DMatrix<f64>) -> Result<(f64, bool)> {
    if support(s).len() <= MU_EXACT_MAX_SUPPORT {
        Ok((mu_omega_enumerated(s)?, true))
    } else {
        Ok((mu_omega_ascent(s)?, false))
    }
}

/// Admissible γ interval: low = 3ξ/𝒞, high = 𝒞/(2μ); feasible iff ξμ ≤ 𝒞²/6.
pub fn gamma_range(xi: f64, mu: f64, c_const: f64) -> (f64, f64, bool) {
    let low = 3.0 * xi / c_const;
    let high = c_const / (2.0 * mu);
    (low, high, low <= high)
}

/// Identifiability scorecard of one nominal model.
#[derive(Debug, Clone, Serialize)]
pub struct IdentifiabilityReport {
    pub xi: f64,
    pub mu: f64,
    pub mu_is_exact: bool,
    /// ξ·μ ≤ 𝒞²/6.
    pub product_bound_ok: bool,
    pub gamma_low: f64,
    pub gamma_high: f64,
    /// Configured stand-in for the FIM-dependent constant (not a paper value).
    pub c_const: f64,
}

/// Assemble the report for marginalised (S*, L*).
pub fn identifiability_report(
    s_star: &DMatrix<f64>,
    l_star: &DMatrix<f64>,
    c_const: f64,
) -> Result<IdentifiabilityReport> {
    if !(c_const > 0.0) {
        return Err(Error::InvalidArgument("c_const must be positive".into()));
    }
    let xi = xi_tangent(l_star)?;
    let (mu, mu_is_exact) = mu_omega(s_star)?;
    let (gamma_low, gamma_high, feasible) = gamma_range(xi, mu, c_const);
    Ok(IdentifiabilityReport {
        xi,
        mu,
        mu_is_exact,
        product_bound_ok: feasible,
        gamma_low,
        gamma_high,
        c_const,
    })
}

/// Placeholder constants of the consistency statement; all default to 1.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct QConstants {
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    pub q4: f64,
    pub q5: f64,
    pub q6: f64,
}

impl Default for QConstants {
    fn default() -> Self {
        Self { q1: 1.0, q2: 1.0, q3: 1.0, q4: 1.0, q5: 1.0, q6: 1.0 }
    }
}

impl QConstants {
    pub fn validate(&self) -> Result<()> {
        for q in [self.q1, self.q2, self.q3, self.q4, self.q5, self.q6] {
            if !(q > 0.0) {
                return Err(Error::InvalidArgument("Q constants must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Scaling quantities of the consistency statement, evaluated verbatim with
/// the configured placeholder constants.
#[derive(Debug, Clone, Serialize)]
pub struct TheoremQuantities {
    pub psi_z: f64,
    pub psi_x_star: f64,
    pub phi_zx_star: f64,
    pub psi: f64,
    pub w: f64,
    pub big_m: f64,
    pub lambda_n: f64,
    pub q_constants: QConstants,
    /// Sample-size requirement n ≥ pM/ξ⁴ · max(2, 256ψ*²/W²).
    pub n_required: f64,
    /// Minimum nonzero singular value of L* must reach Q₄λ_n/ξ².
    pub sigma_min_threshold: f64,
}

impl TheoremQuantities {
    /// Minimum magnitude nonzero entry of S* must reach Q₅λ_n/μ.
    pub fn theta_min_threshold(&self, mu: f64) -> f64 {
        self.q_constants.q5 * self.lambda_n / mu
    }
}

/// Evaluate ψ_Z, ψ*_X, φ*_ZX, ψ, W, M and λ_n for a marginalised truth and a
/// sample covariance triple.
pub fn theorem_quantities(
    s_star: &DMatrix<f64>,
    l_star: &DMatrix<f64>,
    cov: &CovarianceTriple,
    xi: f64,
    q: &QConstants,
) -> Result<TheoremQuantities> {
    q.validate()?;
    if !(xi > 0.0) {
        return Err(Error::InvalidArgument("xi must be positive".into()));
    }
    let p = cov.p();
    let m = cov.m();
    let n = cov.n() as f64;
    let (s_x, _) = linalg::split(s_star, p);
    let (l_x, _) = linalg::split(l_star, p);
    let marg = &s_x - &l_x;
    let marg_inv = marg
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("S*_X - L*_X"))?
        .inverse();

    let psi_z = linalg::spectral_norm(cov.sigma_z());
    let psi_x_star = linalg::spectral_norm(&marg_inv);
    let r_zx = linalg::split(s_star, p).1 - linalg::split(l_star, p).1;
    let phi_zx_star = linalg::spectral_norm(&r_zx);
    let psi = 1.5
        * psi_x_star
        * (1.0 + 2.0 * (psi_z / psi_x_star) * (1.0 + 2.25 * psi_x_star * phi_zx_star).powi(2))
            .sqrt();
    let w = q.q1
        * (1.0 / (6.0 * psi_x_star))
            .min(phi_zx_star / 4.0)
            .min(q.q2 / (psi_x_star * psi * psi));
    let big_m = 1.0f64.max(psi_z / (4.0 * psi_x_star) * (1.0 + (m as f64 / p as f64).sqrt()).powi(2));
    let lambda_n = q.q3 / xi * (256.0 * psi_x_star * psi_x_star * p as f64 * big_m / n).sqrt();
    let n_required = if w > 0.0 {
        p as f64 * big_m / xi.powi(4) * 2.0f64.max(256.0 * psi_x_star * psi_x_star / (w * w))
    } else {
        f64::INFINITY
    };
    let sigma_min_threshold = q.q4 * lambda_n / (xi * xi);
    Ok(TheoremQuantities {
        psi_z,
        psi_x_star,
        phi_zx_star,
        psi,
        w,
        big_m,
        lambda_n,
        q_constants: *q,
        n_required,
        sigma_min_threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn embedded_unit(rows: usize, cols: usize, i: usize, j: usize) -> DMatrix<f64> {
        let mut m = DMatrix::<f64>::zeros(rows, cols);
        m[(i, j)] = 1.0;
        m
    }

    #[test]
    fn tangent_project_disjoint_unit_is_zero() {
        let l = embedded_unit(5, 3, 0, 0);
        let target = embedded_unit(5, 3, 1, 1);
        let proj = tangent_project(&l, &target).unwrap();
        assert!(linalg::inf_norm(&proj) < 1e-14);
    }

    #[test]
    fn tangent_project_fixes_l() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = DMatrix::from_fn(5, 2, |_, _| rng.random::<f64>() - 0.5);
        let b = DMatrix::from_fn(3, 2, |_, _| rng.random::<f64>() - 0.5);
        let l = &a * b.transpose(); // rank 2
        let proj = tangent_project(&l, &l).unwrap();
        assert!(linalg::frob_dist(&proj, &l) < 1e-12);
    }

    #[test]
    fn tangent_project_idempotent_and_self_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = DMatrix::from_fn(4, 1, |_, _| rng.random::<f64>() - 0.5);
        let b = DMatrix::from_fn(3, 1, |_, _| rng.random::<f64>() - 0.5);
        let l = &a * b.transpose();
        let n1 = DMatrix::from_fn(4, 3, |_, _| rng.random::<f64>() - 0.5);
        let n2 = DMatrix::from_fn(4, 3, |_, _| rng.random::<f64>() - 0.5);
        let p1 = tangent_project(&l, &n1).unwrap();
        let pp1 = tangent_project(&l, &p1).unwrap();
        assert!(linalg::frob_dist(&p1, &pp1) < 1e-12);
        let p2 = tangent_project(&l, &n2).unwrap();
        let lhs = p1.dot(&n2);
        let rhs = n1.dot(&p2);
        assert_relative_eq!(lhs, rhs, epsilon = 1e-10);
    }

    #[test]
    fn xi_of_embedded_coordinate_is_one() {
        let l = embedded_unit(4, 3, 0, 0);
        assert_relative_eq!(xi_tangent(&l).unwrap(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn xi_dominates_sampling_and_is_scale_invariant() {
        let u = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]) / 2.0f64.sqrt();
        let l = &u * u.transpose(); // p = 2, m = 0 case
        let xi = xi_tangent(&l).unwrap();
        assert!(xi > 0.0 && xi <= 1.0 + 1e-12);
        let lower = xi_sampling_lower_bound(&l, 500, 7).unwrap();
        assert!(xi >= lower - 1e-9, "xi {xi} < sampled bound {lower}");
        let xi_scaled = xi_tangent(&(l * -3.7)).unwrap();
        assert_relative_eq!(xi, xi_scaled, epsilon = 1e-12);
    }

    #[test]
    fn xi_rejects_zero_matrix() {
        assert!(xi_tangent(&DMatrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn mu_examples() {
        // diagonal support → 1
        let d = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, -2.0, 0.0, 0.0, 0.0, 0.5]);
        let (mu, exact) = mu_omega(&d).unwrap();
        assert!(exact);
        assert_relative_eq!(mu, 1.0, epsilon = 1e-12);

        // full 2×2 support → 2 (the all-ones matrix)
        let f = DMatrix::from_row_slice(2, 2, &[0.3, -0.4, 0.5, 0.1]);
        let (mu, exact) = mu_omega(&f).unwrap();
        assert!(exact);
        assert_relative_eq!(mu, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn mu_exact_and_ascent_agree_on_chain() {
        let p = 6;
        let mut s = DMatrix::<f64>::identity(p, p);
        for (i, j) in crate::simulate::chain_pattern(p) {
            s[(i - 1, j - 1)] = 0.4;
            s[(j - 1, i - 1)] = -0.4;
        }
        let exact = mu_omega_enumerated(&s).unwrap();
        let ascent = mu_omega_ascent(&s).unwrap();
        assert_relative_eq!(exact, ascent, epsilon = 1e-6);
        // degree bound: support rows have at most 3 nonzeros
        assert!(exact <= 3.0 + 1e-12);
    }

    #[test]
    fn mu_respects_degree_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let s = DMatrix::from_fn(4, 4, |_, _| {
                if rng.random::<f64>() < 0.4 {
                    rng.random::<f64>() - 0.5
                } else {
                    0.0
                }
            });
            if support(&s).is_empty() {
                continue;
            }
            let (mu, _) = mu_omega(&s).unwrap();
            let max_row = (0..4)
                .map(|i| (0..4).filter(|&j| s[(i, j)] != 0.0).count())
                .max()
                .unwrap();
            let max_col = (0..4)
                .map(|j| (0..4).filter(|&i| s[(i, j)] != 0.0).count())
                .max()
                .unwrap();
            assert!(mu <= max_row.max(max_col) as f64 + 1e-9);
        }
    }

    #[test]
    fn gamma_range_examples() {
        let (lo, hi, ok) = gamma_range(0.1, 1.0, 1.0);
        assert_relative_eq!(lo, 0.3);
        assert_relative_eq!(hi, 0.5);
        assert!(ok);

        // ξμ = c²/6 exactly → boundary feasible with low = high
        let xi = 0.5;
        let mu = 1.0 / (6.0 * xi);
        let (lo, hi, ok) = gamma_range(xi, mu, 1.0);
        assert_relative_eq!(lo, hi, epsilon = 1e-12);
        assert!(ok);

        let (_, _, ok) = gamma_range(1.0, 1.0, 1.0);
        assert!(!ok);
    }

    fn cov_with_sigma_z(scale: f64, p: usize) -> CovarianceTriple {
        CovarianceTriple::new(
            DMatrix::identity(p, p) * scale,
            DMatrix::identity(p, p),
            DMatrix::zeros(p, p),
            1000,
        )
        .unwrap()
    }

    #[test]
    fn theorem_quantities_plug_in() {
        let p = 3;
        // S*_X = I, L* = 0 → ψ*_X = 1; Σ_Z = I → ψ_Z = 1
        let s_star = linalg::stack(&DMatrix::identity(p, p), &DMatrix::zeros(p, p));
        let mut l_star = DMatrix::<f64>::zeros(2 * p, p);
        l_star[(p, 0)] = 1.0; // nonzero (in the ZX rows) so ξ is defined
        let cov = cov_with_sigma_z(1.0, p);
        let q = QConstants::default();
        let tq = theorem_quantities(&s_star, &l_star, &cov, 1.0, &q).unwrap();
        assert_relative_eq!(tq.psi_z, 1.0, epsilon = 1e-12);
        assert_relative_eq!(tq.psi_x_star, 1.0, epsilon = 1e-12);

        // ψ_Z = 4, ψ*_X = 1, m = p → M = max(1, (4/4)(1+1)²) = 4
        let cov4 = cov_with_sigma_z(4.0, p);
        let tq4 = theorem_quantities(&s_star, &l_star, &cov4, 1.0, &q).unwrap();
        assert_relative_eq!(tq4.big_m, 4.0, epsilon = 1e-12);
        // λ_n = (Q₃/ξ)√(256·1·p·4/n)
        assert_relative_eq!(
            tq4.lambda_n,
            (256.0 * 3.0 * 4.0 / 1000.0f64).sqrt(),
            epsilon = 1e-12
        );
    }

    /// Independent re-evaluation of the ψ display.
    #[test]
    fn psi_matches_direct_expression() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let p = 3;
        let a = DMatrix::from_fn(p, p, |_, _| rng.random::<f64>() - 0.5);
        let s_x = &a * a.transpose() + DMatrix::identity(p, p);
        let s_star = linalg::stack(&s_x, &DMatrix::from_fn(p, p, |_, _| rng.random::<f64>()));
        let mut l_star = DMatrix::<f64>::zeros(2 * p, p);
        l_star[(p + 1, 1)] = 0.5;
        let cov = cov_with_sigma_z(1.7, p);
        let tq = theorem_quantities(&s_star, &l_star, &cov, 0.8, &QConstants::default()).unwrap();
        let direct = 1.5
            * tq.psi_x_star
            * (1.0
                + 2.0 * (tq.psi_z / tq.psi_x_star)
                    * (1.0 + 9.0 / 4.0 * tq.psi_x_star * tq.phi_zx_star)
                    * (1.0 + 9.0 / 4.0 * tq.psi_x_star * tq.phi_zx_star))
                .sqrt();
        assert_relative_eq!(tq.psi, direct, epsilon = 1e-12);
    }

    /// max(‖A‖₂, ‖B‖₂) ≤ ‖[A; B]‖₂ ≤ √2·max(‖A‖₂, ‖B‖₂).
    #[test]
    fn stacked_spectral_norm_sandwich() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..20 {
            let a = DMatrix::from_fn(3, 3, |_, _| rng.random::<f64>() - 0.5);
            let b = DMatrix::from_fn(4, 3, |_, _| rng.random::<f64>() - 0.5);
            let stacked = {
                let mut s = DMatrix::<f64>::zeros(7, 3);
                s.view_mut((0, 0), (3, 3)).copy_from(&a);
                s.view_mut((3, 0), (4, 3)).copy_from(&b);
                s
            };
            let lo = linalg::spectral_norm(&a).max(linalg::spectral_norm(&b));
            let whole = linalg::spectral_norm(&stacked);
            assert!(lo <= whole + 1e-12);
            assert!(whole <= 2.0f64.sqrt() * lo + 1e-12);
        }
    }
}
