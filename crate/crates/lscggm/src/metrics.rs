//! Scoring of estimates against ground truth: edge sets, precision/recall
//! paths and their AUC, the volume under the (λ, γ) surface, Jaccard
//! similarity, parameter-error reports and the joint-modelling baseline
//! adapter.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{self, DecomposedParams, PenaltyConfig};
use crate::solver::{self, FitMode, SolverOptions, RANK_REL_TOL};

/// Default |entry| threshold for reading edges off an estimate. ADMM
/// soft-thresholding produces exact zeros, so any tiny value works.
pub const EDGE_TOL: f64 = 1e-6;

/// Undirected edges over {1..p}, stored canonically as (min, max).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeSet {
    edges: BTreeSet<(usize, usize)>,
    p: usize,
}

impl EdgeSet {
    pub fn new(p: usize) -> Self {
        Self { edges: BTreeSet::new(), p }
    }

    pub fn from_pairs<I: IntoIterator<Item = (usize, usize)>>(p: usize, pairs: I) -> Result<Self> {
        let mut set = Self::new(p);
        for (a, b) in pairs {
            set.insert(a, b)?;
        }
        Ok(set)
    }

    /// Insert an edge given by 1-based endpoints.
    pub fn insert(&mut self, a: usize, b: usize) -> Result<()> {
        if a == b {
            return Err(Error::InvalidArgument("self-loops are not edges".into()));
        }
        if a == 0 || b == 0 || a > self.p || b > self.p {
            return Err(Error::InvalidArgument(format!(
                "edge ({a}, {b}) out of range 1..={}",
                self.p
            )));
        }
        self.edges.insert((a.min(b), a.max(b)));
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn contains(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn iter(&self) -> impl Iterator<Item = &(usize, usize)> {
        self.edges.iter()
    }

    pub fn intersection_size(&self, other: &EdgeSet) -> usize {
        self.edges.intersection(&other.edges).count()
    }

    pub fn union_size(&self, other: &EdgeSet) -> usize {
        self.edges.union(&other.edges).count()
    }
}

/// Edges of a symmetric matrix: off-diagonal entries with |value| > tol
/// (symmetric rule, diagonal ignored).
pub fn edge_set(s_x: &DMatrix<f64>, tol: f64) -> EdgeSet {
    let p = s_x.nrows();
    let mut set = EdgeSet::new(p);
    for i in 0..p {
        for j in (i + 1)..p {
            if s_x[(i, j)].abs() > tol || s_x[(j, i)].abs() > tol {
                set.edges.insert((i + 1, j + 1));
            }
        }
    }
    set
}

/// (precision, recall); a side is `None` when its denominator is zero.
pub fn precision_recall(est: &EdgeSet, truth: &EdgeSet) -> Result<(Option<f64>, Option<f64>)> {
    if est.p != truth.p {
        return Err(Error::DimensionMismatch(format!(
            "edge sets over p = {} and p = {}",
            est.p, truth.p
        )));
    }
    let hits = est.intersection_size(truth) as f64;
    let precision = (!est.is_empty()).then(|| hits / est.len() as f64);
    let recall = (!truth.is_empty()).then(|| hits / truth.len() as f64);
    Ok((precision, recall))
}

/// Area under the precision-recall polyline of a λ path: points sorted by
/// recall (best precision kept per recall level), precision extended
/// constantly from the first point down to recall 0, linear interpolation
/// between points. `Ok(None)` when every estimate on the path is empty.
pub fn auc_from_path(path: &[(f64, EdgeSet)], truth: &EdgeSet) -> Result<Option<f64>> {
    if truth.is_empty() {
        return Err(Error::InvalidArgument(
            "AUC against an empty truth graph is undefined".into(),
        ));
    }
    if path.is_empty() {
        return Err(Error::InvalidArgument("empty path".into()));
    }
    let mut points: Vec<(f64, f64)> = Vec::new(); // (recall, precision)
    for (_, est) in path {
        let (precision, recall) = precision_recall(est, truth)?;
        if let (Some(pr), Some(rc)) = (precision, recall) {
            points.push((rc, pr));
        }
    }
    if points.is_empty() {
        return Ok(None);
    }
    // keep the best precision at each achieved recall so the value does not
    // depend on the path order
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut dedup: Vec<(f64, f64)> = Vec::new();
    for (rc, pr) in points {
        match dedup.last_mut() {
            Some(last) if last.0 == rc => last.1 = last.1.max(pr),
            _ => dedup.push((rc, pr)),
        }
    }
    let mut area = dedup[0].0 * dedup[0].1;
    for w in dedup.windows(2) {
        area += (w[1].0 - w[0].0) * 0.5 * (w[0].1 + w[1].1);
    }
    Ok(Some(area))
}

/// Linear interpolation of precision at fixed recall levels, with the same
/// polyline convention as [`auc_from_path`]. Levels beyond the maximum
/// achieved recall report `None`.
pub fn precision_at_recalls(
    path: &[(f64, EdgeSet)],
    truth: &EdgeSet,
    recalls: &[f64],
) -> Result<Vec<Option<f64>>> {
    if truth.is_empty() {
        return Err(Error::InvalidArgument(
            "precision at recall against an empty truth graph is undefined".into(),
        ));
    }
    let mut points: Vec<(f64, f64)> = Vec::new();
    for (_, est) in path {
        let (precision, recall) = precision_recall(est, truth)?;
        if let (Some(pr), Some(rc)) = (precision, recall) {
            points.push((rc, pr));
        }
    }
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut dedup: Vec<(f64, f64)> = Vec::new();
    for (rc, pr) in points {
        match dedup.last_mut() {
            Some(last) if last.0 == rc => last.1 = last.1.max(pr),
            _ => dedup.push((rc, pr)),
        }
    }
    let interp = |target: f64| -> Option<f64> {
        if dedup.is_empty() || target > dedup.last().unwrap().0 + 1e-12 {
            return None;
        }
        if target <= dedup[0].0 {
            return Some(dedup[0].1);
        }
        for w in dedup.windows(2) {
            if target <= w[1].0 {
                let t = (target - w[0].0) / (w[1].0 - w[0].0);
                return Some(w[0].1 + t * (w[1].1 - w[0].1));
            }
        }
        dedup.last().map(|&(_, pr)| pr)
    };
    Ok(recalls.iter().map(|&r| interp(r)).collect())
}

/// Volume under the precision-recall surface: uniform average over the γ
/// grid of the per-γ AUC (absent AUCs count as 0).
pub fn vus(surface: &[(f64, Vec<(f64, EdgeSet)>)], truth: &EdgeSet) -> Result<f64> {
    if surface.is_empty() {
        return Err(Error::InvalidArgument("empty gamma grid".into()));
    }
    let mut total = 0.0;
    for (_gamma, path) in surface {
        total += auc_from_path(path, truth)?.unwrap_or(0.0);
    }
    Ok(total / surface.len() as f64)
}

/// Jaccard index |E₁∩E₂| / |E₁∪E₂|; two empty graphs are identical (1).
pub fn jaccard(g1: &EdgeSet, g2: &EdgeSet) -> f64 {
    let union = g1.union_size(g2);
    if union == 0 {
        return 1.0;
    }
    g1.intersection_size(g2) as f64 / union as f64
}

/// Recovery scores of one estimate against the marginalised truth.
#[derive(Debug, Clone, Serialize)]
pub struct RecoveryReport {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    /// Path-level metric; filled by path evaluations, absent for single fits.
    pub auc: Option<f64>,
    pub sign_consistent: bool,
    pub rank_consistent: bool,
    /// (1/γ)·‖Ŝ − S*‖_∞ over the stacked matrices.
    pub err_s_inf_over_gamma: f64,
    /// ‖L̂ − L*‖₂.
    pub err_l_spectral: f64,
}

/// Sign tolerance when comparing sparsity patterns.
const SIGN_TOL: f64 = 1e-8;

fn sign_at(v: f64) -> i8 {
    if v > SIGN_TOL {
        1
    } else if v < -SIGN_TOL {
        -1
    } else {
        0
    }
}

/// Theorem-style error report: sup-norm error of S over γ, spectral error of
/// L, sign- and rank-consistency flags, plus single-point precision/recall of
/// the X-block edges.
pub fn param_errors(
    est: &DecomposedParams,
    s_star: &DMatrix<f64>,
    l_star: &DMatrix<f64>,
    gamma: f64,
) -> Result<RecoveryReport> {
    if gamma <= 0.0 {
        return Err(Error::InvalidArgument("gamma must be positive".into()));
    }
    let s_hat = est.s_stacked();
    let l_hat = est.l_stacked();
    if s_hat.shape() != s_star.shape() || l_hat.shape() != l_star.shape() {
        return Err(Error::DimensionMismatch(
            "estimate and truth have different stacked shapes".into(),
        ));
    }
    let err_s = linalg::inf_norm(&(&s_hat - s_star)) / gamma;
    let err_l = linalg::spectral_norm(&(&l_hat - l_star));
    let mut sign_consistent = true;
    for i in 0..s_hat.nrows() {
        for j in 0..s_hat.ncols() {
            if sign_at(s_hat[(i, j)]) != sign_at(s_star[(i, j)]) {
                sign_consistent = false;
            }
        }
    }
    let rank_consistent = linalg::numerical_rank(&l_hat, RANK_REL_TOL)
        == linalg::numerical_rank(l_star, RANK_REL_TOL);

    let p = est.p();
    let truth_edges = edge_set(&linalg::split(s_star, p).0, EDGE_TOL);
    let est_edges = edge_set(est.s_x(), EDGE_TOL);
    let (precision, recall) = precision_recall(&est_edges, &truth_edges)?;
    Ok(RecoveryReport {
        precision,
        recall,
        auc: None,
        sign_consistent,
        rank_consistent,
        err_s_inf_over_gamma: err_s,
        err_l_spectral: err_l,
    })
}

/// Joint-modelling baseline: stack [Z, X] into one output block, fit with
/// m = 0 (`latent` keeps the low-rank component; without it this is the
/// graphical lasso), then slice the (m+p)×(m+p) estimate back into the
/// conditional layout.
pub fn fit_joint_extract(
    data_z: &DMatrix<f64>,
    data_x: &DMatrix<f64>,
    pen: &PenaltyConfig,
    opts: &SolverOptions,
    latent: bool,
) -> Result<DecomposedParams> {
    let n = data_x.nrows();
    if data_z.nrows() != n {
        return Err(Error::DimensionMismatch(
            "data_z and data_x row counts differ".into(),
        ));
    }
    let m = data_z.ncols();
    let p = data_x.ncols();
    let mut joint = DMatrix::<f64>::zeros(n, m + p);
    joint.view_mut((0, 0), (n, m)).copy_from(data_z);
    joint.view_mut((0, m), (n, p)).copy_from(data_x);
    let cov = model::sample_covariances(&DMatrix::zeros(n, 0), &joint)?;
    let mode = if latent { FitMode::NoConditioningJoint } else { FitMode::NoLatent };
    let fit = solver::fit(&cov, pen, opts, mode)?;
    extract_joint_blocks(&fit.params, m)
}

/// Slice a joint (m+p)×(m+p) estimate (inputs first) back into the
/// conditional (S_X, L_X, S_ZX, L_ZX) layout.
pub fn extract_joint_blocks(joint: &DecomposedParams, m: usize) -> Result<DecomposedParams> {
    let total = joint.p();
    if joint.m() != 0 || m >= total {
        return Err(Error::DimensionMismatch(
            "expected a joint estimate with m = 0 and an input count below its size".into(),
        ));
    }
    let p = total - m;
    let s_joint = joint.s_x();
    let l_joint = joint.l_x();
    let s_x = s_joint.view((m, m), (p, p)).into_owned();
    let s_zx = s_joint.view((0, m), (m, p)).into_owned();
    let l_x = solver::prox::psd_project(&l_joint.view((m, m), (p, p)).into_owned());
    let l_zx = l_joint.view((0, m), (m, p)).into_owned();
    DecomposedParams::new(s_x, l_x, s_zx, l_zx)
}
