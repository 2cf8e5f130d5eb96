//! λ regularisation paths and complementary-pairs stability selection with
//! expected-false-discovery control.
//!
//! Each of `b_pairs` random partitions splits the rows into two disjoint
//! half-samples; every half is fitted along the λ grid. The aggregate
//! selection event is path-union (an edge is selected by a half-sample if it
//! appears at any λ); pointwise per-λ probabilities are reported alongside.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{edge_set, EdgeSet, EDGE_TOL};
use crate::model::{self, CovarianceTriple, PenaltyConfig};
use crate::solver::{self, FitMode, FitResult, SolverOptions};

/// Subsampling controls.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityConfig {
    /// Number of complementary subsample pairs.
    pub b_pairs: usize,
    /// Bound on the expected number of falsely discovered edges.
    pub ev_max: f64,
    /// Strictly decreasing λ grid.
    pub lambda_grid: Vec<f64>,
    /// γ values swept by the γ-stability analysis.
    pub gamma_grid: Vec<f64>,
    pub seed: u64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            b_pairs: 50,
            ev_max: 1.0,
            lambda_grid: vec![0.5, 0.4, 0.3, 0.2, 0.1],
            gamma_grid: vec![0.5],
            seed: 0,
        }
    }
}

impl StabilityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.b_pairs == 0 {
            return Err(Error::InvalidArgument("b_pairs must be positive".into()));
        }
        if !(self.ev_max > 0.0) {
            return Err(Error::InvalidArgument("ev_max must be positive".into()));
        }
        if self.lambda_grid.is_empty() || self.gamma_grid.is_empty() {
            return Err(Error::InvalidArgument("grids must be nonempty".into()));
        }
        for w in self.lambda_grid.windows(2) {
            if !(w[1] < w[0]) {
                return Err(Error::InvalidArgument(
                    "lambda_grid must be strictly decreasing".into(),
                ));
            }
        }
        if self.lambda_grid.iter().any(|&l| l <= 0.0) {
            return Err(Error::InvalidArgument("lambda grid must be positive".into()));
        }
        Ok(())
    }
}

/// Pointwise stability summary at one λ.
#[derive(Debug, Clone, Serialize)]
pub struct LambdaStability {
    pub lambda: f64,
    /// (a, b, probability) sorted by edge; probabilities are multiples of
    /// 1/(2·effective pairs).
    pub inclusion_prob: Vec<(usize, usize, f64)>,
    pub q_avg: f64,
    pub tau: f64,
    pub tau_feasible: bool,
    pub stable_edges: EdgeSet,
}

/// Aggregate stability selection result. The headline fields use the
/// path-union selection event; `per_lambda` carries the pointwise view.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityResult {
    pub inclusion_prob: Vec<(usize, usize, f64)>,
    /// Mean selected-set size per half-sample fit (path-union event).
    pub q_avg: f64,
    pub tau: f64,
    pub tau_feasible: bool,
    pub stable_edges: EdgeSet,
    pub per_lambda: Vec<LambdaStability>,
    /// Pairs dropped because a half-sample covariance was degenerate.
    pub skipped_pairs: usize,
}

/// Fit the decreasing λ grid, warm-starting each fit from the previous
/// solution. Solver failures are annotated with their λ.
pub fn lambda_path(
    cov: &CovarianceTriple,
    base_pen: &PenaltyConfig,
    lambda_grid: &[f64],
    opts: &SolverOptions,
    mode: FitMode,
) -> Result<Vec<(f64, FitResult)>> {
    if lambda_grid.is_empty() {
        return Err(Error::InvalidArgument("empty lambda grid".into()));
    }
    for w in lambda_grid.windows(2) {
        if !(w[1] < w[0]) {
            return Err(Error::InvalidArgument(
                "lambda grid must be strictly decreasing".into(),
            ));
        }
    }
    let mut out = Vec::with_capacity(lambda_grid.len());
    let mut warm = None;
    for &lambda in lambda_grid {
        let mut pen = *base_pen;
        pen.lambda = lambda;
        let (fit, _) = solver::fit_with_state(cov, &pen, opts, mode, warm.as_ref())
            .map_err(|e| Error::Numerical(format!("lambda = {lambda}: {e}")))?;
        warm = Some(fit.params.clone());
        out.push((lambda, fit));
    }
    Ok(out)
}

/// Smallest τ ∈ (0.5, 1] with q²/((2τ−1)·n_candidates) ≤ ev_max. Returns
/// (τ, feasible); infeasible means even τ = 1 violates the bound.
pub fn threshold_from_ev(q_avg: f64, n_candidates: usize, ev_max: f64) -> (f64, bool) {
    debug_assert!(q_avg >= 0.0 && n_candidates >= 1);
    const TAU_FLOOR: f64 = 0.5 + 1e-9;
    if q_avg == 0.0 {
        return (TAU_FLOOR, true);
    }
    let needed = q_avg * q_avg / (ev_max * n_candidates as f64);
    let tau = 0.5 * (1.0 + needed);
    if tau > 1.0 {
        (1.0, false)
    } else {
        (tau.max(TAU_FLOOR), true)
    }
}

fn take_rows(data: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), data.ncols(), |i, j| data[(idx[i], j)])
}

fn edges_to_probs(counts: &std::collections::BTreeMap<(usize, usize), usize>, denom: f64) -> Vec<(usize, usize, f64)> {
    counts
        .iter()
        .map(|(&(a, b), &c)| (a, b, c as f64 / denom))
        .collect()
}

/// Complementary-pairs stability selection over the λ grid at the penalty's
/// γ. Deterministic given the seed; pairs with degenerate half-sample
/// covariances are skipped and counted.
pub fn complementary_pairs_select(
    data_z: &DMatrix<f64>,
    data_x: &DMatrix<f64>,
    pen: &PenaltyConfig,
    cfg: &StabilityConfig,
    opts: &SolverOptions,
    mode: FitMode,
) -> Result<StabilityResult> {
    cfg.validate()?;
    let n = data_x.nrows();
    if data_z.nrows() != n {
        return Err(Error::DimensionMismatch(
            "data_z and data_x row counts differ".into(),
        ));
    }
    if n < 4 {
        return Err(Error::InvalidArgument(
            "need n >= 4 for nontrivial half-samples".into(),
        ));
    }
    let p = data_x.ncols();
    let half = n / 2;
    let n_lambda = cfg.lambda_grid.len();

    let mut union_counts: std::collections::BTreeMap<(usize, usize), usize> = Default::default();
    let mut lambda_counts: Vec<std::collections::BTreeMap<(usize, usize), usize>> =
        vec![Default::default(); n_lambda];
    let mut union_sizes: Vec<usize> = Vec::new();
    let mut lambda_sizes: Vec<Vec<usize>> = vec![Vec::new(); n_lambda];
    let mut skipped_pairs = 0usize;

    for b in 0..cfg.b_pairs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(b as u64);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let halves = [&idx[..half], &idx[half..2 * half]];

        // both halves must fit before either is tallied
        let mut pair_results = Vec::with_capacity(2);
        let mut failed = false;
        for h in halves {
            let z = take_rows(data_z, h);
            let x = take_rows(data_x, h);
            match model::sample_covariances(&z, &x)
                .and_then(|cov| lambda_path(&cov, pen, &cfg.lambda_grid, opts, mode))
            {
                Ok(path) => pair_results.push(path),
                Err(_) => {
                    failed = true;
                    break;
                }
            }
        }
        if failed {
            skipped_pairs += 1;
            continue;
        }
        for path in pair_results {
            let mut union_edges = EdgeSet::new(p);
            for (k, (_, fit)) in path.iter().enumerate() {
                let edges = edge_set(fit.params.s_x(), EDGE_TOL);
                lambda_sizes[k].push(edges.len());
                for &(a, b) in edges.iter() {
                    *lambda_counts[k].entry((a, b)).or_insert(0) += 1;
                    union_edges.insert(a, b)?;
                }
            }
            union_sizes.push(union_edges.len());
            for &(a, b) in union_edges.iter() {
                *union_counts.entry((a, b)).or_insert(0) += 1;
            }
        }
    }

    let effective_pairs = cfg.b_pairs - skipped_pairs;
    if effective_pairs == 0 {
        return Err(Error::Numerical(
            "every subsample pair had a degenerate covariance".into(),
        ));
    }
    let denom = (2 * effective_pairs) as f64;
    let n_candidates = p * (p - 1) / 2;

    let q_avg = union_sizes.iter().sum::<usize>() as f64 / denom;
    let (tau, tau_feasible) = threshold_from_ev(q_avg, n_candidates, cfg.ev_max);
    let inclusion_prob = edges_to_probs(&union_counts, denom);
    let mut stable_edges = EdgeSet::new(p);
    for &(a, b, prob) in &inclusion_prob {
        if prob >= tau {
            stable_edges.insert(a, b)?;
        }
    }

    let mut per_lambda = Vec::with_capacity(n_lambda);
    for (k, &lambda) in cfg.lambda_grid.iter().enumerate() {
        let q_k = lambda_sizes[k].iter().sum::<usize>() as f64 / denom;
        let (tau_k, feasible_k) = threshold_from_ev(q_k, n_candidates, cfg.ev_max);
        let probs = edges_to_probs(&lambda_counts[k], denom);
        let mut stable_k = EdgeSet::new(p);
        for &(a, b, prob) in &probs {
            if prob >= tau_k {
                stable_k.insert(a, b)?;
            }
        }
        per_lambda.push(LambdaStability {
            lambda,
            inclusion_prob: probs,
            q_avg: q_k,
            tau: tau_k,
            tau_feasible: feasible_k,
            stable_edges: stable_k,
        });
    }

    Ok(StabilityResult {
        inclusion_prob,
        q_avg,
        tau,
        tau_feasible,
        stable_edges,
        per_lambda,
        skipped_pairs,
    })
}

/// Pairwise Jaccard similarities of per-γ edge sets: symmetric with unit
/// diagonal.
pub fn gamma_jaccard_matrix(results: &[(f64, EdgeSet)]) -> Result<DMatrix<f64>> {
    if results.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two gamma values".into(),
        ));
    }
    let k = results.len();
    let mut out = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        out[(i, i)] = 1.0;
        for j in (i + 1)..k {
            let v = crate::metrics::jaccard(&results[i].1, &results[j].1);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn noise_data(n: usize, m: usize, p: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = || {
            let u1: f64 = rng.random::<f64>().max(1e-12);
            let u2: f64 = rng.random();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        let z = DMatrix::from_fn(n, m, |_, _| normal());
        let x = DMatrix::from_fn(n, p, |_, _| normal());
        (z, x)
    }

    #[test]
    fn lambda_path_huge_lambda_is_empty() {
        let (z, x) = noise_data(100, 0, 4, 1);
        let cov = model::sample_covariances(&z, &x).unwrap();
        let pen = PenaltyConfig::raw(1.0, 1.0).unwrap();
        let path = lambda_path(&cov, &pen, &[50.0], &SolverOptions::default(), FitMode::NoLatent)
            .unwrap();
        assert_eq!(path.len(), 1);
        assert!(edge_set(path[0].1.params.s_x(), EDGE_TOL).is_empty());
    }

    #[test]
    fn lambda_path_rejects_bad_grid() {
        let (z, x) = noise_data(50, 0, 3, 2);
        let cov = model::sample_covariances(&z, &x).unwrap();
        let pen = PenaltyConfig::raw(1.0, 1.0).unwrap();
        assert!(lambda_path(
            &cov,
            &pen,
            &[0.1, 0.2],
            &SolverOptions::default(),
            FitMode::NoLatent
        )
        .is_err());
    }

    #[test]
    fn lambda_path_edge_counts_grow_softly_and_warm_start_is_neutral() {
        let design = simulate::SimulationDesign::new(8, 400, 1, 1, 3).unwrap();
        let ds = simulate::sample_dataset(&design).unwrap();
        let cov = model::sample_covariances(&ds.data_z, &ds.data_x).unwrap();
        let pen = PenaltyConfig::ratio01(1.0, 0.7).unwrap();
        let grid: Vec<f64> = (0..8).map(|k| 0.6 * 0.7f64.powi(k)).collect();
        let opts = SolverOptions::default();
        let path = lambda_path(&cov, &pen, &grid, &opts, FitMode::Full).unwrap();

        let sizes: Vec<usize> = path
            .iter()
            .map(|(_, f)| edge_set(f.params.s_x(), EDGE_TOL).len())
            .collect();
        let weakly_increasing = sizes.windows(2).filter(|w| w[1] >= w[0]).count();
        assert!(
            weakly_increasing * 10 >= (sizes.len() - 1) * 9,
            "sizes not softly monotone: {sizes:?}"
        );

        // cold fits at each λ reach the same objectives
        for (lambda, fit) in &path {
            let mut pen_l = pen;
            pen_l.lambda = *lambda;
            let cold = solver::fit(&cov, &pen_l, &opts, FitMode::Full).unwrap();
            assert_relative_eq!(cold.objective, fit.objective, max_relative = 1e-6);
        }
    }

    #[test]
    fn threshold_examples() {
        let (tau, ok) = threshold_from_ev(5.0, 100, 1.0);
        assert!(ok);
        assert_relative_eq!(tau, 0.625, epsilon = 1e-12);

        let (tau, ok) = threshold_from_ev(0.0, 100, 1.0);
        assert!(ok);
        assert!(tau > 0.5 && tau < 0.5 + 1e-6);

        // q² = ev·n_candidates → τ = 1 exactly
        let (tau, ok) = threshold_from_ev(10.0, 100, 1.0);
        assert!(ok);
        assert_relative_eq!(tau, 1.0, epsilon = 1e-12);

        let (tau, ok) = threshold_from_ev(20.0, 100, 1.0);
        assert!(!ok);
        assert_relative_eq!(tau, 1.0);
    }

    #[test]
    fn single_pair_probabilities_are_halves() {
        let (z, x) = noise_data(60, 0, 5, 7);
        let pen = PenaltyConfig::raw(0.3, 1.0).unwrap();
        let cfg = StabilityConfig {
            b_pairs: 1,
            lambda_grid: vec![0.3, 0.15],
            ..Default::default()
        };
        let res = complementary_pairs_select(
            &z,
            &x,
            &pen,
            &cfg,
            &SolverOptions::default(),
            FitMode::NoLatent,
        )
        .unwrap();
        for &(_, _, prob) in &res.inclusion_prob {
            assert!(
                [0.5, 1.0].iter().any(|t| (prob - t).abs() < 1e-12),
                "prob {prob} not a multiple of 1/2"
            );
        }
        assert_eq!(res.skipped_pairs, 0);
    }

    #[test]
    fn strong_edge_reaches_probability_one() {
        // two outputs moving in lockstep: the (1,2) edge survives every
        // half-sample at every λ of a moderate grid
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 200;
        let mut x = DMatrix::<f64>::zeros(n, 3);
        for i in 0..n {
            let a: f64 = rng.random::<f64>() * 2.0 - 1.0;
            let b: f64 = (rng.random::<f64>() * 2.0 - 1.0) * 0.05;
            let c: f64 = rng.random::<f64>() * 2.0 - 1.0;
            x[(i, 0)] = a;
            x[(i, 1)] = a + b;
            x[(i, 2)] = c;
        }
        let z = DMatrix::<f64>::zeros(n, 0);
        let pen = PenaltyConfig::raw(1.0, 1.0).unwrap();
        let cfg = StabilityConfig {
            b_pairs: 10,
            lambda_grid: vec![0.2, 0.1],
            seed: 5,
            ..Default::default()
        };
        let res = complementary_pairs_select(
            &z,
            &x,
            &pen,
            &cfg,
            &SolverOptions::default(),
            FitMode::NoLatent,
        )
        .unwrap();
        let strong = res
            .inclusion_prob
            .iter()
            .find(|&&(a, b, _)| (a, b) == (1, 2))
            .map(|&(_, _, p)| p);
        assert_eq!(strong, Some(1.0));
        assert!(res.stable_edges.contains(1, 2));
    }

    #[test]
    fn selection_is_deterministic() {
        let (z, x) = noise_data(80, 0, 4, 13);
        let pen = PenaltyConfig::raw(0.4, 1.0).unwrap();
        let cfg = StabilityConfig {
            b_pairs: 4,
            lambda_grid: vec![0.4, 0.2],
            seed: 21,
            ..Default::default()
        };
        let opts = SolverOptions::default();
        let a = complementary_pairs_select(&z, &x, &pen, &cfg, &opts, FitMode::NoLatent).unwrap();
        let b = complementary_pairs_select(&z, &x, &pen, &cfg, &opts, FitMode::NoLatent).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn stable_set_shrinks_as_ev_max_decreases() {
        let design = simulate::SimulationDesign::new(8, 300, 1, 3, 17).unwrap();
        let ds = simulate::sample_dataset(&design).unwrap();
        let pen = PenaltyConfig::raw(1.0, 1.0).unwrap();
        let opts = SolverOptions::default();
        let mut seen = Vec::new();
        for ev in [2.0, 1.0, 0.25] {
            let cfg = StabilityConfig {
                b_pairs: 6,
                ev_max: ev,
                lambda_grid: vec![0.4, 0.25],
                seed: 3,
                ..Default::default()
            };
            let res = complementary_pairs_select(
                &ds.data_z,
                &ds.data_x,
                &pen,
                &cfg,
                &opts,
                FitMode::NoLatent,
            )
            .unwrap();
            seen.push(res.stable_edges.len());
        }
        assert!(seen[0] >= seen[1] && seen[1] >= seen[2], "sizes {seen:?}");
    }

    /// Each pair splits the rows into two disjoint halves of ⌊n/2⌋.
    #[test]
    fn half_samples_are_disjoint() {
        let n = 9usize;
        let half = n / 2;
        for b in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            rng.set_stream(b);
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let first: std::collections::BTreeSet<usize> = idx[..half].iter().copied().collect();
            let second: std::collections::BTreeSet<usize> =
                idx[half..2 * half].iter().copied().collect();
            assert_eq!(first.len(), half);
            assert_eq!(second.len(), half);
            assert!(first.is_disjoint(&second));
            assert_eq!(first.union(&second).count(), 2 * half);
        }
    }

    #[test]
    fn jaccard_matrix_examples() {
        let g = EdgeSet::from_pairs(4, [(1, 2), (3, 4)]).unwrap();
        let same = vec![(0.2, g.clone()), (0.5, g.clone()), (0.8, g.clone())];
        let m = gamma_jaccard_matrix(&same).unwrap();
        assert!(m.iter().all(|&v| (v - 1.0).abs() < 1e-15));

        let other = EdgeSet::from_pairs(4, [(1, 3)]).unwrap();
        let two = vec![(0.2, g.clone()), (0.8, other.clone())];
        let m2 = gamma_jaccard_matrix(&two).unwrap();
        assert_eq!(m2[(0, 1)], 0.0);
        assert_eq!(m2[(0, 0)], 1.0);

        let three = vec![(0.2, g.clone()), (0.5, other.clone()), (0.8, g.clone())];
        let m3 = gamma_jaccard_matrix(&three).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(
                    m3[(i, j)],
                    crate::metrics::jaccard(&three[i].1, &three[j].1)
                );
            }
        }
        assert!(gamma_jaccard_matrix(&[(0.5, g)]).is_err());
    }
}
