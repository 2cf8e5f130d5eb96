//! Synthetic model and dataset generation.
//!
//! One design cell is (p = 2^k, n, d_Z, d_H, seed): the output graph is a
//! fixed chain with every fifth link removed, `2^{d_H}` confounders each
//! touch exactly `p/2^{d_H}` outputs (one confounder per output), and the
//! input-effect matrix has rank `2^{d_Z}` with exactly `p/2^{d_Z}` nonzeros
//! per row and column. Inputs are i.i.d. t₄, standardised to unit variance.
//! The number of inputs always equals p.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::GroundTruthModel;

/// RNG stream used for ground-truth construction.
const STREAM_TRUTH: u64 = 0;
/// RNG stream used for data sampling.
const STREAM_DATA: u64 = 1;

/// Magnitudes of the generated effects.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct EffectSizeConfig {
    /// Off-diagonal magnitude of the chain entries of S*_X.
    pub sx_offdiag: f64,
    /// Scale of each confounder loading (divided by √(outputs per confounder)).
    pub mxh_scale: f64,
    /// Scale of the input-effect blocks.
    pub mzx_scale: f64,
    /// Slack added to the diagonal beyond row dominance.
    pub diag_boost: f64,
}

impl Default for EffectSizeConfig {
    fn default() -> Self {
        Self { sx_offdiag: 0.4, mxh_scale: 3.0, mzx_scale: 0.6, diag_boost: 0.1 }
    }
}

impl EffectSizeConfig {
    pub fn validate(&self) -> Result<()> {
        // scales may be zero (degenerate decoupled models are useful in
        // tests); the diagonal slack must stay strictly positive for PD-ness
        if self.sx_offdiag < 0.0 || self.mxh_scale < 0.0 || self.mzx_scale < 0.0 {
            return Err(Error::InvalidArgument("effect scales must be nonnegative".into()));
        }
        if !(self.diag_boost > 0.0) {
            return Err(Error::InvalidArgument("diag_boost must be positive".into()));
        }
        Ok(())
    }
}

/// One cell of the synthetic experiment grid.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SimulationDesign {
    pub p: usize,
    pub n: usize,
    pub d_z: usize,
    pub d_h: usize,
    pub seed: u64,
    #[serde(default)]
    pub effect: EffectSizeConfig,
}

impl SimulationDesign {
    pub fn new(p: usize, n: usize, d_z: usize, d_h: usize, seed: u64) -> Result<Self> {
        let d = Self { p, n, d_z, d_h, seed, effect: EffectSizeConfig::default() };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 || !self.p.is_power_of_two() {
            return Err(Error::InfeasibleDesign(format!(
                "p = {} is not a power of two >= 2",
                self.p
            )));
        }
        let k = self.log2_p();
        if self.d_z > k || self.d_h > k {
            return Err(Error::InfeasibleDesign(format!(
                "d_z = {} and d_h = {} must lie in [0, {k}]",
                self.d_z, self.d_h
            )));
        }
        if self.n == 0 {
            return Err(Error::InfeasibleDesign("n must be positive".into()));
        }
        self.effect.validate()
    }

    pub fn log2_p(&self) -> usize {
        self.p.trailing_zeros() as usize
    }

    /// Number of confounders, 2^{d_H}.
    pub fn num_confounders(&self) -> usize {
        1 << self.d_h
    }

    /// Rank of the input-effect matrix, 2^{d_Z}.
    pub fn mzx_rank(&self) -> usize {
        1 << self.d_z
    }
}

/// Ground truth plus one sampled dataset.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub truth: GroundTruthModel,
    pub data_z: DMatrix<f64>,
    pub data_x: DMatrix<f64>,
    pub design: SimulationDesign,
}

/// Chain edges (i, i−1), 1-based, for i in 2..=p with i not divisible by 5.
pub fn chain_pattern(p: usize) -> Vec<(usize, usize)> {
    (2..=p).filter(|i| i % 5 != 0).map(|i| (i, i - 1)).collect()
}

fn rng_for(design: &SimulationDesign, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(design.seed);
    rng.set_stream(stream);
    rng
}

fn random_sign(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

/// Build the nominal matrices of one design. Deterministic given the seed.
pub fn make_ground_truth(design: &SimulationDesign) -> Result<GroundTruthModel> {
    design.validate()?;
    let mut rng = rng_for(design, STREAM_TRUTH);
    let p = design.p;
    let m = p;
    let h = design.num_confounders();
    let eff = &design.effect;

    // chain with random signs; diagonal filled in after M_XH is known
    let mut s_x = DMatrix::<f64>::zeros(p, p);
    for (i, j) in chain_pattern(p) {
        let v = random_sign(&mut rng) * eff.sx_offdiag;
        s_x[(i - 1, j - 1)] = v;
        s_x[(j - 1, i - 1)] = v;
    }

    // one confounder per output, p/h outputs per confounder
    let per_conf = p / h;
    let loading = if per_conf > 0 {
        eff.mxh_scale / (per_conf as f64).sqrt()
    } else {
        0.0
    };
    let mut m_xh = DMatrix::<f64>::zeros(p, h);
    for i in 0..p {
        let conf = i / per_conf;
        m_xh[(i, conf)] = random_sign(&mut rng) * loading;
    }

    // diagonal dominance over the joint (X, H) precision rows
    let mut m_h = DMatrix::<f64>::zeros(h, h);
    for c in 0..h {
        let col_sum: f64 = (0..p).map(|i| m_xh[(i, c)].abs()).sum();
        m_h[(c, c)] = col_sum + eff.diag_boost;
    }
    for i in 0..p {
        let row_sum: f64 = (0..p)
            .filter(|&j| j != i)
            .map(|j| s_x[(i, j)].abs())
            .sum::<f64>()
            + (0..h).map(|c| m_xh[(i, c)].abs()).sum::<f64>();
        s_x[(i, i)] = row_sum + eff.diag_boost;
    }

    // block design: 2^{d_Z} groups, each input group loads one output group
    // through a rank-1 all-ones block. Entries scale with the square root of
    // the block size so the per-output input strength (row L2 norm) stays
    // mzx_scale across designs.
    let groups = design.mzx_rank();
    let block = p / groups;
    let entry = eff.mzx_scale * (groups as f64 / p as f64).sqrt();
    let mut m_zx = DMatrix::<f64>::zeros(m, p);
    for g in 0..groups {
        let sign = random_sign(&mut rng);
        for i in 0..block {
            for j in 0..block {
                m_zx[(g * block + i, g * block + j)] = sign * entry;
            }
        }
    }

    let m_zh = DMatrix::<f64>::zeros(m, h);
    GroundTruthModel::new(s_x, m_xh, m_h, m_zx, m_zh)
}

/// Draw one dataset: inputs i.i.d. t₄ standardised by √2, outputs from the
/// conditional Gaussian law of the joint (X, H) model with the H-part
/// discarded. Deterministic given the seed.
pub fn sample_dataset(design: &SimulationDesign) -> Result<SyntheticDataset> {
    let truth = make_ground_truth(design)?;
    let mut rng = rng_for(design, STREAM_DATA);
    let p = design.p;
    let m = truth.m();
    let h = truth.h();
    let n = design.n;

    let t4 = StudentT::new(4.0).expect("valid dof");
    let t4_sd = 2.0f64.sqrt(); // variance of t4 is ν/(ν−2) = 2
    let data_z = DMatrix::from_fn(n, m, |_, _| t4.sample(&mut rng) / t4_sd);

    let joint = truth.joint_precision();
    let chol = joint
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("joint (X,H) precision"))?;

    // conditional means, all rows at once: μ = −J⁻¹ [M_ZXᵀ Y_Z; 0]
    let mut b = DMatrix::<f64>::zeros(p + h, n);
    b.view_mut((0, 0), (p, n))
        .copy_from(&(truth.m_zx().transpose() * data_z.transpose()));
    let mut w = -chol.solve(&b);

    // add noise with covariance J⁻¹ via the upper Cholesky factor
    let eps = DMatrix::from_fn(p + h, n, |_, _| {
        <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
    });
    let noise = chol
        .l()
        .transpose()
        .solve_upper_triangular(&eps)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    w += noise;

    // only Y_X is observed
    let data_x = w.view((0, 0), (p, n)).transpose().into_owned();
    Ok(SyntheticDataset { truth, data_z, data_x, design: *design })
}
