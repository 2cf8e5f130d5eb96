//! Export of the estimator as a sparse semidefinite program for external
//! verification.
//!
//! Scalar decision variables are the free parameters (S_X, L_X, S_ZX, L_ZX,
//! W, F, H₁, H₂); the block-diagonal LMI `Σ_i x_i F_i − F₀ ⪰ 0` couples them:
//!
//!   block 1  "K"        (m+p)  [[W, S_ZX−L_ZX], [·ᵀ, S_X−L_X]] ⪰ 0
//!   block 2  "S_X"      (p)    S_X − L_X ⪰ εI, carries the logdet term
//!   block 3  "L_X"      (p)    L_X ⪰ 0
//!   block 4  "H"        (m+2p) [[H₁, L], [Lᵀ, H₂]] ⪰ 0
//!   block 5  "F_bounds" (−2(m+p)p) diagonal: F_rj ∓ S_rj ≥ 0
//!
//! The objective is `Tr(KΣ_O) − logdet(S_X block) + w₁·1ᵀF1 + (w_*/2)(TrH₁+TrH₂)`.
//! Base SDPA has no logdet cone, so the term rides on a structured comment
//! `*LOGDET block=2 weight=1`; it applies to the variable part of the block
//! (the constant shift εI only encodes the strict-feasibility margin).
//! Files are sparse SDPA-S: comment lines start with '*' or '"', then the
//! variable count, block count, block sizes (negative = diagonal), the
//! objective row and one `var block i j value` line per nonzero with i ≤ j.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{CovarianceTriple, DecomposedParams, PenaltyConfig};

/// Default margin standing in for the strict inequality S_X − L_X ≻ 0.
pub const DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Psd,
    /// Diagonal block of scalar linear inequalities (negative size in SDPA).
    DiagonalFreeLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdpBlock {
    pub name: String,
    pub size: usize,
    pub kind: BlockKind,
}

/// One named contiguous range of scalar decision variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarGroup {
    pub name: String,
    /// 0-based offset; variable indices in the file are offset+1 ..= offset+len.
    pub offset: usize,
    pub len: usize,
}

/// One nonzero coefficient: `var` 0 addresses the constant matrix F₀.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub var: usize,
    pub block: usize,
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdpMetadata {
    pub m: usize,
    pub p: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub weight_l1: f64,
    pub weight_nuclear: f64,
    pub epsilon: f64,
}

/// The assembled program: blocks, named variable ranges, dense objective
/// vector, sorted coefficient triplets and the logdet directive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdpProblem {
    pub blocks: Vec<SdpBlock>,
    pub var_groups: Vec<VarGroup>,
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub entries: Vec<Triplet>,
    /// 1-based index of the block whose variable part carries −logdet.
    pub logdet_block: usize,
    pub metadata: SdpMetadata,
}

/// Upper-triangle index of (i, j), 1-based with i ≤ j, row-major.
fn sym_index(i: usize, j: usize, n: usize) -> usize {
    debug_assert!(1 <= i && i <= j && j <= n);
    (i - 1) * (2 * n - i + 2) / 2 + (j - i)
}

fn sym_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Variable layout shared by the builder, the writer and the evaluator.
struct Layout {
    p: usize,
    m: usize,
    s_x: usize,
    l_x: usize,
    s_zx: usize,
    l_zx: usize,
    w: usize,
    f: usize,
    h1: usize,
    h2: usize,
    total: usize,
}

impl Layout {
    fn new(m: usize, p: usize) -> Self {
        let s_x = 0;
        let l_x = s_x + sym_len(p);
        let s_zx = l_x + sym_len(p);
        let l_zx = s_zx + m * p;
        let w = l_zx + m * p;
        let f = w + sym_len(m);
        let h1 = f + (m + p) * p;
        let h2 = h1 + sym_len(m + p);
        let total = h2 + sym_len(p);
        Self { p, m, s_x, l_x, s_zx, l_zx, w, f, h1, h2, total }
    }

    /// 1-based variable index of S_X[i,j] (1-based, any order).
    fn v_s_x(&self, i: usize, j: usize) -> usize {
        self.s_x + sym_index(i.min(j), i.max(j), self.p) + 1
    }

    fn v_l_x(&self, i: usize, j: usize) -> usize {
        self.l_x + sym_index(i.min(j), i.max(j), self.p) + 1
    }

    fn v_s_zx(&self, a: usize, j: usize) -> usize {
        self.s_zx + (a - 1) * self.p + (j - 1) + 1
    }

    fn v_l_zx(&self, a: usize, j: usize) -> usize {
        self.l_zx + (a - 1) * self.p + (j - 1) + 1
    }

    fn v_w(&self, a: usize, b: usize) -> usize {
        self.w + sym_index(a.min(b), a.max(b), self.m) + 1
    }

    /// F over stacked rows r ∈ 1..=m+p (X rows first), columns j ∈ 1..=p.
    fn v_f(&self, r: usize, j: usize) -> usize {
        self.f + (r - 1) * self.p + (j - 1) + 1
    }

    fn v_h1(&self, a: usize, b: usize) -> usize {
        self.h1 + sym_index(a.min(b), a.max(b), self.m + self.p) + 1
    }

    fn v_h2(&self, i: usize, j: usize) -> usize {
        self.h2 + sym_index(i.min(j), i.max(j), self.p) + 1
    }

    /// Variable of stacked S row r, column j.
    fn v_s_stacked(&self, r: usize, j: usize) -> usize {
        if r <= self.p {
            self.v_s_x(r, j)
        } else {
            self.v_s_zx(r - self.p, j)
        }
    }

    /// Variable of stacked L row r, column j.
    fn v_l_stacked(&self, r: usize, j: usize) -> usize {
        if r <= self.p {
            self.v_l_x(r, j)
        } else {
            self.v_l_zx(r - self.p, j)
        }
    }

    fn groups(&self) -> Vec<VarGroup> {
        let g = |name: &str, offset: usize, len: usize| VarGroup {
            name: name.into(),
            offset,
            len,
        };
        vec![
            g("s_x", self.s_x, sym_len(self.p)),
            g("l_x", self.l_x, sym_len(self.p)),
            g("s_zx", self.s_zx, self.m * self.p),
            g("l_zx", self.l_zx, self.m * self.p),
            g("w", self.w, sym_len(self.m)),
            g("f", self.f, (self.m + self.p) * self.p),
            g("h1", self.h1, sym_len(self.m + self.p)),
            g("h2", self.h2, sym_len(self.p)),
        ]
    }
}

/// Assemble the program for a covariance triple and penalty, with the default
/// strict-feasibility margin.
pub fn build_sdp_problem(cov: &CovarianceTriple, pen: &PenaltyConfig) -> Result<SdpProblem> {
    build_sdp_problem_with_epsilon(cov, pen, DEFAULT_EPSILON)
}

pub fn build_sdp_problem_with_epsilon(
    cov: &CovarianceTriple,
    pen: &PenaltyConfig,
    epsilon: f64,
) -> Result<SdpProblem> {
    pen.validate()?;
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument("epsilon must be positive".into()));
    }
    let m = cov.m();
    let p = cov.p();
    let layout = Layout::new(m, p);
    let sigma_o = cov.joint();
    let w1 = pen.weight_l1();
    let w_nuc = pen.weight_nuclear();

    let blocks = vec![
        SdpBlock { name: "K".into(), size: m + p, kind: BlockKind::Psd },
        SdpBlock { name: "S_X".into(), size: p, kind: BlockKind::Psd },
        SdpBlock { name: "L_X".into(), size: p, kind: BlockKind::Psd },
        SdpBlock { name: "H".into(), size: m + 2 * p, kind: BlockKind::Psd },
        SdpBlock {
            name: "F_bounds".into(),
            size: 2 * (m + p) * p,
            kind: BlockKind::DiagonalFreeLinear,
        },
    ];

    let mut objective = vec![0.0; layout.total];
    let mut entries: Vec<Triplet> = Vec::new();
    let mut push = |var: usize, block: usize, i: usize, j: usize, value: f64| {
        if value != 0.0 {
            entries.push(Triplet { var, block, i: i.min(j), j: i.max(j), value });
        }
    };

    // block 1: K. Upper-left W (Z indices 1..m), off-diagonal S_ZX − L_ZX,
    // lower-right S_X − L_X.
    for a in 1..=m {
        for b in a..=m {
            push(layout.v_w(a, b), 1, a, b, 1.0);
            let scale = if a == b { 1.0 } else { 2.0 };
            objective[layout.v_w(a, b) - 1] += scale * sigma_o[(a - 1, b - 1)];
        }
        for j in 1..=p {
            push(layout.v_s_zx(a, j), 1, a, m + j, 1.0);
            push(layout.v_l_zx(a, j), 1, a, m + j, -1.0);
            objective[layout.v_s_zx(a, j) - 1] += 2.0 * sigma_o[(a - 1, m + j - 1)];
            objective[layout.v_l_zx(a, j) - 1] -= 2.0 * sigma_o[(a - 1, m + j - 1)];
        }
    }
    for i in 1..=p {
        for j in i..=p {
            push(layout.v_s_x(i, j), 1, m + i, m + j, 1.0);
            push(layout.v_l_x(i, j), 1, m + i, m + j, -1.0);
            let scale = if i == j { 1.0 } else { 2.0 };
            objective[layout.v_s_x(i, j) - 1] += scale * sigma_o[(m + i - 1, m + j - 1)];
            objective[layout.v_l_x(i, j) - 1] -= scale * sigma_o[(m + i - 1, m + j - 1)];
        }
    }

    // block 2: the marginal precision with strict margin; logdet rides here
    for i in 1..=p {
        for j in i..=p {
            push(layout.v_s_x(i, j), 2, i, j, 1.0);
            push(layout.v_l_x(i, j), 2, i, j, -1.0);
        }
        push(0, 2, i, i, epsilon);
    }

    // block 3: L_X ⪰ 0
    for i in 1..=p {
        for j in i..=p {
            push(layout.v_l_x(i, j), 3, i, j, 1.0);
        }
    }

    // block 4: [[H1, L], [Lᵀ, H2]] ⪰ 0
    let mp = m + p;
    for a in 1..=mp {
        for b in a..=mp {
            push(layout.v_h1(a, b), 4, a, b, 1.0);
        }
        for j in 1..=p {
            push(layout.v_l_stacked(a, j), 4, a, mp + j, 1.0);
        }
    }
    for i in 1..=p {
        for j in i..=p {
            push(layout.v_h2(i, j), 4, mp + i, mp + j, 1.0);
        }
    }
    for i in 1..=mp {
        objective[layout.v_h1(i, i) - 1] += 0.5 * w_nuc;
    }
    for i in 1..=p {
        objective[layout.v_h2(i, i) - 1] += 0.5 * w_nuc;
    }

    // block 5: −F_rj ≤ S_rj ≤ F_rj as two diagonal rows per entry
    for r in 1..=mp {
        for j in 1..=p {
            let row = 2 * ((r - 1) * p + (j - 1)) + 1;
            push(layout.v_f(r, j), 5, row, row, 1.0);
            push(layout.v_s_stacked(r, j), 5, row, row, -1.0);
            push(layout.v_f(r, j), 5, row + 1, row + 1, 1.0);
            push(layout.v_s_stacked(r, j), 5, row + 1, row + 1, 1.0);
            let penalised = !(pen.exclude_diagonal && r == j && r <= p);
            if penalised {
                objective[layout.v_f(r, j) - 1] += w1;
            }
        }
    }

    entries.sort_by(|x, y| {
        (x.var, x.block, x.i, x.j)
            .partial_cmp(&(y.var, y.block, y.i, y.j))
            .unwrap()
    });
    Ok(SdpProblem {
        blocks,
        var_groups: layout.groups(),
        num_vars: layout.total,
        objective,
        entries,
        logdet_block: 2,
        metadata: SdpMetadata {
            m,
            p,
            lambda: pen.lambda,
            gamma: pen.gamma,
            weight_l1: w1,
            weight_nuclear: w_nuc,
            epsilon,
        },
    })
}

/// Evaluate the exported objective at an estimate: W takes its variational
/// optimum `R_ZX R_X⁻¹ R_ZXᵀ`, F = |S| entrywise, and (H₁, H₂) come from the
/// SVD of the stacked L (the nuclear-norm variational certificate).
pub fn sdp_objective_at(problem: &SdpProblem, params: &DecomposedParams) -> Result<f64> {
    let m = problem.metadata.m;
    let p = problem.metadata.p;
    if params.m() != m || params.p() != p {
        return Err(Error::DimensionMismatch(
            "estimate does not match the exported problem".into(),
        ));
    }
    let layout = Layout::new(m, p);
    let mut x = vec![0.0; layout.total];

    let marginal = params.marginal()?;
    let r_x = marginal.r_x().clone();
    let chol = r_x
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("s_x - l_x"))?;
    for i in 1..=p {
        for j in i..=p {
            x[layout.v_s_x(i, j) - 1] = params.s_x()[(i - 1, j - 1)];
            x[layout.v_l_x(i, j) - 1] = params.l_x()[(i - 1, j - 1)];
        }
    }
    for a in 1..=m {
        for j in 1..=p {
            x[layout.v_s_zx(a, j) - 1] = params.s_zx()[(a - 1, j - 1)];
            x[layout.v_l_zx(a, j) - 1] = params.l_zx()[(a - 1, j - 1)];
        }
    }
    if m > 0 {
        let r_zx = marginal.r_zx();
        let w_opt = r_zx * chol.solve(&r_zx.transpose());
        for a in 1..=m {
            for b in a..=m {
                x[layout.v_w(a, b) - 1] = w_opt[(a - 1, b - 1)];
            }
        }
    }
    let s_stacked = params.s_stacked();
    for r in 1..=(m + p) {
        for j in 1..=p {
            x[layout.v_f(r, j) - 1] = s_stacked[(r - 1, j - 1)].abs();
        }
    }
    let l_stacked = params.l_stacked();
    let svd = l_stacked.clone().svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let sig = DMatrix::from_diagonal(&svd.singular_values);
    let h1 = &u * &sig * u.transpose();
    let h2 = v_t.transpose() * &sig * &v_t;
    for a in 1..=(m + p) {
        for b in a..=(m + p) {
            x[layout.v_h1(a, b) - 1] = h1[(a - 1, b - 1)];
        }
    }
    for i in 1..=p {
        for j in i..=p {
            x[layout.v_h2(i, j) - 1] = h2[(i - 1, j - 1)];
        }
    }

    let linear: f64 = problem
        .objective
        .iter()
        .zip(&x)
        .map(|(c, v)| c * v)
        .sum();
    let logdet = linalg::logdet_pd(&r_x, "s_x - l_x")?;
    Ok(linear - logdet)
}

fn kind_token(kind: BlockKind) -> &'static str {
    match kind {
        BlockKind::Psd => "psd",
        BlockKind::DiagonalFreeLinear => "diag",
    }
}

/// Write the problem in sparse SDPA-S, with structured comments carrying the
/// block names, variable groups, metadata and the logdet directive.
pub fn write_sdpa(problem: &SdpProblem, path: &Path) -> Result<()> {
    let mut out = String::new();
    let meta = &problem.metadata;
    writeln!(
        out,
        "*META m={} p={} lambda={} gamma={} weight_l1={} weight_nuclear={} epsilon={}",
        meta.m, meta.p, meta.lambda, meta.gamma, meta.weight_l1, meta.weight_nuclear, meta.epsilon
    )
    .unwrap();
    for (idx, b) in problem.blocks.iter().enumerate() {
        writeln!(out, "*BLOCK {} {} {}", idx + 1, b.name, kind_token(b.kind)).unwrap();
    }
    for g in &problem.var_groups {
        writeln!(out, "*VARGROUP {} {} {}", g.name, g.offset, g.len).unwrap();
    }
    writeln!(out, "*LOGDET block={} weight=1", problem.logdet_block).unwrap();
    writeln!(out, "{}", problem.num_vars).unwrap();
    writeln!(out, "{}", problem.blocks.len()).unwrap();
    let sizes: Vec<String> = problem
        .blocks
        .iter()
        .map(|b| match b.kind {
            BlockKind::Psd => format!("{}", b.size),
            BlockKind::DiagonalFreeLinear => format!("-{}", b.size),
        })
        .collect();
    writeln!(out, "{}", sizes.join(" ")).unwrap();
    let obj: Vec<String> = problem.objective.iter().map(|v| format!("{v}")).collect();
    writeln!(out, "{}", obj.join(" ")).unwrap();
    for t in &problem.entries {
        debug_assert!(t.i <= t.j);
        writeln!(out, "{} {} {} {} {}", t.var, t.block, t.i, t.j, t.value).unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

/// Parse a file produced by [`write_sdpa`] back into an [`SdpProblem`].
pub fn parse_sdpa(path: &Path) -> Result<SdpProblem> {
    let text = fs::read_to_string(path)?;
    let mut blocks_meta: Vec<(usize, String, BlockKind)> = Vec::new();
    let mut var_groups: Vec<VarGroup> = Vec::new();
    let mut logdet_block = 0usize;
    let mut metadata = SdpMetadata {
        m: 0,
        p: 0,
        lambda: 0.0,
        gamma: 0.0,
        weight_l1: 0.0,
        weight_nuclear: 0.0,
        epsilon: 0.0,
    };

    let bad = |what: &str| Error::Parse(format!("sdpa: {what}"));
    let mut data_lines: Vec<&str> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            data_lines.push(line);
            continue;
        }
        if let Some(rest) = line.strip_prefix('*') {
            let mut toks = rest.split_whitespace();
            match toks.next() {
                Some("META") => {
                    for kv in toks {
                        let (k, v) = kv.split_once('=').ok_or_else(|| bad("META token"))?;
                        match k {
                            "m" => metadata.m = v.parse().map_err(|_| bad("META m"))?,
                            "p" => metadata.p = v.parse().map_err(|_| bad("META p"))?,
                            "lambda" => metadata.lambda = v.parse().map_err(|_| bad("META lambda"))?,
                            "gamma" => metadata.gamma = v.parse().map_err(|_| bad("META gamma"))?,
                            "weight_l1" => {
                                metadata.weight_l1 = v.parse().map_err(|_| bad("META w1"))?
                            }
                            "weight_nuclear" => {
                                metadata.weight_nuclear = v.parse().map_err(|_| bad("META wn"))?
                            }
                            "epsilon" => {
                                metadata.epsilon = v.parse().map_err(|_| bad("META eps"))?
                            }
                            _ => {}
                        }
                    }
                }
                Some("BLOCK") => {
                    let idx: usize = toks
                        .next()
                        .ok_or_else(|| bad("BLOCK idx"))?
                        .parse()
                        .map_err(|_| bad("BLOCK idx"))?;
                    let name = toks.next().ok_or_else(|| bad("BLOCK name"))?.to_string();
                    let kind = match toks.next() {
                        Some("psd") => BlockKind::Psd,
                        Some("diag") => BlockKind::DiagonalFreeLinear,
                        _ => return Err(bad("BLOCK kind")),
                    };
                    blocks_meta.push((idx, name, kind));
                }
                Some("VARGROUP") => {
                    let name = toks.next().ok_or_else(|| bad("VARGROUP name"))?.to_string();
                    let offset = toks
                        .next()
                        .ok_or_else(|| bad("VARGROUP offset"))?
                        .parse()
                        .map_err(|_| bad("VARGROUP offset"))?;
                    let len = toks
                        .next()
                        .ok_or_else(|| bad("VARGROUP len"))?
                        .parse()
                        .map_err(|_| bad("VARGROUP len"))?;
                    var_groups.push(VarGroup { name, offset, len });
                }
                Some("LOGDET") => {
                    for kv in toks {
                        if let Some(v) = kv.strip_prefix("block=") {
                            logdet_block = v.parse().map_err(|_| bad("LOGDET block"))?;
                        }
                    }
                }
                _ => {}
            }
            continue;
        }
        if line.starts_with('"') {
            continue;
        }
        data_lines.push(line);
    }

    let mut it = data_lines.iter();
    let num_vars: usize = it
        .next()
        .ok_or_else(|| bad("missing variable count"))?
        .parse()
        .map_err(|_| bad("variable count"))?;
    let num_blocks: usize = it
        .next()
        .ok_or_else(|| bad("missing block count"))?
        .parse()
        .map_err(|_| bad("block count"))?;
    let sizes_line = it.next().ok_or_else(|| bad("missing block sizes"))?;
    let sizes: Vec<i64> = sizes_line
        .split_whitespace()
        .map(|t| t.parse::<i64>().map_err(|_| bad("block size")))
        .collect::<Result<_>>()?;
    if sizes.len() != num_blocks {
        return Err(bad("block size count mismatch"));
    }
    let obj_line = it.next().ok_or_else(|| bad("missing objective line"))?;
    let objective: Vec<f64> = obj_line
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| bad("objective value")))
        .collect::<Result<_>>()?;
    if objective.len() != num_vars {
        return Err(bad("objective length mismatch"));
    }
    let mut entries = Vec::new();
    for line in it {
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 5 {
            return Err(bad("triplet arity"));
        }
        entries.push(Triplet {
            var: toks[0].parse().map_err(|_| bad("triplet var"))?,
            block: toks[1].parse().map_err(|_| bad("triplet block"))?,
            i: toks[2].parse().map_err(|_| bad("triplet i"))?,
            j: toks[3].parse().map_err(|_| bad("triplet j"))?,
            value: toks[4].parse().map_err(|_| bad("triplet value"))?,
        });
    }

    let blocks = (1..=num_blocks)
        .map(|idx| {
            let size = sizes[idx - 1];
            let (name, kind) = blocks_meta
                .iter()
                .find(|(i, _, _)| *i == idx)
                .map(|(_, n, k)| (n.clone(), *k))
                .unwrap_or_else(|| {
                    let kind = if size < 0 {
                        BlockKind::DiagonalFreeLinear
                    } else {
                        BlockKind::Psd
                    };
                    (format!("block_{idx}"), kind)
                });
            SdpBlock { name, size: size.unsigned_abs() as usize, kind }
        })
        .collect();
    Ok(SdpProblem {
        blocks,
        var_groups,
        num_vars,
        objective,
        entries,
        logdet_block,
        metadata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cov(p: usize, m: usize, seed: u64) -> CovarianceTriple {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = DMatrix::from_fn(8 * (m + p), m, |_, _| rng.random::<f64>() - 0.5);
        let x = DMatrix::from_fn(8 * (m + p), p, |_, _| rng.random::<f64>() - 0.5);
        model::sample_covariances(&z, &x).unwrap()
    }

    fn random_feasible(p: usize, m: usize, seed: u64) -> DecomposedParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(p, 2.min(p), |_, _| rng.random::<f64>() - 0.5);
        let l_x = &a * a.transpose() * 0.4;
        let b = DMatrix::from_fn(p, p, |_, _| rng.random::<f64>() - 0.5);
        let s_x = &b * b.transpose() + DMatrix::identity(p, p) + &l_x;
        let s_zx = DMatrix::from_fn(m, p, |_, _| rng.random::<f64>() - 0.5);
        let l_zx = DMatrix::from_fn(m, p, |_, _| (rng.random::<f64>() - 0.5) * 0.3);
        DecomposedParams::new(s_x, l_x, s_zx, l_zx).unwrap()
    }

    #[test]
    fn block_structure_p2_m1() {
        let cov = small_cov(2, 1, 1);
        let pen = PenaltyConfig::raw(0.5, 0.8).unwrap();
        let prob = build_sdp_problem(&cov, &pen).unwrap();
        let sizes: Vec<(String, usize)> = prob
            .blocks
            .iter()
            .map(|b| (b.name.clone(), b.size))
            .collect();
        assert_eq!(
            sizes,
            vec![
                ("K".into(), 3),
                ("S_X".into(), 2),
                ("L_X".into(), 2),
                ("H".into(), 5),
                ("F_bounds".into(), 12)
            ]
        );
        assert_eq!(prob.blocks[4].kind, BlockKind::DiagonalFreeLinear);
        // 2·(m+p)·p = 12 scalar inequalities
        assert_eq!(prob.blocks[4].size, 2 * (1 + 2) * 2);
        // s_x(3) + l_x(3) + s_zx(2) + l_zx(2) + w(1) + f(6) + h1(6) + h2(3)
        assert_eq!(prob.num_vars, 26);
        // W variables appear only in block K
        let w_group = prob.var_groups.iter().find(|g| g.name == "w").unwrap();
        for t in &prob.entries {
            if t.var > w_group.offset && t.var <= w_group.offset + w_group.len {
                assert_eq!(t.block, 1);
            }
        }
    }

    #[test]
    fn lambda_zero_leaves_penalty_variables_free() {
        let cov = small_cov(2, 1, 2);
        let pen = PenaltyConfig::raw(0.0, 1.0).unwrap();
        let prob = build_sdp_problem(&cov, &pen).unwrap();
        for g in &prob.var_groups {
            if ["f", "h1", "h2"].contains(&g.name.as_str()) {
                for k in 0..g.len {
                    assert_eq!(prob.objective[g.offset + k], 0.0, "group {}", g.name);
                }
            }
        }
    }

    #[test]
    fn every_entry_is_upper_triangular() {
        let cov = small_cov(3, 2, 3);
        let pen = PenaltyConfig::ratio01(0.4, 0.3).unwrap();
        let prob = build_sdp_problem(&cov, &pen).unwrap();
        assert!(prob.entries.iter().all(|t| t.i <= t.j));
    }

    /// The nuclear-norm variational identity makes the exported objective
    /// match the penalised MLE objective at any feasible point.
    #[test]
    fn objective_agreement_at_random_feasible_points() {
        let cov = small_cov(3, 2, 5);
        for parametrisation in [PenaltyConfig::raw(0.7, 0.6), PenaltyConfig::ratio01(0.7, 0.35)] {
            let pen = parametrisation.unwrap();
            let prob = build_sdp_problem(&cov, &pen).unwrap();
            for seed in 0..20 {
                let params = random_feasible(3, 2, 100 + seed);
                let sdp_val = sdp_objective_at(&prob, &params).unwrap();
                let direct = model::objective(&params, &cov, &pen).unwrap();
                assert_relative_eq!(sdp_val, direct, max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn objective_agreement_with_m_zero() {
        let cov = small_cov(3, 0, 7);
        let pen = PenaltyConfig::raw(0.5, 1.0).unwrap();
        let prob = build_sdp_problem(&cov, &pen).unwrap();
        let params = random_feasible(3, 0, 11);
        let sdp_val = sdp_objective_at(&prob, &params).unwrap();
        let direct = model::objective(&params, &cov, &pen).unwrap();
        assert_relative_eq!(sdp_val, direct, max_relative = 1e-8);
    }

    #[test]
    fn file_roundtrip_is_structurally_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prob.dat-s");
        let cov = small_cov(2, 1, 9);
        let pen = PenaltyConfig::ratio01(0.31, 0.62).unwrap();
        let prob = build_sdp_problem(&cov, &pen).unwrap();
        write_sdpa(&prob, &path).unwrap();
        let back = parse_sdpa(&path).unwrap();
        assert_eq!(prob, back);
        // a second write of the parsed problem is byte-identical
        let path2 = dir.path().join("prob2.dat-s");
        write_sdpa(&back, &path2).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            std::fs::read_to_string(&path2).unwrap()
        );
    }

    #[test]
    fn toy_empty_problem_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.dat-s");
        let toy = SdpProblem {
            blocks: vec![SdpBlock { name: "X".into(), size: 2, kind: BlockKind::Psd }],
            var_groups: vec![],
            num_vars: 0,
            objective: vec![],
            entries: vec![],
            logdet_block: 0,
            metadata: SdpMetadata {
                m: 0,
                p: 2,
                lambda: 0.0,
                gamma: 1.0,
                weight_l1: 0.0,
                weight_nuclear: 0.0,
                epsilon: 0.0,
            },
        };
        write_sdpa(&toy, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let data: Vec<&str> = text
            .lines()
            .filter(|l| !l.starts_with('*') && !l.starts_with('"'))
            .collect();
        assert_eq!(data, vec!["0", "1", "2", ""]);
        let back = parse_sdpa(&path).unwrap();
        assert_eq!(toy, back);
    }

    #[test]
    fn json_mirror_roundtrip() {
        let cov = small_cov(2, 1, 13);
        let pen = PenaltyConfig::raw(0.2, 0.9).unwrap();
        let prob = build_sdp_problem(&cov, &pen).unwrap();
        let js = serde_json::to_string(&prob).unwrap();
        let back: SdpProblem = serde_json::from_str(&js).unwrap();
        assert_eq!(prob, back);
    }
}
