//! Alternating projections for rank-constrained LMI feasibility, and a
//! bisection on the cost level.
//!
//! The iterate is the decision vector `v`. One sweep evaluates every block
//! `Fₖ(v)`, projects it onto its cone or rank set, then maps the projected
//! blocks back to the nearest consistent `v` by least squares on the stacked
//! affine map (normal equations factored once per problem).
//!
//! Cone targets sit `interior_margin` inside the stated margins. A candidate
//! is then polished by applying the problem's inverse couplings exactly
//! (`X = Y⁻¹`, `β̃ = 1/β̄`, …) and accepted only when a from-scratch
//! evaluation shows every cone holding at its stated margin and every rank
//! gap within `residual_tolerance`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::linalg::{asymmetry, inverse_checked, recompose, smat, svec_into, svec_len, sym_eigen};
use crate::lmi::{ConstraintReport, RankLmiProblem, Sense, SlotKind, SlotShape};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("matrix is not symmetric (asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("rank bound {rank} outside 0..={dim}")]
    RankOutOfRange { rank: usize, dim: usize },
    #[error("variables {0:?} are not determined by any constraint block")]
    RankDeficientMap(Vec<usize>),
    #[error("no feasible point at the upper end of the bracket (γ = {0})")]
    BracketInfeasible(f64),
    #[error("invalid bisection bracket [{0}, {1}]")]
    BadBracket(f64, f64),
    #[error("problem has no γ level to bisect on")]
    NoGammaLevel,
    #[error("point has {got} entries, expected {expected}")]
    DimensionMismatch { got: usize, expected: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Iteration budget for one feasibility solve, shared by all restarts.
    pub max_iterations: usize,
    /// Displacement norm below which the iteration is at a fixed point.
    pub tolerance: f64,
    /// Largest rank gap accepted by the final verification.
    pub residual_tolerance: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Strictness margin used when assembling strict inequalities.
    pub epsilon: f64,
    /// Extra depth by which cone targets sit inside their sets.
    pub interior_margin: f64,
    /// Iterations between polished verification attempts.
    pub verify_every: usize,
    /// History length of the Anderson extrapolation; 0 gives plain alternation.
    pub anderson_memory: usize,
    /// Iterations without a 5% drop of the polished violation before a restart.
    pub stall_window: usize,
    pub bisection_bracket: (f64, f64),
    pub bisection_tol: f64,
    pub verbose: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 20_000,
            tolerance: 1e-7,
            residual_tolerance: 1e-6,
            restarts: 5,
            seed: 0,
            epsilon: 1e-6,
            interior_margin: 1e-4,
            verify_every: 10,
            anderson_memory: 8,
            stall_window: 2_000,
            bisection_bracket: (0.0, 1e4),
            bisection_tol: 1e-4,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Feasible,
    Infeasible,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    pub point: Vec<f64>,
    pub residuals: ConstraintReport,
    pub iterations: usize,
    pub restarts_used: usize,
}

impl SolveOutcome {
    pub fn is_feasible(&self) -> bool {
        self.status == SolveStatus::Feasible
    }
}

fn check_symmetric(s: &DMatrix<f64>) -> Result<(), SolverError> {
    let a = asymmetry(s);
    if a > 1e-10 * s.norm().max(f64::MIN_POSITIVE) && a > 0.0 {
        return Err(SolverError::NotSymmetric(a));
    }
    Ok(())
}

/// Nearest positive semidefinite matrix in the Frobenius norm.
pub fn project_psd(s: &DMatrix<f64>) -> Result<DMatrix<f64>, SolverError> {
    check_symmetric(s)?;
    Ok(clamp_below(s, 0.0))
}

/// Nearest symmetric matrix of rank at most `r`: keeps the `r` eigenvalues of
/// largest magnitude, ties going to the lower eigen-index.
pub fn project_rank(s: &DMatrix<f64>, r: usize) -> Result<DMatrix<f64>, SolverError> {
    check_symmetric(s)?;
    if r > s.nrows() {
        return Err(SolverError::RankOutOfRange { rank: r, dim: s.nrows() });
    }
    Ok(rank_truncate(s, r, false))
}

/// Nearest positive semidefinite matrix of rank at most `r`.
pub fn project_psd_rank(s: &DMatrix<f64>, r: usize) -> Result<DMatrix<f64>, SolverError> {
    check_symmetric(s)?;
    if r > s.nrows() {
        return Err(SolverError::RankOutOfRange { rank: r, dim: s.nrows() });
    }
    Ok(rank_truncate(s, r, true))
}

/// Eigenvalues raised to at least `floor`.
fn clamp_below(s: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let (mut vals, vecs) = sym_eigen(s);
    if vals.iter().all(|&x| x >= floor) {
        return s.clone();
    }
    for x in vals.iter_mut() {
        *x = x.max(floor);
    }
    recompose(&vals, &vecs)
}

fn rank_truncate(s: &DMatrix<f64>, r: usize, psd: bool) -> DMatrix<f64> {
    let (mut vals, vecs) = sym_eigen(s);
    let n = vals.len();
    let mut order: Vec<usize> = (0..n).collect();
    if psd {
        order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
    } else {
        order.sort_by(|&a, &b| vals[b].abs().total_cmp(&vals[a].abs()).then(a.cmp(&b)));
    }
    for (pos, &k) in order.iter().enumerate() {
        if pos >= r || (psd && vals[k] < 0.0) {
            vals[k] = 0.0;
        }
    }
    recompose(&vals, &vecs)
}

/// The stacked map `v ↦ (svec Fₖ(v))ₖ` in sparse row form, with the
/// factored normal equations of its least-squares inverse.
#[derive(Debug, Clone)]
pub struct AffineMap {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    constant: Vec<f64>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    normal: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    nvars: usize,
}

impl AffineMap {
    pub fn new(problem: &RankLmiProblem) -> Result<Self, SolverError> {
        let blocks: Vec<&crate::lmi::AffineBlock> = problem
            .cones
            .iter()
            .map(|c| &c.block)
            .chain(problem.ranks.iter().map(|r| &r.block))
            .collect();
        let nvars = problem.layout.len();
        let dims: Vec<usize> = blocks.iter().map(|b| b.dim).collect();
        let mut offsets = Vec::with_capacity(dims.len());
        let mut rows = 0;
        for &d in &dims {
            offsets.push(rows);
            rows += svec_len(d);
        }
        let mut constant = vec![0.0; rows];
        let mut entries: Vec<Vec<(usize, f64)>> = vec![Vec::new(); rows];
        let mut scratch = vec![0.0; rows];
        for (k, block) in blocks.iter().enumerate() {
            let len = svec_len(dims[k]);
            let off = offsets[k];
            svec_into(&block.constant, &mut constant[off..off + len]);
            for (var, coef) in &block.terms {
                svec_into(coef, &mut scratch[..len]);
                for (r, &x) in scratch[..len].iter().enumerate() {
                    if x != 0.0 {
                        entries[off + r].push((*var, x));
                    }
                }
            }
        }
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut used = vec![false; nvars];
        let mut normal = DMatrix::zeros(nvars, nvars);
        for row in &mut entries {
            row.sort_by_key(|e| e.0);
            // Merge repeated columns.
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for &(c, x) in row.iter() {
                match merged.last_mut() {
                    Some(last) if last.0 == c => last.1 += x,
                    _ => merged.push((c, x)),
                }
            }
            for &(a, xa) in &merged {
                used[a] = true;
                for &(b, xb) in &merged {
                    normal[(a, b)] += xa * xb;
                }
                cols.push(a);
                vals.push(xa);
            }
            row_ptr.push(cols.len());
        }
        let unused: Vec<usize> = (0..nvars).filter(|&j| !used[j]).collect();
        if !unused.is_empty() {
            return Err(SolverError::RankDeficientMap(unused));
        }
        let normal = normal.cholesky().ok_or_else(|| SolverError::RankDeficientMap(Vec::new()))?;
        Ok(Self { dims, offsets, constant, row_ptr, cols, vals, normal, nvars })
    }

    pub fn block_count(&self) -> usize {
        self.dims.len()
    }

    fn rows(&self) -> usize {
        self.constant.len()
    }

    /// Stacked svec values at `v`.
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        for r in 0..self.rows() {
            let mut acc = self.constant[r];
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * v[self.cols[k]];
            }
            out[r] = acc;
        }
    }

    /// Least-squares `v` for stacked svec targets.
    fn solve_stacked(&self, targets: &[f64]) -> Vec<f64> {
        let mut rhs = DVector::zeros(self.nvars);
        for r in 0..self.rows() {
            let t = targets[r] - self.constant[r];
            if t != 0.0 {
                for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                    rhs[self.cols[k]] += self.vals[k] * t;
                }
            }
        }
        self.normal.solve_mut(&mut rhs);
        rhs.as_slice().to_vec()
    }

    /// Block values at `v`, in cone-then-rank order.
    pub fn evaluate(&self, v: &[f64]) -> Vec<DMatrix<f64>> {
        let mut y = vec![0.0; self.rows()];
        self.apply(v, &mut y);
        (0..self.dims.len())
            .map(|k| smat(&y[self.offsets[k]..self.offsets[k] + svec_len(self.dims[k])], self.dims[k]))
            .collect()
    }

    /// Least-squares `v` for target block values, and the consistent blocks it produces.
    pub fn project(&self, targets: &[DMatrix<f64>]) -> Result<(Vec<f64>, Vec<DMatrix<f64>>), SolverError> {
        if targets.len() != self.dims.len() {
            return Err(SolverError::DimensionMismatch { got: targets.len(), expected: self.dims.len() });
        }
        let mut stacked = vec![0.0; self.rows()];
        for (k, t) in targets.iter().enumerate() {
            if t.nrows() != self.dims[k] || t.ncols() != self.dims[k] {
                return Err(SolverError::DimensionMismatch { got: t.nrows(), expected: self.dims[k] });
            }
            let off = self.offsets[k];
            svec_into(t, &mut stacked[off..off + svec_len(self.dims[k])]);
        }
        let v = self.solve_stacked(&stacked);
        let blocks = self.evaluate(&v);
        Ok((v, blocks))
    }
}

/// Target set of one block in the iteration.
#[derive(Debug, Clone, Copy)]
enum BlockSet {
    /// `sign · F ⪰ floor · I`
    Cone { sign: f64, floor: f64 },
    Rank { rank: usize, psd: bool },
}

fn block_sets(problem: &RankLmiProblem, delta: f64) -> Vec<BlockSet> {
    problem
        .cones
        .iter()
        .map(|c| BlockSet::Cone {
            sign: if c.sense == Sense::Positive { 1.0 } else { -1.0 },
            floor: c.margin + delta,
        })
        .chain(problem.ranks.iter().map(|r| BlockSet::Rank { rank: r.max_rank, psd: r.psd }))
        .collect()
}

/// Eigenpairs of `[[a, b], [b, c]]`, ascending.
fn eigen2(a: f64, b: f64, c: f64) -> ([f64; 2], [[f64; 2]; 2]) {
    let m = 0.5 * (a + c);
    let d = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let theta = 0.5 * (2.0 * b).atan2(a - c);
    let (sn, cs) = theta.sin_cos();
    ([m - d, m + d], [[-sn, cs], [cs, sn]])
}

/// Projects one svec block onto its set, writing the svec result.
fn project_svec(set: BlockSet, dim: usize, y: &[f64], out: &mut [f64]) {
    match dim {
        0 => {}
        1 => {
            out[0] = match set {
                BlockSet::Cone { sign, floor } => sign * (sign * y[0]).max(floor),
                BlockSet::Rank { rank, psd } => {
                    if rank == 0 || (psd && y[0] < 0.0) {
                        0.0
                    } else {
                        y[0]
                    }
                }
            };
        }
        2 => {
            let b = y[1] * std::f64::consts::FRAC_1_SQRT_2;
            let sign = match set {
                BlockSet::Cone { sign, .. } => sign,
                BlockSet::Rank { .. } => 1.0,
            };
            let (mut vals, vecs) = eigen2(sign * y[0], sign * b, sign * y[2]);
            match set {
                BlockSet::Cone { floor, .. } => {
                    if vals[0] >= floor {
                        out.copy_from_slice(y);
                        return;
                    }
                    vals = [vals[0].max(floor), vals[1].max(floor)];
                }
                BlockSet::Rank { rank, psd } => {
                    let order = if psd || vals[1].abs() >= vals[0].abs() { [1, 0] } else { [0, 1] };
                    let mut kept = [0.0; 2];
                    for (pos, &k) in order.iter().enumerate() {
                        if pos < rank && !(psd && vals[k] < 0.0) {
                            kept[k] = vals[k];
                        }
                    }
                    vals = kept;
                }
            }
            let [u, w] = vecs;
            let m00 = vals[0] * u[0] * u[0] + vals[1] * w[0] * w[0];
            let m01 = vals[0] * u[0] * u[1] + vals[1] * w[0] * w[1];
            let m11 = vals[0] * u[1] * u[1] + vals[1] * w[1] * w[1];
            out[0] = sign * m00;
            out[1] = sign * m01 * std::f64::consts::SQRT_2;
            out[2] = sign * m11;
        }
        _ => {
            let s = smat(y, dim);
            let p = match set {
                BlockSet::Cone { sign, floor } => {
                    if sign > 0.0 {
                        clamp_below(&s, floor)
                    } else {
                        -clamp_below(&(-s), floor)
                    }
                }
                BlockSet::Rank { rank, psd } => rank_truncate(&s, rank, psd),
            };
            svec_into(&p, out);
        }
    }
}

/// The projection sweep followed by the least-squares return, as a map on `v`.
struct Iteration<'a> {
    map: &'a AffineMap,
    sets: Vec<BlockSet>,
    values: Vec<f64>,
    targets: Vec<f64>,
}

impl<'a> Iteration<'a> {
    fn new(map: &'a AffineMap, sets: Vec<BlockSet>) -> Self {
        let rows = map.rows();
        Self { map, sets, values: vec![0.0; rows], targets: vec![0.0; rows] }
    }

    fn image(&mut self, v: &[f64]) -> Vec<f64> {
        self.map.apply(v, &mut self.values);
        for (k, set) in self.sets.iter().enumerate() {
            let off = self.map.offsets[k];
            let len = svec_len(self.map.dims[k]);
            project_svec(*set, self.map.dims[k], &self.values[off..off + len], &mut self.targets[off..off + len]);
        }
        self.map.solve_stacked(&self.targets)
    }
}

/// Least-squares projection of block values onto the set of values some
/// variable assignment produces. Returns the assignment and the blocks.
pub fn project_affine(
    problem: &RankLmiProblem,
    blocks: &[DMatrix<f64>],
) -> Result<(Vec<f64>, Vec<DMatrix<f64>>), SolverError> {
    AffineMap::new(problem)?.project(blocks)
}

/// Identity for symmetric slots, zero for full slots, one for scalars.
pub fn default_start(problem: &RankLmiProblem) -> Vec<f64> {
    let layout = &problem.layout;
    let mut v = vec![0.0; layout.len()];
    for (h, slot) in layout.slots().iter().enumerate() {
        match slot.shape {
            SlotShape::Symmetric(n) => layout.write(&mut v, h, &DMatrix::identity(n, n)),
            SlotShape::Full(..) => {}
            SlotShape::Scalar => layout.write_scalar(&mut v, h, 1.0),
        }
    }
    v
}

/// Applies the problem's inverse couplings exactly, then lowers `γ` to the
/// smallest value the cost inequality allows below the cap.
pub fn polish(problem: &RankLmiProblem, v: &[f64]) -> Vec<f64> {
    let layout = &problem.layout;
    let mut out = v.to_vec();
    for c in &problem.couplings {
        let shape = layout.slot(c.source).shape;
        match shape {
            SlotShape::Scalar => {
                let s = layout.read_scalar(&out, c.source);
                if s > 0.0 {
                    layout.write_scalar(&mut out, c.target, c.scale2 / s);
                }
            }
            _ => {
                let s = layout.read(&out, c.source);
                if s.clone().cholesky().is_some() {
                    if let Some(inv) = inverse_checked(&s, 1e-14) {
                        layout.write(&mut out, c.target, &(inv * c.scale2));
                    }
                }
            }
        }
    }
    tighten_gamma(problem, &mut out);
    out
}

fn tighten_gamma(problem: &RankLmiProblem, v: &mut [f64]) {
    let (Some(cost), Some(gamma)) = (problem.cost, problem.layout.find(SlotKind::Gamma, 0, 0)) else {
        return;
    };
    let cone = &problem.cones[cost];
    let level = problem.gamma_level().unwrap_or(f64::INFINITY);
    let current = problem.layout.read_scalar(v, gamma);
    problem.layout.write_scalar(v, gamma, 0.0);
    let rest = cone.block.evaluate(v)[(0, 0)];
    let mut g = cone.margin - rest;
    problem.layout.write_scalar(v, gamma, g);
    let mut bump = g.abs().max(1.0) * f64::EPSILON;
    while cone.violation(v) > 0.0 {
        g += bump;
        bump *= 2.0;
        problem.layout.write_scalar(v, gamma, g);
    }
    if g > level {
        problem.layout.write_scalar(v, gamma, current);
    }
}

/// Largest violation of the stated sets at `v`: cone margins exactly, rank
/// sets by Frobenius distance. A cheap screen before the full verification.
fn screen(map: &AffineMap, sets: &[BlockSet], v: &[f64], values: &mut [f64]) -> f64 {
    map.apply(v, values);
    let mut worst = 0.0_f64;
    for (k, set) in sets.iter().enumerate() {
        let dim = map.dims[k];
        let off = map.offsets[k];
        let y = &values[off..off + svec_len(dim)];
        let gap = match (*set, dim) {
            (_, 0) => 0.0,
            (BlockSet::Cone { sign, floor }, 1) => (floor - sign * y[0]).max(0.0),
            (BlockSet::Cone { sign, floor }, 2) => {
                let (vals, _) = eigen2(sign * y[0], sign * y[1] * std::f64::consts::FRAC_1_SQRT_2, sign * y[2]);
                (floor - vals[0]).max(0.0)
            }
            (BlockSet::Cone { sign, floor }, _) => {
                let (vals, _) = sym_eigen(&(smat(y, dim) * sign));
                (floor - vals[0]).max(0.0)
            }
            (BlockSet::Rank { rank, psd }, 2) => {
                let (vals, _) = eigen2(y[0], y[1] * std::f64::consts::FRAC_1_SQRT_2, y[2]);
                crate::lmi::rank_set_distance(&vals, rank, psd)
            }
            (BlockSet::Rank { rank, psd }, _) => {
                let (vals, _) = sym_eigen(&smat(y, dim));
                crate::lmi::rank_set_distance(vals.as_slice(), rank, psd)
            }
        };
        worst = worst.max(gap);
    }
    worst
}

/// Type-II Anderson extrapolation of the fixed-point map `v ↦ image`.
struct Anderson {
    memory: usize,
    points: Vec<DVector<f64>>,
    residuals: Vec<DVector<f64>>,
}

impl Anderson {
    fn new(memory: usize) -> Self {
        Self { memory, points: Vec::new(), residuals: Vec::new() }
    }

    fn clear(&mut self) {
        self.points.clear();
        self.residuals.clear();
    }

    fn extrapolate(&mut self, v: &[f64], image: &[f64]) -> Vec<f64> {
        if self.memory == 0 {
            return image.to_vec();
        }
        let x = DVector::from_column_slice(v);
        let f = DVector::from_column_slice(image) - &x;
        self.points.push(x.clone());
        self.residuals.push(f.clone());
        if self.points.len() > self.memory + 1 {
            self.points.remove(0);
            self.residuals.remove(0);
        }
        let k = self.points.len() - 1;
        if k == 0 {
            return image.to_vec();
        }
        let n = x.len();
        let mut df = DMatrix::zeros(n, k);
        let mut dx = DMatrix::zeros(n, k);
        for j in 0..k {
            df.set_column(j, &(&self.residuals[j + 1] - &self.residuals[j]));
            dx.set_column(j, &(&self.points[j + 1] - &self.points[j]));
        }
        let mut gram = df.transpose() * &df;
        let scale = (0..k).map(|j| gram[(j, j)]).fold(0.0, f64::max);
        if scale == 0.0 {
            return image.to_vec();
        }
        for j in 0..k {
            gram[(j, j)] += 1e-10 * scale;
        }
        let Some(chol) = gram.cholesky() else {
            self.clear();
            return image.to_vec();
        };
        let gamma = chol.solve(&(df.transpose() * &f));
        let next = x + f - (dx + df) * gamma;
        if next.iter().all(|z| z.is_finite()) {
            next.as_slice().to_vec()
        } else {
            self.clear();
            image.to_vec()
        }
    }
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn perturb(v: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let z: f64 = StandardNormal.sample(rng);
            x * (1.0 + 1e-2 * z)
        })
        .collect()
}

/// Feasibility from the default starting point.
pub fn solve_feasibility(problem: &RankLmiProblem, config: &SolverConfig) -> Result<SolveOutcome, SolverError> {
    solve_feasibility_from(problem, config, &default_start(problem))
}

pub fn solve_feasibility_from(
    problem: &RankLmiProblem,
    config: &SolverConfig,
    start: &[f64],
) -> Result<SolveOutcome, SolverError> {
    let map = AffineMap::new(problem)?;
    solve_with_map(problem, &map, config, start)
}

fn solve_with_map(
    problem: &RankLmiProblem,
    map: &AffineMap,
    config: &SolverConfig,
    start: &[f64],
) -> Result<SolveOutcome, SolverError> {
    if start.len() != problem.layout.len() {
        return Err(SolverError::DimensionMismatch { got: start.len(), expected: problem.layout.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut v = start.to_vec();
    let mut iterations = 0;
    let mut restarts_used = 0;
    let mut stalled_everywhere = true;

    // The start point itself may already be feasible (warm starts).
    let candidate = polish(problem, &v);
    let report = problem.residuals(&candidate);
    if report.passes(config.residual_tolerance) {
        return Ok(SolveOutcome { status: SolveStatus::Feasible, point: candidate, residuals: report, iterations, restarts_used });
    }

    let mut iteration = Iteration::new(map, block_sets(problem, config.interior_margin));
    let screens = block_sets(problem, 0.0);
    let mut anderson = Anderson::new(config.anderson_memory);
    let verify_every = config.verify_every.max(1);
    loop {
        let mut stalled = false;
        let mut last_step = f64::INFINITY;
        let mut best = f64::INFINITY;
        let mut last_gain = iterations;
        anderson.clear();
        while iterations < config.max_iterations {
            iterations += 1;
            let image = iteration.image(&v);
            let step = norm_diff(&image, &v);
            // Extrapolate only while the fixed-point residual keeps shrinking.
            v = if step <= 2.0 * last_step {
                anderson.extrapolate(&v, &image)
            } else {
                anderson.clear();
                image
            };
            last_step = step;
            let at_fixed_point = step <= config.tolerance;
            if !at_fixed_point && iterations % verify_every != 0 {
                continue;
            }
            let candidate = polish(problem, &v);
            let gap = screen(map, &screens, &candidate, &mut iteration.values);
            if config.verbose {
                eprintln!("iter {iterations} gap {gap:.3e} step {step:.3e}");
            }
            if gap <= config.residual_tolerance {
                let report = problem.residuals(&candidate);
                if report.passes(config.residual_tolerance) {
                    return Ok(SolveOutcome {
                        status: SolveStatus::Feasible,
                        point: candidate,
                        residuals: report,
                        iterations,
                        restarts_used,
                    });
                }
            }
            if gap < 0.95 * best {
                best = gap;
                last_gain = iterations;
            }
            let idle = iterations - last_gain;
            if (at_fixed_point && idle >= 10 * verify_every) || idle >= config.stall_window {
                stalled = true;
                break;
            }
        }
        stalled_everywhere &= stalled;
        if !stalled || restarts_used >= config.restarts {
            break;
        }
        restarts_used += 1;
        v = perturb(&v, &mut rng);
    }

    let status = if stalled_everywhere && iterations < config.max_iterations {
        SolveStatus::Infeasible
    } else {
        SolveStatus::MaxIterations
    };
    let residuals = problem.residuals(&v);
    Ok(SolveOutcome { status, point: v, residuals, iterations, restarts_used })
}

/// Smallest feasible cost level found by bisection over `config.bisection_bracket`,
/// with each trial warm-started from the best point so far.
pub fn minimize_gamma(problem: &RankLmiProblem, config: &SolverConfig) -> Result<(f64, SolveOutcome), SolverError> {
    minimize_gamma_from(problem, config, &default_start(problem))
}

pub fn minimize_gamma_from(
    problem: &RankLmiProblem,
    config: &SolverConfig,
    start: &[f64],
) -> Result<(f64, SolveOutcome), SolverError> {
    let (lo, hi) = config.bisection_bracket;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(SolverError::BadBracket(lo, hi));
    }
    problem.gamma_cap.ok_or(SolverError::NoGammaLevel)?;
    let gamma = problem.layout.find(SlotKind::Gamma, 0, 0).ok_or(SolverError::NoGammaLevel)?;
    let map = AffineMap::new(problem)?;
    let mut trial = problem.clone();

    trial.set_gamma_level(hi);
    let first = solve_with_map(&trial, &map, config, start)?;
    if !first.is_feasible() {
        return Err(SolverError::BracketInfeasible(hi));
    }
    let mut total_iterations = first.iterations;
    let mut best = first;
    let mut lo = lo;
    let mut hi = problem.layout.read_scalar(&best.point, gamma);
    while hi - lo > config.bisection_tol {
        let mid = 0.5 * (lo + hi);
        trial.set_gamma_level(mid);
        let out = solve_with_map(&trial, &map, config, &best.point)?;
        total_iterations += out.iterations;
        if config.verbose {
            eprintln!("bisection gamma {mid:.6e} -> {:?} ({} iterations)", out.status, out.iterations);
        }
        if out.is_feasible() {
            hi = problem.layout.read_scalar(&out.point, gamma).min(mid);
            best = out;
        } else {
            lo = mid;
        }
    }
    best.iterations = total_iterations;
    Ok((problem.layout.read_scalar(&best.point, gamma), best))
}
