//! Rank-constrained LMI system for neighboring-mode-dependent synthesis.
//!
//! Decision variables live in one flat vector described by a
//! [`VariableLayout`]. Every constraint is an affine symmetric matrix function
//! of that vector ([`AffineBlock`]), tagged either with a cone sense
//! ([`ConeConstraint`]) or a rank bound ([`RankConstraint`]).
//!
//! Per subsystem `i` and global mode `μ` the assembled system holds
//!
//! * the 3×3 block inequality in `Yᵢ(μ)` and the scalar multipliers
//!   (strict, realised as `⪯ −εI`);
//! * the gain-distance block in `Kᵢ(φᵢ(μ))`, `Xᵢ(μ)`, `τ̃ᵢᵘ`, `β̃ᵢ(μ)` (`⪯ 0`);
//! * `rank [[β̄ᵢ(μ), 1], [1, β̃ᵢ(μ)]] ≤ 1` and `rank [[Yᵢ(μ), I], [I, Xᵢ(μ)]] ≤ nᵢ`,
//!   both additionally positive semidefinite;
//!
//! and per subsystem the couplings `rank [[τ̃ᵢ, 1], [1, τᵢ]] ≤ 1`,
//! `rank [[θ̃ᵢ, 1], [1, θᵢ]] ≤ 1` that make the cost bound affine in the layout.
//! Channels of zero width drop their terms, blocks and multipliers.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{inverse_checked, max_eigenvalue, spectral_norm, sym_eigen, svec_len};
use crate::mode_atlas::InfoPattern;
use crate::model::{stationary_distribution, ModelError, PlantModel};

/// Default strictness margin for strict inequalities.
pub const DEFAULT_EPSILON: f64 = 1e-6;
/// Pivot tolerance when inverting `Y` during reconstruction.
pub const SINGULAR_Y_PIVOT: f64 = 1e-10;
/// Tolerance on `‖XY − I‖` and `|β̄β̃ − 1|` accepted by [`schur_check`].
pub const COUPLING_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LmiError {
    #[error("pattern was built over a different mode atlas")]
    AtlasMismatch,
    #[error("subsystem {0} has zero states")]
    ZeroDimensionDegenerate(usize),
    #[error("model has no initial state")]
    MissingInitialState,
    #[error("scalar {name} must be positive, got {value}")]
    NonpositiveScalar { name: String, value: f64 },
    #[error("Y of subsystem {subsystem} at mode {mode} is singular")]
    SingularY { subsystem: usize, mode: usize },
    #[error("weight matrix of subsystem {subsystem} at mode {mode} is singular")]
    SingularWeight { subsystem: usize, mode: usize },
    #[error("given input-uncertainty levels have the wrong shape or are not positive")]
    BadBetaU,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SlotKind {
    X,
    Y,
    Gain,
    BetaBar,
    BetaTilde,
    TauUTilde,
    TauTilde,
    ThetaTilde,
    Tau,
    Theta,
    Gamma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotShape {
    Symmetric(usize),
    Full(usize, usize),
    Scalar,
}

impl SlotShape {
    pub fn len(self) -> usize {
        match self {
            SlotShape::Symmetric(n) => svec_len(n),
            SlotShape::Full(r, c) => r * c,
            SlotShape::Scalar => 1,
        }
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }

    pub fn dims(self) -> (usize, usize) {
        match self {
            SlotShape::Symmetric(n) => (n, n),
            SlotShape::Full(r, c) => (r, c),
            SlotShape::Scalar => (1, 1),
        }
    }

    /// Matrix basis element for local variable `k`.
    fn basis(self, k: usize) -> DMatrix<f64> {
        let (r, c) = self.dims();
        let mut e = DMatrix::zeros(r, c);
        match self {
            SlotShape::Symmetric(n) => {
                let (row, col) = sym_index(n, k);
                e[(row, col)] = 1.0;
                e[(col, row)] = 1.0;
            }
            SlotShape::Full(_, cols) => e[(k / cols, k % cols)] = 1.0,
            SlotShape::Scalar => e[(0, 0)] = 1.0,
        }
        e
    }
}

/// Upper-triangle row-major position of variable `k` of an `n × n` symmetric slot.
fn sym_index(n: usize, mut k: usize) -> (usize, usize) {
    for r in 0..n {
        let len = n - r;
        if k < len {
            return (r, r + k);
        }
        k -= len;
    }
    unreachable!("symmetric slot index out of range")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    pub kind: SlotKind,
    pub subsystem: usize,
    /// Global mode for per-mode slots, class for gains, 0 otherwise.
    pub index: usize,
    pub shape: SlotShape,
    pub offset: usize,
}

/// Named slots over the flat decision vector.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VariableLayout {
    slots: Vec<Slot>,
    lookup: BTreeMap<(SlotKind, usize, usize), usize>,
    len: usize,
}

impl VariableLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a slot and returns its handle.
    pub fn push(&mut self, kind: SlotKind, subsystem: usize, index: usize, shape: SlotShape) -> usize {
        let handle = self.slots.len();
        self.slots.push(Slot { kind, subsystem, index, shape, offset: self.len });
        self.lookup.insert((kind, subsystem, index), handle);
        self.len += shape.len();
        handle
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn slot(&self, handle: usize) -> &Slot {
        &self.slots[handle]
    }

    pub fn find(&self, kind: SlotKind, subsystem: usize, index: usize) -> Option<usize> {
        self.lookup.get(&(kind, subsystem, index)).copied()
    }

    pub fn read(&self, v: &[f64], handle: usize) -> DMatrix<f64> {
        let slot = &self.slots[handle];
        let (r, c) = slot.shape.dims();
        let mut m = DMatrix::zeros(r, c);
        for k in 0..slot.shape.len() {
            m += slot.shape.basis(k) * v[slot.offset + k];
        }
        m
    }

    pub fn read_scalar(&self, v: &[f64], handle: usize) -> f64 {
        v[self.slots[handle].offset]
    }

    pub fn write(&self, v: &mut [f64], handle: usize, m: &DMatrix<f64>) {
        let slot = &self.slots[handle];
        match slot.shape {
            SlotShape::Symmetric(n) => {
                let mut k = 0;
                for r in 0..n {
                    for c in r..n {
                        v[slot.offset + k] = 0.5 * (m[(r, c)] + m[(c, r)]);
                        k += 1;
                    }
                }
            }
            SlotShape::Full(rows, cols) => {
                for r in 0..rows {
                    for c in 0..cols {
                        v[slot.offset + r * cols + c] = m[(r, c)];
                    }
                }
            }
            SlotShape::Scalar => v[slot.offset] = m[(0, 0)],
        }
    }

    pub fn write_scalar(&self, v: &mut [f64], handle: usize, x: f64) {
        v[self.slots[handle].offset] = x;
    }
}

/// `F(v) = C + Σⱼ vⱼ Aⱼ` with symmetric `C`, `Aⱼ`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineBlock {
    pub dim: usize,
    pub constant: DMatrix<f64>,
    pub terms: Vec<(usize, DMatrix<f64>)>,
}

impl AffineBlock {
    pub fn evaluate(&self, v: &[f64]) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for (var, coef) in &self.terms {
            if v[*var] != 0.0 {
                out += coef * v[*var];
            }
        }
        out
    }
}

/// Assembles an [`AffineBlock`] from sub-block contributions.
pub struct BlockBuilder<'a> {
    layout: &'a VariableLayout,
    offsets: Vec<usize>,
    dim: usize,
    constant: DMatrix<f64>,
    terms: BTreeMap<usize, DMatrix<f64>>,
}

impl<'a> BlockBuilder<'a> {
    pub fn new(layout: &'a VariableLayout, sizes: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut dim = 0;
        for &s in sizes {
            offsets.push(dim);
            dim += s;
        }
        Self { layout, offsets, dim, constant: DMatrix::zeros(dim, dim), terms: BTreeMap::new() }
    }

    fn place(target: &mut DMatrix<f64>, r0: usize, c0: usize, m: &DMatrix<f64>, mirror: bool) {
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                target[(r0 + r, c0 + c)] += m[(r, c)];
                if mirror {
                    target[(c0 + c, r0 + r)] += m[(r, c)];
                }
            }
        }
    }

    /// Constant `m` at sub-block `(r, c)`; mirrored when off the diagonal.
    pub fn constant(&mut self, r: usize, c: usize, m: &DMatrix<f64>) -> &mut Self {
        let (r0, c0) = (self.offsets[r], self.offsets[c]);
        Self::place(&mut self.constant, r0, c0, m, r != c);
        self
    }

    /// `left · V · right` at sub-block `(r, c)`; mirrored when off the diagonal.
    /// On the diagonal the caller guarantees the contribution is symmetric.
    pub fn var(&mut self, r: usize, c: usize, left: &DMatrix<f64>, handle: usize, right: &DMatrix<f64>) -> &mut Self {
        let slot = self.layout.slot(handle).clone();
        let (r0, c0) = (self.offsets[r], self.offsets[c]);
        for k in 0..slot.shape.len() {
            let contribution = left * slot.shape.basis(k) * right;
            if contribution.iter().all(|&x| x == 0.0) {
                continue;
            }
            let dim = self.dim;
            let entry = self.terms.entry(slot.offset + k).or_insert_with(|| DMatrix::zeros(dim, dim));
            Self::place(entry, r0, c0, &contribution, r != c);
        }
        self
    }

    /// `L·V + V·Lᵀ` at diagonal sub-block `r`.
    pub fn var_sym(&mut self, r: usize, left: &DMatrix<f64>, handle: usize) -> &mut Self {
        let slot = self.layout.slot(handle).clone();
        let r0 = self.offsets[r];
        for k in 0..slot.shape.len() {
            let e = slot.shape.basis(k);
            let contribution = left * &e + &e * left.transpose();
            if contribution.iter().all(|&x| x == 0.0) {
                continue;
            }
            let dim = self.dim;
            let entry = self.terms.entry(slot.offset + k).or_insert_with(|| DMatrix::zeros(dim, dim));
            Self::place(entry, r0, r0, &contribution, false);
        }
        self
    }

    /// `v · m` for a scalar slot at sub-block `(r, c)`.
    pub fn scalar(&mut self, r: usize, c: usize, handle: usize, m: &DMatrix<f64>) -> &mut Self {
        let slot = self.layout.slot(handle).clone();
        debug_assert_eq!(slot.shape, SlotShape::Scalar);
        let (r0, c0) = (self.offsets[r], self.offsets[c]);
        let dim = self.dim;
        let entry = self.terms.entry(slot.offset).or_insert_with(|| DMatrix::zeros(dim, dim));
        Self::place(entry, r0, c0, m, r != c);
        self
    }

    pub fn build(self) -> AffineBlock {
        let terms = self.terms.into_iter().filter(|(_, m)| m.iter().any(|&x| x != 0.0)).collect();
        AffineBlock { dim: self.dim, constant: self.constant, terms }
    }
}

/// Cone sense: `Negative` means `F ⪯ −margin·I`, `Positive` means `F ⪰ margin·I`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Negative,
    Positive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeConstraint {
    pub label: String,
    pub block: AffineBlock,
    pub sense: Sense,
    pub margin: f64,
}

impl ConeConstraint {
    /// `sense · F(v)`, so that the constraint reads `oriented ⪰ margin·I`.
    pub fn oriented(&self, v: &[f64]) -> DMatrix<f64> {
        let f = self.block.evaluate(v);
        match self.sense {
            Sense::Positive => f,
            Sense::Negative => -f,
        }
    }

    /// Amount by which the smallest eigenvalue of the oriented block misses the margin.
    pub fn violation(&self, v: &[f64]) -> f64 {
        let (vals, _) = sym_eigen(&self.oriented(v));
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        (self.margin - lo).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankConstraint {
    pub label: String,
    pub block: AffineBlock,
    pub max_rank: usize,
    /// Also require the block to be positive semidefinite.
    pub psd: bool,
}

impl RankConstraint {
    /// Frobenius distance to the (PSD) rank-bounded set.
    pub fn violation(&self, v: &[f64]) -> f64 {
        let (vals, _) = sym_eigen(&self.block.evaluate(v));
        rank_set_distance(vals.as_slice(), self.max_rank, self.psd)
    }
}

/// Frobenius distance from a symmetric matrix with spectrum `vals` to the set
/// of (PSD) matrices of rank at most `r`.
pub fn rank_set_distance(vals: &[f64], r: usize, psd: bool) -> f64 {
    let mut kept: Vec<f64> = vals.to_vec();
    if psd {
        kept.sort_by(|a, b| b.total_cmp(a));
        let mut gap = 0.0;
        for (k, &x) in kept.iter().enumerate() {
            if k >= r || x < 0.0 {
                gap += x * x;
            }
        }
        gap.sqrt()
    } else {
        kept.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
        kept.iter().skip(r).map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Structural hint: the rank constraint with index `rank` encodes
/// `target = scale² · source⁻¹` between two same-shape slots.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseCoupling {
    pub source: usize,
    pub target: usize,
    pub scale2: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankLmiProblem {
    pub layout: VariableLayout,
    pub cones: Vec<ConeConstraint>,
    pub ranks: Vec<RankConstraint>,
    /// Applied in order by the solver's reconstruction step.
    pub couplings: Vec<InverseCoupling>,
    /// Cone constraint `level − γ ⪰ 0` whose constant carries the γ level.
    pub gamma_cap: Option<usize>,
    /// Cone constraint `γ − cost ⪰ ε`.
    pub cost: Option<usize>,
}

impl RankLmiProblem {
    pub fn new(layout: VariableLayout) -> Self {
        Self { layout, cones: Vec::new(), ranks: Vec::new(), couplings: Vec::new(), gamma_cap: None, cost: None }
    }

    /// Moves the γ level of the cost family.
    pub fn set_gamma_level(&mut self, level: f64) {
        if let Some(k) = self.gamma_cap {
            self.cones[k].block.constant[(0, 0)] = level;
        }
    }

    pub fn gamma_level(&self) -> Option<f64> {
        self.gamma_cap.map(|k| self.cones[k].block.constant[(0, 0)])
    }

    /// Evaluates every constraint from scratch at `v`.
    pub fn residuals(&self, v: &[f64]) -> ConstraintReport {
        let cone = self.cones.iter().map(|c| c.violation(v)).collect();
        let rank = self.ranks.iter().map(|c| c.violation(v)).collect();
        ConstraintReport { cone, rank }
    }
}

/// Per-constraint violations at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintReport {
    pub cone: Vec<f64>,
    pub rank: Vec<f64>,
}

impl ConstraintReport {
    pub fn max_cone(&self) -> f64 {
        self.cone.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_rank(&self) -> f64 {
        self.rank.iter().copied().fold(0.0, f64::max)
    }

    /// Cone constraints must hold exactly at their margins; rank sets within `tol`.
    pub fn passes(&self, tol: f64) -> bool {
        self.max_cone() == 0.0 && self.max_rank() <= tol
    }
}

/// How the input-uncertainty levels `βᵢᵘ(μ)` are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum BetaU {
    /// Solved for, as `βᵢᵘ(μ) = β̃ᵢ(μ)·τ̃ᵢᵘ`.
    Free,
    /// Fixed in advance, indexed `[subsystem][global mode]`.
    Given(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssembleOptions {
    pub epsilon: f64,
    pub beta_u: BetaU,
    /// Weight the cost bound with the stationary distribution instead of π.
    pub use_stationary: bool,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        Self { epsilon: DEFAULT_EPSILON, beta_u: BetaU::Free, use_stationary: false }
    }
}

/// Which optional channels each subsystem carries.
#[derive(Debug, Clone, Copy)]
struct Channels {
    n: usize,
    m: usize,
    g: usize,
    s: usize,
    h: usize,
}

fn channels(model: &PlantModel, i: usize) -> Channels {
    let sub = &model.subsystems[i];
    Channels {
        n: sub.states(),
        m: sub.inputs(),
        g: sub.local_uncertainty_inputs(),
        s: sub.interconnection_inputs(),
        h: sub.uncertainty_outputs(),
    }
}

/// Layout for `model` under `pattern`: per `(i, μ)` the `X`, `Y`, `β̄`, `β̃`
/// slots, per `(i, σ)` a gain, per `i` the multipliers present, and `γ`.
pub fn build_layout(model: &PlantModel, pattern: &InfoPattern) -> VariableLayout {
    let big_m = model.atlas.modes();
    let mut layout = VariableLayout::new();
    for i in 0..model.subsystem_count() {
        let ch = channels(model, i);
        for mu in 0..big_m {
            layout.push(SlotKind::X, i, mu, SlotShape::Symmetric(ch.n));
            layout.push(SlotKind::Y, i, mu, SlotShape::Symmetric(ch.n));
        }
        if ch.m > 0 {
            for sigma in 0..pattern.class_count(i) {
                layout.push(SlotKind::Gain, i, sigma, SlotShape::Full(ch.m, ch.n));
            }
            for mu in 0..big_m {
                layout.push(SlotKind::BetaBar, i, mu, SlotShape::Scalar);
                layout.push(SlotKind::BetaTilde, i, mu, SlotShape::Scalar);
            }
            layout.push(SlotKind::TauUTilde, i, 0, SlotShape::Scalar);
        }
        if ch.g > 0 {
            layout.push(SlotKind::TauTilde, i, 0, SlotShape::Scalar);
            layout.push(SlotKind::Tau, i, 0, SlotShape::Scalar);
        }
        if ch.s > 0 {
            layout.push(SlotKind::ThetaTilde, i, 0, SlotShape::Scalar);
            layout.push(SlotKind::Theta, i, 0, SlotShape::Scalar);
        }
    }
    layout.push(SlotKind::Gamma, 0, 0, SlotShape::Scalar);
    layout
}

fn identity(n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n)
}

fn inverse_weight(w: &DMatrix<f64>, i: usize, mu: usize) -> Result<DMatrix<f64>, LmiError> {
    if w.nrows() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    inverse_checked(w, 1e-12).ok_or(LmiError::SingularWeight { subsystem: i + 1, mode: mu + 1 })
}

fn check_inputs(model: &PlantModel, pattern: &InfoPattern) -> Result<(), LmiError> {
    if !pattern.matches(&model.atlas) {
        return Err(LmiError::AtlasMismatch);
    }
    for i in 0..model.subsystem_count() {
        if model.subsystems[i].states() == 0 {
            return Err(LmiError::ZeroDimensionDegenerate(i + 1));
        }
    }
    Ok(())
}

/// Emits the stabilization LMIs for every `(i, μ)` plus positivity of every
/// multiplier and of `X`, `Y`.
pub fn assemble_stabilization(
    model: &PlantModel,
    pattern: &InfoPattern,
    options: &AssembleOptions,
) -> Result<RankLmiProblem, LmiError> {
    check_inputs(model, pattern)?;
    let eps = options.epsilon;
    let big_n = model.subsystem_count();
    let big_m = model.atlas.modes();
    let layout = build_layout(model, pattern);
    let mut cones = Vec::new();
    let mut ranks = Vec::new();
    let mut couplings = Vec::new();
    let find = |kind, i, idx| layout.find(kind, i, idx);

    if let BetaU::Given(levels) = &options.beta_u {
        let ok = levels.len() == big_n
            && levels.iter().enumerate().all(|(i, row)| {
                channels(model, i).m == 0 || (row.len() == big_m && row.iter().all(|&b| b > 0.0))
            });
        if !ok {
            return Err(LmiError::BadBetaU);
        }
    }

    for i in 0..big_n {
        let ch = channels(model, i);
        let tau_u = find(SlotKind::TauUTilde, i, 0);
        let tau = find(SlotKind::TauTilde, i, 0);
        let theta = find(SlotKind::ThetaTilde, i, 0);
        // Interconnection multipliers of the other subsystems that receive ζᵢ.
        let others: Vec<usize> = (0..big_n)
            .filter(|&j| j != i)
            .filter_map(|j| find(SlotKind::ThetaTilde, j, 0))
            .collect();

        for mu in 0..big_m {
            let blk = model.lift(i, mu)?;
            let y = find(SlotKind::Y, i, mu).expect("Y slot");
            let x = find(SlotKind::X, i, mu).expect("X slot");
            let g_inv = inverse_weight(model.g_weight(i, mu), i, mu)?;
            let r_inv = inverse_weight(model.r_weight(i, mu), i, mu)?;
            let n = ch.n;
            let eye = identity(n);

            // Sub-block order: G11 | other modes | R | β̄ | τ̃ | θ̃ⱼ…
            let mut sizes = vec![n];
            sizes.extend(std::iter::repeat_n(n, big_m - 1));
            let r_pos = sizes.len();
            sizes.push(n);
            let beta_pos = (ch.m > 0).then(|| {
                sizes.push(n);
                sizes.len() - 1
            });
            let tau_pos = (tau.is_some() && ch.h > 0).then(|| {
                sizes.push(ch.h);
                sizes.len() - 1
            });
            let theta_pos: Vec<(usize, usize)> = if ch.h > 0 {
                others
                    .iter()
                    .map(|&t| {
                        sizes.push(ch.h);
                        (sizes.len() - 1, t)
                    })
                    .collect()
            } else {
                Vec::new()
            };

            let mut b = BlockBuilder::new(&layout, &sizes);
            b.var_sym(0, &blk.a, y);
            b.var(0, 0, &(eye.clone() * model.atlas.rate(mu, mu)), y, &eye);
            if ch.m > 0 {
                let bgb = &blk.b * &g_inv * blk.b.transpose();
                b.constant(0, 0, &(-bgb));
                b.scalar(0, 0, tau_u.expect("τ̃ᵘ slot"), &(&blk.b * blk.b.transpose()));
            }
            if let Some(t) = tau {
                b.scalar(0, 0, t, &(&blk.e * blk.e.transpose()));
            }
            if let Some(t) = theta {
                b.scalar(0, 0, t, &(&blk.l * blk.l.transpose()));
            }
            let mut k = 1;
            for nu in (0..big_m).filter(|&nu| nu != mu) {
                let q = model.atlas.rate(mu, nu);
                b.var(0, k, &eye, y, &(eye.clone() * q.sqrt()));
                let y_nu = find(SlotKind::Y, i, nu).expect("Y slot");
                b.var(k, k, &(-eye.clone()), y_nu, &eye);
                k += 1;
            }
            b.var(0, r_pos, &eye, y, &eye);
            b.constant(r_pos, r_pos, &(-r_inv));
            let ht = blk.h.transpose();
            if let Some(p) = beta_pos {
                b.var(0, p, &eye, y, &eye);
                let bb = find(SlotKind::BetaBar, i, mu).expect("β̄ slot");
                b.scalar(p, p, bb, &(-eye.clone()));
            }
            if let Some(p) = tau_pos {
                b.var(0, p, &eye, y, &ht);
                b.scalar(p, p, tau.unwrap(), &(-identity(ch.h)));
            }
            for &(p, t) in &theta_pos {
                b.var(0, p, &eye, y, &ht);
                b.scalar(p, p, t, &(-identity(ch.h)));
            }
            cones.push(ConeConstraint {
                label: format!("riccati[{},{}]", i + 1, mu + 1),
                block: b.build(),
                sense: Sense::Negative,
                margin: eps,
            });

            if ch.m > 0 {
                let sigma = pattern.class_of(i, mu);
                let gain = find(SlotKind::Gain, i, sigma).expect("gain slot");
                let bt = find(SlotKind::BetaTilde, i, mu).expect("β̃ slot");
                let mut b = BlockBuilder::new(&layout, &[n, ch.m]);
                b.scalar(0, 0, tau_u.unwrap(), &(-eye.clone()));
                b.var(1, 0, &identity(ch.m), gain, &eye);
                b.var(1, 0, &(&g_inv * blk.b.transpose()), x, &eye);
                b.scalar(1, 1, bt, &(-identity(ch.m)));
                cones.push(ConeConstraint {
                    label: format!("gain_distance[{},{}]", i + 1, mu + 1),
                    block: b.build(),
                    sense: Sense::Negative,
                    margin: 0.0,
                });

                let bb = find(SlotKind::BetaBar, i, mu).expect("β̄ slot");
                let mut b = BlockBuilder::new(&layout, &[1, 1]);
                b.scalar(0, 0, bb, &identity(1));
                b.constant(0, 1, &identity(1));
                b.scalar(1, 1, bt, &identity(1));
                ranks.push(RankConstraint {
                    label: format!("beta_inverse[{},{}]", i + 1, mu + 1),
                    block: b.build(),
                    max_rank: 1,
                    psd: true,
                });
                let beta_rank = ranks.len() - 1;

                match &options.beta_u {
                    BetaU::Free => couplings.push(InverseCoupling {
                        source: bb,
                        target: bt,
                        scale2: 1.0,
                        rank: beta_rank,
                    }),
                    BetaU::Given(levels) => {
                        let level = levels[i][mu];
                        let tu = tau_u.unwrap();
                        let mut b = BlockBuilder::new(&layout, &[1, 1]);
                        b.scalar(0, 0, tu, &identity(1));
                        b.constant(0, 1, &DMatrix::from_element(1, 1, level.sqrt()));
                        b.scalar(1, 1, bt, &identity(1));
                        ranks.push(RankConstraint {
                            label: format!("beta_u_given[{},{}]", i + 1, mu + 1),
                            block: b.build(),
                            max_rank: 1,
                            psd: true,
                        });
                        couplings.push(InverseCoupling {
                            source: tu,
                            target: bt,
                            scale2: level,
                            rank: ranks.len() - 1,
                        });
                        couplings.push(InverseCoupling {
                            source: bt,
                            target: bb,
                            scale2: 1.0,
                            rank: beta_rank,
                        });
                    }
                }
            }

            let mut b = BlockBuilder::new(&layout, &[n, n]);
            b.var(0, 0, &eye, y, &eye);
            b.constant(0, 1, &eye);
            b.var(1, 1, &eye, x, &eye);
            ranks.push(RankConstraint {
                label: format!("x_inverse[{},{}]", i + 1, mu + 1),
                block: b.build(),
                max_rank: n,
                psd: true,
            });
            couplings.push(InverseCoupling { source: y, target: x, scale2: 1.0, rank: ranks.len() - 1 });

            for (handle, name) in [(x, "x"), (y, "y")] {
                let mut b = BlockBuilder::new(&layout, &[n]);
                b.var(0, 0, &eye, handle, &eye);
                cones.push(ConeConstraint {
                    label: format!("{name}_positive[{},{}]", i + 1, mu + 1),
                    block: b.build(),
                    sense: Sense::Positive,
                    margin: eps,
                });
            }
        }

        for (tilde, plain, name) in [
            (SlotKind::TauTilde, SlotKind::Tau, "tau_inverse"),
            (SlotKind::ThetaTilde, SlotKind::Theta, "theta_inverse"),
        ] {
            if let (Some(t), Some(p)) = (find(tilde, i, 0), find(plain, i, 0)) {
                let mut b = BlockBuilder::new(&layout, &[1, 1]);
                b.scalar(0, 0, t, &identity(1));
                b.constant(0, 1, &identity(1));
                b.scalar(1, 1, p, &identity(1));
                ranks.push(RankConstraint {
                    label: format!("{name}[{}]", i + 1),
                    block: b.build(),
                    max_rank: 1,
                    psd: true,
                });
                couplings.push(InverseCoupling { source: t, target: p, scale2: 1.0, rank: ranks.len() - 1 });
            }
        }
    }

    // Every scalar multiplier is bounded below by ε.
    for (handle, slot) in layout.slots().iter().enumerate() {
        if slot.shape == SlotShape::Scalar && slot.kind != SlotKind::Gamma {
            let mut b = BlockBuilder::new(&layout, &[1]);
            b.scalar(0, 0, handle, &identity(1));
            cones.push(ConeConstraint {
                label: format!("{:?}_positive[{},{}]", slot.kind, slot.subsystem + 1, slot.index + 1),
                block: b.build(),
                sense: Sense::Positive,
                margin: eps,
            });
        }
    }

    // Couplings are applied in order; sources of later couplings must be set first.
    couplings.sort_by_key(|c| coupling_stage(layout.slot(c.source).kind));

    Ok(RankLmiProblem { layout, cones, ranks, couplings, gamma_cap: None, cost: None })
}

fn coupling_stage(kind: SlotKind) -> u8 {
    match kind {
        SlotKind::TauUTilde => 0,
        SlotKind::BetaTilde => 1,
        _ => 2,
    }
}

/// The scalar inequality `Σᵢ x₀ᵢᵀ[Σ_μ π_μ Xᵢ(μ) + τᵢ S̄ᵢ + θᵢ S̃ᵢ] x₀ᵢ ⪯ γ − ε`,
/// written as `γ − (…) ⪰ ε` over the auxiliary slots `τᵢ`, `θᵢ`.
pub fn assemble_cost_bound(
    model: &PlantModel,
    layout: &VariableLayout,
    use_stationary: bool,
    epsilon: f64,
) -> Result<ConeConstraint, LmiError> {
    if model.x0.len() != model.total_states() || model.x0.is_empty() {
        return Err(LmiError::MissingInitialState);
    }
    let pi = cost_distribution(model, use_stationary)?;
    let gamma = layout.find(SlotKind::Gamma, 0, 0).expect("γ slot");
    let mut b = BlockBuilder::new(layout, &[1]);
    b.scalar(0, 0, gamma, &identity(1));
    for i in 0..model.subsystem_count() {
        let x0 = model.initial_state(i);
        let x0t = x0.transpose();
        let col: DMatrix<f64> = DMatrix::from_column_slice(x0.len(), 1, x0.as_slice());
        let row: DMatrix<f64> = DMatrix::from_row_slice(1, x0.len(), x0t.as_slice());
        for mu in 0..model.atlas.modes() {
            let x = layout.find(SlotKind::X, i, mu).expect("X slot");
            b.var(0, 0, &(row.clone() * -pi[mu]), x, &col);
        }
        let budget = &model.budgets[i];
        if let Some(t) = layout.find(SlotKind::Tau, i, 0) {
            let w = (&row * &budget.s_bar * &col)[(0, 0)];
            b.scalar(0, 0, t, &DMatrix::from_element(1, 1, -w));
        }
        if let Some(t) = layout.find(SlotKind::Theta, i, 0) {
            let w = (&row * &budget.s_tilde * &col)[(0, 0)];
            b.scalar(0, 0, t, &DMatrix::from_element(1, 1, -w));
        }
    }
    Ok(ConeConstraint { label: "cost_bound".into(), block: b.build(), sense: Sense::Positive, margin: epsilon })
}

pub fn cost_distribution(model: &PlantModel, use_stationary: bool) -> Result<DVector<f64>, LmiError> {
    if use_stationary {
        Ok(stationary_distribution(&model.atlas)?)
    } else {
        Ok(model.initial_distribution.clone())
    }
}

/// Stabilization LMIs, the cost bound and the γ cap `level − γ ⪰ 0`.
pub fn assemble_synthesis(
    model: &PlantModel,
    pattern: &InfoPattern,
    options: &AssembleOptions,
    gamma_level: f64,
) -> Result<RankLmiProblem, LmiError> {
    let mut problem = assemble_stabilization(model, pattern, options)?;
    let cost = assemble_cost_bound(model, &problem.layout, options.use_stationary, options.epsilon)?;
    problem.cones.push(cost);
    problem.cost = Some(problem.cones.len() - 1);
    let gamma = problem.layout.find(SlotKind::Gamma, 0, 0).expect("γ slot");
    let mut b = BlockBuilder::new(&problem.layout, &[1]);
    b.scalar(0, 0, gamma, &(-identity(1)));
    b.constant(0, 0, &DMatrix::from_element(1, 1, gamma_level));
    problem.cones.push(ConeConstraint {
        label: "gamma_cap".into(),
        block: b.build(),
        sense: Sense::Positive,
        margin: 0.0,
    });
    problem.gamma_cap = Some(problem.cones.len() - 1);
    Ok(problem)
}

/// Structured view of a decision vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionValues {
    /// `[i][μ]`
    pub x: Vec<Vec<DMatrix<f64>>>,
    pub y: Vec<Vec<DMatrix<f64>>>,
    /// `[i][σ]`; empty for subsystems without inputs.
    pub gains: Vec<Vec<DMatrix<f64>>>,
    pub beta_bar: Vec<Vec<f64>>,
    pub beta_tilde: Vec<Vec<f64>>,
    pub tau_u_tilde: Vec<Option<f64>>,
    pub tau_tilde: Vec<Option<f64>>,
    pub theta_tilde: Vec<Option<f64>>,
    pub tau: Vec<Option<f64>>,
    pub theta: Vec<Option<f64>>,
    pub gamma: f64,
}

impl DecisionValues {
    pub fn unpack(layout: &VariableLayout, v: &[f64], subsystems: usize) -> Self {
        let mut out = Self {
            x: vec![Vec::new(); subsystems],
            y: vec![Vec::new(); subsystems],
            gains: vec![Vec::new(); subsystems],
            beta_bar: vec![Vec::new(); subsystems],
            beta_tilde: vec![Vec::new(); subsystems],
            tau_u_tilde: vec![None; subsystems],
            tau_tilde: vec![None; subsystems],
            theta_tilde: vec![None; subsystems],
            tau: vec![None; subsystems],
            theta: vec![None; subsystems],
            gamma: 0.0,
        };
        for (h, slot) in layout.slots().iter().enumerate() {
            let i = slot.subsystem;
            match slot.kind {
                SlotKind::X => out.x[i].push(layout.read(v, h)),
                SlotKind::Y => out.y[i].push(layout.read(v, h)),
                SlotKind::Gain => out.gains[i].push(layout.read(v, h)),
                SlotKind::BetaBar => out.beta_bar[i].push(layout.read_scalar(v, h)),
                SlotKind::BetaTilde => out.beta_tilde[i].push(layout.read_scalar(v, h)),
                SlotKind::TauUTilde => out.tau_u_tilde[i] = Some(layout.read_scalar(v, h)),
                SlotKind::TauTilde => out.tau_tilde[i] = Some(layout.read_scalar(v, h)),
                SlotKind::ThetaTilde => out.theta_tilde[i] = Some(layout.read_scalar(v, h)),
                SlotKind::Tau => out.tau[i] = Some(layout.read_scalar(v, h)),
                SlotKind::Theta => out.theta[i] = Some(layout.read_scalar(v, h)),
                SlotKind::Gamma => out.gamma = layout.read_scalar(v, h),
            }
        }
        out
    }

    /// Inverse of [`DecisionValues::unpack`]; slots missing from `self` are left at 0.
    pub fn pack(&self, layout: &VariableLayout) -> Vec<f64> {
        let mut v = vec![0.0; layout.len()];
        for (h, slot) in layout.slots().iter().enumerate() {
            let (i, k) = (slot.subsystem, slot.index);
            match slot.kind {
                SlotKind::X => layout.write(&mut v, h, &self.x[i][k]),
                SlotKind::Y => layout.write(&mut v, h, &self.y[i][k]),
                SlotKind::Gain => layout.write(&mut v, h, &self.gains[i][k]),
                SlotKind::BetaBar => layout.write_scalar(&mut v, h, self.beta_bar[i][k]),
                SlotKind::BetaTilde => layout.write_scalar(&mut v, h, self.beta_tilde[i][k]),
                SlotKind::TauUTilde => layout.write_scalar(&mut v, h, self.tau_u_tilde[i].unwrap_or(0.0)),
                SlotKind::TauTilde => layout.write_scalar(&mut v, h, self.tau_tilde[i].unwrap_or(0.0)),
                SlotKind::ThetaTilde => layout.write_scalar(&mut v, h, self.theta_tilde[i].unwrap_or(0.0)),
                SlotKind::Tau => layout.write_scalar(&mut v, h, self.tau[i].unwrap_or(0.0)),
                SlotKind::Theta => layout.write_scalar(&mut v, h, self.theta[i].unwrap_or(0.0)),
                SlotKind::Gamma => layout.write_scalar(&mut v, h, self.gamma),
            }
        }
        v
    }

    /// `βᵢᵘ(μ) = β̃ᵢ(μ)·τ̃ᵢᵘ`.
    pub fn beta_u(&self, i: usize, mu: usize) -> Option<f64> {
        Some(self.beta_tilde[i].get(mu)? * self.tau_u_tilde[i]?)
    }
}

/// Multipliers entering the Riccati inequality of one subsystem; `None`
/// marks an absent channel.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiScalars {
    pub tau_u: Option<f64>,
    pub tau: Option<f64>,
    /// `θⱼ` of every subsystem, indexed by `j`.
    pub theta: Vec<Option<f64>>,
    pub beta_u: f64,
}

/// `ÃᵀX + XÃ + Σ_ν q_μν X(ν) + R̃ + X(B̄₂B̄₂ᵀ − B̃G̃⁻¹B̃ᵀ)X + τᵘβᵘI + (τ + θ̄ᵢ)H̃ᵀH̃`
/// for subsystem `i` at global mode `mu`, with `B̄₂B̄₂ᵀ = B̃B̃ᵀ/τᵘ + ẼẼᵀ/τ + L̃L̃ᵀ/θᵢ`.
pub fn riccati_residual(
    model: &PlantModel,
    i: usize,
    mu: usize,
    x_modes: &[DMatrix<f64>],
    scalars: &RiccatiScalars,
) -> Result<DMatrix<f64>, LmiError> {
    let positive = |name: &str, v: Option<f64>| match v {
        Some(x) if !(x > 0.0) => Err(LmiError::NonpositiveScalar { name: name.into(), value: x }),
        _ => Ok(()),
    };
    positive("tau_u", scalars.tau_u)?;
    positive("tau", scalars.tau)?;
    for (j, t) in scalars.theta.iter().enumerate() {
        positive(&format!("theta_{}", j + 1), *t)?;
    }
    if scalars.beta_u < 0.0 {
        return Err(LmiError::NonpositiveScalar { name: "beta_u".into(), value: scalars.beta_u });
    }

    let blk = model.lift(i, mu)?;
    let x = &x_modes[mu];
    let n = x.nrows();
    let mut res = blk.a.transpose() * x + x * &blk.a + model.r_weight(i, mu);
    for (nu, x_nu) in x_modes.iter().enumerate() {
        res += x_nu * model.atlas.rate(mu, nu);
    }
    let mut middle = DMatrix::zeros(n, n);
    if blk.b.ncols() > 0 {
        let g_inv = inverse_weight(model.g_weight(i, mu), i, mu)?;
        let tau_u = scalars.tau_u.ok_or(LmiError::NonpositiveScalar { name: "tau_u".into(), value: 0.0 })?;
        let bbt = &blk.b * blk.b.transpose();
        middle += &bbt / tau_u - &blk.b * g_inv * blk.b.transpose();
        res += identity(n) * (tau_u * scalars.beta_u);
    }
    if let Some(tau) = scalars.tau {
        middle += &blk.e * blk.e.transpose() / tau;
    }
    if let Some(Some(theta)) = scalars.theta.get(i) {
        middle += &blk.l * blk.l.transpose() / *theta;
    }
    res += x * middle * x;
    let theta_bar: f64 =
        scalars.theta.iter().enumerate().filter(|(j, _)| *j != i).filter_map(|(_, t)| *t).sum();
    let h_weight = scalars.tau.unwrap_or(0.0) + theta_bar;
    if blk.h.nrows() > 0 {
        res += blk.h.transpose() * &blk.h * h_weight;
    }
    Ok(crate::linalg::symmetrize(&res))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchurBlock {
    pub subsystem: usize,
    pub mode: usize,
    pub max_eigenvalue: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchurReport {
    pub blocks: Vec<SchurBlock>,
    /// `max ‖XᵢYᵢ − I‖` over all `(i, μ)` using the stored `X`.
    pub max_xy_gap: f64,
    /// `max |β̄β̃ − 1|`.
    pub max_beta_gap: f64,
    pub passed: bool,
}

impl SchurReport {
    pub fn worst_eigenvalue(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_eigenvalue).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Reconstructs `X = Y⁻¹`, `τᵘ = 1/τ̃ᵘ`, `τ = 1/τ̃`, `θ = 1/θ̃`,
/// `βᵘ = β̃·τ̃ᵘ` and evaluates the Riccati residual for every `(i, μ)`.
/// Passes iff every residual is negative definite and the stored `X`, `β`
/// satisfy their inverse couplings within [`COUPLING_TOL`].
pub fn schur_check(values: &DecisionValues, model: &PlantModel) -> Result<SchurReport, LmiError> {
    let big_n = model.subsystem_count();
    let big_m = model.atlas.modes();
    let recip = |t: Option<f64>| t.map(|x| 1.0 / x);
    let theta: Vec<Option<f64>> = values.theta_tilde.iter().map(|t| recip(*t)).collect();
    let mut blocks = Vec::new();
    let mut max_xy_gap = 0.0_f64;
    let mut max_beta_gap = 0.0_f64;
    for i in 0..big_n {
        let mut x_rec = Vec::with_capacity(big_m);
        for mu in 0..big_m {
            let y = &values.y[i][mu];
            let x = inverse_checked(y, SINGULAR_Y_PIVOT)
                .ok_or(LmiError::SingularY { subsystem: i + 1, mode: mu + 1 })?;
            let n = y.nrows();
            max_xy_gap = max_xy_gap.max(spectral_norm(&(&values.x[i][mu] * y - identity(n))));
            x_rec.push(crate::linalg::symmetrize(&x));
        }
        for mu in 0..big_m {
            let beta_u = values.beta_u(i, mu).unwrap_or(0.0);
            if let (Some(bb), Some(bt)) = (values.beta_bar[i].get(mu), values.beta_tilde[i].get(mu)) {
                max_beta_gap = max_beta_gap.max((bb * bt - 1.0).abs());
            }
            let scalars = RiccatiScalars {
                tau_u: recip(values.tau_u_tilde[i]),
                tau: recip(values.tau_tilde[i]),
                theta: theta.clone(),
                beta_u,
            };
            let res = riccati_residual(model, i, mu, &x_rec, &scalars)?;
            blocks.push(SchurBlock { subsystem: i, mode: mu, max_eigenvalue: max_eigenvalue(&res) });
        }
    }
    let passed = blocks.iter().all(|b| b.max_eigenvalue < 0.0)
        && max_xy_gap <= COUPLING_TOL
        && max_beta_gap <= COUPLING_TOL;
    Ok(SchurReport { blocks, max_xy_gap, max_beta_gap, passed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mode_atlas::ModeAtlas;
    use crate::model::{CostWeights, LocalModeBlocks, SubsystemData, UncertaintyBudget};

    fn s(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    fn single_mode_model(a: f64, b: f64, e: Option<f64>, l: Option<f64>, h: Option<f64>) -> PlantModel {
        let atlas = ModeAtlas::new(vec![1], vec![vec![1]], DMatrix::zeros(1, 1)).unwrap();
        let col = |v: Option<f64>| v.map_or(DMatrix::zeros(1, 0), s);
        PlantModel {
            atlas,
            subsystems: vec![SubsystemData {
                modes: vec![LocalModeBlocks {
                    a: s(a),
                    b: s(b),
                    e: col(e),
                    l: col(l),
                    h: h.map_or(DMatrix::zeros(0, 1), s),
                }],
            }],
            budgets: vec![UncertaintyBudget { s_bar: s(1.0), s_tilde: s(1.0) }],
            weights: CostWeights { r: vec![vec![s(1.0)]], g: vec![vec![s(1.0)]] },
            x0: DVector::from_element(1, 2.0),
            initial_distribution: DVector::from_element(1, 1.0),
        }
    }

    #[test]
    fn riccati_scalar_example() {
        let model = single_mode_model(-2.0, 1.0, Some(1.0), Some(1.0), Some(0.1));
        let scalars = RiccatiScalars { tau_u: Some(1.0), tau: Some(1.0), theta: vec![Some(1.0)], beta_u: 0.01 };
        let res = riccati_residual(&model, 0, 0, &[s(0.5)], &scalars).unwrap();
        assert!((res[(0, 0)] - (-0.48)).abs() < 1e-15);
    }

    #[test]
    fn riccati_term_cancellation() {
        let model = single_mode_model(-1.0, 1.0, None, None, None);
        let scalars = RiccatiScalars { tau_u: Some(1.0), tau: None, theta: vec![None], beta_u: 0.0 };
        let res = riccati_residual(&model, 0, 0, &[s(1.0)], &scalars).unwrap();
        assert_eq!(res[(0, 0)], -1.0);
    }

    #[test]
    fn riccati_rejects_nonpositive_multiplier() {
        let model = single_mode_model(-1.0, 1.0, None, None, None);
        let scalars = RiccatiScalars { tau_u: Some(0.0), tau: None, theta: vec![None], beta_u: 0.0 };
        assert!(matches!(
            riccati_residual(&model, 0, 0, &[s(1.0)], &scalars),
            Err(LmiError::NonpositiveScalar { .. })
        ));
    }

    #[test]
    fn cost_bound_scalar_arithmetic() {
        let model = single_mode_model(-2.0, 1.0, Some(1.0), Some(1.0), Some(0.1));
        let pattern = InfoPattern::global(&model.atlas);
        let layout = build_layout(&model, &pattern);
        let block = assemble_cost_bound(&model, &layout, false, 0.0).unwrap();
        let mut v = vec![0.0; layout.len()];
        layout.write_scalar(&mut v, layout.find(SlotKind::X, 0, 0).unwrap(), 0.5);
        layout.write_scalar(&mut v, layout.find(SlotKind::Tau, 0, 0).unwrap(), 1.0);
        layout.write_scalar(&mut v, layout.find(SlotKind::Theta, 0, 0).unwrap(), 1.0);
        layout.write_scalar(&mut v, layout.find(SlotKind::Gamma, 0, 0).unwrap(), 10.0);
        assert!(block.block.evaluate(&v)[(0, 0)].abs() < 1e-14);
    }

    #[test]
    fn cost_bound_with_zero_initial_state() {
        let mut model = single_mode_model(-2.0, 1.0, Some(1.0), Some(1.0), Some(0.1));
        model.x0 = DVector::zeros(1);
        let pattern = InfoPattern::global(&model.atlas);
        let layout = build_layout(&model, &pattern);
        let block = assemble_cost_bound(&model, &layout, false, 0.0).unwrap();
        let gamma = layout.find(SlotKind::Gamma, 0, 0).unwrap();
        assert_eq!(block.block.terms.len(), 1);
        assert_eq!(block.block.terms[0].0, layout.slot(gamma).offset);
    }

    #[test]
    fn layout_symmetric_slot_round_trip() {
        let mut layout = VariableLayout::new();
        let h = layout.push(SlotKind::Y, 0, 0, SlotShape::Symmetric(3));
        let k = layout.push(SlotKind::Gain, 0, 0, SlotShape::Full(2, 3));
        assert_eq!(layout.len(), 6 + 6);
        let y = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]);
        let g = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut v = vec![0.0; layout.len()];
        layout.write(&mut v, h, &y);
        layout.write(&mut v, k, &g);
        assert_eq!(layout.read(&v, h), y);
        assert_eq!(layout.read(&v, k), g);
    }
}
