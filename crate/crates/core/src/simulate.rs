//! Monte Carlo verification of synthesized controllers.
//!
//! Mode paths are sampled from the global chain, uncertainty is realized as
//! norm-bounded static (or sector-scaled) operators, and the closed loop is
//! integrated with fixed-step RK4 on a grid that contains every jump time.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::spectral_norm;
use crate::mode_atlas::{InfoPattern, ModeAtlas};
use crate::model::{check_distribution, stationary_distribution, PlantModel};
use crate::synthesis::SynthesisResult;

/// State norm beyond which a path is flagged as diverged.
pub const DIVERGENCE_GUARD: f64 = 1e12;
/// Number of IQC check horizons.
pub const IQC_HORIZONS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("bad distribution: {0}")]
    BadDistribution(String),
    #[error("time step must be positive and finite, got {0}")]
    BadTimeStep(f64),
    #[error("horizon must be positive and finite, got {0}")]
    BadHorizon(f64),
    #[error("path count must be positive")]
    NoPaths,
    #[error("state norm exceeded {DIVERGENCE_GUARD:e} at t = {time}")]
    Divergence { time: f64 },
    #[error("trajectory lacks recorded uncertainty signals")]
    MissingSignals,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Piecewise-constant, right-continuous global mode path on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModePath {
    /// Jump times, starting with 0 and strictly increasing.
    pub times: Vec<f64>,
    /// Mode held from `times[k]` until the next jump (0-based).
    pub modes: Vec<usize>,
    pub horizon: f64,
}

impl ModePath {
    pub fn constant(mode: usize, horizon: f64) -> Self {
        Self { times: vec![0.0], modes: vec![mode], horizon }
    }

    pub fn mode_at(&self, t: f64) -> usize {
        let k = self.times.partition_point(|&s| s <= t).saturating_sub(1);
        self.modes[k]
    }

    /// Time spent in each mode, of length `m`.
    pub fn occupancy(&self, m: usize) -> Vec<f64> {
        let mut occ = vec![0.0; m];
        for (k, &mode) in self.modes.iter().enumerate() {
            let end = self.times.get(k + 1).copied().unwrap_or(self.horizon);
            occ[mode] += end - self.times[k];
        }
        occ
    }
}

fn weighted(weights: &[f64]) -> Result<WeightedIndex<f64>, SimError> {
    WeightedIndex::new(weights).map_err(|e| SimError::BadDistribution(e.to_string()))
}

/// Samples a mode path of the global chain with initial law `pi0`.
pub fn sample_mode_path(atlas: &ModeAtlas, pi0: &DVector<f64>, horizon: f64, seed: u64) -> Result<ModePath, SimError> {
    sample_mode_path_with(atlas, pi0, horizon, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn sample_mode_path_with<R: Rng + ?Sized>(
    atlas: &ModeAtlas,
    pi0: &DVector<f64>,
    horizon: f64,
    rng: &mut R,
) -> Result<ModePath, SimError> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(SimError::BadHorizon(horizon));
    }
    check_distribution(pi0, atlas.modes()).map_err(SimError::BadDistribution)?;
    let m = atlas.modes();
    let mut mode = weighted(pi0.as_slice())?.sample(rng);
    let mut t = 0.0;
    let mut path = ModePath { times: vec![0.0], modes: vec![mode], horizon };
    loop {
        let rate = -atlas.rate(mode, mode);
        if rate <= 0.0 {
            break;
        }
        t += Exp::new(rate).expect("positive rate").sample(rng);
        if t >= horizon {
            break;
        }
        let jump: Vec<f64> = (0..m).map(|nu| if nu == mode { 0.0 } else { atlas.rate(mode, nu) }).collect();
        mode = weighted(&jump)?.sample(rng);
        path.times.push(t);
        path.modes.push(mode);
    }
    Ok(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UncertaintyKind {
    None,
    /// Constant contractions `ξᵢ = Δᵢζᵢ`, `rᵢ = Δ̃ᵢ·stack(ζⱼ, j≠i)`.
    StaticContraction,
    /// Static contractions scaled by `cos(ωt + φ)`, a time-varying gain in
    /// the sector `[−1, 1]`.
    SectorGain,
}

impl std::str::FromStr for UncertaintyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(Self::None),
            "static" | "static-contraction" => Ok(Self::StaticContraction),
            "sector" | "sector-gain" => Ok(Self::SectorGain),
            other => Err(format!("unknown uncertainty kind '{other}' (none, static, sector)")),
        }
    }
}

/// Scalar modulation `cos(ωt + φ)`, or the constant 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Modulation {
    pub omega: f64,
    pub phase: f64,
}

impl Modulation {
    fn value(m: Option<Self>, t: f64) -> f64 {
        m.map_or(1.0, |m| (m.omega * t + m.phase).cos())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyRealization {
    pub kind: UncertaintyKind,
    /// `Δᵢ`: `gᵢ × hᵢ`.
    pub local: Vec<DMatrix<f64>>,
    /// `Δ̃ᵢ`: `sᵢ × Σ_{j≠i} hⱼ`.
    pub interconnection: Vec<DMatrix<f64>>,
    pub local_modulation: Vec<Option<Modulation>>,
    pub interconnection_modulation: Vec<Option<Modulation>>,
}

/// Uniform draw from the operator-norm ball: a Gaussian matrix normalized by
/// its largest singular value and scaled by `U^(1/k)`, `k = rows·cols`.
pub fn draw_contraction<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    if rows == 0 || cols == 0 {
        return DMatrix::zeros(rows, cols);
    }
    let g = DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng));
    let norm = spectral_norm(&g);
    if norm == 0.0 {
        return DMatrix::zeros(rows, cols);
    }
    let radius = rng.random::<f64>().powf(1.0 / (rows * cols) as f64);
    let mut d = g * (radius / norm);
    // Guard against round-off pushing the norm past 1.
    let n = spectral_norm(&d);
    if n > 1.0 {
        d /= n;
    }
    d
}

impl UncertaintyRealization {
    pub fn none(model: &PlantModel) -> Self {
        let n = model.subsystem_count();
        let zero = |i: usize| {
            let s = &model.subsystems[i];
            (
                DMatrix::zeros(s.local_uncertainty_inputs(), s.uncertainty_outputs()),
                DMatrix::zeros(s.interconnection_inputs(), other_outputs(model, i)),
            )
        };
        let (local, interconnection) = (0..n).map(zero).unzip();
        Self {
            kind: UncertaintyKind::None,
            local,
            interconnection,
            local_modulation: vec![None; n],
            interconnection_modulation: vec![None; n],
        }
    }

    pub fn draw<R: Rng + ?Sized>(model: &PlantModel, kind: UncertaintyKind, rng: &mut R) -> Self {
        let mut out = Self::none(model);
        out.kind = kind;
        if kind == UncertaintyKind::None {
            return out;
        }
        for i in 0..model.subsystem_count() {
            let s = &model.subsystems[i];
            out.local[i] = draw_contraction(s.local_uncertainty_inputs(), s.uncertainty_outputs(), rng);
            out.interconnection[i] = draw_contraction(s.interconnection_inputs(), other_outputs(model, i), rng);
        }
        if kind == UncertaintyKind::SectorGain {
            let modulation = |rng: &mut R| {
                Some(Modulation { omega: rng.random_range(0.5..5.0), phase: rng.random_range(0.0..2.0 * PI) })
            };
            for i in 0..model.subsystem_count() {
                out.local_modulation[i] = modulation(rng);
                out.interconnection_modulation[i] = modulation(rng);
            }
        }
        out
    }

    /// Largest operator norm among all `Δ`, `Δ̃`.
    pub fn max_norm(&self) -> f64 {
        self.local.iter().chain(&self.interconnection).map(spectral_norm).fold(0.0, f64::max)
    }
}

fn other_outputs(model: &PlantModel, i: usize) -> usize {
    (0..model.subsystem_count()).filter(|&j| j != i).map(|j| model.subsystems[j].uncertainty_outputs()).sum()
}

/// Linear closed loop `ẋ = F(μ, t)x` with its signal maps, per global mode.
struct ClosedLoop {
    offsets: Vec<usize>,
    /// Nominal closed loop, with static uncertainty folded in.
    nominal: Vec<DMatrix<f64>>,
    /// Time-modulated contributions `(matrix, modulation)` per mode.
    modulated: Vec<Vec<(DMatrix<f64>, Modulation)>>,
    /// Per mode and subsystem: `u = K x`, `ζ`, `ξ` (unmodulated), `r` (unmodulated).
    u_map: Vec<Vec<DMatrix<f64>>>,
    zeta_map: Vec<Vec<DMatrix<f64>>>,
    xi_map: Vec<Vec<DMatrix<f64>>>,
    r_map: Vec<Vec<DMatrix<f64>>>,
    local_modulation: Vec<Option<Modulation>>,
    interconnection_modulation: Vec<Option<Modulation>>,
}

fn embed(n: usize, rows: usize, row_off: usize, col_off: usize, block: &DMatrix<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, n);
    m.view_mut((row_off, col_off), block.shape()).copy_from(block);
    m
}

impl ClosedLoop {
    fn new(
        model: &PlantModel,
        gains: &[Vec<DMatrix<f64>>],
        pattern: &InfoPattern,
        unc: &UncertaintyRealization,
    ) -> Result<Self, SimError> {
        let big_n = model.subsystem_count();
        let n = model.total_states();
        let offsets: Vec<usize> = (0..big_n).map(|i| model.state_offset(i)).collect();
        if gains.len() != big_n {
            return Err(SimError::DimensionMismatch(format!("{} gain sets for {big_n} subsystems", gains.len())));
        }
        let mut out = ClosedLoop {
            offsets: offsets.clone(),
            nominal: Vec::new(),
            modulated: Vec::new(),
            u_map: Vec::new(),
            zeta_map: Vec::new(),
            xi_map: Vec::new(),
            r_map: Vec::new(),
            local_modulation: unc.local_modulation.clone(),
            interconnection_modulation: unc.interconnection_modulation.clone(),
        };
        for mu in 0..model.atlas.modes() {
            let mut f = DMatrix::zeros(n, n);
            let mut modulated = Vec::new();
            let (mut u_map, mut zeta_map, mut xi_map, mut r_map) = (vec![], vec![], vec![], vec![]);
            // ζᵢ = Hᵢ xᵢ embedded in the stacked state.
            let zetas: Vec<DMatrix<f64>> = (0..big_n)
                .map(|i| {
                    let blk = model.lift(i, mu).expect("validated model");
                    embed(n, blk.h.nrows(), 0, offsets[i], &blk.h)
                })
                .collect();
            for i in 0..big_n {
                let blk = model.lift(i, mu).expect("validated model");
                let ni = blk.a.nrows();
                let off = offsets[i];
                let mut a_cl = blk.a.clone();
                let k = if blk.b.ncols() == 0 {
                    DMatrix::zeros(0, ni)
                } else {
                    let k = gains[i]
                        .get(pattern.class_of(i, mu))
                        .ok_or_else(|| SimError::DimensionMismatch(format!("missing gain for subsystem {}", i + 1)))?;
                    if k.shape() != (blk.b.ncols(), ni) {
                        return Err(SimError::DimensionMismatch(format!("gain shape for subsystem {}", i + 1)));
                    }
                    a_cl += &blk.b * k;
                    k.clone()
                };
                f.view_mut((off, off), (ni, ni)).copy_from(&a_cl);
                u_map.push(embed(n, k.nrows(), 0, off, &k));

                let xi = &unc.local[i] * &zetas[i];
                let stacked: DMatrix<f64> = {
                    let others: Vec<&DMatrix<f64>> = (0..big_n).filter(|&j| j != i).map(|j| &zetas[j]).collect();
                    let rows: usize = others.iter().map(|z| z.nrows()).sum();
                    let mut s = DMatrix::zeros(rows, n);
                    let mut r0 = 0;
                    for z in others {
                        s.view_mut((r0, 0), z.shape()).copy_from(z);
                        r0 += z.nrows();
                    }
                    s
                };
                let r = &unc.interconnection[i] * stacked;
                let lift_rows = |m: DMatrix<f64>| embed_rows(n, off, m);
                let xi_dyn = lift_rows(&blk.e * &xi);
                let r_dyn = lift_rows(&blk.l * &r);
                match unc.local_modulation[i] {
                    Some(m) => modulated.push((xi_dyn, m)),
                    None => f += xi_dyn,
                }
                match unc.interconnection_modulation[i] {
                    Some(m) => modulated.push((r_dyn, m)),
                    None => f += r_dyn,
                }
                xi_map.push(xi);
                r_map.push(r);
            }
            zeta_map.extend(zetas);
            out.nominal.push(f);
            out.modulated.push(modulated);
            out.u_map.push(u_map);
            out.zeta_map.push(zeta_map);
            out.xi_map.push(xi_map);
            out.r_map.push(r_map);
        }
        Ok(out)
    }

    fn derivative(&self, mode: usize, t: f64, x: &DVector<f64>) -> DVector<f64> {
        let mut dx = &self.nominal[mode] * x;
        for (m, modulation) in &self.modulated[mode] {
            dx += m * x * Modulation::value(Some(*modulation), t);
        }
        dx
    }

    fn signals(&self, mode: usize, t: f64, x: &DVector<f64>) -> Signals {
        let big_n = self.offsets.len();
        Signals {
            u: (0..big_n).map(|i| &self.u_map[mode][i] * x).collect(),
            zeta: (0..big_n).map(|i| &self.zeta_map[mode][i] * x).collect(),
            xi: (0..big_n)
                .map(|i| &self.xi_map[mode][i] * x * Modulation::value(self.local_modulation[i], t))
                .collect(),
            r: (0..big_n)
                .map(|i| &self.r_map[mode][i] * x * Modulation::value(self.interconnection_modulation[i], t))
                .collect(),
        }
    }
}

fn embed_rows(n: usize, row_off: usize, block: DMatrix<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    m.view_mut((row_off, 0), block.shape()).copy_from(&block);
    m
}

/// Per-subsystem signals at one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Signals {
    pub u: Vec<DVector<f64>>,
    pub zeta: Vec<DVector<f64>>,
    pub xi: Vec<DVector<f64>>,
    pub r: Vec<DVector<f64>>,
}

/// Samples on the integration grid. A jump time appears twice: once closing
/// the old mode's interval and once opening the new one.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub modes: Vec<usize>,
    pub states: Vec<DVector<f64>>,
    pub signals: Vec<Signals>,
    /// Initial state per subsystem.
    pub x0: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("non-empty trajectory")
    }
}

/// Integration intervals `(start, end, mode)` covering `[0, T]`, split at
/// every jump and every extra breakpoint.
fn intervals(path: &ModePath, breaks: &[f64]) -> Vec<(f64, f64, usize)> {
    let mut cuts: Vec<f64> = path.times.iter().copied().chain(breaks.iter().copied()).collect();
    cuts.push(path.horizon);
    cuts.retain(|&t| (0.0..=path.horizon).contains(&t));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts.windows(2).map(|w| (w[0], w[1], path.mode_at(w[0]))).collect()
}

fn rk4_step(sys: &ClosedLoop, mode: usize, t: f64, h: f64, x: &DVector<f64>) -> DVector<f64> {
    let k1 = sys.derivative(mode, t, x);
    let k2 = sys.derivative(mode, t + 0.5 * h, &(x + &k1 * (0.5 * h)));
    let k3 = sys.derivative(mode, t + 0.5 * h, &(x + &k2 * (0.5 * h)));
    let k4 = sys.derivative(mode, t + h, &(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// One grid step handed to an observer: `x0 → x1` over `[t0, t1]` in `mode`.
struct Step<'a> {
    t0: f64,
    t1: f64,
    mode: usize,
    x0: &'a DVector<f64>,
    x1: &'a DVector<f64>,
    /// `true` when this step opens an interval.
    opens: bool,
}

fn run<F: FnMut(&Step)>(
    sys: &ClosedLoop,
    path: &ModePath,
    breaks: &[f64],
    dt: f64,
    x0: &DVector<f64>,
    mut observe: F,
) -> Result<DVector<f64>, SimError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SimError::BadTimeStep(dt));
    }
    let mut x = x0.clone();
    for (start, end, mode) in intervals(path, breaks) {
        let steps = ((end - start) / dt).ceil().max(1.0) as usize;
        for k in 0..steps {
            let t0 = start + k as f64 * dt;
            let t1 = if k + 1 == steps { end } else { start + (k + 1) as f64 * dt };
            let next = rk4_step(sys, mode, t0, t1 - t0, &x);
            let norm = next.norm();
            if !(norm <= DIVERGENCE_GUARD) {
                return Err(SimError::Divergence { time: t1 });
            }
            observe(&Step { t0, t1, mode, x0: &x, x1: &next, opens: k == 0 });
            x = next;
        }
    }
    Ok(x)
}

/// Integrates the closed loop `ẋᵢ = Aᵢxᵢ + BᵢKᵢ(φᵢ(μ))xᵢ + Eᵢξᵢ + Lᵢrᵢ` along
/// `path` from the model's initial state, recording every grid sample.
pub fn integrate_closed_loop(
    model: &PlantModel,
    gains: &[Vec<DMatrix<f64>>],
    pattern: &InfoPattern,
    path: &ModePath,
    uncertainty: &UncertaintyRealization,
    dt: f64,
) -> Result<Trajectory, SimError> {
    let sys = ClosedLoop::new(model, gains, pattern, uncertainty)?;
    let x0: Vec<DVector<f64>> = (0..model.subsystem_count()).map(|i| model.initial_state(i)).collect();
    let mut traj = Trajectory { times: vec![], modes: vec![], states: vec![], signals: vec![], x0 };
    let push = |t: f64, mode: usize, x: &DVector<f64>, traj: &mut Trajectory| {
        traj.times.push(t);
        traj.modes.push(mode);
        traj.states.push(x.clone());
        traj.signals.push(sys.signals(mode, t, x));
    };
    let mut samples = Vec::new();
    run(&sys, path, &[], dt, &model.x0, |s| samples.push((s.t0, s.t1, s.mode, s.x0.clone(), s.x1.clone(), s.opens)))?;
    for (t0, t1, mode, x0, x1, opens) in samples {
        if opens {
            push(t0, mode, &x0, &mut traj);
        }
        push(t1, mode, &x1, &mut traj);
    }
    if traj.times.is_empty() {
        push(0.0, path.modes[0], &model.x0, &mut traj);
    }
    Ok(traj)
}

/// `T·10^((l−9)/3)`, `l = 0..9`: ten logarithmically spaced horizons ending at `T`.
pub fn horizon_grid(horizon: f64) -> Vec<f64> {
    (0..IQC_HORIZONS).map(|l| horizon * 10f64.powf((l as f64 - 9.0) / 3.0)).collect()
}

/// Minimum IQC residuals per subsystem over the checked horizons.
#[derive(Debug, Clone, PartialEq)]
pub struct IqcReport {
    /// `min_l ∫₀^{t_l}(‖ζᵢ‖² − ‖ξᵢ‖²)dt + x₀ᵢᵀS̄ᵢx₀ᵢ`.
    pub local: Vec<f64>,
    /// `min_l ∫₀^{t_l}(Σ_{j≠i}‖ζⱼ‖² − ‖rᵢ‖²)dt + x₀ᵢᵀS̃ᵢx₀ᵢ`.
    pub interconnection: Vec<f64>,
    pub slack: f64,
    pub passed: bool,
}

impl IqcReport {
    pub fn min_residual(&self) -> f64 {
        self.local.iter().chain(&self.interconnection).copied().fold(f64::INFINITY, f64::min)
    }
}

fn iqc_slack(x0: &[DVector<f64>]) -> f64 {
    1e-8 * (1.0 + x0.iter().map(|x| x.norm_squared()).sum::<f64>())
}

/// Trapezoidal IQC residuals of a recorded trajectory at each horizon.
pub fn iqc_check(trajectory: &Trajectory, model: &PlantModel, horizons: &[f64]) -> Result<IqcReport, SimError> {
    let big_n = model.subsystem_count();
    if trajectory.signals.len() != trajectory.times.len()
        || trajectory.signals.iter().any(|s| s.zeta.len() != big_n || s.xi.len() != big_n || s.r.len() != big_n)
    {
        return Err(SimError::MissingSignals);
    }
    let integrands = |s: &Signals| -> (Vec<f64>, Vec<f64>) {
        let zeta2: Vec<f64> = s.zeta.iter().map(|z| z.norm_squared()).collect();
        let total: f64 = zeta2.iter().sum();
        let local = (0..big_n).map(|i| zeta2[i] - s.xi[i].norm_squared()).collect();
        let inter = (0..big_n).map(|i| total - zeta2[i] - s.r[i].norm_squared()).collect();
        (local, inter)
    };
    let offset = |i: usize| {
        let x0 = &trajectory.x0[i];
        let b = &model.budgets[i];
        (x0.dot(&(&b.s_bar * x0)), x0.dot(&(&b.s_tilde * x0)))
    };
    let mut acc_local = vec![0.0; big_n];
    let mut acc_inter = vec![0.0; big_n];
    let mut min_local = vec![f64::INFINITY; big_n];
    let mut min_inter = vec![f64::INFINITY; big_n];
    let record = |acc_l: &[f64], acc_i: &[f64], min_l: &mut [f64], min_i: &mut [f64]| {
        for i in 0..big_n {
            let (sb, st) = offset(i);
            min_l[i] = min_l[i].min(acc_l[i] + sb);
            min_i[i] = min_i[i].min(acc_i[i] + st);
        }
    };
    let mut next_h = 0;
    let mut hs: Vec<f64> = horizons.to_vec();
    hs.sort_by(f64::total_cmp);
    let mut prev = integrands(&trajectory.signals[0]);
    for k in 1..trajectory.times.len() {
        let cur = integrands(&trajectory.signals[k]);
        let h = trajectory.times[k] - trajectory.times[k - 1];
        for i in 0..big_n {
            acc_local[i] += 0.5 * h * (prev.0[i] + cur.0[i]);
            acc_inter[i] += 0.5 * h * (prev.1[i] + cur.1[i]);
        }
        while next_h < hs.len() && trajectory.times[k] >= hs[next_h] - 1e-12 {
            record(&acc_local, &acc_inter, &mut min_local, &mut min_inter);
            next_h += 1;
        }
        prev = cur;
    }
    if next_h == 0 {
        record(&acc_local, &acc_inter, &mut min_local, &mut min_inter);
    }
    let slack = iqc_slack(&trajectory.x0);
    let passed = min_local.iter().chain(&min_inter).all(|&v| v >= -slack);
    Ok(IqcReport { local: min_local, interconnection: min_inter, slack, passed })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloConfig {
    pub paths: usize,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
    pub uncertainty: UncertaintyKind,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self { paths: 200, horizon: 50.0, dt: 1e-3, seed: 42, uncertainty: UncertaintyKind::StaticContraction }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub path_id: usize,
    pub seed: u64,
    /// `∫₀ᵀ Σᵢ‖xᵢ‖² dt`.
    pub truncated_cost: f64,
    /// `∫_{T/2}^T Σᵢ‖xᵢ‖² dt`.
    pub tail_cost: f64,
    /// `∫₀ᵀ Σᵢ xᵢᵀR̃ᵢxᵢ + ũᵢᵀG̃ᵢũᵢ dt` with `ũᵢ = K̃ᵢ(η)xᵢ`.
    pub weighted_cost: f64,
    /// `Σᵢ xᵢ(T)ᵀXᵢ(η(T))xᵢ(T)`, a bound on the cost after `T`.
    pub terminal_value: f64,
    pub min_iqc_residual: f64,
    pub iqc_passed: bool,
    pub diverged: bool,
    pub divergence_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    pub config: MonteCarloConfig,
    pub records: Vec<PathRecord>,
    pub mean_cost: f64,
    pub cost_standard_error: f64,
    /// `mean_cost / ‖x₀‖²`.
    pub lambda_hat: f64,
    /// Mean tail cost over mean total cost.
    pub tail_fraction: f64,
    /// Mean weighted cost, the estimate `Ĵ`.
    pub j_hat: f64,
    pub j_standard_error: f64,
    /// Mean terminal value, covering the cost beyond the horizon.
    pub truncation_allowance: f64,
    /// Per subsystem, minimum over paths.
    pub iqc_local: Vec<f64>,
    pub iqc_interconnection: Vec<f64>,
    pub iqc_passed: bool,
    pub diverged_paths: Vec<(usize, u64)>,
}

impl MonteCarloReport {
    pub fn diverged(&self) -> bool {
        !self.diverged_paths.is_empty()
    }

    /// `Ĵ ≤ bound + 3·SE + truncation allowance`.
    pub fn respects_bound(&self, bound: f64) -> bool {
        !self.diverged() && self.j_hat <= bound + 3.0 * self.j_standard_error + self.truncation_allowance
    }

    /// First diverged path as an error, in path-index order.
    pub fn check_divergence(&self) -> Result<(), (usize, u64)> {
        self.diverged_paths.first().map_or(Ok(()), |&p| Err(p))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "path_id,seed,truncated_cost,weighted_cost,min_iqc_residual,diverged")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.path_id, r.seed, r.truncated_cost, r.weighted_cost, r.min_iqc_residual, r.diverged
            )?;
        }
        Ok(())
    }
}

/// Seed of path `k`: word 0 of ChaCha8 stream `k` keyed by the master seed.
pub fn path_seed(master: u64, k: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(k as u64);
    rng.next_u64()
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

struct PathOutcome {
    record: PathRecord,
    iqc_local: Vec<f64>,
    iqc_inter: Vec<f64>,
}

fn simulate_path(
    model: &PlantModel,
    result: &SynthesisResult,
    gains: &[Vec<DMatrix<f64>>],
    pi0: &DVector<f64>,
    config: &MonteCarloConfig,
    path_id: usize,
) -> Result<PathOutcome, SimError> {
    let seed = path_seed(config.seed, path_id);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let path = sample_mode_path_with(&model.atlas, pi0, config.horizon, &mut rng)?;
    let unc = UncertaintyRealization::draw(model, config.uncertainty, &mut rng);
    let sys = ClosedLoop::new(model, gains, &result.pattern, &unc)?;
    let big_n = model.subsystem_count();
    let n = model.total_states();
    let half = 0.5 * config.horizon;
    let horizons = horizon_grid(config.horizon);
    let mut breaks = horizons.clone();
    breaks.push(half);

    // Weighted-cost form xᵀW(μ)x with W = blkdiag(R̃ᵢ + K̃ᵢᵀG̃ᵢK̃ᵢ).
    let weights: Vec<DMatrix<f64>> = (0..model.atlas.modes())
        .map(|mu| {
            let mut w = DMatrix::zeros(n, n);
            for i in 0..big_n {
                let off = model.state_offset(i);
                let k = &result.global_gains[i][mu];
                let wi = model.r_weight(i, mu) + k.transpose() * model.g_weight(i, mu) * k;
                w.view_mut((off, off), wi.shape()).copy_from(&wi);
            }
            w
        })
        .collect();

    let x0: Vec<DVector<f64>> = (0..big_n).map(|i| model.initial_state(i)).collect();
    let offsets: Vec<(f64, f64)> = (0..big_n)
        .map(|i| {
            let b = &model.budgets[i];
            (x0[i].dot(&(&b.s_bar * &x0[i])), x0[i].dot(&(&b.s_tilde * &x0[i])))
        })
        .collect();
    let iqc_integrands = |mode: usize, t: f64, x: &DVector<f64>| -> (Vec<f64>, Vec<f64>) {
        let s = sys.signals(mode, t, x);
        let zeta2: Vec<f64> = s.zeta.iter().map(|z| z.norm_squared()).collect();
        let total: f64 = zeta2.iter().sum();
        (
            (0..big_n).map(|i| zeta2[i] - s.xi[i].norm_squared()).collect(),
            (0..big_n).map(|i| total - zeta2[i] - s.r[i].norm_squared()).collect(),
        )
    };

    let mut cost = 0.0;
    let mut tail = 0.0;
    let mut weighted = 0.0;
    let mut acc_l = vec![0.0; big_n];
    let mut acc_i = vec![0.0; big_n];
    let mut min_l = vec![f64::INFINITY; big_n];
    let mut min_i = vec![f64::INFINITY; big_n];
    let mut next_h = 0;
    let mut last_mode = path.modes[0];
    let outcome = run(&sys, &path, &breaks, config.dt, &model.x0, |s| {
        let h = s.t1 - s.t0;
        let c = 0.5 * h * (s.x0.norm_squared() + s.x1.norm_squared());
        cost += c;
        if s.t0 >= half {
            tail += c;
        }
        let w = &weights[s.mode];
        weighted += 0.5 * h * (s.x0.dot(&(w * s.x0)) + s.x1.dot(&(w * s.x1)));
        let (l0, i0) = iqc_integrands(s.mode, s.t0, s.x0);
        let (l1, i1) = iqc_integrands(s.mode, s.t1, s.x1);
        for i in 0..big_n {
            acc_l[i] += 0.5 * h * (l0[i] + l1[i]);
            acc_i[i] += 0.5 * h * (i0[i] + i1[i]);
        }
        while next_h < horizons.len() && s.t1 >= horizons[next_h] - 1e-12 {
            for i in 0..big_n {
                min_l[i] = min_l[i].min(acc_l[i] + offsets[i].0);
                min_i[i] = min_i[i].min(acc_i[i] + offsets[i].1);
            }
            next_h += 1;
        }
        last_mode = s.mode;
    });
    let slack = iqc_slack(&x0);
    let mut record = PathRecord {
        path_id,
        seed,
        truncated_cost: cost,
        tail_cost: tail,
        weighted_cost: weighted,
        terminal_value: 0.0,
        min_iqc_residual: 0.0,
        iqc_passed: true,
        diverged: false,
        divergence_time: None,
    };
    match outcome {
        Ok(x_end) => {
            for i in 0..big_n {
                let off = model.state_offset(i);
                let xi = x_end.rows(off, x0[i].len());
                record.terminal_value += xi.dot(&(&result.values.x[i][last_mode] * xi));
            }
        }
        Err(SimError::Divergence { time }) => {
            record.diverged = true;
            record.divergence_time = Some(time);
            record.truncated_cost = f64::INFINITY;
            record.weighted_cost = f64::INFINITY;
            record.terminal_value = f64::INFINITY;
        }
        Err(e) => return Err(e),
    }
    record.min_iqc_residual = min_l.iter().chain(&min_i).copied().fold(f64::INFINITY, f64::min);
    record.iqc_passed = record.diverged || record.min_iqc_residual >= -slack;
    Ok(PathOutcome { record, iqc_local: min_l, iqc_inter: min_i })
}

/// Runs `config.paths` independent closed-loop simulations of `result`'s
/// neighboring gains. Paths run in parallel; aggregation is in path order,
/// so the report is deterministic. Diverged paths are flagged in the report.
pub fn monte_carlo(
    model: &PlantModel,
    result: &SynthesisResult,
    config: &MonteCarloConfig,
) -> Result<MonteCarloReport, SimError> {
    monte_carlo_with_gains(model, result, result.gains(), config)
}

/// As [`monte_carlo`] with the applied gains replaced by `gains`
/// (same class indexing as `result.pattern`).
pub fn monte_carlo_with_gains(
    model: &PlantModel,
    result: &SynthesisResult,
    gains: &[Vec<DMatrix<f64>>],
    config: &MonteCarloConfig,
) -> Result<MonteCarloReport, SimError> {
    if config.paths == 0 {
        return Err(SimError::NoPaths);
    }
    if !(config.dt > 0.0 && config.dt.is_finite()) {
        return Err(SimError::BadTimeStep(config.dt));
    }
    if !(config.horizon > 0.0 && config.horizon.is_finite()) {
        return Err(SimError::BadHorizon(config.horizon));
    }
    let pi0 = if result.use_stationary {
        stationary_distribution(&model.atlas).map_err(|e| SimError::BadDistribution(e.to_string()))?
    } else {
        model.initial_distribution.clone()
    };
    let outcomes: Vec<PathOutcome> = (0..config.paths)
        .into_par_iter()
        .map(|k| simulate_path(model, result, gains, &pi0, config, k))
        .collect::<Result<_, _>>()?;

    let big_n = model.subsystem_count();
    let costs: Vec<f64> = outcomes.iter().map(|o| o.record.truncated_cost).collect();
    let weighted: Vec<f64> = outcomes.iter().map(|o| o.record.weighted_cost).collect();
    let tails: Vec<f64> = outcomes.iter().map(|o| o.record.tail_cost).collect();
    let terminal: Vec<f64> = outcomes.iter().map(|o| o.record.terminal_value).collect();
    let (mean_cost, cost_standard_error) = mean_se(&costs);
    let (j_hat, j_standard_error) = mean_se(&weighted);
    let (mean_tail, _) = mean_se(&tails);
    let (truncation_allowance, _) = mean_se(&terminal);
    let x0_sq = model.x0.norm_squared();
    let mut iqc_local = vec![f64::INFINITY; big_n];
    let mut iqc_interconnection = vec![f64::INFINITY; big_n];
    for o in &outcomes {
        for i in 0..big_n {
            iqc_local[i] = iqc_local[i].min(o.iqc_local[i]);
            iqc_interconnection[i] = iqc_interconnection[i].min(o.iqc_inter[i]);
        }
    }
    let diverged_paths =
        outcomes.iter().filter(|o| o.record.diverged).map(|o| (o.record.path_id, o.record.seed)).collect();
    Ok(MonteCarloReport {
        config: config.clone(),
        iqc_passed: outcomes.iter().all(|o| o.record.iqc_passed),
        records: outcomes.into_iter().map(|o| o.record).collect(),
        mean_cost,
        cost_standard_error,
        lambda_hat: if x0_sq > 0.0 { mean_cost / x0_sq } else { f64::NAN },
        tail_fraction: mean_tail / mean_cost,
        j_hat,
        j_standard_error,
        truncation_allowance,
        iqc_local,
        iqc_interconnection,
        diverged_paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CostWeights, LocalModeBlocks, SubsystemData, UncertaintyBudget};

    fn s(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    /// Scalar plant with one subsystem and a mode per entry of `a`.
    pub(super) fn scalar_plant(a: &[f64], h: f64) -> PlantModel {
        let m = a.len();
        let q = if m == 1 {
            DMatrix::zeros(1, 1)
        } else {
            DMatrix::from_fn(m, m, |r, c| if r == c { -1.0 } else { 1.0 / (m - 1) as f64 })
        };
        let atlas = ModeAtlas::new(vec![m], (1..=m).map(|k| vec![k]).collect(), q).unwrap();
        PlantModel {
            atlas,
            subsystems: vec![SubsystemData {
                modes: a
                    .iter()
                    .map(|&a| LocalModeBlocks { a: s(a), b: s(1.0), e: s(1.0), l: DMatrix::zeros(1, 0), h: s(h) })
                    .collect(),
            }],
            budgets: vec![UncertaintyBudget { s_bar: s(1.0), s_tilde: s(1.0) }],
            weights: CostWeights { r: vec![vec![s(1.0)]; m], g: vec![vec![s(1.0)]; m] },
            x0: DVector::from_element(1, 1.0),
            initial_distribution: DVector::from_element(m, 1.0 / m as f64),
        }
    }

    #[test]
    fn single_mode_path_is_one_segment() {
        let model = scalar_plant(&[-1.0], 0.0);
        let path = sample_mode_path(&model.atlas, &model.initial_distribution, 5.0, 1).unwrap();
        assert_eq!(path, ModePath::constant(0, 5.0));
    }

    #[test]
    fn holding_time_mean_is_one() {
        let model = scalar_plant(&[-1.0, -2.0], 0.0);
        let path = sample_mode_path(&model.atlas, &model.initial_distribution, 2.0e4, 3).unwrap();
        let holds: Vec<f64> = path.times.windows(2).map(|w| w[1] - w[0]).take(10_000).collect();
        let (mean, se) = mean_se(&holds);
        assert!((mean - 1.0).abs() <= 3.0 * se, "{mean} ± {se}");
    }

    #[test]
    fn zero_state_stays_zero() {
        let mut model = scalar_plant(&[1.0], 0.5);
        model.x0 = DVector::zeros(1);
        let pattern = InfoPattern::global(&model.atlas);
        let unc = UncertaintyRealization::none(&model);
        let traj = integrate_closed_loop(&model, &[vec![s(0.0)]], &pattern, &ModePath::constant(0, 1.0), &unc, 0.01)
            .unwrap();
        assert!(traj.states.iter().all(|x| x[0] == 0.0));
    }

    #[test]
    fn contraction_norm_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (r, c) in [(1, 1), (2, 3), (4, 2)] {
            let d = draw_contraction(r, c, &mut rng);
            assert!(spectral_norm(&d) <= 1.0);
        }
        assert_eq!(draw_contraction(0, 3, &mut rng).shape(), (0, 3));
    }

    #[test]
    fn iqc_detects_amplifying_uncertainty() {
        let model = scalar_plant(&[-1.0], 1.0);
        let pattern = InfoPattern::global(&model.atlas);
        let mut unc = UncertaintyRealization::none(&model);
        unc.local[0] = s(0.9);
        let path = ModePath::constant(0, 1.0);
        let traj = integrate_closed_loop(&model, &[vec![s(-1.0)]], &pattern, &path, &unc, 1e-3).unwrap();
        assert!(iqc_check(&traj, &model, &horizon_grid(1.0)).unwrap().passed);

        // ξ = 2ζ with S̄ = 0.01: ∫(ζ² − 4ζ²) + 0.01 < 0 once ∫ζ² > 0.0033.
        let mut weak = model.clone();
        weak.budgets[0].s_bar = s(0.01);
        unc.local[0] = s(2.0);
        let traj = integrate_closed_loop(&weak, &[vec![s(-3.0)]], &pattern, &path, &unc, 1e-3).unwrap();
        let report = iqc_check(&traj, &weak, &horizon_grid(1.0)).unwrap();
        assert!(!report.passed);
        // Closed loop ẋ = (−1 − 3 + 2)x, so ∫₀¹ζ² = (1 − e⁻⁴)/4.
        let expected = 0.01 - 3.0 * (1.0 - (-4.0f64).exp()) / 4.0;
        assert!((report.local[0] - expected).abs() < 1e-6, "{} vs {expected}", report.local[0]);
    }

    #[test]
    fn path_seeds_are_distinct_and_stable() {
        let seeds: Vec<u64> = (0..50).map(|k| path_seed(42, k)).collect();
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), seeds.len());
        assert_eq!(seeds[7], path_seed(42, 7));
    }
}
