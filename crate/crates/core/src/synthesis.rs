//! End-to-end design: neighboring-mode-dependent gains from the rank-constrained
//! LMI system, the global-mode special case, certificates and lifting of a
//! solution to a pattern with more mode information.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::linalg::{inverse_checked, spectral_norm};
use crate::lmi::{
    assemble_synthesis, build_layout, cost_distribution, schur_check, AssembleOptions, BetaU, ConstraintReport,
    DecisionValues, LmiError, SchurReport,
};
use crate::mode_atlas::{AtlasError, InfoPattern};
use crate::model::PlantModel;
use crate::solver::{default_start, minimize_gamma_from, SolveStatus, SolverConfig, SolverError};

/// Relative slack on `‖K − K̃‖² ≤ βᵘ` absorbing round-off in the eigen and
/// singular value routines.
pub const GAIN_DISTANCE_SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthesisError {
    #[error(transparent)]
    Lmi(#[from] LmiError),
    #[error(transparent)]
    Atlas(#[from] AtlasError),
    #[error("solver error: {0}")]
    Solver(SolverError),
    #[error("no feasible point found at cost level {level}")]
    Infeasible { level: f64 },
    #[error("solver returned a point that fails post-checks (worst Riccati eigenvalue {worst_eigenvalue:.3e}, gain distance passed: {gain_distance_passed})")]
    PostCheckFailed { worst_eigenvalue: f64, gain_distance_passed: bool, schur: Box<SchurReport> },
    #[error("target pattern does not refine the source pattern")]
    NotARefinement,
    #[error("lifted point violates constraints (cone {max_cone:.3e}, rank {max_rank:.3e})")]
    LiftedInfeasible { max_cone: f64, max_rank: f64 },
}

impl From<SolverError> for SynthesisError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::BracketInfeasible(level) => SynthesisError::Infeasible { level },
            other => SynthesisError::Solver(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisConfig {
    pub solver: SolverConfig,
    pub beta_u: BetaU,
    pub use_stationary: bool,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self { solver: SolverConfig::default(), beta_u: BetaU::Free, use_stationary: false }
    }
}

impl SynthesisConfig {
    pub fn assemble_options(&self) -> AssembleOptions {
        AssembleOptions {
            epsilon: self.solver.epsilon,
            beta_u: self.beta_u.clone(),
            use_stationary: self.use_stationary,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverDiagnostics {
    pub status: SolveStatus,
    pub iterations: usize,
    pub restarts_used: usize,
    pub max_cone_residual: f64,
    pub max_rank_residual: f64,
}

impl SolverDiagnostics {
    fn from_report(status: SolveStatus, iterations: usize, restarts_used: usize, r: &ConstraintReport) -> Self {
        Self { status, iterations, restarts_used, max_cone_residual: r.max_cone(), max_rank_residual: r.max_rank() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainDistanceEntry {
    pub subsystem: usize,
    pub mode: usize,
    /// `‖Kᵢ(φᵢ(μ)) − K̃ᵢ(μ)‖²` in the induced 2-norm.
    pub distance_sq: f64,
    pub beta_u: f64,
    /// `βᵘ − distance²`.
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainDistanceReport {
    pub entries: Vec<GainDistanceEntry>,
    pub passed: bool,
}

impl GainDistanceReport {
    pub fn min_slack(&self) -> f64 {
        self.entries.iter().map(|e| e.slack).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResult {
    pub pattern: InfoPattern,
    pub values: DecisionValues,
    /// Reconstructed `τᵢᵘ = 1/τ̃ᵢᵘ`, `τᵢ = 1/τ̃ᵢ`, `θᵢ = 1/θ̃ᵢ`.
    pub tau_u: Vec<Option<f64>>,
    pub tau: Vec<Option<f64>>,
    pub theta: Vec<Option<f64>>,
    /// `βᵢᵘ(μ) = β̃ᵢ(μ)·τ̃ᵢᵘ`, empty for subsystems without inputs.
    pub beta_u: Vec<Vec<f64>>,
    /// `K̃ᵢ(μ) = −G̃ᵢ⁻¹(μ)B̃ᵢᵀ(μ)Xᵢ(μ)`.
    pub global_gains: Vec<Vec<DMatrix<f64>>>,
    pub gamma: f64,
    pub use_stationary: bool,
    pub diagnostics: SolverDiagnostics,
    pub schur: SchurReport,
    pub gain_distance: GainDistanceReport,
}

impl SynthesisResult {
    /// Gains `Kᵢ(σᵢ)` indexed `[i][σ]`.
    pub fn gains(&self) -> &[Vec<DMatrix<f64>>] {
        &self.values.gains
    }

    /// Gain applied by controller `i` when the global mode is `mu`.
    pub fn gain_at(&self, i: usize, mu: usize) -> Option<&DMatrix<f64>> {
        self.values.gains[i].get(self.pattern.class_of(i, mu))
    }

    /// Whether both certificates hold.
    pub fn certified(&self) -> bool {
        self.schur.passed && self.gain_distance.passed
    }
}

/// `K̃ᵢ(μ) = −G̃ᵢ⁻¹(μ)B̃ᵢᵀ(μ)Xᵢ(μ)` for every `(i, μ)`.
pub fn global_gains(model: &PlantModel, x: &[Vec<DMatrix<f64>>]) -> Result<Vec<Vec<DMatrix<f64>>>, LmiError> {
    let mut out = Vec::with_capacity(model.subsystem_count());
    for (i, x_i) in x.iter().enumerate() {
        let mut row = Vec::with_capacity(x_i.len());
        for (mu, x_mu) in x_i.iter().enumerate() {
            let blk = model.lift(i, mu)?;
            let g = model.g_weight(i, mu);
            let k = if blk.b.ncols() == 0 {
                DMatrix::zeros(0, x_mu.nrows())
            } else {
                let g_inv = inverse_checked(g, 1e-12).ok_or(LmiError::SingularWeight { subsystem: i + 1, mode: mu + 1 })?;
                -(g_inv * blk.b.transpose() * x_mu)
            };
            row.push(k);
        }
        out.push(row);
    }
    Ok(out)
}

/// Checks `‖Kᵢ(φᵢ(μ)) − K̃ᵢ(μ)‖² ≤ βᵢᵘ(μ)` for every `(i, μ)` with an input.
pub fn check_gain_distance(result: &SynthesisResult, pattern: &InfoPattern) -> GainDistanceReport {
    gain_distance(&result.values.gains, &result.global_gains, &result.beta_u, pattern)
}

fn gain_distance(
    gains: &[Vec<DMatrix<f64>>],
    global: &[Vec<DMatrix<f64>>],
    beta_u: &[Vec<f64>],
    pattern: &InfoPattern,
) -> GainDistanceReport {
    let mut entries = Vec::new();
    for (i, k_i) in gains.iter().enumerate() {
        if k_i.is_empty() {
            continue;
        }
        for (mu, k_tilde) in global[i].iter().enumerate() {
            let k = &k_i[pattern.class_of(i, mu)];
            let d = spectral_norm(&(k - k_tilde));
            let distance_sq = d * d;
            let b = beta_u[i][mu];
            entries.push(GainDistanceEntry { subsystem: i, mode: mu, distance_sq, beta_u: b, slack: b - distance_sq });
        }
    }
    let passed = entries.iter().all(|e| e.distance_sq <= e.beta_u + GAIN_DISTANCE_SLACK * (1.0 + e.beta_u));
    GainDistanceReport { entries, passed }
}

/// `Σᵢ x₀ᵢᵀ[Σ_μ π_μ Xᵢ(μ) + τᵢ S̄ᵢ + θᵢ S̃ᵢ]x₀ᵢ` with `τᵢ`, `θᵢ` reconstructed
/// from `τ̃ᵢ`, `θ̃ᵢ`.
pub fn cost_bound(result: &SynthesisResult, model: &PlantModel, use_stationary: bool) -> Result<f64, LmiError> {
    let pi = cost_distribution(model, use_stationary)?;
    let mut total = 0.0;
    for i in 0..model.subsystem_count() {
        let x0 = model.initial_state(i);
        let mut w = DMatrix::zeros(x0.len(), x0.len());
        for (mu, x) in result.values.x[i].iter().enumerate() {
            w += x * pi[mu];
        }
        if let Some(t) = result.tau[i] {
            w += &model.budgets[i].s_bar * t;
        }
        if let Some(t) = result.theta[i] {
            w += &model.budgets[i].s_tilde * t;
        }
        total += x0.dot(&(w * &x0));
    }
    Ok(total)
}

/// Builds a result from decision values, reconstructing the derived scalars
/// and recomputing both certificates from scratch.
pub fn from_values(
    model: &PlantModel,
    pattern: &InfoPattern,
    values: DecisionValues,
    use_stationary: bool,
    diagnostics: SolverDiagnostics,
) -> Result<SynthesisResult, SynthesisError> {
    let recip = |v: &[Option<f64>]| v.iter().map(|t| t.map(|x| 1.0 / x)).collect::<Vec<_>>();
    let beta_u = (0..model.subsystem_count())
        .map(|i| (0..values.beta_tilde[i].len()).filter_map(|mu| values.beta_u(i, mu)).collect())
        .collect();
    let global_gains = global_gains(model, &values.x)?;
    let schur = schur_check(&values, model)?;
    let mut result = SynthesisResult {
        pattern: pattern.clone(),
        tau_u: recip(&values.tau_u_tilde),
        tau: recip(&values.tau_tilde),
        theta: recip(&values.theta_tilde),
        beta_u,
        global_gains,
        gamma: values.gamma,
        use_stationary,
        diagnostics,
        schur,
        gain_distance: GainDistanceReport { entries: Vec::new(), passed: false },
        values,
    };
    result.gain_distance = check_gain_distance(&result, pattern);
    Ok(result)
}

/// Minimizes the cost bound over the neighboring-mode-dependent design for
/// `pattern` and certifies the winner. Results failing either certificate
/// are refused.
pub fn synthesize_neighboring(
    model: &PlantModel,
    pattern: &InfoPattern,
    config: &SynthesisConfig,
) -> Result<SynthesisResult, SynthesisError> {
    synthesize_inner(model, pattern, config, None)
}

/// As [`synthesize_neighboring`], starting from `coarse` lifted onto
/// `pattern` and bisecting below its cost level.
pub fn synthesize_warm(
    model: &PlantModel,
    pattern: &InfoPattern,
    config: &SynthesisConfig,
    coarse: &SynthesisResult,
) -> Result<SynthesisResult, SynthesisError> {
    let lifted = lift_solution(model, coarse, pattern, config)?;
    synthesize_inner(model, pattern, config, Some(&lifted))
}

fn synthesize_inner(
    model: &PlantModel,
    pattern: &InfoPattern,
    config: &SynthesisConfig,
    warm: Option<&SynthesisResult>,
) -> Result<SynthesisResult, SynthesisError> {
    let (lo, hi) = config.solver.bisection_bracket;
    let problem = assemble_synthesis(model, pattern, &config.assemble_options(), hi)?;
    let mut solver = config.solver.clone();
    let start = match warm {
        Some(w) => {
            solver.bisection_bracket = (lo, w.gamma.min(hi));
            w.values.pack(&problem.layout)
        }
        None => default_start(&problem),
    };
    let (_, outcome) = minimize_gamma_from(&problem, &solver, &start)?;
    let diagnostics =
        SolverDiagnostics::from_report(outcome.status, outcome.iterations, outcome.restarts_used, &outcome.residuals);
    let values = DecisionValues::unpack(&problem.layout, &outcome.point, model.subsystem_count());
    let result = from_values(model, pattern, values, config.use_stationary, diagnostics)?;
    if !result.certified() {
        return Err(SynthesisError::PostCheckFailed {
            worst_eigenvalue: result.schur.worst_eigenvalue(),
            gain_distance_passed: result.gain_distance.passed,
            schur: Box::new(result.schur),
        });
    }
    Ok(result)
}

/// Global-mode-dependent design: the same LMI system under the all-ones
/// pattern, with `βᵘ` either solved for or fixed in advance.
pub fn synthesize_global(
    model: &PlantModel,
    beta_u: BetaU,
    config: &SynthesisConfig,
) -> Result<SynthesisResult, SynthesisError> {
    let config = SynthesisConfig { beta_u, ..config.clone() };
    synthesize_neighboring(model, &InfoPattern::global(&model.atlas), &config)
}

/// Re-expresses `result` under the finer pattern `to`: each gain is copied
/// onto every class of `to` inside its class, everything else is kept. The
/// lifted point is re-checked against the full constraint set of `to`.
pub fn lift_solution(
    model: &PlantModel,
    result: &SynthesisResult,
    to: &InfoPattern,
    config: &SynthesisConfig,
) -> Result<SynthesisResult, SynthesisError> {
    let from = &result.pattern;
    if !from.is_refined_by(to)? {
        return Err(SynthesisError::NotARefinement);
    }
    let mut values = result.values.clone();
    for (i, gains) in values.gains.iter_mut().enumerate() {
        if gains.is_empty() {
            continue;
        }
        let lifted = (0..to.class_count(i))
            .map(|tau| {
                let mu = to.phi(i).iter().position(|&c| c == tau).expect("surjective map");
                result.values.gains[i][from.class_of(i, mu)].clone()
            })
            .collect();
        *gains = lifted;
    }
    let problem = assemble_synthesis(model, to, &config.assemble_options(), values.gamma)?;
    debug_assert_eq!(build_layout(model, to).len(), problem.layout.len());
    let report = problem.residuals(&values.pack(&problem.layout));
    if !report.passes(config.solver.residual_tolerance) {
        return Err(SynthesisError::LiftedInfeasible { max_cone: report.max_cone(), max_rank: report.max_rank() });
    }
    let diagnostics = SolverDiagnostics { max_cone_residual: report.max_cone(), max_rank_residual: report.max_rank(), ..result.diagnostics.clone() };
    from_values(model, to, values, result.use_stationary, diagnostics)
}

/// Residuals of the stored decision values against the full constraint set
/// of the result's own pattern at its cost level.
pub fn constraint_check(
    model: &PlantModel,
    result: &SynthesisResult,
    config: &SynthesisConfig,
) -> Result<ConstraintReport, SynthesisError> {
    let problem = assemble_synthesis(model, &result.pattern, &config.assemble_options(), result.values.gamma)?;
    Ok(problem.residuals(&result.values.pack(&problem.layout)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mode_atlas::ModeAtlas;
    use crate::model::{CostWeights, LocalModeBlocks, SubsystemData, UncertaintyBudget};
    use nalgebra::DVector;

    fn s(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    fn scalar_model(a: f64, b: Option<f64>) -> PlantModel {
        let atlas = ModeAtlas::new(vec![1], vec![vec![1]], DMatrix::zeros(1, 1)).unwrap();
        let m = usize::from(b.is_some());
        PlantModel {
            atlas,
            subsystems: vec![SubsystemData {
                modes: vec![LocalModeBlocks {
                    a: s(a),
                    b: b.map_or(DMatrix::zeros(1, 0), s),
                    e: s(1.0),
                    l: s(1.0),
                    h: s(0.1),
                }],
            }],
            budgets: vec![UncertaintyBudget { s_bar: s(1.0), s_tilde: s(1.0) }],
            weights: CostWeights { r: vec![vec![s(1.0)]], g: vec![vec![DMatrix::identity(m, m)]] },
            x0: DVector::from_element(1, 2.0),
            initial_distribution: DVector::from_element(1, 1.0),
        }
    }

    #[test]
    fn global_gain_formula() {
        let model = scalar_model(-2.0, Some(1.0));
        let k = global_gains(&model, &[vec![s(0.5)]]).unwrap();
        assert_eq!(k[0][0], s(-0.5));
    }

    #[test]
    fn no_input_gives_empty_gain() {
        let model = scalar_model(-2.0, None);
        let result = synthesize_global(&model, BetaU::Free, &SynthesisConfig::default()).unwrap();
        assert!(result.gains()[0].is_empty());
        assert_eq!(result.global_gains[0][0].shape(), (0, 1));
        let bound = cost_bound(&result, &model, false).unwrap();
        assert!(bound > 0.0 && (bound - result.gamma).abs() < 1e-3, "{bound} vs {}", result.gamma);
    }

    #[test]
    fn gain_distance_scalar_slack() {
        let atlas = ModeAtlas::new(vec![1], vec![vec![1]], DMatrix::zeros(1, 1)).unwrap();
        let pattern = InfoPattern::global(&atlas);
        let report = gain_distance(&[vec![s(1.1)]], &[vec![s(1.0)]], &[vec![0.04]], &pattern);
        assert!(report.passed);
        assert!((report.entries[0].slack - 0.03).abs() < 1e-12);
        let exact = gain_distance(&[vec![s(1.0)]], &[vec![s(1.0)]], &[vec![0.0]], &pattern);
        assert!(exact.passed);
    }

    #[test]
    fn scalar_synthesis_is_certified_and_bound_matches() {
        let model = scalar_model(-2.0, Some(1.0));
        let config = SynthesisConfig::default();
        let result = synthesize_global(&model, BetaU::Free, &config).unwrap();
        assert!(result.certified());
        let bound = cost_bound(&result, &model, false).unwrap();
        assert!((bound - result.gamma).abs() <= config.solver.bisection_tol + 1e-3);
        for (k, x) in result.global_gains[0].iter().zip(&result.values.x[0]) {
            assert!((k + x).amax() <= 1e-12);
        }
    }

    #[test]
    fn given_beta_u_is_respected() {
        let model = scalar_model(-2.0, Some(1.0));
        let result = synthesize_global(&model, BetaU::Given(vec![vec![0.25]]), &SynthesisConfig::default()).unwrap();
        assert!((result.beta_u[0][0] - 0.25).abs() < 1e-6, "{}", result.beta_u[0][0]);
    }

    #[test]
    fn lift_to_same_pattern_is_identity() {
        let model = scalar_model(-1.0, Some(1.0));
        let config = SynthesisConfig::default();
        let result = synthesize_global(&model, BetaU::Free, &config).unwrap();
        let lifted = lift_solution(&model, &result, &result.pattern.clone(), &config).unwrap();
        assert_eq!(lifted.values, result.values);
    }
}
