//! JSON model, pattern and result files.
//!
//! Matrices are row-major arrays of arrays. Local modes in mode vectors are
//! 1-based; everything else is positional.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{from_rows, to_rows};
use crate::lmi::{BetaU, DecisionValues};
use crate::mode_atlas::{AtlasError, InfoPattern, ModeAtlas};
use crate::model::{stationary_distribution, CostWeights, LocalModeBlocks, ModelError, PlantModel, SubsystemData, UncertaintyBudget};
use crate::simulate::MonteCarloReport;
use crate::solver::{SolveStatus, SolverConfig};
use crate::synthesis::{from_values, SolverDiagnostics, SynthesisConfig, SynthesisError, SynthesisResult};

pub const TOOL_NAME: &str = "nmdc";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{origin}: parse error at line {line}, column {column}: {message}")]
    Parse { origin: String, line: usize, column: usize, message: String },
    #[error("{origin}: {message}")]
    Invalid { origin: String, message: String },
    #[error("{origin}: {source}")]
    Atlas { origin: String, source: AtlasError },
    #[error("{origin}: {source}")]
    Model { origin: String, source: ModelError },
    #[error("result does not match model: {0}")]
    ModelResultMismatch(String),
    #[error("no pattern files (*.json) in {0}")]
    EmptyPatternDir(PathBuf),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
}

fn read(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Read { path: path.to_owned(), source })
}

fn parse<T: for<'de> Deserialize<'de>>(text: &str, origin: &str) -> Result<T, IoError> {
    serde_json::from_str(text).map_err(|e| IoError::Parse {
        origin: origin.to_owned(),
        line: e.line(),
        column: e.column(),
        message: strip_position(&e.to_string()),
    })
}

fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(k) => msg[..k].to_owned(),
        None => msg.to_owned(),
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeBlockFile {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B", default)]
    pub b: Rows,
    #[serde(rename = "E", default)]
    pub e: Rows,
    #[serde(rename = "L", default)]
    pub l: Rows,
    #[serde(rename = "H", default)]
    pub h: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightFile {
    /// One matrix per subsystem.
    #[serde(rename = "R")]
    pub r: Vec<Rows>,
    #[serde(rename = "G")]
    pub g: Vec<Rows>,
}

/// `"stationary"` or explicit probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DistributionSpec {
    Token(String),
    Values(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub subsystem_mode_counts: Vec<usize>,
    pub mode_vectors: Vec<Vec<usize>>,
    pub generator: Rows,
    /// `[i][local mode]`.
    pub subsystems: Vec<Vec<ModeBlockFile>>,
    #[serde(rename = "S_bar")]
    pub s_bar: Vec<Rows>,
    #[serde(rename = "S_tilde")]
    pub s_tilde: Vec<Rows>,
    /// One entry per global mode.
    pub weights: Vec<WeightFile>,
    pub x0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_distribution: Option<DistributionSpec>,
}

/// Empty matrices are written as `[]`.
fn rows(m: &DMatrix<f64>) -> Rows {
    if m.is_empty() {
        Vec::new()
    } else {
        to_rows(m)
    }
}

impl ModelFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self, IoError> {
        parse(text, origin)
    }

    pub fn from_model(model: &PlantModel) -> Self {
        let atlas = &model.atlas;
        let big_n = model.subsystem_count();
        Self {
            subsystem_mode_counts: atlas.local_mode_counts().to_vec(),
            mode_vectors: atlas.mode_vectors().to_vec(),
            generator: to_rows(atlas.generator()),
            subsystems: model
                .subsystems
                .iter()
                .map(|s| {
                    s.modes
                        .iter()
                        .map(|b| ModeBlockFile { a: rows(&b.a), b: rows(&b.b), e: rows(&b.e), l: rows(&b.l), h: rows(&b.h) })
                        .collect()
                })
                .collect(),
            s_bar: model.budgets.iter().map(|b| rows(&b.s_bar)).collect(),
            s_tilde: model.budgets.iter().map(|b| rows(&b.s_tilde)).collect(),
            weights: (0..atlas.modes())
                .map(|mu| WeightFile {
                    r: (0..big_n).map(|i| rows(model.r_weight(i, mu))).collect(),
                    g: (0..big_n).map(|i| rows(model.g_weight(i, mu))).collect(),
                })
                .collect(),
            x0: model.x0.iter().copied().collect(),
            initial_distribution: Some(DistributionSpec::Values(model.initial_distribution.iter().copied().collect())),
        }
    }

    /// Builds and validates the plant.
    pub fn to_model(&self, origin: &str) -> Result<PlantModel, IoError> {
        let invalid = |message: String| IoError::Invalid { origin: origin.to_owned(), message };
        let generator = from_rows(&self.generator, 0).map_err(|e| invalid(format!("generator: {e}")))?;
        let atlas = ModeAtlas::new(self.subsystem_mode_counts.clone(), self.mode_vectors.clone(), generator)
            .map_err(|source| IoError::Atlas { origin: origin.to_owned(), source })?;
        let big_n = atlas.subsystems();
        let big_m = atlas.modes();
        let count = |what: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(invalid(format!("{what}: {got} entries, expected {want}")))
            }
        };
        count("subsystems", self.subsystems.len(), big_n)?;
        count("S_bar", self.s_bar.len(), big_n)?;
        count("S_tilde", self.s_tilde.len(), big_n)?;
        count("weights", self.weights.len(), big_m)?;

        let mut subsystems = Vec::with_capacity(big_n);
        for (i, modes) in self.subsystems.iter().enumerate() {
            let mut blocks = Vec::with_capacity(modes.len());
            for (k, b) in modes.iter().enumerate() {
                let ctx = |name: &str, e: String| invalid(format!("subsystem {} mode {} {name}: {e}", i + 1, k + 1));
                let a = from_rows(&b.a, 0).map_err(|e| ctx("A", e))?;
                let n = a.nrows();
                let wide = |m: &Rows, name: &str| {
                    if m.is_empty() {
                        Ok(DMatrix::zeros(n, 0))
                    } else {
                        from_rows(m, 0).map_err(|e| ctx(name, e))
                    }
                };
                blocks.push(LocalModeBlocks {
                    a,
                    b: wide(&b.b, "B")?,
                    e: wide(&b.e, "E")?,
                    l: wide(&b.l, "L")?,
                    h: from_rows(&b.h, n).map_err(|e| ctx("H", e))?,
                });
            }
            subsystems.push(SubsystemData { modes: blocks });
        }
        let states: Vec<usize> = subsystems.iter().map(|s| s.modes.first().map_or(0, |b| b.a.nrows())).collect();
        let inputs: Vec<usize> = subsystems.iter().map(|s| s.modes.first().map_or(0, |b| b.b.ncols())).collect();
        let budgets = (0..big_n)
            .map(|i| {
                let m = |r: &Rows, name: &str| {
                    from_rows(r, states[i]).map_err(|e| invalid(format!("{name} of subsystem {}: {e}", i + 1)))
                };
                Ok(UncertaintyBudget { s_bar: m(&self.s_bar[i], "S_bar")?, s_tilde: m(&self.s_tilde[i], "S_tilde")? })
            })
            .collect::<Result<Vec<_>, IoError>>()?;
        let mut r = Vec::with_capacity(big_m);
        let mut g = Vec::with_capacity(big_m);
        for (mu, w) in self.weights.iter().enumerate() {
            count(&format!("weights[{}].R", mu + 1), w.r.len(), big_n)?;
            count(&format!("weights[{}].G", mu + 1), w.g.len(), big_n)?;
            let (mut rm, mut gm) = (Vec::with_capacity(big_n), Vec::with_capacity(big_n));
            for i in 0..big_n {
                let ctx = |name: &str, e: String| invalid(format!("weights[{}].{name} of subsystem {}: {e}", mu + 1, i + 1));
                rm.push(from_rows(&w.r[i], states[i]).map_err(|e| ctx("R", e))?);
                gm.push(from_rows(&w.g[i], inputs[i]).map_err(|e| ctx("G", e))?);
            }
            r.push(rm);
            g.push(gm);
        }
        let initial_distribution = match &self.initial_distribution {
            None => stationary_distribution(&atlas).map_err(|source| IoError::Model { origin: origin.to_owned(), source })?,
            Some(DistributionSpec::Token(t)) if t == "stationary" => stationary_distribution(&atlas)
                .map_err(|source| IoError::Model { origin: origin.to_owned(), source })?,
            Some(DistributionSpec::Token(t)) => {
                return Err(invalid(format!("initial_distribution: unknown token '{t}' (expected \"stationary\")")))
            }
            Some(DistributionSpec::Values(v)) => DVector::from_column_slice(v),
        };
        let model = PlantModel {
            atlas,
            subsystems,
            budgets,
            weights: CostWeights { r, g },
            x0: DVector::from_column_slice(&self.x0),
            initial_distribution,
        };
        model.validate().map_err(|source| IoError::Model { origin: origin.to_owned(), source })?;
        Ok(model)
    }
}

pub fn parse_model(text: &str, origin: &str) -> Result<PlantModel, IoError> {
    ModelFile::parse(text, origin)?.to_model(origin)
}

pub fn read_model(path: &Path) -> Result<PlantModel, IoError> {
    parse_model(&read(path)?, &path.display().to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Fingerprint of the mode atlas the pattern was written for.
    pub atlas_hash: String,
    #[serde(rename = "C")]
    pub c: Vec<Vec<i64>>,
}

impl PatternFile {
    pub fn from_pattern(pattern: &InfoPattern, name: Option<String>) -> Self {
        Self { name, atlas_hash: pattern.atlas_fingerprint().to_owned(), c: pattern.matrix() }
    }

    pub fn to_pattern(&self, atlas: &ModeAtlas, origin: &str) -> Result<InfoPattern, IoError> {
        if self.atlas_hash != atlas.fingerprint() {
            return Err(IoError::Atlas { origin: origin.to_owned(), source: AtlasError::AtlasMismatch });
        }
        InfoPattern::new(atlas, &self.c).map_err(|source| IoError::Atlas { origin: origin.to_owned(), source })
    }
}

pub fn read_pattern(path: &Path, atlas: &ModeAtlas) -> Result<InfoPattern, IoError> {
    let origin = path.display().to_string();
    parse::<PatternFile>(&read(path)?, &origin)?.to_pattern(atlas, &origin)
}

/// Pattern files of a directory in file-name order, named by file stem.
pub fn read_pattern_dir(dir: &Path, atlas: &ModeAtlas) -> Result<Vec<(String, InfoPattern)>, IoError> {
    let entries = fs::read_dir(dir).map_err(|source| IoError::Read { path: dir.to_owned(), source })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(IoError::EmptyPatternDir(dir.to_owned()));
    }
    paths
        .iter()
        .map(|p| {
            let name = p.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
            Ok((name, read_pattern(p, atlas)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigRecord {
    pub epsilon: f64,
    pub tolerance: f64,
    pub residual_tolerance: f64,
    pub max_iterations: usize,
    pub restarts: usize,
    pub seed: u64,
    pub interior_margin: f64,
    pub gamma_bracket: [f64; 2],
    pub bisection_tol: f64,
    pub use_stationary: bool,
    /// `null` when solved for.
    pub beta_u: Option<Vec<Vec<f64>>>,
}

impl ConfigRecord {
    pub fn from_config(c: &SynthesisConfig) -> Self {
        let s = &c.solver;
        Self {
            epsilon: s.epsilon,
            tolerance: s.tolerance,
            residual_tolerance: s.residual_tolerance,
            max_iterations: s.max_iterations,
            restarts: s.restarts,
            seed: s.seed,
            interior_margin: s.interior_margin,
            gamma_bracket: [s.bisection_bracket.0, s.bisection_bracket.1],
            bisection_tol: s.bisection_tol,
            use_stationary: c.use_stationary,
            beta_u: match &c.beta_u {
                BetaU::Free => None,
                BetaU::Given(v) => Some(v.clone()),
            },
        }
    }

    pub fn to_config(&self) -> SynthesisConfig {
        SynthesisConfig {
            solver: SolverConfig {
                epsilon: self.epsilon,
                tolerance: self.tolerance,
                residual_tolerance: self.residual_tolerance,
                max_iterations: self.max_iterations,
                restarts: self.restarts,
                seed: self.seed,
                interior_margin: self.interior_margin,
                bisection_bracket: (self.gamma_bracket[0], self.gamma_bracket[1]),
                bisection_tol: self.bisection_tol,
                ..SolverConfig::default()
            },
            beta_u: self.beta_u.clone().map_or(BetaU::Free, BetaU::Given),
            use_stationary: self.use_stationary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    /// `[i][μ]`.
    #[serde(rename = "X")]
    pub x: Vec<Vec<Rows>>,
    #[serde(rename = "Y")]
    pub y: Vec<Vec<Rows>>,
    /// `[i][σ]`.
    pub gains: Vec<Vec<Rows>>,
    pub beta_bar: Vec<Vec<f64>>,
    pub beta_tilde: Vec<Vec<f64>>,
    pub tau_u_tilde: Vec<Option<f64>>,
    pub tau_tilde: Vec<Option<f64>>,
    pub theta_tilde: Vec<Option<f64>>,
    pub tau_aux: Vec<Option<f64>>,
    pub theta_aux: Vec<Option<f64>>,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedRecord {
    pub tau_u: Vec<Option<f64>>,
    pub tau: Vec<Option<f64>>,
    pub theta: Vec<Option<f64>>,
    pub beta_u: Vec<Vec<f64>>,
    /// `K̃ᵢ(μ)`, `[i][μ]`.
    pub global_gains: Vec<Vec<Rows>>,
    pub cost_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateRecord {
    pub schur_passed: bool,
    pub worst_riccati_eigenvalue: f64,
    pub max_xy_gap: f64,
    pub max_beta_gap: f64,
    /// `[i][μ]` largest Riccati residual eigenvalue.
    pub riccati_max_eigenvalues: Vec<Vec<f64>>,
    pub gain_distance_passed: bool,
    pub gain_distance_min_slack: Option<f64>,
    pub constraints_passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub status: String,
    pub iterations: usize,
    pub restarts_used: usize,
    pub max_cone_residual: f64,
    pub max_rank_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloRecord {
    pub paths: usize,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
    pub uncertainty: String,
    pub lambda_hat: f64,
    pub mean_cost: f64,
    pub cost_standard_error: f64,
    pub tail_fraction: f64,
    pub j_hat: f64,
    pub j_standard_error: f64,
    pub truncation_allowance: f64,
    /// The analytic bound; Monte Carlo gives a lower estimate of the
    /// worst-case cost, not the worst case itself.
    pub cost_bound: f64,
    pub bound_respected: bool,
    pub iqc_passed: bool,
    pub iqc_min_local: Vec<f64>,
    pub iqc_min_interconnection: Vec<f64>,
    pub diverged_paths: Vec<(usize, u64)>,
}

impl MonteCarloRecord {
    pub fn from_report(r: &MonteCarloReport, cost_bound: f64) -> Self {
        Self {
            paths: r.config.paths,
            horizon: r.config.horizon,
            dt: r.config.dt,
            seed: r.config.seed,
            uncertainty: format!("{:?}", r.config.uncertainty),
            lambda_hat: r.lambda_hat,
            mean_cost: r.mean_cost,
            cost_standard_error: r.cost_standard_error,
            tail_fraction: r.tail_fraction,
            j_hat: r.j_hat,
            j_standard_error: r.j_standard_error,
            truncation_allowance: r.truncation_allowance,
            cost_bound,
            bound_respected: r.respects_bound(cost_bound),
            iqc_passed: r.iqc_passed,
            iqc_min_local: r.iqc_local.clone(),
            iqc_min_interconnection: r.iqc_interconnection.clone(),
            diverged_paths: r.diverged_paths.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub tool: String,
    pub version: String,
    pub atlas_hash: String,
    #[serde(rename = "C")]
    pub pattern: Vec<Vec<i64>>,
    pub config: ConfigRecord,
    pub solution: SolutionRecord,
    pub derived: DerivedRecord,
    pub certificates: CertificateRecord,
    pub diagnostics: DiagnosticsRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monte_carlo: Option<MonteCarloRecord>,
}

/// Written in place of a result when synthesis fails or its output is
/// refused by the post-checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefusalFile {
    pub tool: String,
    pub version: String,
    pub refused: bool,
    pub reason: String,
    pub worst_riccati_eigenvalue: Option<f64>,
    pub gain_distance_passed: Option<bool>,
    pub config: ConfigRecord,
}

impl RefusalFile {
    pub fn new(error: &SynthesisError, config: &SynthesisConfig) -> Self {
        let (worst, gd) = match error {
            SynthesisError::PostCheckFailed { worst_eigenvalue, gain_distance_passed, .. } => {
                (Some(*worst_eigenvalue), Some(*gain_distance_passed))
            }
            _ => (None, None),
        };
        Self {
            tool: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
            refused: true,
            reason: error.to_string(),
            worst_riccati_eigenvalue: worst,
            gain_distance_passed: gd,
            config: ConfigRecord::from_config(config),
        }
    }
}

fn status_name(s: SolveStatus) -> &'static str {
    match s {
        SolveStatus::Feasible => "feasible",
        SolveStatus::Infeasible => "infeasible",
        SolveStatus::MaxIterations => "max_iterations",
    }
}

fn status_from(s: &str) -> SolveStatus {
    match s {
        "feasible" => SolveStatus::Feasible,
        "infeasible" => SolveStatus::Infeasible,
        _ => SolveStatus::MaxIterations,
    }
}

fn nested(m: &[Vec<DMatrix<f64>>]) -> Vec<Vec<Rows>> {
    m.iter().map(|row| row.iter().map(rows).collect()).collect()
}

impl ResultFile {
    pub fn from_result(
        result: &SynthesisResult,
        config: &SynthesisConfig,
        cost_bound: f64,
        constraints_passed: bool,
    ) -> Self {
        let v = &result.values;
        let big_n = v.x.len();
        let mut riccati = vec![Vec::new(); big_n];
        for b in &result.schur.blocks {
            riccati[b.subsystem].push(b.max_eigenvalue);
        }
        Self {
            tool: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
            atlas_hash: result.pattern.atlas_fingerprint().to_owned(),
            pattern: result.pattern.matrix(),
            config: ConfigRecord::from_config(config),
            solution: SolutionRecord {
                x: nested(&v.x),
                y: nested(&v.y),
                gains: nested(&v.gains),
                beta_bar: v.beta_bar.clone(),
                beta_tilde: v.beta_tilde.clone(),
                tau_u_tilde: v.tau_u_tilde.clone(),
                tau_tilde: v.tau_tilde.clone(),
                theta_tilde: v.theta_tilde.clone(),
                tau_aux: v.tau.clone(),
                theta_aux: v.theta.clone(),
                gamma: v.gamma,
            },
            derived: DerivedRecord {
                tau_u: result.tau_u.clone(),
                tau: result.tau.clone(),
                theta: result.theta.clone(),
                beta_u: result.beta_u.clone(),
                global_gains: nested(&result.global_gains),
                cost_bound,
            },
            certificates: CertificateRecord {
                schur_passed: result.schur.passed,
                worst_riccati_eigenvalue: result.schur.worst_eigenvalue(),
                max_xy_gap: result.schur.max_xy_gap,
                max_beta_gap: result.schur.max_beta_gap,
                riccati_max_eigenvalues: riccati,
                gain_distance_passed: result.gain_distance.passed,
                gain_distance_min_slack: (!result.gain_distance.entries.is_empty())
                    .then(|| result.gain_distance.min_slack()),
                constraints_passed,
            },
            diagnostics: DiagnosticsRecord {
                status: status_name(result.diagnostics.status).into(),
                iterations: result.diagnostics.iterations,
                restarts_used: result.diagnostics.restarts_used,
                max_cone_residual: result.diagnostics.max_cone_residual,
                max_rank_residual: result.diagnostics.max_rank_residual,
            },
            monte_carlo: None,
        }
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, IoError> {
        parse(text, origin)
    }

    pub fn read(path: &Path) -> Result<Self, IoError> {
        Self::parse(&read(path)?, &path.display().to_string())
    }

    /// Rebuilds the result against `model`, recomputing the derived scalars
    /// and both certificates from the stored decision values.
    pub fn to_result(&self, model: &PlantModel) -> Result<SynthesisResult, IoError> {
        let mismatch = |m: String| IoError::ModelResultMismatch(m);
        if self.atlas_hash != model.atlas.fingerprint() {
            return Err(mismatch("mode atlas hash differs".into()));
        }
        let pattern = InfoPattern::new(&model.atlas, &self.pattern).map_err(|e| mismatch(e.to_string()))?;
        let big_n = model.subsystem_count();
        let big_m = model.atlas.modes();
        let s = &self.solution;
        let lens = [
            s.x.len(),
            s.y.len(),
            s.gains.len(),
            s.beta_bar.len(),
            s.beta_tilde.len(),
            s.tau_u_tilde.len(),
            s.tau_tilde.len(),
            s.theta_tilde.len(),
            s.tau_aux.len(),
            s.theta_aux.len(),
        ];
        if lens.iter().any(|&l| l != big_n) {
            return Err(mismatch(format!("solution covers {lens:?} subsystems, model has {big_n}")));
        }
        let mut values = DecisionValues {
            x: Vec::new(),
            y: Vec::new(),
            gains: Vec::new(),
            beta_bar: s.beta_bar.clone(),
            beta_tilde: s.beta_tilde.clone(),
            tau_u_tilde: s.tau_u_tilde.clone(),
            tau_tilde: s.tau_tilde.clone(),
            theta_tilde: s.theta_tilde.clone(),
            tau: s.tau_aux.clone(),
            theta: s.theta_aux.clone(),
            gamma: s.gamma,
        };
        for i in 0..big_n {
            let sub = &model.subsystems[i];
            let (n, m) = (sub.states(), sub.inputs());
            let matrices = |list: &[Rows], count: usize, shape: (usize, usize), name: &str| {
                if list.len() != count {
                    return Err(mismatch(format!("subsystem {}: {} {name} matrices, expected {count}", i + 1, list.len())));
                }
                list.iter()
                    .map(|r| {
                        let mat = from_rows(r, shape.1).map_err(|e| mismatch(format!("{name}: {e}")))?;
                        let mat = if mat.is_empty() { DMatrix::zeros(shape.0, shape.1) } else { mat };
                        if mat.shape() != shape {
                            return Err(mismatch(format!("subsystem {}: {name} has shape {:?}, expected {shape:?}", i + 1, mat.shape())));
                        }
                        Ok(mat)
                    })
                    .collect::<Result<Vec<_>, _>>()
            };
            values.x.push(matrices(&s.x[i], big_m, (n, n), "X")?);
            values.y.push(matrices(&s.y[i], big_m, (n, n), "Y")?);
            let gain_count = if m == 0 { 0 } else { pattern.class_count(i) };
            values.gains.push(matrices(&s.gains[i], gain_count, (m, n), "gain")?);
            let beta_count = if m == 0 { 0 } else { big_m };
            if s.beta_bar[i].len() != beta_count || s.beta_tilde[i].len() != beta_count {
                return Err(mismatch(format!("subsystem {}: beta entries, expected {beta_count}", i + 1)));
            }
        }
        let d = &self.diagnostics;
        let diagnostics = SolverDiagnostics {
            status: status_from(&d.status),
            iterations: d.iterations,
            restarts_used: d.restarts_used,
            max_cone_residual: d.max_cone_residual,
            max_rank_residual: d.max_rank_residual,
        };
        Ok(from_values(model, &pattern, values, self.config.use_stationary, diagnostics)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::desk_model;

    #[test]
    fn model_round_trip_is_fixed_point() {
        let file = ModelFile::from_model(&desk_model());
        let text = to_json(&file);
        let back = ModelFile::parse(&text, "mem").unwrap();
        assert_eq!(back, file);
        assert_eq!(to_json(&back), text);
        assert_eq!(back.to_model("mem").unwrap(), desk_model());
    }

    #[test]
    fn parse_error_carries_line() {
        let err = parse_model("{\n  \"subsystem_mode_counts\": [1],\n  oops\n}", "m.json").unwrap_err();
        match err {
            IoError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn bad_generator_row_is_named() {
        let mut file = ModelFile::from_model(&desk_model());
        file.generator[1][0] += 0.5;
        let msg = file.to_model("m.json").unwrap_err().to_string();
        assert!(msg.contains("generator row 2"), "{msg}");
    }

    #[test]
    fn stationary_token_and_default() {
        let mut file = ModelFile::from_model(&desk_model());
        file.initial_distribution = Some(DistributionSpec::Token("stationary".into()));
        let a = file.to_model("m").unwrap();
        file.initial_distribution = None;
        let b = file.to_model("m").unwrap();
        assert_eq!(a.initial_distribution, b.initial_distribution);
        assert_eq!(a.initial_distribution, stationary_distribution(&a.atlas).unwrap());
        file.initial_distribution = Some(DistributionSpec::Token("uniform".into()));
        assert!(file.to_model("m").is_err());
    }

    #[test]
    fn pattern_hash_must_match() {
        let model = desk_model();
        let pattern = InfoPattern::global(&model.atlas);
        let mut file = PatternFile::from_pattern(&pattern, None);
        assert_eq!(file.to_pattern(&model.atlas, "p").unwrap(), pattern);
        file.atlas_hash = "00".into();
        assert!(matches!(file.to_pattern(&model.atlas, "p"), Err(IoError::Atlas { source: AtlasError::AtlasMismatch, .. })));
    }

    pub(crate) const SCALAR_MODEL: &str = r#"{
  "subsystem_mode_counts": [1],
  "mode_vectors": [[1]],
  "generator": [[0.0]],
  "subsystems": [[{"A": [[-1.0]], "B": [[1.0]], "E": [[0.1]], "L": [[0.1]], "H": [[0.1]]}]],
  "S_bar": [[[0.1]]],
  "S_tilde": [[[0.1]]],
  "weights": [{"R": [[[1.0]]], "G": [[[1.0]]]}],
  "x0": [1.0]
}"#;

    #[test]
    fn result_round_trip_recertifies() {
        use crate::synthesis::{constraint_check, cost_bound, synthesize_neighboring};
        let model = parse_model(SCALAR_MODEL, "scalar").unwrap();
        assert_eq!(model.initial_distribution.as_slice(), &[1.0]);
        let config = SynthesisConfig::default();
        let pattern = InfoPattern::global(&model.atlas);
        let result = synthesize_neighboring(&model, &pattern, &config).unwrap();
        let bound = cost_bound(&result, &model, false).unwrap();
        let file = ResultFile::from_result(&result, &config, bound, true);
        let text = to_json(&file);
        let back = ResultFile::parse(&text, "r").unwrap();
        assert_eq!(back, file);
        let rebuilt = back.to_result(&model).unwrap();
        assert_eq!(rebuilt.values, result.values);
        assert!(rebuilt.certified());
        assert!(constraint_check(&model, &rebuilt, &back.config.to_config()).unwrap().passes(1e-6));
        assert_eq!(back.config.to_config(), config);
    }

    #[test]
    fn result_against_other_model_is_mismatch() {
        let model = parse_model(SCALAR_MODEL, "scalar").unwrap();
        let config = SynthesisConfig::default();
        let result = crate::synthesis::synthesize_neighboring(&model, &InfoPattern::global(&model.atlas), &config).unwrap();
        let file = ResultFile::from_result(&result, &config, 0.0, true);
        assert!(matches!(file.to_result(&desk_model()), Err(IoError::ModelResultMismatch(_))));
    }
}
