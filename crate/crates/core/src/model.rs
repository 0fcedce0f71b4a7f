//! Uncertain large-scale plant, IQC budgets and cost weights.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::is_positive_definite;
use crate::mode_atlas::ModeAtlas;

/// Tolerance on `Σπ = 1`.
pub const DISTRIBUTION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DimensionMismatch(String),
    NotPositiveDefinite(String),
    BadDistribution(String),
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::DimensionMismatch(s) => write!(f, "dimension mismatch: {s}"),
            Violation::NotPositiveDefinite(s) => write!(f, "not positive definite: {s}"),
            Violation::BadDistribution(s) => write!(f, "bad distribution: {s}"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },
    #[error("generator is reducible; no unique stationary distribution")]
    ReducibleChain,
}

/// System matrices of one subsystem at one local mode.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalModeBlocks {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub h: DMatrix<f64>,
}

/// Per-local-mode matrices of subsystem `i`; dimensions are read from the
/// first mode and must agree across modes.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemData {
    pub modes: Vec<LocalModeBlocks>,
}

impl SubsystemData {
    fn first(&self) -> &LocalModeBlocks {
        &self.modes[0]
    }
    pub fn states(&self) -> usize {
        self.first().a.nrows()
    }
    pub fn inputs(&self) -> usize {
        self.first().b.ncols()
    }
    pub fn local_uncertainty_inputs(&self) -> usize {
        self.first().e.ncols()
    }
    pub fn interconnection_inputs(&self) -> usize {
        self.first().l.ncols()
    }
    pub fn uncertainty_outputs(&self) -> usize {
        self.first().h.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyBudget {
    pub s_bar: DMatrix<f64>,
    pub s_tilde: DMatrix<f64>,
}

/// Cost weights indexed `[global mode][subsystem]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    pub r: Vec<Vec<DMatrix<f64>>>,
    pub g: Vec<Vec<DMatrix<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub atlas: ModeAtlas,
    pub subsystems: Vec<SubsystemData>,
    pub budgets: Vec<UncertaintyBudget>,
    pub weights: CostWeights,
    /// Stacked initial state `[x₁₀; …; x_N0]`.
    pub x0: DVector<f64>,
    pub initial_distribution: DVector<f64>,
}

impl PlantModel {
    pub fn subsystem_count(&self) -> usize {
        self.subsystems.len()
    }

    pub fn total_states(&self) -> usize {
        self.subsystems.iter().map(SubsystemData::states).sum()
    }

    /// Offset of subsystem `i` inside the stacked state.
    pub fn state_offset(&self, i: usize) -> usize {
        self.subsystems[..i].iter().map(SubsystemData::states).sum()
    }

    pub fn initial_state(&self, i: usize) -> DVector<f64> {
        let n = self.subsystems[i].states();
        self.x0.rows(self.state_offset(i), n).into_owned()
    }

    /// Checks every structural invariant; idempotent.
    pub fn validate(&self) -> Result<(), ModelError> {
        let mut v = Vec::new();
        let atlas = &self.atlas;
        let big_n = atlas.subsystems();
        let big_m = atlas.modes();
        let dim = |s: String| Violation::DimensionMismatch(s);

        if self.subsystems.len() != big_n {
            v.push(dim(format!(
                "{} subsystems given, mode atlas has {}",
                self.subsystems.len(),
                big_n
            )));
            return Err(ModelError::Invalid(v));
        }
        for (i, sub) in self.subsystems.iter().enumerate() {
            let label = i + 1;
            if sub.modes.len() != atlas.local_mode_counts()[i] {
                v.push(dim(format!(
                    "subsystem {label} has {} mode blocks, atlas has {} local modes",
                    sub.modes.len(),
                    atlas.local_mode_counts()[i]
                )));
                continue;
            }
            let n = sub.states();
            if n == 0 {
                v.push(dim(format!("subsystem {label} has no states")));
                continue;
            }
            let (m, g, s, h) = (
                sub.inputs(),
                sub.local_uncertainty_inputs(),
                sub.interconnection_inputs(),
                sub.uncertainty_outputs(),
            );
            for (k, blk) in sub.modes.iter().enumerate() {
                let at = |name: &str| format!("subsystem {label} mode {} {name}", k + 1);
                let expect = [
                    ("A", &blk.a, n, n),
                    ("B", &blk.b, n, m),
                    ("E", &blk.e, n, g),
                    ("L", &blk.l, n, s),
                    ("H", &blk.h, h, n),
                ];
                for (name, mat, rows, cols) in expect {
                    if mat.nrows() != rows || (rows > 0 && mat.ncols() != cols) {
                        v.push(dim(format!(
                            "{} is {}x{}, expected {}x{}",
                            at(name),
                            mat.nrows(),
                            mat.ncols(),
                            rows,
                            cols
                        )));
                    }
                    if mat.iter().any(|x| !x.is_finite()) {
                        v.push(dim(format!("{} has non-finite entries", at(name))));
                    }
                }
            }
        }
        if !v.is_empty() {
            return Err(ModelError::Invalid(v));
        }

        if self.budgets.len() != big_n {
            v.push(dim(format!("{} IQC budgets given, expected {big_n}", self.budgets.len())));
        } else {
            for (i, b) in self.budgets.iter().enumerate() {
                let n = self.subsystems[i].states();
                for (name, mat) in [("S_bar", &b.s_bar), ("S_tilde", &b.s_tilde)] {
                    if mat.nrows() != n || mat.ncols() != n {
                        v.push(dim(format!("{name} of subsystem {} is not {n}x{n}", i + 1)));
                    } else if !is_positive_definite(mat) {
                        v.push(Violation::NotPositiveDefinite(format!(
                            "{name} of subsystem {}",
                            i + 1
                        )));
                    }
                }
            }
        }

        for (name, per_mode) in [("R", &self.weights.r), ("G", &self.weights.g)] {
            if per_mode.len() != big_m {
                v.push(dim(format!("{name} weights given for {} modes, expected {big_m}", per_mode.len())));
                continue;
            }
            for (mu, row) in per_mode.iter().enumerate() {
                if row.len() != big_n {
                    v.push(dim(format!(
                        "{name} weights at mode {} cover {} subsystems, expected {big_n}",
                        mu + 1,
                        row.len()
                    )));
                    continue;
                }
                for (i, w) in row.iter().enumerate() {
                    let d = if name == "R" {
                        self.subsystems[i].states()
                    } else {
                        self.subsystems[i].inputs()
                    };
                    if w.nrows() != d || w.ncols() != d {
                        v.push(dim(format!(
                            "{name} of subsystem {} at mode {} is {}x{}, expected {d}x{d}",
                            i + 1,
                            mu + 1,
                            w.nrows(),
                            w.ncols()
                        )));
                    } else if !is_positive_definite(w) {
                        v.push(Violation::NotPositiveDefinite(format!(
                            "{name} of subsystem {} at mode {}",
                            i + 1,
                            mu + 1
                        )));
                    }
                }
            }
        }

        if self.x0.len() != self.total_states() {
            v.push(dim(format!(
                "x0 has {} entries, expected {}",
                self.x0.len(),
                self.total_states()
            )));
        }
        if let Err(msg) = check_distribution(&self.initial_distribution, big_m) {
            v.push(Violation::BadDistribution(msg));
        }

        if v.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Invalid(v))
        }
    }

    /// Subsystem `i`'s matrices at global mode `mu`, i.e. at local mode `ψᵢ⁻¹(μ)`.
    pub fn lift(&self, i: usize, mu: usize) -> Result<&LocalModeBlocks, ModelError> {
        let sub = self
            .subsystems
            .get(i)
            .ok_or(ModelError::IndexOutOfRange { index: i, limit: self.subsystems.len() })?;
        let local = self
            .atlas
            .project_mode(mu, i)
            .map_err(|_| ModelError::IndexOutOfRange { index: mu, limit: self.atlas.modes() })?;
        Ok(&sub.modes[local - 1])
    }

    pub fn r_weight(&self, i: usize, mu: usize) -> &DMatrix<f64> {
        &self.weights.r[mu][i]
    }

    pub fn g_weight(&self, i: usize, mu: usize) -> &DMatrix<f64> {
        &self.weights.g[mu][i]
    }
}

pub fn check_distribution(pi: &DVector<f64>, m: usize) -> Result<(), String> {
    if pi.len() != m {
        return Err(format!("has {} entries, expected {m}", pi.len()));
    }
    if let Some(k) = pi.iter().position(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(format!("entry {} is {}", k + 1, pi[k]));
    }
    let sum: f64 = pi.iter().sum();
    if (sum - 1.0).abs() > DISTRIBUTION_TOL {
        return Err(format!("entries sum to {sum}"));
    }
    Ok(())
}

/// Whether every mode reaches every other through positive rates.
pub fn is_irreducible(q: &DMatrix<f64>) -> bool {
    let m = q.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; m];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for w in 0..m {
                let rate = if forward { q[(u, w)] } else { q[(w, u)] };
                if w != u && rate > 0.0 && !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    m > 0 && reach(true) && reach(false)
}

/// Stationary distribution of the global mode chain by the
/// Grassmann–Taksar–Heyman elimination (subtraction-free).
pub fn stationary_distribution(atlas: &ModeAtlas) -> Result<DVector<f64>, ModelError> {
    let q = atlas.generator();
    let m = q.nrows();
    if !is_irreducible(q) {
        return Err(ModelError::ReducibleChain);
    }
    let mut a = q.clone();
    for k in (1..m).rev() {
        let s: f64 = (0..k).map(|j| a[(k, j)]).sum();
        for i in 0..k {
            let f = a[(i, k)] / s;
            for j in 0..k {
                if i != j {
                    a[(i, j)] += f * a[(k, j)];
                }
            }
        }
    }
    let mut pi = DVector::zeros(m);
    pi[0] = 1.0;
    for k in 1..m {
        let s: f64 = (0..k).map(|j| a[(k, j)]).sum();
        pi[k] = (0..k).map(|i| pi[i] * a[(i, k)]).sum::<f64>() / s;
    }
    let total = pi.sum();
    Ok(pi / total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    fn atlas(q: &[f64], counts: Vec<usize>, vectors: Vec<Vec<usize>>) -> ModeAtlas {
        let m = vectors.len();
        ModeAtlas::new(counts, vectors, DMatrix::from_row_slice(m, m, q)).unwrap()
    }

    pub(crate) fn scalar_model() -> PlantModel {
        let at = atlas(&[-1.0, 1.0, 1.0, -1.0], vec![2], vec![vec![1], vec![2]]);
        let blk = |a: f64| LocalModeBlocks {
            a: scalar(a),
            b: scalar(1.0),
            e: scalar(0.2),
            l: scalar(0.2),
            h: scalar(0.3),
        };
        PlantModel {
            atlas: at,
            subsystems: vec![SubsystemData { modes: vec![blk(-1.0), blk(0.5)] }],
            budgets: vec![UncertaintyBudget { s_bar: scalar(1.0), s_tilde: scalar(1.0) }],
            weights: CostWeights {
                r: vec![vec![scalar(1.0)]; 2],
                g: vec![vec![scalar(1.0)]; 2],
            },
            x0: DVector::from_element(1, 1.0),
            initial_distribution: DVector::from_vec(vec![0.5, 0.5]),
        }
    }

    #[test]
    fn well_formed_scalar_model_accepted() {
        let m = scalar_model();
        assert!(m.validate().is_ok());
        assert!(m.validate().is_ok());
    }

    #[test]
    fn zero_budget_rejected() {
        let mut m = scalar_model();
        m.budgets[0].s_bar = scalar(0.0);
        match m.validate() {
            Err(ModelError::Invalid(v)) => {
                assert!(v.iter().any(|x| matches!(x, Violation::NotPositiveDefinite(_))))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mode_block_count_mismatch() {
        let at = atlas(
            &[-2.0, 1.0, 1.0, 1.0, -2.0, 1.0, 1.0, 1.0, -2.0],
            vec![3],
            vec![vec![1], vec![2], vec![3]],
        );
        let mut m = scalar_model();
        m.atlas = at;
        m.weights.r = vec![vec![scalar(1.0)]; 3];
        m.weights.g = vec![vec![scalar(1.0)]; 3];
        m.initial_distribution = DVector::from_element(3, 1.0 / 3.0);
        match m.validate() {
            Err(ModelError::Invalid(v)) => {
                assert!(matches!(v[0], Violation::DimensionMismatch(_)))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_distribution_rejected() {
        let mut m = scalar_model();
        m.initial_distribution = DVector::from_vec(vec![0.7, 0.7]);
        assert!(matches!(m.validate(), Err(ModelError::Invalid(v)) if matches!(v[0], Violation::BadDistribution(_))));
    }

    #[test]
    fn lift_picks_local_mode_block() {
        let q = DMatrix::from_fn(4, 4, |r, c| if r == c { -3.0 } else { 1.0 });
        let at = ModeAtlas::new(
            vec![2, 2, 2],
            vec![vec![1, 1, 1], vec![1, 1, 2], vec![1, 2, 2], vec![2, 1, 2]],
            q,
        )
        .unwrap();
        let blk = |a: f64| LocalModeBlocks {
            a: scalar(a),
            b: scalar(1.0),
            e: DMatrix::zeros(1, 0),
            l: DMatrix::zeros(1, 0),
            h: DMatrix::zeros(0, 1),
        };
        let sub = |k: f64| SubsystemData { modes: vec![blk(k + 0.1), blk(k + 0.2)] };
        let model = PlantModel {
            atlas: at,
            subsystems: vec![sub(1.0), sub(2.0), sub(3.0)],
            budgets: vec![UncertaintyBudget { s_bar: scalar(1.0), s_tilde: scalar(1.0) }; 3],
            weights: CostWeights { r: vec![vec![scalar(1.0); 3]; 4], g: vec![vec![scalar(1.0); 3]; 4] },
            x0: DVector::from_element(3, 1.0),
            initial_distribution: DVector::from_element(4, 0.25),
        };
        model.validate().unwrap();
        assert_eq!(model.lift(0, 3).unwrap().a[(0, 0)], 1.2);
        assert_eq!(model.lift(2, 0).unwrap().a[(0, 0)], 3.1);
        assert!(model.lift(0, 4).is_err());
        assert!(model.lift(3, 0).is_err());
    }

    #[test]
    fn lift_counts_on_product_atlas() {
        let mut vectors = Vec::new();
        for a in 1..=2 {
            for b in 1..=3 {
                vectors.push(vec![a, b]);
            }
        }
        let m = vectors.len();
        let q = DMatrix::from_fn(m, m, |r, c| if r == c { -(m as f64 - 1.0) } else { 1.0 });
        let at = ModeAtlas::new(vec![2, 3], vectors, q).unwrap();
        let blk = |a: f64| LocalModeBlocks {
            a: scalar(a),
            b: DMatrix::zeros(1, 0),
            e: DMatrix::zeros(1, 0),
            l: DMatrix::zeros(1, 0),
            h: DMatrix::zeros(0, 1),
        };
        let model = PlantModel {
            atlas: at,
            subsystems: vec![
                SubsystemData { modes: (0..2).map(|k| blk(k as f64)).collect() },
                SubsystemData { modes: (0..3).map(|k| blk(k as f64)).collect() },
            ],
            budgets: vec![UncertaintyBudget { s_bar: scalar(1.0), s_tilde: scalar(1.0) }; 2],
            weights: CostWeights {
                r: vec![vec![scalar(1.0); 2]; m],
                g: vec![vec![DMatrix::zeros(0, 0); 2]; m],
            },
            x0: DVector::from_element(2, 1.0),
            initial_distribution: DVector::from_element(m, 1.0 / m as f64),
        };
        model.validate().unwrap();
        for (i, &count) in [2usize, 3].iter().enumerate() {
            let mut hits = vec![0usize; count];
            for mu in 0..m {
                hits[model.lift(i, mu).unwrap().a[(0, 0)] as usize] += 1;
            }
            assert!(hits.iter().all(|&h| h == m / count));
        }
    }

    #[test]
    fn stationary_examples() {
        let sym = atlas(&[-1.0, 1.0, 1.0, -1.0], vec![2], vec![vec![1], vec![2]]);
        let pi = stationary_distribution(&sym).unwrap();
        assert!((pi[0] - 0.5).abs() < 1e-15 && (pi[1] - 0.5).abs() < 1e-15);

        let asym = atlas(&[-2.0, 2.0, 1.0, -1.0], vec![2], vec![vec![1], vec![2]]);
        let pi = stationary_distribution(&asym).unwrap();
        assert!((pi[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((pi[1] - 2.0 / 3.0).abs() < 1e-15);

        let single = ModeAtlas::new(vec![1], vec![vec![1]], DMatrix::zeros(1, 1)).unwrap();
        assert_eq!(stationary_distribution(&single).unwrap()[0], 1.0);
    }

    #[test]
    fn reducible_chain_rejected() {
        let absorbing = atlas(&[-1.0, 1.0, 0.0, 0.0], vec![2], vec![vec![1], vec![2]]);
        assert_eq!(stationary_distribution(&absorbing), Err(ModelError::ReducibleChain));
    }
}
