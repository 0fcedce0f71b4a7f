//! Joint mode structure of the large-scale system.
//!
//! A [`ModeAtlas`] lists the admissible joint mode vectors `[μ₁,…,μ_N]`; the
//! position of a vector in that list is its global mode index. An
//! [`InfoPattern`] describes which subsystem modes each local controller
//! observes and derives, per controller, the map from global modes to the
//! classes that controller can distinguish.
//!
//! Index conventions: entries of mode vectors are 1-based local modes. Global
//! mode indices, subsystem indices and class labels are 0-based positions in
//! the Rust API and 1-based in every file and report.

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Tolerance on generator row sums.
pub const GENERATOR_ROW_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AtlasError {
    #[error("mode atlas has no mode vectors")]
    Empty,
    #[error("mode vector {index} has {len} entries, expected {expected}")]
    WrongLength { index: usize, len: usize, expected: usize },
    #[error("mode vector {index} duplicates mode vector {first}")]
    DuplicateModeVector { index: usize, first: usize },
    #[error("mode vector {index}: local mode {value} of subsystem {subsystem} is outside 1..={max}")]
    LocalModeOutOfRange { index: usize, subsystem: usize, value: usize, max: usize },
    #[error("local mode {value} of subsystem {subsystem} never occurs in any mode vector")]
    UnusedLocalMode { subsystem: usize, value: usize },
    #[error("generator is {rows}x{cols}, expected {expected}x{expected}")]
    GeneratorShape { rows: usize, cols: usize, expected: usize },
    #[error("generator row {row} sums to {sum:e}, expected 0")]
    GeneratorRowSumNonzero { row: usize, sum: f64 },
    #[error("generator entry ({row}, {col}) = {value} is negative off the diagonal")]
    NegativeOffDiagonal { row: usize, col: usize, value: f64 },
    #[error("generator entry ({row}, {col}) is not finite")]
    NonFiniteRate { row: usize, col: usize },
    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },
    #[error("information pattern is {rows}x{cols}, expected {expected}x{expected}")]
    PatternShape { rows: usize, cols: usize, expected: usize },
    #[error("information pattern entry ({row}, {col}) = {value} is not 0 or 1")]
    NonBinaryEntry { row: usize, col: usize, value: i64 },
    #[error("controller {subsystem} does not observe its own subsystem mode")]
    MissingSelfMode { subsystem: usize },
    #[error("patterns were built over different mode atlases")]
    AtlasMismatch,
}

/// Admissible joint modes and the generator of the global mode chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeAtlas {
    local_mode_counts: Vec<usize>,
    mode_vectors: Vec<Vec<usize>>,
    generator: DMatrix<f64>,
}

impl ModeAtlas {
    pub fn new(
        local_mode_counts: Vec<usize>,
        mode_vectors: Vec<Vec<usize>>,
        generator: DMatrix<f64>,
    ) -> Result<Self, AtlasError> {
        let n = local_mode_counts.len();
        if mode_vectors.is_empty() {
            return Err(AtlasError::Empty);
        }
        let mut seen = vec![vec![false; 0]; n];
        for (s, &count) in local_mode_counts.iter().enumerate() {
            seen[s] = vec![false; count];
        }
        for (index, v) in mode_vectors.iter().enumerate() {
            if v.len() != n {
                return Err(AtlasError::WrongLength { index: index + 1, len: v.len(), expected: n });
            }
            for (s, &value) in v.iter().enumerate() {
                if value == 0 || value > local_mode_counts[s] {
                    return Err(AtlasError::LocalModeOutOfRange {
                        index: index + 1,
                        subsystem: s + 1,
                        value,
                        max: local_mode_counts[s],
                    });
                }
                seen[s][value - 1] = true;
            }
            if let Some(first) = mode_vectors[..index].iter().position(|w| w == v) {
                return Err(AtlasError::DuplicateModeVector { index: index + 1, first: first + 1 });
            }
        }
        for (s, flags) in seen.iter().enumerate() {
            if let Some(missing) = flags.iter().position(|f| !f) {
                return Err(AtlasError::UnusedLocalMode { subsystem: s + 1, value: missing + 1 });
            }
        }
        let m = mode_vectors.len();
        if generator.nrows() != m || generator.ncols() != m {
            return Err(AtlasError::GeneratorShape {
                rows: generator.nrows(),
                cols: generator.ncols(),
                expected: m,
            });
        }
        for r in 0..m {
            for c in 0..m {
                let q = generator[(r, c)];
                if !q.is_finite() {
                    return Err(AtlasError::NonFiniteRate { row: r + 1, col: c + 1 });
                }
                if r != c && q < 0.0 {
                    return Err(AtlasError::NegativeOffDiagonal { row: r + 1, col: c + 1, value: q });
                }
            }
            let sum: f64 = generator.row(r).iter().sum();
            if sum.abs() > GENERATOR_ROW_TOL {
                return Err(AtlasError::GeneratorRowSumNonzero { row: r + 1, sum });
            }
        }
        Ok(Self { local_mode_counts, mode_vectors, generator })
    }

    /// Number of subsystems `N`.
    pub fn subsystems(&self) -> usize {
        self.local_mode_counts.len()
    }

    /// Number of global modes `M`.
    pub fn modes(&self) -> usize {
        self.mode_vectors.len()
    }

    pub fn local_mode_counts(&self) -> &[usize] {
        &self.local_mode_counts
    }

    pub fn mode_vectors(&self) -> &[Vec<usize>] {
        &self.mode_vectors
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        &self.generator
    }

    pub fn rate(&self, from: usize, to: usize) -> f64 {
        self.generator[(from, to)]
    }

    /// Global index of a joint mode vector, if admissible.
    pub fn global_index(&self, vector: &[usize]) -> Option<usize> {
        self.mode_vectors.iter().position(|v| v == vector)
    }

    /// The 1-based local mode of subsystem `i` at global mode `mu`.
    pub fn project_mode(&self, mu: usize, i: usize) -> Result<usize, AtlasError> {
        let v = self
            .mode_vectors
            .get(mu)
            .ok_or(AtlasError::IndexOutOfRange { index: mu, limit: self.modes() })?;
        v.get(i).copied().ok_or(AtlasError::IndexOutOfRange { index: i, limit: self.subsystems() })
    }

    /// SHA-256 fingerprint of the counts, vectors and exact generator bits.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(format!("{:?}|{:?}|", self.local_mode_counts, self.mode_vectors).as_bytes());
        for r in 0..self.modes() {
            for c in 0..self.modes() {
                hasher.update(self.generator[(r, c)].to_bits().to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}

/// Which subsystem modes each local controller observes, with the derived
/// class maps.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoPattern {
    observes: Vec<Vec<bool>>,
    phi: Vec<Vec<usize>>,
    class_counts: Vec<usize>,
    atlas_fingerprint: String,
}

impl InfoPattern {
    /// Groups global modes by the masked vector `diag(cᵢ)·ψ⁻¹(μ)`; labels are
    /// assigned in order of first appearance over `μ = 0..M`.
    pub fn new(atlas: &ModeAtlas, c: &[Vec<i64>]) -> Result<Self, AtlasError> {
        let n = atlas.subsystems();
        if c.len() != n {
            return Err(AtlasError::PatternShape {
                rows: c.len(),
                cols: c.first().map_or(0, Vec::len),
                expected: n,
            });
        }
        let mut observes = Vec::with_capacity(n);
        for (r, row) in c.iter().enumerate() {
            if row.len() != n {
                return Err(AtlasError::PatternShape { rows: c.len(), cols: row.len(), expected: n });
            }
            let mut flags = Vec::with_capacity(n);
            for (col, &value) in row.iter().enumerate() {
                match value {
                    0 => flags.push(false),
                    1 => flags.push(true),
                    _ => return Err(AtlasError::NonBinaryEntry { row: r + 1, col: col + 1, value }),
                }
            }
            if !flags[r] {
                return Err(AtlasError::MissingSelfMode { subsystem: r + 1 });
            }
            observes.push(flags);
        }

        let mut phi = Vec::with_capacity(n);
        let mut class_counts = Vec::with_capacity(n);
        for flags in &observes {
            let mut representatives: Vec<Vec<usize>> = Vec::new();
            let mut map = Vec::with_capacity(atlas.modes());
            for v in atlas.mode_vectors() {
                let masked: Vec<usize> =
                    v.iter().zip(flags).map(|(&x, &seen)| if seen { x } else { 0 }).collect();
                let label = match representatives.iter().position(|r| *r == masked) {
                    Some(k) => k,
                    None => {
                        representatives.push(masked);
                        representatives.len() - 1
                    }
                };
                map.push(label);
            }
            class_counts.push(representatives.len());
            phi.push(map);
        }
        Ok(Self { observes, phi, class_counts, atlas_fingerprint: atlas.fingerprint() })
    }

    /// Identity pattern: each controller sees only its own mode.
    pub fn local(atlas: &ModeAtlas) -> Self {
        let n = atlas.subsystems();
        let c: Vec<Vec<i64>> =
            (0..n).map(|r| (0..n).map(|k| i64::from(k == r)).collect()).collect();
        Self::new(atlas, &c).expect("identity pattern is always valid")
    }

    /// All-ones pattern: every controller sees the global mode.
    pub fn global(atlas: &ModeAtlas) -> Self {
        let n = atlas.subsystems();
        Self::new(atlas, &vec![vec![1; n]; n]).expect("all-ones pattern is always valid")
    }

    pub fn subsystems(&self) -> usize {
        self.observes.len()
    }

    pub fn modes(&self) -> usize {
        self.phi.first().map_or(0, Vec::len)
    }

    pub fn observes(&self, i: usize, j: usize) -> bool {
        self.observes[i][j]
    }

    pub fn matrix(&self) -> Vec<Vec<i64>> {
        self.observes.iter().map(|r| r.iter().map(|&b| i64::from(b)).collect()).collect()
    }

    /// Class `σᵢ = φᵢ(μ)` of global mode `mu` for controller `i`.
    pub fn class_of(&self, i: usize, mu: usize) -> usize {
        self.phi[i][mu]
    }

    pub fn phi(&self, i: usize) -> &[usize] {
        &self.phi[i]
    }

    /// Number of classes `M_ci` controller `i` distinguishes.
    pub fn class_count(&self, i: usize) -> usize {
        self.class_counts[i]
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn atlas_fingerprint(&self) -> &str {
        &self.atlas_fingerprint
    }

    pub fn matches(&self, atlas: &ModeAtlas) -> bool {
        self.atlas_fingerprint == atlas.fingerprint()
    }

    /// Whether controller `i` can infer the global mode (φᵢ injective).
    pub fn is_globally_equivalent(&self, i: usize) -> Result<bool, AtlasError> {
        let count = *self
            .class_counts
            .get(i)
            .ok_or(AtlasError::IndexOutOfRange { index: i, limit: self.subsystems() })?;
        Ok(count == self.modes())
    }

    pub fn all_globally_equivalent(&self) -> bool {
        self.class_counts.iter().all(|&c| c == self.modes())
    }

    /// Whether `finer` carries at least the mode information of `self`: every
    /// class of `finer` lies inside a class of `self`, for every controller.
    pub fn is_refined_by(&self, finer: &InfoPattern) -> Result<bool, AtlasError> {
        if self.atlas_fingerprint != finer.atlas_fingerprint {
            return Err(AtlasError::AtlasMismatch);
        }
        for (coarse, fine) in self.phi.iter().zip(&finer.phi) {
            let mut image = vec![None; fine.iter().max().map_or(0, |m| m + 1)];
            for (&c, &f) in coarse.iter().zip(fine) {
                match image[f] {
                    None => image[f] = Some(c),
                    Some(prev) if prev != c => return Ok(false),
                    Some(_) => {}
                }
            }
        }
        Ok(true)
    }
}

/// `true` iff `pattern_b` refines `pattern_a`.
pub fn refines(pattern_a: &InfoPattern, pattern_b: &InfoPattern) -> Result<bool, AtlasError> {
    pattern_a.is_refined_by(pattern_b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_one() -> ModeAtlas {
        let q = DMatrix::from_row_slice(
            4,
            4,
            &[-1.0, 0.5, 0.5, 0.0, 0.3, -0.6, 0.0, 0.3, 0.2, 0.2, -0.4, 0.0, 0.0, 1.0, 1.0, -2.0],
        );
        ModeAtlas::new(
            vec![2, 2, 2],
            vec![vec![1, 1, 1], vec![1, 1, 2], vec![1, 2, 2], vec![2, 1, 2]],
            q,
        )
        .unwrap()
    }

    fn section_four() -> ModeAtlas {
        let q = DMatrix::from_fn(4, 4, |r, c| if r == c { -3.0 } else { 1.0 });
        ModeAtlas::new(
            vec![2, 2, 2],
            vec![vec![1, 1, 1], vec![1, 2, 2], vec![2, 1, 2], vec![2, 2, 1]],
            q,
        )
        .unwrap()
    }

    #[test]
    fn example_one_atlas() {
        let atlas = example_one();
        assert_eq!(atlas.modes(), 4);
        assert_eq!(atlas.global_index(&[1, 1, 2]), Some(1));
        assert_eq!(atlas.project_mode(2, 1).unwrap(), 2);
    }

    #[test]
    fn single_mode_atlas() {
        let atlas = ModeAtlas::new(vec![1], vec![vec![1]], DMatrix::zeros(1, 1)).unwrap();
        assert_eq!(atlas.modes(), 1);
        assert_eq!(atlas.project_mode(0, 0).unwrap(), 1);
    }

    #[test]
    fn product_atlas_inverts_lexicographic_encoding() {
        let mut vectors = Vec::new();
        for a in 1..=2 {
            for b in 1..=2 {
                vectors.push(vec![a, b]);
            }
        }
        let q = DMatrix::from_fn(4, 4, |r, c| if r == c { -3.0 } else { 1.0 });
        let atlas = ModeAtlas::new(vec![2, 2], vectors, q).unwrap();
        assert_eq!(atlas.modes(), 4);
        for mu in 0..4 {
            assert_eq!(atlas.project_mode(mu, 0).unwrap(), mu / 2 + 1);
            assert_eq!(atlas.project_mode(mu, 1).unwrap(), mu % 2 + 1);
        }
        assert!(matches!(atlas.project_mode(4, 0), Err(AtlasError::IndexOutOfRange { .. })));
        assert!(matches!(atlas.project_mode(0, 2), Err(AtlasError::IndexOutOfRange { .. })));
    }

    #[test]
    fn atlas_rejections() {
        let q = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]);
        assert!(matches!(
            ModeAtlas::new(vec![2], vec![vec![1], vec![1]], q.clone()),
            Err(AtlasError::DuplicateModeVector { index: 2, first: 1 })
        ));
        assert!(matches!(
            ModeAtlas::new(vec![2], vec![vec![1], vec![3]], q.clone()),
            Err(AtlasError::LocalModeOutOfRange { .. })
        ));
        assert!(matches!(
            ModeAtlas::new(vec![3], vec![vec![1], vec![2]], q.clone()),
            Err(AtlasError::UnusedLocalMode { subsystem: 1, value: 3 })
        ));
        let bad_sum = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -0.5]);
        assert!(matches!(
            ModeAtlas::new(vec![2], vec![vec![1], vec![2]], bad_sum),
            Err(AtlasError::GeneratorRowSumNonzero { row: 2, .. })
        ));
        let negative = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 1.0, -1.0]);
        assert!(matches!(
            ModeAtlas::new(vec![2], vec![vec![1], vec![2]], negative),
            Err(AtlasError::NegativeOffDiagonal { row: 1, col: 2, .. })
        ));
    }

    #[test]
    fn example_one_phi() {
        let atlas = example_one();
        let p = InfoPattern::new(&atlas, &[vec![1, 1, 0], vec![0, 1, 0], vec![0, 1, 1]]).unwrap();
        assert_eq!(p.phi(0), &[0, 0, 1, 2]);
        assert_eq!(p.class_count(0), 3);
    }

    #[test]
    fn identity_and_all_ones_patterns() {
        let atlas = example_one();
        let local = InfoPattern::local(&atlas);
        for i in 0..3 {
            assert_eq!(local.class_count(i), 2);
            for mu in 0..4 {
                let first_local = atlas.project_mode(0, i).unwrap();
                let same = atlas.project_mode(mu, i).unwrap() == first_local;
                assert_eq!(local.class_of(i, mu) == local.class_of(i, 0), same);
            }
        }
        let global = InfoPattern::global(&atlas);
        for i in 0..3 {
            assert_eq!(global.phi(i), &[0, 1, 2, 3]);
            assert!(global.is_globally_equivalent(i).unwrap());
        }
    }

    #[test]
    fn pattern_rejections() {
        let atlas = example_one();
        assert!(matches!(
            InfoPattern::new(&atlas, &[vec![1, 2, 0], vec![0, 1, 0], vec![0, 0, 1]]),
            Err(AtlasError::NonBinaryEntry { row: 1, col: 2, value: 2 })
        ));
        assert!(matches!(
            InfoPattern::new(&atlas, &[vec![1, 0, 0], vec![0, 0, 1], vec![0, 0, 1]]),
            Err(AtlasError::MissingSelfMode { subsystem: 2 })
        ));
    }

    #[test]
    fn section_four_equivalence() {
        let atlas = section_four();
        let c4 = InfoPattern::new(&atlas, &[vec![1, 1, 0], vec![0, 1, 1], vec![0, 1, 1]]).unwrap();
        assert!(c4.is_globally_equivalent(2).unwrap());
        assert!(c4.all_globally_equivalent());
        let local = InfoPattern::local(&atlas);
        assert!(!local.is_globally_equivalent(2).unwrap());
        assert_eq!(local.class_count(2), 2);
        assert!(local.is_globally_equivalent(3).is_err());
    }

    #[test]
    fn refinement_chain_and_mismatch() {
        let atlas = section_four();
        let chain = crate::reference::sweep_chain();
        let patterns: Vec<_> = chain.iter().map(|c| InfoPattern::new(&atlas, c).unwrap()).collect();
        for w in patterns.windows(2) {
            assert!(refines(&w[0], &w[1]).unwrap());
        }
        assert!(refines(&patterns[0], &patterns[4]).unwrap());
        assert!(refines(&patterns[2], &patterns[2]).unwrap());
        assert!(!refines(&patterns[4], &patterns[0]).unwrap());
        let other = InfoPattern::local(&example_one());
        assert_eq!(refines(&patterns[0], &other), Err(AtlasError::AtlasMismatch));
    }
}
