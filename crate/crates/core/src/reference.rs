//! Desk-scale reference plant and the five-pattern information chain used by
//! the sweep, the examples and the acceptance suite.
//!
//! Three scalar subsystems with two local modes each share the global mode
//! set `{[1,1,1], [1,2,2], [2,1,2], [2,2,1]}`. Per-mode dynamics are drawn
//! from a fixed seed, some open-loop unstable, and rounded to three decimals
//! so the committed JSON copy is exact.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mode_atlas::ModeAtlas;
use crate::model::{CostWeights, LocalModeBlocks, PlantModel, SubsystemData, UncertaintyBudget};

pub const DESK_SEED: u64 = 20_240_611;

/// Global mode vectors of the reference atlas.
pub fn desk_mode_vectors() -> Vec<Vec<usize>> {
    vec![vec![1, 1, 1], vec![1, 2, 2], vec![2, 1, 2], vec![2, 2, 1]]
}

/// `𝒞₁ … 𝒞₅`: local, then progressively more neighbor information, then global.
pub fn sweep_chain() -> Vec<Vec<Vec<i64>>> {
    vec![
        vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]],
        vec![vec![1, 1, 0], vec![0, 1, 0], vec![0, 0, 1]],
        vec![vec![1, 1, 0], vec![0, 1, 1], vec![0, 0, 1]],
        vec![vec![1, 1, 0], vec![0, 1, 1], vec![0, 1, 1]],
        vec![vec![1, 1, 1], vec![1, 1, 1], vec![1, 1, 1]],
    ]
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn s(x: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, x)
}

/// Seeded desk-scale plant.
pub fn desk_model() -> PlantModel {
    desk_model_with_seed(DESK_SEED)
}

pub fn desk_model_with_seed(seed: u64) -> PlantModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vectors = desk_mode_vectors();
    let m = vectors.len();
    let mut q = DMatrix::zeros(m, m);
    for r in 0..m {
        let mut total = 0.0;
        for c in 0..m {
            if r != c {
                let rate = round3(rng.random_range(0.2..1.0));
                q[(r, c)] = rate;
                total += rate;
            }
        }
        q[(r, r)] = -total;
    }
    let atlas = ModeAtlas::new(vec![2, 2, 2], vectors, q).expect("reference atlas is valid");

    let mut draw = |lo: f64, hi: f64| round3(rng.random_range(lo..hi));
    let subsystems = (0..3)
        .map(|_| SubsystemData {
            modes: (0..2)
                .map(|_| LocalModeBlocks {
                    a: s(draw(-1.0, 1.0)),
                    b: s(draw(0.5, 1.5)),
                    e: s(draw(0.3, 0.5)),
                    l: s(draw(0.3, 0.5)),
                    h: s(draw(0.3, 0.5)),
                })
                .collect(),
        })
        .collect();
    let budgets = vec![UncertaintyBudget { s_bar: s(1.0), s_tilde: s(1.0) }; 3];
    let weights = CostWeights { r: vec![vec![s(1.0); 3]; m], g: vec![vec![s(1.0); 3]; m] };
    PlantModel {
        atlas,
        subsystems,
        budgets,
        weights,
        x0: DVector::from_element(3, 1.0),
        initial_distribution: DVector::from_element(m, 1.0 / m as f64),
    }
}
