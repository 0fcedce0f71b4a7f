#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use nmdc::mode_atlas::ModeAtlas;
use nmdc::model::{CostWeights, LocalModeBlocks, PlantModel, SubsystemData, UncertaintyBudget};

pub fn s(x: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, x)
}

/// One scalar subsystem with one local mode per entry of `a`, unit input and
/// uncertainty channels of gain `h`. Modes switch at unit rate.
pub fn scalar_plant(a: &[f64], h: f64) -> PlantModel {
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

/// Zero gains for every class of a single-subsystem scalar plant.
pub fn zero_gains(classes: usize) -> Vec<Vec<DMatrix<f64>>> {
    vec![vec![s(0.0); classes]]
}
