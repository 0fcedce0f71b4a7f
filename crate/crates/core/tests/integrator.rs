mod common;

use common::{scalar_plant, zero_gains};
use nalgebra::DMatrix;
use nmdc::mode_atlas::InfoPattern;
use nmdc::model::PlantModel;
use nmdc::simulate::{integrate_closed_loop, monte_carlo, ModePath, MonteCarloConfig, UncertaintyKind, UncertaintyRealization};
use nmdc::synthesis::{synthesize_neighboring, SynthesisConfig};

fn x_at_one(model: &PlantModel, path: &ModePath, dt: f64) -> f64 {
    let pattern = InfoPattern::global(&model.atlas);
    let gains = zero_gains(pattern.class_count(0));
    let traj = integrate_closed_loop(model, &gains, &pattern, path, &UncertaintyRealization::none(model), dt).unwrap();
    assert!((traj.times.last().unwrap() - 1.0).abs() < 1e-12);
    traj.final_state()[0]
}

fn one_jump() -> (PlantModel, ModePath) {
    // ẋ = −x on [0, ½), ẋ = −3x on [½, 1]: x(1) = e^{−½ − 3/2} = e⁻².
    let model = scalar_plant(&[-1.0, -3.0], 0.0);
    let path = ModePath { times: vec![0.0, 0.5], modes: vec![0, 1], horizon: 1.0 };
    (model, path)
}

#[test]
fn no_jump_decay() {
    let model = scalar_plant(&[-2.0], 0.0);
    let x = x_at_one(&model, &ModePath::constant(0, 1.0), 1e-3);
    assert!((x - (-2.0f64).exp()).abs() <= 1e-6, "{x}");
}

#[test]
fn one_jump_decay() {
    let (model, path) = one_jump();
    let x = x_at_one(&model, &path, 1e-3);
    assert!((x - (-2.0f64).exp()).abs() <= 1e-6, "{x}");
}

#[test]
fn jump_off_the_grid_is_resolved() {
    let model = scalar_plant(&[-1.0, -3.0], 0.0);
    let path = ModePath { times: vec![0.0, 0.3337], modes: vec![0, 1], horizon: 1.0 };
    let x = x_at_one(&model, &path, 1e-2);
    let exact = (-0.3337 - 3.0 * (1.0 - 0.3337f64)).exp();
    assert!((x - exact).abs() <= 1e-8, "{x} vs {exact}");
}

fn halving_ratios(model: &PlantModel, path: &ModePath) -> Vec<f64> {
    let errors: Vec<f64> = [0.1, 0.05, 0.025].iter().map(|&dt| (x_at_one(model, path, dt) - (-2.0f64).exp()).abs()).collect();
    errors.windows(2).map(|w| w[0] / w[1]).collect()
}

#[test]
fn fourth_order_convergence() {
    let model = scalar_plant(&[-2.0], 0.0);
    for r in halving_ratios(&model, &ModePath::constant(0, 1.0)) {
        assert!((12.0..=20.0).contains(&r), "{r}");
    }
    let (model, path) = one_jump();
    for r in halving_ratios(&model, &path) {
        assert!((12.0..=20.0).contains(&r), "{r}");
    }
}

#[test]
fn monte_carlo_cost_of_stable_scalar() {
    // ẋ = −2x, x(0) = 1, no input: ∫₀ᵀ x² dt = (1 − e^{−4T})/4.
    let mut model = scalar_plant(&[-2.0], 0.1);
    model.subsystems[0].modes[0].b = DMatrix::zeros(1, 0);
    model.weights.g[0][0] = DMatrix::zeros(0, 0);
    let result = synthesize_neighboring(&model, &InfoPattern::global(&model.atlas), &SynthesisConfig::default()).unwrap();
    let config = MonteCarloConfig { paths: 4, horizon: 5.0, dt: 1e-3, seed: 3, uncertainty: UncertaintyKind::None };
    let report = monte_carlo(&model, &result, &config).unwrap();
    let exact = (1.0 - (-20.0f64).exp()) / 4.0;
    assert!((report.mean_cost - exact).abs() <= 1e-6, "{}", report.mean_cost);
    assert!((report.j_hat - exact).abs() <= 1e-6, "{}", report.j_hat);
    assert!(report.cost_standard_error <= 1e-12);
    assert!(report.j_hat <= result.gamma);
}
