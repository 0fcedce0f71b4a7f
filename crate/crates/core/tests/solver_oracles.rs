use nalgebra::DMatrix;
use nmdc::lmi::{
    BlockBuilder, ConeConstraint, RankConstraint, RankLmiProblem, Sense, SlotKind, SlotShape, VariableLayout,
};
use nmdc::solver::{minimize_gamma, solve_feasibility, SolveStatus, SolverConfig, SolverError};

fn one(x: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, x)
}

/// `x ≥ c` or `x ≤ c` on the scalar slot `handle`.
fn bound(problem: &mut RankLmiProblem, handle: usize, c: f64, lower: bool) {
    let mut b = BlockBuilder::new(&problem.layout, &[1]);
    b.constant(0, 0, &one(-c)).scalar(0, 0, handle, &one(1.0));
    let block = b.build();
    let sense = if lower { Sense::Positive } else { Sense::Negative };
    problem.cones.push(ConeConstraint { label: format!("bound {c}"), block, sense, margin: 0.0 });
}

fn scalars(n: usize) -> RankLmiProblem {
    let mut layout = VariableLayout::new();
    for k in 0..n {
        layout.push(SlotKind::Tau, k, 0, SlotShape::Scalar);
    }
    RankLmiProblem::new(layout)
}

/// `[a 1; 1 b]` PSD of rank one, i.e. `ab = 1` with `a, b > 0`.
fn inverse_curve(a_range: (f64, f64)) -> RankLmiProblem {
    let mut problem = scalars(2);
    bound(&mut problem, 0, a_range.0, true);
    bound(&mut problem, 0, a_range.1, false);
    let mut b = BlockBuilder::new(&problem.layout, &[1, 1]);
    b.scalar(0, 0, 0, &one(1.0)).constant(0, 1, &one(1.0)).scalar(1, 1, 1, &one(1.0));
    let block = b.build();
    problem.ranks.push(RankConstraint { label: "curve".into(), block, max_rank: 1, psd: true });
    problem
}

#[test]
fn interval_lmi_is_feasible() {
    let mut problem = scalars(1);
    bound(&mut problem, 0, 1.0, true);
    bound(&mut problem, 0, 2.0, false);
    let out = solve_feasibility(&problem, &SolverConfig::default()).unwrap();
    assert_eq!(out.status, SolveStatus::Feasible);
    assert!((1.0..=2.0).contains(&out.point[0]), "{}", out.point[0]);
}

#[test]
fn inverse_curve_rank_problem() {
    for range in [(2.0, 2.0), (0.5, 3.0), (4.0, 8.0)] {
        let out = solve_feasibility(&inverse_curve(range), &SolverConfig::default()).unwrap();
        assert_eq!(out.status, SolveStatus::Feasible, "{range:?}");
        let (a, b) = (out.point[0], out.point[1]);
        assert!((a * b - 1.0).abs() <= 1e-6, "{range:?}: a {a} b {b}");
        assert!(a >= range.0 - 1e-9 && a <= range.1 + 1e-9);
    }
}

#[test]
fn contradictory_bounds_are_not_feasible() {
    let mut problem = scalars(1);
    bound(&mut problem, 0, 2.0, true);
    bound(&mut problem, 0, 1.0, false);
    let config = SolverConfig { max_iterations: 2000, ..SolverConfig::default() };
    let out = solve_feasibility(&problem, &config).unwrap();
    assert_ne!(out.status, SolveStatus::Feasible);
}

#[test]
fn infeasible_rank_problem_is_not_feasible() {
    // ab = 1 with a ≥ 2 and b ≥ 2 has no solution.
    let mut problem = inverse_curve((2.0, 10.0));
    bound(&mut problem, 1, 2.0, true);
    let config = SolverConfig { max_iterations: 3000, restarts: 2, ..SolverConfig::default() };
    let out = solve_feasibility(&problem, &config).unwrap();
    assert_ne!(out.status, SolveStatus::Feasible);
}

fn gamma_at_least_five() -> RankLmiProblem {
    let mut layout = VariableLayout::new();
    let g = layout.push(SlotKind::Gamma, 0, 0, SlotShape::Scalar);
    let mut problem = RankLmiProblem::new(layout);
    bound(&mut problem, g, 5.0, true);
    problem.cost = Some(0);
    let mut b = BlockBuilder::new(&problem.layout, &[1]);
    b.constant(0, 0, &one(0.0)).scalar(0, 0, g, &one(-1.0));
    let block = b.build();
    problem.cones.push(ConeConstraint { label: "cap".into(), block, sense: Sense::Positive, margin: 0.0 });
    problem.gamma_cap = Some(1);
    problem
}

#[test]
fn bisection_finds_lower_limit() {
    let config = SolverConfig { bisection_bracket: (0.0, 100.0), ..SolverConfig::default() };
    let (gamma, out) = minimize_gamma(&gamma_at_least_five(), &config).unwrap();
    assert!(out.is_feasible());
    assert!((5.0..=5.0 + 2.0 * config.bisection_tol).contains(&gamma), "{gamma}");
}

#[test]
fn bracket_below_optimum_is_reported() {
    let config = SolverConfig { bisection_bracket: (0.0, 4.0), max_iterations: 2000, ..SolverConfig::default() };
    assert_eq!(minimize_gamma(&gamma_at_least_five(), &config).unwrap_err(), SolverError::BracketInfeasible(4.0));
    let config = SolverConfig { bisection_bracket: (3.0, 3.0), ..SolverConfig::default() };
    assert!(matches!(minimize_gamma(&gamma_at_least_five(), &config), Err(SolverError::BadBracket(..))));
}

#[test]
fn replay_is_deterministic_per_seed() {
    let problem = inverse_curve((0.5, 3.0));
    for seed in [0, 1, 17] {
        let config = SolverConfig { seed, ..SolverConfig::default() };
        let a = solve_feasibility(&problem, &config).unwrap();
        let b = solve_feasibility(&problem, &config).unwrap();
        assert_eq!(a, b);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.point), bits(&b.point));
    }
}
