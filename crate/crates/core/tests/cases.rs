mod common;

use ccopf::{
    build_uncertainty, out_of_sample_confidence, run_dc_opf, run_experiment_on, run_sa_is,
    solve_1d_synthetic, DispatchModel, ExperimentConfig, FeasibilityPolytope, GaussianSpec, Method,
    ScenarioCount,
};
use nalgebra::{DMatrix, DVector};
use std::path::PathBuf;

fn case_path(file: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../cases")
        .join(file)
}

fn load(file: &str) -> DispatchModel {
    DispatchModel::load(case_path(file)).unwrap()
}

const THREE_BUS: &str = "\
function mpc = three_bus
mpc.baseMVA = 100;
mpc.bus = [
    1  3  0;
    2  2  0;
    3  1  80;
];
mpc.gen = [
    1  0  0  0  0  1  100  1  200  0;
    2  0  0  0  0  1  100  1  50   0;
];
mpc.branch = [
    1  2  0  0.1  0  0  0  0  0  0  1;
    2  3  0  0.1  0  0  0  0  0  0  1;
    1  3  0  0.1  0  0  0  0  0  0  1;
];
mpc.gencost = [
    2  0  0  2  30  0;
    2  0  0  2  10  0;
];
";

#[test]
fn ieee30_shape() {
    let model = load("case_ieee30.m");
    assert_eq!(model.case.n_buses(), 30);
    assert_eq!(model.case.n_branches(), 41);
    assert_eq!(model.case.generators.len(), 6);
    assert_eq!(model.n_controls(), 5);
}

// Without binding line limits the nominal optimum is merit order: the
// cheapest units cover the load. Reference values are load times price.
#[test]
fn nominal_costs_follow_merit_order() {
    for (file, expected) in [
        ("case_ieee30.m", 283.4 * 20.0),
        ("case57.m", 25016.0),
        ("case118.m", 84840.0),
    ] {
        let sol = run_dc_opf(&load(file)).unwrap();
        assert!(sol.is_optimal(), "{file}");
        let cost = sol.objective.unwrap();
        assert!(
            (cost - expected).abs() <= 1e-6 * expected,
            "{file}: {cost} vs {expected}"
        );
    }
}

#[test]
fn nominal_dispatch_is_inside_polytope() {
    for file in ["case_ieee30.m", "case57.m", "case118.m"] {
        let model = load(file);
        let sol = run_dc_opf(&model).unwrap();
        let p = DVector::from_vec(sol.injections_pu.clone());
        assert!(model.polytope.contains(&p, 1e-7), "{file}");
        assert!(p.sum().abs() < 1e-9, "{file}: injections do not balance");
    }
}

#[test]
fn tightened_dispatch_costs_at_least_nominal() {
    let model = load("case_ieee30.m");
    let g = build_uncertainty(&model.case, 0.07).unwrap();
    let nominal = run_dc_opf(&model).unwrap().objective.unwrap();
    for seed in 0..5 {
        let sol = run_sa_is(&model, &g, 0.05, 200, seed).unwrap();
        assert!(sol.objective.unwrap() >= nominal - 1e-9);
    }
}

#[test]
fn load_of_fifty_mw_has_sigma_three_and_a_half() {
    let text = THREE_BUS.replace("3  1  80;", "3  1  50;");
    let model = DispatchModel::from_text(&text).unwrap();
    let g = build_uncertainty(&model.case, 0.07).unwrap();
    let sigma_mw = g.cov[(2, 2)].sqrt() * model.case.base_mva;
    assert!((sigma_mw - 3.5).abs() < 1e-12);
    assert_eq!(g.cov.row(0).sum(), 0.0);
    assert_eq!(g.cov.column(0).sum(), 0.0);
}

#[test]
fn three_bus_dispatches_cheap_unit_first() {
    let model = DispatchModel::from_text(THREE_BUS).unwrap();
    let sol = run_dc_opf(&model).unwrap();
    assert_eq!(sol.setpoints_mw.len(), 1);
    assert!((sol.setpoints_mw[0] - 50.0).abs() < 1e-9);
    assert!((sol.slack_mw.unwrap() - 30.0).abs() < 1e-9);
    assert!((sol.objective.unwrap() - 1400.0).abs() < 1e-9);
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// Plain SA gets more conservative with more scenarios and eventually passes
// the exact optimum.
#[test]
fn plain_sa_median_decreases_with_scenarios() {
    let x_star = -common::inverse_sf(0.05);
    let medians: Vec<f64> = [10, 100, 1000, 10_000]
        .iter()
        .map(|&n| {
            median(
                (0..50)
                    .map(|seed| {
                        solve_1d_synthetic(0.0, 0.05, Method::Sa, n, seed)
                            .unwrap()
                            .x_hat
                    })
                    .collect(),
            )
        })
        .collect();
    assert!(medians.windows(2).all(|w| w[1] < w[0]), "{medians:?}");
    assert!(medians[0] > x_star);
    assert!(medians[3] < x_star);
}

#[test]
fn one_dim_oracle_value() {
    let r = solve_1d_synthetic(0.0, 0.05, Method::SaIs, 0, 1).unwrap();
    assert!((r.x_star - -1.6448536269514726).abs() < 1e-12);
    assert!((r.x_hat - r.x_star).abs() < 1e-12);
}

#[test]
fn confidence_estimator_is_unbiased() {
    // Half-space w^T xi <= 1 in two dimensions with a correlated covariance.
    let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
    let w = [0.6, -0.8];
    let poly = FeasibilityPolytope::new(
        DMatrix::from_row_slice(1, 2, &w),
        DVector::from_element(1, 1.0),
    )
    .unwrap();
    let s2 =
        w[0] * w[0] * cov[(0, 0)] + 2.0 * w[0] * w[1] * cov[(0, 1)] + w[1] * w[1] * cov[(1, 1)];
    let q = common::sf(1.0 / s2.sqrt());
    let g = GaussianSpec::from_covariance(cov).unwrap();
    let n = 100_000;
    let c = out_of_sample_confidence(&DVector::zeros(2), &poly, &g, n, 11).unwrap();
    let tol = 3.0 * (q * (1.0 - q) / n as f64).sqrt();
    assert!(
        (c.value - (1.0 - q)).abs() <= tol,
        "{} vs {}",
        c.value,
        1.0 - q
    );
}

// case118 is left out: it carries no flow ratings, so its 108 injection rows
// need far more than 600 scenarios for joint coverage.
#[test]
fn sa_is_covers_rated_cases() {
    for file in ["case_ieee30.m", "case57.m"] {
        let model = load(file);
        for eta in [0.05, 0.01] {
            let mut config = ExperimentConfig::new(case_path(file), Method::SaIs);
            config.eta = eta;
            config.scenarios = ScenarioCount::Fixed(600);
            config.repetitions = 50;
            config.jobs = 4;
            let report = run_experiment_on(&model, &config).unwrap();
            let conf = report.mean_confidence.unwrap();
            assert!(conf >= 1.0 - eta, "{file} eta {eta}: {conf}");
        }
    }
}

#[test]
fn report_means_are_record_means() {
    let model = load("case_ieee30.m");
    let mut config = ExperimentConfig::new(case_path("case_ieee30.m"), Method::Sa);
    config.repetitions = 7;
    config.scenarios = ScenarioCount::Fixed(50);
    let report = run_experiment_on(&model, &config).unwrap();
    let costs: Vec<f64> = report.records.iter().filter_map(|r| r.cost).collect();
    let mean = costs.iter().sum::<f64>() / costs.len() as f64;
    assert_eq!(report.mean_cost, Some(mean));
    assert_eq!(report.records.len(), 7);
    assert_eq!(report.records[3].seed, config.seed_for(3));
}

#[test]
fn single_repetition_replays_pipeline() {
    let model = load("case_ieee30.m");
    let g = build_uncertainty(&model.case, 0.07).unwrap();
    let mut config = ExperimentConfig::new(case_path("case_ieee30.m"), Method::SaIs);
    config.repetitions = 1;
    config.base_seed = 42;
    let report = run_experiment_on(&model, &config).unwrap();
    let direct = run_sa_is(&model, &g, 0.05, 600, 42).unwrap();
    assert_eq!(report.records[0].cost, direct.objective);
    assert_eq!(report.records[0].setpoints_mw, direct.setpoints_mw);
}
