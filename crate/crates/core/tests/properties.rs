mod common;

use ccopf::lp::{self, LinearProgram, LpStatus};
use ccopf::margins::margins_at_quantile;
use ccopf::{
    build_matrices, compute_margins, contains_inner, reduce_scenarios, sample_size_cc,
    sample_size_filtered, sample_size_is, tightened_polytope, Branch, Bus, BusKind,
    FeasibilityPolytope, GaussianSpec, Generator, GridCase, MixtureSampler, ScenarioSet,
};
use common::CollapseInstance;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Connected graph: a random spanning tree plus extra edges.
fn random_grid(seed: u64) -> GridCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=8);
    let mut branches = Vec::new();
    for i in 1..n {
        let j = rng.random_range(0..i);
        branches.push((j, i));
    }
    for _ in 0..rng.random_range(0..=n) {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            branches.push((a, b));
        }
    }
    let slack = rng.random_range(0..n);
    GridCase {
        name: "random".into(),
        base_mva: 100.0,
        buses: (0..n)
            .map(|i| Bus {
                id: i as u32 + 1,
                kind: if i == slack {
                    BusKind::Slack
                } else {
                    BusKind::Load
                },
                demand_mw: 0.0,
                injection_mw: 0.0,
            })
            .collect(),
        branches: branches
            .into_iter()
            .map(|(from, to)| Branch {
                from,
                to,
                reactance: rng.random_range(0.01..1.0),
                rating_mva: 0.0,
                angle_limit: None,
            })
            .collect(),
        generators: vec![Generator {
            bus: slack,
            output_mw: 0.0,
            p_min_mw: 0.0,
            p_max_mw: 100.0,
            cost: 1.0,
        }],
    }
}

fn random_gaussian(rng: &mut ChaCha8Rng, n: usize) -> GaussianSpec {
    let a = normal_matrix(rng, n, n);
    GaussianSpec::from_covariance(&a * a.transpose() * 0.5 + DMatrix::identity(n, n) * 0.1).unwrap()
}

/// Minimum of `c^T x` over `{A x <= r, lo <= x <= hi}` by enumerating every
/// vertex; `None` when no vertex is feasible.
fn brute_force_lp(c: &[f64], rows: &[(Vec<f64>, f64)], lo: f64, hi: f64) -> Option<f64> {
    let n = c.len();
    let mut all: Vec<(Vec<f64>, f64)> = rows.to_vec();
    for v in 0..n {
        let mut e = vec![0.0; n];
        e[v] = 1.0;
        all.push((e.clone(), hi));
        e[v] = -1.0;
        all.push((e, -lo));
    }
    let m = all.len();
    let mut best: Option<f64> = None;
    let mut idx: Vec<usize> = (0..n).collect();
    loop {
        let a = DMatrix::from_fn(n, n, |r, k| all[idx[r]].0[k]);
        let b = DVector::from_fn(n, |r, _| all[idx[r]].1);
        if let Some(x) = a.lu().solve(&b) {
            let feasible = all.iter().all(|(row, rhs)| {
                row.iter().zip(x.iter()).map(|(p, q)| p * q).sum::<f64>() <= rhs + 1e-9
            });
            if feasible && x.iter().all(|v| v.is_finite()) {
                let obj: f64 = c.iter().zip(x.iter()).map(|(p, q)| p * q).sum();
                best = Some(best.map_or(obj, |b: f64| b.min(obj)));
            }
        }
        // Next n-subset of 0..m in lexicographic order.
        let mut k = n;
        loop {
            if k == 0 {
                return best;
            }
            k -= 1;
            if idx[k] < m - n + k {
                idx[k] += 1;
                for t in k + 1..n {
                    idx[t] = idx[t - 1] + 1;
                }
                break;
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn laplacian_identities(seed in any::<u64>()) {
        let case = random_grid(seed);
        let mat = build_matrices(&case).unwrap();
        let n = case.n_buses();
        let ones = DVector::from_element(n, 1.0);
        prop_assert!((&mat.laplacian * ones).amax() < 1e-9);
        let b = &mat.laplacian;
        let bp = &mat.laplacian_pinv;
        prop_assert!((b * bp * b - b).amax() < 1e-8 * b.amax().max(1.0));
        prop_assert!((bp * b * bp - bp).amax() < 1e-8 * bp.amax().max(1.0));
        for r in 0..case.n_branches() {
            let row = mat.incidence.row(r);
            prop_assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
            prop_assert_eq!(row.iter().filter(|&&v| v == -1.0).count(), 1);
        }
    }

    /// `C p` is balanced, and flows of `C p` equal flows of `p` with the slack
    /// entry replaced by the balancing injection.
    #[test]
    fn slack_compensation_balances(seed in any::<u64>()) {
        let case = random_grid(seed);
        let mat = build_matrices(&case).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let n = case.n_buses();
        let p = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let cp = &mat.slack_comp * &p;
        prop_assert!(cp.sum().abs() < 1e-12);
        let mut balanced = p.clone();
        balanced[mat.slack] = -(p.sum() - p[mat.slack]);
        let f1 = &mat.incidence * &mat.laplacian_pinv * &cp;
        let f2 = &mat.incidence * &mat.laplacian_pinv * &balanced;
        prop_assert!((f1 - f2).amax() < 1e-9);
        // Balanced injections are reproduced by B B^+.
        let back = &mat.laplacian * &mat.laplacian_pinv * &balanced;
        prop_assert!((back - &balanced).amax() < 1e-8);
    }

    /// Any scenario in the inner region keeps a point of the tightened
    /// polytope inside the original one.
    #[test]
    fn inner_region_never_violates(seed in any::<u64>(), eta in 0.01f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=5);
        let j = rng.random_range(1..=8);
        let g = random_gaussian(&mut rng, n);
        let w = normal_matrix(&mut rng, j, n);
        let x = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let probe = FeasibilityPolytope::new(w.clone(), DVector::zeros(j)).unwrap();
        let m = compute_margins(&probe, &g, eta).unwrap();
        // Offsets that put x inside the tightened polytope with random slack.
        let b = &w * &x + &m.delta + DVector::from_fn(j, |_, _| rng.random_range(0.0..0.3));
        let poly = FeasibilityPolytope::new(w, b).unwrap();
        let m = compute_margins(&poly, &g, eta).unwrap();
        prop_assert!(tightened_polytope(&poly, &m).contains(&x, 1e-12));
        for _ in 0..200 {
            let xi = g.sample(&mut rng);
            if contains_inner(&m, &poly, &xi) {
                prop_assert!(poly.contains(&(&x + &xi), 1e-9));
            }
        }
    }

    #[test]
    fn margins_scale_with_spread(seed in any::<u64>(), scale in 0.1f64..10.0, z in 0.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=4);
        let j = rng.random_range(1..=6);
        let g = random_gaussian(&mut rng, n);
        let g2 = GaussianSpec::from_covariance(&g.cov * (scale * scale)).unwrap();
        let poly = FeasibilityPolytope::new(
            normal_matrix(&mut rng, j, n),
            DVector::from_element(j, 1.0),
        ).unwrap();
        let m1 = margins_at_quantile(&poly, &g, z).unwrap();
        let m2 = margins_at_quantile(&poly, &g2, z).unwrap();
        for i in 0..j {
            prop_assert!((m2.delta[i] - scale * m1.delta[i]).abs() <= 1e-9 * (1.0 + m2.delta[i]));
        }
    }

    #[test]
    fn more_scenarios_never_loosen(seed in any::<u64>()) {
        let inst = CollapseInstance::random(seed);
        let r_all = reduce_scenarios(&inst.poly, &inst.scen);
        let mut fewer = inst.scen.clone();
        let keep = inst.scen.len().div_ceil(2);
        fewer.scenarios = inst.scen.scenarios.rows(0, keep).into_owned();
        let r_few = reduce_scenarios(&inst.poly, &fewer);
        for i in 0..inst.poly.n_rows() {
            prop_assert!(r_all[i] <= r_few[i]);
        }
        prop_assert_eq!(
            reduce_scenarios(&inst.poly, &ScenarioSet::empty(inst.poly.dim())),
            inst.poly.offsets.clone()
        );
    }

    #[test]
    fn collapse_matches_stacking(seed in any::<u64>()) {
        let inst = CollapseInstance::random(seed);
        let a = inst.reduced();
        let b = inst.stacked();
        prop_assert_eq!(a.status, b.status);
        if a.status == LpStatus::Optimal {
            prop_assert!((a.objective - b.objective).abs() <= 1e-9 * a.objective.abs().max(1.0));
        }
    }

    #[test]
    fn simplex_matches_vertex_enumeration(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=3);
        let m = rng.random_range(1..=6);
        let c: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let rows: Vec<(Vec<f64>, f64)> = (0..m)
            .map(|_| {
                let a: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                (a, rng.random_range(-1.0..2.0))
            })
            .collect();
        let mut lp = LinearProgram::new(c.clone());
        for v in 0..n {
            lp.set_bounds(v, -2.0, 2.0);
        }
        for (k, (a, r)) in rows.iter().enumerate() {
            lp.add_row(a.clone(), *r, format!("{k}"));
        }
        let sol = lp::solve(&lp).unwrap();
        match brute_force_lp(&c, &rows, -2.0, 2.0) {
            Some(best) => {
                prop_assert_eq!(sol.status, LpStatus::Optimal);
                prop_assert!((sol.objective - best).abs() < 1e-7, "{} vs {}", sol.objective, best);
            }
            None => prop_assert_eq!(sol.status, LpStatus::Infeasible),
        }
    }

    #[test]
    fn mixture_invariants(seed in any::<u64>(), eta in 0.001f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=5);
        let j = rng.random_range(1..=8);
        let g = random_gaussian(&mut rng, n);
        let poly = FeasibilityPolytope::new(
            normal_matrix(&mut rng, j, n),
            DVector::from_element(j, 1.0),
        ).unwrap();
        let m = compute_margins(&poly, &g, eta).unwrap();
        let s = MixtureSampler::new(&poly, &m, &g).unwrap();
        let total: f64 = s.weights().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(s.bound() >= 1.0 - 1e-12 && s.bound() <= s.n_components() as f64 + 1e-12);
        for _ in 0..100 {
            let (xi, _) = s.sample_mixture(&mut rng);
            prop_assert!(!contains_inner(&m, &poly, &xi));
        }
        let a = ScenarioSet::mixture(&s, n, 20, seed);
        let b = ScenarioSet::mixture(&s, n, 20, seed);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn sample_size_orderings(
        eta in 0.001f64..0.5,
        delta in 1e-9f64..0.9,
        d in 1usize..60,
        pi in 0.0f64..0.99,
        m in 1.0f64..200.0,
    ) {
        let cc = sample_size_cc(eta, delta, d).unwrap();
        prop_assert_eq!(sample_size_filtered(eta, delta, d, 0.0).unwrap(), cc);
        let f = sample_size_filtered(eta, delta, d, pi).unwrap();
        prop_assert_eq!(sample_size_is(eta, delta, d, pi, 1.0).unwrap(), f);
        prop_assert!(sample_size_is(eta, delta, d, pi, m).unwrap() >= f);
        prop_assert!(sample_size_cc(eta, delta, d + 1).unwrap() > cc);
        prop_assert!(sample_size_cc((eta * 1.5).min(0.99), delta, d).unwrap() <= cc);
    }
}
