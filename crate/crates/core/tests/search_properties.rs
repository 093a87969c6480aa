use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stlcbf::barrier::GammaParams;
use stlcbf::scenario::ScenarioConfig;
use stlcbf::search::{feasibility_check, maximize_r, AscentOptions, SearchConfig, SearchResult};
use stlcbf::stl::{normalize, parse, OperatorUnit, StateLayout};

struct Case {
    units: Vec<OperatorUnit>,
    x0: Vec<f64>,
    cfg: SearchConfig,
    result: SearchResult,
}

fn demo_cases() -> &'static Vec<Case> {
    static CASES: OnceLock<Vec<Case>> = OnceLock::new();
    CASES.get_or_init(|| {
        let cfg = ScenarioConfig::demo();
        let formulas = cfg.formulas().unwrap();
        cfg.cliques
            .iter()
            .map(|c| {
                let units = normalize(&formulas[&c.id]);
                let x0 = cfg.stacked_x0(c);
                let result = maximize_r(&units, &x0, &cfg.search).unwrap();
                Case {
                    units,
                    x0,
                    cfg: cfg.search.clone(),
                    result,
                }
            })
            .collect()
    })
}

fn gammas_at(case: &Case, r: f64) -> Vec<GammaParams> {
    let cb = case.result.barrier.as_ref().unwrap();
    cb.terms()
        .iter()
        .map(|t| {
            if t.deadline() <= 0.0 {
                GammaParams::new(r, r + 1.0, 0.0, t.gamma.t_star).unwrap()
            } else {
                GammaParams::reaching(t.gamma.gamma0, t.gamma.gamma_inf, r, t.gamma.t_star).unwrap()
            }
        })
        .collect()
}

#[test]
fn demo_cliques_are_feasible_with_positive_r() {
    for case in demo_cases() {
        assert!(case.result.feasible);
        assert!(case.result.r_star > 0.0);
        assert!(case.result.kappa >= case.cfg.kappa_min && case.result.kappa <= case.cfg.kappa_max);
    }
}

#[test]
fn returned_funnels_satisfy_placement_rules() {
    for case in demo_cases() {
        let cb = case.result.barrier.as_ref().unwrap();
        let gammas: Vec<GammaParams> = cb.terms().iter().map(|t| t.gamma).collect();
        let (_, report) = feasibility_check(
            &case.units,
            &case.x0,
            case.result.r_star,
            case.result.eta,
            cb.bound_radius(),
            &gammas,
            case.result.delta,
            &AscentOptions::default(),
        )
        .expect("placement rules hold");
        assert!(report.feasible, "{report:?}");
        for (t, x0h) in cb.terms().iter().zip(case.units.iter().map(|u| u.predicate.value(&case.x0))) {
            if t.deadline() > 0.0 {
                assert!(t.gamma.gamma0 < x0h);
                assert!(t.gamma.gamma_inf > t.gamma.gamma0.max(case.result.r_star));
            }
        }
    }
}

#[test]
fn lower_levels_stay_feasible_with_the_same_choices() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in demo_cases() {
        let r_star = case.result.r_star;
        let radius = case.result.barrier.as_ref().unwrap().bound_radius();
        for _ in 0..3 {
            let r = rng.random_range(0.0..r_star).max(1e-6);
            let (_, report) = feasibility_check(
                &case.units,
                &case.x0,
                r,
                case.result.eta,
                radius,
                &gammas_at(case, r),
                case.result.delta,
                &AscentOptions::default(),
            )
            .unwrap();
            assert!(report.feasible, "r = {r} < r* = {r_star}: {report:?}");
        }
    }
}

#[test]
fn witnesses_are_stationary() {
    for case in demo_cases() {
        let report = case.result.diagnostics.report.as_ref().unwrap();
        assert!(!report.witness_grad_norms.is_empty());
        for g in &report.witness_grad_norms {
            assert!(*g < 1e-6, "{g}");
        }
        for w in &report.bound_weights {
            assert!(*w < 1e-6);
        }
    }
}

#[test]
fn search_is_deterministic() {
    let case = &demo_cases()[1];
    let again = maximize_r(&case.units, &case.x0, &case.cfg).unwrap();
    assert_eq!(again, case.result);
}

#[test]
fn restart_seed_does_not_break_feasibility() {
    let case = &demo_cases()[1];
    let mut cfg = case.cfg.clone();
    cfg.seed = 12345;
    let other = maximize_r(&case.units, &case.x0, &cfg).unwrap();
    assert!(other.feasible);
}

#[test]
fn contradictory_literals_are_infeasible() {
    let layout = StateLayout::new(&[(1, 1)]).unwrap();
    let f = parse("G[0,5](x1[0] >= 1 & x1[0] <= -1)", &layout).unwrap();
    let res = maximize_r(&normalize(&f), &[0.0], &SearchConfig::default()).unwrap();
    assert!(!res.feasible);
}

#[test]
fn reachable_target_gives_r_near_its_half_width() {
    // single integrator must be inside |x - 3| <= 1 on [2, 4]; best level is just under 1
    let layout = StateLayout::new(&[(1, 1)]).unwrap();
    let f = parse("G[2,4](x1[0] >= 2 & x1[0] <= 4)", &layout).unwrap();
    let res = maximize_r(&normalize(&f), &[0.0], &SearchConfig::default()).unwrap();
    assert!(res.feasible);
    assert!(res.r_star > 0.5 && res.r_star < 1.0, "{}", res.r_star);
}
