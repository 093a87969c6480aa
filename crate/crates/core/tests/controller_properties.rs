use std::collections::BTreeMap;
use std::sync::OnceLock;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stlcbf::controller::{agent_constraint, load_share, ControlError, solve_agent_qp, team_control, Team};
use stlcbf::scenario::{build_team, construct, simulate, ScenarioConfig};
use stlcbf::sim::TrajectoryLog;

struct Demo {
    team: Team,
    log: TrajectoryLog,
}

fn demo() -> &'static Demo {
    static DEMO: OnceLock<Demo> = OnceLock::new();
    DEMO.get_or_init(|| {
        let cfg = ScenarioConfig::demo();
        let doc = construct(&cfg).unwrap();
        let log = simulate(&cfg, &doc, None, None).unwrap().log;
        Demo {
            team: build_team(&cfg, &doc).unwrap(),
            log,
        }
    })
}

fn demo_team() -> &'static Team {
    &demo().team
}

/// A logged state of the demo run, jittered by up to `spread`, and its time.
fn near_trajectory(rng: &mut ChaCha8Rng, spread: f64) -> (BTreeMap<usize, Vec<f64>>, f64) {
    let log = &demo().log;
    let row = &log.rows[rng.random_range(0..log.rows.len() - 1)];
    let mut off = 0;
    let mut states = BTreeMap::new();
    for &(id, d) in &log.agents {
        let x: Vec<f64> = row.state[off..off + d].iter().map(|v| v + rng.random_range(-spread..spread)).collect();
        states.insert(id, x);
        off += d;
    }
    (states, row.t)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Initial states jittered by up to `spread` per component.
fn jittered(rng: &mut ChaCha8Rng, spread: f64) -> BTreeMap<usize, Vec<f64>> {
    let base = ScenarioConfig::demo().initial_states();
    base.into_iter()
        .map(|(id, x)| (id, x.iter().map(|v| v + rng.random_range(-spread..spread)).collect()))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn qp_solution_has_minimum_norm(
        a in prop::collection::vec(-3.0..3.0f64, 1..5),
        rhs in -5.0..5.0f64,
        v in prop::collection::vec(-10.0..10.0f64, 4),
    ) {
        prop_assume!(norm(&a) > 1e-6);
        let u = solve_agent_qp(&a, rhs).unwrap();
        prop_assert!(dot(&a, &u) >= rhs - 1e-9);
        let v = &v[..a.len()];
        if dot(&a, v) >= rhs {
            prop_assert!(norm(&u) <= norm(v) + 1e-12);
        }
    }

    #[test]
    fn block_norm_inflation_dominates_full_gradient(
        blocks in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 1..4), 1..6),
    ) {
        let n_bar: usize = blocks.iter().map(Vec::len).sum();
        let max_dim = blocks.iter().map(Vec::len).max().unwrap();
        let n_hat = ((n_bar * max_dim) as f64).sqrt();
        let full: Vec<f64> = blocks.iter().flatten().copied().collect();
        let lhs: f64 = blocks.iter().map(|b| norm(b)).sum::<f64>() * n_hat;
        prop_assert!(lhs >= norm(&full) * (n_bar as f64).sqrt() * (1.0 - 1e-12));
        let shares = load_share(&blocks.iter().map(|b| norm(b)).collect::<Vec<_>>());
        if norm(&full) > 1e-12 {
            prop_assert!((shares.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}

#[test]
fn agent_constraints_aggregate_to_the_clique_condition() {
    let team = demo_team();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let max_dim = team.max_agent_dim();
    let mut checked = 0;
    for _ in 0..300 {
        let states = jittered(&mut rng, 1.0);
        for clique in &team.cliques {
            let t = rng.random_range(0.0..clique.barrier.horizon());
            let e = clique.barrier.gradients(&clique.stack(&states), t).unwrap();
            let mut lhs = 0.0;
            for &m in &clique.members {
                let agent = team.agent(m);
                let con = agent_constraint(clique, agent, &states, t, max_dim).unwrap();
                let Some(u) = solve_agent_qp(&con.a, con.rhs) else { continue };
                // single integrators with zero drift: the state rate from v_i is u itself
                lhs += dot(&con.grad_block, &u);
            }
            let n_bar = clique.layout.total_dim() as f64;
            let rhs = norm(&e.grad_x) * n_bar.sqrt() * clique.coupling_bound - (e.dbdt + clique.kappa * e.value);
            assert!(lhs >= rhs - 1e-9 * (1.0 + rhs.abs()), "{lhs} < {rhs}");
            checked += 1;
        }
    }
    assert!(checked > 500);
}

#[test]
fn inputs_depend_only_on_the_own_clique() {
    let team = demo_team();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut compared = 0;
    for _ in 0..200 {
        let (states, t) = near_trajectory(&mut rng, 0.05);
        // far outside the safe set a gradient block can vanish and the QP reports infeasibility
        let Ok(base) = team_control(team, &states, t) else { continue };
        compared += 1;
        for clique in &team.cliques {
            let mut other = states.clone();
            for (id, x) in other.iter_mut() {
                if !clique.members.contains(id) {
                    x.iter_mut().for_each(|v| *v += rng.random_range(-3.0..3.0));
                }
            }
            match team_control(team, &other, t) {
                Ok(moved) => {
                    for m in &clique.members {
                        assert_eq!(base.agents[m].input, moved.agents[m].input);
                    }
                }
                // only a failure inside another clique is acceptable
                Err(ControlError::Infeasible { agent, .. }) => assert!(!clique.members.contains(&agent)),
                Err(e) => panic!("{e}"),
            }
        }
    }
    assert!(compared > 180, "{compared}");
}

#[test]
fn doubling_the_coupling_bound_never_shrinks_active_inputs() {
    let team = demo_team();
    let mut doubled = team.clone();
    doubled.cliques.iter_mut().for_each(|c| c.coupling_bound *= 2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut active = 0;
    for _ in 0..300 {
        let (states, t) = near_trajectory(&mut rng, 0.05);
        let (Ok(a), Ok(b)) = (team_control(team, &states, t), team_control(&doubled, &states, t)) else {
            continue;
        };
        for (id, ctrl) in &a.agents {
            if norm(&ctrl.input) > 0.0 {
                active += 1;
                assert!(norm(&b.agents[id].input) >= norm(&ctrl.input));
            }
        }
    }
    assert!(active > 300, "{active}");
}

#[test]
fn inputs_are_zero_after_the_horizon() {
    let team = demo_team();
    let states = ScenarioConfig::demo().initial_states();
    let out = team_control(team, &states, team.horizon()).unwrap();
    assert!(out.agents.values().all(|a| a.input.iter().all(|&v| v == 0.0)));
    assert!(out.barrier_values.values().all(Option::is_none));
}
