#![allow(dead_code)]

use rand::Rng;
use stlcbf::barrier::{build_barrier, CompositeBarrier, GammaParams};
use stlcbf::stl::{Interval, OperatorUnit, Predicate, SampledSignal, StateLayout, UnitKind};

/// Random concave barrier on `dim` stacked coordinates with `p` task terms.
pub fn random_barrier<R: Rng>(rng: &mut R, dim: usize, p: usize, eta: f64) -> CompositeBarrier {
    let layout = StateLayout::new(&[(1, dim)]).unwrap();
    let mut units = Vec::new();
    let mut gammas = Vec::new();
    for _ in 0..p {
        let predicate = if rng.random_bool(0.5) {
            let c: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            Predicate::affine(c, rng.random_range(-3.0..3.0), &layout)
        } else {
            let a: Vec<Vec<f64>> = (0..dim)
                .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let b: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            Predicate::quad_ball(a, b, rng.random_range(0.5..4.0), &layout)
        };
        let lo = rng.random_range(0.0..8.0);
        let hi = lo + rng.random_range(0.5..6.0);
        let kind = if rng.random_bool(0.5) { UnitKind::Always } else { UnitKind::Eventually };
        let unit = OperatorUnit {
            kind,
            predicate,
            interval: Interval { lo, hi },
        };
        let g0 = rng.random_range(-3.0..0.5);
        let ginf = g0 + rng.random_range(0.1..3.0);
        gammas.push(GammaParams::new(g0, ginf, rng.random_range(0.0..1.5), unit.t_star()).unwrap());
        units.push(unit);
    }
    build_barrier(units, gammas, eta, rng.random_range(5.0..50.0)).unwrap()
}

pub fn random_point<R: Rng>(rng: &mut R, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Fragment AST for the brute-force monitor, kept separate from the library's types.
#[derive(Debug, Clone)]
pub enum Lit {
    /// `Σ c_i x_i + d >= 0` over the stacked state, optionally negated.
    Affine { coeffs: Vec<f64>, offset: f64, negated: bool },
}

#[derive(Debug, Clone)]
pub enum Node {
    State(Vec<Lit>),
    G(f64, f64, Vec<Lit>),
    F(f64, f64, Vec<Lit>),
    U(f64, f64, Vec<Lit>, Vec<Lit>),
    And(Vec<Node>),
}

/// Layout used by the oracle: agent 1 in R², agent 2 in R¹.
pub fn oracle_layout() -> StateLayout {
    StateLayout::new(&[(1, 2), (2, 1)]).unwrap()
}

const COMPONENTS: [&str; 3] = ["x1[0]", "x1[1]", "x2[0]"];

fn lit_text(l: &Lit) -> String {
    let Lit::Affine { coeffs, offset, negated } = l;
    let mut s = String::new();
    for (k, c) in coeffs.iter().enumerate() {
        if k > 0 {
            s.push_str(" + ");
        }
        s.push_str(&format!("{c}*{}", COMPONENTS[k]));
    }
    s.push_str(&format!(" + {offset} >= 0"));
    if *negated {
        format!("!({s})")
    } else {
        format!("({s})")
    }
}

fn conj_text(ls: &[Lit]) -> String {
    ls.iter().map(lit_text).collect::<Vec<_>>().join(" & ")
}

pub fn render(n: &Node) -> String {
    match n {
        Node::State(ls) => conj_text(ls),
        Node::G(a, b, ls) => format!("G[{a},{b}]({})", conj_text(ls)),
        Node::F(a, b, ls) => format!("F[{a},{b}]({})", conj_text(ls)),
        Node::U(a, b, l, r) => format!("({}) U[{a},{b}] ({})", conj_text(l), conj_text(r)),
        Node::And(args) => args.iter().map(render).collect::<Vec<_>>().join(" & "),
    }
}

fn lit_value(l: &Lit, x: &[f64]) -> f64 {
    let Lit::Affine { coeffs, offset, negated } = l;
    let mut acc = 0.0;
    for (c, v) in coeffs.iter().zip(x) {
        acc += c * v;
    }
    let h = acc + offset;
    if *negated {
        -h
    } else {
        h
    }
}

fn conj_value(ls: &[Lit], x: &[f64]) -> f64 {
    let mut m = f64::INFINITY;
    for l in ls {
        m = m.min(lit_value(l, x));
    }
    m
}

/// Samples of `[lo, hi]` by linear scan; the two bracketing samples when none is inside.
fn window_indices(times: &[f64], lo: f64, hi: f64) -> Vec<usize> {
    let end = *times.last().unwrap();
    let eps = 1e-9 * end.abs().max(1.0);
    let inside: Vec<usize> = (0..times.len()).filter(|&i| times[i] >= lo - eps && times[i] <= hi + eps).collect();
    if !inside.is_empty() {
        return inside;
    }
    let below = (0..times.len()).rev().find(|&i| times[i] < lo - eps);
    let above = (0..times.len()).find(|&i| times[i] > hi + eps);
    match (below, above) {
        (Some(b), Some(a)) => vec![b, a],
        (Some(b), None) => vec![b],
        (None, Some(a)) => vec![a],
        (None, None) => unreachable!(),
    }
}

pub fn oracle(n: &Node, times: &[f64], states: &[Vec<f64>], t: f64) -> f64 {
    match n {
        Node::State(ls) => {
            let mut best = 0;
            for i in 0..times.len() {
                if (times[i] - t).abs() < (times[best] - t).abs() {
                    best = i;
                }
            }
            conj_value(ls, &states[best])
        }
        Node::G(a, b, ls) => window_indices(times, t + a, t + b)
            .into_iter()
            .map(|i| conj_value(ls, &states[i]))
            .fold(f64::INFINITY, f64::min),
        Node::F(a, b, ls) => window_indices(times, t + a, t + b)
            .into_iter()
            .map(|i| conj_value(ls, &states[i]))
            .fold(f64::NEG_INFINITY, f64::max),
        Node::U(a, b, l, r) => {
            let w = window_indices(times, t + a, t + b);
            let mut best = f64::NEG_INFINITY;
            for (k, &i) in w.iter().enumerate() {
                let left = w[..=k].iter().map(|&j| conj_value(l, &states[j])).fold(f64::INFINITY, f64::min);
                best = best.max(conj_value(r, &states[i]).min(left));
            }
            best
        }
        Node::And(args) => args.iter().map(|a| oracle(a, times, states, t)).fold(f64::INFINITY, f64::min),
    }
}

fn random_lits<R: Rng>(rng: &mut R) -> Vec<Lit> {
    (0..rng.random_range(1..=3))
        .map(|_| Lit::Affine {
            coeffs: (0..3).map(|_| (rng.random_range(-2.0..2.0f64) * 100.0).round() / 100.0).collect(),
            offset: (rng.random_range(-1.0..1.0f64) * 100.0).round() / 100.0,
            negated: rng.random_bool(0.3),
        })
        .collect()
}

fn random_interval<R: Rng>(rng: &mut R, span: f64) -> (f64, f64) {
    let a = (rng.random_range(0.0..span * 0.7) * 100.0).floor() / 100.0;
    let b = a + (rng.random_range(0.0..(span - a)) * 100.0).floor() / 100.0;
    (a, b.min(span))
}

fn random_temporal<R: Rng>(rng: &mut R, span: f64) -> Node {
    let (a, b) = random_interval(rng, span);
    match rng.random_range(0..4) {
        0 => Node::G(a, b, random_lits(rng)),
        1 => Node::F(a, b, random_lits(rng)),
        2 => Node::U(a, b, random_lits(rng), random_lits(rng)),
        _ => Node::State(random_lits(rng)),
    }
}

/// Random fragment formula whose windows stay within `[0, span]` of the query time.
pub fn random_formula<R: Rng>(rng: &mut R, span: f64) -> Node {
    if rng.random_bool(0.4) {
        random_temporal(rng, span)
    } else {
        let k = rng.random_range(2..=4);
        let mut args: Vec<Node> = (0..k).map(|_| random_temporal(rng, span)).collect();
        // the parser merges bare state literals into one leading conjunct
        let mut state = Vec::new();
        args.retain(|n| match n {
            Node::State(ls) => {
                state.extend(ls.iter().cloned());
                false
            }
            _ => true,
        });
        if !state.is_empty() {
            args.insert(0, Node::State(state));
        }
        if args.len() == 1 {
            args.pop().unwrap()
        } else {
            Node::And(args)
        }
    }
}

/// Random signal with `n` strictly increasing sample times from 0 and states in R³.
pub fn random_signal<R: Rng>(rng: &mut R, n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut times = vec![0.0];
    for _ in 1..n {
        let last = *times.last().unwrap();
        times.push(last + rng.random_range(0.05..0.3));
    }
    let states = (0..n).map(|_| (0..3).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
    (times, states)
}

pub fn signal(times: &[f64], states: &[Vec<f64>]) -> SampledSignal {
    SampledSignal::new(times.to_vec(), states.to_vec()).unwrap()
}
