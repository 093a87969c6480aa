use serde::{Deserialize, Serialize};

use super::predicate::Predicate;

/// Closed time interval `[lo, hi]` in seconds, `0 <= lo <= hi < inf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Option<Self> {
        (lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi).then_some(Self { lo, hi })
    }
}

/// Conjunction of (possibly negated) predicates. Negations are already folded
/// into the predicate functions. An empty conjunction is `true`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Conj {
    pub literals: Vec<Predicate>,
}

impl Conj {
    pub fn new(literals: Vec<Predicate>) -> Self {
        Self { literals }
    }

    pub fn is_true(&self) -> bool {
        self.literals.is_empty()
    }

    /// Robustness of the conjunction at one state: the minimum predicate value.
    pub fn value(&self, x: &[f64]) -> f64 {
        self.literals
            .iter()
            .map(|p| p.value(x))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Formula of the supported fragment: temporal operators over conjunctions of
/// literals, combined by top-level conjunction. Temporal operators never nest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Formula {
    /// A bare state formula, evaluated at the query time.
    State { body: Conj },
    Always { interval: Interval, body: Conj },
    Eventually { interval: Interval, body: Conj },
    Until { interval: Interval, left: Conj, right: Conj },
    And { args: Vec<Formula> },
}

impl Formula {
    /// Largest window end reached from time zero.
    pub fn horizon(&self) -> f64 {
        match self {
            Formula::State { .. } => 0.0,
            Formula::Always { interval, .. }
            | Formula::Eventually { interval, .. }
            | Formula::Until { interval, .. } => interval.hi,
            Formula::And { args } => args.iter().map(Formula::horizon).fold(0.0, f64::max),
        }
    }

    /// Every predicate appearing in the formula.
    pub fn predicates(&self) -> Vec<&Predicate> {
        let mut out = Vec::new();
        self.collect_predicates(&mut out);
        out
    }

    fn collect_predicates<'a>(&'a self, out: &mut Vec<&'a Predicate>) {
        match self {
            Formula::State { body } | Formula::Always { body, .. } | Formula::Eventually { body, .. } => {
                out.extend(body.literals.iter())
            }
            Formula::Until { left, right, .. } => {
                out.extend(left.literals.iter());
                out.extend(right.literals.iter());
            }
            Formula::And { args } => args.iter().for_each(|a| a.collect_predicates(out)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    Always,
    Eventually,
}

/// One temporal operator over a single literal; the building block of a barrier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorUnit {
    pub kind: UnitKind,
    pub predicate: Predicate,
    pub interval: Interval,
}

impl OperatorUnit {
    /// Time after which the unit is dropped from the barrier.
    pub fn deadline(&self) -> f64 {
        self.interval.hi
    }

    /// Time from which the literal must hold with the target robustness.
    pub fn t_star(&self) -> f64 {
        match self.kind {
            UnitKind::Always => self.interval.lo,
            UnitKind::Eventually => self.interval.hi,
        }
    }
}

/// Flattens a formula into single-literal temporal units.
///
/// Conjunctions inside an operator body are split with the parent's interval.
/// `left U[a,b] right` becomes always-units on `[a,b]` for `left` and
/// eventually-units on `[b,b]` for `right`, i.e. the until witness is fixed at
/// `b`. A bare state formula is treated as `G[0,0]`.
pub fn normalize(f: &Formula) -> Vec<OperatorUnit> {
    let mut out = Vec::new();
    normalize_into(f, &mut out);
    out
}

fn normalize_into(f: &Formula, out: &mut Vec<OperatorUnit>) {
    let push = |out: &mut Vec<OperatorUnit>, kind, body: &Conj, interval| {
        out.extend(body.literals.iter().map(|p| OperatorUnit {
            kind,
            predicate: p.clone(),
            interval,
        }))
    };
    match f {
        Formula::State { body } => push(out, UnitKind::Always, body, Interval { lo: 0.0, hi: 0.0 }),
        Formula::Always { interval, body } => push(out, UnitKind::Always, body, *interval),
        Formula::Eventually { interval, body } => push(out, UnitKind::Eventually, body, *interval),
        Formula::Until { interval, left, right } => {
            push(out, UnitKind::Always, left, *interval);
            let at_end = Interval {
                lo: interval.hi,
                hi: interval.hi,
            };
            push(out, UnitKind::Eventually, right, at_end);
        }
        Formula::And { args } => args.iter().for_each(|a| normalize_into(a, out)),
    }
}

/// The formula a unit list actually enforces: `G[a,b]μ` for always-units and
/// `F[t*,t*]μ` for eventually-units. Its robustness never exceeds that of the
/// formula the units came from.
pub fn rebuild_from_units(units: &[OperatorUnit]) -> Formula {
    let args = units
        .iter()
        .map(|u| {
            let body = Conj::new(vec![u.predicate.clone()]);
            match u.kind {
                UnitKind::Always => Formula::Always {
                    interval: u.interval,
                    body,
                },
                UnitKind::Eventually => Formula::Eventually {
                    interval: Interval {
                        lo: u.t_star(),
                        hi: u.t_star(),
                    },
                    body,
                },
            }
        })
        .collect();
    Formula::And { args }
}
