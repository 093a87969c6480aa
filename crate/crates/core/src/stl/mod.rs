//! Formula fragment: parsing, normalization into operator units, and
//! quantitative robustness on sampled signals.

mod formula;
mod parse;
mod predicate;
mod robustness;

use thiserror::Error;

pub use formula::{normalize, rebuild_from_units, Conj, Formula, Interval, OperatorUnit, UnitKind};
pub use parse::parse;
pub use predicate::{Block, Predicate, PredicateForm, StateLayout};
pub use robustness::{robustness, SampledSignal};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StlError {
    #[error("syntax error at {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("semantic error at {pos}: {msg}")]
    Semantic { pos: usize, msg: String },
    #[error("layout: {0}")]
    Layout(String),
    #[error("signal: {0}")]
    Signal(String),
    #[error("window exceeds signal span: needs t = {needed}, signal ends at {end}")]
    WindowExceedsSpan { needed: f64, end: f64 },
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> StateLayout {
        StateLayout::new(&[(1, 1), (2, 1)]).unwrap()
    }

    #[test]
    fn always_over_conjunction_splits() {
        let f = parse("G[1,4](x1[0] >= 0 & x2[0] <= 3)", &layout()).unwrap();
        let units = normalize(&f);
        assert_eq!(units.len(), 2);
        assert!(units.iter().all(|u| u.kind == UnitKind::Always && u.interval == Interval { lo: 1.0, hi: 4.0 }));
        assert_eq!(units[0].t_star(), 1.0);
    }

    #[test]
    fn until_fixes_witness_at_interval_end() {
        let f = parse("(x1[0] >= 0) U[10,20] (x2[0] >= 1)", &layout()).unwrap();
        let units = normalize(&f);
        assert_eq!(units.len(), 2);
        assert_eq!(units[0].kind, UnitKind::Always);
        assert_eq!(units[0].interval, Interval { lo: 10.0, hi: 20.0 });
        assert_eq!(units[1].kind, UnitKind::Eventually);
        assert_eq!(units[1].interval, Interval { lo: 20.0, hi: 20.0 });
        assert_eq!(units[1].t_star(), 20.0);
        assert_eq!(units[1].deadline(), 20.0);
    }

    #[test]
    fn single_predicate_is_identity() {
        let f = parse("G[0,5](x1[0] >= 0)", &layout()).unwrap();
        let units = normalize(&f);
        assert_eq!(units.len(), 1);
        assert_eq!(units[0].deadline(), 5.0);
    }

    #[test]
    fn top_level_conjunctions_concatenate() {
        let f = parse("F[0,2](x1[0] >= 0) & G[1,3](true) & F[2,2](x2[0] >= 0 & x1[0] <= 1)", &layout()).unwrap();
        assert_eq!(normalize(&f).len(), 3);
    }
}
