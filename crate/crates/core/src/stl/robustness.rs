use serde::{Deserialize, Serialize};

use super::formula::{Conj, Formula, Interval};
use super::StlError;

/// A sampled team trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledSignal {
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
}

impl SampledSignal {
    pub fn new(times: Vec<f64>, states: Vec<Vec<f64>>) -> Result<Self, StlError> {
        if times.is_empty() || times.len() != states.len() {
            return Err(StlError::Signal(format!(
                "need at least one sample and matching lengths (times {}, states {})",
                times.len(),
                states.len()
            )));
        }
        if times[0] != 0.0 {
            return Err(StlError::Signal("signal must start at t = 0".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(StlError::Signal("sample times must be strictly increasing".into()));
        }
        let n = states[0].len();
        if states.iter().any(|s| s.len() != n) {
            return Err(StlError::Signal("all states must have the same dimension".into()));
        }
        Ok(Self { times, states })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    fn eps(&self) -> f64 {
        1e-9 * self.end().abs().max(1.0)
    }

    /// Index of the sample nearest to `t`.
    pub fn nearest(&self, t: f64) -> usize {
        let i = self.times.partition_point(|&s| s < t);
        if i == 0 {
            0
        } else if i == self.times.len() {
            i - 1
        } else if (self.times[i] - t) < (t - self.times[i - 1]) {
            i
        } else {
            i - 1
        }
    }

    /// Sample indices covering `[lo, hi]`: every sample inside the closed
    /// window, or the two bracketing samples when none falls inside.
    pub fn window(&self, lo: f64, hi: f64) -> std::ops::RangeInclusive<usize> {
        let eps = self.eps();
        let first = self.times.partition_point(|&s| s < lo - eps);
        let past = self.times.partition_point(|&s| s <= hi + eps);
        if first < past {
            first..=past - 1
        } else {
            // first == past: no sample inside; bracket it
            let below = first.saturating_sub(1);
            let above = first.min(self.times.len() - 1);
            below..=above
        }
    }
}

/// Quantitative robustness of `f` on `s` at time `t`.
///
/// Suprema and infima over time windows become max/min over the samples
/// returned by [`SampledSignal::window`]. For until, the left operand must
/// hold on `[t + a, t̄]`, matching the barrier encoding of the operator.
pub fn robustness(f: &Formula, s: &SampledSignal, t: f64) -> Result<f64, StlError> {
    let eps = s.eps();
    if t < -eps || t > s.end() + eps {
        return Err(StlError::Signal(format!("query time {t} outside signal span [0, {}]", s.end())));
    }
    let horizon = t + f.horizon();
    if horizon > s.end() + eps {
        return Err(StlError::WindowExceedsSpan {
            needed: horizon,
            end: s.end(),
        });
    }
    Ok(eval(f, s, t))
}

fn eval(f: &Formula, s: &SampledSignal, t: f64) -> f64 {
    let at = |c: &Conj, k: usize| c.value(&s.states[k]);
    match f {
        Formula::State { body } => at(body, s.nearest(t)),
        Formula::Always { interval, body } => window(s, t, interval)
            .map(|k| at(body, k))
            .fold(f64::INFINITY, f64::min),
        Formula::Eventually { interval, body } => window(s, t, interval)
            .map(|k| at(body, k))
            .fold(f64::NEG_INFINITY, f64::max),
        Formula::Until { interval, left, right } => {
            let mut best = f64::NEG_INFINITY;
            let mut left_min = f64::INFINITY;
            for k in window(s, t, interval) {
                left_min = left_min.min(at(left, k));
                best = best.max(at(right, k).min(left_min));
            }
            best
        }
        Formula::And { args } => args
            .iter()
            .map(|a| eval(a, s, t))
            .fold(f64::INFINITY, f64::min),
    }
}

fn window(s: &SampledSignal, t: f64, i: &Interval) -> std::ops::RangeInclusive<usize> {
    s.window(t + i.lo, t + i.hi)
}
