//! Composite time-varying barrier: one funnel term per operator unit,
//! combined by a log-sum-exp soft minimum, with deadline-driven term removal
//! and an always-active boundedness term `D − |x|`.

mod gamma;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gamma::GammaParams;

use crate::stl::{OperatorUnit, UnitKind};

/// Smoothing of the boundedness term, `D − sqrt(|x|² + ε²) + ε`.
pub const BOUND_SMOOTHING: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BarrierError {
    #[error("invalid funnel parameters: {0}")]
    InvalidGamma(String),
    #[error("barrier needs at least one operator unit")]
    Empty,
    #[error("eta must be positive, got {0}")]
    BadEta(f64),
    #[error("bound radius must be >= 0, got {0}")]
    BadRadius(f64),
    #[error("{units} units but {params} funnel parameter sets")]
    Mismatch { units: usize, params: usize },
    #[error("state has dimension {got}, barrier expects {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("no task term is active at t = {0}")]
    NoActiveTerms(f64),
}

/// `b_l(x, t) = h_l(x) − γ_l(t)` for one operator unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierTerm {
    pub unit: OperatorUnit,
    pub gamma: GammaParams,
    /// Finite stand-in for `sup h` used when the funnel was chosen.
    #[serde(default)]
    pub h_cap: Option<f64>,
}

impl BarrierTerm {
    pub fn deadline(&self) -> f64 {
        self.unit.deadline()
    }

    pub fn value(&self, x: &[f64], t: f64) -> f64 {
        self.unit.predicate.value(x) - self.gamma.value(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Activity {
    /// Terms with `t < deadline`.
    At,
    /// Terms still active just before `t`: `deadline >= t`.
    LeftLimit,
}

/// Value and first derivatives of the composite barrier.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierEval {
    pub value: f64,
    pub grad_x: Vec<f64>,
    pub dbdt: f64,
    /// Soft-min weights of the task terms (zero for inactive ones).
    pub weights: Vec<f64>,
    pub bound_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeBarrier {
    terms: Vec<BarrierTerm>,
    eta: f64,
    bound_radius: f64,
    schedule: Vec<f64>,
    dim: usize,
}

/// Assembles the composite barrier from units and their funnels.
pub fn build_barrier(
    units: Vec<OperatorUnit>,
    params: Vec<GammaParams>,
    eta: f64,
    bound_radius: f64,
) -> Result<CompositeBarrier, BarrierError> {
    if units.is_empty() {
        return Err(BarrierError::Empty);
    }
    if units.len() != params.len() {
        return Err(BarrierError::Mismatch {
            units: units.len(),
            params: params.len(),
        });
    }
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(BarrierError::BadEta(eta));
    }
    if !(bound_radius >= 0.0) {
        return Err(BarrierError::BadRadius(bound_radius));
    }
    let dim = units[0].predicate.dim();
    let terms: Vec<BarrierTerm> = units
        .into_iter()
        .zip(params)
        .map(|(unit, gamma)| {
            if unit.predicate.dim() != dim {
                return Err(BarrierError::Dimension {
                    got: unit.predicate.dim(),
                    expected: dim,
                });
            }
            let expected_t_star = unit.t_star();
            if (gamma.t_star - expected_t_star).abs() > 1e-12 {
                return Err(BarrierError::InvalidGamma(format!(
                    "t_star {} does not match the unit's {} ({:?})",
                    gamma.t_star, expected_t_star, unit.kind
                )));
            }
            GammaParams::new(gamma.gamma0, gamma.gamma_inf, gamma.decay, gamma.t_star)?;
            Ok(BarrierTerm {
                unit,
                gamma,
                h_cap: None,
            })
        })
        .collect::<Result<_, _>>()?;
    let mut schedule: Vec<f64> = terms.iter().map(BarrierTerm::deadline).filter(|&b| b > 0.0).collect();
    schedule.sort_by(f64::total_cmp);
    schedule.dedup();
    Ok(CompositeBarrier {
        terms,
        eta,
        bound_radius,
        schedule,
        dim,
    })
}

impl CompositeBarrier {
    pub fn terms(&self) -> &[BarrierTerm] {
        &self.terms
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn bound_radius(&self) -> f64 {
        self.bound_radius
    }

    /// Switching instants `s_1 < … < s_q` (positive deadlines).
    pub fn schedule(&self) -> &[f64] {
        &self.schedule
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Last switching instant; the barrier is undefined from here on.
    pub fn horizon(&self) -> f64 {
        self.schedule.last().copied().unwrap_or(0.0)
    }

    pub fn with_radius(mut self, bound_radius: f64) -> Self {
        self.bound_radius = bound_radius;
        self
    }

    pub(crate) fn set_gamma(&mut self, term: usize, gamma: GammaParams) {
        self.terms[term].gamma = gamma;
    }

    pub(crate) fn set_caps(&mut self, caps: &[f64]) {
        for (t, &c) in self.terms.iter_mut().zip(caps) {
            t.h_cap = Some(c);
        }
    }

    /// Smallest deadline strictly after `t`, or `+inf`.
    pub fn next_switch(&self, t: f64) -> f64 {
        self.schedule
            .iter()
            .copied()
            .find(|&b| b - t > 0.0)
            .unwrap_or(f64::INFINITY)
    }

    pub fn is_active(&self, term: usize, t: f64) -> bool {
        t < self.terms[term].deadline()
    }

    pub fn value(&self, x: &[f64], t: f64) -> Result<f64, BarrierError> {
        self.lse(x, t, Activity::At)
    }

    /// Value at `s` with the activity set of times just below `s`.
    pub fn left_limit_value(&self, x: &[f64], s: f64) -> Result<f64, BarrierError> {
        self.lse(x, s, Activity::LeftLimit)
    }

    pub fn gradients(&self, x: &[f64], t: f64) -> Result<BarrierEval, BarrierError> {
        self.eval(x, t, Activity::At, None)
    }

    pub fn left_limit_gradients(&self, x: &[f64], s: f64) -> Result<BarrierEval, BarrierError> {
        self.eval(x, s, Activity::LeftLimit, None)
    }

    /// Left-limit evaluation plus the row-major Hessian in `x`.
    pub(crate) fn left_limit_with_hessian(&self, x: &[f64], s: f64, hess: &mut [f64]) -> Result<BarrierEval, BarrierError> {
        self.eval(x, s, Activity::LeftLimit, Some(hess))
    }

    pub(crate) fn with_hessian(&self, x: &[f64], t: f64, hess: &mut [f64]) -> Result<BarrierEval, BarrierError> {
        self.eval(x, t, Activity::At, Some(hess))
    }

    /// Individual task-term values `b_l(x, t)` (inactive ones included).
    pub fn term_values(&self, x: &[f64], t: f64) -> Vec<f64> {
        self.terms.iter().map(|term| term.value(x, t)).collect()
    }

    pub fn bound_value(&self, x: &[f64]) -> f64 {
        let sq: f64 = x.iter().map(|v| v * v).sum();
        self.bound_radius - (sq + BOUND_SMOOTHING * BOUND_SMOOTHING).sqrt() + BOUND_SMOOTHING
    }

    fn active(&self, l: usize, t: f64, mode: Activity) -> bool {
        let b = self.terms[l].deadline();
        match mode {
            Activity::At => t < b,
            Activity::LeftLimit => b >= t && b > 0.0,
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), BarrierError> {
        if x.len() != self.dim {
            return Err(BarrierError::Dimension {
                got: x.len(),
                expected: self.dim,
            });
        }
        Ok(())
    }

    fn lse(&self, x: &[f64], t: f64, mode: Activity) -> Result<f64, BarrierError> {
        self.check_dim(x)?;
        let mut vals: Vec<f64> = Vec::with_capacity(self.terms.len() + 1);
        for (l, term) in self.terms.iter().enumerate() {
            if self.active(l, t, mode) {
                vals.push(term.value(x, t));
            }
        }
        if vals.is_empty() {
            return Err(BarrierError::NoActiveTerms(t));
        }
        vals.push(self.bound_value(x));
        Ok(soft_min(&vals, self.eta))
    }

    fn eval(&self, x: &[f64], t: f64, mode: Activity, hess: Option<&mut [f64]>) -> Result<BarrierEval, BarrierError> {
        self.check_dim(x)?;
        let n = self.dim;
        let p = self.terms.len();
        let mut vals = vec![f64::INFINITY; p + 1];
        let mut any = false;
        for (l, term) in self.terms.iter().enumerate() {
            if self.active(l, t, mode) {
                vals[l] = term.value(x, t);
                any = true;
            }
        }
        if !any {
            return Err(BarrierError::NoActiveTerms(t));
        }
        vals[p] = self.bound_value(x);
        let m = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let mut weights: Vec<f64> = vals
            .iter()
            .map(|&v| if v.is_finite() { (-self.eta * (v - m)).exp() } else { 0.0 })
            .collect();
        let sum: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= sum);
        let value = m - sum.ln() / self.eta;

        let mut grad_x = vec![0.0; n];
        let mut dbdt = 0.0;
        for (l, term) in self.terms.iter().enumerate() {
            if weights[l] > 0.0 {
                term.unit.predicate.add_gradient(x, weights[l], &mut grad_x);
                dbdt -= weights[l] * term.gamma.rate(t);
            }
        }
        let rho = (x.iter().map(|v| v * v).sum::<f64>() + BOUND_SMOOTHING * BOUND_SMOOTHING).sqrt();
        let wb = weights[p];
        for (g, xi) in grad_x.iter_mut().zip(x) {
            *g -= wb * xi / rho;
        }

        if let Some(h) = hess {
            // H = Σ w_l H_l − η (Σ w_l g_l g_lᵀ − ḡ ḡᵀ)
            h.iter_mut().for_each(|v| *v = 0.0);
            let mut g_l = vec![0.0; n];
            for (l, term) in self.terms.iter().enumerate() {
                let w = weights[l];
                if w <= 0.0 {
                    continue;
                }
                term.unit.predicate.add_hessian(w, h);
                g_l.iter_mut().for_each(|v| *v = 0.0);
                term.unit.predicate.add_gradient(x, 1.0, &mut g_l);
                outer_add(h, &g_l, -self.eta * w, n);
            }
            if wb > 0.0 {
                for i in 0..n {
                    h[i * n + i] -= wb / rho;
                    for j in 0..n {
                        h[i * n + j] += wb * x[i] * x[j] / (rho * rho * rho);
                    }
                }
                let gb: Vec<f64> = x.iter().map(|xi| -xi / rho).collect();
                outer_add(h, &gb, -self.eta * wb, n);
            }
            outer_add(h, &grad_x, self.eta, n);
        }

        weights.truncate(p);
        Ok(BarrierEval {
            value,
            grad_x,
            dbdt,
            weights,
            bound_weight: wb,
        })
    }

    /// Eventually-units whose funnel is anchored at the interval end.
    pub fn eventually_terms(&self) -> impl Iterator<Item = &BarrierTerm> {
        self.terms.iter().filter(|t| t.unit.kind == UnitKind::Eventually)
    }
}

fn outer_add(h: &mut [f64], g: &[f64], scale: f64, n: usize) {
    for i in 0..n {
        if g[i] == 0.0 {
            continue;
        }
        let gi = scale * g[i];
        for j in 0..n {
            h[i * n + j] += gi * g[j];
        }
    }
}

/// `−(1/η) ln Σ exp(−η v)`, shifted by the minimum so large `η` cannot overflow.
pub fn soft_min(values: &[f64], eta: f64) -> f64 {
    let m = values.iter().copied().fold(f64::INFINITY, f64::min);
    let s: f64 = values.iter().map(|&v| (-eta * (v - m)).exp()).sum();
    m - s.ln() / eta
}
