//! Offline parameter selection: bisection on the robustness level `r`, a
//! discrete search over funnel placements at each level, witness-point
//! maximization at every switching instant, and the class-K gain.

mod ascent;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ascent::{AscentOptions, AscentOutcome};
pub(crate) use ascent::{maximize, norm, Target};

use crate::barrier::{build_barrier, BarrierError, CompositeBarrier, GammaParams};
use crate::stl::OperatorUnit;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error(transparent)]
    Barrier(#[from] BarrierError),
    #[error("invalid search configuration: {0}")]
    Config(String),
    #[error("x0 has dimension {got}, units expect {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("predicate '{0}' is never satisfiable (sup h < 0)")]
    Unsatisfiable(String),
    #[error("no unit has a positive deadline; nothing to control")]
    NoTaskTerms,
    #[error("funnel parameters violate the placement rules: {0}")]
    Placement(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub delta: f64,
    pub eta_grid: Vec<f64>,
    pub restarts: usize,
    pub r_tolerance: f64,
    /// Candidate gaps `h(x0) − γ₀`.
    pub spread_grid: Vec<f64>,
    /// Candidate gaps `γ∞ − max(r, γ₀)`.
    pub offset_grid: Vec<f64>,
    pub max_sweeps: usize,
    pub max_ascent_iters: usize,
    pub seed: u64,
    /// Headroom `H` in `h_cap = min(sup h, h(x0) + H)`; default `10(1 + |h(x0)|)`.
    pub headroom: Option<f64>,
    /// Fixed bound radius; chosen automatically when absent.
    pub bound_radius: Option<f64>,
    pub max_radius_doublings: usize,
    pub kappa_min: f64,
    pub kappa_max: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            delta: 0.005,
            eta_grid: vec![20.0],
            restarts: 2,
            r_tolerance: 1e-3,
            spread_grid: vec![0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0],
            offset_grid: vec![0.02, 0.05, 0.2, 0.5, 2.0, 5.0, 20.0, 50.0],
            max_sweeps: 3,
            max_ascent_iters: 200,
            seed: 0,
            headroom: None,
            bound_radius: None,
            max_radius_doublings: 10,
            kappa_min: 0.1,
            kappa_max: 1e6,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |m: &str| Err(SearchError::Config(m.into()));
        if !(self.delta > 0.0) {
            return bad("delta must be > 0");
        }
        if !(self.r_tolerance > 0.0) {
            return bad("r_tolerance must be > 0");
        }
        if self.eta_grid.is_empty() || self.eta_grid.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
            return bad("eta_grid must be non-empty and positive");
        }
        if self.spread_grid.is_empty() || self.spread_grid.iter().any(|&s| !(s > 0.0)) {
            return bad("spread_grid must be non-empty and positive");
        }
        if self.offset_grid.is_empty() || self.offset_grid.iter().any(|&s| !(s > 0.0)) {
            return bad("offset_grid must be non-empty and positive");
        }
        if !(self.kappa_min > 0.0) || !(self.kappa_max >= self.kappa_min) {
            return bad("need 0 < kappa_min <= kappa_max");
        }
        if let Some(d) = self.bound_radius {
            if !(d > 0.0) {
                return bad("bound_radius must be > 0");
            }
        }
        Ok(())
    }

    fn ascent(&self) -> AscentOptions {
        AscentOptions {
            max_iters: self.max_ascent_iters,
            ..AscentOptions::default()
        }
    }
}

/// Outcome of checking one fully specified barrier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    /// `𝔟(x0, 0) − δ`.
    pub initial_margin: f64,
    /// `min h(x0) − r` over units that only constrain the initial state.
    pub state_margin: Option<f64>,
    /// Maximized left-limit value minus `δ` at each switching instant.
    pub witness_margins: Vec<f64>,
    pub witnesses: Vec<Vec<f64>>,
    pub witness_grad_norms: Vec<f64>,
    pub bound_weights: Vec<f64>,
    pub warnings: Vec<String>,
}

impl FeasibilityReport {
    pub fn min_margin(&self) -> f64 {
        self.witness_margins
            .iter()
            .copied()
            .fold(self.initial_margin.min(self.state_margin.unwrap_or(f64::INFINITY)), f64::min)
    }

    fn score(&self) -> f64 {
        let all: Vec<f64> = std::iter::once(self.initial_margin)
            .chain(self.witness_margins.iter().copied())
            .collect();
        let mean = all.iter().map(|m| m.min(1.0)).sum::<f64>() / all.len() as f64;
        self.min_margin() + 1e-3 * mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaReport {
    pub kappa: f64,
    /// `ln` of the unclamped bound, which may exceed `f64` range; absent when no funnel moves.
    pub log_bound: Option<f64>,
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryGainReport {
    pub checked: usize,
    /// Absent when no scanned point was stationary.
    pub min_slack: Option<f64>,
    /// `(t, 𝔟, ∂𝔟/∂t + κ𝔟)` at each stationary point where the slack is not positive.
    pub violations: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchDiagnostics {
    pub report: Option<FeasibilityReport>,
    pub r_upper_bound: f64,
    /// `(spread index, offset index)` per unit.
    pub choices: Vec<(usize, usize)>,
    pub evaluations: usize,
    pub kappa: Option<KappaReport>,
    pub stationary_gain: Option<StationaryGainReport>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub feasible: bool,
    pub r_star: f64,
    pub eta: f64,
    pub delta: f64,
    pub barrier: Option<CompositeBarrier>,
    pub witnesses: Vec<Vec<f64>>,
    pub kappa: f64,
    pub diagnostics: SearchDiagnostics,
}

#[derive(Debug, Clone, Copy)]
struct UnitInfo {
    h0: f64,
    h_cap: f64,
    t_star: f64,
    deadline: f64,
}

/// Funnel for one unit from a discrete `(spread, offset)` choice.
///
/// `γ₀ = h(x0) − spread` (raised to `r` when `t* = 0`), and
/// `γ∞ = max(r, γ₀) + offset`, kept below `h_cap`.
fn place_gamma(info: &UnitInfo, r: f64, spread: f64, offset: f64) -> Option<GammaParams> {
    if info.deadline <= 0.0 {
        return GammaParams::new(r, r + 1.0, 0.0, info.t_star).ok();
    }
    let g0 = if info.t_star > 0.0 {
        info.h0 - spread
    } else {
        r.max(info.h0 - spread)
    };
    if !(g0 < info.h0) {
        return None;
    }
    let floor = r.max(g0);
    if !(info.h_cap > floor) {
        return None;
    }
    let g_inf = (floor + offset).min(floor + 0.5 * (info.h_cap - floor));
    GammaParams::reaching(g0, g_inf, r, info.t_star).ok()
}

fn unit_infos(units: &[OperatorUnit], x0: &[f64], headroom: Option<f64>) -> Vec<UnitInfo> {
    units
        .iter()
        .map(|u| {
            let h0 = u.predicate.value(x0);
            let head = headroom.unwrap_or(10.0 * (1.0 + h0.abs()));
            UnitInfo {
                h0,
                h_cap: u.predicate.sup().min(h0 + head),
                t_star: u.t_star(),
                deadline: u.deadline(),
            }
        })
        .collect()
}

/// Checks the initial-value and switch-instant conditions for a given barrier.
///
/// `r` is only used for units with deadline 0, which constrain `x0` alone.
pub fn check_barrier(
    cb: &CompositeBarrier,
    x0: &[f64],
    r: f64,
    delta: f64,
    opts: &AscentOptions,
    warm: Option<&[Vec<f64>]>,
) -> Result<FeasibilityReport, SearchError> {
    if x0.len() != cb.dim() {
        return Err(SearchError::Dimension {
            got: x0.len(),
            expected: cb.dim(),
        });
    }
    let initial_margin = cb.value(x0, 0.0)? - delta;
    let state_margin = cb
        .terms()
        .iter()
        .filter(|t| t.deadline() <= 0.0)
        .map(|t| t.unit.predicate.value(x0) - r)
        .reduce(f64::min);
    let radius = cb.bound_radius();
    let mut report = FeasibilityReport {
        feasible: false,
        initial_margin,
        state_margin,
        witness_margins: Vec::new(),
        witnesses: Vec::new(),
        witness_grad_norms: Vec::new(),
        bound_weights: Vec::new(),
        warnings: Vec::new(),
    };
    for (j, &s) in cb.schedule().iter().enumerate() {
        let start = warm.and_then(|w| w.get(j)).map_or(x0, Vec::as_slice);
        let out = maximize(cb, Target::LeftLimit(s), start, radius, opts)?;
        if !out.converged {
            report
                .warnings
                .push(format!("ascent at s = {s} stopped after {} iterations (|grad| = {:.3e})", out.iterations, out.grad_norm));
        }
        report.witness_margins.push(out.value - delta);
        report.witness_grad_norms.push(out.grad_norm);
        report.bound_weights.push(out.bound_weight);
        report.witnesses.push(out.x);
    }
    // A witness with value >= δ proves the condition whether or not the ascent converged.
    report.feasible = report.min_margin() >= 0.0;
    Ok(report)
}

/// Validates the funnels against the placement rules for level `r`, builds
/// the barrier and checks it.
#[allow(clippy::too_many_arguments)]
pub fn feasibility_check(
    units: &[OperatorUnit],
    x0: &[f64],
    r: f64,
    eta: f64,
    bound_radius: f64,
    gammas: &[GammaParams],
    delta: f64,
    opts: &AscentOptions,
) -> Result<(CompositeBarrier, FeasibilityReport), SearchError> {
    let infos = unit_infos(units, x0, None);
    for (k, (g, info)) in gammas.iter().zip(&infos).enumerate() {
        check_placement(g, info, r).map_err(|m| SearchError::Placement(format!("unit {k}: {m}")))?;
    }
    let cb = build_barrier(units.to_vec(), gammas.to_vec(), eta, bound_radius)?;
    let report = check_barrier(&cb, x0, r, delta, opts, None)?;
    Ok((cb, report))
}

fn check_placement(g: &GammaParams, info: &UnitInfo, r: f64) -> Result<(), String> {
    if info.deadline <= 0.0 {
        return Ok(());
    }
    if !(g.gamma0 < info.h0) {
        return Err(format!("gamma0 {} not below h(x0) {}", g.gamma0, info.h0));
    }
    if info.t_star == 0.0 && g.gamma0 < r {
        return Err(format!("t* = 0 needs gamma0 >= r, got {} < {r}", g.gamma0));
    }
    let floor = r.max(g.gamma0);
    if !(g.gamma_inf > floor && g.gamma_inf < info.h_cap) {
        return Err(format!("gamma_inf {} outside ({floor}, {})", g.gamma_inf, info.h_cap));
    }
    let expected = if g.gamma0 < r {
        -((r - g.gamma_inf) / (g.gamma0 - g.gamma_inf)).ln() / info.t_star
    } else {
        0.0
    };
    if (g.decay - expected).abs() > 1e-9 * (1.0 + expected.abs()) {
        return Err(format!("decay {} should be {expected}", g.decay));
    }
    Ok(())
}

/// Worst-case gain: `κ = 1.1·Δmax·exp(η(𝔟max − δ))/δ`, clamped to `[kappa_min, kappa_max]`.
pub fn compute_kappa(cb: &CompositeBarrier, delta: f64, kappa_min: f64, kappa_max: f64) -> KappaReport {
    let delta_max = cb.terms().iter().map(|t| t.gamma.max_rate()).fold(0.0, f64::max);
    if delta_max <= 0.0 {
        return KappaReport {
            kappa: kappa_min,
            log_bound: None,
            clamped: true,
        };
    }
    let b_max = cb
        .terms()
        .iter()
        .map(|t| t.h_cap.unwrap_or_else(|| t.unit.predicate.sup()) - t.gamma.gamma0)
        .fold(f64::NEG_INFINITY, f64::max);
    let log_bound = 1.1f64.ln() + delta_max.ln() + cb.eta() * (b_max - delta) - delta.ln();
    let raw = log_bound.exp();
    let kappa = raw.clamp(kappa_min, kappa_max);
    KappaReport {
        kappa,
        log_bound: Some(log_bound),
        clamped: kappa != raw,
    }
}

/// Checks `∂𝔟/∂t + κ𝔟 > 0` at each point whose spatial gradient is below `1e-8`.
pub fn stationary_gain_scan(cb: &CompositeBarrier, kappa: f64, points: &[(Vec<f64>, f64)]) -> StationaryGainReport {
    let mut rep = StationaryGainReport {
        checked: 0,
        min_slack: None,
        violations: Vec::new(),
    };
    for (x, t) in points {
        let Ok(e) = cb.gradients(x, *t) else { continue };
        if norm(&e.grad_x) >= 1e-8 {
            continue;
        }
        rep.checked += 1;
        let slack = e.dbdt + kappa * e.value;
        rep.min_slack = Some(rep.min_slack.map_or(slack, |m| m.min(slack)));
        if !(slack > 0.0) {
            rep.violations.push((*t, e.value, slack));
        }
    }
    rep
}

/// Maximizers of `x ↦ 𝔟(x, t)` on a uniform grid of `count` times in `[0, horizon)`.
pub fn stationary_points(cb: &CompositeBarrier, x0: &[f64], count: usize, opts: &AscentOptions) -> Vec<(Vec<f64>, f64)> {
    let h = cb.horizon();
    let mut start = x0.to_vec();
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let t = h * k as f64 / count as f64;
        if let Ok(o) = maximize(cb, Target::At(t), &start, cb.bound_radius(), opts) {
            start.clone_from(&o.x);
            out.push((o.x, t));
        }
    }
    out
}

struct Searcher<'a> {
    units: &'a [OperatorUnit],
    x0: &'a [f64],
    cfg: &'a SearchConfig,
    infos: Vec<UnitInfo>,
    radius: f64,
    opts: AscentOptions,
    evaluations: usize,
}

struct Candidate {
    choices: Vec<(usize, usize)>,
    barrier: CompositeBarrier,
    report: FeasibilityReport,
    score: f64,
}

impl Searcher<'_> {
    fn gammas(&self, r: f64, choices: &[(usize, usize)]) -> Option<Vec<GammaParams>> {
        self.infos
            .iter()
            .zip(choices)
            .map(|(info, &(s, o))| place_gamma(info, r, self.cfg.spread_grid[s], self.cfg.offset_grid[o]))
            .collect()
    }

    fn evaluate(&mut self, cb: &mut CompositeBarrier, r: f64, choices: &[(usize, usize)], warm: &[Vec<f64>]) -> Option<(FeasibilityReport, f64)> {
        let gammas = self.gammas(r, choices)?;
        for (l, g) in gammas.into_iter().enumerate() {
            cb.set_gamma(l, g);
        }
        self.evaluations += 1;
        let rep = check_barrier(cb, self.x0, r, self.cfg.delta, &self.opts, Some(warm)).ok()?;
        let score = rep.score();
        Some((rep, score))
    }

    /// Coordinate ascent over per-unit choices; returns early once feasible.
    fn improve(&mut self, r: f64, mut best: Candidate) -> Candidate {
        let ns = self.cfg.spread_grid.len();
        let no = self.cfg.offset_grid.len();
        for _ in 0..self.cfg.max_sweeps {
            if best.report.feasible {
                return best;
            }
            let mut changed = false;
            for l in 0..self.units.len() {
                if self.infos[l].deadline <= 0.0 {
                    continue;
                }
                let mut cb = best.barrier.clone();
                let mut trial = best.choices.clone();
                let warm = best.report.witnesses.clone();
                for s in 0..ns {
                    for o in 0..no {
                        if (s, o) == best.choices[l] {
                            continue;
                        }
                        trial[l] = (s, o);
                        if let Some((rep, score)) = self.evaluate(&mut cb, r, &trial, &warm) {
                            if score > best.score + 1e-12 {
                                best = Candidate {
                                    choices: trial.clone(),
                                    barrier: cb.clone(),
                                    report: rep,
                                    score,
                                };
                                changed = true;
                                if best.report.feasible {
                                    return best;
                                }
                            }
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        best
    }

    fn search_level(&mut self, r: f64, eta: f64, rng: &mut ChaCha8Rng) -> Result<Option<Candidate>, SearchError> {
        let ns = self.cfg.spread_grid.len();
        let no = self.cfg.offset_grid.len();
        let p = self.units.len();
        let init: Vec<GammaParams> = self
            .infos
            .iter()
            .map(|i| GammaParams::new(0.0, 1.0, 0.0, i.t_star))
            .collect::<Result<_, _>>()?;
        let mut cb = build_barrier(self.units.to_vec(), init, eta, self.radius)?;
        let warm0 = vec![self.x0.to_vec(); cb.schedule().len()];

        // shared choice for every unit
        let mut best: Option<Candidate> = None;
        for s in 0..ns {
            for o in 0..no {
                let choices = vec![(s, o); p];
                if let Some((rep, score)) = self.evaluate(&mut cb, r, &choices, &warm0) {
                    if best.as_ref().is_none_or(|b| score > b.score) {
                        best = Some(Candidate {
                            choices,
                            barrier: cb.clone(),
                            report: rep,
                            score,
                        });
                    }
                }
            }
        }
        let Some(best) = best else { return Ok(None) };
        let mut best = self.improve(r, best);
        for _ in 0..self.cfg.restarts {
            if best.report.feasible {
                break;
            }
            let choices: Vec<(usize, usize)> = (0..p).map(|_| (rng.random_range(0..ns), rng.random_range(0..no))).collect();
            if let Some((rep, score)) = self.evaluate(&mut cb, r, &choices, &warm0) {
                let start = Candidate {
                    choices,
                    barrier: cb.clone(),
                    report: rep,
                    score,
                };
                let cand = self.improve(r, start);
                if cand.score > best.score {
                    best = cand;
                }
            }
        }
        Ok(Some(best))
    }

    /// Necessary condition: at each switch the units already past their `t*`
    /// must be jointly satisfiable with robustness `r + δ`.
    fn r_upper_bound(&self, eta: f64) -> Result<f64, SearchError> {
        let mut ub = self.infos.iter().map(|i| i.h_cap).fold(f64::INFINITY, f64::min);
        for i in &self.infos {
            if i.deadline <= 0.0 {
                ub = ub.min(i.h0);
            } else if i.t_star == 0.0 {
                ub = ub.min(i.h0 - self.cfg.delta);
            }
        }
        let gammas: Vec<GammaParams> = self
            .infos
            .iter()
            .map(|i| GammaParams::new(0.0, 1.0, 0.0, i.t_star))
            .collect::<Result<_, _>>()?;
        let full = build_barrier(self.units.to_vec(), gammas.clone(), eta, self.radius * 1e3)?;
        for &s in full.schedule() {
            let (units, gs): (Vec<OperatorUnit>, Vec<GammaParams>) = self
                .units
                .iter()
                .zip(&gammas)
                .zip(&self.infos)
                .filter(|(_, i)| i.deadline >= s && i.t_star <= s)
                .map(|((u, g), _)| (u.clone(), *g))
                .unzip();
            if units.is_empty() {
                continue;
            }
            let p = units.len();
            let cb = build_barrier(units, gs, eta, self.radius * 1e3)?;
            let out = maximize(&cb, Target::LeftLimit(s), self.x0, cb.bound_radius(), &self.opts)?;
            ub = ub.min(out.value + ((p + 1) as f64).ln() / eta - self.cfg.delta);
        }
        Ok(ub)
    }
}

/// Default bound radius: twice the larger of `|x0|` and the distance scale of
/// the predicate geometry.
fn default_radius(units: &[OperatorUnit], x0: &[f64]) -> f64 {
    use crate::stl::PredicateForm;
    let mut sq = 0.0;
    for u in units {
        let d = match &u.predicate.form {
            PredicateForm::Affine { coeffs, offset } => {
                let c = norm(coeffs);
                if c > 0.0 {
                    offset.abs() / c
                } else {
                    0.0
                }
            }
            PredicateForm::QuadBall { center_map, shift, level } => {
                let fro = center_map.iter().flatten().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
                (norm(shift) + level.max(0.0).sqrt()) / fro
            }
        };
        sq += d * d;
    }
    2.0 * norm(x0).max(sq.sqrt()).max(1.0)
}

/// Searches for the largest feasible robustness level.
pub fn maximize_r(units: &[OperatorUnit], x0: &[f64], cfg: &SearchConfig) -> Result<SearchResult, SearchError> {
    cfg.validate()?;
    if units.is_empty() {
        return Err(BarrierError::Empty.into());
    }
    let dim = units[0].predicate.dim();
    if x0.len() != dim {
        return Err(SearchError::Dimension {
            got: x0.len(),
            expected: dim,
        });
    }
    if !units.iter().any(|u| u.deadline() > 0.0) {
        return Err(SearchError::NoTaskTerms);
    }
    if let Some(u) = units.iter().find(|u| u.predicate.sup() < 0.0) {
        return Err(SearchError::Unsatisfiable(u.predicate.label.clone()));
    }

    let infos = unit_infos(units, x0, cfg.headroom);
    let mut searcher = Searcher {
        units,
        x0,
        cfg,
        infos,
        radius: cfg.bound_radius.unwrap_or_else(|| default_radius(units, x0)),
        opts: cfg.ascent(),
        evaluations: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut warnings = Vec::new();

    let mut best: Option<(f64, f64, Candidate)> = None;
    let mut fallback: Option<(f64, Candidate)> = None;
    let mut upper_seen = f64::NEG_INFINITY;
    for &eta in &cfg.eta_grid {
        let ub = searcher.r_upper_bound(eta)?;
        upper_seen = upper_seen.max(ub);
        if !(ub > 0.0) {
            continue;
        }
        let (mut lo, mut hi) = (0.0, ub);
        let mut found: Option<(f64, Candidate)> = None;
        // try the bracket top first; it is often attained up to the LSE gap
        let mut probe = hi;
        loop {
            let cand = searcher.search_level(probe, eta, &mut rng)?;
            match cand {
                Some(c) if c.report.feasible => {
                    lo = probe;
                    found = Some((probe, c));
                }
                other => {
                    hi = probe;
                    if let Some(c) = other {
                        if fallback.as_ref().is_none_or(|(_, f)| c.score > f.score) {
                            fallback = Some((probe, c));
                        }
                    }
                }
            }
            if hi - lo <= cfg.r_tolerance {
                break;
            }
            probe = 0.5 * (lo + hi);
        }
        if let Some((r, c)) = found {
            if best.as_ref().is_none_or(|(br, _, _)| r > *br) {
                best = Some((r, eta, c));
            }
            // grid order is preference order; stop at the first η that works
            break;
        }
    }

    let Some((r_star, eta, cand)) = best else {
        let (barrier, report, choices) = match fallback {
            Some((_, c)) => (Some(c.barrier), Some(c.report), c.choices),
            None => (None, None, Vec::new()),
        };
        warnings.push("no feasible robustness level found".into());
        return Ok(SearchResult {
            feasible: false,
            r_star: 0.0,
            eta: cfg.eta_grid[0],
            delta: cfg.delta,
            barrier,
            witnesses: Vec::new(),
            kappa: cfg.kappa_min,
            diagnostics: SearchDiagnostics {
                report,
                r_upper_bound: upper_seen,
                choices,
                evaluations: searcher.evaluations,
                kappa: None,
                stationary_gain: None,
                warnings,
            },
        });
    };

    // grow D until the boundedness term is negligible at every witness
    let mut barrier = cand.barrier;
    let mut report = cand.report;
    let mut doublings = 0;
    if cfg.bound_radius.is_none() {
        while report.bound_weights.iter().any(|&w| w >= 1e-6) && doublings < cfg.max_radius_doublings {
            let bigger = barrier.clone().with_radius(2.0 * barrier.bound_radius());
            let rep = check_barrier(&bigger, x0, r_star, cfg.delta, &searcher.opts, Some(&report.witnesses))?;
            if !rep.feasible {
                break;
            }
            barrier = bigger;
            report = rep;
            doublings += 1;
        }
        if report.bound_weights.iter().any(|&w| w >= 1e-6) {
            warnings.push(format!(
                "bound term still carries weight {:.3e} at a witness after {doublings} doublings of D",
                report.bound_weights.iter().copied().fold(0.0, f64::max)
            ));
        }
    }
    let caps: Vec<f64> = searcher.infos.iter().map(|i| i.h_cap).collect();
    barrier.set_caps(&caps);
    let kappa = compute_kappa(&barrier, cfg.delta, cfg.kappa_min, cfg.kappa_max);
    if kappa.clamped && kappa.kappa == cfg.kappa_max {
        warnings.push(format!("kappa clamped to {} (bound exp({:.1}))", cfg.kappa_max, kappa.log_bound.unwrap_or(f64::NEG_INFINITY)));
    }
    let points = stationary_points(&barrier, x0, 200, &searcher.opts);
    let a3 = stationary_gain_scan(&barrier, kappa.kappa, &points);
    if !a3.violations.is_empty() {
        warnings.push(format!("{} stationary points violate dbdt + kappa*b > 0", a3.violations.len()));
    }
    warnings.extend(report.warnings.iter().cloned());
    Ok(SearchResult {
        feasible: true,
        r_star,
        eta,
        delta: cfg.delta,
        witnesses: report.witnesses.clone(),
        kappa: kappa.kappa,
        barrier: Some(barrier),
        diagnostics: SearchDiagnostics {
            report: Some(report),
            r_upper_bound: upper_seen,
            choices: cand.choices,
            evaluations: searcher.evaluations,
            kappa: Some(kappa),
            stationary_gain: Some(a3),
            warnings,
        },
    })
}
