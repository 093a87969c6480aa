//! Explicit-Euler simulation of the coupled team under the decentralized
//! controller, with seeded noise, runtime coupling-bound checks and a
//! trajectory log that the robustness monitor can replay.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{team_control, ControlError, SecondaryMode, Team};
use crate::search::norm;
use crate::stl::{robustness, Formula, PredicateForm, SampledSignal, StlError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("step {step}: {source}")]
    Control {
        step: usize,
        #[source]
        source: ControlError,
    },
    #[error("step {step}, agent {agent}: coupling norm {norm:.6} exceeds declared bound {bound}")]
    CouplingBound { step: usize, agent: usize, norm: f64, bound: f64 },
    #[error("invalid simulation setup: {0}")]
    Setup(String),
    #[error(transparent)]
    Monitor(#[from] StlError),
}

/// Componentwise clamp to `[-1, 1]`.
pub fn sat1(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.clamp(-1.0, 1.0)).collect()
}

/// One additive coupling term `c_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CouplingTerm {
    /// `gain · Σ_j sat1(x_j − x_i)` over `targets`.
    SaturatingAttraction { agent: usize, gain: f64, targets: Vec<usize> },
    /// Piecewise-constant in time.
    Scripted { agent: usize, times: Vec<f64>, values: Vec<Vec<f64>> },
}

impl CouplingTerm {
    fn agent(&self) -> usize {
        match self {
            CouplingTerm::SaturatingAttraction { agent, .. } | CouplingTerm::Scripted { agent, .. } => *agent,
        }
    }

    fn add_into(&self, states: &BTreeMap<usize, Vec<f64>>, t: f64, out: &mut [f64]) {
        match self {
            CouplingTerm::SaturatingAttraction { agent, gain, targets } => {
                let xi = &states[agent];
                for j in targets {
                    let d: Vec<f64> = states[j].iter().zip(xi).map(|(a, b)| a - b).collect();
                    for (o, s) in out.iter_mut().zip(sat1(&d)) {
                        *o += gain * s;
                    }
                }
            }
            CouplingTerm::Scripted { times, values, .. } => {
                let k = times.partition_point(|&s| s <= t);
                if k > 0 {
                    for (o, v) in out.iter_mut().zip(&values[k - 1]) {
                        *o += v;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    #[default]
    UniformBall,
    /// `w_i = −bound · ∂𝔟/∂x_i / |∂𝔟/∂x_i|`.
    Adversarial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub bound: f64,
    pub mode: NoiseMode,
    pub seed: u64,
    /// Noise stays constant on `[k·hold, (k+1)·hold)`; per step when absent.
    pub hold: Option<f64>,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            bound: 0.0,
            mode: NoiseMode::UniformBall,
            seed: 0,
            hold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    pub noise: NoiseSpec,
    pub couplings: Vec<CouplingTerm>,
    /// Override of the team horizon (latest switching instant).
    pub horizon: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.005,
            noise: NoiseSpec::default(),
            couplings: Vec::new(),
            horizon: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Switch { step: usize, t: f64, clique: usize },
    Infeasible { step: usize, t: f64, message: String },
    CouplingViolation { step: usize, t: f64, agent: usize, norm: f64 },
}

/// One logged time instant. Control-side fields are empty on the final row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub t: f64,
    /// Stacked states in `TrajectoryLog::agents` order.
    pub state: Vec<f64>,
    /// Stacked barrier inputs `v_i`.
    pub input: Vec<f64>,
    /// Barrier value per clique at the pre-step state (`None` past the horizon).
    pub barrier: Vec<Option<f64>>,
    pub residual: Vec<f64>,
    pub load_share: Vec<f64>,
    /// `|c_i|` including noise (and `f_u` when it is not compensated).
    pub coupling_norm: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub dt: f64,
    /// `(agent id, state dim)` in stacking order.
    pub agents: Vec<(usize, usize)>,
    pub cliques: Vec<usize>,
    pub rows: Vec<LogRow>,
    pub events: Vec<Event>,
}

impl TrajectoryLog {
    fn offset(&self, agent: usize) -> Option<(usize, usize)> {
        let mut off = 0;
        for &(a, d) in &self.agents {
            if a == agent {
                return Some((off, d));
            }
            off += d;
        }
        None
    }

    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    pub fn final_state(&self) -> &[f64] {
        &self.rows.last().expect("log has the initial row").state
    }

    /// Sampled signal of the stacked state of `members`.
    pub fn signal(&self, members: &[usize]) -> Result<SampledSignal, SimError> {
        let spans: Vec<(usize, usize)> = members
            .iter()
            .map(|&a| self.offset(a).ok_or_else(|| SimError::Setup(format!("agent {a} not in log"))))
            .collect::<Result<_, _>>()?;
        let states = self
            .rows
            .iter()
            .map(|r| spans.iter().flat_map(|&(o, d)| r.state[o..o + d].iter().copied()).collect())
            .collect();
        Ok(SampledSignal::new(self.times(), states)?)
    }

    /// Minimum logged barrier value of clique `k` (index into `cliques`).
    pub fn min_barrier(&self, k: usize) -> f64 {
        self.rows
            .iter()
            .filter_map(|r| r.barrier.get(k).copied().flatten())
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest per-step displacement over `dt` of the stacked state of `members`.
    pub fn max_speed(&self, members: &[usize]) -> f64 {
        let spans: Vec<(usize, usize)> = members.iter().filter_map(|&a| self.offset(a)).collect();
        self.rows
            .windows(2)
            .map(|w| {
                let sq: f64 = spans
                    .iter()
                    .flat_map(|&(o, d)| (o..o + d).map(move |i| (w[1].state[i] - w[0].state[i]).powi(2)))
                    .sum();
                sq.sqrt() / (w[1].t - w[0].t)
            })
            .fold(0.0, f64::max)
    }

    pub fn max_coupling_norm(&self) -> f64 {
        self.rows.iter().flat_map(|r| r.coupling_norm.iter().copied()).fold(0.0, f64::max)
    }

    /// CSV header in the fixed column order used by [`TrajectoryLog::write_csv`].
    pub fn csv_header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        for &(a, d) in &self.agents {
            h.extend((0..d).map(|c| format!("x{a}_{c}")));
        }
        for &(a, d) in &self.agents {
            h.extend((0..d).map(|c| format!("u{a}_{c}")));
        }
        h.extend(self.cliques.iter().map(|k| format!("b{k}")));
        h.extend(self.agents.iter().map(|(a, _)| format!("res{a}")));
        h.extend(self.agents.iter().map(|(a, _)| format!("share{a}")));
        h.extend(self.agents.iter().map(|(a, _)| format!("cnorm{a}")));
        h
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(self.csv_header())?;
        let nu: usize = self.agents.iter().map(|a| a.1).sum();
        let na = self.agents.len();
        let fmt = |v: f64| format!("{v:e}");
        for r in &self.rows {
            let mut rec: Vec<String> = vec![fmt(r.t)];
            rec.extend(r.state.iter().map(|&v| fmt(v)));
            if r.input.is_empty() {
                rec.extend(std::iter::repeat_n(String::new(), nu));
            } else {
                rec.extend(r.input.iter().map(|&v| fmt(v)));
            }
            if r.barrier.is_empty() {
                rec.extend(std::iter::repeat_n(String::new(), self.cliques.len()));
            } else {
                rec.extend(r.barrier.iter().map(|b| b.map(fmt).unwrap_or_default()));
            }
            for v in [&r.residual, &r.load_share, &r.coupling_norm] {
                if v.is_empty() {
                    rec.extend(std::iter::repeat_n(String::new(), na));
                } else {
                    rec.extend(v.iter().map(|&x| fmt(x)));
                }
            }
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Reads the state columns `x{agent}_{component}` and the `t` column of a
/// CSV file into a signal. Other columns are ignored. Returns the agent
/// blocks `(id, dim)` in order of first appearance.
pub fn read_signal_csv<R: std::io::Read>(r: R) -> Result<(Vec<(usize, usize)>, SampledSignal), SimError> {
    let bad = |m: String| SimError::Setup(m);
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let header = rdr.headers().map_err(|e| bad(format!("csv header: {e}")))?.clone();
    let t_col = header.iter().position(|h| h == "t").ok_or_else(|| bad("csv has no `t` column".into()))?;
    let mut cols: Vec<(usize, usize, usize)> = Vec::new();
    for (i, h) in header.iter().enumerate() {
        let Some(rest) = h.strip_prefix('x') else { continue };
        let Some((a, c)) = rest.split_once('_') else { continue };
        if let (Ok(a), Ok(c)) = (a.parse::<usize>(), c.parse::<usize>()) {
            cols.push((a, c, i));
        }
    }
    if cols.is_empty() {
        return Err(bad("csv has no x{agent}_{component} columns".into()));
    }
    let mut agents: Vec<(usize, usize)> = Vec::new();
    for &(a, _, _) in &cols {
        if !agents.iter().any(|&(b, _)| b == a) {
            agents.push((a, 0));
        }
    }
    let mut order = Vec::new();
    for (a, d) in agents.iter_mut() {
        let mut comps: Vec<(usize, usize)> = cols.iter().filter(|c| c.0 == *a).map(|c| (c.1, c.2)).collect();
        comps.sort();
        if comps.iter().enumerate().any(|(k, c)| c.0 != k) {
            return Err(bad(format!("agent {a}: state components must be 0..n without gaps")));
        }
        *d = comps.len();
        order.extend(comps.into_iter().map(|c| c.1));
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(format!("csv: {e}")))?;
        let num = |i: usize| -> Result<f64, SimError> {
            rec.get(i)
                .unwrap_or("")
                .parse::<f64>()
                .map_err(|_| bad(format!("row {}: column {} is not a number", line + 1, &header[i])))
        };
        times.push(num(t_col)?);
        states.push(order.iter().map(|&i| num(i)).collect::<Result<Vec<_>, _>>()?);
    }
    Ok((agents, SampledSignal::new(times, states)?))
}

/// Result of a run; `error` is set when the run stopped early.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub log: TrajectoryLog,
    pub error: Option<SimError>,
}

/// Mutable simulation state.
pub struct World<'a> {
    team: &'a Team,
    cfg: &'a SimConfig,
    pub states: BTreeMap<usize, Vec<f64>>,
    rng: ChaCha8Rng,
    noise_index: Option<u64>,
    noise: BTreeMap<usize, Vec<f64>>,
}

impl<'a> World<'a> {
    pub fn new(team: &'a Team, cfg: &'a SimConfig, x0: BTreeMap<usize, Vec<f64>>) -> Result<Self, SimError> {
        if !(cfg.dt > 0.0) {
            return Err(SimError::Setup("dt must be > 0".into()));
        }
        if !(cfg.noise.bound >= 0.0) {
            return Err(SimError::Setup("noise bound must be >= 0".into()));
        }
        if let Some(h) = cfg.noise.hold {
            if !(h > 0.0) {
                return Err(SimError::Setup("noise hold must be > 0".into()));
            }
        }
        for a in &team.agents {
            match x0.get(&a.id) {
                Some(x) if x.len() == a.state_dim => {}
                _ => return Err(SimError::Setup(format!("missing or mis-sized initial state for agent {}", a.id))),
            }
        }
        for c in &cfg.couplings {
            if !x0.contains_key(&c.agent()) {
                return Err(SimError::Setup(format!("coupling for unknown agent {}", c.agent())));
            }
            if let CouplingTerm::SaturatingAttraction { targets, .. } = c {
                if let Some(j) = targets.iter().find(|j| !x0.contains_key(j)) {
                    return Err(SimError::Setup(format!("coupling target {j} is not an agent")));
                }
            }
        }
        let noise = team.agents.iter().map(|a| (a.id, vec![0.0; a.state_dim])).collect();
        Ok(Self {
            team,
            cfg,
            states: x0,
            rng: ChaCha8Rng::seed_from_u64(cfg.noise.seed),
            noise_index: None,
            noise,
        })
    }

    /// Advances the held uniform-ball noise to the hold interval containing step `k`.
    fn refresh_noise(&mut self, k: usize, t: f64) {
        let idx = match self.cfg.noise.hold {
            Some(h) => (t / h + 1e-9).floor() as u64,
            None => k as u64,
        };
        while self.noise_index.is_none_or(|i| i < idx) {
            let next = self.noise_index.map_or(0, |i| i + 1);
            for a in &self.team.agents {
                let n = a.state_dim;
                let z: Vec<f64> = (0..n).map(|_| self.rng.sample(StandardNormal)).collect();
                let zn = norm(&z).max(f64::MIN_POSITIVE);
                let u: f64 = self.rng.random();
                let radius = self.cfg.noise.bound * u.powf(1.0 / n as f64);
                self.noise.insert(a.id, z.iter().map(|v| v / zn * radius).collect());
            }
            self.noise_index = Some(next);
        }
    }

    /// One Euler step from `t = k·dt`; returns the log row of the pre-step state.
    pub fn step(&mut self, k: usize) -> Result<LogRow, SimError> {
        let dt = self.cfg.dt;
        let t = k as f64 * dt;
        let ctrl = team_control(self.team, &self.states, t).map_err(|source| SimError::Control { step: k, source })?;
        if self.cfg.noise.mode == NoiseMode::UniformBall {
            self.refresh_noise(k, t);
        }

        let mut row = LogRow {
            t,
            state: self.stacked(),
            input: Vec::new(),
            barrier: self.team.cliques.iter().map(|c| ctrl.barrier_values[&c.id]).collect(),
            residual: Vec::new(),
            load_share: Vec::new(),
            coupling_norm: Vec::new(),
        };
        let mut next = self.states.clone();
        for a in &self.team.agents {
            let ac = &ctrl.agents[&a.id];
            let xi = &self.states[&a.id];
            let clique = self.team.cliques.iter().find(|c| c.members.contains(&a.id)).unwrap();

            let mut c = vec![0.0; a.state_dim];
            for term in self.cfg.couplings.iter().filter(|c| c.agent() == a.id) {
                term.add_into(&self.states, t, &mut c);
            }
            let w = match self.cfg.noise.mode {
                NoiseMode::UniformBall => self.noise[&a.id].clone(),
                NoiseMode::Adversarial => {
                    let g = norm(&ac.grad_block);
                    if g > 1e-12 {
                        ac.grad_block.iter().map(|v| -self.cfg.noise.bound * v / g).collect()
                    } else {
                        vec![0.0; a.state_dim]
                    }
                }
            };
            for (ci, wi) in c.iter_mut().zip(&w) {
                *ci += wi;
            }
            let fu = a.secondary.eval(a.id, &self.states);
            let mut budget = c.clone();
            if let (Some(fu), SecondaryMode::Unknown) = (&fu, a.secondary_mode) {
                for (b, f) in budget.iter_mut().zip(fu) {
                    *b += f;
                }
            }
            let cnorm = norm(&budget);
            // only cliques that are still steering are held to their bound
            if t < clique.barrier.horizon() && cnorm > clique.coupling_bound * (1.0 + 1e-12) {
                return Err(SimError::CouplingBound {
                    step: k,
                    agent: a.id,
                    norm: cnorm,
                    bound: clique.coupling_bound,
                });
            }

            let f = a.drift.eval(xi, t);
            let gu = a.input_map.apply(&ac.input);
            let x = next.get_mut(&a.id).unwrap();
            for d in 0..a.state_dim {
                let fu_d = fu.as_ref().map_or(0.0, |v| v[d]);
                x[d] += dt * (f[d] + gu[d] + fu_d + c[d]);
            }
            row.input.extend(&ac.input);
            row.residual.push(ac.residual);
            row.load_share.push(ac.load_share);
            row.coupling_norm.push(cnorm);
        }
        self.states = next;
        Ok(row)
    }

    fn stacked(&self) -> Vec<f64> {
        self.team.agents.iter().flat_map(|a| self.states[&a.id].iter().copied()).collect()
    }
}

/// Simulates from `x0` over the team horizon.
pub fn run(team: &Team, x0: BTreeMap<usize, Vec<f64>>, cfg: &SimConfig) -> Result<SimOutcome, SimError> {
    let mut world = World::new(team, cfg, x0)?;
    let horizon = cfg.horizon.unwrap_or_else(|| team.horizon());
    let steps = (horizon / cfg.dt).round() as usize;
    let mut log = TrajectoryLog {
        dt: cfg.dt,
        agents: team.agents.iter().map(|a| (a.id, a.state_dim)).collect(),
        cliques: team.cliques.iter().map(|c| c.id).collect(),
        rows: Vec::with_capacity(steps + 1),
        events: Vec::new(),
    };
    let mut pending: Vec<(f64, usize)> = team
        .cliques
        .iter()
        .flat_map(|c| c.barrier.schedule().iter().map(move |&s| (s, c.id)))
        .collect();
    pending.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut pending = pending.into_iter().peekable();

    let mut error = None;
    for k in 0..steps {
        let t = k as f64 * cfg.dt;
        while let Some(&(s, clique)) = pending.peek() {
            if t < s - 1e-9 {
                break;
            }
            log.events.push(Event::Switch { step: k, t, clique });
            pending.next();
        }
        match world.step(k) {
            Ok(row) => log.rows.push(row),
            Err(e) => {
                match &e {
                    SimError::CouplingBound { agent, norm, .. } => log.events.push(Event::CouplingViolation {
                        step: k,
                        t,
                        agent: *agent,
                        norm: *norm,
                    }),
                    other => log.events.push(Event::Infeasible {
                        step: k,
                        t,
                        message: other.to_string(),
                    }),
                }
                error = Some(e);
                break;
            }
        }
    }
    let last_t = log.rows.len() as f64 * cfg.dt;
    log.rows.push(LogRow {
        t: last_t,
        state: world.stacked(),
        input: Vec::new(),
        barrier: Vec::new(),
        residual: Vec::new(),
        load_share: Vec::new(),
        coupling_norm: Vec::new(),
    });
    for (s, clique) in pending {
        if last_t >= s - 1e-9 && error.is_none() {
            log.events.push(Event::Switch {
                step: log.rows.len() - 1,
                t: last_t,
                clique,
            });
        }
    }
    Ok(SimOutcome { log, error })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CliqueVerdict {
    pub clique: usize,
    pub min_barrier: f64,
    pub robustness: f64,
    pub r_star: f64,
    pub tol_rho: f64,
    pub max_speed: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub complete: bool,
    pub cliques: Vec<CliqueVerdict>,
    pub pass: bool,
}

/// Replays the log through the robustness monitor.
///
/// A clique passes when its minimum logged barrier is `>= −tol_b` and its
/// robustness at `t = 0` is `>= r_star − tol_ρ`, where
/// `tol_ρ = tol_b + 2·dt·(L·Lip + Γ)`: `L` is the largest logged speed of the
/// clique state, `Lip` the largest predicate gradient norm seen on the log and
/// `Γ` the largest funnel rate at a critical time.
pub fn verify(
    log: &TrajectoryLog,
    team: &Team,
    formulas: &BTreeMap<usize, Formula>,
    r_stars: &BTreeMap<usize, f64>,
    tol_b: f64,
) -> Result<VerifyReport, SimError> {
    let complete = !log.events.iter().any(|e| !matches!(e, Event::Switch { .. }));
    let mut out = VerifyReport {
        complete,
        cliques: Vec::new(),
        pass: complete,
    };
    for (k, clique) in team.cliques.iter().enumerate() {
        let f = formulas
            .get(&clique.id)
            .ok_or_else(|| SimError::Setup(format!("no formula for clique {}", clique.id)))?;
        let r_star = *r_stars
            .get(&clique.id)
            .ok_or_else(|| SimError::Setup(format!("no r_star for clique {}", clique.id)))?;
        let signal = log.signal(&clique.members)?;
        let rho = robustness(f, &signal, 0.0)?;
        let speed = log.max_speed(&clique.members);
        let lip = f
            .predicates()
            .iter()
            .map(|p| match &p.form {
                PredicateForm::Affine { coeffs, .. } => norm(coeffs),
                PredicateForm::QuadBall { .. } => signal.states().iter().map(|x| norm(&p.gradient(x))).fold(0.0, f64::max),
            })
            .fold(0.0, f64::max);
        let gamma_rate = clique
            .barrier
            .terms()
            .iter()
            .map(|t| t.gamma.rate(t.gamma.t_star))
            .fold(0.0, f64::max);
        let tol_rho = tol_b + 2.0 * log.dt * (speed * lip + gamma_rate);
        let min_b = log.min_barrier(k);
        let pass = min_b >= -tol_b && rho >= r_star - tol_rho;
        out.pass &= pass;
        out.cliques.push(CliqueVerdict {
            clique: clique.id,
            min_barrier: min_b,
            robustness: rho,
            r_star,
            tol_rho,
            max_speed: speed,
            pass,
        });
    }
    Ok(out)
}
