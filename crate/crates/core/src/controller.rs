//! Decentralized min-norm controller: each agent solves a one-constraint QP
//! built from its own block of its clique's barrier gradient.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barrier::{BarrierError, CompositeBarrier};
use crate::stl::StateLayout;

/// Threshold for "is zero" tests on gradient norms and constraint vectors.
pub const ZERO_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("agent {agent} at t = {t}: constraint infeasible (|a| = {a_norm:.3e}, rhs = {rhs:.6}, b = {barrier:.6})")]
    Infeasible {
        t: f64,
        agent: usize,
        a_norm: f64,
        rhs: f64,
        barrier: f64,
    },
    #[error("team model: {0}")]
    Model(String),
    #[error("agent {agent}: input map is not full row rank (smallest singular value {sigma:.3e})")]
    RankDeficient { agent: usize, sigma: f64 },
    #[error(transparent)]
    Barrier(#[from] BarrierError),
}

/// `f_i(x_i, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Drift {
    #[default]
    Zero,
    /// `A x_i + b`.
    Affine { matrix: Vec<Vec<f64>>, offset: Vec<f64> },
    /// Piecewise constant in time: `values[k]` on `[times[k], times[k+1])`.
    Scripted { times: Vec<f64>, values: Vec<Vec<f64>> },
}

impl Drift {
    pub fn eval(&self, x: &[f64], t: f64) -> Vec<f64> {
        match self {
            Drift::Zero => vec![0.0; x.len()],
            Drift::Affine { matrix, offset } => matrix
                .iter()
                .zip(offset)
                .map(|(row, b)| row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b)
                .collect(),
            Drift::Scripted { times, values } => {
                let k = times.partition_point(|&s| s <= t);
                match k {
                    0 => vec![0.0; x.len()],
                    k => values[k - 1].clone(),
                }
            }
        }
    }

    fn validate(&self, n: usize) -> Result<(), String> {
        match self {
            Drift::Zero => Ok(()),
            Drift::Affine { matrix, offset } => {
                if matrix.len() != n || offset.len() != n || matrix.iter().any(|r| r.len() != n) {
                    return Err(format!("affine drift must be {n}x{n} with a length-{n} offset"));
                }
                Ok(())
            }
            Drift::Scripted { times, values } => {
                if times.len() != values.len() || values.iter().any(|v| v.len() != n) {
                    return Err("scripted drift needs one length-n value per time".into());
                }
                if times.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err("scripted drift times must increase".into());
                }
                Ok(())
            }
        }
    }
}

/// `g_i(x_i, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputMap {
    #[default]
    Identity,
    /// Constant `n × m` matrix, row-major.
    Constant { matrix: Vec<Vec<f64>> },
}

impl InputMap {
    pub fn input_dim(&self, n: usize) -> usize {
        match self {
            InputMap::Identity => n,
            InputMap::Constant { matrix } => matrix.first().map_or(0, Vec::len),
        }
    }

    /// `g u`.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        match self {
            InputMap::Identity => u.to_vec(),
            InputMap::Constant { matrix } => matrix.iter().map(|row| row.iter().zip(u).map(|(a, b)| a * b).sum()).collect(),
        }
    }

    /// `gᵀ v`.
    pub fn transpose_apply(&self, v: &[f64]) -> Vec<f64> {
        match self {
            InputMap::Identity => v.to_vec(),
            InputMap::Constant { matrix } => {
                let m = self.input_dim(v.len());
                let mut out = vec![0.0; m];
                for (row, vi) in matrix.iter().zip(v) {
                    for (o, a) in out.iter_mut().zip(row) {
                        *o += a * vi;
                    }
                }
                out
            }
        }
    }

    /// Smallest singular value of `g`.
    pub fn min_singular_value(&self, n: usize) -> f64 {
        match self {
            InputMap::Identity => 1.0,
            InputMap::Constant { matrix } => {
                let m = self.input_dim(n);
                let g = DMatrix::from_row_iterator(n, m, matrix.iter().flatten().copied());
                g.singular_values().iter().copied().take(n).fold(f64::INFINITY, f64::min)
            }
        }
    }
}

/// Secondary drift `f_u` applied on top of the barrier input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Secondary {
    #[default]
    None,
    /// `gain · Σ_j (x_i − x_j) / (|x_i − x_j| + regularization)` over `neighbors`.
    Repulsion {
        gain: f64,
        regularization: f64,
        neighbors: Vec<usize>,
    },
}

impl Secondary {
    pub fn eval(&self, agent: usize, states: &BTreeMap<usize, Vec<f64>>) -> Option<Vec<f64>> {
        match self {
            Secondary::None => None,
            Secondary::Repulsion {
                gain,
                regularization,
                neighbors,
            } => {
                let xi = &states[&agent];
                let mut out = vec![0.0; xi.len()];
                for j in neighbors.iter().filter(|&&j| j != agent) {
                    let xj = &states[j];
                    let d: Vec<f64> = xi.iter().zip(xj).map(|(a, b)| a - b).collect();
                    let n = d.iter().map(|v| v * v).sum::<f64>().sqrt() + regularization;
                    for (o, v) in out.iter_mut().zip(&d) {
                        *o += gain * v / n;
                    }
                }
                Some(out)
            }
        }
    }

    fn neighbors(&self) -> &[usize] {
        match self {
            Secondary::None => &[],
            Secondary::Repulsion { neighbors, .. } => neighbors,
        }
    }
}

/// Whether the controller compensates `f_u` or treats it as part of the coupling bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SecondaryMode {
    Known,
    #[default]
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentModel {
    pub id: usize,
    pub state_dim: usize,
    #[serde(default)]
    pub drift: Drift,
    #[serde(default)]
    pub input_map: InputMap,
    #[serde(default)]
    pub secondary: Secondary,
    #[serde(default)]
    pub secondary_mode: SecondaryMode,
}

impl AgentModel {
    pub fn single_integrator(id: usize, state_dim: usize) -> Self {
        Self {
            id,
            state_dim,
            drift: Drift::Zero,
            input_map: InputMap::Identity,
            secondary: Secondary::None,
            secondary_mode: SecondaryMode::Unknown,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_map.input_dim(self.state_dim)
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        self.drift
            .validate(self.state_dim)
            .map_err(|m| ControlError::Model(format!("agent {}: {m}", self.id)))?;
        if let InputMap::Constant { matrix } = &self.input_map {
            if matrix.len() != self.state_dim || matrix.iter().any(|r| r.len() != self.input_dim()) {
                return Err(ControlError::Model(format!("agent {}: input map must have {} equal rows", self.id, self.state_dim)));
            }
        }
        if self.input_dim() < self.state_dim {
            return Err(ControlError::Model(format!("agent {}: needs at least as many inputs as states", self.id)));
        }
        let sigma = self.input_map.min_singular_value(self.state_dim);
        if !(sigma > 1e-9) {
            return Err(ControlError::RankDeficient { agent: self.id, sigma });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clique {
    pub id: usize,
    pub members: Vec<usize>,
    pub barrier: CompositeBarrier,
    pub coupling_bound: f64,
    pub kappa: f64,
    pub layout: StateLayout,
}

impl Clique {
    pub fn new(id: usize, layout: StateLayout, barrier: CompositeBarrier, coupling_bound: f64, kappa: f64) -> Result<Self, ControlError> {
        if layout.total_dim() != barrier.dim() {
            return Err(ControlError::Model(format!(
                "clique {id}: layout has {} states, barrier expects {}",
                layout.total_dim(),
                barrier.dim()
            )));
        }
        if !(coupling_bound >= 0.0) || !(kappa > 0.0) {
            return Err(ControlError::Model(format!("clique {id}: need C >= 0 and kappa > 0")));
        }
        Ok(Self {
            id,
            members: layout.agents().collect(),
            barrier,
            coupling_bound,
            kappa,
            layout,
        })
    }

    /// Stacked clique state from per-agent states.
    pub fn stack(&self, states: &BTreeMap<usize, Vec<f64>>) -> Vec<f64> {
        self.members.iter().flat_map(|a| states[a].iter().copied()).collect()
    }

    /// `n̂ = sqrt(n̄_k · max_i n_i)` with the maximum over the whole team.
    pub fn n_hat(&self, max_agent_dim: usize) -> f64 {
        ((self.layout.total_dim() * max_agent_dim) as f64).sqrt()
    }

    fn block<'a>(&self, v: &'a [f64], agent: usize) -> &'a [f64] {
        let b = self.layout.block(agent).expect("agent is a clique member");
        &v[b.offset..b.offset + b.dim]
    }
}

/// Load-sharing weights from the per-agent gradient block norms.
pub fn load_share(block_norms: &[f64]) -> Vec<f64> {
    let total: f64 = block_norms.iter().sum();
    if total > ZERO_TOL {
        block_norms.iter().map(|n| n / total).collect()
    } else {
        vec![1.0; block_norms.len()]
    }
}

/// One agent's half-space constraint `aᵀ u ≥ rhs` plus the quantities it was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConstraint {
    pub a: Vec<f64>,
    pub rhs: f64,
    pub load_share: f64,
    /// `∂𝔟/∂x_i`.
    pub grad_block: Vec<f64>,
    pub barrier: f64,
    pub dbdt: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct CliqueEval {
    value: f64,
    grad: Vec<f64>,
    dbdt: f64,
    shares: BTreeMap<usize, f64>,
}

fn eval_clique(clique: &Clique, xk: &[f64], t: f64) -> Result<CliqueEval, ControlError> {
    let e = clique.barrier.gradients(xk, t)?;
    let norms: Vec<f64> = clique
        .members
        .iter()
        .map(|&a| crate::search::norm(clique.block(&e.grad_x, a)))
        .collect();
    let shares = clique.members.iter().copied().zip(load_share(&norms)).collect();
    Ok(CliqueEval {
        value: e.value,
        grad: e.grad_x,
        dbdt: e.dbdt,
        shares,
    })
}

fn constraint_from(
    clique: &Clique,
    ce: &CliqueEval,
    agent: &AgentModel,
    states: &BTreeMap<usize, Vec<f64>>,
    t: f64,
    max_agent_dim: usize,
) -> AgentConstraint {
    let gi = clique.block(&ce.grad, agent.id).to_vec();
    let gnorm = crate::search::norm(&gi);
    let xi = &states[&agent.id];
    let share = ce.shares[&agent.id];
    let dot = |v: &[f64]| gi.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let mut rhs = gnorm * clique.n_hat(max_agent_dim) * clique.coupling_bound
        - share * (ce.dbdt + clique.kappa * ce.value)
        - dot(&agent.drift.eval(xi, t));
    if agent.secondary_mode == SecondaryMode::Known {
        if let Some(fu) = agent.secondary.eval(agent.id, states) {
            rhs -= dot(&fu);
        }
    }
    AgentConstraint {
        a: agent.input_map.transpose_apply(&gi),
        rhs,
        load_share: share,
        grad_block: gi,
        barrier: ce.value,
        dbdt: ce.dbdt,
    }
}

/// Builds agent `i`'s constraint from its clique's stacked state.
pub fn agent_constraint(
    clique: &Clique,
    agent: &AgentModel,
    states: &BTreeMap<usize, Vec<f64>>,
    t: f64,
    max_agent_dim: usize,
) -> Result<AgentConstraint, ControlError> {
    let ce = eval_clique(clique, &clique.stack(states), t)?;
    Ok(constraint_from(clique, &ce, agent, states, t, max_agent_dim))
}

/// Minimizer of `|u|²` subject to `aᵀu ≥ rhs`.
pub fn solve_agent_qp(a: &[f64], rhs: f64) -> Option<Vec<f64>> {
    if rhs <= 0.0 {
        return Some(vec![0.0; a.len()]);
    }
    let sq: f64 = a.iter().map(|v| v * v).sum();
    if sq.sqrt() <= ZERO_TOL {
        return None;
    }
    let s = rhs / sq;
    Some(a.iter().map(|v| s * v).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentControl {
    /// Barrier part of the input, `v_i`.
    pub input: Vec<f64>,
    /// `aᵀu − rhs`; non-negative when the constraint holds.
    pub residual: f64,
    pub load_share: f64,
    pub grad_block: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeamControl {
    pub agents: BTreeMap<usize, AgentControl>,
    /// `None` once the clique's horizon has passed.
    pub barrier_values: BTreeMap<usize, Option<f64>>,
}

/// Agents plus the clique partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Team {
    pub agents: Vec<AgentModel>,
    pub cliques: Vec<Clique>,
}

impl Team {
    pub fn new(agents: Vec<AgentModel>, cliques: Vec<Clique>) -> Result<Self, ControlError> {
        let ids: BTreeSet<usize> = agents.iter().map(|a| a.id).collect();
        if ids.len() != agents.len() {
            return Err(ControlError::Model("duplicate agent id".into()));
        }
        for a in &agents {
            a.validate()?;
        }
        let mut seen = BTreeSet::new();
        for c in &cliques {
            for b in c.layout.blocks() {
                let Some(a) = agents.iter().find(|a| a.id == b.agent) else {
                    return Err(ControlError::Model(format!("clique {} names unknown agent {}", c.id, b.agent)));
                };
                if a.state_dim != b.dim {
                    return Err(ControlError::Model(format!("agent {} has dimension {}, clique {} says {}", a.id, a.state_dim, c.id, b.dim)));
                }
                if !seen.insert(b.agent) {
                    return Err(ControlError::Model(format!("agent {} belongs to more than one clique", b.agent)));
                }
            }
        }
        if seen != ids {
            return Err(ControlError::Model("cliques must cover every agent".into()));
        }
        for a in &agents {
            if a.secondary_mode == SecondaryMode::Known {
                let c = cliques.iter().find(|c| c.members.contains(&a.id)).unwrap();
                if a.secondary.neighbors().iter().any(|j| !c.members.contains(j)) {
                    return Err(ControlError::Model(format!(
                        "agent {}: a known secondary drift may only use clique members",
                        a.id
                    )));
                }
            }
        }
        Ok(Self { agents, cliques })
    }

    pub fn agent(&self, id: usize) -> &AgentModel {
        self.agents.iter().find(|a| a.id == id).expect("known agent")
    }

    pub fn max_agent_dim(&self) -> usize {
        self.agents.iter().map(|a| a.state_dim).max().unwrap_or(0)
    }

    /// Latest deadline over all cliques.
    pub fn horizon(&self) -> f64 {
        self.cliques.iter().map(|c| c.barrier.horizon()).fold(0.0, f64::max)
    }
}

/// Per-agent inputs for the whole team at time `t`.
///
/// Each agent only reads its own clique's stacked state. Cliques whose
/// horizon has passed apply zero input.
pub fn team_control(team: &Team, states: &BTreeMap<usize, Vec<f64>>, t: f64) -> Result<TeamControl, ControlError> {
    let max_dim = team.max_agent_dim();
    let mut out = TeamControl {
        agents: BTreeMap::new(),
        barrier_values: BTreeMap::new(),
    };
    for clique in &team.cliques {
        if t >= clique.barrier.horizon() {
            out.barrier_values.insert(clique.id, None);
            for &m in &clique.members {
                let a = team.agent(m);
                out.agents.insert(
                    m,
                    AgentControl {
                        input: vec![0.0; a.input_dim()],
                        residual: 0.0,
                        load_share: 0.0,
                        grad_block: vec![0.0; a.state_dim],
                    },
                );
            }
            continue;
        }
        let ce = eval_clique(clique, &clique.stack(states), t)?;
        out.barrier_values.insert(clique.id, Some(ce.value));
        for &m in &clique.members {
            let agent = team.agent(m);
            let con = constraint_from(clique, &ce, agent, states, t, max_dim);
            let Some(u) = solve_agent_qp(&con.a, con.rhs) else {
                return Err(ControlError::Infeasible {
                    t,
                    agent: m,
                    a_norm: crate::search::norm(&con.a),
                    rhs: con.rhs,
                    barrier: ce.value,
                });
            };
            let residual = con.a.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>() - con.rhs;
            out.agents.insert(
                m,
                AgentControl {
                    input: u,
                    residual,
                    load_share: con.load_share,
                    grad_block: con.grad_block,
                },
            );
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qp_closed_form_examples() {
        assert_eq!(solve_agent_qp(&[1.0, 0.0], 2.0).unwrap(), vec![2.0, 0.0]);
        assert_eq!(solve_agent_qp(&[3.0, 4.0], -1.0).unwrap(), vec![0.0, 0.0]);
        assert!(solve_agent_qp(&[0.0, 0.0], 1.0).is_none());
        assert_eq!(solve_agent_qp(&[0.0, 0.0], 0.0).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn load_share_cases() {
        assert_eq!(load_share(&[2.0, 2.0]), vec![0.5, 0.5]);
        assert_eq!(load_share(&[0.0, 0.0, 0.0]), vec![1.0, 1.0, 1.0]);
        let s = load_share(&[1.0, 3.0]);
        assert_eq!(s.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn n_hat_formula() {
        let layout = StateLayout::new(&[(1, 2), (2, 2), (3, 2)]).unwrap();
        assert_eq!(((layout.total_dim() * 2) as f64).sqrt(), 12f64.sqrt());
    }

    #[test]
    fn rank_check_uses_singular_values() {
        let good = InputMap::Constant {
            matrix: vec![vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]],
        };
        assert!(good.min_singular_value(2) > 0.5);
        let bad = InputMap::Constant {
            matrix: vec![vec![1.0, 2.0], vec![2.0, 4.0]],
        };
        assert!(bad.min_singular_value(2) < 1e-9);
        let mut a = AgentModel::single_integrator(1, 2);
        a.input_map = bad;
        assert!(matches!(a.validate(), Err(ControlError::RankDeficient { .. })));
    }

    #[test]
    fn transpose_apply_matches_matrix() {
        let g = InputMap::Constant {
            matrix: vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]],
        };
        assert_eq!(g.transpose_apply(&[1.0, -1.0]), vec![-3.0, -3.0, -3.0]);
        assert_eq!(g.apply(&[1.0, 0.0, -1.0]), vec![-2.0, -2.0]);
    }

    #[test]
    fn scripted_drift_holds_values() {
        let d = Drift::Scripted {
            times: vec![0.0, 1.0],
            values: vec![vec![1.0], vec![2.0]],
        };
        assert_eq!(d.eval(&[0.0], 0.5), vec![1.0]);
        assert_eq!(d.eval(&[0.0], 1.0), vec![2.0]);
    }

    #[test]
    fn repulsion_skips_self() {
        let s = Secondary::Repulsion {
            gain: 1.0,
            regularization: 0.01,
            neighbors: vec![1, 2],
        };
        let states: BTreeMap<usize, Vec<f64>> = [(1, vec![0.0, 0.0]), (2, vec![1.0, 0.0])].into();
        let f = s.eval(1, &states).unwrap();
        assert!((f[0] + 1.0 / 1.01).abs() < 1e-15 && f[1] == 0.0);
    }
}
