//! Scenario configuration (TOML) and the construct → simulate → verify pipeline.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::controller::{AgentModel, Clique, ControlError, Drift, InputMap, Secondary, SecondaryMode, Team};
use crate::search::{maximize_r, SearchConfig, SearchDiagnostics, SearchError};
use crate::sim::{run, verify, CouplingTerm, SimConfig, SimError, SimOutcome, TrajectoryLog, VerifyReport};
use crate::stl::{normalize, parse, Formula, StateLayout, StlError};
use crate::barrier::CompositeBarrier;

/// The four-agent scenario shipped with the CLI's `demo` command.
pub const DEMO_CONFIG: &str = include_str!("../fixtures/four_agent_demo.toml");

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("config: {0}")]
    Config(String),
    #[error("clique {clique}: formula: {source}")]
    Formula {
        clique: usize,
        #[source]
        source: StlError,
    },
    #[error("clique {clique}: {source}")]
    Search {
        clique: usize,
        #[source]
        source: SearchError,
    },
    #[error("barrier document was produced by config {found}, current config hashes to {expected}")]
    HashMismatch { expected: String, found: String },
    #[error("clique {0} has no feasible barrier")]
    Infeasible(usize),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub id: usize,
    pub dim: usize,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub drift: Drift,
    #[serde(default)]
    pub input_map: InputMap,
    #[serde(default)]
    pub secondary: Secondary,
    #[serde(default)]
    pub secondary_mode: SecondaryMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliqueConfig {
    pub id: usize,
    pub members: Vec<usize>,
    pub formula: String,
    pub coupling_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub agents: Vec<AgentConfig>,
    pub cliques: Vec<CliqueConfig>,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub sim: SimConfig,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn demo() -> Self {
        Self::from_toml(DEMO_CONFIG).expect("shipped demo config is valid")
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Config(m));
        let mut ids = BTreeSet::new();
        for a in &self.agents {
            if !ids.insert(a.id) {
                return bad(format!("duplicate agent id {}", a.id));
            }
            if a.x0.len() != a.dim {
                return bad(format!("agent {}: x0 has {} entries, dim is {}", a.id, a.x0.len(), a.dim));
            }
        }
        let mut covered = BTreeSet::new();
        let mut cids = BTreeSet::new();
        for c in &self.cliques {
            if !cids.insert(c.id) {
                return bad(format!("duplicate clique id {}", c.id));
            }
            if c.members.is_empty() {
                return bad(format!("clique {} has no members", c.id));
            }
            for m in &c.members {
                if !ids.contains(m) {
                    return bad(format!("clique {} names unknown agent {m}", c.id));
                }
                if !covered.insert(*m) {
                    return bad(format!("agent {m} is in more than one clique"));
                }
            }
        }
        if covered != ids {
            return bad("cliques must partition the agents".into());
        }
        for a in &self.agents {
            if let Secondary::Repulsion { neighbors, .. } = &a.secondary {
                if let Some(j) = neighbors.iter().find(|j| !ids.contains(j)) {
                    return bad(format!("agent {}: repulsion neighbor {j} is not an agent", a.id));
                }
            }
        }
        for c in &self.sim.couplings {
            let (agent, targets) = match c {
                CouplingTerm::SaturatingAttraction { agent, targets, .. } => (agent, targets.as_slice()),
                CouplingTerm::Scripted { agent, .. } => (agent, &[][..]),
            };
            if let Some(j) = std::iter::once(agent).chain(targets).find(|j| !ids.contains(j)) {
                return bad(format!("coupling on agent {agent} refers to unknown agent {j}"));
            }
        }
        if !(self.sim.dt > 0.0) {
            return bad(format!("sim.dt must be > 0, got {}", self.sim.dt));
        }
        if !(self.sim.noise.bound >= 0.0) {
            return bad(format!("sim.noise.bound must be >= 0, got {}", self.sim.noise.bound));
        }
        self.search.validate().map_err(|e| ScenarioError::Config(e.to_string()))?;
        Ok(())
    }

    /// SHA-256 over the canonical JSON form of the configuration.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canon.as_bytes()))
    }

    fn agent(&self, id: usize) -> &AgentConfig {
        self.agents.iter().find(|a| a.id == id).expect("validated")
    }

    pub fn layout(&self, clique: &CliqueConfig) -> Result<StateLayout, ScenarioError> {
        let dims: Vec<(usize, usize)> = clique.members.iter().map(|&m| (m, self.agent(m).dim)).collect();
        StateLayout::new(&dims).map_err(|source| ScenarioError::Formula { clique: clique.id, source })
    }

    pub fn formulas(&self) -> Result<BTreeMap<usize, Formula>, ScenarioError> {
        self.cliques
            .iter()
            .map(|c| {
                let layout = self.layout(c)?;
                let f = parse(&c.formula, &layout).map_err(|source| ScenarioError::Formula { clique: c.id, source })?;
                Ok((c.id, f))
            })
            .collect()
    }

    pub fn initial_states(&self) -> BTreeMap<usize, Vec<f64>> {
        self.agents.iter().map(|a| (a.id, a.x0.clone())).collect()
    }

    pub fn stacked_x0(&self, clique: &CliqueConfig) -> Vec<f64> {
        clique.members.iter().flat_map(|&m| self.agent(m).x0.iter().copied()).collect()
    }
}

/// Offline result for one clique.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CliqueDesign {
    pub clique: usize,
    pub members: Vec<usize>,
    pub feasible: bool,
    pub r_star: f64,
    pub eta: f64,
    pub delta: f64,
    pub kappa: f64,
    pub barrier: Option<CompositeBarrier>,
    pub witnesses: Vec<Vec<f64>>,
    pub diagnostics: SearchDiagnostics,
}

/// Output of `construct`, consumed by `simulate` and `verify`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierDocument {
    pub config_hash: String,
    pub cliques: Vec<CliqueDesign>,
}

impl BarrierDocument {
    pub fn feasible(&self) -> bool {
        self.cliques.iter().all(|c| c.feasible)
    }

    pub fn r_stars(&self) -> BTreeMap<usize, f64> {
        self.cliques.iter().map(|c| (c.clique, c.r_star)).collect()
    }

    fn check(&self, cfg: &ScenarioConfig) -> Result<(), ScenarioError> {
        let expected = cfg.hash();
        if self.config_hash != expected {
            return Err(ScenarioError::HashMismatch {
                expected,
                found: self.config_hash.clone(),
            });
        }
        Ok(())
    }
}

/// Runs the parameter search for every clique.
pub fn construct(cfg: &ScenarioConfig) -> Result<BarrierDocument, ScenarioError> {
    let formulas = cfg.formulas()?;
    let mut cliques = Vec::new();
    for c in &cfg.cliques {
        let units = normalize(&formulas[&c.id]);
        let x0 = cfg.stacked_x0(c);
        let res = maximize_r(&units, &x0, &cfg.search).map_err(|source| ScenarioError::Search { clique: c.id, source })?;
        log::info!("clique {}: feasible = {}, r* = {:.6}, kappa = {:.4}", c.id, res.feasible, res.r_star, res.kappa);
        cliques.push(CliqueDesign {
            clique: c.id,
            members: c.members.clone(),
            feasible: res.feasible,
            r_star: res.r_star,
            eta: res.eta,
            delta: res.delta,
            kappa: res.kappa,
            barrier: res.barrier,
            witnesses: res.witnesses,
            diagnostics: res.diagnostics,
        });
    }
    Ok(BarrierDocument {
        config_hash: cfg.hash(),
        cliques,
    })
}

pub fn build_team(cfg: &ScenarioConfig, doc: &BarrierDocument) -> Result<Team, ScenarioError> {
    doc.check(cfg)?;
    let agents = cfg
        .agents
        .iter()
        .map(|a| AgentModel {
            id: a.id,
            state_dim: a.dim,
            drift: a.drift.clone(),
            input_map: a.input_map.clone(),
            secondary: a.secondary.clone(),
            secondary_mode: a.secondary_mode,
        })
        .collect();
    let mut cliques = Vec::new();
    for c in &cfg.cliques {
        let design = doc
            .cliques
            .iter()
            .find(|d| d.clique == c.id)
            .ok_or_else(|| ScenarioError::Config(format!("barrier document lacks clique {}", c.id)))?;
        let barrier = match (&design.barrier, design.feasible) {
            (Some(b), true) => b.clone(),
            _ => return Err(ScenarioError::Infeasible(c.id)),
        };
        cliques.push(Clique::new(c.id, cfg.layout(c)?, barrier, c.coupling_bound, design.kappa)?);
    }
    Ok(Team::new(agents, cliques)?)
}

/// Simulation with optional seed and step-size overrides.
pub fn simulate(cfg: &ScenarioConfig, doc: &BarrierDocument, seed: Option<u64>, dt: Option<f64>) -> Result<SimOutcome, ScenarioError> {
    let team = build_team(cfg, doc)?;
    let mut sim = cfg.sim.clone();
    if let Some(s) = seed {
        sim.noise.seed = s;
    }
    if let Some(dt) = dt {
        sim.dt = dt;
    }
    Ok(run(&team, cfg.initial_states(), &sim)?)
}

/// Default barrier tolerance used by `verify`.
pub const BARRIER_TOLERANCE: f64 = 1e-3;

pub fn verify_log(cfg: &ScenarioConfig, doc: &BarrierDocument, log: &TrajectoryLog) -> Result<VerifyReport, ScenarioError> {
    let team = build_team(cfg, doc)?;
    Ok(verify(log, &team, &cfg.formulas()?, &doc.r_stars(), BARRIER_TOLERANCE)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_config_parses_and_partitions() {
        let cfg = ScenarioConfig::demo();
        assert_eq!(cfg.agents.len(), 4);
        assert_eq!(cfg.cliques.len(), 2);
        assert_eq!(cfg.formulas().unwrap().len(), 2);
    }

    #[test]
    fn hash_tracks_content() {
        let a = ScenarioConfig::demo();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.sim.dt = 0.01;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn overlapping_cliques_are_rejected() {
        let text = DEMO_CONFIG.replace("members = [4]", "members = [3, 4]");
        assert!(matches!(ScenarioConfig::from_toml(&text), Err(ScenarioError::Config(_))));
    }

    #[test]
    fn dangling_agent_references_are_rejected() {
        let text = DEMO_CONFIG.replace("targets = [1, 2]", "targets = [1, 7]");
        assert!(matches!(ScenarioConfig::from_toml(&text), Err(ScenarioError::Config(m)) if m.contains("unknown agent 7")));
        let text = DEMO_CONFIG.replacen("neighbors = [1, 2, 3]", "neighbors = [1, 5]", 1);
        assert!(matches!(ScenarioConfig::from_toml(&text), Err(ScenarioError::Config(_))));
        let text = DEMO_CONFIG.replace("dt = 0.005", "dt = 0.0");
        assert!(matches!(ScenarioConfig::from_toml(&text), Err(ScenarioError::Config(_))));
    }
}
