//! Time-varying control barrier functions for multi-agent signal temporal
//! logic tasks.
//!
//! The pipeline is: [`stl::parse`] a task per clique, [`stl::normalize`] it
//! into single-literal units, search funnel parameters and a robustness level
//! with [`search::maximize_r`], then drive the agents with the decentralized
//! min-norm controller in [`controller`] inside the Euler simulation of
//! [`sim`]. [`scenario`] wires all of this to a TOML configuration and is what
//! the `stlcbf` binary uses.
//!
//! ```no_run
//! use stlcbf::{construct, simulate, verify_log, ScenarioConfig};
//!
//! let cfg = ScenarioConfig::demo();
//! let doc = construct(&cfg).unwrap();
//! let run = simulate(&cfg, &doc, None, None).unwrap();
//! assert!(verify_log(&cfg, &doc, &run.log).unwrap().pass);
//! ```

pub mod stl;
pub mod barrier;
pub mod search;
pub mod controller;
pub mod sim;
pub mod scenario;

pub use barrier::{CompositeBarrier, GammaParams};
pub use controller::{AgentModel, Clique, Team};
pub use scenario::{build_team, construct, simulate, verify_log, BarrierDocument, ScenarioConfig, ScenarioError};
pub use search::{SearchConfig, SearchResult};
pub use sim::{SimConfig, TrajectoryLog, VerifyReport};
pub use stl::{Formula, OperatorUnit, Predicate, SampledSignal, StateLayout};
