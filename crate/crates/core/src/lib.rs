//! Modeling and optimization of beyond-diagonal reconfigurable intelligent
//! surfaces (BD-RIS) in the presence of mutual coupling between elements.
//!
//! - [`network`]: network parameters, S/Z conversion and the equivalent channel models.
//! - [`em`]: thin-wire dipole scenario synthesis.
//! - [`architecture`]: single/group/fully-connected constraints and the initial design.
//! - [`optimizer`]: the coupling-aware iterative gain maximizer.
//! - [`oracle`]: brute-force reference search for small surfaces.
//! - [`experiment`]: scenario caching and sweep pipelines behind the CLI.

pub mod architecture;
pub mod em;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod network;
pub mod optimizer;
pub mod oracle;
pub mod quadrature;

pub use architecture::{RisArchitecture, Topology, TunableImpedance};
pub use em::{build_scenario, decouple, ScenarioConfig};
pub use error::{Error, Result};
pub use network::{channel_gain, ChannelTerms};
pub use experiment::{ArchRule, CouplingMode, RunRecord, ScenarioCache, SweepSpec};
pub use optimizer::{optimize, OptimizationResult, OptimizerConfig, Termination};
pub use oracle::{oracle_search, OracleResult};
