//! Deterministic multi-peer simulation: scenario configuration, workload
//! generation, ordering, the serial reference validator, and virtual-time
//! and wall-clock drivers.

pub mod config;
pub mod des;
pub mod oracle;
pub mod orderer;
pub mod scaleup;
pub mod scenario;
pub mod stream;
pub mod wall;
pub mod workload;

pub use config::{Clock, ConfigInvalid, ScenarioConfig, WorkloadKind};
pub use des::{run_org, DesOutcome, DesParams};
pub use oracle::{serial_oracle, OracleOutcome, SerialOracle, WorldState};
pub use orderer::Orderer;
pub use stream::{generate_stream, BlockStream};
pub use workload::{Generator, SmallbankOp, TxKind};
pub use scaleup::{run_scale_up, ScaleUpReport};
pub use scenario::{run_scenario, RunReport, ScenarioError};
pub use wall::{run_org_wall, WallOutcome, WallParams};
