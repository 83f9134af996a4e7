//! Execute-order-validate ledger engine: a dependency-graph validation
//! pipeline, sparse peers with distributed validation, state snapshots, and
//! a deterministic simulator that checks them against a serial validator.

pub mod codec;
pub mod digest;
pub mod graph;
pub mod merkle;
pub mod model;
pub mod snapshot;
pub mod sparse;
pub mod state;
pub mod dist;
pub mod validate;
pub mod peer;
pub mod results;
pub mod fixtures;
pub mod metrics;
pub mod pipeline;
pub mod sim;

pub use digest::Digest;
pub use dist::{CommitMode, ContractVerdict};
pub use graph::{DependencyGraph, DependencyKind, KindSet};
pub use metrics::{theoretical_max_tps, PeerMetrics};
pub use model::{
    seal_block, Block, ContractId, EndorsementPolicy, KeyRegistry, OrgId, RwSet, StateKey, Transaction, TxRef,
    TxValidity, Version,
};
pub use peer::{PeerCore, PeerError, SyncPeer};
pub use pipeline::{Pipeline, PipelineConfig, PipelineError};
pub use snapshot::{extract_snapshot, SnapshotManifest};
pub use sparse::{make_sparse, verify_sparse, DeliveredBlock, Filter, PeerId, SparseBlock};
pub use state::{StateDb, StateEngine};
