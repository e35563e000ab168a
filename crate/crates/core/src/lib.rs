//! Federated rank learning with group-aware majority voting.
//!
//! Clients train edge-popup scores over a shared frozen random network and
//! upload only the ranking of their edges. The server votes rankings within
//! each group, then across groups, and broadcasts top-k% masks.

pub mod codec;
pub mod data;
pub mod edgepopup;
pub mod error;
pub mod federation;
pub mod groupinfer;
pub mod metrics;
pub mod net;
pub mod ranking;
pub mod seed;

pub use data::{Client, Dataset, GroupSpec, GroupTransform, GroupedDataSpec, TabularBiasSpec, TransformKind};
pub use edgepopup::{EpConfig, EpOutcome};
pub use error::{Error, Result};
pub use federation::{Algorithm, Evaluation, FederationConfig, GroupCount, InferenceMode, RoundRecord};
pub use groupinfer::{ClusterAssignment, GroupRegistry, PassCount};
pub use metrics::{CommTotals, FairnessReport, LevelStats, MetricsRow};
pub use net::{Batch, LayerParams, Matrix, NetSpec, SgdConfig, SuperNetwork};
pub use ranking::{BinaryMask, Ranking, RankingCoding, WireSizeModel, WireSizes};
