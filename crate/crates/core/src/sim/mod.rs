//! Individual-level stochastic simulator of cluster outbreaks.

pub mod cluster;
pub mod individual;
pub mod schedule;
pub mod system;

pub use cluster::{spawn_cluster, ClusterDay, ClusterState, ClusterStepOutcome, IndividualAction, IndividualDayCost};
pub use individual::{IndividualState, PendingResult, TestResult};
pub use schedule::make_schedule;
pub use system::{ClusterStepRecord, JointAction, MultiClusterState, SystemStepReport};
