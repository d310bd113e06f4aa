//! Two-phase QoS-aware service selection: clustering-based local selection
//! followed by a controlled random search over the reduced pools.

pub mod adaptation;
pub mod aggregation;
pub mod clustering;
pub mod dependency_prep;
pub mod distsim;
pub mod global_selection;
pub mod local_selection;
pub mod model;
pub mod oracle;
pub mod pipeline;
pub mod seed;
pub mod workload;
