//! Post-hoc analyses of trained networks and their recordings.

pub mod lesion;
pub mod modularity;
pub mod pca;
pub mod split;
pub mod stats;

pub use lesion::{bin_neurons, bin_values, current_task_loss, lesion_eval, LesionReport, LesionRow, PropertyBins, PropertyId, N_BINS};
pub use modularity::{
    allegiance_matrix, build_layers, community_count, louvain_optimize, louvain_with_restarts, modularity_q, stationarity,
    CommunityAssignment, LayeredNetwork, Stationarity, DEFAULT_RESTARTS,
};
pub use pca::{pca_delay, PcaEmbedding};
pub use split::{split_by_metric, SplitSummary};
pub use stats::{membrane_stats, MembraneStats};
