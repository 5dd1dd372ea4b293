//! k-means on the fused representation and the clustering metrics.

mod hungarian;
mod kmeans;
mod metrics;

pub use hungarian::{assignment_cost, hungarian};
pub use kmeans::{kmeans, kmeans_single, ClusterResult, MAX_ITERS};
pub use metrics::{acc, contingency, evaluate, nmi, purity, Contingency, Metrics};
