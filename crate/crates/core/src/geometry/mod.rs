//! Geometric primitives: exact nearest neighbours, rigid and similarity
//! alignment, trimmed ICP, hidden point removal, convex hulls, Chamfer
//! distance, and signed penetration depth.

mod chamfer;
mod hpr;
mod hull;
mod icp;
mod kabsch;
mod kdtree;
mod penetration;

pub use chamfer::{chamfer, chamfer_brute, one_sided_mean_sq};
pub use hpr::hpr;
pub use hull::{convex_hull_3d, ConvexHull};
pub use icp::{icp, icp_points, IcpConfig, IcpResult};
pub use kabsch::{kabsch, Alignment};
pub use kdtree::{nearest_linear, NeighborIndex};
pub use penetration::MeshNeighborhood;
