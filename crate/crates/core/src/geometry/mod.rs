//! Point clouds, multi-resolution surfels and point-to-plane ICP rows.

mod cloud;
mod icp;
mod surfel;

pub use cloud::{extract_cloud, ExtractionConfig, PointCloud};
pub use icp::{icp_residuals, match_surfels, MatchConfig, SurfelMap, SurfelMatch};
pub use surfel::{build_surfels, Surfel, SurfelConfig};
