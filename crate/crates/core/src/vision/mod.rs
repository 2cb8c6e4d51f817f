//! Camera model, epipolar constraints and semi-direct feature tracking.

pub mod camera;
pub mod epipolar;
pub mod essential;
pub mod feature;
pub mod image;
pub mod patch;
pub mod semidirect;
pub mod warp;

pub use camera::{camera_pose, Camera};
pub use epipolar::{
    epipolar_residual, normalized_square, propagate_covariance, variance_terms, EpipolarFrame, EpipolarRow,
    PairCameras, VarianceTerms,
};
pub use essential::{ransac_essential, RansacConfig};
pub use feature::{features_from_text, features_to_text, load_features, save_features, FeatureKind, FeatureMatch};
pub use image::{DepthMap, GrayImage};
pub use patch::{refine_patch, Patch, RefineConfig, RefineFailure, Refinement};
pub use semidirect::{select_semidirect, track_semidirect, SemiDirectConfig};
pub use warp::{inverse_warp, warp_feature};
