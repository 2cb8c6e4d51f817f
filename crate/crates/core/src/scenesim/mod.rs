//! Synthetic worlds, two-pass loop trajectories and the measurement channel.

mod noise;
mod render;
mod scene;
mod simulate;

pub use noise::{NoiseSpec, Regime, RegimeUnits};
pub use render::{landmark_pixel, render_view};
pub use scene::{build_scene, texture, PathSpec, Quad, Scene, SceneKind};
pub use simulate::{
    simulate_loop, GroundTruthRecord, LoopOptions, PairMeasurements, RenderedPair, ScenarioConfig, Simulation,
    MAPPING_END, MAX_PAIRS, REVISIT_START,
};
