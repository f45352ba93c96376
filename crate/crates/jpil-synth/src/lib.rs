//! Synthetic scenes and the evaluation protocols for the localization
//! pipeline: orientation-error sweeps, threshold sweeps and the random-walk
//! minimum-surface-area comparison against registration-only localization.

pub mod scene;
pub mod session;
pub mod sweeps;
pub mod walks;

pub use scene::{generate_scene, Scene, SceneSpec};
pub use session::{simulate_session, SessionParams, SessionTruth};
pub use sweeps::{sweep, SweepParameter, SweepRecord};
pub use walks::{run_walk_cdf, WalkConfig, WalkRecord};
