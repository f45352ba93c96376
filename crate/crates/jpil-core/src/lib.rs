//! Localization of a small, low-overlap 3D spatial map against a large
//! reference triangle mesh.
//!
//! Both the reference model and the session map are assumed pre-aligned with
//! the East-North-Up (ENU) geographic frame, which makes the sought rigid
//! transform translation-dominant and lets descriptors use a globally shared
//! local reference frame. The pipeline is:
//!
//! 1. Sample both meshes into point clouds ([`cloud::sample_mesh`]).
//! 2. Extract keypoints with eigen-feature tests ([`keypoints`]).
//! 3. Compute translation-specific binary shape context descriptors and
//!    match them under Hamming distance ([`descriptor`]).
//! 4. Cluster matches into multiple candidate rigid transforms
//!    ([`registration`]) — small maps on repetitive structures yield several.
//! 5. Disambiguate candidates by rendering a synthetic spherical image at
//!    each candidate pose ([`spherical`]) and checking it against the real
//!    camera image via orientation-constrained spherical pose estimation
//!    ([`cpe`]).
//!
//! [`pipeline::localize`] orchestrates the full procedure.

pub mod cloud;
pub mod config;
pub mod cpe;
pub mod descriptor;
pub mod error;
pub mod features;
pub mod geom;
pub mod io;
pub mod keypoints;
pub mod mesh;
pub mod pipeline;
pub mod registration;
pub mod spherical;

pub use cloud::PointCloud;
pub use config::JpilConfig;
pub use error::{Error, Result};
pub use geom::{BoundingBox, HeadsetState, OrientationENU, Point3, RigidTransform};
pub use mesh::{Bvh, TriangleMesh};
pub use pipeline::{localize, measure_point, Gate, LocalizationRequest, LocalizationResult};
