//! Rigid point-cloud registration by moving a small pseudo point set through
//! fixed distance fields of the two scans.
//!
//! ```no_run
//! use ifr_core::{generate_shape, register, IfrConfig, ShapeKind};
//!
//! let target = generate_shape(ShapeKind::Composite, 2048, 1).unwrap();
//! let source = target.clone();
//! let report = register(&source.points, &target.points, &IfrConfig::synthetic()).unwrap();
//! println!("{}", report.transform);
//! ```

pub mod cloud;
pub mod error;
pub mod eval;
pub mod field;
pub mod geometry;
pub mod icp;
pub mod io;
pub mod kdtree;
pub mod pseudo;
pub mod registration;
pub mod solver;

pub use cloud::PointCloud;
pub use error::{Error, Result};
pub use field::{build_field, evaluate_feature, DistanceField, FeatureVector};
pub use geometry::{RigidTransform, Twist, Vec3};
pub use icp::{icp_register, IcpConfig};
pub use io::{generate_shape, read_cloud, voxel_downsample, write_cloud, CloudFormat, ShapeKind};
pub use pseudo::{PseudoSet, TruncationParams};
pub use registration::{register, IfrConfig, PseudoStrategy, RegistrationReport};
