//! Segment-based localisation of LIDAR scans against a prior map in natural,
//! vegetated environments.
//!
//! The pipeline removes the ground with a progressive morphological filter,
//! clusters what is left into object-sized segments, anchors each segment
//! with a key pose and a polar height descriptor, and proposes segment
//! matches with a random forest. Geometrically consistent matches then fix
//! the 6-DoF pose of the scan in the map.
//!
//! ```no_run
//! use nsm_core::{config::PipelineConfig, forest::rf_load, io, pipeline};
//! use std::path::Path;
//!
//! let cfg = PipelineConfig::default();
//! let (target, _) = io::load_cloud(Path::new("map.ply"), io::CloudFormat::PlyAscii)?;
//! let (scan, _) = io::load_cloud(Path::new("scan.ply"), io::CloudFormat::PlyAscii)?;
//! let map = pipeline::build_map(&target, &cfg)?;
//! let model = rf_load(Path::new("model.rf"))?;
//! let outcome = pipeline::localize(&scan, &map, &model, &cfg)?;
//! println!("{:?}", outcome.result.status);
//! # Ok::<(), nsm_core::Error>(())
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod forest;
pub mod geometry;
pub mod ground;
pub mod index;
pub mod io;
pub mod map;
pub mod matching;
pub mod pipeline;
pub mod registration;
pub mod segmentation;
pub mod synthgen;

pub use error::{Error, ErrorClass, Result};
pub use geometry::{Point, PointCloud, RigidTransform};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/scenes.md")]
    mod scenes {}
    #[doc = include_str!("../../../book/src/ground.md")]
    mod ground {}
    #[doc = include_str!("../../../book/src/segments.md")]
    mod segments {}
    #[doc = include_str!("../../../book/src/descriptor.md")]
    mod descriptor {}
    #[doc = include_str!("../../../book/src/matching.md")]
    mod matching {}
    #[doc = include_str!("../../../book/src/registration.md")]
    mod registration {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
