//! Pedestrian trajectory forecasting engine.
//!
//! The crate is organized around the pipeline: raw trajectory files are
//! parsed into [`data::Scene`]s, cut into fixed-length samples with derived
//! kinematics ([`data`]), enriched with neighbor edge sequences
//! ([`social`]), fed through the attention-based CVAE network ([`model`]),
//! optimized with Adam ([`train`]) and scored with MAD/FAD metrics
//! ([`eval`]). The [`tensor`] module provides the dense-tensor autodiff
//! kernel everything else is built on; [`synth`] generates synthetic crowd
//! scenarios so the whole pipeline can be exercised without external
//! datasets.

pub mod config;
pub mod data;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod social;
pub mod synth;
pub mod tensor;
pub mod train;
