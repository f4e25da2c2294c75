//! Data-driven attack detection and set-theoretic emergency control for
//! constrained linear plants with unknown dynamics.
//!
//! The pipeline learns a matrix zonotope of models consistent with noisy
//! input-state data, uses it for a reachable-set anomaly detector and a
//! plant-side safety check, and synthesizes a family of robust one-step
//! controllable sets that back an emergency controller.

pub mod config;
pub mod controllers;
pub mod datamodel;
pub mod error;
pub mod lp;
pub mod persist;
pub mod pipeline;
pub mod reach;
pub mod setops;
pub mod sim;
pub mod stc;

pub use error::{Error, Result};
