//! Multi-scale hierarchical cascade forests for telling real face images from
//! generated ones.
//!
//! Pipeline: [`features`] turns an image into per-scale patch vectors,
//! [`cascade`] grows a hierarchical cascade per scale on top of the trees in
//! [`forest`], and [`multiscale`] wires the scales together. [`hybrid`] adds
//! dense refinement heads, [`divconq`] trains on data subsets with forest
//! selection, and [`eval`] covers metrics, perturbations and synthetic data.

pub mod archive;
pub mod cascade;
pub mod config;
pub mod divconq;
pub mod error;
pub mod eval;
pub mod features;
pub mod forest;
pub mod hybrid;
pub mod matrix;
pub mod multiscale;
pub mod prob;
pub mod seed;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use prob::ProbVector;
