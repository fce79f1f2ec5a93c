//! Schrödinger–Bass bridge solvers between empirical distributions.
//!
//! The main solver alternates bridge matching on a Gaussian-mixture potential
//! (closed-form drift, exact endpoint coupling) with a regression fit of the
//! inverse transport map. A grid-based Sinkhorn-type solver handles the 1D
//! case. Benchmarks, metrics and the experiment runner live alongside.

pub mod assignment;
pub mod datasets;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gmm;
pub mod model;
pub mod net;
pub mod optim;
pub mod points;
pub mod rng;
pub mod sampler;
pub mod sinkhorn1d;
pub mod trainer;

pub use error::{Error, Result};
pub use gmm::{ConditionalCoupling, GmmPotential};
pub use model::SbbModel;
pub use net::TransportNet;
pub use points::{Provenance, SampleBatch};
pub use trainer::{SbbConfig, TrainReport, Variant};
