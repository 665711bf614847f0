//! Desk-scale latent world-model trajectory planning.
//!
//! The crate is organised bottom-up:
//!
//! * [`geom`]: planar geometry: oriented boxes, polygons, trajectories, grids.
//! * [`nnet`]: a small reverse-mode autodiff tape, dense nets and optimizers.
//! * [`world`]: synthetic driving scenarios, the rasterised latent encoder and
//!   the world decoder used for self-supervised future prediction.
//! * [`planner`]: query interaction, target/path/trajectory decoding and the
//!   local-aware iterative refinement loop.
//! * [`imitation`]: supervised + self-supervised pretraining.
//! * [`grpo`]: Gaussianised trajectories, collision rewards and group-relative
//!   policy fine-tuning.
//! * [`harness`]: metrics, persistence, experiment configs and ablations.

pub mod error;
pub mod geom;
pub mod grpo;
pub mod harness;
pub mod imitation;
pub mod model;
pub mod nnet;
pub mod planner;
pub mod rng;
pub mod world;

pub use error::{Error, Result};
