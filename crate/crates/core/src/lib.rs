//! Guided diffusion for generating ligand point clouds inside a fixed
//! protein pocket.
//!
//! The crate is organised bottom-up: [`schedule`] and [`diffusion`] hold the
//! forward/reverse kernels, [`net`] the equivariant network used as denoiser
//! and property regressor, [`guidance`] the guided samplers, [`training`] the
//! optimisation loops, [`oracle`] a differentiable synthetic affinity
//! function with a dataset generator, and [`metrics`] the evaluation suite.

pub mod autodiff;
pub mod checkpoint;
pub mod derivation;
pub mod diffusion;
pub mod error;
pub mod geom;
pub mod guidance;
pub mod io;
pub mod metrics;
pub mod molsys;
pub mod net;
pub mod oracle;
pub mod pipeline;
pub mod rng;
pub mod schedule;
pub mod stats;
pub mod training;

pub use error::{Error, Result};
pub use molsys::{AtomCloud, ComplexRecord, Element, Labels, MoleculeCloud, PocketCloud, Vocab};
pub use schedule::{NoiseSchedule, ScheduleConfig};
