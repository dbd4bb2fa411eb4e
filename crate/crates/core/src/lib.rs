//! Simulation and learning stack for flip-and-perch ceiling landings of a
//! small quadrotor.
//!
//! The pipeline runs from planar rigid-body dynamics with leg contact
//! ([`dynamics`], [`contact`]) through optic-flow-like sensing ([`sensing`])
//! and the episodic environment ([`env`]) to a two-head Gaussian policy
//! ([`policy`]) trained with soft actor-critic ([`learner`]) and evaluated
//! over a grid of approach conditions ([`sweep`]).

pub mod checkpoint;
pub mod config;
pub mod contact;
pub mod dynamics;
pub mod env;
pub mod episode;
pub mod error;
pub mod learner;
pub mod nn;
pub mod policy;
pub mod rng;
pub mod run;
pub mod sensing;
pub mod sweep;

pub use error::{Error, Result};
