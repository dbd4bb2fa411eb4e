//! Soft actor-critic training.

pub mod replay;
pub mod sac;
pub mod train;

pub use replay::{Batch, ReplayBuffer};
pub use sac::{Sac, SacHyperparams, UpdateStats};
pub use train::{EpisodeStats, LandingTask, Rollout, Task, ToyTask, Trainer};
