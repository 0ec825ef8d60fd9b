//! Many-goals reinforcement learning on a pixel gridworld.
//!
//! A single goal-conditioned action-value network is trained off-policy for
//! many goals at once from every transition. The crate also contains the
//! baselines it is compared against and an actor-critic learner that uses the
//! same network trunk for transfer and auxiliary-task experiments.

mod error;

pub mod buffers;
pub mod eval;
pub mod gridworld;
pub mod maintask;
pub mod mastery;
pub mod numerics;
pub mod priority;
pub mod seed;
pub mod uvfa;

pub use buffers::{EpisodeBuffer, GoalBuffer, GoalId, ReplayBuffer, Transition};
pub use error::{Error, Result};
pub use gridworld::{Action, Cell, Env, EnvState, Layout, Observation, StartMode, World};
pub use numerics::{Layer, LayerSpec, RmsProp, Tensor};
pub use priority::{GoalSelection, GoalStats};
pub use seed::SeedTree;
