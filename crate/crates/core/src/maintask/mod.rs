//! Main-task learning: push the block onto a target cell with an n-step
//! advantage actor-critic, optionally starting from a pretrained trunk or
//! alongside an auxiliary loss.

mod net;
mod reward_prediction;
mod train;

use rand::Rng;

use crate::gridworld::{Cell, EnvState, StartMode, World};
use crate::{Error, Result};

pub use net::{a2c_loss, a2c_output_loss, index, policy_probs, ActorCritic, AuxTask, OutputLoss, Rollout};
pub use reward_prediction::{reward_class, rp_loss, RewardPredictor, RpBatch, RpBuffer, RpOutput, REWARD_CLASSES};
pub use train::{
    finetune_a2c, pretrain_many_goals, pretrain_reward_prediction, train_aux, A2cRun, PretrainConfig, Pretrained,
    RpPretrainRun,
};

/// Sparse block-delivery task: reward 1 when the block lands on
/// `target_block`, which also ends the episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MainTaskSpec {
    pub target_block: Cell,
    pub episode_cap: usize,
    pub gamma: f64,
    /// Where episodes begin; solved states are never used as starts.
    pub start: StartMode,
}

impl MainTaskSpec {
    pub const EPISODE_CAP: usize = 200;
    pub const GAMMA: f64 = 0.99;

    pub fn new(target_block: Cell) -> Self {
        Self {
            target_block,
            episode_cap: Self::EPISODE_CAP,
            gamma: Self::GAMMA,
            start: StartMode::Fixed,
        }
    }

    /// Target one cell right of the compact layout's block start.
    pub fn compact() -> Self {
        Self::new(Cell::new(1, 3))
    }

    pub fn validate(&self, world: &World) -> Result<()> {
        if !world.layout().block_can_occupy(self.target_block) {
            return Err(Error::Config(format!(
                "target cell {} is not plain floor",
                self.target_block
            )));
        }
        if self.start == StartMode::Fixed && self.is_solved(&world.canonical_start()) {
            return Err(Error::Config("the fixed start is already solved".into()));
        }
        if !world.feasible_states().iter().any(|s| self.is_solved(s)) {
            return Err(Error::Config(format!(
                "the block can never reach {}",
                self.target_block
            )));
        }
        Ok(())
    }

    pub fn is_solved(&self, state: &EnvState) -> bool {
        state.block_cell == self.target_block
    }

    pub fn reward(&self, state: &EnvState) -> f64 {
        if self.is_solved(state) {
            1.0
        } else {
            0.0
        }
    }

    pub fn with_start(mut self, start: StartMode) -> Self {
        self.start = start;
        self
    }

    /// A start state drawn by `start` that is not already solved.
    pub fn reset(&self, world: &World, rng: &mut impl Rng) -> EnvState {
        loop {
            let s = world.reset(rng, self.start);
            if !self.is_solved(&s) {
                return s;
            }
        }
    }
}

/// Hyperparameters of the actor-critic learner.
#[derive(Clone, Debug, PartialEq)]
pub struct A2cConfig {
    /// Environment steps across all workers.
    pub total_steps: u64,
    pub rollout: usize,
    pub workers: usize,
    pub value_weight: f64,
    pub entropy_weight: f64,
    /// Weight of the many-goals auxiliary loss.
    pub aux_weight: f64,
    /// Weight of the reward-prediction auxiliary loss.
    pub rp_weight: f64,
    pub step_size: f64,
    pub hidden: usize,
    pub embed: usize,
    pub kbest_capacity: usize,
    pub target_sync: u64,
    /// Emit return metrics every this many steps.
    pub eval_period: u64,
    /// Fraction of the budget at the end whose episodes define the final
    /// return.
    pub final_fraction: f64,
    pub seed: u64,
}

impl Default for A2cConfig {
    fn default() -> Self {
        Self {
            total_steps: 100_000,
            rollout: 5,
            workers: 4,
            value_weight: 0.5,
            entropy_weight: 0.01,
            aux_weight: 0.02,
            rp_weight: 1.0,
            step_size: crate::RmsProp::DEFAULT_STEP_SIZE,
            hidden: 512,
            embed: 1024,
            kbest_capacity: crate::EpisodeBuffer::DESK_CAPACITY,
            target_sync: 1_000,
            eval_period: 5_000,
            final_fraction: 0.2,
            seed: 0,
        }
    }
}

impl A2cConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.rollout == 0 || self.workers == 0 {
            return Err(Error::Config("rollout and workers must be positive".into()));
        }
        if self.value_weight < 0.0 || self.entropy_weight < 0.0 || self.aux_weight < 0.0 || self.rp_weight < 0.0 {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.final_fraction) {
            return Err(Error::Config("final_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// `R_t = r_t + γ R_{t+1}`, cut at terminal steps, seeded with `bootstrap`
/// after the last step.
pub fn compute_returns(rewards: &[f64], dones: &[bool], bootstrap: f64, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut running = bootstrap;
    for t in (0..rewards.len()).rev() {
        if dones[t] {
            running = 0.0;
        }
        running = rewards[t] + gamma * running;
        out[t] = running;
    }
    out
}
