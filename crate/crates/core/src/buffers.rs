//! Transition replay, the deduplicating goal buffer and the K-best episode
//! store.

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::gridworld::{Action, Observation};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BufferError {
    #[error("cannot sample from an empty replay buffer")]
    EmptyReplay,
    #[error("cannot sample from an empty goal buffer")]
    EmptyGoals,
    #[error("no stored episode has {0} or more transitions")]
    NoLongEpisode(usize),
}

/// One environment step. Goal rewards are derived from `s_next` at update
/// time; `r_ext` is the main-task reward, zero when there is none.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub s: Observation,
    pub a: Action,
    pub s_next: Observation,
    /// Legal actions in `s_next` are `Action::ALL[..next_actions]`.
    pub next_actions: usize,
    pub r_ext: f64,
}

impl Transition {
    pub fn new(s: Observation, a: Action, s_next: Observation, next_actions: usize) -> Self {
        Self {
            s,
            a,
            s_next,
            next_actions,
            r_ext: 0.0,
        }
    }

    pub fn with_reward(mut self, r_ext: f64) -> Self {
        self.r_ext = r_ext;
        self
    }
}

/// Ring of the most recent transitions.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub const DEFAULT_CAPACITY: usize = 10_000;

    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends, evicting the oldest entry when full.
    pub fn push_transition(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// `n` draws, uniform with replacement.
    pub fn sample_transitions(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<&Transition>, BufferError> {
        if self.items.is_empty() {
            return Err(BufferError::EmptyReplay);
        }
        Ok((0..n)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect())
    }
}

/// Identifier of a goal: its insertion position in the [`GoalBuffer`].
pub type GoalId = usize;

/// Insertion-ordered set of distinct observations.
#[derive(Clone, Debug, Default)]
pub struct GoalBuffer {
    goals: Vec<Observation>,
    index: HashMap<Observation, GoalId>,
}

impl GoalBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.goals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.goals.is_empty()
    }

    /// Returns whether `obs` was new.
    pub fn add_goal(&mut self, obs: &Observation) -> bool {
        if self.index.contains_key(obs) {
            return false;
        }
        self.index.insert(obs.clone(), self.goals.len());
        self.goals.push(obs.clone());
        true
    }

    pub fn contains(&self, obs: &Observation) -> bool {
        self.index.contains_key(obs)
    }

    pub fn id_of(&self, obs: &Observation) -> Option<GoalId> {
        self.index.get(obs).copied()
    }

    pub fn get(&self, id: GoalId) -> Option<&Observation> {
        self.goals.get(id)
    }

    pub fn goals(&self) -> &[Observation] {
        &self.goals
    }

    /// `n` ids, uniform with replacement.
    pub fn sample_ids(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<GoalId>, BufferError> {
        if self.goals.is_empty() {
            return Err(BufferError::EmptyGoals);
        }
        Ok((0..n).map(|_| rng.random_range(0..self.goals.len())).collect())
    }

    /// Writes `goal_<id>.ppm` for every goal.
    pub fn dump_ppm(&self, dir: &Path, scale: usize) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        for (id, obs) in self.goals.iter().enumerate() {
            fs::write(dir.join(format!("goal_{id:05}.ppm")), obs.to_ppm(scale))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoredEpisode {
    pub transitions: Vec<Transition>,
    /// Undiscounted extrinsic return.
    pub ret: f64,
    seq: u64,
}

/// A length-`n` window of an episode; `tail` is the window's final next
/// observation, used as its relabelled goal.
#[derive(Clone, Copy, Debug)]
pub struct Trajectory<'a> {
    pub transitions: &'a [Transition],
    pub tail: &'a Observation,
}

/// Keeps the `capacity` highest-return episodes seen so far.
#[derive(Clone, Debug)]
pub struct EpisodeBuffer {
    capacity: usize,
    episodes: Vec<StoredEpisode>,
    next_seq: u64,
}

impl EpisodeBuffer {
    pub const DEFAULT_CAPACITY: usize = 2000;
    pub const DESK_CAPACITY: usize = 200;

    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "episode capacity must be positive");
        Self {
            capacity,
            episodes: Vec::new(),
            next_seq: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn episodes(&self) -> &[StoredEpisode] {
        &self.episodes
    }

    pub fn min_return(&self) -> Option<f64> {
        self.episodes.iter().map(|e| e.ret).reduce(f64::min)
    }

    /// Accepts when below capacity or when `ret` beats the current minimum,
    /// in which case the oldest minimum-return episode is evicted.
    pub fn kbest_insert(&mut self, transitions: Vec<Transition>, ret: f64) -> bool {
        let seq = self.next_seq;
        self.next_seq += 1;
        let episode = StoredEpisode { transitions, ret, seq };
        if self.episodes.len() < self.capacity {
            self.episodes.push(episode);
            return true;
        }
        let (victim, min) = self
            .episodes
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| a.ret.total_cmp(&b.ret).then(a.seq.cmp(&b.seq)))
            .map(|(i, e)| (i, e.ret))
            .expect("buffer at capacity is nonempty");
        if ret > min {
            self.episodes[victim] = episode;
            true
        } else {
            false
        }
    }

    /// Uniform episode among those with at least `n` transitions, then a
    /// uniform start offset.
    pub fn sample_trajectory(&self, n: usize, rng: &mut impl Rng) -> Result<Trajectory<'_>, BufferError> {
        let eligible: Vec<&StoredEpisode> = self
            .episodes
            .iter()
            .filter(|e| e.transitions.len() >= n && n > 0)
            .collect();
        if eligible.is_empty() {
            return Err(BufferError::NoLongEpisode(n));
        }
        let episode = eligible[rng.random_range(0..eligible.len())];
        let offset = rng.random_range(0..=episode.transitions.len() - n);
        let window = &episode.transitions[offset..offset + n];
        Ok(Trajectory {
            transitions: window,
            tail: &window[n - 1].s_next,
        })
    }
}
