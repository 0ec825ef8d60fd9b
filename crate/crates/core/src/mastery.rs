//! Unsupervised mastery: the many-goals training loop, the on-policy
//! baseline that only updates its current goal, and a tabular all-goals
//! learner for small worlds.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::buffers::{GoalBuffer, GoalId, ReplayBuffer, Transition};
use crate::eval::{
    self, argmax_legal, evaluate_mastery, GreedyPolicy, HoldoutSplit, MasteryReport, MetricRow, UvfaPolicy,
};
use crate::gridworld::{Action, Env, Observation, StartMode, World};
use crate::priority::{GoalSelection, GoalStats};
use crate::seed::{streams, SeedTree};
use crate::uvfa::{NetConfig, TdBatch, UvfaAgent, UvfaNet};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Learner {
    /// Every update covers a batch of goals from the goal buffer.
    ManyGoals,
    /// Updates use only the goal currently being pursued.
    OnPolicy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MasteryConfig {
    /// Environment steps, warmup included.
    pub total_steps: u64,
    /// Random-policy steps that seed the goal buffer.
    pub warmup_steps: u64,
    pub episode_cap: usize,
    /// Steps over which epsilon falls from 1 to its floor; `None` means a
    /// tenth of `total_steps`.
    pub anneal_steps: Option<u64>,
    pub final_epsilon: f64,
    pub batch_transitions: usize,
    pub batch_goals: usize,
    pub selection: GoalSelection,
    pub learner: Learner,
    pub target_sync: u64,
    /// Evaluate every this many steps; 0 disables evaluation.
    pub eval_period: u64,
    pub eval_steps: usize,
    pub replay_capacity: usize,
    pub step_size: f64,
    pub hidden: usize,
    pub embed: usize,
    pub window: usize,
    pub seed: u64,
}

impl Default for MasteryConfig {
    fn default() -> Self {
        Self {
            total_steps: 50_000,
            warmup_steps: 1_000,
            episode_cap: 100,
            anneal_steps: None,
            final_epsilon: 0.1,
            batch_transitions: TdBatch::TRANSITIONS,
            batch_goals: TdBatch::GOALS,
            selection: GoalSelection::Uniform,
            learner: Learner::ManyGoals,
            target_sync: 1_000,
            eval_period: 5_000,
            eval_steps: eval::EVAL_STEPS,
            replay_capacity: ReplayBuffer::DEFAULT_CAPACITY,
            step_size: crate::RmsProp::DEFAULT_STEP_SIZE,
            hidden: 512,
            embed: 1024,
            window: crate::priority::DEFAULT_WINDOW,
            seed: 0,
        }
    }
}

impl MasteryConfig {
    /// Baseline settings: one goal per update, 16 transitions, uniform
    /// goal choice.
    pub fn on_policy(mut self) -> Self {
        self.learner = Learner::OnPolicy;
        self.batch_transitions = 16;
        self.batch_goals = 1;
        self.selection = GoalSelection::Uniform;
        self
    }

    pub fn arm(&self) -> String {
        match (self.learner, self.selection) {
            (Learner::OnPolicy, _) => "on_policy".into(),
            (Learner::ManyGoals, GoalSelection::Uniform) => "many_goals".into(),
            (Learner::ManyGoals, GoalSelection::LearningProgress) => "many_goals_lp".into(),
        }
    }

    pub fn net_config(&self, world: &World) -> NetConfig {
        NetConfig::new(world.observation_shape()).with_widths(self.hidden, self.embed)
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            ("episode_cap", self.episode_cap as u64),
            ("batch_transitions", self.batch_transitions as u64),
            ("batch_goals", self.batch_goals as u64),
            ("target_sync", self.target_sync),
            ("replay_capacity", self.replay_capacity as u64),
            ("hidden", self.hidden as u64),
            ("embed", self.embed as u64),
            ("window", self.window as u64),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(0.0..=1.0).contains(&self.final_epsilon) {
            return Err(Error::Config("final_epsilon must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Linear decay from 1 at step 0 to `final_epsilon` at the end of annealing.
pub fn epsilon_schedule(step: u64, cfg: &MasteryConfig) -> f64 {
    let anneal = cfg.anneal_steps.unwrap_or(cfg.total_steps / 10).max(1);
    let frac = (step as f64 / anneal as f64).min(1.0);
    1.0 - (1.0 - cfg.final_epsilon) * frac
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EpisodeRecord {
    pub length: usize,
    pub achieved: bool,
}

/// Everything a finished run leaves behind.
#[derive(Clone, Debug)]
pub struct MasteryRun {
    pub agent: UvfaAgent,
    pub metrics: Vec<MetricRow>,
    pub reports: Vec<MasteryReport>,
    pub goals: GoalBuffer,
    /// Feasible-state id of each goal in `goals`.
    pub goal_states: Vec<usize>,
    /// Times each goal id appeared in an update batch.
    pub update_counts: Vec<u64>,
    /// Times each goal id was chosen to drive behaviour.
    pub behavior_counts: Vec<u64>,
    pub stats: GoalStats,
    pub steps: u64,
    pub updates: u64,
}

impl MasteryRun {
    /// Held-out goals that were ever used for behaviour or in an update.
    pub fn holdout_violations(&self, split: &HoldoutSplit) -> Vec<GoalId> {
        (0..self.goal_states.len())
            .filter(|&g| split.is_heldout(self.goal_states[g]))
            .filter(|&g| self.update_counts[g] > 0 || self.behavior_counts[g] > 0)
            .collect()
    }

    /// First evaluated step at which mastery reached `level`.
    pub fn steps_to(&self, level: f64) -> Option<u64> {
        self.reports
            .iter()
            .find(|r| r.fraction_achieved >= level)
            .map(|r| r.step)
    }
}

/// State of one mastery run; [`MasteryTrainer::train`] drives it to the end.
pub struct MasteryTrainer<'w> {
    world: &'w World,
    cfg: MasteryConfig,
    arm: String,
    holdout: Option<HoldoutSplit>,
    eval_seed: u64,
    pub agent: UvfaAgent,
    pub replay: ReplayBuffer,
    pub goals: GoalBuffer,
    pub stats: GoalStats,
    goal_states: Vec<usize>,
    eligible: Vec<GoalId>,
    update_counts: Vec<u64>,
    behavior_counts: Vec<u64>,
    env: Env<'w>,
    policy_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
    goal_rng: ChaCha8Rng,
    warmup_rng: ChaCha8Rng,
    steps: u64,
    updates: u64,
    loss_sum: f64,
    loss_count: u64,
    metrics: Vec<MetricRow>,
    reports: Vec<MasteryReport>,
}

impl<'w> MasteryTrainer<'w> {
    pub fn new(world: &'w World, cfg: MasteryConfig, holdout: Option<HoldoutSplit>) -> Result<Self> {
        cfg.validate()?;
        let seeds = SeedTree::new(cfg.seed);
        let net = UvfaNet::new(cfg.net_config(world), &mut seeds.stream(streams::INIT));
        Ok(Self {
            world,
            arm: cfg.arm(),
            holdout,
            eval_seed: seeds.child(streams::EVAL).seed(),
            agent: UvfaAgent::new(net, cfg.step_size),
            replay: ReplayBuffer::new(cfg.replay_capacity),
            goals: GoalBuffer::new(),
            stats: GoalStats::new(cfg.window),
            goal_states: Vec::new(),
            eligible: Vec::new(),
            update_counts: Vec::new(),
            behavior_counts: Vec::new(),
            env: Env::new(world, seeds.stream(streams::ENV), StartMode::RandomFeasible),
            policy_rng: seeds.stream(streams::POLICY),
            replay_rng: seeds.stream(streams::REPLAY),
            goal_rng: seeds.stream(streams::GOALS),
            warmup_rng: seeds.stream(streams::WARMUP),
            steps: 0,
            updates: 0,
            loss_sum: 0.0,
            loss_count: 0,
            metrics: Vec::new(),
            reports: Vec::new(),
            cfg,
        })
    }

    pub fn with_agent(mut self, agent: UvfaAgent) -> Self {
        self.agent = agent;
        self
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Goal ids allowed for behaviour and updates.
    pub fn eligible_goals(&self) -> &[GoalId] {
        &self.eligible
    }

    pub fn goal_state(&self, goal: GoalId) -> usize {
        self.goal_states[goal]
    }

    fn add_goal(&mut self, obs: &Observation) {
        if self.goals.add_goal(obs) {
            let id = self.world.state_id(self.env.state()).expect("feasible state");
            let goal = self.goal_states.len();
            self.goal_states.push(id);
            self.update_counts.push(0);
            self.behavior_counts.push(0);
            if !self.holdout.as_ref().is_some_and(|h| h.is_heldout(id)) {
                self.eligible.push(goal);
            }
        }
    }

    /// Records a transition and performs the per-step bookkeeping shared by
    /// warmup and training.
    fn record_step(&mut self, s: Observation, a: Action) -> Result<Observation> {
        let s_next = self.env.observe();
        let next_actions = self.env.legal_actions().len();
        self.add_goal(&s_next);
        self.replay
            .push_transition(Transition::new(s, a, s_next.clone(), next_actions));
        self.steps += 1;
        Ok(s_next)
    }

    fn after_step(&mut self) -> Result<()> {
        if self.steps.is_multiple_of(self.cfg.target_sync) {
            self.agent.sync_target();
        }
        if self.cfg.eval_period > 0 && self.steps.is_multiple_of(self.cfg.eval_period) {
            self.evaluate()?;
        }
        Ok(())
    }

    /// Random-policy steps that seed the goal and replay buffers.
    pub fn warmup(&mut self) -> Result<()> {
        let end = self.cfg.warmup_steps.min(self.cfg.total_steps);
        while self.steps < end {
            self.env.reset(StartMode::RandomFeasible);
            let mut s = self.env.observe();
            self.add_goal(&s);
            for _ in 0..self.cfg.episode_cap {
                if self.steps >= end {
                    break;
                }
                let legal = self.env.legal_actions();
                let a = legal[self.warmup_rng.random_range(0..legal.len())];
                self.env.step(a)?;
                s = self.record_step(s, a)?;
                self.after_step()?;
            }
        }
        Ok(())
    }

    fn act(&mut self, s: &Observation, goal: &Observation) -> Result<Action> {
        let legal = self.env.legal_actions();
        let eps = epsilon_schedule(self.steps, &self.cfg);
        if self.policy_rng.random::<f64>() < eps {
            return Ok(legal[self.policy_rng.random_range(0..legal.len())]);
        }
        let q = self.agent.online.q_values(s, goal)?;
        Ok(argmax_legal(&q, legal))
    }

    fn update(&mut self, behavior_goal: GoalId) -> Result<()> {
        if self.replay.is_empty() {
            return Ok(());
        }
        let goal_ids: Vec<GoalId> = match self.cfg.learner {
            Learner::OnPolicy => vec![behavior_goal],
            Learner::ManyGoals => (0..self.cfg.batch_goals)
                .map(|_| self.eligible[self.goal_rng.random_range(0..self.eligible.len())])
                .collect(),
        };
        let transitions = self
            .replay
            .sample_transitions(self.cfg.batch_transitions, &mut self.replay_rng)?;
        let batch = TdBatch {
            transitions,
            goals: goal_ids
                .iter()
                .map(|&g| self.goals.get(g).expect("known goal"))
                .collect(),
        };
        let out = self.agent.update(&batch)?;
        for (&g, &l) in goal_ids.iter().zip(&out.per_goal) {
            self.stats.observe_loss(g, l)?;
            self.update_counts[g] += 1;
        }
        self.updates += 1;
        self.loss_sum += out.loss;
        self.loss_count += 1;
        Ok(())
    }

    /// Picks the next behaviour goal among the eligible ones.
    pub fn pick_goal(&mut self) -> Result<GoalId> {
        Ok(self
            .stats
            .sample_behavior_goal(&self.eligible, &mut self.goal_rng, self.cfg.selection)?)
    }

    /// One episode towards `goal`: epsilon-greedy actions, one update per
    /// step, ending on arrival or after `episode_cap` steps.
    pub fn run_episode(&mut self, goal: GoalId) -> Result<EpisodeRecord> {
        let goal_obs = self.goals.get(goal).expect("known goal").clone();
        self.behavior_counts[goal] += 1;
        let mut s = self.env.observe();
        // Starting on the goal would make an empty episode.
        for _ in 0..64 {
            self.env.reset(StartMode::RandomFeasible);
            s = self.env.observe();
            if s != goal_obs {
                break;
            }
        }
        let mut record = EpisodeRecord {
            length: 0,
            achieved: false,
        };
        while record.length < self.cfg.episode_cap && self.steps < self.cfg.total_steps {
            let a = self.act(&s, &goal_obs)?;
            self.env.step(a)?;
            s = self.record_step(s, a)?;
            record.length += 1;
            self.update(goal)?;
            self.after_step()?;
            if s == goal_obs {
                record.achieved = true;
                break;
            }
        }
        self.stats.end_episode()?;
        Ok(record)
    }

    /// Mastery of the current online network; appends metric rows.
    pub fn evaluate(&mut self) -> Result<()> {
        let all: Vec<usize> = (0..self.world.feasible_states().len()).collect();
        let mut policy = UvfaPolicy::new(&self.agent.online, self.world)?;
        let (seed, arm, step) = (self.cfg.seed, self.arm.as_str(), self.steps);
        let train_goals = self.holdout.as_ref().map_or(&all, |h| &h.train);
        let report = evaluate_mastery(
            self.world,
            &mut policy,
            train_goals,
            self.cfg.eval_steps,
            self.eval_seed,
            step,
        );
        self.metrics
            .push(MetricRow::new(step, "mastery", report.fraction_achieved, seed, arm));
        if let Some(h) = &self.holdout {
            let held = evaluate_mastery(
                self.world,
                &mut policy,
                &h.heldout,
                self.cfg.eval_steps,
                self.eval_seed ^ 1,
                step,
            );
            self.metrics.push(MetricRow::new(
                step,
                "heldout_mastery",
                held.fraction_achieved,
                seed,
                arm,
            ));
        }
        let loss = if self.loss_count > 0 {
            self.loss_sum / self.loss_count as f64
        } else {
            0.0
        };
        self.metrics.push(MetricRow::new(step, "td_loss", loss, seed, arm));
        self.metrics.push(MetricRow::new(
            step,
            "goal_buffer_size",
            self.goals.len() as f64,
            seed,
            arm,
        ));
        (self.loss_sum, self.loss_count) = (0.0, 0);
        self.reports.push(report);
        Ok(())
    }

    pub fn train(mut self) -> Result<MasteryRun> {
        self.warmup()?;
        while self.steps < self.cfg.total_steps {
            if self.eligible.is_empty() {
                return Err(Error::Config("no eligible goals after warmup".into()));
            }
            let goal = self.pick_goal()?;
            self.run_episode(goal)?;
        }
        Ok(MasteryRun {
            agent: self.agent,
            metrics: self.metrics,
            reports: self.reports,
            goals: self.goals,
            goal_states: self.goal_states,
            update_counts: self.update_counts,
            behavior_counts: self.behavior_counts,
            stats: self.stats,
            steps: self.steps,
            updates: self.updates,
        })
    }
}

/// Many-goals training with the configured goal selection.
pub fn train_mastery(world: &World, cfg: &MasteryConfig, holdout: Option<HoldoutSplit>) -> Result<MasteryRun> {
    MasteryTrainer::new(world, cfg.clone(), holdout)?.train()
}

/// The single-goal baseline under the same step budget.
pub fn train_onpolicy(world: &World, cfg: &MasteryConfig, holdout: Option<HoldoutSplit>) -> Result<MasteryRun> {
    MasteryTrainer::new(world, cfg.clone().on_policy(), holdout)?.train()
}

/// Dense table `Q_g(s, a)` over feasible-state ids; unvisited entries are 0.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularQ {
    pub alpha: f64,
    states: usize,
    values: Vec<f64>,
}

impl TabularQ {
    pub fn new(states: usize, alpha: f64) -> Self {
        Self {
            alpha,
            states,
            values: vec![0.0; states * states * Action::COUNT],
        }
    }

    fn slot(&self, goal: usize, state: usize, action: usize) -> usize {
        (goal * self.states + state) * Action::COUNT + action
    }

    pub fn get(&self, goal: usize, state: usize, action: Action) -> f64 {
        self.values[self.slot(goal, state, action.index())]
    }

    pub fn set(&mut self, goal: usize, state: usize, action: Action, value: f64) {
        let i = self.slot(goal, state, action.index());
        self.values[i] = value;
    }

    pub fn states(&self) -> usize {
        self.states
    }

    /// Best value over the first `actions` actions.
    pub fn max_value(&self, goal: usize, state: usize, actions: usize) -> f64 {
        let i = self.slot(goal, state, 0);
        self.values[i..i + actions]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// A transition between feasible-state ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateTransition {
    pub state: usize,
    pub action: Action,
    pub next: usize,
    pub next_actions: usize,
}

/// `Q_g(s,a) ← (1−α) Q_g(s,a) + α (r_g + γ_g max_b Q_g(s′,b))` for every
/// goal. Goals are feasible-state ids; since rendering is injective, state
/// equality is frame equality.
pub fn tabular_update(tq: &mut TabularQ, t: &StateTransition, goals: &[usize]) {
    for &g in goals {
        let gr = if t.next == g {
            crate::uvfa::GoalReward::ARRIVED
        } else {
            crate::uvfa::GoalReward::STEP
        };
        let bootstrap = if gr.discount == 0.0 {
            0.0
        } else {
            tq.max_value(g, t.next, t.next_actions)
        };
        let old = tq.get(g, t.state, t.action);
        let new = (1.0 - tq.alpha) * old + tq.alpha * (gr.reward + gr.discount * bootstrap);
        tq.set(g, t.state, t.action, new);
    }
}

impl GreedyPolicy for TabularQ {
    fn greedy(&mut self, state: usize, goal: usize, legal: &[Action]) -> Action {
        let i = self.slot(goal, state, 0);
        argmax_legal(&self.values[i..i + Action::COUNT], legal)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TabularConfig {
    pub total_steps: u64,
    pub episode_cap: usize,
    pub alpha: f64,
    /// Replay sweeps over every distinct transition seen, per step.
    pub sweeps_per_step: usize,
    pub seed: u64,
}

impl Default for TabularConfig {
    fn default() -> Self {
        Self {
            total_steps: 3_000,
            episode_cap: 100,
            alpha: 1.0,
            sweeps_per_step: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TabularRun {
    pub q: TabularQ,
    pub steps: u64,
    pub distinct_transitions: usize,
}

/// All-goals tabular learning from a uniformly random behaviour policy,
/// with every goal updated on each new transition and on replay sweeps.
pub fn train_tabular(world: &World, cfg: &TabularConfig) -> Result<TabularRun> {
    let seeds = SeedTree::new(cfg.seed);
    let n = world.feasible_states().len();
    let goals: Vec<usize> = (0..n).collect();
    let mut q = TabularQ::new(n, cfg.alpha);
    let mut env = Env::new(world, seeds.stream(streams::ENV), StartMode::RandomFeasible);
    let mut rng = seeds.stream(streams::POLICY);
    let mut seen = std::collections::BTreeSet::new();
    let mut steps = 0;
    while steps < cfg.total_steps {
        env.reset(StartMode::RandomFeasible);
        for _ in 0..cfg.episode_cap {
            if steps >= cfg.total_steps {
                break;
            }
            let state = world.state_id(env.state()).expect("feasible");
            let legal = env.legal_actions();
            let action = legal[rng.random_range(0..legal.len())];
            env.step(action)?;
            let t = StateTransition {
                state,
                action,
                next: world.state_id(env.state()).expect("feasible"),
                next_actions: env.legal_actions().len(),
            };
            tabular_update(&mut q, &t, &goals);
            seen.insert(t);
            for _ in 0..cfg.sweeps_per_step {
                for t in &seen {
                    tabular_update(&mut q, t, &goals);
                }
            }
            steps += 1;
        }
    }
    Ok(TabularRun {
        q,
        steps,
        distinct_transitions: seen.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{Dynamics, Layout};

    fn small_cfg(total: u64) -> MasteryConfig {
        MasteryConfig {
            total_steps: total,
            warmup_steps: 50,
            episode_cap: 20,
            eval_period: 100,
            hidden: 16,
            embed: 16,
            batch_transitions: 4,
            batch_goals: 3,
            target_sync: 50,
            ..MasteryConfig::default()
        }
    }

    #[test]
    fn epsilon_endpoints() {
        let cfg = MasteryConfig {
            total_steps: 1000,
            anneal_steps: Some(200),
            ..MasteryConfig::default()
        };
        assert_eq!(epsilon_schedule(0, &cfg), 1.0);
        assert!((epsilon_schedule(100, &cfg) - 0.55).abs() < 1e-12);
        assert!((epsilon_schedule(200, &cfg) - 0.1).abs() < 1e-12);
        assert!((epsilon_schedule(5000, &cfg) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn zero_step_run_is_empty() {
        let world = World::new(Layout::compact());
        let cfg = small_cfg(0);
        let run = train_mastery(&world, &cfg, None).unwrap();
        assert!(run.metrics.is_empty());
        let init = UvfaNet::new(
            cfg.net_config(&world),
            &mut SeedTree::new(cfg.seed).stream(streams::INIT),
        );
        assert_eq!(run.agent.online, init);
    }

    #[test]
    fn runs_are_deterministic_and_budgets_match() {
        let world = World::new(Layout::compact());
        let cfg = small_cfg(300);
        let a = train_mastery(&world, &cfg, None).unwrap();
        let b = train_mastery(&world, &cfg, None).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.agent.online, b.agent.online);
        let on = train_onpolicy(&world, &cfg, None).unwrap();
        assert_eq!(on.steps, a.steps);
        assert_eq!(a.steps, 300);
        assert!(a.goals.len() <= world.feasible_states().len());
        // One update per post-warmup step.
        assert_eq!(a.updates, 250);
        assert_eq!(on.update_counts.iter().sum::<u64>(), on.updates);
        assert_eq!(a.update_counts.iter().sum::<u64>(), 3 * a.updates);
    }

    #[test]
    fn unreachable_goal_runs_to_the_cap() {
        // Welding the door shut with no switches to open it: the tiny world
        // cannot show a foreign frame, so use a goal outside the world.
        let world = World::new(Layout::tiny());
        let mut trainer = MasteryTrainer::new(&world, small_cfg(1_000), None).unwrap();
        trainer.warmup().unwrap();
        let before = trainer.replay.len();
        let alien = Observation::from_pixels(5, 5, vec![7; 75]);
        trainer.goals.add_goal(&alien);
        trainer.goal_states.push(0);
        trainer.update_counts.push(0);
        trainer.behavior_counts.push(0);
        let id = trainer.goals.len() - 1;
        let rec = trainer.run_episode(id).unwrap();
        assert_eq!(
            rec,
            EpisodeRecord {
                length: 20,
                achieved: false
            }
        );
        assert_eq!(trainer.replay.len(), before + 20);
    }

    #[test]
    fn reaching_the_goal_ends_the_episode() {
        let world = World::new(Layout::tiny()).with_dynamics(Dynamics {
            slip_prob: 0.0,
            door_close_prob: 0.0,
        });
        let mut trainer = MasteryTrainer::new(&world, small_cfg(10_000), None).unwrap();
        trainer.warmup().unwrap();
        for _ in 0..20 {
            let goal = trainer.pick_goal().unwrap();
            let rec = trainer.run_episode(goal).unwrap();
            assert!(rec.length <= 20);
            if rec.achieved {
                let last = trainer.replay.iter().last().unwrap();
                assert_eq!(&last.s_next, trainer.goals.get(goal).unwrap());
            }
        }
    }

    #[test]
    fn tabular_rule_examples() {
        let mut tq = TabularQ::new(3, 1.0);
        tq.set(2, 0, Action::Up, 5.0);
        let arrive = StateTransition {
            state: 0,
            action: Action::Up,
            next: 2,
            next_actions: 4,
        };
        tabular_update(&mut tq, &arrive, &[2]);
        assert_eq!(tq.get(2, 0, Action::Up), 0.0);

        let mut tq = TabularQ::new(3, 0.5);
        let step = StateTransition {
            state: 0,
            action: Action::Down,
            next: 1,
            next_actions: 4,
        };
        tabular_update(&mut tq, &step, &[2]);
        assert!((tq.get(2, 0, Action::Down) + 0.05).abs() < 1e-15);

        let mut tq = TabularQ::new(3, 0.0);
        tq.set(2, 0, Action::Down, 1.5);
        tabular_update(&mut tq, &step, &[2]);
        assert_eq!(tq.get(2, 0, Action::Down), 1.5);
    }

    #[test]
    fn holdout_goals_never_used() {
        let world = World::new(Layout::compact());
        let ids: Vec<usize> = (0..world.feasible_states().len()).collect();
        let split = eval::holdout_split(&ids, 0.2, 4).unwrap();
        let run = train_mastery(&world, &small_cfg(400), Some(split.clone())).unwrap();
        assert!(run.holdout_violations(&split).is_empty());
        assert!(run.metrics.iter().any(|m| m.metric_name == "heldout_mastery"));
    }
}
