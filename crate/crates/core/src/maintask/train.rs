use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::buffers::{EpisodeBuffer, Transition};
use crate::eval::MetricRow;
use crate::gridworld::{Action, EnvState, Observation, World};
use crate::mastery::{train_mastery, MasteryConfig, MasteryRun};
use crate::numerics::{Gradients, Layer, RmsProp};
use crate::uvfa::{index as uvfa_index, td_loss, NetConfig, TdBatch};
use crate::{Error, Result, SeedTree};

use super::net::{a2c_loss, index, policy_probs, ActorCritic, AuxTask, Rollout};
use super::reward_prediction::{RewardPredictor, RpBuffer, REWARD_CLASSES};
use super::{compute_returns, A2cConfig, MainTaskSpec};

/// Stacks kept per reward class for reward prediction.
const RP_CLASS_CAPACITY: usize = 10_000;

mod streams {
    pub const INIT: u64 = 0;
    pub const AUX: u64 = 1;
    pub const BEHAVIOUR: u64 = 2;
    pub const WORKERS: u64 = 16;
}

/// A trunk learned before fine-tuning and the steps it consumed.
#[derive(Clone, Debug, PartialEq)]
pub struct Pretrained {
    pub trunk: Vec<Layer>,
    pub steps: u64,
    /// Short tag used in arm names, e.g. `mg` or `rp`.
    pub source: String,
}

/// Many-goals training whose trunk seeds the actor-critic.
pub fn pretrain_many_goals(world: &World, cfg: &MasteryConfig) -> Result<(Pretrained, MasteryRun)> {
    let run = train_mastery(world, cfg, None)?;
    let pretrained = Pretrained {
        trunk: run.agent.online.layers()[uvfa_index::TRUNK].to_vec(),
        steps: run.steps,
        source: "mg".into(),
    };
    Ok((pretrained, run))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    pub total_steps: u64,
    pub batch: usize,
    pub step_size: f64,
    pub hidden: usize,
    pub embed: usize,
    pub eval_period: u64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 50_000,
            batch: TdBatch::TRANSITIONS,
            step_size: RmsProp::DEFAULT_STEP_SIZE,
            hidden: 512,
            embed: 1024,
            eval_period: 5_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RpPretrainRun {
    pub pretrained: Pretrained,
    pub predictor: RewardPredictor,
    /// Examples seen per reward class.
    pub seen: [u64; REWARD_CLASSES],
    pub updates: u64,
    pub metrics: Vec<MetricRow>,
}

/// Frames before the step, oldest first; padded with the first frame at
/// the start of an episode.
fn shift_history(history: &mut [Observation; 3], next: &Observation) {
    history.rotate_left(1);
    history[2] = next.clone();
}

/// Reward-sign prediction on random-policy experience of the main task,
/// one class-balanced update per step once two classes have been seen.
pub fn pretrain_reward_prediction(world: &World, task: &MainTaskSpec, cfg: &PretrainConfig) -> Result<RpPretrainRun> {
    task.validate(world)?;
    if cfg.batch == 0 || cfg.hidden == 0 {
        return Err(Error::Config("batch and hidden must be positive".into()));
    }
    let seeds = SeedTree::new(cfg.seed);
    let net_cfg = NetConfig::new(world.observation_shape()).with_widths(cfg.hidden, cfg.embed);
    let mut predictor = RewardPredictor::new(net_cfg, &mut seeds.stream(streams::INIT));
    let mut opt = RmsProp::new(cfg.step_size);
    let mut rng = seeds.stream(streams::BEHAVIOUR);
    let mut sample_rng = seeds.stream(streams::AUX);
    let mut buffer = RpBuffer::new(RP_CLASS_CAPACITY);
    let mut metrics = Vec::new();
    let (mut loss_sum, mut acc_sum, mut period_updates) = (0.0, 0.0, 0u64);
    let mut updates = 0;
    let mut steps = 0;
    while steps < cfg.total_steps {
        let mut state = task.reset(world, &mut rng);
        let first = world.render(&state);
        let mut history = [first.clone(), first.clone(), first];
        for _ in 0..task.episode_cap {
            if steps >= cfg.total_steps {
                break;
            }
            let legal = world.legal_actions(&state);
            let a = legal[rng.random_range(0..legal.len())];
            state = world.step(&state, a, &mut rng)?;
            let r = task.reward(&state);
            buffer.push(history.clone(), r);
            steps += 1;
            if buffer.observed_count() >= 2 {
                let batch = buffer.sample_balanced(cfg.batch, &mut sample_rng);
                let out = predictor.loss(&batch, buffer.observed())?;
                opt.step(predictor.layers_mut(), &out.grads)?;
                updates += 1;
                loss_sum += out.loss;
                acc_sum += out.accuracy;
                period_updates += 1;
            }
            if cfg.eval_period > 0 && steps % cfg.eval_period == 0 && period_updates > 0 {
                let n = period_updates as f64;
                metrics.push(MetricRow::new(steps, "rp_loss", loss_sum / n, cfg.seed, "rp_pretrain"));
                metrics.push(MetricRow::new(
                    steps,
                    "rp_accuracy",
                    acc_sum / n,
                    cfg.seed,
                    "rp_pretrain",
                ));
                (loss_sum, acc_sum, period_updates) = (0.0, 0.0, 0);
            }
            if task.is_solved(&state) {
                break;
            }
            shift_history(&mut history, &world.render(&state));
        }
    }
    let seen = buffer.seen();
    for (class, name) in ["zero", "positive", "negative"].iter().enumerate() {
        if seen[class] == 0 {
            log::warn!("reward prediction saw no {name}-reward examples; that class was left out");
        }
    }
    Ok(RpPretrainRun {
        pretrained: Pretrained {
            trunk: predictor.trunk().to_vec(),
            steps,
            source: "rp".into(),
        },
        predictor,
        seen,
        updates,
        metrics,
    })
}

/// Outcome of an actor-critic run.
#[derive(Clone, Debug)]
pub struct A2cRun {
    pub arm: String,
    pub net: ActorCritic,
    pub metrics: Vec<MetricRow>,
    /// Finished episodes as `(step at which it ended, return)`, counting
    /// only this run's own steps.
    pub episodes: Vec<(u64, f64)>,
    pub steps: u64,
    /// Steps spent before this run, e.g. on pretraining.
    pub step_offset: u64,
    pub updates: u64,
    /// Mean return of episodes ending in the last `final_fraction` of the
    /// budget.
    pub final_return: f64,
}

impl A2cRun {
    /// Steps including pretraining.
    pub fn total_steps(&self) -> u64 {
        self.steps + self.step_offset
    }
}

/// Actor-critic on the main task, from scratch or from a pretrained trunk.
pub fn finetune_a2c(world: &World, task: &MainTaskSpec, cfg: &A2cConfig, init: Option<&Pretrained>) -> Result<A2cRun> {
    let arm = match init {
        Some(p) => format!("a2c_pretrained_{}", p.source),
        None => "a2c".to_owned(),
    };
    A2cTrainer::new(world, task, cfg, AuxTask::None, init, arm)?.train()
}

/// Actor-critic with an auxiliary head trained on the agent's own
/// experience.
pub fn train_aux(world: &World, task: &MainTaskSpec, cfg: &A2cConfig, aux: AuxTask) -> Result<A2cRun> {
    let arm = match aux {
        AuxTask::None => "a2c".to_owned(),
        AuxTask::ManyGoals => "a2c_aux_mg".to_owned(),
        AuxTask::RewardPrediction => "a2c_aux_rp".to_owned(),
    };
    A2cTrainer::new(world, task, cfg, aux, None, arm)?.train()
}

struct Worker {
    state: EnvState,
    obs: Observation,
    rng: ChaCha8Rng,
    t: usize,
    ret: f64,
    history: [Observation; 3],
    episode: Vec<Transition>,
}

impl Worker {
    fn new(world: &World, task: &MainTaskSpec, mut rng: ChaCha8Rng) -> Self {
        let state = task.reset(world, &mut rng);
        let obs = world.render(&state);
        Self {
            history: [obs.clone(), obs.clone(), obs.clone()],
            state,
            obs,
            rng,
            t: 0,
            ret: 0.0,
            episode: Vec::new(),
        }
    }

    fn restart(&mut self, world: &World, task: &MainTaskSpec) {
        self.state = task.reset(world, &mut self.rng);
        self.obs = world.render(&self.state);
        self.history = [self.obs.clone(), self.obs.clone(), self.obs.clone()];
        self.t = 0;
        self.ret = 0.0;
        self.episode.clear();
    }
}

struct Step {
    frame: Observation,
    action: Action,
    legal: usize,
    reward: f64,
    done: bool,
}

struct A2cTrainer<'w> {
    world: &'w World,
    task: MainTaskSpec,
    cfg: A2cConfig,
    arm: String,
    net: ActorCritic,
    target: Option<crate::uvfa::UvfaNet>,
    opt: RmsProp,
    workers: Vec<Worker>,
    aux_rng: ChaCha8Rng,
    kbest: EpisodeBuffer,
    rp: RpBuffer,
    metrics: Vec<MetricRow>,
    episodes: Vec<(u64, f64)>,
    offset: u64,
    steps: u64,
    updates: u64,
    period: Period,
}

#[derive(Default)]
struct Period {
    returns: Vec<f64>,
    loss: f64,
    aux_loss: f64,
    updates: u64,
    aux_updates: u64,
}

impl<'w> A2cTrainer<'w> {
    fn new(
        world: &'w World,
        task: &MainTaskSpec,
        cfg: &A2cConfig,
        aux: AuxTask,
        init: Option<&Pretrained>,
        arm: String,
    ) -> Result<Self> {
        cfg.validate()?;
        task.validate(world)?;
        let seeds = SeedTree::new(cfg.seed);
        let net_cfg = NetConfig::new(world.observation_shape()).with_widths(cfg.hidden, cfg.embed);
        let mut net = ActorCritic::new(net_cfg, aux, &mut seeds.stream(streams::INIT));
        let offset = match init {
            Some(p) => {
                net.load_trunk(&p.trunk)?;
                p.steps
            }
            None => 0,
        };
        let workers = (0..cfg.workers)
            .map(|w| Worker::new(world, task, seeds.stream(streams::WORKERS + w as u64)))
            .collect();
        Ok(Self {
            world,
            task: *task,
            cfg: cfg.clone(),
            arm,
            target: net.uvfa_view(),
            net,
            opt: RmsProp::new(cfg.step_size),
            workers,
            aux_rng: seeds.stream(streams::AUX),
            kbest: EpisodeBuffer::new(cfg.kbest_capacity),
            rp: RpBuffer::new(RP_CLASS_CAPACITY),
            metrics: Vec::new(),
            episodes: Vec::new(),
            offset,
            steps: 0,
            updates: 0,
            period: Period::default(),
        })
    }

    fn act(&mut self) -> Result<Vec<Step>> {
        let frames: Vec<&Observation> = self.workers.iter().map(|w| &w.obs).collect();
        let legal: Vec<usize> = self
            .workers
            .iter()
            .map(|w| self.world.legal_actions(&w.state).len())
            .collect();
        let (logits, _) = self.net.evaluate(&frames)?;
        let probs = policy_probs(&logits, &legal);
        let aux = self.net.aux();
        let mut out = Vec::with_capacity(self.workers.len());
        for (w, p) in self.workers.iter_mut().zip(probs) {
            let u: f64 = w.rng.random();
            let mut acc = 0.0;
            let mut choice = p.len() - 1;
            for (i, x) in p.iter().enumerate() {
                acc += x;
                if u < acc {
                    choice = i;
                    break;
                }
            }
            let action = Action::ALL[choice];
            let next = self.world.step(&w.state, action, &mut w.rng)?;
            let reward = self.task.reward(&next);
            let next_obs = self.world.render(&next);
            let solved = self.task.is_solved(&next);
            w.t += 1;
            w.ret += reward;
            match aux {
                AuxTask::ManyGoals => w.episode.push(
                    Transition::new(
                        w.obs.clone(),
                        action,
                        next_obs.clone(),
                        self.world.legal_actions(&next).len(),
                    )
                    .with_reward(reward),
                ),
                AuxTask::RewardPrediction => self.rp.push(w.history.clone(), reward),
                AuxTask::None => {}
            }
            let done = solved || w.t >= self.task.episode_cap;
            out.push(Step {
                frame: std::mem::replace(&mut w.obs, next_obs),
                action,
                legal: p.len(),
                reward,
                done,
            });
            w.state = next;
            shift_history(&mut w.history, &w.obs);
        }
        Ok(out)
    }

    fn finish_episodes(&mut self, steps: &[Step]) {
        for (w, s) in self.workers.iter_mut().zip(steps) {
            if !s.done {
                continue;
            }
            self.episodes.push((self.steps, w.ret));
            self.period.returns.push(w.ret);
            if self.net.aux() == AuxTask::ManyGoals {
                self.kbest.kbest_insert(std::mem::take(&mut w.episode), w.ret);
            }
            w.restart(self.world, &self.task);
        }
    }

    fn aux_gradients(&mut self) -> Result<Option<(f64, Gradients)>> {
        let width = self.cfg.rollout * self.cfg.workers;
        match self.net.aux() {
            AuxTask::None => Ok(None),
            AuxTask::ManyGoals => {
                let mut transitions = Vec::with_capacity(width);
                let mut goals = Vec::with_capacity(self.cfg.workers);
                for _ in 0..self.cfg.workers {
                    match self.kbest.sample_trajectory(self.cfg.rollout, &mut self.aux_rng) {
                        Ok(traj) => {
                            transitions.extend(traj.transitions.iter());
                            goals.push(traj.tail);
                        }
                        Err(_) => return Ok(None),
                    }
                }
                let view = self.net.uvfa_view().expect("many-goals head");
                let target = self.target.as_ref().expect("many-goals head");
                let out = td_loss(&view, target, &TdBatch { transitions, goals })?;
                let mut g = self.net.gradients_from_view(&out.grads);
                g.scale(self.cfg.aux_weight);
                Ok(Some((out.loss, g)))
            }
            AuxTask::RewardPrediction => {
                if self.rp.observed_count() < 2 {
                    return Ok(None);
                }
                let batch = self.rp.sample_balanced(width, &mut self.aux_rng);
                let out = super::rp_loss(self.net.layers(), index::TRUNK, index::AUX, &batch, self.rp.observed())?;
                let mut g = out.grads;
                g.scale(self.cfg.rp_weight);
                Ok(Some((out.loss, g)))
            }
        }
    }

    fn update(&mut self, per_worker: Vec<Vec<Step>>) -> Result<()> {
        let mut bootstrap_rows = Vec::new();
        for (w, steps) in per_worker.iter().enumerate() {
            if steps.last().is_some_and(|s| !s.done) {
                bootstrap_rows.push(w);
            }
        }
        let mut bootstrap = vec![0.0; per_worker.len()];
        if !bootstrap_rows.is_empty() {
            let frames: Vec<&Observation> = bootstrap_rows.iter().map(|&w| &self.workers[w].obs).collect();
            let (_, values) = self.net.evaluate(&frames)?;
            for (&w, v) in bootstrap_rows.iter().zip(values) {
                bootstrap[w] = v;
            }
        }
        let mut rollout = Rollout::default();
        for (w, steps) in per_worker.into_iter().enumerate() {
            let rewards: Vec<f64> = steps.iter().map(|s| s.reward).collect();
            let dones: Vec<bool> = steps.iter().map(|s| s.done).collect();
            rollout
                .returns
                .extend(compute_returns(&rewards, &dones, bootstrap[w], self.task.gamma));
            for s in steps {
                rollout.frames.push(s.frame);
                rollout.actions.push(s.action);
                rollout.legal.push(s.legal);
            }
        }
        if rollout.is_empty() {
            return Ok(());
        }
        let (out, mut grads) = a2c_loss(&self.net, &rollout, self.cfg.value_weight, self.cfg.entropy_weight)?;
        self.period.loss += out.loss;
        self.period.updates += 1;
        if let Some((loss, g)) = self.aux_gradients()? {
            grads.add_scaled(&g, 1.0);
            self.period.aux_loss += loss;
            self.period.aux_updates += 1;
        }
        if !grads.all_finite() {
            return Err(Error::NonFinite("actor-critic gradients"));
        }
        self.opt.step(self.net.layers_mut(), &grads)?;
        self.updates += 1;
        Ok(())
    }

    fn emit_period(&mut self) {
        let step = self.offset + self.steps;
        let seed = self.cfg.seed;
        let p = std::mem::take(&mut self.period);
        if !p.returns.is_empty() {
            let mean = p.returns.iter().sum::<f64>() / p.returns.len() as f64;
            self.metrics
                .push(MetricRow::new(step, "episode_return", mean, seed, &self.arm));
        }
        if p.updates > 0 {
            self.metrics.push(MetricRow::new(
                step,
                "a2c_loss",
                p.loss / p.updates as f64,
                seed,
                &self.arm,
            ));
        }
        if p.aux_updates > 0 {
            let mean = p.aux_loss / p.aux_updates as f64;
            self.metrics
                .push(MetricRow::new(step, "aux_loss", mean, seed, &self.arm));
        }
    }

    fn train(mut self) -> Result<A2cRun> {
        let total = self.cfg.total_steps;
        let workers = self.workers.len() as u64;
        while self.steps < total {
            let mut per_worker: Vec<Vec<Step>> = (0..workers).map(|_| Vec::new()).collect();
            for _ in 0..self.cfg.rollout {
                if self.steps + workers > total {
                    break;
                }
                let before = self.steps;
                let steps = self.act()?;
                self.steps += workers;
                self.finish_episodes(&steps);
                for (w, s) in steps.into_iter().enumerate() {
                    per_worker[w].push(s);
                }
                if let Some(target) = self.target.as_mut() {
                    if self.steps / self.cfg.target_sync.max(1) > before / self.cfg.target_sync.max(1) {
                        *target = self.net.uvfa_view().expect("many-goals head");
                    }
                }
                if self.cfg.eval_period > 0 && self.steps / self.cfg.eval_period > before / self.cfg.eval_period {
                    self.emit_period();
                }
            }
            if per_worker[0].is_empty() {
                // Fewer steps left than workers; spend nothing more.
                break;
            }
            self.update(per_worker)?;
        }
        let cutoff = total as f64 * (1.0 - self.cfg.final_fraction);
        let tail: Vec<f64> = self
            .episodes
            .iter()
            .filter(|(end, _)| *end as f64 > cutoff)
            .map(|e| e.1)
            .collect();
        let final_return = if tail.is_empty() {
            if self.steps > 0 {
                log::warn!("{}: no episode finished in the final window", self.arm);
            }
            0.0
        } else {
            tail.iter().sum::<f64>() / tail.len() as f64
        };
        if self.steps > 0 {
            let step = self.offset + self.steps;
            self.metrics.push(MetricRow::new(
                step,
                "final_return",
                final_return,
                self.cfg.seed,
                &self.arm,
            ));
        }
        Ok(A2cRun {
            arm: self.arm,
            net: self.net,
            metrics: self.metrics,
            episodes: self.episodes,
            steps: self.steps,
            step_offset: self.offset,
            updates: self.updates,
            final_return,
        })
    }
}
