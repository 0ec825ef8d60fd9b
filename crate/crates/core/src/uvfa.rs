//! Goal-conditioned action values `Q(s, a, g)`.
//!
//! Observation and goal go through the same convolutional trunk, then each
//! through its own linear embedding. The two embeddings are multiplied
//! elementwise and a linear head maps the product to one value per action.
//! Separate embeddings matter: with a single one, `Q(s, a, g)` would be
//! symmetric in `s` and `g`.

use rand::Rng;

use crate::buffers::Transition;
use crate::gridworld::{Action, Observation};
use crate::numerics::{
    backward_chain, check_gradients, forward_chain, infer_chain, Cache, GradCheckReport, Gradients, Layer, LayerSpec,
    RmsProp, Tensor,
};
use crate::{Error, Result};

/// Layer indices inside [`UvfaNet::layers`].
pub mod index {
    pub const TRUNK: std::ops::Range<usize> = 0..6;
    pub const EMBED_OBS: usize = 6;
    pub const EMBED_GOAL: usize = 7;
    pub const PRODUCT: usize = 8;
    pub const HEAD: usize = 9;
}

/// Reward and discount of a goal transition: `(0, 0)` on arrival, otherwise
/// a step cost of 0.1 with discount 0.99.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GoalReward {
    pub reward: f64,
    pub discount: f64,
}

impl GoalReward {
    pub const ARRIVED: GoalReward = GoalReward {
        reward: 0.0,
        discount: 0.0,
    };
    pub const STEP: GoalReward = GoalReward {
        reward: -0.1,
        discount: 0.99,
    };
}

pub fn goal_reward(next_obs: &Observation, goal: &Observation) -> GoalReward {
    if next_obs == goal {
        GoalReward::ARRIVED
    } else {
        GoalReward::STEP
    }
}

/// Architecture of the trunk and heads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetConfig {
    /// `[rows, cols, channels]` of one input frame.
    pub input: [usize; 3],
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub hidden: usize,
    pub embed: usize,
    pub actions: usize,
}

impl NetConfig {
    pub fn new(input: [usize; 3]) -> Self {
        Self {
            input,
            conv1_filters: 16,
            conv2_filters: 32,
            kernel: 2,
            stride: 2,
            hidden: 512,
            embed: 1024,
            actions: Action::COUNT,
        }
    }

    pub fn with_widths(mut self, hidden: usize, embed: usize) -> Self {
        self.hidden = hidden;
        self.embed = embed;
        self
    }

    fn conv_out(&self, size: usize) -> usize {
        let once = (size - self.kernel) / self.stride + 1;
        (once - self.kernel) / self.stride + 1
    }

    /// Flattened width of the second convolution's output.
    pub fn conv_features(&self) -> usize {
        self.conv_out(self.input[0]) * self.conv_out(self.input[1]) * self.conv2_filters
    }

    /// conv → relu → conv → relu → dense → relu; input frames of
    /// `channels` channels.
    pub fn trunk_specs(&self, channels: usize) -> Vec<LayerSpec> {
        vec![
            LayerSpec::Conv2d {
                in_channels: channels,
                out_channels: self.conv1_filters,
                kernel: self.kernel,
                stride: self.stride,
            },
            LayerSpec::Relu,
            LayerSpec::Conv2d {
                in_channels: self.conv1_filters,
                out_channels: self.conv2_filters,
                kernel: self.kernel,
                stride: self.stride,
            },
            LayerSpec::Relu,
            LayerSpec::Dense {
                fan_in: self.conv_features(),
                fan_out: self.hidden,
            },
            LayerSpec::Relu,
        ]
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        let mut specs = self.trunk_specs(self.input[2]);
        let embed = LayerSpec::Dense {
            fan_in: self.hidden,
            fan_out: self.embed,
        };
        specs.extend([embed, embed]);
        specs.push(LayerSpec::Product);
        specs.push(LayerSpec::Dense {
            fan_in: self.embed,
            fan_out: self.actions,
        });
        specs
    }
}

/// Stacks frames into a `[n, rows, cols, 3]` tensor scaled to `[0, 1]`.
pub fn frames_tensor(frames: &[&Observation]) -> Tensor {
    let shape = frames.first().map_or([0, 0, 3], |o| o.shape());
    let mut data = Vec::with_capacity(frames.len() * shape.iter().product::<usize>());
    for f in frames {
        debug_assert_eq!(f.shape(), shape);
        f.write_unit(&mut data);
    }
    Tensor::new(vec![frames.len(), shape[0], shape[1], shape[2]], data).expect("frames share a shape")
}

/// Forward state kept for backpropagating through (observation, goal) pairs.
struct PairForward {
    obs_rows: usize,
    goal_rows: usize,
    pairs: Vec<(usize, usize)>,
    trunk: Vec<Cache>,
    embed_obs: Cache,
    embed_goal: Cache,
    product: Cache,
    head: Cache,
    q: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UvfaNet {
    config: NetConfig,
    layers: Vec<Layer>,
}

impl UvfaNet {
    pub fn new(config: NetConfig, rng: &mut impl Rng) -> Self {
        let layers = config.specs().into_iter().map(|s| Layer::new(s, rng)).collect();
        Self { config, layers }
    }

    /// Wraps loaded layers after checking them against `config`.
    pub fn from_layers(config: NetConfig, layers: Vec<Layer>) -> Result<Self> {
        let specs = config.specs();
        let found: Vec<LayerSpec> = layers.iter().map(|l| l.spec).collect();
        if found != specs {
            return Err(Error::Config(format!(
                "checkpoint layers {found:?} do not match the configured network {specs:?}"
            )));
        }
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<Layer> {
        self.layers
    }

    /// Observation embeddings `[n, embed]` of a batch of frames.
    pub fn embed_obs(&self, frames: &[&Observation]) -> Result<Tensor> {
        let h = infer_chain(&self.layers, index::TRUNK, frames_tensor(frames))?;
        Ok(self.layers[index::EMBED_OBS].infer(&[&h])?)
    }

    /// Goal embeddings `[n, embed]` of a batch of frames.
    pub fn embed_goal(&self, frames: &[&Observation]) -> Result<Tensor> {
        let h = infer_chain(&self.layers, index::TRUNK, frames_tensor(frames))?;
        Ok(self.layers[index::EMBED_GOAL].infer(&[&h])?)
    }

    /// `[pairs, actions]` values for `(obs row, goal row)` pairs of two
    /// embedding tables.
    pub fn q_from_embeddings(&self, obs: &Tensor, goals: &Tensor, pairs: &[(usize, usize)]) -> Result<Tensor> {
        let left = gather(obs, pairs.iter().map(|p| p.0));
        let right = gather(goals, pairs.iter().map(|p| p.1));
        let z = self.layers[index::PRODUCT].infer(&[&left, &right])?;
        Ok(self.layers[index::HEAD].infer(&[&z])?)
    }

    /// Values of every action for one observation and goal.
    pub fn q_values(&self, obs: &Observation, goal: &Observation) -> Result<Vec<f64>> {
        let h = infer_chain(&self.layers, index::TRUNK, frames_tensor(&[obs, goal]))?;
        let es = self.layers[index::EMBED_OBS].infer(&[&h.slice_rows(0, 1)])?;
        let eg = self.layers[index::EMBED_GOAL].infer(&[&h.slice_rows(1, 2)])?;
        Ok(self.q_from_embeddings(&es, &eg, &[(0, 0)])?.into_data())
    }

    /// `pairs` index `obs` and `goals` respectively.
    fn forward_pairs(
        &self,
        obs: &[&Observation],
        goals: &[&Observation],
        pairs: &[(usize, usize)],
    ) -> Result<PairForward> {
        let frames: Vec<&Observation> = obs.iter().chain(goals).copied().collect();
        let (h, trunk) = forward_chain(&self.layers, index::TRUNK, frames_tensor(&frames))?;
        let (es, embed_obs) = self.layers[index::EMBED_OBS].forward(&[&h.slice_rows(0, obs.len())])?;
        let (eg, embed_goal) = self.layers[index::EMBED_GOAL].forward(&[&h.slice_rows(obs.len(), frames.len())])?;
        let left = gather(&es, pairs.iter().map(|p| p.0));
        let right = gather(&eg, pairs.iter().map(|p| p.1));
        let (z, product) = self.layers[index::PRODUCT].forward(&[&left, &right])?;
        let (q, head) = self.layers[index::HEAD].forward(&[&z])?;
        Ok(PairForward {
            obs_rows: obs.len(),
            goal_rows: goals.len(),
            pairs: pairs.to_vec(),
            trunk,
            embed_obs,
            embed_goal,
            product,
            head,
            q,
        })
    }

    fn backward_pairs(&self, fwd: &PairForward, dq: Tensor) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(&self.layers);
        let head = self.layers[index::HEAD].backward(&fwd.head, &dq)?;
        grads.accumulate(index::HEAD, &head.params);
        let prod = self.layers[index::PRODUCT].backward(&fwd.product, &head.inputs[0])?;
        let width = self.config.embed;
        let mut de_obs = vec![0.0; fwd.obs_rows * width];
        let mut de_goal = vec![0.0; fwd.goal_rows * width];
        for (k, &(i, j)) in fwd.pairs.iter().enumerate() {
            let dl = prod.inputs[0].row(k);
            let dr = prod.inputs[1].row(k);
            for (d, x) in de_obs[i * width..(i + 1) * width].iter_mut().zip(dl) {
                *d += x;
            }
            for (d, x) in de_goal[j * width..(j + 1) * width].iter_mut().zip(dr) {
                *d += x;
            }
        }
        let de_obs = Tensor::new(vec![fwd.obs_rows, width], de_obs)?;
        let de_goal = Tensor::new(vec![fwd.goal_rows, width], de_goal)?;
        let eo = self.layers[index::EMBED_OBS].backward(&fwd.embed_obs, &de_obs)?;
        let eg = self.layers[index::EMBED_GOAL].backward(&fwd.embed_goal, &de_goal)?;
        grads.accumulate(index::EMBED_OBS, &eo.params);
        grads.accumulate(index::EMBED_GOAL, &eg.params);
        let dh = Tensor::concat_rows(&[&eo.inputs[0], &eg.inputs[0]])?;
        backward_chain(&self.layers, index::TRUNK, &fwd.trunk, dh, &mut grads)?;
        Ok(grads)
    }
}

fn gather(table: &Tensor, rows: impl Iterator<Item = usize>) -> Tensor {
    let width = table.shape()[1];
    let mut data = Vec::new();
    let mut n = 0;
    for r in rows {
        data.extend_from_slice(table.row(r));
        n += 1;
    }
    Tensor::new(vec![n, width], data).expect("gathered rows")
}

/// Every transition paired with every goal.
#[derive(Clone, Debug)]
pub struct TdBatch<'a> {
    pub transitions: Vec<&'a Transition>,
    pub goals: Vec<&'a Observation>,
}

impl TdBatch<'_> {
    pub const TRANSITIONS: usize = 32;
    pub const GOALS: usize = 16;

    pub fn pair_count(&self) -> usize {
        self.transitions.len() * self.goals.len()
    }
}

#[derive(Clone, Debug)]
pub struct TdOutput {
    /// Mean squared TD error over all pairs.
    pub loss: f64,
    /// Mean over transitions for each goal, aligned with `TdBatch::goals`.
    pub per_goal: Vec<f64>,
    pub grads: Gradients,
}

/// Many-goals squared TD error and its gradient with respect to `online`;
/// bootstrap targets come from `target` and carry no gradient.
pub fn td_loss(online: &UvfaNet, target: &UvfaNet, batch: &TdBatch<'_>) -> Result<TdOutput> {
    let (nt, ng) = (batch.transitions.len(), batch.goals.len());
    if nt == 0 || ng == 0 {
        return Err(Error::Config("empty TD batch".into()));
    }
    let states: Vec<&Observation> = batch.transitions.iter().map(|t| &t.s).collect();
    let pairs: Vec<(usize, usize)> = (0..nt).flat_map(|t| (0..ng).map(move |g| (t, g))).collect();
    let fwd = online.forward_pairs(&states, &batch.goals, &pairs)?;

    let next: Vec<&Observation> = batch.transitions.iter().map(|t| &t.s_next).collect();
    let tgt_obs = target.embed_obs(&next)?;
    let tgt_goals = target.embed_goal(&batch.goals)?;
    let q_next = target.q_from_embeddings(&tgt_obs, &tgt_goals, &pairs)?;

    let actions = online.config.actions;
    let p = pairs.len() as f64;
    let mut dq = vec![0.0; pairs.len() * actions];
    let mut per_goal = vec![0.0; ng];
    let mut total = 0.0;
    for (t, tr) in batch.transitions.iter().enumerate() {
        for (g, goal) in batch.goals.iter().enumerate() {
            let k = t * ng + g;
            let gr = goal_reward(&tr.s_next, goal);
            let bootstrap = if gr.discount == 0.0 {
                0.0
            } else {
                q_next.row(k)[..tr.next_actions]
                    .iter()
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max)
            };
            let y = gr.reward + gr.discount * bootstrap;
            let q = fwd.q.row(k)[tr.a.index()];
            let delta = y - q;
            if !delta.is_finite() {
                return Err(Error::NonFiniteTd { transition: t, goal: g });
            }
            let sq = delta * delta;
            total += sq;
            per_goal[g] += sq / nt as f64;
            dq[k * actions + tr.a.index()] = -2.0 * delta / p;
        }
    }
    let dq = Tensor::new(vec![pairs.len(), actions], dq)?;
    let grads = online.backward_pairs(&fwd, dq)?;
    if !grads.all_finite() {
        return Err(Error::NonFinite("TD gradients"));
    }
    Ok(TdOutput {
        loss: total / p,
        per_goal,
        grads,
    })
}

/// Probe loss `½ Σ_a (Q_a − t_a)²` with `t_a = −0.1 (a + 1)`, checked against
/// central differences over every parameter.
pub fn gradient_check(net: &UvfaNet, obs: &Observation, goal: &Observation, tolerance: f64) -> Result<GradCheckReport> {
    let fwd = net.forward_pairs(&[obs], &[goal], &[(0, 0)])?;
    let targets: Vec<f64> = (0..net.config.actions).map(|a| -0.1 * (a as f64 + 1.0)).collect();
    let dq: Vec<f64> = fwd.q.data().iter().zip(&targets).map(|(q, t)| q - t).collect();
    let grads = net.backward_pairs(&fwd, Tensor::new(vec![1, targets.len()], dq)?)?;
    Ok(gradient_report(net, &grads, obs, goal, &targets, tolerance))
}

/// Same check against caller-supplied analytic gradients.
pub fn gradient_report(
    net: &UvfaNet,
    grads: &Gradients,
    obs: &Observation,
    goal: &Observation,
    targets: &[f64],
    tolerance: f64,
) -> GradCheckReport {
    let config = net.config;
    check_gradients(net.layers(), grads, 1e-5, tolerance, |layers| {
        let probe = UvfaNet {
            config,
            layers: layers.to_vec(),
        };
        let q = probe.q_values(obs, goal).expect("probe forward");
        q.iter().zip(targets).map(|(q, t)| 0.5 * (q - t) * (q - t)).sum()
    })
}

/// Online network, its target copy and optimiser.
#[derive(Clone, Debug)]
pub struct UvfaAgent {
    pub online: UvfaNet,
    pub target: UvfaNet,
    pub opt: RmsProp,
}

impl UvfaAgent {
    pub fn new(online: UvfaNet, step_size: f64) -> Self {
        Self {
            target: online.clone(),
            online,
            opt: RmsProp::new(step_size),
        }
    }

    /// One RMSProp step on the TD loss of `batch`.
    pub fn update(&mut self, batch: &TdBatch<'_>) -> Result<TdOutput> {
        let out = td_loss(&self.online, &self.target, batch)?;
        self.opt.step(self.online.layers_mut(), &out.grads)?;
        Ok(out)
    }

    /// Hard copy of the online parameters into the target.
    pub fn sync_target(&mut self) {
        self.target.layers.clone_from(&self.online.layers);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{Layout, StartMode, World};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_config(world: &World) -> NetConfig {
        let mut c = NetConfig::new(world.observation_shape());
        c.conv1_filters = 2;
        c.conv2_filters = 2;
        c.with_widths(8, 6)
    }

    fn distinct_obs(world: &World, n: usize) -> Vec<Observation> {
        world
            .feasible_states()
            .iter()
            .take(n)
            .map(|s| world.render(s))
            .collect()
    }

    fn jitter_biases(net: &mut UvfaNet, rng: &mut impl Rng) {
        for l in net.layers_mut() {
            if let Some(b) = l.params.get_mut(1) {
                b.data_mut().iter_mut().for_each(|x| *x = rng.random_range(-0.1..0.1));
            }
        }
    }

    #[test]
    fn goal_reward_pairs() {
        let world = World::new(Layout::tiny());
        let o = distinct_obs(&world, 2);
        assert_eq!(goal_reward(&o[0], &o[0]), GoalReward::ARRIVED);
        assert_eq!(
            goal_reward(&o[0], &o[1]),
            GoalReward {
                reward: -0.1,
                discount: 0.99
            }
        );
    }

    #[test]
    fn default_parameter_count_is_pinned() {
        let world = World::new(Layout::standard());
        let net = UvfaNet::new(
            NetConfig::new(world.observation_shape()),
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        assert_eq!(crate::numerics::param_count(net.layers()), 1_124_085);
    }

    #[test]
    fn q_values_shape_purity_and_zero_head() {
        let world = World::new(Layout::compact());
        let mut net = UvfaNet::new(tiny_config(&world), &mut ChaCha8Rng::seed_from_u64(1));
        let o = distinct_obs(&world, 2);
        let a = net.q_values(&o[0], &o[1]).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(a, net.q_values(&o[0], &o[1]).unwrap());
        for p in &mut net.layers_mut()[index::HEAD].params {
            p.data_mut().fill(0.0);
        }
        assert_eq!(net.q_values(&o[0], &o[1]).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn td_loss_hand_example() {
        // Zero online head gives Q = 0; a target head with bias -1 gives
        // max Q' = -1; loss = (-0.1 + 0.99 * -1)^2.
        let world = World::new(Layout::compact());
        let mut online = UvfaNet::new(tiny_config(&world), &mut ChaCha8Rng::seed_from_u64(2));
        for p in &mut online.layers_mut()[index::HEAD].params {
            p.data_mut().fill(0.0);
        }
        let mut target = online.clone();
        target.layers_mut()[index::HEAD].params[1].data_mut().fill(-1.0);
        let o = distinct_obs(&world, 3);
        let t = Transition::new(o[0].clone(), Action::Up, o[1].clone(), 4);
        let batch = TdBatch {
            transitions: vec![&t],
            goals: vec![&o[2]],
        };
        let out = td_loss(&online, &target, &batch).unwrap();
        assert!((out.loss - 1.1881).abs() < 1e-12);
    }

    #[test]
    fn arriving_pair_loss_is_q_squared() {
        let world = World::new(Layout::compact());
        let net = UvfaNet::new(tiny_config(&world), &mut ChaCha8Rng::seed_from_u64(3));
        let o = distinct_obs(&world, 2);
        let t = Transition::new(o[0].clone(), Action::Left, o[1].clone(), 4);
        let batch = TdBatch {
            transitions: vec![&t],
            goals: vec![&o[1]],
        };
        let out = td_loss(&net, &net, &batch).unwrap();
        let q = net.q_values(&o[0], &o[1]).unwrap()[Action::Left.index()];
        assert_eq!(out.loss, q * q);
    }

    #[test]
    fn duplicated_batch_keeps_mean_and_goal_means_agree() {
        let world = World::new(Layout::compact());
        let net = UvfaNet::new(tiny_config(&world), &mut ChaCha8Rng::seed_from_u64(4));
        let o = distinct_obs(&world, 8);
        let ts: Vec<Transition> = (0..4)
            .map(|i| Transition::new(o[i].clone(), Action::Down, o[i + 1].clone(), 4))
            .collect();
        let batch = TdBatch {
            transitions: ts.iter().collect(),
            goals: vec![&o[5], &o[6], &o[2]],
        };
        let out = td_loss(&net, &net, &batch).unwrap();
        let goal_mean = out.per_goal.iter().sum::<f64>() / 3.0;
        assert!((goal_mean - out.loss).abs() < 1e-12);
        let doubled = TdBatch {
            transitions: ts.iter().chain(&ts).collect(),
            goals: batch.goals.clone(),
        };
        let out2 = td_loss(&net, &net, &doubled).unwrap();
        assert!((out2.loss - out.loss).abs() < 1e-12);
    }

    #[test]
    fn probe_gradients_match_finite_differences() {
        let world = World::new(Layout::compact());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = UvfaNet::new(tiny_config(&world), &mut rng);
        // Zero biases on all-black patches sit exactly on the ReLU kink.
        jitter_biases(&mut net, &mut rng);
        let o = distinct_obs(&world, 2);
        let report = gradient_check(&net, &o[0], &o[1], 1e-4).unwrap();
        assert!(report.passed, "{report}");
    }

    #[test]
    fn zero_net_has_zero_gradients() {
        let world = World::new(Layout::compact());
        let mut net = UvfaNet::new(tiny_config(&world), &mut ChaCha8Rng::seed_from_u64(6));
        for l in net.layers_mut() {
            for p in &mut l.params {
                p.data_mut().fill(0.0);
            }
        }
        let black = Observation::from_pixels(8, 8, vec![0; 192]);
        let fwd = net.forward_pairs(&[&black], &[&black], &[(0, 0)]).unwrap();
        let dq = Tensor::new(vec![1, 5], vec![0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let grads = net.backward_pairs(&fwd, dq.clone()).unwrap();
        // Only the head bias sees the upstream gradient directly.
        for (i, layer) in grads.0.iter().enumerate() {
            for (j, g) in layer.iter().enumerate() {
                if (i, j) == (index::HEAD, 1) {
                    assert_eq!(g.data(), dq.data());
                } else {
                    assert!(g.max_abs() < 1e-10, "layer {i} tensor {j}");
                }
            }
        }
    }

    #[test]
    fn sync_and_divergence() {
        let world = World::new(Layout::compact());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut agent = UvfaAgent::new(UvfaNet::new(tiny_config(&world), &mut rng), 1e-2);
        let o = distinct_obs(&world, 6);
        let ts: Vec<Transition> = (0..4)
            .map(|i| Transition::new(o[i].clone(), Action::Right, o[i + 1].clone(), 4))
            .collect();
        let batch = TdBatch {
            transitions: ts.iter().collect(),
            goals: vec![&o[5], &o[3]],
        };
        for _ in 0..10 {
            agent.update(&batch).unwrap();
        }
        assert_ne!(agent.online, agent.target);
        agent.sync_target();
        assert_eq!(agent.online, agent.target);
        agent.sync_target();
        assert_eq!(agent.online, agent.target);
        assert_eq!(
            agent.online.q_values(&o[0], &o[5]).unwrap(),
            agent.target.q_values(&o[0], &o[5]).unwrap()
        );
        let s = world.reset(&mut rng, StartMode::RandomFeasible);
        assert!(agent
            .online
            .q_values(&world.render(&s), &o[0])
            .unwrap()
            .iter()
            .all(|q| q.is_finite()));
    }
}
