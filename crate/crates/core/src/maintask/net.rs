use rand::Rng;

use crate::gridworld::{Action, Observation};
use crate::numerics::{backward_chain, forward_chain, infer_chain, Gradients, Layer, LayerSpec, Tensor};
use crate::uvfa::{frames_tensor, NetConfig, UvfaNet};
use crate::{Error, Result};

use super::reward_prediction::REWARD_CLASSES;

/// Layer positions inside [`ActorCritic::layers`].
pub mod index {
    pub const TRUNK: std::ops::Range<usize> = 0..6;
    pub const POLICY: usize = 6;
    pub const VALUE: usize = 7;
    /// First auxiliary layer, if any.
    pub const AUX: usize = 8;
}

/// Extra head trained alongside the actor-critic loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AuxTask {
    None,
    /// Goal-conditioned Q branch on the shared trunk.
    ManyGoals,
    /// Three-frame reward-sign classifier on the shared trunk.
    RewardPrediction,
}

impl AuxTask {
    pub fn name(self) -> &'static str {
        match self {
            AuxTask::None => "none",
            AuxTask::ManyGoals => "many_goals",
            AuxTask::RewardPrediction => "reward_prediction",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(AuxTask::None),
            "many_goals" | "mg" => Some(AuxTask::ManyGoals),
            "reward_prediction" | "rp" => Some(AuxTask::RewardPrediction),
            _ => None,
        }
    }
}

/// Policy and value heads over the same trunk as the goal-conditioned
/// network, plus an optional auxiliary head.
#[derive(Clone, Debug, PartialEq)]
pub struct ActorCritic {
    config: NetConfig,
    aux: AuxTask,
    layers: Vec<Layer>,
}

impl ActorCritic {
    pub fn specs(config: &NetConfig, aux: AuxTask) -> Vec<LayerSpec> {
        let mut specs = config.trunk_specs(config.input[2]);
        specs.push(LayerSpec::Dense {
            fan_in: config.hidden,
            fan_out: config.actions,
        });
        specs.push(LayerSpec::Dense {
            fan_in: config.hidden,
            fan_out: 1,
        });
        match aux {
            AuxTask::None => {}
            AuxTask::ManyGoals => specs.extend_from_slice(&config.specs()[index::TRUNK.end..]),
            AuxTask::RewardPrediction => specs.push(rp_head_spec(config)),
        }
        specs
    }

    pub fn new(config: NetConfig, aux: AuxTask, rng: &mut impl Rng) -> Self {
        let layers = Self::specs(&config, aux)
            .into_iter()
            .map(|s| Layer::new(s, rng))
            .collect();
        Self { config, aux, layers }
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn aux(&self) -> AuxTask {
        self.aux
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn trunk(&self) -> &[Layer] {
        &self.layers[index::TRUNK]
    }

    /// Replaces the trunk with pretrained layers of identical shape.
    pub fn load_trunk(&mut self, trunk: &[Layer]) -> Result<()> {
        let ok = trunk.len() == index::TRUNK.len()
            && trunk
                .iter()
                .zip(&self.layers[index::TRUNK])
                .all(|(a, b)| a.spec == b.spec);
        if !ok {
            return Err(Error::Config("pretrained trunk does not match the network".into()));
        }
        self.layers[index::TRUNK].clone_from_slice(trunk);
        Ok(())
    }

    /// Policy logits `[B, actions]` and state values for a batch of frames.
    pub fn evaluate(&self, frames: &[&Observation]) -> Result<(Tensor, Vec<f64>)> {
        let h = infer_chain(&self.layers, index::TRUNK, frames_tensor(frames))?;
        let logits = self.layers[index::POLICY].infer(&[&h])?;
        let values = self.layers[index::VALUE].infer(&[&h])?.into_data();
        Ok((logits, values))
    }

    /// The goal-conditioned network formed by the trunk and the many-goals
    /// branch.
    pub fn uvfa_view(&self) -> Option<UvfaNet> {
        if self.aux != AuxTask::ManyGoals {
            return None;
        }
        let layers = self.layers[index::TRUNK]
            .iter()
            .chain(&self.layers[index::AUX..])
            .cloned()
            .collect();
        Some(UvfaNet::from_layers(self.config, layers).expect("view matches uvfa specs"))
    }

    /// Maps gradients of [`Self::uvfa_view`] onto this network's layout.
    pub fn gradients_from_view(&self, view: &Gradients) -> Gradients {
        let mut out = Gradients::zeros_like(&self.layers);
        for (i, g) in view.0.iter().enumerate() {
            let slot = if i < index::TRUNK.end {
                i
            } else {
                index::AUX + i - index::TRUNK.end
            };
            out.accumulate(slot, g);
        }
        out
    }
}

pub(crate) fn rp_head_spec(config: &NetConfig) -> LayerSpec {
    LayerSpec::Dense {
        fan_in: 3 * config.hidden,
        fan_out: REWARD_CLASSES,
    }
}

/// One batch of actor-critic experience with its bootstrapped returns.
#[derive(Clone, Debug, Default)]
pub struct Rollout {
    pub frames: Vec<Observation>,
    pub actions: Vec<Action>,
    /// Legal actions are always a prefix of [`Action::ALL`]; this is its
    /// length.
    pub legal: Vec<usize>,
    pub returns: Vec<f64>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputLoss {
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub dlogits: Tensor,
    pub dvalues: Vec<f64>,
}

fn masked_softmax(logits: &[f64], legal: usize) -> Vec<f64> {
    let max = logits[..legal].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits[..legal].iter().map(|z| (z - max).exp()).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    p
}

/// Policy distribution over the legal prefix of each row.
pub fn policy_probs(logits: &Tensor, legal: &[usize]) -> Vec<Vec<f64>> {
    legal
        .iter()
        .enumerate()
        .map(|(i, &k)| masked_softmax(logits.row(i), k))
        .collect()
}

/// Mean over steps of `-log π(a|s) A - c H(π) + β ½ (R - V)²` with the
/// advantage `A = R - V` held constant; illegal actions get no probability
/// and no gradient.
pub fn a2c_output_loss(
    logits: &Tensor,
    values: &[f64],
    rollout: &Rollout,
    value_weight: f64,
    entropy_weight: f64,
) -> OutputLoss {
    let n = rollout.len();
    let width = logits.shape()[1];
    let mut dlogits = vec![0.0; n * width];
    let mut dvalues = vec![0.0; n];
    let (mut policy_loss, mut value_loss, mut entropy) = (0.0, 0.0, 0.0);
    let scale = 1.0 / n as f64;
    for t in 0..n {
        let legal = rollout.legal[t];
        let p = masked_softmax(logits.row(t), legal);
        let a = rollout.actions[t].index();
        let adv = rollout.returns[t] - values[t];
        let h: f64 = -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>();
        policy_loss -= p[a].ln() * adv;
        value_loss += 0.5 * adv * adv;
        entropy += h;
        let row = &mut dlogits[t * width..t * width + legal];
        for (i, d) in row.iter_mut().enumerate() {
            let onehot = if i == a { 1.0 } else { 0.0 };
            let log_p = if p[i] > 0.0 { p[i].ln() } else { 0.0 };
            *d = scale * (-adv * (onehot - p[i]) + entropy_weight * p[i] * (log_p + h));
        }
        dvalues[t] = -scale * value_weight * adv;
    }
    let (policy_loss, value_loss, entropy) = (policy_loss * scale, value_loss * scale, entropy * scale);
    OutputLoss {
        loss: policy_loss + value_weight * value_loss - entropy_weight * entropy,
        policy_loss,
        value_loss,
        entropy,
        dlogits: Tensor::new(vec![n, width], dlogits).expect("sized above"),
        dvalues,
    }
}

/// Actor-critic loss of `net` on `rollout` with parameter gradients.
pub fn a2c_loss(
    net: &ActorCritic,
    rollout: &Rollout,
    value_weight: f64,
    entropy_weight: f64,
) -> Result<(OutputLoss, Gradients)> {
    if rollout.is_empty() {
        return Err(Error::Config("empty rollout".into()));
    }
    let frames: Vec<&Observation> = rollout.frames.iter().collect();
    let layers = &net.layers;
    let (h, trunk) = forward_chain(layers, index::TRUNK, frames_tensor(&frames))?;
    let (logits, policy_cache) = layers[index::POLICY].forward(&[&h])?;
    let (values, value_cache) = layers[index::VALUE].forward(&[&h])?;
    let out = a2c_output_loss(&logits, values.data(), rollout, value_weight, entropy_weight);
    if !out.loss.is_finite() {
        return Err(Error::NonFinite("actor-critic loss"));
    }
    let mut grads = Gradients::zeros_like(layers);
    let gp = layers[index::POLICY].backward(&policy_cache, &out.dlogits)?;
    let dv = Tensor::new(vec![rollout.len(), 1], out.dvalues.clone())?;
    let gv = layers[index::VALUE].backward(&value_cache, &dv)?;
    grads.accumulate(index::POLICY, &gp.params);
    grads.accumulate(index::VALUE, &gv.params);
    let mut dh = gp.inputs.into_iter().next().expect("dense input");
    dh.add_scaled(&gv.inputs[0], 1.0);
    backward_chain(layers, index::TRUNK, &trunk, dh, &mut grads)?;
    Ok((out, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{Layout, StartMode, World};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_step(logits: Vec<f64>, legal: usize, action: Action, ret: f64) -> (Tensor, Rollout) {
        let obs = Observation::from_pixels(1, 1, vec![0, 0, 0]);
        let rollout = Rollout {
            frames: vec![obs],
            actions: vec![action],
            legal: vec![legal],
            returns: vec![ret],
        };
        (Tensor::new(vec![1, 5], logits).unwrap(), rollout)
    }

    #[test]
    fn half_probability_example() {
        // π(a) = 3 / (3 + 1 + 1 + 1) = 0.5 among four legal moves
        let (logits, rollout) = one_step(vec![3f64.ln(), 0.0, 0.0, 0.0, 50.0], 4, Action::Up, 2.0);
        let out = a2c_output_loss(&logits, &[0.0], &rollout, 0.5, 0.0);
        let expected = 2.0 * 2f64.ln() + 1.0;
        assert!((out.loss - expected).abs() < 1e-12, "{} vs {expected}", out.loss);
        assert_eq!(out.dlogits.data()[4], 0.0);
    }

    #[test]
    fn output_gradients_match_finite_differences() {
        let base = vec![0.3, -0.2, 0.9, 0.1, -0.4];
        let (logits, rollout) = one_step(base.clone(), 5, Action::Left, 1.3);
        let (vw, ew) = (0.5, 0.1);
        let v = 0.4;
        let out = a2c_output_loss(&logits, &[v], &rollout, vw, ew);
        // The advantage is a constant in the policy term, so only the
        // entropy and the action term move with the logits.
        let adv = 1.3 - v;
        let surrogate = |z: &[f64]| {
            let p = masked_softmax(z, 5);
            let h: f64 = -p.iter().map(|x| x * x.ln()).sum::<f64>();
            -p[2].ln() * adv - ew * h
        };
        for i in 0..5 {
            let mut hi = base.clone();
            let mut lo = base.clone();
            hi[i] += 1e-6;
            lo[i] -= 1e-6;
            let fd = (surrogate(&hi) - surrogate(&lo)) / 2e-6;
            assert!(
                (fd - out.dlogits.data()[i]).abs() < 1e-7,
                "logit {i}: {fd} vs {}",
                out.dlogits.data()[i]
            );
        }
        let value_loss = |v: f64| vw * 0.5 * (1.3 - v) * (1.3 - v);
        let fd = (value_loss(v + 1e-6) - value_loss(v - 1e-6)) / 2e-6;
        assert!((fd - out.dvalues[0]).abs() < 1e-8);
    }

    #[test]
    fn uvfa_view_round_trips_gradients() {
        let world = World::new(Layout::compact());
        let cfg = NetConfig::new(world.observation_shape()).with_widths(16, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = ActorCritic::new(cfg, AuxTask::ManyGoals, &mut rng);
        let view = net.uvfa_view().unwrap();
        assert_eq!(view.layers().len(), 10);
        let mut g = Gradients::zeros_like(view.layers());
        g.0[0][1].data_mut()[0] = 1.0;
        g.0[9][1].data_mut()[2] = 2.0;
        let mapped = net.gradients_from_view(&g);
        assert_eq!(mapped.0[0][1].data()[0], 1.0);
        assert_eq!(mapped.0[index::AUX + 3][1].data()[2], 2.0);
        assert_eq!(mapped.0[index::POLICY][1].max_abs(), 0.0);
        assert!(ActorCritic::new(cfg, AuxTask::None, &mut rng).uvfa_view().is_none());
        let s = world.render(&world.reset(&mut rng, StartMode::RandomFeasible));
        let (logits, values) = net.evaluate(&[&s, &s]).unwrap();
        assert_eq!(logits.shape(), &[2, 5]);
        assert_eq!(values.len(), 2);
    }

    #[test]
    fn network_gradients_match_finite_differences() {
        let world = World::new(Layout::tiny());
        let cfg = NetConfig::new(world.observation_shape()).with_widths(8, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut net = ActorCritic::new(cfg, AuxTask::None, &mut rng);
        for layer in net.layers_mut() {
            if let Some(b) = layer.params.get_mut(1) {
                b.data_mut().iter_mut().for_each(|x| *x = rng.random_range(0.05..0.2));
            }
        }
        let states: Vec<_> = (0..3)
            .map(|_| world.reset(&mut rng, StartMode::RandomFeasible))
            .collect();
        let rollout = Rollout {
            frames: states.iter().map(|s| world.render(s)).collect(),
            actions: vec![Action::Up, Action::Right, Action::Down],
            legal: states.iter().map(|s| world.legal_actions(s).len()).collect(),
            returns: vec![0.7, -0.2, 1.1],
        };
        let (_, grads) = a2c_loss(&net, &rollout, 0.5, 0.01).unwrap();
        // Hold the advantages fixed by differencing against frozen values.
        let frozen = {
            let frames: Vec<&Observation> = rollout.frames.iter().collect();
            net.evaluate(&frames).unwrap().1
        };
        let loss_at = |net: &ActorCritic| {
            let frames: Vec<&Observation> = rollout.frames.iter().collect();
            let (logits, values) = net.evaluate(&frames).unwrap();
            let policy = a2c_output_loss(&logits, &frozen, &rollout, 0.0, 0.01).loss;
            let value: f64 = (0..rollout.len())
                .map(|t| 0.5 * 0.5 * (rollout.returns[t] - values[t]).powi(2))
                .sum();
            policy + value / rollout.len() as f64
        };
        let h = 1e-6;
        let mut checked = 0;
        for (li, pi, k) in [
            (4usize, 0usize, 3usize),
            (6, 0, 5),
            (6, 1, 2),
            (7, 0, 1),
            (7, 1, 0),
            (0, 1, 4),
        ] {
            let mut hi = net.clone();
            hi.layers_mut()[li].params[pi].data_mut()[k] += h;
            let mut lo = net.clone();
            lo.layers_mut()[li].params[pi].data_mut()[k] -= h;
            let fd = (loss_at(&hi) - loss_at(&lo)) / (2.0 * h);
            let an = grads.0[li][pi].data()[k];
            assert!(
                (fd - an).abs() <= 1e-6 + 1e-4 * an.abs(),
                "layer {li} param {pi}[{k}]: {fd} vs {an}"
            );
            checked += 1;
        }
        assert_eq!(checked, 6);
    }
}
