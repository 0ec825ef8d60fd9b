use std::collections::VecDeque;
use std::ops::Range;

use rand::Rng;

use crate::gridworld::Observation;
use crate::numerics::{backward_chain, forward_chain, Gradients, Layer};
use crate::uvfa::{frames_tensor, NetConfig};
use crate::{Error, Result};

use super::net::rp_head_spec;

/// Zero, positive and negative reward.
pub const REWARD_CLASSES: usize = 3;

pub fn reward_class(reward: f64) -> usize {
    if reward > 0.0 {
        1
    } else if reward < 0.0 {
        2
    } else {
        0
    }
}

/// Three consecutive frames and the class of the reward that followed them.
#[derive(Clone, Debug, Default)]
pub struct RpBatch<'a> {
    pub stacks: Vec<[&'a Observation; 3]>,
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct RpOutput {
    pub loss: f64,
    pub accuracy: f64,
    pub grads: Gradients,
}

/// Cross-entropy of the reward-class head `layers[head]` over the trunk
/// `layers[trunk]`. Each frame goes through the trunk on its own and the
/// three features are concatenated. Classes outside `observed` are masked
/// out of the softmax.
pub fn rp_loss(
    layers: &[Layer],
    trunk: Range<usize>,
    head: usize,
    batch: &RpBatch<'_>,
    observed: [bool; REWARD_CLASSES],
) -> Result<RpOutput> {
    let n = batch.stacks.len();
    if n == 0 || batch.labels.len() != n {
        return Err(Error::Config("reward-prediction batch is empty or ragged".into()));
    }
    if let Some(&bad) = batch.labels.iter().find(|&&l| l >= REWARD_CLASSES || !observed[l]) {
        return Err(Error::Config(format!("label {bad} is not an observed class")));
    }
    let frames: Vec<&Observation> = batch.stacks.iter().flatten().copied().collect();
    let (h, caches) = forward_chain(layers, trunk.clone(), frames_tensor(&frames))?;
    let hidden = h.shape()[1];
    // Rows 3i..3i+3 are contiguous, so the reshape concatenates each stack.
    let features = h.reshape(&[n, 3 * hidden])?;
    let (logits, head_cache) = layers[head].forward(&[&features])?;
    let mut dlogits = vec![0.0; n * REWARD_CLASSES];
    let (mut loss, mut correct) = (0.0, 0usize);
    for i in 0..n {
        let row = logits.row(i);
        let max = (0..REWARD_CLASSES)
            .filter(|&c| observed[c])
            .map(|c| row[c])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut p = [0.0; REWARD_CLASSES];
        for c in (0..REWARD_CLASSES).filter(|&c| observed[c]) {
            p[c] = (row[c] - max).exp();
        }
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= total);
        let label = batch.labels[i];
        loss -= p[label].ln();
        let best = (0..REWARD_CLASSES)
            .filter(|&c| observed[c])
            .max_by(|&a, &b| row[a].total_cmp(&row[b]))
            .expect("label class is observed");
        correct += usize::from(best == label);
        for c in (0..REWARD_CLASSES).filter(|&c| observed[c]) {
            let onehot = if c == label { 1.0 } else { 0.0 };
            dlogits[i * REWARD_CLASSES + c] = (p[c] - onehot) / n as f64;
        }
    }
    let loss = loss / n as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("reward-prediction loss"));
    }
    let mut grads = Gradients::zeros_like(layers);
    let dlogits = crate::Tensor::new(vec![n, REWARD_CLASSES], dlogits)?;
    let g = layers[head].backward(&head_cache, &dlogits)?;
    grads.accumulate(head, &g.params);
    let dh = g
        .inputs
        .into_iter()
        .next()
        .expect("dense input")
        .reshape(&[3 * n, hidden])?;
    backward_chain(layers, trunk, &caches, dh, &mut grads)?;
    Ok(RpOutput {
        loss,
        accuracy: correct as f64 / n as f64,
        grads,
    })
}

/// Standalone reward-sign classifier used for pretraining.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardPredictor {
    config: NetConfig,
    layers: Vec<Layer>,
}

impl RewardPredictor {
    pub const HEAD: usize = 6;

    pub fn new(config: NetConfig, rng: &mut impl Rng) -> Self {
        let mut specs = config.trunk_specs(config.input[2]);
        specs.push(rp_head_spec(&config));
        let layers = specs.into_iter().map(|s| Layer::new(s, rng)).collect();
        Self { config, layers }
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

    pub fn trunk(&self) -> &[Layer] {
        &self.layers[..Self::HEAD]
    }

    pub fn loss(&self, batch: &RpBatch<'_>, observed: [bool; REWARD_CLASSES]) -> Result<RpOutput> {
        rp_loss(&self.layers, 0..Self::HEAD, Self::HEAD, batch, observed)
    }
}

/// Per-class rings of frame stacks, sampled class-balanced.
#[derive(Clone, Debug)]
pub struct RpBuffer {
    capacity: usize,
    classes: [VecDeque<[Observation; 3]>; REWARD_CLASSES],
    seen: [u64; REWARD_CLASSES],
}

impl RpBuffer {
    pub fn new(capacity_per_class: usize) -> Self {
        assert!(capacity_per_class > 0, "class capacity must be positive");
        Self {
            capacity: capacity_per_class,
            classes: Default::default(),
            seen: [0; REWARD_CLASSES],
        }
    }

    pub fn push(&mut self, stack: [Observation; 3], reward: f64) {
        let c = reward_class(reward);
        self.seen[c] += 1;
        let ring = &mut self.classes[c];
        if ring.len() == self.capacity {
            ring.pop_front();
        }
        ring.push_back(stack);
    }

    /// Examples pushed per class, including evicted ones.
    pub fn seen(&self) -> [u64; REWARD_CLASSES] {
        self.seen
    }

    pub fn observed(&self) -> [bool; REWARD_CLASSES] {
        std::array::from_fn(|c| !self.classes[c].is_empty())
    }

    pub fn observed_count(&self) -> usize {
        self.observed().iter().filter(|&&o| o).count()
    }

    /// `n` stacks cycling through the observed classes, uniform within each.
    pub fn sample_balanced(&self, n: usize, rng: &mut impl Rng) -> RpBatch<'_> {
        let present: Vec<usize> = (0..REWARD_CLASSES).filter(|&c| !self.classes[c].is_empty()).collect();
        let mut batch = RpBatch::default();
        if present.is_empty() {
            return batch;
        }
        let offset = rng.random_range(0..present.len());
        for i in 0..n {
            let c = present[(i + offset) % present.len()];
            let ring = &self.classes[c];
            let [a, b, d] = &ring[rng.random_range(0..ring.len())];
            batch.stacks.push([a, b, d]);
            batch.labels.push(c);
        }
        batch
    }
}
