//! Mastery measurement, held-out goal splits, goal-usage histograms, metric
//! rows and cross-seed run comparison.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::buffers::GoalId;
use crate::gridworld::{Action, World};
use crate::uvfa::{index, UvfaNet};
use crate::{Error, Result};

/// Default evaluation episode length.
pub const EVAL_STEPS: usize = 200;

/// One scalar measurement; serialised as `step,metric_name,value,seed,arm`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: u64,
    pub metric_name: String,
    pub value: f64,
    pub seed: u64,
    pub arm: String,
}

impl MetricRow {
    pub fn new(step: u64, metric: &str, value: f64, seed: u64, arm: &str) -> Self {
        Self {
            step,
            metric_name: metric.to_owned(),
            value,
            seed,
            arm: arm.to_owned(),
        }
    }
}

/// Writes rows with a header; an empty slice still produces the header.
pub fn write_metrics(out: impl Write, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["step", "metric_name", "value", "seed", "arm"])?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(input: impl Read) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Chooses the greedy action for a feasible state and goal state, both given
/// as ids into [`World::feasible_states`].
pub trait GreedyPolicy {
    fn greedy(&mut self, state: usize, goal: usize, legal: &[Action]) -> Action;
}

/// First maximiser among the legal actions.
pub fn argmax_legal(q: &[f64], legal: &[Action]) -> Action {
    let mut best = legal[0];
    for &a in &legal[1..] {
        if q[a.index()] > q[best.index()] {
            best = a;
        }
    }
    best
}

/// Greedy UVFA policy over a world's feasible set. Embeddings of every
/// feasible frame are computed once, so each decision costs one head
/// evaluation.
pub struct UvfaPolicy<'a> {
    net: &'a UvfaNet,
    obs: crate::Tensor,
    goals: crate::Tensor,
}

impl<'a> UvfaPolicy<'a> {
    pub fn new(net: &'a UvfaNet, world: &World) -> Result<Self> {
        let frames: Vec<_> = world.feasible_states().iter().map(|s| world.render(s)).collect();
        let refs: Vec<_> = frames.iter().collect();
        let (mut obs, mut goals) = (Vec::new(), Vec::new());
        for part in refs.chunks(256) {
            obs.push(net.embed_obs(part)?);
            goals.push(net.embed_goal(part)?);
        }
        Ok(Self {
            net,
            obs: crate::Tensor::concat_rows(&obs.iter().collect::<Vec<_>>())?,
            goals: crate::Tensor::concat_rows(&goals.iter().collect::<Vec<_>>())?,
        })
    }

    pub fn q(&self, state: usize, goal: usize) -> Vec<f64> {
        let head = &self.net.layers()[index::HEAD];
        let (w, b) = (head.params[0].data(), head.params[1].data());
        let actions = b.len();
        let mut q = b.to_vec();
        let (es, eg) = (self.obs.row(state), self.goals.row(goal));
        for (k, (x, y)) in es.iter().zip(eg).enumerate() {
            let z = x * y;
            for (qa, wa) in q.iter_mut().zip(&w[k * actions..(k + 1) * actions]) {
                *qa += z * wa;
            }
        }
        q
    }
}

impl GreedyPolicy for UvfaPolicy<'_> {
    fn greedy(&mut self, state: usize, goal: usize, legal: &[Action]) -> Action {
        argmax_legal(&self.q(state, goal), legal)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MasteryReport {
    pub step: u64,
    pub fraction_achieved: f64,
    /// Goal state ids, aligned with `achieved`.
    pub goals: Vec<usize>,
    pub achieved: Vec<bool>,
    pub wall_clock_secs: f64,
}

/// One greedy episode per goal from a uniformly drawn feasible start. The
/// noise stream of goal `i` is stream `i` of `seed`, so results do not
/// depend on evaluation order.
pub fn evaluate_mastery(
    world: &World,
    policy: &mut impl GreedyPolicy,
    goals: &[usize],
    max_steps: usize,
    seed: u64,
    step: u64,
) -> MasteryReport {
    let clock = Instant::now();
    let states = world.feasible_states();
    let mut achieved = Vec::with_capacity(goals.len());
    for (i, &goal) in goals.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let mut state = states[rng.random_range(0..states.len())];
        let mut id = world.state_id(&state).expect("feasible start");
        let mut t = 0;
        while id != goal && t < max_steps {
            let legal = world.legal_actions(&state);
            let action = policy.greedy(id, goal, legal);
            state = world.step(&state, action, &mut rng).expect("greedy action is legal");
            id = world.state_id(&state).expect("feasibility is closed under step");
            t += 1;
        }
        achieved.push(id == goal);
    }
    let hits = achieved.iter().filter(|&&a| a).count();
    MasteryReport {
        step,
        fraction_achieved: if goals.is_empty() {
            0.0
        } else {
            hits as f64 / goals.len() as f64
        },
        goals: goals.to_vec(),
        achieved,
        wall_clock_secs: clock.elapsed().as_secs_f64(),
    }
}

/// Disjoint train and held-out goal state ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HoldoutSplit {
    pub train: Vec<usize>,
    pub heldout: Vec<usize>,
    pub seed: u64,
}

impl HoldoutSplit {
    pub fn is_heldout(&self, goal: usize) -> bool {
        self.heldout.binary_search(&goal).is_ok()
    }
}

/// Seeded uniform split holding out `round(fraction * n)` goals.
pub fn holdout_split(goals: &[usize], fraction: f64, seed: u64) -> Result<HoldoutSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "holdout fraction must lie in (0, 1), got {fraction}"
        )));
    }
    if goals.len() < 5 {
        return Err(Error::Config(format!(
            "holdout needs at least 5 goals, got {}",
            goals.len()
        )));
    }
    let mut shuffled = goals.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = (fraction * goals.len() as f64).round() as usize;
    let mut heldout = shuffled[..k].to_vec();
    let mut train = shuffled[k..].to_vec();
    heldout.sort_unstable();
    train.sort_unstable();
    Ok(HoldoutSplit { train, heldout, seed })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HistogramBin {
    pub bin_low: f64,
    pub bin_high: f64,
    pub proportion: f64,
}

/// How often each goal appearing in `log` was used, binned into `bins`
/// equal-width bins over `[0, max count]`; proportions are over distinct
/// goals.
pub fn goal_update_histogram(log: &[GoalId], bins: usize) -> Vec<HistogramBin> {
    let mut counts: BTreeMap<GoalId, u64> = BTreeMap::new();
    for &g in log {
        *counts.entry(g).or_default() += 1;
    }
    histogram_of_counts(counts.values().copied(), bins)
}

/// Same binning from per-goal counts; zero counts are skipped.
pub fn histogram_of_counts(counts: impl IntoIterator<Item = u64>, bins: usize) -> Vec<HistogramBin> {
    let counts: Vec<u64> = counts.into_iter().filter(|&c| c > 0).collect();
    let bins = bins.max(1);
    let max = counts.iter().copied().max().unwrap_or(1) as f64;
    let width = max / bins as f64;
    let mut occupied = vec![0usize; bins];
    for &c in &counts {
        let b = ((c as f64 / width) as usize).min(bins - 1);
        occupied[b] += 1;
    }
    let total = counts.len().max(1) as f64;
    (0..bins)
        .map(|b| HistogramBin {
            bin_low: b as f64 * width,
            bin_high: (b + 1) as f64 * width,
            proportion: occupied[b] as f64 / total,
        })
        .collect()
}

pub fn write_histogram(out: impl Write, bins: &[HistogramBin]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for b in bins {
        w.serialize(b)?;
    }
    if bins.is_empty() {
        w.write_record(["bin_low", "bin_high", "proportion"])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Statistic {
    Mean,
    Median,
}

impl Statistic {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mean" => Some(Self::Mean),
            "median" => Some(Self::Median),
            _ => None,
        }
    }

    pub fn apply(self, values: &[f64]) -> f64 {
        match self {
            Statistic::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Statistic::Median => {
                let mut v = values.to_vec();
                v.sort_by(f64::total_cmp);
                let n = v.len();
                if n % 2 == 1 {
                    v[n / 2]
                } else {
                    0.5 * (v[n / 2 - 1] + v[n / 2])
                }
            }
        }
    }
}

/// Cross-seed aggregate of one arm's metric at one step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub arm: String,
    pub metric_name: String,
    pub step: u64,
    pub value: f64,
    pub min: f64,
    pub max: f64,
    pub seeds: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    /// Per metric, each arm's aggregate at its last step minus the first
    /// arm's (arms in name order).
    pub final_deltas: Vec<(String, String, f64)>,
}

/// Aggregates rows by arm, metric and step across seeds. Every seed of an
/// arm must report the same steps for a metric.
pub fn compare_runs(rows: &[MetricRow], statistic: Statistic) -> Result<Comparison> {
    // arm -> metric -> seed -> step -> value
    type Series = BTreeMap<u64, BTreeMap<u64, f64>>;
    let mut grouped: BTreeMap<&str, BTreeMap<&str, Series>> = BTreeMap::new();
    for r in rows {
        grouped
            .entry(&r.arm)
            .or_default()
            .entry(&r.metric_name)
            .or_default()
            .entry(r.seed)
            .or_default()
            .insert(r.step, r.value);
    }
    let mut out = Vec::new();
    let mut finals: BTreeMap<&str, Vec<(&str, f64)>> = BTreeMap::new();
    for (arm, metrics) in &grouped {
        for (metric, seeds) in metrics {
            let grids: BTreeSet<Vec<u64>> = seeds.values().map(|s| s.keys().copied().collect()).collect();
            if grids.len() != 1 {
                return Err(Error::Compare(format!(
                    "arm {arm}, metric {metric}: seeds report different step grids"
                )));
            }
            let grid = grids.into_iter().next().expect("one grid");
            for &step in &grid {
                let values: Vec<f64> = seeds.values().map(|s| s[&step]).collect();
                out.push(ComparisonRow {
                    arm: (*arm).to_owned(),
                    metric_name: (*metric).to_owned(),
                    step,
                    value: statistic.apply(&values),
                    min: values.iter().copied().fold(f64::INFINITY, f64::min),
                    max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    seeds: values.len(),
                });
            }
            if let Some(last) = out.last() {
                finals.entry(metric).or_default().push((arm, last.value));
            }
        }
    }
    let mut final_deltas = Vec::new();
    for (metric, arms) in finals {
        let base = arms[0].1;
        for (arm, v) in arms {
            final_deltas.push((metric.to_owned(), arm.to_owned(), v - base));
        }
    }
    Ok(Comparison {
        rows: out,
        final_deltas,
    })
}

pub fn write_comparison(out: impl Write, cmp: &Comparison) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["arm", "metric_name", "step", "value", "min", "max", "seeds"])?;
    for r in &cmp.rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
