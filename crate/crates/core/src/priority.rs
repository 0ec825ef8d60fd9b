//! Learning-progress goal priorities.
//!
//! Each goal keeps a ring of its last `2m + 1` per-episode losses. The
//! priority is the summed decrease of loss over a lag of `m` episodes:
//! `p(g) = sum_{k=i-m}^{i} (L_{k-m}(g) - L_k(g))`.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use thiserror::Error;

use crate::buffers::GoalId;

pub const DEFAULT_WINDOW: usize = 5;
/// Floor applied to priorities before normalisation.
pub const PRIORITY_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum PriorityError {
    #[error("loss for goal {goal} must be finite and nonnegative, got {loss}")]
    InvalidLoss { goal: GoalId, loss: f64 },
    #[error("no goals to sample from")]
    NoGoals,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GoalSelection {
    Uniform,
    LearningProgress,
}

impl GoalSelection {
    pub fn name(self) -> &'static str {
        match self {
            GoalSelection::Uniform => "uniform",
            GoalSelection::LearningProgress => "learning_progress",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "uniform" => Some(Self::Uniform),
            "learning_progress" | "lp" => Some(Self::LearningProgress),
            _ => None,
        }
    }
}

/// Priority of a full ring, oldest value first. `None` when the ring holds
/// fewer than `2m + 1` values.
pub fn learning_progress(ring: &[f64], m: usize) -> Option<f64> {
    if ring.len() < 2 * m + 1 {
        return None;
    }
    let base = ring.len() - (2 * m + 1);
    Some((m..=2 * m).map(|j| ring[base + j - m] - ring[base + j]).sum())
}

#[derive(Clone, Debug)]
pub struct GoalStats {
    window: usize,
    rings: Vec<VecDeque<f64>>,
    /// Losses seen during the current episode: goal -> (sum, count).
    pending: BTreeMap<GoalId, (f64, usize)>,
}

impl Default for GoalStats {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW)
    }
}

impl GoalStats {
    pub fn new(window: usize) -> Self {
        assert!(window > 0, "window must be positive");
        Self {
            window,
            rings: Vec::new(),
            pending: BTreeMap::new(),
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn ring(&self, goal: GoalId) -> &[f64] {
        self.rings.get(goal).map_or(&[], |r| r.as_slices().0)
    }

    fn check(goal: GoalId, loss: f64) -> Result<(), PriorityError> {
        if loss.is_finite() && loss >= 0.0 {
            Ok(())
        } else {
            Err(PriorityError::InvalidLoss { goal, loss })
        }
    }

    /// Appends one episode's loss to the goal's ring.
    pub fn record_loss(&mut self, goal: GoalId, loss: f64) -> Result<(), PriorityError> {
        Self::check(goal, loss)?;
        if self.rings.len() <= goal {
            self.rings.resize_with(goal + 1, VecDeque::new);
        }
        let ring = &mut self.rings[goal];
        if ring.len() == 2 * self.window + 1 {
            ring.pop_front();
        }
        ring.push_back(loss);
        ring.make_contiguous();
        Ok(())
    }

    /// Accumulates a per-update loss for the running episode.
    pub fn observe_loss(&mut self, goal: GoalId, loss: f64) -> Result<(), PriorityError> {
        Self::check(goal, loss)?;
        let e = self.pending.entry(goal).or_insert((0.0, 0));
        e.0 += loss;
        e.1 += 1;
        Ok(())
    }

    /// Records each observed goal's mean loss for the episode. Goals with no
    /// updates keep their ring as it was.
    pub fn end_episode(&mut self) -> Result<(), PriorityError> {
        let pending = std::mem::take(&mut self.pending);
        for (goal, (sum, count)) in pending {
            self.record_loss(goal, sum / count as f64)?;
        }
        Ok(())
    }

    pub fn priority(&self, goal: GoalId) -> Option<f64> {
        learning_progress(self.ring(goal), self.window)
    }

    /// Clamped priorities of `candidates`; goals without a full history get
    /// the median of the others, or the floor when none is warm.
    pub fn clamped_priorities(&self, candidates: &[GoalId]) -> Vec<f64> {
        let raw: Vec<Option<f64>> = candidates
            .iter()
            .map(|&g| self.priority(g).map(|p| p.max(PRIORITY_FLOOR)))
            .collect();
        let mut warm: Vec<f64> = raw.iter().flatten().copied().collect();
        let cold = if warm.is_empty() {
            PRIORITY_FLOOR
        } else {
            warm.sort_by(f64::total_cmp);
            let n = warm.len();
            if n % 2 == 1 {
                warm[n / 2]
            } else {
                0.5 * (warm[n / 2 - 1] + warm[n / 2])
            }
        };
        raw.into_iter().map(|p| p.unwrap_or(cold)).collect()
    }

    /// Sampling distribution over `candidates`.
    pub fn distribution(&self, candidates: &[GoalId], mode: GoalSelection) -> Vec<f64> {
        let weights = match mode {
            GoalSelection::Uniform => vec![1.0; candidates.len()],
            GoalSelection::LearningProgress => self.clamped_priorities(candidates),
        };
        let total: f64 = weights.iter().sum();
        weights.into_iter().map(|w| w / total).collect()
    }

    /// Draws one of `candidates`.
    pub fn sample_behavior_goal(
        &self,
        candidates: &[GoalId],
        rng: &mut impl Rng,
        mode: GoalSelection,
    ) -> Result<GoalId, PriorityError> {
        if candidates.is_empty() {
            return Err(PriorityError::NoGoals);
        }
        let i = match mode {
            GoalSelection::Uniform => rng.random_range(0..candidates.len()),
            GoalSelection::LearningProgress => {
                let w = self.clamped_priorities(candidates);
                WeightedIndex::new(&w)
                    .expect("clamped weights are positive")
                    .sample(rng)
            }
        };
        Ok(candidates[i])
    }

    /// CSV rows `goal_id,priority,probability`; cold goals print an empty
    /// priority.
    pub fn write_snapshot(&self, out: impl Write, candidates: &[GoalId], mode: GoalSelection) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["goal_id", "priority", "probability"])?;
        for (&g, p) in candidates.iter().zip(self.distribution(candidates, mode)) {
            let pr = self.priority(g).map(|v| v.to_string()).unwrap_or_default();
            w.write_record([g.to_string(), pr, p.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stats_with(goal: GoalId, history: &[f64]) -> GoalStats {
        let mut s = GoalStats::new(5);
        for &l in history {
            s.record_loss(goal, l).unwrap();
        }
        s
    }

    #[test]
    fn ring_length_is_bounded() {
        let s = stats_with(0, &[1.0, 2.0, 3.0]);
        assert_eq!(s.ring(0).len(), 3);
        let s = stats_with(0, &(0..12).map(f64::from).collect::<Vec<_>>());
        assert_eq!(s.ring(0).len(), 11);
        assert_eq!(s.ring(0)[0], 1.0);
    }

    #[test]
    fn linear_decrease_gives_thirty() {
        let history: Vec<f64> = (0..=10).map(|j| 10.0 - f64::from(j)).collect();
        assert_eq!(stats_with(0, &history).priority(0), Some(30.0));
    }

    #[test]
    fn constant_history_is_zero_and_short_history_is_cold() {
        assert_eq!(stats_with(0, &[4.0; 11]).priority(0), Some(0.0));
        assert_eq!(stats_with(0, &[4.0; 10]).priority(0), None);
    }

    #[test]
    fn rejects_bad_losses() {
        let mut s = GoalStats::new(5);
        assert!(s.record_loss(0, -1.0).is_err());
        assert!(s.record_loss(0, f64::NAN).is_err());
        assert!(s.observe_loss(0, f64::INFINITY).is_err());
        assert!(s.ring(0).is_empty());
    }

    #[test]
    fn unsampled_goal_ring_is_carried_forward() {
        let mut s = GoalStats::new(2);
        s.observe_loss(0, 1.0).unwrap();
        s.observe_loss(1, 2.0).unwrap();
        s.observe_loss(1, 4.0).unwrap();
        s.end_episode().unwrap();
        assert_eq!(s.ring(1), &[3.0]);
        s.observe_loss(0, 5.0).unwrap();
        s.end_episode().unwrap();
        assert_eq!(s.ring(0), &[1.0, 5.0]);
        assert_eq!(s.ring(1), &[3.0]);
    }

    #[test]
    fn distributions() {
        let mut s = GoalStats::new(5);
        // 30 and 10 after clamping; goal 2 regressing clamps to the floor.
        for j in 0..=10 {
            let j = f64::from(j);
            s.record_loss(0, 10.0 - j).unwrap();
            s.record_loss(1, 10.0 - j / 3.0).unwrap();
        }
        assert!((s.priority(1).unwrap() - 10.0).abs() < 1e-12);
        let d = s.distribution(&[0, 1], GoalSelection::LearningProgress);
        assert!((d[0] - 0.75).abs() < 1e-12 && (d[1] - 0.25).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut hits = 0usize;
        for _ in 0..100_000 {
            if s.sample_behavior_goal(&[0, 1], &mut rng, GoalSelection::LearningProgress)
                .unwrap()
                == 0
            {
                hits += 1;
            }
        }
        assert!((hits as f64 / 1e5 - 0.75).abs() < 0.02);

        // Nonpositive everywhere: uniform.
        let neg = stats_with(0, &(0..11).map(f64::from).collect::<Vec<_>>());
        let d = neg.distribution(&[0, 1, 2], GoalSelection::LearningProgress);
        assert!(d.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-12));

        assert_eq!(
            GoalStats::new(5).sample_behavior_goal(&[], &mut rng, GoalSelection::Uniform),
            Err(PriorityError::NoGoals)
        );
    }

    #[test]
    fn cold_goals_take_the_median() {
        let mut s = GoalStats::new(1);
        for (g, hist) in [(0, [3.0, 2.0, 1.0]), (1, [5.0, 3.0, 1.0]), (2, [9.0, 5.0, 1.0])] {
            for l in hist {
                s.record_loss(g, l).unwrap();
            }
        }
        // priorities 1+1 = 2, 2+2 = 4, 4+4 = 8; median 4
        let p = s.clamped_priorities(&[0, 1, 2, 3]);
        assert_eq!(p, vec![2.0, 4.0, 8.0, 4.0]);
    }

    #[test]
    fn snapshot_csv() {
        let s = stats_with(0, &[1.0; 11]);
        let mut out = Vec::new();
        s.write_snapshot(&mut out, &[0, 1], GoalSelection::LearningProgress)
            .unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, "goal_id,priority,probability\n0,0,0.5\n1,,0.5\n");
    }

    fn brute_force(ring: &[f64], m: usize) -> f64 {
        let i = ring.len() - 1;
        let mut total = 0.0;
        for k in (i - m)..=i {
            total += ring[k - m] - ring[k];
        }
        total
    }

    proptest! {
        #[test]
        fn matches_brute_force(history in proptest::collection::vec(0.0f64..100.0, 11..30)) {
            let s = stats_with(0, &history);
            let ring = s.ring(0).to_vec();
            prop_assert_eq!(s.priority(0).unwrap(), brute_force(&ring, 5));
        }

        #[test]
        fn shift_invariant(history in proptest::collection::vec(0i32..1000, 11), c in 0i32..1000) {
            // Integer-valued losses keep the sums exact.
            let a: Vec<f64> = history.iter().map(|&x| f64::from(x)).collect();
            let b: Vec<f64> = history.iter().map(|&x| f64::from(x + c)).collect();
            prop_assert_eq!(stats_with(0, &a).priority(0), stats_with(0, &b).priority(0));
        }

        #[test]
        fn distribution_is_proper(histories in proptest::collection::vec(proptest::collection::vec(0.0f64..10.0, 0..14), 1..12)) {
            let mut s = GoalStats::new(5);
            for (g, h) in histories.iter().enumerate() {
                for &l in h {
                    s.record_loss(g, l).unwrap();
                }
            }
            let ids: Vec<GoalId> = (0..histories.len()).collect();
            let d = s.distribution(&ids, GoalSelection::LearningProgress);
            prop_assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(d.iter().all(|&p| p > 0.0));
        }
    }
}
