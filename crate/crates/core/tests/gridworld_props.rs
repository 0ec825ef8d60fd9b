use std::collections::{HashMap, HashSet};

use manygoals::gridworld::{enumerate_feasible_states, Branch};
use manygoals::{Action, EnvState, Layout, StartMode, World};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

// Counted once by exhaustive closure and frozen.
const N_STANDARD: usize = 3281;
const N_COMPACT: usize = 118;
const N_TINY: usize = 8;

fn shipped() -> Vec<(&'static str, World, usize)> {
    vec![
        ("standard", World::new(Layout::standard()), N_STANDARD),
        ("compact", World::new(Layout::compact()), N_COMPACT),
        ("tiny", World::new(Layout::tiny()), N_TINY),
    ]
}

fn every_branch() -> Vec<Branch> {
    let mut out = Vec::new();
    for slip in [
        None,
        Some(Action::Up),
        Some(Action::Down),
        Some(Action::Left),
        Some(Action::Right),
    ] {
        for door_closes in [false, true] {
            out.push(Branch { slip, door_closes });
        }
    }
    out
}

#[test]
fn feasible_counts_are_pinned() {
    for (name, world, n) in shipped() {
        assert_eq!(world.feasible_states().len(), n, "{name}");
        assert_eq!(enumerate_feasible_states(&world).len(), n, "{name}");
    }
}

#[test]
fn feasible_set_is_closed_under_every_branch() {
    for (name, world, _) in shipped() {
        let keys: HashSet<_> = world.feasible_states().iter().map(EnvState::key).collect();
        for s in world.feasible_states() {
            world.check_state(s).unwrap();
            for &a in world.legal_actions(s) {
                for b in every_branch() {
                    let next = world.step_branch(s, a, b).unwrap();
                    assert!(keys.contains(&next.key()), "{name}: {s:?} {a} {b:?} left the set");
                }
                let total: f64 = world.outcomes(s, a).unwrap().iter().map(|(_, p)| p).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn render_is_injective_on_the_feasible_set() {
    for (name, world, n) in shipped() {
        let frames: HashSet<_> = world.feasible_states().iter().map(|s| world.render(s)).collect();
        assert_eq!(frames.len(), n, "{name}");
    }
}

#[test]
fn state_ids_round_trip() {
    let world = World::new(Layout::compact());
    for (i, s) in world.feasible_states().iter().enumerate() {
        assert_eq!(world.state_id(s), Some(i));
        assert_eq!(world.state_by_id(i).map(|t| t.key()), Some(s.key()));
    }
}

#[test]
fn random_feasible_resets_are_uniform() {
    let world = World::new(Layout::compact());
    let n = world.feasible_states().len();
    let draws = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut counts: HashMap<usize, u64> = HashMap::new();
    for _ in 0..draws {
        let s = world.reset(&mut rng, StartMode::RandomFeasible);
        *counts.entry(world.state_id(&s).expect("feasible")).or_default() += 1;
    }
    let expected = draws as f64 / n as f64;
    let stat: f64 = (0..n)
        .map(|i| {
            let c = *counts.get(&i).unwrap_or(&0) as f64;
            (c - expected).powi(2) / expected
        })
        .sum();
    let p = 1.0 - ChiSquared::new((n - 1) as f64).unwrap().cdf(stat);
    assert!(p > 0.01, "chi-square {stat:.1} on {} dof, p = {p:.4}", n - 1);
}

#[test]
fn seeded_action_sequences_replay_identically() {
    let world = World::new(Layout::standard());
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = world.reset(&mut rng, StartMode::RandomFeasible);
        let mut trace = Vec::new();
        for t in 0..500 {
            let legal = world.legal_actions(&s);
            s = world.step(&s, legal[t % legal.len()], &mut rng).unwrap();
            trace.push(world.render(&s));
        }
        trace
    };
    assert_eq!(run(), run());
}
