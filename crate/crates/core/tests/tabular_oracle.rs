use manygoals::eval::evaluate_mastery;
use manygoals::mastery::{train_tabular, TabularConfig, TabularQ};
use manygoals::uvfa::GoalReward;
use manygoals::{Action, Layout, World};

/// Value iteration over the exact outcome distribution, for every goal.
fn value_iteration(world: &World, tol: f64) -> TabularQ {
    let states = world.feasible_states();
    let n = states.len();
    let mut q = TabularQ::new(n, 1.0);
    loop {
        let mut delta: f64 = 0.0;
        for g in 0..n {
            for (s, state) in states.iter().enumerate() {
                for &a in world.legal_actions(state) {
                    let mut v = 0.0;
                    for (next, p) in world.outcomes(state, a).unwrap() {
                        let id = world.state_id(&next).unwrap();
                        let gr = if id == g { GoalReward::ARRIVED } else { GoalReward::STEP };
                        let boot = if gr.discount == 0.0 {
                            0.0
                        } else {
                            q.max_value(g, id, world.legal_actions(&next).len())
                        };
                        v += p * (gr.reward + gr.discount * boot);
                    }
                    delta = delta.max((v - q.get(g, s, a)).abs());
                    q.set(g, s, a, v);
                }
            }
        }
        if delta < tol {
            return q;
        }
    }
}

#[test]
fn tabular_agent_matches_value_iteration_and_masters_every_goal() {
    let world = World::new(Layout::tiny());
    let run = train_tabular(&world, &TabularConfig::default()).unwrap();
    let states = world.feasible_states();
    let n = states.len();
    assert_eq!(run.distinct_transitions, n * 4);
    let vi = value_iteration(&world, 1e-12);
    let mut worst: f64 = 0.0;
    for g in 0..n {
        for (s, state) in states.iter().enumerate() {
            for &a in world.legal_actions(state) {
                worst = worst.max((run.q.get(g, s, a) - vi.get(g, s, a)).abs());
            }
        }
    }
    assert!(worst < 1e-6, "max deviation {worst:e}");

    let goals: Vec<usize> = (0..n).collect();
    let mut q = run.q;
    let report = evaluate_mastery(&world, &mut q, &goals, 100, 3, run.steps);
    assert_eq!(report.fraction_achieved, 1.0);
}

#[test]
fn one_step_values_are_the_step_cost() {
    let world = World::new(Layout::tiny());
    let vi = value_iteration(&world, 1e-12);
    let start = world.canonical_start();
    let s = world.state_id(&start).unwrap();
    let right = world.step_branch(&start, Action::Right, Default::default()).unwrap();
    let g = world.state_id(&right).unwrap();
    // arriving costs nothing; anything else costs 0.1 plus the discounted rest
    assert_eq!(vi.get(g, s, Action::Right), 0.0);
    assert!((vi.get(g, s, Action::Down) - (-0.1 - 0.99 * 0.1)).abs() < 1e-12);
}
