use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use manygoals::eval::UvfaPolicy;
use manygoals::maintask::{a2c_loss, ActorCritic, AuxTask, Rollout};
use manygoals::uvfa::{td_loss, NetConfig, TdBatch, UvfaNet};
use manygoals::{Action, Layout, Observation, StartMode, Transition, World};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn frames(world: &World) -> Vec<Observation> {
    world.feasible_states().iter().map(|s| world.render(s)).collect()
}

fn render(c: &mut Criterion) {
    let world = World::new(Layout::compact());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let state = world.reset(&mut rng, StartMode::RandomFeasible);
    c.bench_function("render_compact", |b| b.iter(|| world.render(black_box(&state))));
    c.bench_function("step_compact", |b| {
        b.iter(|| world.step(black_box(&state), Action::Left, &mut rng).unwrap())
    });
}

fn td(c: &mut Criterion) {
    let world = World::new(Layout::compact());
    let obs = frames(&world);
    let transitions: Vec<Transition> = (0..TdBatch::TRANSITIONS)
        .map(|i| Transition::new(obs[i].clone(), Action::Up, obs[i + 40].clone(), 4))
        .collect();
    let batch = TdBatch {
        transitions: transitions.iter().collect(),
        goals: obs[60..60 + TdBatch::GOALS].iter().collect(),
    };
    let mut group = c.benchmark_group("td_loss");
    group.sample_size(20);
    for width in [64, 128, 256] {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = UvfaNet::new(
            NetConfig::new(world.observation_shape()).with_widths(width, width),
            &mut rng,
        );
        group.bench_with_input(BenchmarkId::from_parameter(width), &net, |b, net| {
            b.iter(|| td_loss(net, net, black_box(&batch)).unwrap())
        });
    }
    group.finish();
}

fn forward(c: &mut Criterion) {
    let world = World::new(Layout::compact());
    let obs = frames(&world);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let net = UvfaNet::new(
        NetConfig::new(world.observation_shape()).with_widths(128, 128),
        &mut rng,
    );
    c.bench_function("q_values_128", |b| {
        b.iter(|| net.q_values(black_box(&obs[0]), black_box(&obs[1])).unwrap())
    });
    let policy = UvfaPolicy::new(&net, &world).unwrap();
    c.bench_function("policy_head_128", |b| b.iter(|| policy.q(black_box(3), black_box(7))));
    let ac = ActorCritic::new(
        NetConfig::new(world.observation_shape()).with_widths(128, 128),
        AuxTask::None,
        &mut rng,
    );
    let rollout = Rollout {
        frames: obs[..20].to_vec(),
        actions: vec![Action::Down; 20],
        legal: vec![4; 20],
        returns: vec![0.5; 20],
    };
    c.bench_function("a2c_loss_20x128", |b| {
        b.iter(|| a2c_loss(&ac, black_box(&rollout), 0.5, 0.01).unwrap())
    });
}

criterion_group!(benches, render, td, forward);
criterion_main!(benches);
