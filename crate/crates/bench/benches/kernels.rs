use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ndarray::Array2;
use rand::Rng as _;

use afrl::bandit::{Sampler, SamplerKind};
use afrl::environment::{Environment, Scenario, OBS_DIM};
use afrl::flowfield::{disturbed_flow, IfdsParams, ObstacleKinematics, ObstacleShape, Vec3};
use afrl::robust_rl::{Mode, RobustPolicyPair};
use afrl::seeding::{stream, Stream};
use afrl::shift::{wasserstein1, ValueSample};

fn flow_field(c: &mut Criterion) {
    let params = IfdsParams { rho0: 0.5, sigma0: 0.5, theta: 0.3, upsilon: 5.0, convergence_speed: 2.0, dt: 0.1 };
    let obstacles: Vec<ObstacleKinematics> = (0..4)
        .map(|i| ObstacleKinematics {
            shape: ObstacleShape::sphere(Vec3::new(20.0 + 15.0 * i as f64, 30.0, 10.0), 6.0),
            velocity: Vec3::new(0.5, -0.2, 0.0),
        })
        .collect();
    let p = Vec3::new(10.0, 25.0, 8.0);
    let goal = Vec3::new(100.0, 100.0, 20.0);
    c.bench_function("disturbed_flow/4_obstacles", |b| {
        b.iter(|| disturbed_flow(black_box(&p), &goal, &obstacles, &params).unwrap())
    });

    let mut env = Environment::new(Scenario::training()).unwrap();
    env.reset(0).unwrap();
    c.bench_function("environment/step", |b| {
        b.iter_batched(
            || {
                let mut e = env.clone();
                e.reset(1).unwrap();
                e
            },
            |mut e| e.step(&[0.5, 0.5, 0.0]).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn networks(c: &mut Criterion) {
    let pair = RobustPolicyPair::new(Mode::ActionRobust { alpha: 0.1 }, 3);
    let mut rng = stream(9, Stream::Probe);
    let obs = Array2::from_shape_fn((128, OBS_DIM), |_| rng.random_range(-1.0..1.0));
    c.bench_function("pair/q_values_batch128", |b| b.iter(|| pair.q_values(black_box(obs.view())).unwrap()));
    c.bench_function("pair/q_and_obs_grad_batch128", |b| b.iter(|| pair.q_and_obs_grad(black_box(obs.view())).unwrap()));
}

fn shift(c: &mut Criterion) {
    let mut rng = stream(1, Stream::Sampler);
    let a = ValueSample::new((0..512).map(|_| rng.random::<f64>()).collect()).unwrap();
    let b2 = ValueSample::new((0..700).map(|_| rng.random::<f64>() * 2.0).collect()).unwrap();
    c.bench_function("wasserstein1/512x700", |b| b.iter(|| wasserstein1(black_box(&a), black_box(&b2))));
}

fn bandit(c: &mut Criterion) {
    c.bench_function("dts/select_update_5_arms", |b| {
        let mut s = Sampler::new(SamplerKind::Dts { discount: 0.8 }, 5).unwrap();
        let mut rng = stream(2, Stream::Sampler);
        b.iter(|| {
            let k = s.select(&mut rng);
            s.update(k, 0.6, &mut rng).unwrap()
        })
    });
}

criterion_group!(benches, flow_field, networks, shift, bandit);
criterion_main!(benches);
