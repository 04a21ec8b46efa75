use ndarray::Array2;
use proptest::prelude::*;

use afrl::attacks::{pgd_attack, fw_attack, normalized_linf, Normalizer, ValueAttack};
use afrl::bandit::{dts_update, BetaArm, RewardSchedule, Segment};
use afrl::environment::OBS_DIM;
use afrl::flowfield::{disturbance_weights_from_gammas, gamma, initial_flow, ObstacleShape, Vec3};
use afrl::robust_rl::{mixed_action, Mode, RobustPolicyPair};
use afrl::seeding::{derive_seed, stream, Stream};
use afrl::shift::{bernoulli_params, wasserstein1_slices};
use afrl::AttackConfig;

fn sample() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0..100.0f64, 1..40)
}

proptest! {
    #[test]
    fn w1_is_a_metric(a in sample(), b in sample(), c in sample()) {
        let d = |x: &[f64], y: &[f64]| wasserstein1_slices(x, y).unwrap();
        prop_assert!(d(&a, &b) >= 0.0);
        prop_assert!(d(&a, &a).abs() < 1e-12);
        prop_assert!((d(&a, &b) - d(&b, &a)).abs() < 1e-9);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-9);
    }

    #[test]
    fn w1_translation_and_scale(a in sample(), b in sample(), shift in -50.0..50.0f64, scale in 0.01..10.0f64) {
        let base = wasserstein1_slices(&a, &b).unwrap();
        let moved: (Vec<f64>, Vec<f64>) = (a.iter().map(|x| x + shift).collect(), b.iter().map(|x| x + shift).collect());
        prop_assert!((wasserstein1_slices(&moved.0, &moved.1).unwrap() - base).abs() < 1e-8 * (1.0 + base));
        let scaled: (Vec<f64>, Vec<f64>) = (a.iter().map(|x| x * scale).collect(), b.iter().map(|x| x * scale).collect());
        prop_assert!((wasserstein1_slices(&scaled.0, &scaled.1).unwrap() - scale * base).abs() < 1e-8 * (1.0 + scale * base));
    }

    #[test]
    fn w1_of_a_pure_shift_is_the_shift(a in sample(), shift in -50.0..50.0f64) {
        let b: Vec<f64> = a.iter().map(|x| x + shift).collect();
        prop_assert!((wasserstein1_slices(&a, &b).unwrap() - shift.abs()).abs() < 1e-9);
    }

    #[test]
    fn w1_ignores_replication(a in sample(), k in 2usize..5) {
        let rep: Vec<f64> = a.iter().flat_map(|&x| std::iter::repeat_n(x, k)).collect();
        prop_assert!(wasserstein1_slices(&a, &rep).unwrap() < 1e-9);
    }

    #[test]
    fn success_rates_reverse_shift_order(d in prop::collection::vec(0.0..10.0f64, 1..8), k_mult in 0.05..1.0f64) {
        let p = bernoulli_params(&d, k_mult).unwrap();
        let best = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((best - k_mult).abs() < 1e-12);
        for i in 0..d.len() {
            prop_assert!(p[i] > 0.0 && p[i] <= k_mult + 1e-15);
            for j in 0..d.len() {
                if d[i] < d[j] {
                    prop_assert!(p[i] >= p[j]);
                }
            }
        }
    }

    #[test]
    fn discounted_counts_stay_bounded(outcomes in prop::collection::vec((0usize..3, 0.0..=1.0f64), 1..300), y in 0.01..1.0f64) {
        let mut arms = vec![BetaArm::default(); 3];
        let mut rng = stream(1, Stream::Sampler);
        for (k, r) in outcomes {
            dts_update(&mut arms, k, r, y, &mut rng).unwrap();
        }
        // S + F of all arms together is a geometric sum of at most 1 / (1 - y).
        let total: f64 = arms.iter().map(|a| a.s + a.f).sum();
        prop_assert!(total <= 1.0 / (1.0 - y) + 1e-9);
        for a in &arms {
            let (m, v) = a.posterior_stats();
            prop_assert!((0.0..=1.0).contains(&m));
            prop_assert!(v > 0.0 && v <= 1.0 / 12.0 + 1e-12);
        }
    }

    #[test]
    fn undiscounted_counts_record_every_pull(outcomes in prop::collection::vec((0usize..4, 0.0..=1.0f64), 0..200)) {
        let mut arms = vec![BetaArm::default(); 4];
        let mut rng = stream(2, Stream::Sampler);
        let mut pulls = [0.0; 4];
        for &(k, r) in &outcomes {
            dts_update(&mut arms, k, r, 1.0, &mut rng).unwrap();
            pulls[k] += 1.0;
        }
        for (a, n) in arms.iter().zip(pulls) {
            prop_assert_eq!(a.s + a.f, n);
        }
    }

    #[test]
    fn mixed_action_is_a_convex_combination(
        agent in prop::array::uniform3(-1.0..1.0f64),
        adv in prop::array::uniform3(-1.0..1.0f64),
        alpha in 0.0..=1.0f64,
    ) {
        let m = mixed_action(alpha, &agent, &adv);
        for i in 0..3 {
            let (lo, hi) = (agent[i].min(adv[i]), agent[i].max(adv[i]));
            prop_assert!(m[i] >= lo - 1e-15 && m[i] <= hi + 1e-15);
        }
    }

    #[test]
    fn gradient_attacks_respect_the_budget(
        seed in any::<u64>(),
        eps in 0.0..3.0f64,
        steps in 1usize..8,
        rows in 1usize..5,
        fw in any::<bool>(),
    ) {
        let pair = RobustPolicyPair::new(Mode::ActionRobust { alpha: 0.3 }, seed);
        let mut rng = stream(seed, Stream::Attack);
        let obs = Array2::from_shape_fn((rows, OBS_DIM), |(i, j)| (i as f64 + 1.0) * (j as f64 - 4.0));
        let norm = Normalizer { mean: vec![1.0; OBS_DIM], std: (0..OBS_DIM).map(|j| 0.5 + j as f64).collect() };
        let cfg = AttackConfig { epsilon: eps, n_steps: steps, ..AttackConfig::default() };
        let obj = ValueAttack::mixed(&pair);
        let adv = if fw {
            fw_attack(obs.view(), &obj, &norm, &cfg, &mut rng).unwrap()
        } else {
            pgd_attack(obs.view(), &obj, &norm, &cfg, &mut rng).unwrap()
        };
        prop_assert!(normalized_linf(adv.view(), obs.view(), &norm) <= eps + 1e-9);
    }

    #[test]
    fn shape_function_is_one_on_scaled_axes(
        a in prop::array::uniform3(0.1..10.0f64),
        e in prop::array::uniform3(0.5..3.0f64),
        axis in 0usize..3,
    ) {
        let shape = ObstacleShape { center: Vec3::new(1.0, -2.0, 3.0), semi_axes: Vec3::from(a), exponents: Vec3::from(e) };
        let mut p = shape.center;
        p[axis] += a[axis];
        prop_assert!((gamma(&p, &shape) - 1.0).abs() < 1e-12);
        prop_assert!(gamma(&shape.center, &shape) == 0.0);
    }

    #[test]
    fn two_obstacle_weights_partition_unity(g1 in 1.0..1e6f64, g2 in 1.0..1e6f64) {
        prop_assume!(g1 + g2 > 2.0);
        let w = disturbance_weights_from_gammas(&[g1, g2]);
        prop_assert!((w[0] + w[1] - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn initial_flow_has_constant_speed(p in prop::array::uniform3(-100.0..100.0f64), c in 0.1..5.0f64) {
        let p = Vec3::from(p);
        let goal = Vec3::new(7.0, 7.0, 7.0);
        prop_assume!((p - goal).norm() > 1e-3);
        let u = initial_flow(&p, &goal, c);
        prop_assert!((u.norm() - c).abs() < 1e-12);
        prop_assert!(u.dot(&(goal - p)) > 0.0);
    }

    #[test]
    fn derived_seeds_do_not_collide(master in any::<u64>()) {
        let mut seen: Vec<u64> = (0..64).map(|i| derive_seed(master, i)).collect();
        seen.sort_unstable();
        seen.dedup();
        prop_assert_eq!(seen.len(), 64);
    }

    #[test]
    fn schedule_lookup_follows_segments(durations in prop::collection::vec(1usize..50, 1..6)) {
        let segments: Vec<Segment> = durations
            .iter()
            .enumerate()
            .map(|(i, &duration)| Segment { duration, p_true: vec![0.1 * i as f64, 0.5], epsilon: None })
            .collect();
        let schedule = RewardSchedule::new(segments).unwrap();
        let mut t = 0;
        for (i, &dur) in durations.iter().enumerate() {
            for _ in 0..dur {
                prop_assert_eq!(schedule.p_at(t)[0], 0.1 * i as f64);
                t += 1;
            }
        }
        prop_assert_eq!(schedule.total_steps(), t);
    }
}
