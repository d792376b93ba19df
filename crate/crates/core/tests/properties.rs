use ltc_core::environments::{GenerationMode, InstanceSpec, Scenario};
use ltc_core::harness::{run_experiment, trace_file_name, RunSettings, TraceTotals};
use ltc_core::lagrangian::DualDomain;
use ltc_core::meta::{estimate_rho, run_known_rho, AlgorithmSpec, MetaConfig, Phase};
use ltc_core::oracle::{
    brute_force_opt, dual_function, solve_opt, solve_rho_adversarial, solve_rho_stochastic, ORACLE_TOL,
};
use ltc_core::rm::{regret_bound, BoundKind, FeedbackMode, RegretBoundSpec, RegretMinimizer, RmRange};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tables(k: usize, m: usize) -> impl Strategy<Value = (Vec<f64>, Vec<Vec<f64>>)> {
    (
        prop::collection::vec(0.0..1.0f64, k),
        prop::collection::vec(prop::collection::vec(-1.0..1.0f64, m), k),
    )
}

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<Vec<f64>>)> {
    (2usize..=4, 1usize..=3).prop_flat_map(|(k, m)| tables(k, m))
}

fn scenario_instance(k: usize, m: usize, n: usize) -> impl Strategy<Value = InstanceSpec> {
    prop::collection::vec(tables(k, m), n).prop_map(move |raw| {
        let mut scenarios: Vec<Scenario> = raw.into_iter().map(|(f, g)| Scenario { f, g }).collect();
        // Last strategy always has slack so that the margin is positive.
        for s in scenarios.iter_mut() {
            for g in s.g[k - 1].iter_mut() {
                *g = -0.5;
            }
        }
        InstanceSpec::new(
            (0..k).map(|i| format!("x{i}")).collect(),
            m,
            scenarios,
            GenerationMode::Stochastic {
                probs: vec![1.0 / n as f64; n],
            },
        )
        .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distribution_is_a_probability_vector(
        k in 2usize..8,
        utils in prop::collection::vec(prop::collection::vec(0.0..1.0f64, 8), 1..50),
    ) {
        let mut rm = RegretMinimizer::construct_primal(k, RmRange::unit(), 0.0, FeedbackMode::Full, 50).unwrap();
        for u in &utils {
            rm.observe_full(&u[..k]).unwrap();
            let p = rm.distribution();
            prop_assert!(p.iter().all(|x| *x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn translation_invariance(
        utils in prop::collection::vec(prop::collection::vec(0.0..0.5f64, 4), 1..20),
        shift in 0.0..0.5f64,
    ) {
        let range = RmRange::new(0.0, 1.0).unwrap();
        let mut a = RegretMinimizer::construct_primal(4, range, 0.0, FeedbackMode::Full, 20).unwrap();
        let mut b = a.clone();
        for u in &utils {
            a.observe_full(u).unwrap();
            let shifted: Vec<f64> = u.iter().map(|x| x + shift).collect();
            b.observe_full(&shifted).unwrap();
        }
        for (x, y) in a.distribution().iter().zip(b.distribution()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn bound_is_monotone(k in 2usize..20, t in 0usize..10_000, width in 0.1..5.0f64, fail in 0.001..0.5f64) {
        for kind in [BoundKind::FullFeedback, BoundKind::Bandit] {
            let spec = RegretBoundSpec { kind, k, range_width: width, fail_prob: fail };
            prop_assert!(regret_bound(&spec, t) <= regret_bound(&spec, t + 1));
        }
    }

    /// Exact expected-play regret: the tuned bound at the horizon, and the
    /// fixed-step bound `width (ln K / eta + eta t / 8)` on every prefix.
    #[test]
    fn full_feedback_regret(
        k in 2usize..6,
        utils in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 6), 1..120),
    ) {
        let horizon = utils.len();
        let range = RmRange::new(-1.0, 1.0).unwrap();
        let mut rm = RegretMinimizer::construct_primal(k, range, 0.0, FeedbackMode::Full, horizon).unwrap();
        let step = rm.step_size();
        let ln_k = (k as f64).ln();
        let (mut earned, mut totals) = (0.0, vec![0.0; k]);
        for (t, u) in utils.iter().enumerate() {
            let p = rm.distribution();
            earned += p.iter().zip(u).map(|(a, b)| a * b).sum::<f64>();
            for (s, v) in totals.iter_mut().zip(u) {
                *s += v;
            }
            rm.observe_full(&u[..k]).unwrap();
            let regret = totals.iter().copied().fold(f64::NEG_INFINITY, f64::max) - earned;
            let prefix_bound = range.width() * (ln_k / step + step * (t + 1) as f64 / 8.0);
            prop_assert!(regret <= prefix_bound + 1e-9);
        }
        let regret = totals.iter().copied().fold(f64::NEG_INFINITY, f64::max) - earned;
        prop_assert!(regret <= rm.regret_bound(horizon) + 1e-9);
    }

    #[test]
    fn oracle_mixtures_are_feasible_and_exact((f, g) in instance()) {
        let sol = solve_opt(&f, &g).unwrap();
        if sol.is_feasible() {
            let xi = &sol.mixture;
            prop_assert!((xi.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let value: f64 = xi.iter().zip(&f).map(|(a, b)| a * b).sum();
            prop_assert!((value - sol.value).abs() < 1e-9);
            for i in 0..g[0].len() {
                let gi: f64 = xi.iter().zip(&g).map(|(a, row)| a * row[i]).sum();
                prop_assert!(gi <= ORACLE_TOL);
            }
            let brute = brute_force_opt(&f, &g, 200).unwrap();
            if let Some(v) = brute.value {
                prop_assert!(v <= sol.value + 1e-9);
                prop_assert!(sol.value - v <= 2.0 * 2.0 / 200.0);
            }
        }
    }

    #[test]
    fn weak_duality((f, g) in instance(), raw in prop::collection::vec(0.0..3.0f64, 3)) {
        let sol = solve_opt(&f, &g).unwrap();
        prop_assume!(sol.is_feasible());
        let lambda = &raw[..g[0].len()];
        prop_assert!(dual_function(&f, &g, lambda) >= sol.value - 1e-9);
    }

    #[test]
    fn adversarial_margin_below_averaged(
        (k, m) in (2usize..=4, 1usize..=3),
        seed in any::<u64>(),
        rounds in 2usize..6,
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tabs: Vec<Vec<Vec<f64>>> = (0..rounds)
            .map(|_| (0..k).map(|_| (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect())
            .collect();
        let avg: Vec<Vec<f64>> = (0..k)
            .map(|x| (0..m).map(|i| tabs.iter().map(|t| t[x][i]).sum::<f64>() / rounds as f64).collect())
            .collect();
        let adv = solve_rho_adversarial(&tabs).unwrap().value;
        let sto = solve_rho_stochastic(&avg).unwrap().value;
        prop_assert!(adv <= sto + 1e-9);
    }

    #[test]
    fn scaled_dual_points_stay_in_the_ball(m in 1usize..4, q in 0.05..1.0f64, gs in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 4), 1..30)) {
        let domain = DualDomain::scaled(m, q).unwrap();
        let range = RmRange::new(-1.0 / q, 1.0 / q).unwrap();
        let mut dual = ltc_core::lagrangian::DualPlayer::new(domain, range, gs.len() + 1).unwrap();
        for g in &gs {
            let lambda = dual.next_lambda().unwrap();
            prop_assert_eq!(lambda.len(), m);
            prop_assert!(lambda.iter().all(|l| *l >= 0.0));
            prop_assert!(lambda.iter().sum::<f64>() <= 1.0 / q + 1e-9);
            dual.observe(&g[..m]).unwrap();
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Guard, phase structure, multiplier norms and trace accounting.
    #[test]
    fn meta_run_invariants(
        spec in scenario_instance(3, 2, 2),
        rho_hat in 0.0..1.0f64,
        threshold in 1.0..40.0f64,
        seed in any::<u64>(),
        bandit in any::<bool>(),
    ) {
        let horizon = 300;
        let feedback = if bandit { FeedbackMode::Bandit } else { FeedbackMode::Full };
        let config = MetaConfig::new(horizon, 0.1, rho_hat, feedback).unwrap().with_threshold(threshold);
        let rt = config.rho_tilde();
        prop_assert!(rt >= (horizon as f64).powf(-0.25) - 1e-15);
        let mut env = spec.environment(horizon, ChaCha8Rng::seed_from_u64(seed));
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let trace = run_known_rho(&config, &mut env, &mut rng).unwrap();
        prop_assert_eq!(trace.len(), horizon);

        let flips = trace.records.windows(2).filter(|w| w[0].phase != w[1].phase).count();
        prop_assert!(flips <= 1);
        let mut cum = [0.0f64; 2];
        let mut reward = 0.0;
        for r in &trace.records {
            let v_before = cum[0].max(cum[1]);
            match r.phase {
                Phase::Play => {
                    prop_assert!(v_before <= (horizon - (r.t - 1)) as f64 * rt + threshold - 1.0 + 1e-9);
                    prop_assert!(r.lambda.iter().sum::<f64>() <= 1.0 / rt + 1e-9);
                }
                Phase::Recovery => prop_assert!((r.lambda.iter().sum::<f64>() - 1.0).abs() < 1e-9),
                Phase::Estimation => prop_assert!(false),
            }
            cum[0] += r.g[0];
            cum[1] += r.g[1];
            reward += r.f;
        }
        prop_assert_eq!(trace.violation(), cum[0].max(cum[1]));
        prop_assert_eq!(trace.total_reward(), reward);
    }

    #[test]
    fn estimate_stays_in_unit_interval(spec in scenario_instance(2, 1, 3), seed in any::<u64>(), t0 in 1usize..60) {
        let mut env = spec.environment(t0, ChaCha8Rng::seed_from_u64(seed));
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(7));
        let (rho_hat, trace) = estimate_rho(&mut env, t0, 0.1, FeedbackMode::Full, &mut rng).unwrap();
        prop_assert!((0.0..=1.0).contains(&rho_hat));
        prop_assert_eq!(trace.len(), t0);
    }
}

/// Chi-square homogeneity of scenario draws between the first and second
/// half of a 1e5-round stream, and goodness of fit to the probabilities.
#[test]
fn stochastic_draws_are_exchangeable() {
    let probs = [0.1, 0.2, 0.3, 0.4];
    let scenarios: Vec<Scenario> = (0..4)
        .map(|s| Scenario {
            f: vec![s as f64 / 4.0],
            g: vec![vec![0.0]],
        })
        .collect();
    let spec = InstanceSpec::new(
        vec!["x".into()],
        1,
        scenarios,
        GenerationMode::Stochastic { probs: probs.to_vec() },
    )
    .unwrap();
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut counts = [[0.0f64; 4]; 2];
    for t in 0..n {
        let r = spec.sample_round(&mut rng).unwrap();
        let s = (r.f(0) * 4.0).round() as usize;
        counts[t * 2 / n][s] += 1.0;
    }
    // 99.9% quantile of chi-square with 3 degrees of freedom.
    let critical = 16.266;
    let mut homogeneity = 0.0;
    let mut fit = 0.0;
    for s in 0..4 {
        let pooled = (counts[0][s] + counts[1][s]) / 2.0;
        for c in &counts {
            homogeneity += (c[s] - pooled).powi(2) / pooled;
        }
        let total = counts[0][s] + counts[1][s];
        fit += (total - probs[s] * n as f64).powi(2) / (probs[s] * n as f64);
    }
    assert!(homogeneity < critical, "homogeneity statistic {homogeneity}");
    assert!(fit < critical, "goodness-of-fit statistic {fit}");
}

#[test]
fn summary_recomputes_from_trace_files() {
    let spec = InstanceSpec::new(
        vec!["a".into(), "b".into(), "c".into()],
        2,
        vec![
            Scenario {
                f: vec![0.9, 0.5, 0.1],
                g: vec![vec![0.6, -0.2], vec![-0.3, -0.4], vec![-0.6, -0.6]],
            },
            Scenario {
                f: vec![0.7, 0.3, 0.1],
                g: vec![vec![0.2, -0.4], vec![-0.5, -0.2], vec![-0.4, -0.4]],
            },
        ],
        GenerationMode::Stochastic { probs: vec![0.5, 0.5] },
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    for algorithm in [AlgorithmSpec::KnownRho { rho_hat: 0.1 }, AlgorithmSpec::UnknownRho] {
        let settings = RunSettings {
            algorithm,
            horizon: 900,
            delta: 0.1,
            feedback: FeedbackMode::Bandit,
            seeds: vec![3, 4, 5],
            master_seed: 1,
        };
        let summary = run_experiment(&spec, &settings, Some(dir.path()), None).unwrap();
        let reloaded = ltc_core::harness::Summary::load(&dir.path().join("summary.json")).unwrap();
        assert_eq!(reloaded, summary);
        for rec in &summary.seeds {
            let totals = TraceTotals::read(&dir.path().join(trace_file_name(rec.seed))).unwrap();
            assert_eq!(totals.rounds, 900);
            assert!((totals.reward - rec.reward).abs() <= 1e-12);
            assert!((totals.violation() - rec.violation).abs() <= 1e-12);
            assert_eq!(totals.t1, rec.t1);
        }
    }
}
