use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use v2vlink::agent::{encode_state, train, D3qnAgent, DuelingNet, NetDims, ReplayBuffer, TrainConfig, STATE_DIM};
use v2vlink::baselines::{
    evaluate_policy, sa_search, FixedPolicy, OraclePolicy, Policy, PsoParams, PsoPolicy, RandomPolicy, SaParams,
    SaPolicy,
};
use v2vlink::channel::{ProfileTable, SnrRange};
use v2vlink::env::{
    action_space, generate_traces, oracle_best, Action, EnvConfig, Game, GameSpec, LinkEnv, LinkModel, State,
    ACTION_COUNT,
};
use v2vlink::phy::{mcs_table, per, throughput, PerModel};

fn game_of(two: bool) -> Game {
    if two {
        Game::EnergyEfficiency
    } else {
        Game::Throughput
    }
}

#[test]
fn profile_gains_sum_to_one() {
    for p in ProfileTable::builtin().iter() {
        let total: f64 = p.linear_gains().iter().sum();
        assert!((total - 1.0).abs() < 1e-9, "{total}");
        assert_eq!(p.avg_path_gains_db.len(), p.path_delays_s.len());
        assert_eq!(p.path_delays_s.len(), p.doppler_shifts_hz.len());
    }
}

proptest! {
    #[test]
    fn per_falls_with_snr_and_rises_with_rate(a in -10.0f64..40.0, b in -10.0f64..40.0) {
        let model = PerModel::default();
        let table = mcs_table();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        for m in &table {
            prop_assert!(per(&model, m, hi) <= per(&model, m, lo));
        }
        for pair in table.windows(2) {
            prop_assert!(per(&model, &pair[0], a) <= per(&model, &pair[1], a));
        }
    }

    #[test]
    fn throughput_is_bounded_and_linear_in_success(m in 0usize..8, p in 0.0f64..=1.0) {
        let entry = mcs_table()[m];
        let frame = v2vlink::phy::FrameTiming::default().frame_for(&entry);
        let tp = throughput(&frame, p);
        let full = throughput(&frame, 0.0);
        prop_assert!((0.0..=entry.data_rate_mbps).contains(&tp));
        prop_assert!((tp - full * (1.0 - p)).abs() < 1e-12);
        prop_assert_eq!(tp == 0.0, p == 1.0);
    }

    #[test]
    fn game_two_reward_is_zero_exactly_above_the_cap(snr in 0.0f64..30.0, a in 0usize..ACTION_COUNT) {
        let game = GameSpec::new(Game::EnergyEfficiency);
        let o = LinkModel::default().outcome(&game, snr, Action::from_flat(a).unwrap());
        prop_assert_eq!(o.reward == 0.0, o.per > game.per_rated);
        prop_assert!(o.reward >= 0.0);
    }

    #[test]
    fn oracle_matches_brute_force(snr in -5.0f64..35.0, two: bool) {
        let game = GameSpec::new(game_of(two));
        let model = LinkModel::default();
        let (best, r) = oracle_best(&model, &game, snr);
        // separate sweep over (mcs, power) indices
        let mut brute = (0, f64::NEG_INFINITY);
        for m in 0..8 {
            for p in 0..5 {
                let a = Action::new(m, p).unwrap();
                let v = model.expected_reward(&game, snr, a);
                if v > brute.1 {
                    brute = (a.flat(), v);
                }
            }
        }
        prop_assert_eq!(best.flat(), brute.0);
        prop_assert_eq!(r, brute.1);
    }

    #[test]
    fn mean_advantage_identity(seed: u64, x in proptest::collection::vec(-2.0f64..2.0, STATE_DIM)) {
        let net = DuelingNet::new(NetDims::new(STATE_DIM, ACTION_COUNT), &mut ChaCha8Rng::seed_from_u64(seed));
        let f = net.forward(&x);
        let total: f64 = f.q.iter().map(|q| q - f.value).sum();
        prop_assert!(total.abs() < 1e-9, "{}", total);
    }

    #[test]
    fn encoding_keeps_unit_range(snr in 5.0f64..=25.0, n in 1usize..=100) {
        let state = State {
            scenario: v2vlink::channel::ScenarioKind::HighwayLos,
            snr_est_db: snr,
            step_index: n,
        };
        let v = encode_state(&state, &SnrRange::default(), 100);
        prop_assert_eq!(v.len(), STATE_DIM);
        prop_assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
        prop_assert_eq!(v.iter().take(5).sum::<f64>(), 1.0);
    }

    #[test]
    fn replay_never_exceeds_capacity(cap in 1usize..50, pushes in 0usize..200) {
        let mut buf = ReplayBuffer::new(cap);
        for i in 0..pushes {
            buf.push(v2vlink::agent::Transition {
                state: vec![i as f64],
                action: 0,
                reward: 0.0,
                next_state: vec![0.0],
                terminal: false,
            });
        }
        prop_assert_eq!(buf.len(), pushes.min(cap));
        if pushes > 0 {
            let oldest = buf.iter().map(|t| t.state[0] as usize).min().unwrap();
            prop_assert_eq!(oldest, pushes.saturating_sub(cap));
        }
    }

    #[test]
    fn zero_temperature_annealing_never_loses_ground(seed: u64, start in 0usize..ACTION_COUNT, snr in 0.0f64..30.0) {
        let game = GameSpec::new(Game::EnergyEfficiency);
        let model = LinkModel::default();
        let params = SaParams { initial_temp: 0.0, final_temp: 0.0, iterations: 200 };
        let run = sa_search(
            |a| model.expected_reward(&game, snr, a),
            &params,
            Action::from_flat(start).unwrap(),
            &mut ChaCha8Rng::seed_from_u64(seed),
        );
        for w in run.trajectory.windows(2) {
            prop_assert!(w[1].1 >= w[0].1);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn policies_stay_in_range_and_under_the_oracle(seed in 0u64..10_000, two: bool) {
        let mut cfg = EnvConfig::for_game(game_of(two));
        cfg.game.episode_len = 15;
        let traces = generate_traces(&cfg, 2, seed).unwrap();
        let oracle = evaluate_policy(&mut OraclePolicy, &cfg, &traces, seed).unwrap().summary;
        let small_pso = PsoParams { n_particles: 8, iterations: 5, ..PsoParams::default() };
        let small_sa = SaParams { iterations: 48, ..SaParams::default() };
        let mut policies: Vec<Box<dyn Policy>> = vec![
            Box::new(RandomPolicy::new(seed)),
            Box::new(FixedPolicy::default()),
            Box::new(PsoPolicy::new(small_pso, seed)),
            Box::new(SaPolicy::new(small_sa, seed)),
        ];
        for p in &mut policies {
            let eval = evaluate_policy(p.as_mut(), &cfg, &traces, seed).unwrap();
            prop_assert!(eval.summary.cumulative_reward >= 0.0);
            prop_assert!(eval.summary.cumulative_reward <= oracle.cumulative_reward + 1e-9);
            prop_assert!(eval.steps.iter().all(|s| s.action < ACTION_COUNT));
            for s in &eval.steps {
                prop_assert!(s.reward <= s.oracle_reward + 1e-12);
            }
        }
    }

    #[test]
    fn training_is_bit_reproducible(seed in 0u64..1000, two: bool) {
        let mut cfg = EnvConfig::for_game(game_of(two));
        cfg.game.episode_len = 10;
        let tc = TrainConfig { episodes: 3, target_sync_period: 7, ..TrainConfig::default() }.with_schedule_for(30);
        let run = || {
            let mut env = LinkEnv::new(cfg.clone(), seed).unwrap();
            train(&mut env, &tc, seed).unwrap().agent.net
        };
        let (a, b) = (run(), run());
        prop_assert!(a.params().iter().zip(b.params()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn target_is_frozen_between_syncs(seed in 0u64..1000, period in 11u64..40) {
        let mut cfg = EnvConfig::for_game(Game::Throughput);
        cfg.game.episode_len = 5;
        let tc = TrainConfig { episodes: 20, target_sync_period: period, ..TrainConfig::default() }.with_schedule_for(100);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut env = LinkEnv::new(cfg, seed).unwrap();
        let mut agent = D3qnAgent::new(tc, STATE_DIM, ACTION_COUNT, &mut rng).unwrap();
        for ep in 0..20 {
            let before = agent.target.net().params().to_vec();
            let syncs = agent.target_syncs;
            agent.run_episode(&mut env, ep, &mut rng).unwrap();
            if agent.target_syncs == syncs {
                prop_assert_eq!(agent.target.net().params(), &before[..]);
            }
        }
        prop_assert_eq!(agent.target_syncs, 100 / period);
    }
}

#[test]
fn action_space_covers_the_grid_once() {
    let flat: Vec<usize> = action_space().iter().map(|a| a.flat()).collect();
    assert_eq!(flat, (0..ACTION_COUNT).collect::<Vec<_>>());
}
