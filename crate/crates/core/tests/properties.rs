use mixstrat::a3c::compute_returns;
use mixstrat::env::{intensity, Action, Breakout, EnvConfig, GameState};
use mixstrat::eval::{aggregate, detect_cycle, EpisodeRecord};
use mixstrat::mixture::{mix_n, mix_two};
use mixstrat::net::{entropy, softmax};
use mixstrat::preprocess::mask_immutable;
use proptest::prelude::*;

fn actions() -> impl Strategy<Value = Vec<Action>> {
    prop::collection::vec((0usize..4).prop_map(|i| Action::from_index(i).unwrap()), 1..400)
}

fn distribution(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, n).prop_filter_map("all zero", |w| {
        let total: f64 = w.iter().sum();
        (total > 1e-6).then(|| w.iter().map(|v| v / total).collect())
    })
}

fn random_state() -> impl Strategy<Value = (EnvConfig, GameState)> {
    let cfg = EnvConfig::default();
    let bricks = cfg.brick_rows * cfg.brick_cols;
    let max_paddle = (cfg.grid_width - cfg.paddle_width) as i32;
    (
        any::<u64>(),
        0..=max_paddle,
        0..cfg.grid_width as i32,
        0..cfg.grid_height as i32,
        prop::collection::vec(any::<bool>(), bricks),
        any::<bool>(),
    )
        .prop_map(move |(seed, paddle_x, bx, by, alive, in_play)| {
            let cfg = EnvConfig { seed, ..EnvConfig::default() };
            let mut s = GameState::reset(&cfg).unwrap();
            s.paddle_x = paddle_x;
            s.ball_pos = (bx, by);
            s.bricks = alive;
            s.ball_in_play = in_play;
            (cfg, s)
        })
}

fn play(seed: u64, acts: &[Action]) -> Vec<u64> {
    let mut env = Breakout::new(EnvConfig { seed, ..EnvConfig::default() }).unwrap();
    let mut out = vec![env.state.fingerprint()];
    for &a in acts {
        if env.is_terminal() {
            break;
        }
        env.step(a).unwrap();
        out.push(env.state.fingerprint());
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn env_replays_identically(seed in any::<u64>(), acts in actions()) {
        prop_assert_eq!(play(seed, &acts), play(seed, &acts));
    }

    #[test]
    fn score_lives_and_ball_stay_consistent(seed in any::<u64>(), acts in actions()) {
        let cfg = EnvConfig { seed, lives: 2, episode_max_steps: 300, ..EnvConfig::default() };
        let mut env = Breakout::new(cfg.clone()).unwrap();
        let mut score = 0;
        for &a in &acts {
            let lives_before = env.state.lives_left;
            let out = env.step(a).unwrap();
            let s = &env.state;
            prop_assert!(s.score >= score);
            prop_assert_eq!(s.score, u64::from(cfg.brick_value) * s.bricks_broken);
            prop_assert_eq!(u64::from(out.raw_reward), s.score - score);
            score = s.score;
            prop_assert_eq!(lives_before - s.lives_left, u32::from(out.life_lost));
            prop_assert_eq!(out.terminal, s.lives_left == 0 || s.step_count >= cfg.episode_max_steps);
            prop_assert!((0..=(cfg.grid_width - cfg.paddle_width) as i32).contains(&s.paddle_x));
            if s.ball_in_play {
                prop_assert!((0..cfg.grid_width as i32).contains(&s.ball_pos.0));
                prop_assert!((0..cfg.grid_height as i32).contains(&s.ball_pos.1));
            }
            if out.terminal {
                prop_assert!(env.step(Action::Noop).is_err());
                break;
            }
        }
    }

    #[test]
    fn masking_removes_exactly_the_bricks((cfg, s) in random_state()) {
        let frame = s.render(&cfg);
        let masked = mask_immutable(&frame);
        prop_assert_eq!(masked.count(intensity::BRICK), 0);
        for (a, b) in frame.pixels.iter().zip(&masked.pixels) {
            if *a == intensity::BRICK {
                prop_assert_eq!(*b, intensity::BACKGROUND);
            } else {
                prop_assert_eq!(a, b);
            }
        }
        prop_assert_eq!(mask_immutable(&masked), masked);
    }

    #[test]
    fn equal_states_share_a_fingerprint((_cfg, s) in random_state()) {
        let copy = s.clone();
        prop_assert_eq!(s.fingerprint(), copy.fingerprint());
        let mut moved = s.clone();
        moved.paddle_x = if s.paddle_x == 0 { 1 } else { s.paddle_x - 1 };
        prop_assert_ne!(s.fingerprint(), moved.fingerprint());
    }

    #[test]
    fn mixture_is_a_distribution_with_floor(
        p1 in distribution(4),
        p2 in distribution(4),
        alpha in 0.0f64..=1.0,
        epsilon in 0.0f64..=1.0,
    ) {
        let m = mix_two(&p1, &p2, alpha, epsilon).unwrap();
        prop_assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for &v in &m {
            prop_assert!(v >= epsilon / 4.0 - 1e-15);
        }
    }

    #[test]
    fn mixture_is_affine_in_alpha(
        p1 in distribution(4),
        p2 in distribution(4),
        a in 0.0f64..=1.0,
        b in 0.0f64..=1.0,
        t in 0.0f64..=1.0,
        epsilon in 0.0f64..=1.0,
    ) {
        let ma = mix_two(&p1, &p2, a, epsilon).unwrap();
        let mb = mix_two(&p1, &p2, b, epsilon).unwrap();
        let mt = mix_two(&p1, &p2, t * a + (1.0 - t) * b, epsilon).unwrap();
        for i in 0..4 {
            prop_assert!((mt[i] - (t * ma[i] + (1.0 - t) * mb[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn n_way_mixture_sums_to_one(
        ps in prop::collection::vec(distribution(4), 1..6),
        raw in prop::collection::vec(0.01f64..1.0, 6),
        epsilon in 0.0f64..=1.0,
    ) {
        let total: f64 = raw[..ps.len()].iter().sum();
        let alphas: Vec<f64> = raw[..ps.len()].iter().map(|w| w / total).collect();
        let refs: Vec<&[f64]> = ps.iter().map(Vec::as_slice).collect();
        if let Ok(m) = mix_n(&refs, &alphas, epsilon) {
            prop_assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn returns_match_direct_sums(
        rewards in prop::collection::vec(-2.0f64..2.0, 1..6),
        bootstrap in -5.0f64..5.0,
        terminal in any::<bool>(),
        gamma in 0.0f64..=1.0,
    ) {
        let got = compute_returns(&rewards, bootstrap, terminal, gamma);
        let k = rewards.len();
        for t in 0..k {
            let mut direct = 0.0;
            for (i, r) in rewards[t..].iter().enumerate() {
                direct += gamma.powi(i as i32) * r;
            }
            if !terminal {
                direct += gamma.powi((k - t) as i32) * bootstrap;
            }
            prop_assert!((got[t] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_peaks_at_uniform(p in distribution(4)) {
        prop_assert!(entropy(&p) <= 4f64.ln() + 1e-12);
    }

    #[test]
    fn softmax_is_shift_invariant(z in prop::collection::vec(-30.0f64..30.0, 4), c in -100.0f64..100.0) {
        let a = softmax(&z);
        let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
        let b = softmax(&shifted);
        for i in 0..4 {
            prop_assert!((a[i] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn stats_match_a_sort_oracle(scores in prop::collection::vec(0u64..500, 1..300)) {
        let records: Vec<EpisodeRecord> = scores
            .iter()
            .map(|&s| EpisodeRecord { reward: s as f64, score: s, steps: 10, lives_lost: 5, cycle: None })
            .collect();
        let stats = aggregate(0, &records).unwrap();
        let mut sorted = scores.clone();
        sorted.sort_unstable();
        let n = sorted.len();
        prop_assert_eq!(stats.min, sorted[0] as f64);
        prop_assert_eq!(stats.max, sorted[n - 1] as f64);
        prop_assert_eq!(stats.median, sorted[(n - 1) / 2] as f64);
        prop_assert!((stats.mean - sorted.iter().sum::<u64>() as f64 / n as f64).abs() < 1e-9);
        prop_assert!(stats.min <= stats.median && stats.median <= stats.max);
    }

    #[test]
    fn cycle_reports_the_first_repeat(stream in prop::collection::vec(0u64..20, 1..60)) {
        let oracle = (0..stream.len()).find_map(|j| {
            (0..j).rev().find(|&i| stream[i] == stream[j]).map(|i| (j, j - i))
        });
        let got = detect_cycle(stream.iter().copied()).map(|r| (r.first_repeat_index, r.period));
        prop_assert_eq!(got, oracle);
    }
}
