use mixstrat::env::{intensity, Action, Breakout, EnvConfig, Frame};
use mixstrat::eval::{aggregate, proportion_lower_at_95, rollout, run_episode};
use mixstrat::mixture::{mix_two, FrameHistory, Policy, UniformPolicy};
use mixstrat::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn one_hot(a: Action) -> Vec<f64> {
    let mut p = vec![0.0; 4];
    p[a as usize] = 1.0;
    p
}

struct Always(Action);

impl Policy for Always {
    fn distribution(&self, _: &FrameHistory) -> Result<Vec<f64>> {
        Ok(one_hot(self.0))
    }
}

fn columns_of(frame: &Frame, value: u8, rows: std::ops::Range<usize>) -> Vec<usize> {
    rows.flat_map(|y| (0..frame.width).filter(move |&x| frame.get(x, y) == value))
        .collect()
}

/// Keeps the paddle centre under the ball and serves when the ball rests on
/// the paddle.
struct Tracker {
    paddle_row: usize,
}

impl Policy for Tracker {
    fn distribution(&self, history: &FrameHistory) -> Result<Vec<f64>> {
        let frame = history.latest();
        let paddle = columns_of(frame, intensity::PADDLE, self.paddle_row..self.paddle_row + 1);
        let ball: Vec<(usize, usize)> = (0..frame.height)
            .flat_map(|y| (0..frame.width).map(move |x| (x, y)))
            .filter(|&(x, y)| frame.get(x, y) == intensity::BALL)
            .collect();
        let (Some(&lo), Some(&hi), Some(&(bx, by))) = (paddle.first(), paddle.last(), ball.first()) else {
            return Ok(one_hot(Action::Noop));
        };
        let centre = (lo + hi) / 2;
        let action = if by + 1 == self.paddle_row && bx.abs_diff(centre) <= 1 {
            Action::Fire
        } else if bx + 1 < centre {
            Action::Left
        } else if bx > centre + 1 {
            Action::Right
        } else {
            Action::Noop
        };
        Ok(one_hot(action))
    }
}

struct Mix<'a> {
    p1: &'a dyn Policy,
    p2: &'a dyn Policy,
    alpha: f64,
    epsilon: f64,
}

impl Policy for Mix<'_> {
    fn distribution(&self, history: &FrameHistory) -> Result<Vec<f64>> {
        mix_two(&self.p1.distribution(history)?, &self.p2.distribution(history)?, self.alpha, self.epsilon)
    }
}

fn small_config() -> EnvConfig {
    EnvConfig {
        episode_max_steps: 1_500,
        ..EnvConfig::default()
    }
}

#[test]
fn uniform_rollout_matches_an_independent_random_baseline() {
    let cfg = EnvConfig::default();
    let mut r = ChaCha8Rng::seed_from_u64(31);
    let scores: Vec<f64> = (0..1_000)
        .map(|i| {
            let mut env = Breakout::new(EnvConfig { seed: 10_000 + i, ..cfg.clone() }).unwrap();
            while !env.is_terminal() {
                env.step(Action::from_index(r.gen_range(0..4)).unwrap()).unwrap();
            }
            env.state.score as f64
        })
        .collect();
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let sd = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (scores.len() - 1) as f64).sqrt();

    let stats = aggregate(0, &rollout(&UniformPolicy, &cfg, 100, 3).unwrap()).unwrap();
    assert!(
        (stats.mean - mean).abs() <= 3.0 * sd / 10.0,
        "rollout mean {} vs oracle {mean} (sd {sd})",
        stats.mean
    );
    assert_eq!(stats.stuck_fraction, 0.0);
}

#[test]
fn a_policy_that_never_serves_is_stuck_until_the_cap() {
    let cfg = small_config();
    let r = run_episode(&Always(Action::Noop), &cfg, 4, 0).unwrap();
    assert_eq!(r.steps, cfg.episode_max_steps);
    assert_eq!((r.score, r.lives_lost), (0, 0));
    let cycle = r.cycle.expect("stall is a loop");
    assert_eq!(cycle.period, 1);
}

#[test]
fn capped_episodes_use_exactly_the_step_budget() {
    let cfg = EnvConfig {
        episode_max_steps: 60,
        ..EnvConfig::default()
    };
    let r = run_episode(&UniformPolicy, &cfg, 2, 5).unwrap();
    assert!(r.lives_lost < cfg.lives);
    assert_eq!(r.steps, 60);
}

/// Joint windows of the last four state fingerprints, replayed outside the
/// evaluator.
fn replay_windows(policy: &dyn Policy, cfg: &EnvConfig, env_seed: u64) -> Vec<[u64; 4]> {
    let mut env = Breakout::new(cfg.clone()).unwrap();
    let mut history = FrameHistory::new(env.reset_with_seed(env_seed).unwrap());
    let mut prints = vec![env.state.fingerprint()];
    let mut windows = Vec::new();
    loop {
        let t = prints.len() - 1;
        windows.push(std::array::from_fn(|k| prints[(t + k).saturating_sub(3)]));
        let dist = policy.distribution(&history).unwrap();
        let action = dist.iter().position(|&p| p == 1.0).unwrap();
        let out = env.step(Action::from_index(action).unwrap()).unwrap();
        if out.terminal {
            return windows;
        }
        history.push(out.frame);
        prints.push(env.state.fingerprint());
    }
}

#[test]
fn reported_loops_of_deterministic_policies_are_periodic_on_replay() {
    let cfg = small_config();
    let tracker = Tracker {
        paddle_row: cfg.paddle_row(),
    };
    let policies: [&dyn Policy; 5] = [
        &Always(Action::Noop),
        &Always(Action::Fire),
        &Always(Action::Left),
        &Always(Action::Right),
        &tracker,
    ];
    let mut loops = 0;
    for policy in policies {
        for env_seed in 0..6 {
            let r = run_episode(policy, &cfg, env_seed, 0).unwrap();
            let windows = replay_windows(policy, &cfg, env_seed);
            assert_eq!(windows.len() as u64, r.steps);
            let Some(c) = r.cycle else {
                continue;
            };
            loops += 1;
            assert_eq!(r.steps, cfg.episode_max_steps);
            for t in c.first_repeat_index..windows.len() {
                assert_eq!(windows[t], windows[t - c.period], "seed {env_seed} step {t}");
            }
            let earlier: std::collections::HashSet<_> = windows[..c.first_repeat_index].iter().collect();
            assert_eq!(earlier.len(), c.first_repeat_index, "no repeat before the reported one");
        }
    }
    assert!(loops > 0);
}

#[test]
fn exploration_does_not_increase_the_stuck_fraction() {
    let cfg = small_config();
    let tracker = Tracker {
        paddle_row: cfg.paddle_row(),
    };
    let stall = Always(Action::Noop);
    for alpha in [0.0, 0.5] {
        let counts: Vec<usize> = [0.0, 0.01, 0.1, 0.5]
            .iter()
            .map(|&epsilon| {
                let mix = Mix {
                    p1: &tracker,
                    p2: &stall,
                    alpha,
                    epsilon,
                };
                rollout(&mix, &cfg, 200, 11).unwrap().iter().filter(|r| r.stuck_detected()).count()
            })
            .collect();
        for w in counts.windows(2) {
            assert!(!proportion_lower_at_95(w[0], 200, w[1], 200), "alpha {alpha}: {counts:?}");
        }
        if alpha == 0.0 {
            assert_eq!(counts[0], 200);
        }
    }
}
