//! Policy evaluation: episode rollouts, per-checkpoint statistics and
//! detection of "local stuck" loops.
//!
//! A loop is detected exactly rather than visually. The agent's input is a
//! function of the last four game states and the simulator is deterministic,
//! so the tuple of the last four state fingerprints is a complete state of
//! the agent-environment system. The first time such a tuple recurs the
//! episode is flagged as stuck; under a deterministic policy the trajectory
//! is then periodic until the step cap. Stuck episodes are still played to
//! the end so that episode lengths include the time lost in the loop.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::env::{Breakout, EnvConfig};
use crate::error::{Error, Result};
use crate::io::write_csv;
use crate::mixture::{ComponentMode, FrameHistory, MixedPolicy, Policy};
use crate::net::NetParams;
use crate::preprocess::{shape_reward, RegimeSpec, HISTORY};
use crate::rng::{derive_seed, mix64, sample_categorical, stream, stream_rng};

pub const STATS_HEADER: [&str; 10] = [
    "alpha",
    "epsilon",
    "checkpoint_step",
    "episodes",
    "min",
    "max",
    "median",
    "mean",
    "mean_steps",
    "stuck_fraction",
];

pub const EPISODES_HEADER: [&str; 7] = [
    "episode",
    "reward",
    "score",
    "steps",
    "lives_lost",
    "stuck",
    "cycle_period",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CycleReport {
    /// Stream index at which a fingerprint was seen for the second time.
    pub first_repeat_index: usize,
    pub period: usize,
    pub fingerprint: u64,
}

/// Streaming exact-recurrence detector.
#[derive(Clone, Debug, Default)]
pub struct CycleDetector {
    seen: HashMap<u64, usize>,
    next_index: usize,
}

impl CycleDetector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a fingerprint; returns a report if it was seen before.
    pub fn push(&mut self, fingerprint: u64) -> Option<CycleReport> {
        let index = self.next_index;
        self.next_index += 1;
        match self.seen.insert(fingerprint, index) {
            Some(previous) => Some(CycleReport {
                first_repeat_index: index,
                period: index - previous,
                fingerprint,
            }),
            None => None,
        }
    }
}

/// First recurrence in a fingerprint stream, if any.
pub fn detect_cycle<I: IntoIterator<Item = u64>>(fingerprints: I) -> Option<CycleReport> {
    let mut detector = CycleDetector::new();
    fingerprints.into_iter().find_map(|f| detector.push(f))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    /// Sum of clipped rewards (regime 1 shaping).
    pub reward: f64,
    pub score: u64,
    pub steps: u64,
    pub lives_lost: u32,
    /// The loop of repeated joint states the episode was caught in when it
    /// reached the step cap, if any.
    pub cycle: Option<CycleReport>,
}

impl EpisodeRecord {
    pub fn stuck_detected(&self) -> bool {
        self.cycle.is_some()
    }
}

/// Sliding window over the last [`HISTORY`] state fingerprints.
struct JointState {
    window: [u64; HISTORY],
}

impl JointState {
    fn new(first: u64) -> Self {
        Self {
            window: [first; HISTORY],
        }
    }

    fn push(&mut self, fingerprint: u64) {
        self.window.rotate_left(1);
        self.window[HISTORY - 1] = fingerprint;
    }

    fn key(&self) -> u64 {
        self.window.iter().fold(0x6D69_7873_7472_6174, |acc, &f| mix64(acc ^ f))
    }
}

/// Plays one episode from `env_seed`, drawing actions with `action_seed`.
pub fn run_episode(policy: &dyn Policy, config: &EnvConfig, env_seed: u64, action_seed: u64) -> Result<EpisodeRecord> {
    let mut rng = stream_rng(action_seed, 0);
    let mut env = Breakout::new(config.clone())?;
    let first = env.reset_with_seed(env_seed)?;
    let mut history = FrameHistory::new(first);
    let mut joint = JointState::new(env.state.fingerprint());
    let mut detector = CycleDetector::new();
    // Repeats since the last novel joint state. Under a deterministic policy
    // the first repeat never ends, so this is the first recurrence; with
    // exploration, loops the policy escapes from are forgotten.
    let mut loop_run: Option<CycleReport> = None;
    let mut memo: HashMap<u64, Vec<f64>> = HashMap::new();
    let mut record = EpisodeRecord {
        reward: 0.0,
        score: 0,
        steps: 0,
        lives_lost: 0,
        cycle: None,
    };

    loop {
        let key = joint.key();
        match detector.push(key) {
            Some(report) => {
                loop_run.get_or_insert(report);
            }
            None => loop_run = None,
        }
        let dist = match memo.get(&key) {
            Some(d) => d.clone(),
            None => {
                let d = policy.distribution(&history)?;
                memo.insert(key, d.clone());
                d
            }
        };
        let action = crate::env::Action::from_index(sample_categorical(&dist, &mut rng))?;
        let out = env.step(action)?;
        record.reward += shape_reward(f64::from(out.raw_reward), out.life_lost, &RegimeSpec::FULL_STATE);
        record.lives_lost += u32::from(out.life_lost);
        record.steps += 1;
        if out.terminal {
            if env.state.lives_left > 0 {
                record.cycle = loop_run;
            }
            break;
        }
        history.push(out.frame);
        joint.push(env.state.fingerprint());
    }
    record.score = env.state.score;
    Ok(record)
}

/// Evaluates `episodes` episodes. Episode `i` uses env and action streams
/// derived from `(seed, i)`, so results do not depend on thread count.
pub fn rollout(policy: &dyn Policy, config: &EnvConfig, episodes: usize, seed: u64) -> Result<Vec<EpisodeRecord>> {
    config.validate()?;
    (0..episodes as u64)
        .into_par_iter()
        .map(|i| {
            run_episode(
                policy,
                config,
                derive_seed(seed, stream::EVAL_ENV | i),
                derive_seed(seed, stream::EVAL_ACTIONS | i),
            )
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointStats {
    pub checkpoint_step: u64,
    pub episodes: usize,
    pub min: f64,
    pub max: f64,
    /// Lower middle element for even batch sizes.
    pub median: f64,
    pub mean: f64,
    pub mean_steps: f64,
    pub stuck_fraction: f64,
}

/// Order statistics of the episode scores in a batch.
pub fn aggregate(checkpoint_step: u64, records: &[EpisodeRecord]) -> Result<CheckpointStats> {
    if records.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = records.len();
    let mut scores: Vec<f64> = records.iter().map(|r| r.score as f64).collect();
    scores.sort_by(f64::total_cmp);
    Ok(CheckpointStats {
        checkpoint_step,
        episodes: n,
        min: scores[0],
        max: scores[n - 1],
        median: scores[(n - 1) / 2],
        mean: scores.iter().sum::<f64>() / n as f64,
        mean_steps: records.iter().map(|r| r.steps as f64).sum::<f64>() / n as f64,
        stuck_fraction: records.iter().filter(|r| r.stuck_detected()).count() as f64 / n as f64,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    pub epsilon: f64,
    pub stats: CheckpointStats,
}

#[derive(Clone, Debug)]
pub struct SweepSettings {
    pub env: EnvConfig,
    pub epsilon: f64,
    pub episodes: usize,
    pub seed: u64,
    pub mode: ComponentMode,
    pub downsample: usize,
    pub checkpoint_step: u64,
}

/// Evaluates the two-strategy mixture at each `alpha` with common seeds.
/// `pi1` is the full-state policy, `pi2` the life-safeguard policy.
pub fn sweep_alpha(
    pi1: Arc<NetParams<f32>>,
    pi2: Arc<NetParams<f32>>,
    alphas: &[f64],
    settings: &SweepSettings,
) -> Result<Vec<SweepRow>> {
    alphas
        .iter()
        .map(|&alpha| {
            let policy = MixedPolicy::two(
                (pi1.clone(), RegimeSpec::FULL_STATE),
                (pi2.clone(), RegimeSpec::LIFE_SAFEGUARD),
                alpha,
                settings.epsilon,
                settings.mode,
                settings.downsample,
            )?;
            let records = rollout(&policy, &settings.env, settings.episodes, settings.seed)?;
            Ok(SweepRow {
                alpha,
                epsilon: settings.epsilon,
                stats: aggregate(settings.checkpoint_step, &records)?,
            })
        })
        .collect()
}

pub fn write_stats_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write_csv(
        path,
        &STATS_HEADER,
        rows.iter().map(|r| {
            let s = &r.stats;
            [
                r.alpha.to_string(),
                r.epsilon.to_string(),
                s.checkpoint_step.to_string(),
                s.episodes.to_string(),
                s.min.to_string(),
                s.max.to_string(),
                s.median.to_string(),
                s.mean.to_string(),
                s.mean_steps.to_string(),
                s.stuck_fraction.to_string(),
            ]
        }),
    )
}

pub fn write_episodes_csv(path: &Path, records: &[EpisodeRecord]) -> Result<()> {
    write_csv(
        path,
        &EPISODES_HEADER,
        records.iter().enumerate().map(|(i, r)| {
            [
                i.to_string(),
                r.reward.to_string(),
                r.score.to_string(),
                r.steps.to_string(),
                r.lives_lost.to_string(),
                u8::from(r.stuck_detected()).to_string(),
                r.cycle.map_or(String::new(), |c| c.period.to_string()),
            ]
        }),
    )
}

/// One-sided two-proportion z-test: is the rate `low_hits/low_n` smaller than
/// `high_hits/high_n` at 95% confidence?
pub fn proportion_lower_at_95(low_hits: usize, low_n: usize, high_hits: usize, high_n: usize) -> bool {
    const Z_95_ONE_SIDED: f64 = 1.644_853_626_951_472_2;
    let (p1, p2) = (low_hits as f64 / low_n as f64, high_hits as f64 / high_n as f64);
    let pooled = (low_hits + high_hits) as f64 / (low_n + high_n) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / low_n as f64 + 1.0 / high_n as f64)).sqrt();
    if se == 0.0 {
        return p1 < p2;
    }
    (p2 - p1) / se > Z_95_ONE_SIDED
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_recurrence() {
        let r = detect_cycle([10, 11, 12, 11, 10]).unwrap();
        assert_eq!(r.first_repeat_index, 3);
        assert_eq!(r.period, 2);
        assert_eq!(r.fingerprint, 11);
        assert!(detect_cycle(0..1000u64).is_none());
    }

    fn rec(score: u64, steps: u64, stuck: bool) -> EpisodeRecord {
        EpisodeRecord {
            reward: score as f64,
            score,
            steps,
            lives_lost: 0,
            cycle: stuck.then_some(CycleReport {
                first_repeat_index: 2,
                period: 1,
                fingerprint: 0,
            }),
        }
    }

    #[test]
    fn order_statistics() {
        let s = aggregate(7, &[rec(1, 10, false), rec(5, 20, true), rec(3, 30, false)]).unwrap();
        assert_eq!((s.min, s.max, s.median), (1.0, 5.0, 3.0));
        assert_eq!(s.mean, 3.0);
        assert_eq!(s.mean_steps, 20.0);
        assert!((s.stuck_fraction - 1.0 / 3.0).abs() < 1e-15);

        let s = aggregate(0, &[rec(4, 1, false)]).unwrap();
        assert_eq!((s.min, s.max, s.median), (4.0, 4.0, 4.0));

        let s = aggregate(0, &[rec(4, 1, false), rec(2, 1, false), rec(9, 1, false), rec(1, 1, false)]).unwrap();
        assert_eq!(s.median, 2.0);

        assert!(matches!(aggregate(0, &[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn proportion_test() {
        assert!(proportion_lower_at_95(20, 200, 120, 200));
        assert!(!proportion_lower_at_95(100, 200, 110, 200));
        assert!(!proportion_lower_at_95(0, 200, 0, 200));
    }
}
