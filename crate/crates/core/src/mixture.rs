//! Mixed-strategy policies.
//!
//! Several trained policies, each a specialist for part of the game, are
//! blended into one stochastic policy by a generalized ε-greedy rule:
//!
//! ```text
//! π(a|s) = ε/|A| + Σ_i α_i (1 − ε) π_i(a|s),   α_i ≥ 0, Σ α_i = 1
//! ```
//!
//! With two components this is `ε/|A| + α(1−ε)π₁ + (1−α)(1−ε)π₂`; the
//! weight `α` slides the agent between the two strategies and `ε` keeps
//! every action reachable.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;

use crate::checkpoint::Checkpoint;
use crate::env::{Action, Frame, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::net::NetParams;
use crate::preprocess::{Observation, RegimeSpec, HISTORY};
use crate::rng::sample_categorical;

/// Tolerance on `Σ α_i = 1`.
pub const ALPHA_SUM_TOLERANCE: f64 = 1e-9;

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() || p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidDistribution(format!("{what}: {p:?}")));
    }
    Ok(())
}

fn check_unit(v: f64, name: &str) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} = {v} must be in [0, 1]")))
    }
}

/// Two-strategy mixture: `ε/|A| + α(1−ε)p1 + (1−α)(1−ε)p2`.
pub fn mix_two(p1: &[f64], p2: &[f64], alpha: f64, epsilon: f64) -> Result<Vec<f64>> {
    if p1.len() != p2.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} actions", p1.len()),
            actual: format!("{} actions", p2.len()),
        });
    }
    check_distribution(p1, "p1")?;
    check_distribution(p2, "p2")?;
    check_unit(alpha, "alpha")?;
    check_unit(epsilon, "epsilon")?;
    let uniform = epsilon / p1.len() as f64;
    let (w1, w2) = (alpha * (1.0 - epsilon), (1.0 - alpha) * (1.0 - epsilon));
    Ok(p1
        .iter()
        .zip(p2)
        .map(|(&a, &b)| uniform + w1 * a + w2 * b)
        .collect())
}

/// N-strategy mixture: `ε/|A| + Σ_i α_i (1−ε) p_i`.
pub fn mix_n(policies: &[&[f64]], alphas: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if policies.is_empty() || policies.len() != alphas.len() {
        return Err(Error::InvalidConfig(format!(
            "{} policies with {} priorities",
            policies.len(),
            alphas.len()
        )));
    }
    check_priorities(alphas)?;
    check_unit(epsilon, "epsilon")?;
    let n = policies[0].len();
    for p in policies {
        if p.len() != n {
            return Err(Error::ShapeMismatch {
                expected: format!("{n} actions"),
                actual: format!("{} actions", p.len()),
            });
        }
        check_distribution(p, "component")?;
    }
    let mut out = vec![epsilon / n as f64; n];
    for (p, &alpha) in policies.iter().zip(alphas) {
        let w = alpha * (1.0 - epsilon);
        for (o, &v) in out.iter_mut().zip(p.iter()) {
            *o += w * v;
        }
    }
    Ok(out)
}

pub fn check_priorities(alphas: &[f64]) -> Result<()> {
    for &a in alphas {
        check_unit(a, "alpha")?;
    }
    let sum: f64 = alphas.iter().sum();
    if (sum - 1.0).abs() > ALPHA_SUM_TOLERANCE {
        return Err(Error::InvalidConfig(format!("priorities sum to {sum}, expected 1")));
    }
    Ok(())
}

/// The last [`HISTORY`] raw frames of an episode, oldest first.
#[derive(Clone, Debug)]
pub struct FrameHistory {
    frames: Vec<Frame>,
}

impl FrameHistory {
    /// Starts an episode with copies of the first frame.
    pub fn new(first: Frame) -> Self {
        Self {
            frames: vec![first; HISTORY],
        }
    }

    pub fn push(&mut self, frame: Frame) {
        self.frames.remove(0);
        self.frames.push(frame);
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn latest(&self) -> &Frame {
        &self.frames[HISTORY - 1]
    }

    /// Builds the network observation under `regime`.
    pub fn observation(&self, factor: usize, regime: &RegimeSpec) -> Result<Observation> {
        let mut obs = Observation::new(&self.frames[0], factor, regime)?;
        for f in &self.frames[1..] {
            obs.push_frame(f, regime)?;
        }
        Ok(obs)
    }
}

/// Anything that maps a frame history to a distribution over actions.
///
/// Implementations must be pure functions of the history; evaluation relies
/// on this to cache distributions of recurring states.
pub trait Policy: Sync {
    fn distribution(&self, history: &FrameHistory) -> Result<Vec<f64>>;
}

/// Uniformly random play.
#[derive(Clone, Copy, Debug, Default)]
pub struct UniformPolicy;

impl Policy for UniformPolicy {
    fn distribution(&self, _: &FrameHistory) -> Result<Vec<f64>> {
        Ok(vec![1.0 / NUM_ACTIONS as f64; NUM_ACTIONS])
    }
}

/// How a component network contributes its distribution `π_i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ComponentMode {
    /// Point mass on the most probable action (lowest index on ties).
    Greedy,
    /// The network's softmax output.
    Sample,
}

/// Which preprocessing a component sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ComponentInput {
    /// The regime the component was trained under.
    Regime,
    /// Unmasked frames for every component.
    Raw,
}

#[derive(Clone, Debug)]
pub struct Component {
    pub params: Arc<NetParams<f32>>,
    pub regime: RegimeSpec,
    pub alpha: f64,
}

#[derive(Clone, Debug)]
pub struct MixedPolicy {
    pub components: Vec<Component>,
    pub epsilon: f64,
    pub mode: ComponentMode,
    pub input: ComponentInput,
    pub downsample: usize,
}

impl MixedPolicy {
    pub fn new(components: Vec<Component>, epsilon: f64, mode: ComponentMode, downsample: usize) -> Result<Self> {
        let alphas: Vec<f64> = components.iter().map(|c| c.alpha).collect();
        if components.is_empty() {
            return Err(Error::InvalidConfig("mixture needs at least one component".into()));
        }
        check_priorities(&alphas)?;
        check_unit(epsilon, "epsilon")?;
        Ok(Self {
            components,
            epsilon,
            mode,
            input: ComponentInput::Regime,
            downsample,
        })
    }

    /// Two-strategy mixture with weight `alpha` on `pi1`.
    pub fn two(
        pi1: (Arc<NetParams<f32>>, RegimeSpec),
        pi2: (Arc<NetParams<f32>>, RegimeSpec),
        alpha: f64,
        epsilon: f64,
        mode: ComponentMode,
        downsample: usize,
    ) -> Result<Self> {
        check_unit(alpha, "alpha")?;
        Self::new(
            vec![
                Component { params: pi1.0, regime: pi1.1, alpha },
                Component { params: pi2.0, regime: pi2.1, alpha: 1.0 - alpha },
            ],
            epsilon,
            mode,
            downsample,
        )
    }

    pub fn with_input(mut self, input: ComponentInput) -> Self {
        self.input = input;
        self
    }

    fn component_distribution(&self, c: &Component, history: &FrameHistory) -> Result<Vec<f64>> {
        let regime = match self.input {
            ComponentInput::Regime => c.regime,
            ComponentInput::Raw => RegimeSpec::FULL_STATE,
        };
        let obs = history.observation(self.downsample, &regime)?;
        let cache = c.params.forward(obs.as_slice())?;
        let probs: Vec<f64> = cache.policy.iter().map(|&p| f64::from(p)).collect();
        Ok(match self.mode {
            ComponentMode::Sample => probs,
            ComponentMode::Greedy => {
                let best = probs
                    .iter()
                    .enumerate()
                    .fold(0, |best, (i, &p)| if p > probs[best] { i } else { best });
                let mut onehot = vec![0.0; probs.len()];
                onehot[best] = 1.0;
                onehot
            }
        })
    }

    /// Samples an action; also returns the mixed distribution it came from.
    pub fn act<R: Rng + ?Sized>(&self, history: &FrameHistory, rng: &mut R) -> Result<(Action, Vec<f64>)> {
        let dist = self.distribution(history)?;
        let action = Action::from_index(sample_categorical(&dist, rng))?;
        Ok((action, dist))
    }
}

impl Policy for MixedPolicy {
    fn distribution(&self, history: &FrameHistory) -> Result<Vec<f64>> {
        let mut dists = Vec::with_capacity(self.components.len());
        let mut alphas = Vec::with_capacity(self.components.len());
        for c in &self.components {
            // Components with zero weight cannot change the mixture.
            if c.alpha == 0.0 {
                continue;
            }
            dists.push(self.component_distribution(c, history)?);
            alphas.push(c.alpha);
        }
        let refs: Vec<&[f64]> = dists.iter().map(Vec::as_slice).collect();
        mix_n(&refs, &alphas, self.epsilon)
    }
}

/// One `component=` line of a mixture spec file.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentSpec {
    pub checkpoint: PathBuf,
    pub alpha: f64,
    pub regime: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureSpec {
    pub components: Vec<ComponentSpec>,
    pub epsilon: f64,
}

impl MixtureSpec {
    /// Parses lines `component=<path>, alpha=<float>, regime=<1|2>` and
    /// `epsilon=<float>`; `#` starts a comment. With `renormalize`, priorities
    /// are rescaled to sum to one instead of being rejected.
    pub fn parse(text: &str, origin: &str, renormalize: bool) -> Result<Self> {
        let line_err = |line: usize, message: String| Error::ConfigLine {
            path: origin.to_string(),
            line,
            message,
        };
        let mut components = Vec::new();
        let mut epsilon = None;
        for (idx, raw) in text.lines().enumerate() {
            let n = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut checkpoint = None;
            let mut alpha = None;
            let mut regime = None;
            let mut is_epsilon = false;
            for field in line.split(',') {
                let (key, value) = field
                    .split_once('=')
                    .ok_or_else(|| line_err(n, format!("expected key=value, got `{}`", field.trim())))?;
                let (key, value) = (key.trim(), value.trim());
                let float = |v: &str| v.parse::<f64>().map_err(|_| line_err(n, format!("`{v}` is not a number")));
                match key {
                    "component" => checkpoint = Some(PathBuf::from(value)),
                    "alpha" => alpha = Some(float(value)?),
                    "regime" => {
                        regime = Some(
                            value
                                .parse::<u8>()
                                .ok()
                                .filter(|r| (1..=2).contains(r))
                                .ok_or_else(|| line_err(n, format!("regime must be 1 or 2, got `{value}`")))?,
                        )
                    }
                    "epsilon" => {
                        is_epsilon = true;
                        epsilon = Some(float(value)?);
                    }
                    other => return Err(line_err(n, format!("unknown key `{other}`"))),
                }
            }
            if is_epsilon {
                if checkpoint.is_some() || alpha.is_some() || regime.is_some() {
                    return Err(line_err(n, "epsilon must be on its own line".into()));
                }
                continue;
            }
            match (checkpoint, alpha, regime) {
                (Some(checkpoint), Some(alpha), Some(regime)) => components.push(ComponentSpec { checkpoint, alpha, regime }),
                _ => return Err(line_err(n, "component lines need component, alpha and regime".into())),
            }
        }
        let epsilon = epsilon.ok_or_else(|| line_err(0, "missing epsilon line".into()))?;
        check_unit(epsilon, "epsilon")?;
        if components.is_empty() {
            return Err(line_err(0, "no component lines".into()));
        }
        if renormalize {
            let sum: f64 = components.iter().map(|c| c.alpha).sum();
            if !(sum > 0.0) {
                return Err(line_err(0, "priorities sum to zero".into()));
            }
            for c in &mut components {
                c.alpha /= sum;
            }
        }
        check_priorities(&components.iter().map(|c| c.alpha).collect::<Vec<_>>())?;
        Ok(Self { components, epsilon })
    }

    pub fn load(path: &Path, renormalize: bool) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec = Self::parse(&text, &path.display().to_string(), renormalize)?;
        // Relative checkpoint paths are relative to the spec file.
        if let Some(dir) = path.parent() {
            for c in &mut spec.components {
                if c.checkpoint.is_relative() {
                    c.checkpoint = dir.join(&c.checkpoint);
                }
            }
        }
        Ok(spec)
    }

    /// Loads every checkpoint and builds the policy.
    pub fn build(&self, mode: ComponentMode, downsample: usize) -> Result<MixedPolicy> {
        let components = self
            .components
            .iter()
            .map(|c| {
                Ok(Component {
                    params: Arc::new(Checkpoint::load(&c.checkpoint)?.params),
                    regime: RegimeSpec::from_id(c.regime)?,
                    alpha: c.alpha,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        MixedPolicy::new(components, self.epsilon, mode, downsample)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints() {
        let p1 = [0.1, 0.2, 0.3, 0.4];
        let p2 = [0.7, 0.1, 0.1, 0.1];
        assert_eq!(mix_two(&p1, &p2, 1.0, 0.0).unwrap(), p1.to_vec());
        assert_eq!(mix_two(&p1, &p2, 0.0, 0.0).unwrap(), p2.to_vec());
        assert_eq!(mix_two(&p1, &p2, 0.3, 1.0).unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn three_action_example() {
        // ε/3 + α(1−ε)p1 + (1−α)(1−ε)p2 evaluated by hand:
        // a0: 0.01/3 + 0.125·0.99 = 0.12708333…
        // a1: 0.01/3 + 0.875·0.99 = 0.86958333…
        // a2: 0.01/3             = 0.00333333…
        let out = mix_two(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], 0.125, 0.01).unwrap();
        let expected = [0.127_083_333_333_333_3, 0.869_583_333_333_333_3, 0.003_333_333_333_333_333];
        for (o, e) in out.iter().zip(expected) {
            assert!((o - e).abs() < 1e-15, "{o} vs {e}");
        }
    }

    #[test]
    fn mismatched_sizes_rejected() {
        assert!(mix_two(&[0.5, 0.5], &[1.0, 0.0, 0.0], 0.5, 0.0).is_err());
        assert!(mix_n(&[&[0.5, 0.5], &[1.0]], &[0.5, 0.5], 0.0).is_err());
    }

    #[test]
    fn priorities_must_sum_to_one() {
        assert!(mix_n(&[&[1.0, 0.0], &[0.0, 1.0]], &[0.5, 0.6], 0.1).is_err());
        assert!(mix_n(&[&[1.0, 0.0], &[0.0, 1.0]], &[0.4, 0.6], 0.1).is_ok());
    }

    #[test]
    fn single_component_reduction() {
        let p = [0.1, 0.6, 0.3];
        let out = mix_n(&[&p], &[1.0], 0.3).unwrap();
        for (o, v) in out.iter().zip(p) {
            assert!((o - (0.1 + 0.7 * v)).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_components() {
        let p = [0.2, 0.2, 0.6];
        let out = mix_n(&[&p, &p, &p], &[0.2, 0.3, 0.5], 0.05).unwrap();
        for (o, v) in out.iter().zip(p) {
            assert!((o - (0.05 / 3.0 + 0.95 * v)).abs() < 1e-15);
        }
    }

    #[test]
    fn spec_file_parsing() {
        let text = "# two strategies\ncomponent=a.mxp, alpha=0.125, regime=1\ncomponent = b.mxp , alpha = 0.875, regime = 2\nepsilon=0.01\n";
        let spec = MixtureSpec::parse(text, "mix.txt", false).unwrap();
        assert_eq!(spec.epsilon, 0.01);
        assert_eq!(spec.components.len(), 2);
        assert_eq!(spec.components[1].regime, 2);
        assert_eq!(spec.components[1].checkpoint, PathBuf::from("b.mxp"));

        let unnormalized = "component=a, alpha=1, regime=1\ncomponent=b, alpha=3, regime=2\nepsilon=0\n";
        assert!(MixtureSpec::parse(unnormalized, "m", false).is_err());
        let spec = MixtureSpec::parse(unnormalized, "m", true).unwrap();
        assert_eq!(spec.components[0].alpha, 0.25);

        let err = MixtureSpec::parse("component=a, alpha=1, regime=3\nepsilon=0\n", "m", false).unwrap_err();
        assert!(err.to_string().contains("m:1"), "{err}");
        assert!(MixtureSpec::parse("component=a, alpha=1, regime=1\n", "m", false).is_err());
    }
}
