//! Run configuration: a flat `key = value` file plus command-line overrides.
//!
//! Lines are `key = value`; `#` starts a comment. Every key has a default,
//! unknown keys are rejected, and later sources override earlier ones
//! (file, then flags). Keys are applied in a fixed order regardless of where
//! they appear, so `regime` always lands before `mask_immutable` and
//! `life_loss_penalty`, which refine it.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::a3c::TrainerConfig;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::mixture::{ComponentInput, ComponentMode};
use crate::preprocess::{RegimeSpec, HISTORY};

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureSettings {
    pub alpha: f64,
    pub epsilon: f64,
    pub alphas: Vec<f64>,
    pub spec: Option<PathBuf>,
    pub mode: ComponentMode,
    pub input: ComponentInput,
    pub renormalize: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub episodes: usize,
    pub checkpoint: Option<PathBuf>,
    pub pi1: Option<PathBuf>,
    pub pi2: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub trainer: TrainerConfig,
    pub regime_id: u8,
    pub regime: RegimeSpec,
    pub history_frames: usize,
    pub repeat_action_probability: f64,
    pub life_loss_terminal: bool,
    pub pixel_max: bool,
    pub mixture: MixtureSettings,
    pub eval: EvalSettings,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            trainer: TrainerConfig::default(),
            regime_id: 1,
            regime: RegimeSpec::FULL_STATE,
            history_frames: HISTORY,
            repeat_action_probability: 0.0,
            life_loss_terminal: false,
            pixel_max: false,
            mixture: MixtureSettings {
                alpha: 0.125,
                epsilon: 0.01,
                alphas: vec![0.0, 0.125, 0.25, 0.5, 1.0],
                spec: None,
                mode: ComponentMode::Greedy,
                input: ComponentInput::Regime,
                renormalize: false,
            },
            eval: EvalSettings {
                episodes: 100,
                checkpoint: None,
                pi1: None,
                pi2: None,
            },
            out_dir: PathBuf::from("runs"),
            seed: 0,
        }
    }
}

/// Every accepted key, in application and echo order.
pub const KEYS: &[&str] = &[
    "grid_width",
    "grid_height",
    "paddle_width",
    "paddle_speed",
    "brick_rows",
    "brick_cols",
    "brick_height",
    "brick_top",
    "brick_value",
    "lives",
    "episode_max_steps",
    "frame_skip",
    "ball_speed",
    "ball_size",
    "repeat_action_probability",
    "life_loss_terminal",
    "pixel_max",
    "history_frames",
    "learning_rate",
    "gamma",
    "beta",
    "t_max",
    "workers",
    "total_steps",
    "clip_norm",
    "rms_decay",
    "rms_epsilon",
    "anneal_lr",
    "checkpoint_interval",
    "hidden",
    "downsample",
    "regime",
    "mask_immutable",
    "life_loss_penalty",
    "alpha",
    "epsilon",
    "alphas",
    "mixture",
    "component_mode",
    "component_input",
    "renormalize_alphas",
    "episodes",
    "checkpoint",
    "pi1",
    "pi2",
    "seed",
    "out",
];

/// Where a setting came from, for diagnostics.
#[derive(Clone, Debug)]
struct Origin {
    source: String,
    line: usize,
}

fn parse_num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse::<T>()
        .map_err(|_| format!("`{v}` is not a valid {}", std::any::type_name::<T>()))
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("`{v}` is not a boolean")),
    }
}

fn parse_list<T: std::str::FromStr>(v: &str) -> std::result::Result<Vec<T>, String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse_num)
        .collect()
}

fn unit(v: f64, name: &str) -> std::result::Result<f64, String> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{name} must be in [0, 1], got {v}"))
    }
}

fn path_opt(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn path_str(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let e = &mut self.env;
        let t = &mut self.trainer;
        match key {
            "grid_width" => e.grid_width = parse_num(v)?,
            "grid_height" => e.grid_height = parse_num(v)?,
            "paddle_width" => e.paddle_width = parse_num(v)?,
            "paddle_speed" => e.paddle_speed = parse_num(v)?,
            "brick_rows" => e.brick_rows = parse_num(v)?,
            "brick_cols" => e.brick_cols = parse_num(v)?,
            "brick_height" => e.brick_height = parse_num(v)?,
            "brick_top" => e.brick_top = parse_num(v)?,
            "brick_value" => e.brick_value = parse_num(v)?,
            "lives" => e.lives = parse_num(v)?,
            "episode_max_steps" => e.episode_max_steps = parse_num(v)?,
            "frame_skip" => e.frame_skip = parse_num(v)?,
            "ball_speed" => e.ball_speed = parse_num(v)?,
            "ball_size" => e.ball_size = parse_num(v)?,
            "repeat_action_probability" => {
                let p: f64 = parse_num(v)?;
                if p != 0.0 {
                    return Err("the simulator is deterministic; repeat_action_probability must be 0".into());
                }
                self.repeat_action_probability = p;
            }
            "life_loss_terminal" => {
                if parse_bool(v)? {
                    return Err("life loss never ends an episode; life_loss_terminal must be false".into());
                }
                self.life_loss_terminal = false;
            }
            "pixel_max" => {
                if parse_bool(v)? {
                    return Err("frames are rendered without flicker; pixel_max must be false".into());
                }
                self.pixel_max = false;
            }
            "history_frames" => {
                let n: usize = parse_num(v)?;
                if n != HISTORY {
                    return Err(format!("history_frames must be {HISTORY}"));
                }
                self.history_frames = n;
            }
            "learning_rate" => t.learning_rate = parse_num(v)?,
            "gamma" => {
                let g: f64 = parse_num(v)?;
                if !(0.0..1.0).contains(&g) {
                    return Err(format!("gamma must be in [0, 1), got {g}"));
                }
                t.gamma = g;
            }
            "beta" => t.beta = parse_num(v)?,
            "t_max" => t.t_max = parse_num(v)?,
            "workers" => t.workers = parse_num(v)?,
            "total_steps" => t.total_steps = parse_num(v)?,
            "clip_norm" => t.clip_norm = parse_num(v)?,
            "rms_decay" => t.rms_decay = parse_num(v)?,
            "rms_epsilon" => t.rms_epsilon = parse_num(v)?,
            "anneal_lr" => t.anneal_lr = parse_bool(v)?,
            "checkpoint_interval" => t.checkpoint_interval = parse_num(v)?,
            "hidden" => t.trunk = parse_list(v)?,
            "downsample" => t.downsample = parse_num(v)?,
            "regime" => {
                let id: u8 = parse_num(v)?;
                self.regime = RegimeSpec::from_id(id).map_err(|e| e.to_string())?;
                self.regime_id = id;
            }
            "mask_immutable" => self.regime.mask_immutable = parse_bool(v)?,
            "life_loss_penalty" => self.regime.life_loss_penalty = parse_num(v)?,
            "alpha" => self.mixture.alpha = unit(parse_num(v)?, "alpha")?,
            "epsilon" => self.mixture.epsilon = unit(parse_num(v)?, "epsilon")?,
            "alphas" => {
                let list: Vec<f64> = parse_list(v)?;
                for &a in &list {
                    unit(a, "alphas entry")?;
                }
                self.mixture.alphas = list;
            }
            "mixture" => self.mixture.spec = path_opt(v),
            "component_mode" => {
                self.mixture.mode = match v {
                    "greedy" => ComponentMode::Greedy,
                    "sample" => ComponentMode::Sample,
                    _ => return Err(format!("component_mode must be greedy or sample, got `{v}`")),
                }
            }
            "component_input" => {
                self.mixture.input = match v {
                    "regime" => ComponentInput::Regime,
                    "raw" => ComponentInput::Raw,
                    _ => return Err(format!("component_input must be regime or raw, got `{v}`")),
                }
            }
            "renormalize_alphas" => self.mixture.renormalize = parse_bool(v)?,
            "episodes" => self.eval.episodes = parse_num(v)?,
            "checkpoint" => self.eval.checkpoint = path_opt(v),
            "pi1" => self.eval.pi1 = path_opt(v),
            "pi2" => self.eval.pi2 = path_opt(v),
            "seed" => self.seed = parse_num(v)?,
            "out" => self.out_dir = PathBuf::from(v),
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let e = &self.env;
        let t = &self.trainer;
        match key {
            "grid_width" => e.grid_width.to_string(),
            "grid_height" => e.grid_height.to_string(),
            "paddle_width" => e.paddle_width.to_string(),
            "paddle_speed" => e.paddle_speed.to_string(),
            "brick_rows" => e.brick_rows.to_string(),
            "brick_cols" => e.brick_cols.to_string(),
            "brick_height" => e.brick_height.to_string(),
            "brick_top" => e.brick_top.to_string(),
            "brick_value" => e.brick_value.to_string(),
            "lives" => e.lives.to_string(),
            "episode_max_steps" => e.episode_max_steps.to_string(),
            "frame_skip" => e.frame_skip.to_string(),
            "ball_speed" => e.ball_speed.to_string(),
            "ball_size" => e.ball_size.to_string(),
            "repeat_action_probability" => self.repeat_action_probability.to_string(),
            "life_loss_terminal" => self.life_loss_terminal.to_string(),
            "pixel_max" => self.pixel_max.to_string(),
            "history_frames" => self.history_frames.to_string(),
            "learning_rate" => t.learning_rate.to_string(),
            "gamma" => t.gamma.to_string(),
            "beta" => t.beta.to_string(),
            "t_max" => t.t_max.to_string(),
            "workers" => t.workers.to_string(),
            "total_steps" => t.total_steps.to_string(),
            "clip_norm" => t.clip_norm.to_string(),
            "rms_decay" => t.rms_decay.to_string(),
            "rms_epsilon" => t.rms_epsilon.to_string(),
            "anneal_lr" => t.anneal_lr.to_string(),
            "checkpoint_interval" => t.checkpoint_interval.to_string(),
            "hidden" => join(&t.trunk),
            "downsample" => t.downsample.to_string(),
            "regime" => self.regime_id.to_string(),
            "mask_immutable" => self.regime.mask_immutable.to_string(),
            "life_loss_penalty" => self.regime.life_loss_penalty.to_string(),
            "alpha" => self.mixture.alpha.to_string(),
            "epsilon" => self.mixture.epsilon.to_string(),
            "alphas" => join(&self.mixture.alphas),
            "mixture" => path_str(&self.mixture.spec),
            "component_mode" => match self.mixture.mode {
                ComponentMode::Greedy => "greedy".into(),
                ComponentMode::Sample => "sample".into(),
            },
            "component_input" => match self.mixture.input {
                ComponentInput::Regime => "regime".into(),
                ComponentInput::Raw => "raw".into(),
            },
            "renormalize_alphas" => self.mixture.renormalize.to_string(),
            "episodes" => self.eval.episodes.to_string(),
            "checkpoint" => path_str(&self.eval.checkpoint),
            "pi1" => path_str(&self.eval.pi1),
            "pi2" => path_str(&self.eval.pi2),
            "seed" => self.seed.to_string(),
            "out" => self.out_dir.display().to_string(),
            _ => unreachable!("key table out of sync: {key}"),
        }
    }

    /// Cross-field invariants that no single key can check.
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.trainer.validate()?;
        self.regime.validate()?;
        let f = self.trainer.downsample;
        if self.env.grid_width % f != 0 || self.env.grid_height % f != 0 {
            return Err(Error::InvalidConfig(format!(
                "downsample {f} does not divide the {}x{} grid",
                self.env.grid_width, self.env.grid_height
            )));
        }
        if self.eval.episodes < 1 {
            return Err(Error::InvalidConfig("episodes must be at least 1".into()));
        }
        if self.mixture.alphas.is_empty() {
            return Err(Error::InvalidConfig("alphas must not be empty".into()));
        }
        Ok(())
    }

    /// Resolves a config from file text and `(key, value)` overrides.
    pub fn from_sources(text: &str, origin: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut entries: HashMap<String, (String, Origin)> = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let here = Origin {
                source: origin.to_string(),
                line: idx + 1,
            };
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::ConfigLine {
                    path: here.source,
                    line: here.line,
                    message: format!("expected `key = value`, got `{line}`"),
                });
            };
            entries.insert(key.trim().to_string(), (value.trim().to_string(), here));
        }
        for (i, (key, value)) in overrides.iter().enumerate() {
            let here = Origin {
                source: "<command line>".into(),
                line: i + 1,
            };
            entries.insert(key.trim().to_string(), (value.trim().to_string(), here));
        }

        if let Some((key, (_, o))) = entries.iter().find(|(k, _)| !KEYS.contains(&k.as_str())) {
            return Err(Error::ConfigLine {
                path: o.source.clone(),
                line: o.line,
                message: format!("unknown key `{key}`"),
            });
        }
        let mut cfg = RunConfig::default();
        for key in KEYS {
            if let Some((value, o)) = entries.get(*key) {
                cfg.set(key, value).map_err(|message| Error::ConfigLine {
                    path: o.source.clone(),
                    line: o.line,
                    message: format!("{key}: {message}"),
                })?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (if given) and applies `overrides` on top.
    pub fn parse(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::from_sources(&text, &p.display().to_string(), overrides)
            }
            None => Self::from_sources("", "<defaults>", overrides),
        }
    }

    /// Every key with its resolved value; re-parses to an identical config.
    pub fn to_config_string(&self) -> String {
        let mut out = String::from("# resolved configuration\n");
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key));
        }
        out
    }
}
