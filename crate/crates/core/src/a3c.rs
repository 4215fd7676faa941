//! Asynchronous advantage actor-critic.
//!
//! Workers share one [`SharedParams`] store. Each worker snapshots the
//! global weights, plays up to `t_max` steps in its own environment, turns
//! the segment into gradients of the actor-critic loss, clips them and
//! applies an RMSProp step to the shared weights. Tensors are locked one at a
//! time, so concurrent workers may interleave between tensors; with a single
//! worker the whole run is deterministic.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Mutex, MutexGuard};
use std::time::Duration;

use crate::checkpoint::Checkpoint;
use crate::env::{Action, Breakout, EnvConfig, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::io::write_csv;
use crate::net::{
    active_rows, clip_global_norm_in, entropy, log_softmax, rmsprop_tensor, ForwardCache, Gradients,
    NetParams, NetShape, OptConfig, Real, Rows,
};
use crate::preprocess::{observation_len, scenery, shape_reward, Observation, RegimeSpec};
use crate::rng::{derive_seed, sample_categorical, stream, stream_rng};

pub const TRAIN_LOG_HEADER: [&str; 5] = ["step", "worker", "episode_reward", "episode_length", "regime"];

#[derive(Clone, Debug, PartialEq)]
pub struct TrainerConfig {
    pub gamma: f64,
    /// Entropy regularization weight.
    pub beta: f64,
    pub t_max: usize,
    pub workers: usize,
    pub total_steps: u64,
    pub learning_rate: f64,
    pub rms_decay: f64,
    pub rms_epsilon: f64,
    pub anneal_lr: bool,
    pub clip_norm: f64,
    /// Steps between checkpoints; 0 means `total_steps / 20`.
    pub checkpoint_interval: u64,
    pub trunk: Vec<usize>,
    pub downsample: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            beta: 0.1,
            t_max: 5,
            workers: 8,
            total_steps: 2_000_000,
            learning_rate: 0.004,
            rms_decay: 0.99,
            rms_epsilon: 1e-6,
            anneal_lr: true,
            clip_norm: 40.0,
            checkpoint_interval: 0,
            trunk: vec![256, 128],
            downsample: 2,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if !(0.0..1.0).contains(&self.gamma) {
            return fail(format!("gamma {} must be in [0, 1)", self.gamma));
        }
        if !(self.beta >= 0.0) {
            return fail(format!("beta {} must be >= 0", self.beta));
        }
        if self.t_max < 1 || self.workers < 1 {
            return fail("t_max and workers must be at least 1".into());
        }
        if self.total_steps < 1 {
            return fail("total_steps must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0) || !(0.0..1.0).contains(&self.rms_decay) || !(self.rms_epsilon > 0.0) {
            return fail("learning_rate >= 0, rms_decay in [0, 1) and rms_epsilon > 0 required".into());
        }
        if !(self.clip_norm > 0.0) {
            return fail(format!("clip_norm {} must be positive", self.clip_norm));
        }
        if self.trunk.is_empty() || self.trunk.contains(&0) {
            return fail(format!("hidden layer widths {:?} invalid", self.trunk));
        }
        if self.downsample < 1 {
            return fail("downsample must be at least 1".into());
        }
        Ok(())
    }

    pub fn opt_config(&self) -> OptConfig {
        OptConfig {
            learning_rate: self.learning_rate,
            decay: self.rms_decay,
            epsilon: self.rms_epsilon,
            anneal: self.anneal_lr,
            total_steps: self.total_steps,
        }
    }

    pub fn effective_checkpoint_interval(&self) -> u64 {
        if self.checkpoint_interval == 0 {
            (self.total_steps / 20).max(1)
        } else {
            self.checkpoint_interval
        }
    }

    pub fn net_shape(&self, env: &EnvConfig) -> NetShape {
        NetShape::new(
            observation_len(env.grid_width, env.grid_height, self.downsample),
            self.trunk.clone(),
            NUM_ACTIONS,
        )
    }
}

/// k-step returns, computed backwards from the bootstrap value.
///
/// `R ← bootstrap · (1 − T)`, then `R ← r_t + γR` for `t = k−1 … 0`.
pub fn compute_returns(rewards: &[f64], bootstrap: f64, terminal: bool, gamma: f64) -> Vec<f64> {
    let mut ret = if terminal { 0.0 } else { bootstrap };
    let mut out = vec![0.0; rewards.len()];
    for (t, &r) in rewards.iter().enumerate().rev() {
        ret = r + gamma * ret;
        out[t] = ret;
    }
    out
}

#[derive(Clone, Debug)]
pub struct SegmentStep<F> {
    /// Forward pass at the observation, under the parameters the segment was
    /// rolled out with.
    pub cache: ForwardCache<F>,
    pub action: usize,
    pub reward: f64,
}

#[derive(Clone, Debug)]
pub struct RolloutSegment<F> {
    pub steps: Vec<SegmentStep<F>>,
    /// Value of the state after the last step; ignored when `terminal`.
    pub bootstrap_value: f64,
    pub terminal: bool,
}

impl<F: Real> RolloutSegment<F> {
    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn returns(&self, gamma: f64) -> Vec<f64> {
        compute_returns(&self.rewards(), self.bootstrap_value, self.terminal, gamma)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SegmentDiagnostics {
    pub mean_advantage: f64,
    pub mean_entropy: f64,
    /// `−Σ log π(a|s) · A`.
    pub policy_loss: f64,
    /// `−β Σ H(π(s))`.
    pub entropy_loss: f64,
    /// `½ Σ (R − V)²`.
    pub value_loss: f64,
}

impl SegmentDiagnostics {
    pub fn total_loss(&self) -> f64 {
        self.policy_loss + self.entropy_loss + self.value_loss
    }
}

/// Summed gradient of the segment loss
/// `Σ_t −[log π(a_t|s_t) A_t + β H(π(s_t))] + ½ (R_t − V(s_t))²`
/// with the advantage `A_t = R_t − V(s_t)` held constant in the policy term.
pub fn segment_loss_grads<F: Real>(
    params: &NetParams<F>,
    segment: &RolloutSegment<F>,
    gamma: f64,
    beta: f64,
) -> Result<(Gradients<F>, SegmentDiagnostics)> {
    let mut grads = Gradients::zeros(&params.shape);
    let diag = accumulate_segment_grads(params, segment, gamma, beta, &mut grads)?;
    Ok((grads, diag))
}

/// Like [`segment_loss_grads`], but adds into `grads`, which the caller
/// zeroes. Rows of the first layer whose input is zero throughout the
/// segment are left untouched.
pub fn accumulate_segment_grads<F: Real>(
    params: &NetParams<F>,
    segment: &RolloutSegment<F>,
    gamma: f64,
    beta: f64,
    grads: &mut Gradients<F>,
) -> Result<SegmentDiagnostics> {
    if segment.steps.is_empty() {
        return Err(Error::TrainingFault("empty rollout segment".into()));
    }
    let returns = segment.returns(gamma);
    let mut diag = SegmentDiagnostics::default();
    let actions = params.shape.actions;
    let mut logit_seed = vec![F::zero(); actions];
    for (step, &ret) in segment.steps.iter().zip(&returns) {
        let cache = &step.cache;
        if step.action >= actions {
            return Err(Error::InvalidAction(step.action));
        }
        let value = cache.value.to_f64().unwrap_or(f64::NAN);
        let advantage = ret - value;
        let log_probs = log_softmax(&cache.logits);
        let h = entropy(&cache.policy).to_f64().unwrap_or(f64::NAN);

        for (j, seed) in logit_seed.iter_mut().enumerate() {
            let p = cache.policy[j].to_f64().unwrap_or(f64::NAN);
            let lp = log_probs[j].to_f64().unwrap_or(f64::NAN);
            let onehot = if j == step.action { 1.0 } else { 0.0 };
            // d/dz of −A log π(a) and of −βH respectively.
            *seed = F::of(advantage * (p - onehot) + beta * p * (lp + h));
        }
        params.backward_into(cache, &logit_seed, F::of(value - ret), grads)?;

        diag.mean_advantage += advantage;
        diag.mean_entropy += h;
        diag.policy_loss -= log_probs[step.action].to_f64().unwrap_or(f64::NAN) * advantage;
        diag.entropy_loss -= beta * h;
        diag.value_loss += 0.5 * advantage * advantage;
    }
    let k = segment.steps.len() as f64;
    diag.mean_advantage /= k;
    diag.mean_entropy /= k;
    if !diag.total_loss().is_finite() {
        return Err(Error::TrainingFault(format!("segment loss is {}", diag.total_loss())));
    }
    Ok(diag)
}

/// One shared tensor, viewed as rows of `row_len` entries. Only the first
/// layer's weights have more than one row.
struct SharedTensor {
    param: Vec<f32>,
    acc: Vec<f32>,
    row_len: usize,
    /// Per row: the update count its accumulator is current to, which is
    /// also the update that last changed its parameters.
    clock: Vec<u64>,
    updates: u64,
}

impl SharedTensor {
    fn new(param: &[f32], row_len: usize) -> Self {
        Self {
            param: param.to_vec(),
            acc: vec![0.0; param.len()],
            row_len,
            clock: vec![0; param.len() / row_len],
            updates: 0,
        }
    }

    /// Applies the decay of the updates a row skipped because its gradient
    /// was zero. Its parameters did not move during those updates.
    fn catch_up(&mut self, row: usize, decay: f64) {
        let missed = self.updates - self.clock[row];
        if missed > 0 {
            let factor = decay.powf(missed as f64) as f32;
            for a in &mut self.acc[row * self.row_len..(row + 1) * self.row_len] {
                *a *= factor;
            }
            self.clock[row] = self.updates;
        }
    }
}

/// A worker's copy of the shared parameters, refreshed row by row.
pub struct LocalParams {
    pub params: NetParams<f32>,
    clocks: Vec<Vec<u64>>,
}

/// Global parameters, optimizer state and step counter shared by workers.
///
/// RMSProp accumulators of first-layer rows that receive no gradient are
/// decayed lazily, so an update costs time in proportion to the inputs that
/// were active in the segment rather than to the input size.
pub struct SharedParams {
    shape: NetShape,
    input_offset: Vec<f32>,
    tensors: Vec<Mutex<SharedTensor>>,
    global_step: AtomicU64,
    opt: OptConfig,
}

impl SharedParams {
    pub fn new(params: NetParams<f32>, opt: OptConfig) -> Self {
        let first_outputs = params.layers[0].outputs;
        let tensors = params
            .tensors()
            .enumerate()
            .map(|(i, t)| {
                let row_len = if i == 0 { first_outputs } else { t.len().max(1) };
                Mutex::new(SharedTensor::new(t, row_len))
            })
            .collect();
        Self {
            shape: params.shape,
            input_offset: params.input_offset,
            tensors,
            global_step: AtomicU64::new(0),
            opt,
        }
    }

    pub fn shape(&self) -> &NetShape {
        &self.shape
    }

    fn lock(&self, i: usize) -> MutexGuard<'_, SharedTensor> {
        // A poisoned lock only means another worker panicked mid-copy; the
        // tensor itself is still a valid array of floats.
        self.tensors[i].lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn global_step(&self) -> u64 {
        self.global_step.load(Ordering::SeqCst)
    }

    /// Adds `k` to the global step counter, returning the new value.
    pub fn advance(&self, k: u64) -> u64 {
        self.global_step.fetch_add(k, Ordering::SeqCst) + k
    }

    pub fn local_copy(&self) -> LocalParams {
        let mut params = NetParams::zeros(&self.shape);
        params.input_offset.copy_from_slice(&self.input_offset);
        let clocks = (0..self.tensors.len())
            .map(|i| vec![u64::MAX; self.lock(i).clock.len()])
            .collect();
        let mut local = LocalParams { params, clocks };
        self.refresh(&mut local);
        local
    }

    /// Brings `local` up to date, copying only rows changed since its last
    /// refresh. Tensors are locked one at a time.
    pub fn refresh(&self, local: &mut LocalParams) {
        for (i, (t, clocks)) in local.params.tensors_mut().zip(&mut local.clocks).enumerate() {
            let guard = self.lock(i);
            let n = guard.row_len;
            for (row, (seen, &current)) in clocks.iter_mut().zip(&guard.clock).enumerate() {
                if *seen != current {
                    t[row * n..(row + 1) * n].copy_from_slice(&guard.param[row * n..(row + 1) * n]);
                    *seen = current;
                }
            }
        }
    }

    pub fn snapshot(&self) -> NetParams<f32> {
        self.local_copy().params
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut params = NetParams::zeros(&self.shape);
        params.input_offset.copy_from_slice(&self.input_offset);
        let mut accumulators = Vec::with_capacity(params.num_tensors());
        for (i, t) in params.tensors_mut().enumerate() {
            let mut guard = self.lock(i);
            for row in 0..guard.clock.len() {
                guard.catch_up(row, self.opt.decay);
            }
            t.copy_from_slice(&guard.param);
            accumulators.push(guard.acc.clone());
        }
        Checkpoint {
            params,
            accumulators,
            global_step: self.global_step(),
        }
    }

    /// RMSProp step at the learning rate for the current global step.
    pub fn apply(&self, grads: &Gradients<f32>) -> Result<()> {
        self.apply_in(grads, Rows::All)
    }

    /// [`apply`](Self::apply) for a gradient that is zero outside `rows`.
    pub fn apply_in(&self, grads: &Gradients<f32>, rows: Rows<'_>) -> Result<()> {
        if grads.shape != self.shape {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", self.shape),
                actual: format!("{:?}", grads.shape),
            });
        }
        let lr = self.opt.learning_rate_at(self.global_step());
        let (decay, eps) = (self.opt.decay, self.opt.epsilon);
        for (i, g) in grads.tensors().enumerate() {
            let mut guard = self.lock(i);
            let n = guard.row_len;
            let all: Vec<usize>;
            let touched: &[usize] = match rows {
                Rows::Only(idx) if i == 0 => idx,
                _ => {
                    all = (0..guard.clock.len()).collect();
                    &all
                }
            };
            for &row in touched {
                guard.catch_up(row, decay);
                let range = row * n..(row + 1) * n;
                let SharedTensor { param, acc, .. } = &mut *guard;
                rmsprop_tensor(&mut param[range.clone()], &mut acc[range.clone()], &g[range.clone()], lr, decay, eps);
                if param[range].iter().any(|v| !v.is_finite()) {
                    return Err(Error::TrainingFault(format!("tensor {i} became non-finite")));
                }
            }
            guard.updates += 1;
            for &row in touched {
                guard.clock[row] = guard.updates;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    /// Global step when the episode ended.
    pub step: u64,
    pub worker: usize,
    /// Raw game score of the episode.
    pub episode_reward: f64,
    pub episode_length: u64,
    pub regime: u8,
}

#[derive(Clone, Debug)]
pub struct TrainSettings {
    pub env: EnvConfig,
    pub trainer: TrainerConfig,
    pub regime: RegimeSpec,
    /// Label written to the training log.
    pub regime_id: u8,
    pub seed: u64,
}

/// Runs one worker until the shared step counter reaches `total_steps`.
/// Returns the number of steps this worker contributed.
pub fn worker_loop(
    worker_id: usize,
    shared: &SharedParams,
    settings: &TrainSettings,
    episodes: &mpsc::Sender<EpisodeLog>,
) -> Result<u64> {
    let cfg = &settings.trainer;
    let regime = &settings.regime;
    let mut rng = stream_rng(settings.seed, stream::TRAIN_ACTIONS | worker_id as u64);
    let env_seeds = derive_seed(settings.seed, stream::TRAIN_ENV | worker_id as u64);

    let mut episode = 0u64;
    let mut env = Breakout::new(settings.env.clone())?;
    let mut obs = Observation::new(&env.reset_with_seed(derive_seed(env_seeds, episode))?, cfg.downsample, regime)?;
    let (mut ep_score, mut ep_len) = (0u64, 0u64);

    let mut local = shared.local_copy();
    let mut grads = Gradients::zeros(shared.shape());
    let mut contributed = 0u64;
    let mut probs = [0.0f64; NUM_ACTIONS];

    while shared.global_step() < cfg.total_steps {
        shared.refresh(&mut local);
        let local = &local.params;
        let mut steps = Vec::with_capacity(cfg.t_max);
        let mut terminal = false;
        for _ in 0..cfg.t_max {
            let cache = local.forward(obs.as_slice())?;
            for (p, &q) in probs.iter_mut().zip(&cache.policy) {
                *p = f64::from(q);
            }
            let action = sample_categorical(&probs, &mut rng);
            let out = env.step(Action::from_index(action)?)?;
            ep_score += u64::from(out.raw_reward);
            ep_len += 1;
            steps.push(SegmentStep {
                cache,
                action,
                reward: shape_reward(f64::from(out.raw_reward), out.life_lost, regime),
            });
            if out.terminal {
                terminal = true;
                break;
            }
            obs.push_frame(&out.frame, regime)?;
        }
        let bootstrap_value = if terminal {
            0.0
        } else {
            f64::from(local.forward(obs.as_slice())?.value)
        };
        let k = steps.len() as u64;
        let segment = RolloutSegment {
            steps,
            bootstrap_value,
            terminal,
        };
        let inputs: Vec<&[f32]> = segment.steps.iter().map(|s| s.cache.input.as_slice()).collect();
        let rows = active_rows(&inputs);
        let rows = Rows::Only(&rows);
        accumulate_segment_grads(local, &segment, cfg.gamma, cfg.beta, &mut grads)?;
        clip_global_norm_in(&mut grads, rows, cfg.clip_norm)?;
        shared.apply_in(&grads, rows)?;
        grads.fill_zero_in(rows);
        let step = shared.advance(k);
        contributed += k;

        if terminal {
            // The receiver only disappears if training is being torn down.
            let _ = episodes.send(EpisodeLog {
                step,
                worker: worker_id,
                episode_reward: ep_score as f64,
                episode_length: ep_len,
                regime: settings.regime_id,
            });
            episode += 1;
            let first = env.reset_with_seed(derive_seed(env_seeds, episode))?;
            obs = Observation::new(&first, cfg.downsample, regime)?;
            ep_score = 0;
            ep_len = 0;
        }
    }
    Ok(contributed)
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub episodes: Vec<EpisodeLog>,
    pub worker_steps: Vec<u64>,
    /// Diagnostics of workers that stopped early.
    pub worker_errors: Vec<(usize, String)>,
    pub checkpoint_paths: Vec<PathBuf>,
}

impl TrainOutcome {
    pub fn params(&self) -> &NetParams<f32> {
        &self.checkpoint.params
    }
}

/// Trains one policy. With `out_dir`, periodic checkpoints
/// (`ckpt_<step>.mxp`), `final.mxp` and `train_log.csv` are written there.
pub fn train(settings: &TrainSettings, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    settings.env.validate()?;
    settings.trainer.validate()?;
    settings.regime.validate()?;
    let cfg = &settings.trainer;
    let shape = cfg.net_shape(&settings.env);
    let init = NetParams::<f32>::init(derive_seed(settings.seed, stream::INIT), &shape)?
        .with_input_offset(scenery(&settings.env, cfg.downsample, &settings.regime)?)?;
    let shared = SharedParams::new(init, cfg.opt_config());

    let interval = cfg.effective_checkpoint_interval();
    let mut next_checkpoint = interval;
    let mut checkpoint_paths = Vec::new();
    let mut episodes = Vec::new();
    let (tx, rx) = mpsc::channel();

    let results: Vec<Result<u64>> = std::thread::scope(|scope| -> Result<Vec<Result<u64>>> {
        let handles: Vec<_> = (0..cfg.workers)
            .map(|id| {
                let tx = tx.clone();
                let shared = &shared;
                scope.spawn(move || worker_loop(id, shared, settings, &tx))
            })
            .collect();
        drop(tx);

        loop {
            match rx.recv_timeout(Duration::from_millis(50)) {
                Ok(log) => episodes.push(log),
                Err(mpsc::RecvTimeoutError::Timeout) => {}
                Err(mpsc::RecvTimeoutError::Disconnected) => break,
            }
            if let Some(dir) = out_dir {
                while shared.global_step() >= next_checkpoint && next_checkpoint < cfg.total_steps {
                    let path = dir.join(format!("ckpt_{next_checkpoint:012}.mxp"));
                    shared.checkpoint().save(&path)?;
                    checkpoint_paths.push(path);
                    next_checkpoint += interval;
                }
            }
        }
        Ok(handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::TrainingFault("worker panicked".into())))
            })
            .collect())
    })?;

    let mut worker_steps = Vec::with_capacity(results.len());
    let mut worker_errors = Vec::new();
    for (id, r) in results.into_iter().enumerate() {
        match r {
            Ok(n) => worker_steps.push(n),
            Err(e) => {
                worker_steps.push(0);
                worker_errors.push((id, e.to_string()));
            }
        }
    }
    if worker_errors.len() == cfg.workers {
        return Err(Error::TrainingFault(format!("all workers failed: {}", worker_errors[0].1)));
    }

    episodes.sort_by_key(|e| (e.step, e.worker));
    let checkpoint = shared.checkpoint();
    if let Some(dir) = out_dir {
        let path = dir.join("final.mxp");
        checkpoint.save(&path)?;
        checkpoint_paths.push(path);
        write_train_log(&dir.join("train_log.csv"), &episodes)?;
    }
    Ok(TrainOutcome {
        checkpoint,
        episodes,
        worker_steps,
        worker_errors,
        checkpoint_paths,
    })
}

pub fn write_train_log(path: &Path, episodes: &[EpisodeLog]) -> Result<()> {
    write_csv(
        path,
        &TRAIN_LOG_HEADER,
        episodes.iter().map(|e| {
            [
                e.step.to_string(),
                e.worker.to_string(),
                e.episode_reward.to_string(),
                e.episode_length.to_string(),
                e.regime.to_string(),
            ]
        }),
    )
}
