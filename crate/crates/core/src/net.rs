//! Actor-critic network with hand-written backpropagation.
//!
//! A dense ReLU trunk feeds two heads: a softmax policy over the actions and
//! a scalar state value. Weights are stored input-major (`w[i * outputs + j]`
//! connects input `i` to output `j`) so that a forward pass is a sum of
//! weight rows scaled by the non-zero inputs; game frames are mostly
//! background, which makes the first layer cheap.
//!
//! Everything is generic over [`Real`] so the same code runs in `f32` for
//! training and in `f64` for finite-difference checks.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub trait Real:
    Float + Default + AddAssign + SubAssign + MulAssign + Sum + Send + Sync + Debug + 'static
{
    fn of(v: f64) -> Self;
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetShape {
    pub input: usize,
    pub trunk: Vec<usize>,
    pub actions: usize,
}

impl NetShape {
    pub fn new(input: usize, trunk: Vec<usize>, actions: usize) -> Self {
        Self {
            input,
            trunk,
            actions,
        }
    }

    /// `(inputs, outputs)` of every layer: trunk, then policy head, then value head.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.trunk.len() + 2);
        let mut prev = self.input;
        for &width in &self.trunk {
            dims.push((prev, width));
            prev = width;
        }
        dims.push((prev, self.actions));
        dims.push((prev, 1));
        dims
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.actions < 1 || self.trunk.contains(&0) {
            return Err(Error::InvalidConfig(format!("degenerate network shape {self:?}")));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense<F> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Real> Dense<F> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![F::zero(); inputs * outputs],
            bias: vec![F::zero(); outputs],
        }
    }

    fn row(&self, i: usize) -> &[F] {
        &self.weights[i * self.outputs..(i + 1) * self.outputs]
    }

    /// `out = bias + Σ_i input[i] · row(i)`, skipping zero inputs.
    fn apply(&self, input: &[F], out: &mut Vec<F>) {
        out.clear();
        out.extend_from_slice(&self.bias);
        for (i, &x) in input.iter().enumerate() {
            if x != F::zero() {
                axpy(x, self.row(i), out);
            }
        }
    }

    /// Accumulates `dW += input ⊗ upstream`, `db += upstream`.
    fn accumulate_grad(&mut self, input: &[F], upstream: &[F]) {
        for (b, &g) in self.bias.iter_mut().zip(upstream) {
            *b += g;
        }
        let n = self.outputs;
        for (i, &x) in input.iter().enumerate() {
            if x != F::zero() {
                axpy(x, upstream, &mut self.weights[i * n..(i + 1) * n]);
            }
        }
    }
}

#[inline]
fn axpy<F: Real>(a: F, x: &[F], y: &mut [F]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}

/// All weights of one actor-critic network.
///
/// Layer order is the trunk, the policy head, then the value head. The same
/// container with zeroed contents serves as [`Gradients`].
#[derive(Clone, Debug, PartialEq)]
pub struct NetParams<F> {
    pub shape: NetShape,
    pub layers: Vec<Dense<F>>,
    /// Subtracted from every input before the first layer. Fixed, not
    /// trained; typically the observation of the static scenery, so that
    /// the first layer only sees what moves or changes.
    pub input_offset: Vec<F>,
}

pub type Gradients<F> = NetParams<F>;

/// Which rows of the first layer's weights a gradient may touch. A row is
/// touched only by passes in which its input was non-zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rows<'a> {
    All,
    /// Ascending, distinct input indices.
    Only(&'a [usize]),
}

/// Input indices that are non-zero in at least one of `inputs`, ascending.
pub fn active_rows<F: Real>(inputs: &[&[F]]) -> Vec<usize> {
    let n = inputs.first().map_or(0, |x| x.len());
    (0..n)
        .filter(|&i| inputs.iter().any(|x| x[i] != F::zero()))
        .collect()
}

/// Activations retained by [`NetParams::forward`] for the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardCache<F> {
    /// First-layer input, after the offset was subtracted.
    pub input: Vec<F>,
    /// Post-ReLU output of each trunk layer.
    pub hidden: Vec<Vec<F>>,
    pub logits: Vec<F>,
    pub policy: Vec<F>,
    pub value: F,
}

impl<F: Real> NetParams<F> {
    pub fn zeros(shape: &NetShape) -> Self {
        let layers = shape
            .layer_dims()
            .into_iter()
            .map(|(i, o)| Dense::zeros(i, o))
            .collect();
        Self {
            shape: shape.clone(),
            layers,
            input_offset: vec![F::zero(); shape.input],
        }
    }

    pub fn with_input_offset(mut self, offset: Vec<F>) -> Result<Self> {
        if offset.len() != self.shape.input {
            return Err(Error::ShapeMismatch {
                expected: format!("offset of length {}", self.shape.input),
                actual: format!("length {}", offset.len()),
            });
        }
        self.input_offset = offset;
        Ok(self)
    }

    /// Fan-in scaled uniform weights in `±√(6/fan_in)`, zero biases.
    pub fn init(seed: u64, shape: &NetShape) -> Result<Self> {
        shape.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(shape);
        for layer in &mut params.layers {
            let bound = (6.0 / layer.inputs as f64).sqrt();
            for w in &mut layer.weights {
                *w = F::of(rng.gen_range(-bound..=bound));
            }
        }
        Ok(params)
    }

    pub fn trunk_depth(&self) -> usize {
        self.layers.len() - 2
    }

    fn policy_head(&self) -> &Dense<F> {
        &self.layers[self.layers.len() - 2]
    }

    fn value_head(&self) -> &Dense<F> {
        &self.layers[self.layers.len() - 1]
    }

    /// Flat tensors in declaration order: `w0, b0, w1, b1, ...`.
    pub fn tensors(&self) -> impl Iterator<Item = &[F]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Vec<F>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights, &mut l.bias])
    }

    pub fn num_tensors(&self) -> usize {
        self.layers.len() * 2
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Tensor slices that can be non-zero under `rows`: whole tensors, except
    /// that the first layer's weights are restricted to the listed rows.
    fn slices_in(&self, rows: Rows<'_>) -> Vec<&[F]> {
        let mut out = Vec::with_capacity(self.num_tensors());
        for (l, layer) in self.layers.iter().enumerate() {
            match rows {
                Rows::Only(idx) if l == 0 => out.extend(idx.iter().map(|&i| layer.row(i))),
                _ => out.push(layer.weights.as_slice()),
            }
            out.push(layer.bias.as_slice());
        }
        out
    }

    fn slices_in_mut(&mut self, rows: Rows<'_>) -> Vec<&mut [F]> {
        let mut out = Vec::with_capacity(self.num_tensors());
        for (l, layer) in self.layers.iter_mut().enumerate() {
            match rows {
                Rows::Only(idx) if l == 0 => {
                    let mut wanted = idx.iter().peekable();
                    for (i, row) in layer.weights.chunks_mut(layer.outputs).enumerate() {
                        if wanted.peek() == Some(&&i) {
                            wanted.next();
                            out.push(row);
                        }
                    }
                }
                _ => out.push(layer.weights.as_mut_slice()),
            }
            out.push(layer.bias.as_mut_slice());
        }
        out
    }

    pub fn global_norm(&self) -> f64 {
        self.global_norm_in(Rows::All)
    }

    /// L2 norm over the entries selected by `rows`.
    pub fn global_norm_in(&self, rows: Rows<'_>) -> f64 {
        self.slices_in(rows)
            .into_iter()
            .flat_map(|t| t.iter())
            .map(|v| {
                let v = v.to_f64().unwrap_or(f64::NAN);
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: F) {
        self.scale_in(Rows::All, factor);
    }

    pub fn scale_in(&mut self, rows: Rows<'_>, factor: F) {
        for t in self.slices_in_mut(rows) {
            for v in t.iter_mut() {
                *v *= factor;
            }
        }
    }

    pub fn fill_zero(&mut self) {
        self.fill_zero_in(Rows::All);
    }

    pub fn fill_zero_in(&mut self, rows: Rows<'_>) {
        for t in self.slices_in_mut(rows) {
            t.fill(F::zero());
        }
    }

    pub fn forward(&self, input: &[F]) -> Result<ForwardCache<F>> {
        if input.len() != self.shape.input {
            return Err(Error::ShapeMismatch {
                expected: format!("input of length {}", self.shape.input),
                actual: format!("length {}", input.len()),
            });
        }
        let input: Vec<F> = input.iter().zip(&self.input_offset).map(|(&x, &c)| x - c).collect();
        let mut hidden: Vec<Vec<F>> = Vec::with_capacity(self.trunk_depth());
        for (l, layer) in self.layers[..self.trunk_depth()].iter().enumerate() {
            let prev: &[F] = if l == 0 { &input } else { &hidden[l - 1] };
            let mut out = Vec::with_capacity(layer.outputs);
            layer.apply(prev, &mut out);
            for v in &mut out {
                *v = v.max(F::zero());
            }
            hidden.push(out);
        }
        let features: &[F] = hidden.last().map_or(&input, |h| h.as_slice());
        let mut logits = Vec::with_capacity(self.shape.actions);
        self.policy_head().apply(features, &mut logits);
        let mut value = Vec::with_capacity(1);
        self.value_head().apply(features, &mut value);
        let policy = softmax(&logits);
        Ok(ForwardCache {
            input,
            hidden,
            logits,
            policy,
            value: value[0],
        })
    }

    fn check_cache(&self, cache: &ForwardCache<F>) -> Result<()> {
        let dims = self.shape.layer_dims();
        let consistent = cache.input.len() == self.shape.input
            && cache.hidden.len() == self.trunk_depth()
            && cache
                .hidden
                .iter()
                .zip(&dims)
                .all(|(h, &(_, o))| h.len() == o)
            && cache.logits.len() == self.shape.actions;
        if consistent {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                expected: format!("cache for {:?}", self.shape),
                actual: format!(
                    "cache with input {} and hidden {:?}",
                    cache.input.len(),
                    cache.hidden.iter().map(Vec::len).collect::<Vec<_>>()
                ),
            })
        }
    }

    /// Gradients of a scalar loss given its derivatives with respect to the
    /// policy logits and the value output.
    pub fn backward(
        &self,
        cache: &ForwardCache<F>,
        logit_seed: &[F],
        value_seed: F,
    ) -> Result<Gradients<F>> {
        let mut grads = Gradients::zeros(&self.shape);
        self.backward_into(cache, logit_seed, value_seed, &mut grads)?;
        Ok(grads)
    }

    /// Like [`backward`](Self::backward) but adds into `grads`.
    pub fn backward_into(
        &self,
        cache: &ForwardCache<F>,
        logit_seed: &[F],
        value_seed: F,
        grads: &mut Gradients<F>,
    ) -> Result<()> {
        self.check_cache(cache)?;
        if logit_seed.len() != self.shape.actions || grads.shape != self.shape {
            return Err(Error::ShapeMismatch {
                expected: format!("{} logit seeds and matching gradients", self.shape.actions),
                actual: format!("{} seeds", logit_seed.len()),
            });
        }
        let depth = self.trunk_depth();
        let features: &[F] = cache.hidden.last().map_or(&cache.input, |h| h.as_slice());

        grads.layers[depth].accumulate_grad(features, logit_seed);
        grads.layers[depth + 1].accumulate_grad(features, &[value_seed]);
        if depth == 0 {
            return Ok(());
        }

        let (policy, value) = (self.policy_head(), self.value_head());
        let mut upstream: Vec<F> = (0..features.len())
            .map(|i| dot(policy.row(i), logit_seed) + value.weights[i] * value_seed)
            .collect();
        for l in (0..depth).rev() {
            for (g, &h) in upstream.iter_mut().zip(&cache.hidden[l]) {
                if h <= F::zero() {
                    *g = F::zero();
                }
            }
            let input: &[F] = if l == 0 { &cache.input } else { &cache.hidden[l - 1] };
            grads.layers[l].accumulate_grad(input, &upstream);
            if l > 0 {
                let layer = &self.layers[l];
                upstream = (0..layer.inputs).map(|i| dot(layer.row(i), &upstream)).collect();
            }
        }
        Ok(())
    }
}

pub fn softmax<F: Real>(logits: &[F]) -> Vec<F> {
    let max = logits.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
    let exps: Vec<F> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: F = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_softmax<F: Real>(logits: &[F]) -> Vec<F> {
    let max = logits.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
    let log_total = logits.iter().map(|&v| (v - max).exp()).sum::<F>().ln() + max;
    logits.iter().map(|&v| v - log_total).collect()
}

/// Shannon entropy in nats, with `0 · ln 0 = 0`.
pub fn entropy<F: Real>(policy: &[F]) -> F {
    -policy
        .iter()
        .filter(|&&p| p > F::zero())
        .map(|&p| p * p.ln())
        .sum::<F>()
}

/// Rescales `grads` so that its global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<F: Real>(grads: &mut Gradients<F>, max_norm: f64) -> Result<f64> {
    clip_global_norm_in(grads, Rows::All, max_norm)
}

/// [`clip_global_norm`] for a gradient that is zero outside `rows`.
pub fn clip_global_norm_in<F: Real>(grads: &mut Gradients<F>, rows: Rows<'_>, max_norm: f64) -> Result<f64> {
    let norm = grads.global_norm_in(rows);
    if !norm.is_finite() {
        return Err(Error::TrainingFault(format!("gradient norm is {norm}")));
    }
    if norm > max_norm {
        grads.scale_in(rows, F::of(max_norm / norm));
    }
    Ok(norm)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    pub anneal: bool,
    pub total_steps: u64,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.004,
            decay: 0.99,
            epsilon: 1e-6,
            anneal: true,
            total_steps: 2_000_000,
        }
    }
}

impl OptConfig {
    /// Linearly annealed to zero at `total_steps`.
    pub fn learning_rate_at(&self, step: u64) -> f64 {
        if !self.anneal {
            return self.learning_rate;
        }
        let remaining = 1.0 - step as f64 / self.total_steps.max(1) as f64;
        self.learning_rate * remaining.max(0.0)
    }
}

/// One RMSProp update of a single tensor.
pub fn rmsprop_tensor<F: Real>(
    param: &mut [F],
    acc: &mut [F],
    grad: &[F],
    lr: f64,
    decay: f64,
    epsilon: f64,
) {
    let (lr, d, one_minus_d, eps) = (F::of(lr), F::of(decay), F::of(1.0 - decay), F::of(epsilon));
    for ((p, a), &g) in param.iter_mut().zip(acc.iter_mut()).zip(grad) {
        *a = d * *a + one_minus_d * g * g;
        *p -= lr * g / (*a + eps).sqrt();
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptState<F> {
    pub config: OptConfig,
    /// Running mean of squared gradients, one buffer per tensor.
    pub accumulators: Vec<Vec<F>>,
}

impl<F: Real> OptState<F> {
    pub fn new(config: OptConfig, shape: &NetShape) -> Self {
        let accumulators = NetParams::<F>::zeros(shape)
            .tensors()
            .map(|t| t.to_vec())
            .collect();
        Self {
            config,
            accumulators,
        }
    }

    pub fn apply(&mut self, params: &mut NetParams<F>, grads: &Gradients<F>, step: u64) -> Result<()> {
        if params.shape != grads.shape || self.accumulators.len() != params.num_tensors() {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", params.shape),
                actual: format!("{:?}", grads.shape),
            });
        }
        let lr = self.config.learning_rate_at(step);
        for ((p, a), g) in params
            .tensors_mut()
            .zip(self.accumulators.iter_mut())
            .zip(grads.tensors())
        {
            rmsprop_tensor(p, a, g, lr, self.config.decay, self.config.epsilon);
        }
        Ok(())
    }
}
