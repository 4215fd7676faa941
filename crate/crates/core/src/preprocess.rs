//! Frame preprocessing and reward shaping for the two training regimes.
//!
//! Regime 1 feeds the network the full rendered scene. Regime 2 blackens the
//! immutable objects (the brick wall) so the policy only sees the paddle and
//! the ball, and charges a penalty for every life lost.

use crate::env::{intensity, EnvConfig, Frame};
use crate::error::{Error, Result};

/// Frames in one observation.
pub const HISTORY: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegimeSpec {
    pub mask_immutable: bool,
    /// Added to the shaped reward on every lost life; never positive.
    pub life_loss_penalty: f64,
}

impl RegimeSpec {
    /// Regime 1: raw frames, no life penalty.
    pub const FULL_STATE: RegimeSpec = RegimeSpec {
        mask_immutable: false,
        life_loss_penalty: 0.0,
    };

    /// Regime 2: bricks masked, -1 per life lost.
    pub const LIFE_SAFEGUARD: RegimeSpec = RegimeSpec {
        mask_immutable: true,
        life_loss_penalty: -1.0,
    };

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            1 => Ok(Self::FULL_STATE),
            2 => Ok(Self::LIFE_SAFEGUARD),
            other => Err(Error::InvalidConfig(format!("regime must be 1 or 2, got {other}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.life_loss_penalty <= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "life_loss_penalty must be <= 0, got {}",
                self.life_loss_penalty
            )));
        }
        Ok(())
    }
}

/// Blackens every brick-class pixel; paddle and ball are left untouched.
pub fn mask_immutable(frame: &Frame) -> Frame {
    let mut out = frame.clone();
    for p in out.pixels.iter_mut().filter(|p| **p == intensity::BRICK) {
        *p = intensity::BACKGROUND;
    }
    out
}

pub fn shape_reward(raw_reward: f64, life_lost: bool, regime: &RegimeSpec) -> f64 {
    let penalty = if life_lost { regime.life_loss_penalty } else { 0.0 };
    raw_reward.clamp(0.0, 1.0) + penalty
}

/// Area-mean downsample by `factor` in each direction, scaled to `[0, 1]`.
pub fn downsample(frame: &Frame, factor: usize, out: &mut [f32]) {
    let (ow, oh) = (frame.width / factor, frame.height / factor);
    debug_assert_eq!(out.len(), ow * oh);
    let norm = 1.0 / (255.0 * (factor * factor) as f32);
    for oy in 0..oh {
        for ox in 0..ow {
            let mut sum = 0u32;
            for dy in 0..factor {
                let row = (oy * factor + dy) * frame.width + ox * factor;
                sum += frame.pixels[row..row + factor].iter().map(|&p| u32::from(p)).sum::<u32>();
            }
            out[oy * ow + ox] = sum as f32 * norm;
        }
    }
}

/// A stack of the last [`HISTORY`] preprocessed frames, oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    data: Vec<f32>,
    frame_width: usize,
    frame_height: usize,
    factor: usize,
}

impl Observation {
    /// Starts an episode: every slot holds the first frame.
    pub fn new(first: &Frame, factor: usize, regime: &RegimeSpec) -> Result<Self> {
        if factor == 0 || first.width % factor != 0 || first.height % factor != 0 {
            return Err(Error::InvalidConfig(format!(
                "downsample factor {factor} does not divide {}x{}",
                first.width, first.height
            )));
        }
        let plane = (first.width / factor) * (first.height / factor);
        let mut obs = Self {
            data: vec![0.0; HISTORY * plane],
            frame_width: first.width,
            frame_height: first.height,
            factor,
        };
        let processed = obs.process(first, regime);
        for slot in obs.data.chunks_mut(plane) {
            slot.copy_from_slice(&processed);
        }
        Ok(obs)
    }

    pub fn push_frame(&mut self, frame: &Frame, regime: &RegimeSpec) -> Result<()> {
        if frame.width != self.frame_width || frame.height != self.frame_height {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", self.frame_width, self.frame_height),
                actual: format!("{}x{}", frame.width, frame.height),
            });
        }
        let processed = self.process(frame, regime);
        let plane = processed.len();
        self.data.copy_within(plane.., 0);
        let last = self.data.len() - plane;
        self.data[last..].copy_from_slice(&processed);
        Ok(())
    }

    fn process(&self, frame: &Frame, regime: &RegimeSpec) -> Vec<f32> {
        let mut out = vec![0.0; self.plane_len()];
        if regime.mask_immutable {
            downsample(&mask_immutable(frame), self.factor, &mut out);
        } else {
            downsample(frame, self.factor, &mut out);
        }
        out
    }

    pub fn plane_len(&self) -> usize {
        (self.frame_width / self.factor) * (self.frame_height / self.factor)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (
            HISTORY,
            self.frame_height / self.factor,
            self.frame_width / self.factor,
        )
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn slot(&self, i: usize) -> &[f32] {
        let plane = self.plane_len();
        &self.data[i * plane..(i + 1) * plane]
    }
}

/// Observation of the intact wall alone under `regime`: the static part of
/// every regime-1 input, and all zeros once bricks are masked.
pub fn scenery(config: &EnvConfig, factor: usize, regime: &RegimeSpec) -> Result<Vec<f32>> {
    Ok(Observation::new(&config.render_wall(), factor, regime)?.data)
}

/// Network input size for a grid and downsample factor.
pub fn observation_len(grid_width: usize, grid_height: usize, factor: usize) -> usize {
    HISTORY * (grid_width / factor) * (grid_height / factor)
}
