//! Deterministic Breakout-style simulator.
//!
//! The playfield is an integer pixel grid. A row of bricks sits near the top,
//! the paddle moves along a fixed row near the bottom and the ball travels
//! one pixel per micro-step with velocity components in `{-2, -1, 1, 2}`.
//! Nothing here draws from a random number generator: the only source of
//! variation between episodes is [`EnvConfig::seed`], which is hashed to pick
//! the initial paddle position and the horizontal velocity of every serve.
//!
//! One call to [`GameState::step`] repeats the chosen action for
//! `frame_skip` physics ticks and sums the rewards. Losing a life is reported
//! through [`StepOutcome::life_lost`] and does not end the episode.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::mix64;

pub const NUM_ACTIONS: usize = 4;

/// Pixel intensities of the rendered frame. The classes are disjoint.
pub mod intensity {
    pub const BACKGROUND: u8 = 0;
    pub const BRICK: u8 = 142;
    pub const PADDLE: u8 = 200;
    pub const BALL: u8 = 255;
}

/// Rows between the paddle and the bottom edge of the grid.
const PADDLE_MARGIN: usize = 6;
const PADDLE_HEIGHT: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Action {
    Noop = 0,
    Left = 1,
    Right = 2,
    Fire = 3,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [Action::Noop, Action::Left, Action::Right, Action::Fire];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::ALL
            .get(index)
            .copied()
            .ok_or(Error::InvalidAction(index))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    pub grid_width: usize,
    pub grid_height: usize,
    pub paddle_width: usize,
    /// Pixels the paddle moves per tick.
    pub paddle_speed: usize,
    pub brick_rows: usize,
    pub brick_cols: usize,
    pub brick_height: usize,
    /// Row of the top edge of the brick wall.
    pub brick_top: usize,
    pub brick_value: u32,
    pub lives: u32,
    pub episode_max_steps: u64,
    pub frame_skip: u32,
    /// Vertical speed of the ball in pixels per tick (1 or 2).
    pub ball_speed: i32,
    /// Side of the rendered ball square in pixels. Collisions use its
    /// top-left pixel.
    pub ball_size: usize,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            grid_width: 84,
            grid_height: 84,
            paddle_width: 12,
            paddle_speed: 2,
            brick_rows: 6,
            brick_cols: 12,
            brick_height: 3,
            brick_top: 12,
            brick_value: 1,
            lives: 5,
            episode_max_steps: 10_000,
            frame_skip: 4,
            ball_speed: 1,
            ball_size: 1,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.lives < 1 {
            return fail("lives must be at least 1".into());
        }
        if self.frame_skip < 1 {
            return fail("frame_skip must be at least 1".into());
        }
        if self.episode_max_steps < 1 {
            return fail("episode_max_steps must be at least 1".into());
        }
        if self.grid_width < 8 || self.grid_height < 16 {
            return fail(format!(
                "grid {}x{} is too small (minimum 8x16)",
                self.grid_width, self.grid_height
            ));
        }
        if self.paddle_width < 3 || self.paddle_width >= self.grid_width {
            return fail(format!(
                "paddle_width {} must be in [3, grid_width)",
                self.paddle_width
            ));
        }
        if self.paddle_speed < 1 {
            return fail("paddle_speed must be at least 1".into());
        }
        if !(1..=2).contains(&self.ball_speed) {
            return fail(format!("ball_speed {} must be 1 or 2", self.ball_speed));
        }
        if !(1..=4).contains(&self.ball_size) {
            return fail(format!("ball_size {} must be in [1, 4]", self.ball_size));
        }
        if self.brick_rows < 1 || self.brick_cols < 1 || self.brick_height < 1 {
            return fail("brick_rows, brick_cols and brick_height must be at least 1".into());
        }
        if self.brick_cols > self.grid_width {
            return fail(format!(
                "brick_cols {} exceeds grid_width {}",
                self.brick_cols, self.grid_width
            ));
        }
        // Leave at least two free rows between the wall and the serve position.
        let wall_bottom = self.brick_top + self.brick_rows * self.brick_height;
        if wall_bottom + 2 > self.paddle_row() - 1 {
            return fail(format!(
                "brick wall (rows {}..{}) does not fit above the paddle row {}",
                self.brick_top,
                wall_bottom,
                self.paddle_row()
            ));
        }
        Ok(())
    }

    pub fn paddle_row(&self) -> usize {
        self.grid_height - PADDLE_MARGIN
    }

    pub fn brick_width(&self) -> usize {
        self.grid_width / self.brick_cols
    }

    /// Left edge of the (horizontally centred) brick wall.
    fn brick_left(&self) -> usize {
        (self.grid_width - self.brick_width() * self.brick_cols) / 2
    }

    /// The intact brick wall on an empty field.
    pub fn render_wall(&self) -> Frame {
        let mut frame = Frame::blank(self.grid_width, self.grid_height);
        self.draw_bricks(&mut frame, &vec![true; self.num_bricks()]);
        frame
    }

    fn draw_bricks(&self, frame: &mut Frame, alive: &[bool]) {
        let (bw, bh) = (self.brick_width(), self.brick_height);
        let left = self.brick_left();
        for (i, _) in alive.iter().enumerate().filter(|(_, &a)| a) {
            let (row, col) = (i / self.brick_cols, i % self.brick_cols);
            frame.fill_rect(left + col * bw, self.brick_top + row * bh, bw, bh, intensity::BRICK);
        }
    }

    pub fn num_bricks(&self) -> usize {
        self.brick_rows * self.brick_cols
    }

    /// Index of the brick covering pixel `(x, y)`, if any.
    fn brick_at(&self, x: i32, y: i32) -> Option<usize> {
        let (x, y) = (x as usize, y as usize);
        let left = self.brick_left();
        let width = self.brick_width();
        if y < self.brick_top || x < left {
            return None;
        }
        let (row, col) = ((y - self.brick_top) / self.brick_height, (x - left) / width);
        (row < self.brick_rows && col < self.brick_cols).then_some(row * self.brick_cols + col)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GameState {
    pub paddle_x: i32,
    pub ball_pos: (i32, i32),
    pub ball_vel: (i32, i32),
    /// Row-major, `true` while the brick is alive.
    pub bricks: Vec<bool>,
    pub lives_left: u32,
    pub step_count: u64,
    /// Bricks broken since reset, across wall refills.
    pub bricks_broken: u64,
    pub score: u64,
    pub ball_in_play: bool,
    /// Number of serves so far; keys the serve direction hash.
    pub serves: u32,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn blank(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![intensity::BACKGROUND; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn count(&self, value: u8) -> usize {
        self.pixels.iter().filter(|&&p| p == value).count()
    }

    fn fill_rect(&mut self, x0: usize, y0: usize, w: usize, h: usize, value: u8) {
        for y in y0..(y0 + h).min(self.height) {
            let row = y * self.width;
            for x in x0..(x0 + w).min(self.width) {
                self.pixels[row + x] = value;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub frame: Frame,
    pub raw_reward: u32,
    pub life_lost: bool,
    pub terminal: bool,
}

enum Tick {
    Continue,
    BallLost,
}

/// Velocity ladder for horizontal deflection; zero is never a valid component.
const DX_LADDER: [i32; 4] = [-2, -1, 1, 2];

fn deflect(dx: i32, shift: i32) -> i32 {
    let pos = DX_LADDER.iter().position(|&v| v == dx).unwrap_or(1) as i32;
    DX_LADDER[(pos + shift).clamp(0, 3) as usize]
}

impl GameState {
    pub fn reset(config: &EnvConfig) -> Result<Self> {
        config.validate()?;
        let span = (config.grid_width - config.paddle_width + 1) as u64;
        let paddle_x = (mix64(config.seed) % span) as i32;
        let mut state = Self {
            paddle_x,
            ball_pos: (0, 0),
            ball_vel: (0, 0),
            bricks: vec![true; config.num_bricks()],
            lives_left: config.lives,
            step_count: 0,
            bricks_broken: 0,
            score: 0,
            ball_in_play: false,
            serves: 0,
            seed: config.seed,
        };
        state.park_ball(config);
        Ok(state)
    }

    pub fn is_terminal(&self, config: &EnvConfig) -> bool {
        self.lives_left == 0 || self.step_count >= config.episode_max_steps
    }

    pub fn bricks_alive(&self) -> usize {
        self.bricks.iter().filter(|&&b| b).count()
    }

    /// Advances one agent step: `frame_skip` ticks under `action`.
    pub fn step(&mut self, action: Action, config: &EnvConfig) -> Result<StepOutcome> {
        if self.is_terminal(config) {
            return Err(Error::TerminalState);
        }
        let mut raw_reward = 0;
        let mut life_lost = false;
        for _ in 0..config.frame_skip {
            let (reward, lost) = self.tick(action, config);
            raw_reward += reward;
            life_lost |= lost;
            if self.lives_left == 0 {
                break;
            }
        }
        self.step_count += 1;
        Ok(StepOutcome {
            frame: self.render(config),
            raw_reward,
            life_lost,
            terminal: self.is_terminal(config),
        })
    }

    fn tick(&mut self, action: Action, config: &EnvConfig) -> (u32, bool) {
        let max_x = (config.grid_width - config.paddle_width) as i32;
        let speed = config.paddle_speed as i32;
        match action {
            Action::Left => self.paddle_x = (self.paddle_x - speed).max(0),
            Action::Right => self.paddle_x = (self.paddle_x + speed).min(max_x),
            Action::Fire if !self.ball_in_play => self.serve(config),
            _ => {}
        }
        if !self.ball_in_play {
            self.park_ball(config);
            return (0, false);
        }

        let mut reward = 0;
        let (x_moves, y_moves) = (self.ball_vel.0.abs(), self.ball_vel.1.abs());
        for i in 0..x_moves.max(y_moves) {
            if i < y_moves {
                match self.move_vertical(config, &mut reward) {
                    Tick::Continue => {}
                    Tick::BallLost => {
                        self.lives_left -= 1;
                        self.ball_in_play = false;
                        self.park_ball(config);
                        return (reward, true);
                    }
                }
            }
            if i < x_moves {
                self.move_horizontal(config, &mut reward);
            }
        }
        (reward, false)
    }

    fn serve(&mut self, config: &EnvConfig) {
        self.serves += 1;
        let h = mix64(self.seed ^ mix64(u64::from(self.serves)));
        self.ball_vel = (DX_LADDER[(h % 4) as usize], -config.ball_speed);
        self.ball_in_play = true;
    }

    fn park_ball(&mut self, config: &EnvConfig) {
        self.ball_pos = (
            self.paddle_x + (config.paddle_width / 2) as i32,
            config.paddle_row() as i32 - 1,
        );
    }

    fn move_vertical(&mut self, config: &EnvConfig, reward: &mut u32) -> Tick {
        let (x, y) = self.ball_pos;
        let sy = self.ball_vel.1.signum();
        let ny = y + sy;
        if ny < 0 {
            self.ball_vel.1 = -self.ball_vel.1;
            return Tick::Continue;
        }
        if ny >= config.grid_height as i32 {
            return Tick::BallLost;
        }
        let paddle_row = config.paddle_row() as i32;
        if sy > 0 && ny == paddle_row {
            let offset = x - self.paddle_x;
            let width = config.paddle_width as i32;
            if (0..width).contains(&offset) {
                let third = width / 3;
                let shift = if offset < third {
                    -1
                } else if offset >= width - third {
                    1
                } else {
                    0
                };
                self.ball_vel = (deflect(self.ball_vel.0, shift), -self.ball_vel.1);
                return Tick::Continue;
            }
        }
        if self.hit_brick(x, ny, config, reward) {
            self.ball_vel.1 = -self.ball_vel.1;
            return Tick::Continue;
        }
        self.ball_pos.1 = ny;
        Tick::Continue
    }

    fn move_horizontal(&mut self, config: &EnvConfig, reward: &mut u32) {
        let (x, y) = self.ball_pos;
        let nx = x + self.ball_vel.0.signum();
        if nx < 0 || nx >= config.grid_width as i32 {
            self.ball_vel.0 = -self.ball_vel.0;
            return;
        }
        if self.hit_brick(nx, y, config, reward) {
            self.ball_vel.0 = -self.ball_vel.0;
            return;
        }
        self.ball_pos.0 = nx;
    }

    fn hit_brick(&mut self, x: i32, y: i32, config: &EnvConfig, reward: &mut u32) -> bool {
        let Some(index) = config.brick_at(x, y) else {
            return false;
        };
        if !self.bricks[index] {
            return false;
        }
        self.bricks[index] = false;
        self.bricks_broken += 1;
        self.score += u64::from(config.brick_value);
        *reward += config.brick_value;
        if self.bricks.iter().all(|&b| !b) {
            self.bricks.fill(true);
        }
        true
    }

    pub fn render(&self, config: &EnvConfig) -> Frame {
        use intensity::*;
        let mut frame = Frame::blank(config.grid_width, config.grid_height);
        config.draw_bricks(&mut frame, &self.bricks);
        frame.fill_rect(
            self.paddle_x as usize,
            config.paddle_row(),
            config.paddle_width,
            PADDLE_HEIGHT,
            PADDLE,
        );
        let (bx, by) = self.ball_pos;
        frame.fill_rect(bx as usize, by as usize, config.ball_size, config.ball_size, BALL);
        frame
    }

    /// Stable 64-bit digest of the dynamical state.
    ///
    /// Covers every field except `step_count`: the clock advances on every
    /// step, so including it would make a repeated configuration impossible
    /// to observe.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(self.paddle_x.to_le_bytes());
        h.update(self.ball_pos.0.to_le_bytes());
        h.update(self.ball_pos.1.to_le_bytes());
        h.update(self.ball_vel.0.to_le_bytes());
        h.update(self.ball_vel.1.to_le_bytes());
        h.update((self.bricks.len() as u64).to_le_bytes());
        for chunk in self.bricks.chunks(8) {
            let byte = chunk
                .iter()
                .enumerate()
                .fold(0u8, |acc, (i, &b)| acc | (u8::from(b) << i));
            h.update([byte]);
        }
        h.update(self.lives_left.to_le_bytes());
        h.update(self.bricks_broken.to_le_bytes());
        h.update(self.score.to_le_bytes());
        h.update([u8::from(self.ball_in_play)]);
        h.update(self.serves.to_le_bytes());
        h.update(self.seed.to_le_bytes());
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

/// Convenience owner of a config and its evolving state.
#[derive(Clone, Debug)]
pub struct Breakout {
    pub config: EnvConfig,
    pub state: GameState,
}

impl Breakout {
    pub fn new(config: EnvConfig) -> Result<Self> {
        let state = GameState::reset(&config)?;
        Ok(Self { config, state })
    }

    pub fn reset_with_seed(&mut self, seed: u64) -> Result<Frame> {
        self.config.seed = seed;
        self.state = GameState::reset(&self.config)?;
        Ok(self.render())
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        self.state.step(action, &self.config)
    }

    pub fn render(&self) -> Frame {
        self.state.render(&self.config)
    }

    pub fn is_terminal(&self) -> bool {
        self.state.is_terminal(&self.config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn served(config: &EnvConfig) -> GameState {
        let mut s = GameState::reset(config).unwrap();
        s.step(Action::Fire, config).unwrap();
        s
    }

    #[test]
    fn reset_defaults() {
        let cfg = EnvConfig::default();
        let s = GameState::reset(&cfg).unwrap();
        assert_eq!(s.score, 0);
        assert_eq!(s.lives_left, 5);
        assert!(s.bricks.iter().all(|&b| b));
        assert!(!s.ball_in_play);
        assert_eq!(s.ball_pos.1, cfg.paddle_row() as i32 - 1);
    }

    #[test]
    fn reset_is_deterministic() {
        let cfg = EnvConfig {
            seed: 7,
            ..EnvConfig::default()
        };
        assert_eq!(GameState::reset(&cfg).unwrap(), GameState::reset(&cfg).unwrap());
    }

    #[test]
    fn reset_rejects_invalid() {
        for cfg in [
            EnvConfig { lives: 0, ..Default::default() },
            EnvConfig { frame_skip: 0, ..Default::default() },
            EnvConfig { episode_max_steps: 0, ..Default::default() },
            EnvConfig { paddle_width: 84, ..Default::default() },
            EnvConfig { brick_rows: 30, ..Default::default() },
            EnvConfig { ball_speed: 3, ..Default::default() },
        ] {
            assert!(matches!(GameState::reset(&cfg), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn paddle_clamps_at_left_wall() {
        let cfg = EnvConfig::default();
        let mut s = GameState::reset(&cfg).unwrap();
        s.paddle_x = 0;
        s.step(Action::Left, &cfg).unwrap();
        assert_eq!(s.paddle_x, 0);
        let max_x = (cfg.grid_width - cfg.paddle_width) as i32;
        s.paddle_x = max_x;
        s.step(Action::Right, &cfg).unwrap();
        assert_eq!(s.paddle_x, max_x);
    }

    #[test]
    fn breaking_a_brick_pays_brick_value() {
        let cfg = EnvConfig {
            frame_skip: 1,
            ..EnvConfig::default()
        };
        let mut s = served(&cfg);
        let wall_bottom = (cfg.brick_top + cfg.brick_rows * cfg.brick_height) as i32;
        s.ball_pos = (40, wall_bottom);
        s.ball_vel = (1, -1);
        let out = s.step(Action::Noop, &cfg).unwrap();
        assert_eq!(out.raw_reward, 1);
        assert_eq!(s.bricks_alive(), cfg.num_bricks() - 1);
        let idx = config_brick(&cfg, 40, wall_bottom - 1);
        assert!(!s.bricks[idx]);
        assert_eq!(s.ball_vel.1, 1);
    }

    fn config_brick(cfg: &EnvConfig, x: i32, y: i32) -> usize {
        cfg.brick_at(x, y).unwrap()
    }

    #[test]
    fn missing_the_ball_costs_a_life_but_not_the_episode() {
        let cfg = EnvConfig::default();
        let mut s = served(&cfg);
        s.paddle_x = 0;
        s.ball_pos = (80, cfg.grid_height as i32 - 2);
        s.ball_vel = (1, 1);
        let out = s.step(Action::Noop, &cfg).unwrap();
        assert!(out.life_lost);
        assert!(!out.terminal);
        assert_eq!(s.lives_left, 4);
        assert!(!s.ball_in_play);
    }

    #[test]
    fn paddle_zones_deflect() {
        assert_eq!(deflect(1, -1), -1);
        assert_eq!(deflect(-2, -1), -2);
        assert_eq!(deflect(-1, 1), 1);
        assert_eq!(deflect(2, 1), 2);
        assert_eq!(deflect(1, 0), 1);
    }

    #[test]
    fn stepping_terminal_is_rejected() {
        let cfg = EnvConfig {
            episode_max_steps: 1,
            ..EnvConfig::default()
        };
        let mut s = GameState::reset(&cfg).unwrap();
        assert!(s.step(Action::Noop, &cfg).unwrap().terminal);
        assert!(matches!(s.step(Action::Noop, &cfg), Err(Error::TerminalState)));
    }

    #[test]
    fn full_wall_pixel_count() {
        let cfg = EnvConfig::default();
        let f = GameState::reset(&cfg).unwrap().render(&cfg);
        let area = cfg.brick_width() * cfg.brick_height;
        assert_eq!(f.count(intensity::BRICK), cfg.brick_rows * cfg.brick_cols * area);
        assert_eq!(f.count(intensity::PADDLE), cfg.paddle_width * PADDLE_HEIGHT);
        assert_eq!(f.count(intensity::BALL), 1);
    }

    #[test]
    fn breaking_one_brick_changes_only_its_block() {
        let cfg = EnvConfig::default();
        let s = GameState::reset(&cfg).unwrap();
        let before = s.render(&cfg);
        let mut broken = s.clone();
        broken.bricks[13] = false;
        let after = broken.render(&cfg);
        let (bw, bh) = (cfg.brick_width(), cfg.brick_height);
        let (x0, y0) = (cfg.brick_left() + bw, cfg.brick_top + bh);
        for y in 0..cfg.grid_height {
            for x in 0..cfg.grid_width {
                let inside = (x0..x0 + bw).contains(&x) && (y0..y0 + bh).contains(&y);
                assert_eq!(before.get(x, y) != after.get(x, y), inside, "pixel ({x},{y})");
            }
        }
    }

    #[test]
    fn fingerprint_ignores_clock_only() {
        let cfg = EnvConfig::default();
        let s = GameState::reset(&cfg).unwrap();
        let mut t = s.clone();
        t.step_count += 10;
        assert_eq!(s.fingerprint(), t.fingerprint());
        t.paddle_x += 1;
        assert_ne!(s.fingerprint(), t.fingerprint());
    }
}
