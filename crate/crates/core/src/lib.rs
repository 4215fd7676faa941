//! Mixed-strategy deep reinforcement learning on a deterministic
//! Breakout-style game.
//!
//! The crate trains actor-critic policies with asynchronous workers under
//! two observation/reward regimes, blends them with a generalized ε-greedy
//! rule and measures how the blend weight trades score against episode
//! length and looping behaviour.
//!
//! | module | contents |
//! |---|---|
//! | [`env`] | simulator, rendering, state fingerprints |
//! | [`preprocess`] | frame stacks, brick masking, reward shaping |
//! | [`net`] | dense actor-critic, backprop, clipping, RMSProp |
//! | [`a3c`] | returns, segment loss, shared parameters, workers |
//! | [`mixture`] | two- and N-strategy mixtures, mixed policies |
//! | [`eval`] | rollouts, cycle detection, statistics, α sweeps |
//! | [`config`], [`commands`], [`checkpoint`] | CLI plumbing and file formats |
//!
//! ```
//! use mixstrat::mixture::mix_two;
//!
//! let greedy_full = [1.0, 0.0, 0.0, 0.0];
//! let greedy_safe = [0.0, 1.0, 0.0, 0.0];
//! let mixed = mix_two(&greedy_full, &greedy_safe, 0.125, 0.01).unwrap();
//! assert!((mixed.iter().sum::<f64>() - 1.0).abs() < 1e-12);
//! assert!(mixed.iter().all(|&p| p >= 0.01 / 4.0));
//! ```

pub mod a3c;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod env;
pub mod error;
pub mod eval;
pub mod io;
pub mod mixture;
pub mod net;
pub mod preprocess;
pub mod rng;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/simulator.md")]
    mod simulator {}
    #[doc = include_str!("../../../book/src/observations.md")]
    mod observations {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/mixtures.md")]
    mod mixtures {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
