use std::collections::HashSet;

use mixstrat::env::{EnvConfig, GameState};

#[test]
fn reset_digest_is_stable() {
    let cfg = EnvConfig::default();
    let s = GameState::reset(&cfg).unwrap();
    assert_eq!(s.fingerprint(), 0x40f5_3bc5_a4ce_0bfd);
}

#[test]
fn a_million_distinct_states_have_distinct_digests() {
    let cfg = EnvConfig::default();
    let base = GameState::reset(&cfg).unwrap();
    let mut seen = HashSet::with_capacity(1 << 20);
    let mut count = 0usize;
    for paddle_x in 0..=72 {
        for bx in 0..84 {
            for by in 0..84 {
                for dx in [-1, 2] {
                    let mut s = base.clone();
                    s.paddle_x = paddle_x;
                    s.ball_pos = (bx, by);
                    s.ball_vel = (dx, -1);
                    s.ball_in_play = true;
                    seen.insert(s.fingerprint());
                    count += 1;
                }
            }
        }
    }
    assert!(count > 1_000_000);
    assert_eq!(seen.len(), count);
}

#[test]
fn step_count_does_not_enter_the_digest() {
    let cfg = EnvConfig::default();
    let s = GameState::reset(&cfg).unwrap();
    let mut later = s.clone();
    later.step_count += 17;
    assert_eq!(s.fingerprint(), later.fingerprint());
    let mut other = s.clone();
    other.bricks[5] = false;
    assert_ne!(s.fingerprint(), other.fingerprint());
}
