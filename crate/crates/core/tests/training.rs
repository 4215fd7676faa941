use mixstrat::a3c::{train, TrainSettings, TrainerConfig};
use mixstrat::env::EnvConfig;
use mixstrat::preprocess::RegimeSpec;

fn settings(workers: usize, total_steps: u64, regime: RegimeSpec) -> TrainSettings {
    TrainSettings {
        env: EnvConfig { episode_max_steps: 200, ..EnvConfig::default() },
        trainer: TrainerConfig { workers, total_steps, trunk: vec![16, 8], ..TrainerConfig::default() },
        regime,
        regime_id: if regime.mask_immutable { 2 } else { 1 },
        seed: 11,
    }
}

#[test]
fn worker_steps_add_up_to_the_global_counter() {
    let s = settings(4, 3_000, RegimeSpec::FULL_STATE);
    let out = train(&s, None).unwrap();
    assert!(out.worker_errors.is_empty());
    let total: u64 = out.worker_steps.iter().sum();
    let step = out.checkpoint.global_step;
    assert_eq!(total, step);
    let slack = (s.trainer.workers * s.trainer.t_max) as u64;
    assert!((3_000..=3_000 + slack).contains(&step), "global step {step}");
    assert!(out.episodes.windows(2).all(|w| w[0].step <= w[1].step));
    assert!(out.episodes.iter().all(|e| e.episode_length <= 200 && e.regime == 1));
}

#[test]
fn single_worker_runs_are_bit_identical() {
    let s = settings(1, 1_500, RegimeSpec::LIFE_SAFEGUARD);
    let a = train(&s, None).unwrap();
    let b = train(&s, None).unwrap();
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    assert_eq!(a.episodes, b.episodes);
    let other = train(&TrainSettings { seed: 12, ..s }, None).unwrap();
    assert_ne!(a.checkpoint.to_bytes(), other.checkpoint.to_bytes());
}

#[test]
fn checkpoints_and_log_land_in_the_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let s = TrainSettings {
        trainer: TrainerConfig { checkpoint_interval: 500, ..settings(2, 1_200, RegimeSpec::FULL_STATE).trainer },
        ..settings(2, 1_200, RegimeSpec::FULL_STATE)
    };
    let out = train(&s, Some(dir.path())).unwrap();
    let names: Vec<String> = out
        .checkpoint_paths
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, ["ckpt_000000000500.mxp", "ckpt_000000001000.mxp", "final.mxp"]);
    assert!(dir.path().join("train_log.csv").is_file());
    let last = mixstrat::checkpoint::Checkpoint::load(&dir.path().join("final.mxp")).unwrap();
    assert_eq!(last, out.checkpoint);
}
