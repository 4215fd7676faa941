//! The operations behind the `mixstrat` subcommands.
//!
//! Each command resolves its inputs before creating any output, so a failed
//! run (missing checkpoint, bad mixture file) leaves the output directory
//! untouched. Every file is written atomically.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::a3c::{train, TrainOutcome, TrainSettings};
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{aggregate, rollout, sweep_alpha, write_episodes_csv, write_stats_csv, SweepRow, SweepSettings};
use crate::io::{write_atomic, write_csv};
use crate::mixture::{Component, MixedPolicy, MixtureSpec};

pub const RESOLVED_CONFIG: &str = "resolved.conf";
pub const EXPORT_HEADER: [&str; 5] = ["source", "x_name", "x", "metric", "value"];

fn prepare_out_dir(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    write_atomic(&cfg.out_dir.join(RESOLVED_CONFIG), cfg.to_config_string().as_bytes())
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    prepare_out_dir(cfg)?;
    let settings = TrainSettings {
        env: cfg.env.clone(),
        trainer: cfg.trainer.clone(),
        regime: cfg.regime,
        regime_id: cfg.regime_id,
        seed: cfg.seed,
    };
    train(&settings, Some(&cfg.out_dir))
}

fn load_params(path: &Path) -> Result<Arc<crate::net::NetParams<f32>>> {
    Ok(Arc::new(Checkpoint::load(path)?.params))
}

/// Builds the evaluated policy: the mixture spec file if configured,
/// otherwise the single `checkpoint` under the configured regime.
pub fn build_eval_policy(cfg: &RunConfig) -> Result<(MixedPolicy, u64)> {
    let policy = if let Some(spec_path) = &cfg.mixture.spec {
        let spec = MixtureSpec::load(spec_path, cfg.mixture.renormalize)?;
        spec.build(cfg.mixture.mode, cfg.trainer.downsample)?
    } else if let Some(path) = &cfg.eval.checkpoint {
        let ckpt = Checkpoint::load(path)?;
        let step = ckpt.global_step;
        let component = Component {
            params: Arc::new(ckpt.params),
            regime: cfg.regime,
            alpha: 1.0,
        };
        let policy = MixedPolicy::new(vec![component], cfg.mixture.epsilon, cfg.mixture.mode, cfg.trainer.downsample)?;
        return Ok((policy.with_input(cfg.mixture.input), step));
    } else {
        return Err(Error::InvalidConfig("eval needs `checkpoint` or `mixture`".into()));
    };
    Ok((policy.with_input(cfg.mixture.input), 0))
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let (policy, step) = build_eval_policy(cfg)?;
    let records = rollout(&policy, &cfg.env, cfg.eval.episodes, cfg.seed)?;
    let stats = aggregate(step, &records)?;
    prepare_out_dir(cfg)?;
    let path = cfg.out_dir.join("episodes.csv");
    write_episodes_csv(&path, &records)?;
    let row = SweepRow {
        alpha: policy.components[0].alpha,
        epsilon: policy.epsilon,
        stats,
    };
    write_stats_csv(&cfg.out_dir.join("eval_stats.csv"), &[row])?;
    Ok(path)
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let missing = |k: &str| Error::InvalidConfig(format!("sweep needs `{k}`"));
    let pi1_path = cfg.eval.pi1.as_ref().ok_or_else(|| missing("pi1"))?;
    let pi2_path = cfg.eval.pi2.as_ref().ok_or_else(|| missing("pi2"))?;
    let pi1 = Checkpoint::load(pi1_path)?;
    let pi2 = load_params(pi2_path)?;
    let settings = SweepSettings {
        env: cfg.env.clone(),
        epsilon: cfg.mixture.epsilon,
        episodes: cfg.eval.episodes,
        seed: cfg.seed,
        mode: cfg.mixture.mode,
        downsample: cfg.trainer.downsample,
        checkpoint_step: pi1.global_step,
    };
    let rows = sweep_alpha(Arc::new(pi1.params), pi2, &cfg.mixture.alphas, &settings)?;
    prepare_out_dir(cfg)?;
    write_stats_csv(&cfg.out_dir.join("sweep.csv"), &rows)?;
    Ok(rows)
}

/// Converts training logs, episode tables and stats tables into one long
/// `source,x_name,x,metric,value` table.
pub fn cmd_export(cfg: &RunConfig, inputs: &[PathBuf], output: Option<&Path>) -> Result<PathBuf> {
    if inputs.is_empty() {
        return Err(Error::InvalidConfig("export needs at least one input CSV".into()));
    }
    let mut rows: Vec<[String; 5]> = Vec::new();
    for path in inputs {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let x_name = ["step", "alpha", "episode"]
            .into_iter()
            .find(|c| headers.iter().any(|h| h == *c))
            .ok_or_else(|| Error::InvalidConfig(format!("{}: unrecognized CSV header", path.display())))?;
        let x_col = headers.iter().position(|h| h == x_name).unwrap_or(0);
        let source = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for record in reader.records() {
            let record = record?;
            for (i, metric) in headers.iter().enumerate() {
                if i == x_col {
                    continue;
                }
                rows.push([
                    source.clone(),
                    x_name.to_string(),
                    record[x_col].to_string(),
                    metric.to_string(),
                    record[i].to_string(),
                ]);
            }
        }
    }
    let out = match output {
        Some(p) => p.to_path_buf(),
        None => {
            std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
            cfg.out_dir.join("export.csv")
        }
    };
    write_csv(&out, &EXPORT_HEADER, rows)?;
    Ok(out)
}
