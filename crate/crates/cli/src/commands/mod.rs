//! One module per subcommand plus the plumbing they share.

pub mod fig3;
pub mod gen;
pub mod gradcheck;
pub mod sweep;
pub mod train;

use std::fs;
use std::path::{Path, PathBuf};

use hemnet_core::datagen::{gen_toy_seg_dataset, load_dataset, Dataset};
use hemnet_core::diagnostics::{MetricRecord, RecordContext};
use hemnet_core::model::{MetricsHistory, TrainConfig};

use crate::config::RunConfig;
use crate::error::CliResult;

pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

/// Creates the output directory and records the fully resolved config in it.
pub(crate) fn prepare_out_dir(out: &Path, cfg: &RunConfig) -> CliResult<PathBuf> {
    let text = cfg.to_toml()?;
    fs::create_dir_all(out)?;
    let path = out.join(RESOLVED_CONFIG);
    fs::write(&path, text)?;
    Ok(path)
}

/// The configured dataset file, or a freshly generated one.
pub(crate) fn obtain_dataset(cfg: &RunConfig) -> CliResult<Dataset> {
    match &cfg.data.path {
        Some(p) => Ok(load_dataset(p)?),
        None => Ok(gen_toy_seg_dataset(&cfg.data.spec(), cfg.seed()?)?),
    }
}

pub(crate) fn record_context(tc: &TrainConfig) -> RecordContext {
    RecordContext {
        eta: tc.hem.step_size,
        t: tc.hem.t_train,
        kernel: tc.hem.kernel,
        seed: tc.seed,
    }
}

/// Per-step loss, accuracy, and layer ELBO rows.
pub(crate) fn step_records(history: &MetricsHistory, ctx: &RecordContext) -> Vec<MetricRecord> {
    let mut out = Vec::with_capacity(history.steps.len() * 5);
    for s in &history.steps {
        out.push(ctx.record(s.step, None, "loss", s.loss));
        out.push(ctx.record(s.step, None, "accuracy", s.accuracy));
        for (i, &e) in s.elbo.iter().enumerate() {
            out.push(ctx.record(s.step, Some(i + 1), "elbo", e));
        }
    }
    out
}

pub(crate) fn grad_records(history: &MetricsHistory, ctx: &RecordContext) -> Vec<MetricRecord> {
    history.grad_stats.iter().flat_map(|g| g.to_records(ctx)).collect()
}
