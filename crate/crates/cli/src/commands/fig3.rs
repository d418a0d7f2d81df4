//! ELBO-per-layer curves and per-layer gradient profiles over a step-size grid,
//! all measured on one fixed model and probe set so the curves are comparable.

use std::path::{Path, PathBuf};

use hemnet_core::datagen::SegSample;
use hemnet_core::diagnostics::{emit_csv, layer_entropy, ElboCurve, MetricRecord, RecordContext};
use hemnet_core::gmm::Kernel;
use hemnet_core::model::{load_checkpoint, model_forward, probe_grad_stats, probe_indices};

use crate::commands::train::train_or_dump;
use crate::commands::{obtain_dataset, prepare_out_dir};
use crate::config::{Command, RunConfig};
use crate::error::{CliError, CliResult};

/// Slack for comparing ELBO curves across step sizes.
pub const DOMINANCE_SLACK: f64 = 1e-9;

/// Layers where the unit-step curve falls below another curve.
pub fn dominance_violations(curves: &[ElboCurve], slack: f64) -> Vec<(f64, usize)> {
    let Some(unit) = curves.iter().find(|c| c.eta == 1.0) else {
        return Vec::new();
    };
    let mut bad = Vec::new();
    for c in curves.iter().filter(|c| c.eta != 1.0) {
        for (i, (&u, &v)) in unit.elbo.iter().zip(&c.elbo).enumerate() {
            if u < v - slack {
                bad.push((c.eta, i + 1));
            }
        }
    }
    bad
}

pub fn run(cfg: &RunConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    cfg.validate(Command::Fig3)?;
    let tc = cfg.train_config()?;
    let dataset = obtain_dataset(cfg)?;
    if !tc.model.use_hem {
        return Err(CliError::Config("fig3 needs `model.use_hem = true`".into()));
    }
    let config_path = prepare_out_dir(out, cfg)?;

    let (params, state) = if cfg.fig3.train_inline {
        let o = train_or_dump(&dataset, &tc, out)?;
        (o.params, o.state)
    } else {
        let path = cfg.fig3.checkpoint.as_ref().expect("validated above");
        load_checkpoint(path)?
    };
    let probe: Vec<&SegSample> = probe_indices(dataset.samples.len(), tc.probe_size, tc.seed)
        .into_iter()
        .map(|i| &dataset.samples[i])
        .collect();
    let layers = cfg.fig3.layers;

    let mut curves = Vec::new();
    let mut elbo_records: Vec<MetricRecord> = Vec::new();
    let mut grad_records: Vec<MetricRecord> = Vec::new();
    for &eta in &cfg.fig3.step_sizes {
        let mut hem = tc.hem.clone();
        hem.step_size = eta;
        hem.t_train = layers;
        let ctx = RecordContext {
            eta,
            t: layers,
            kernel: hem.kernel,
            seed: tc.seed,
        };

        let mut sum = vec![0.0; layers];
        for s in &probe {
            let fwd = model_forward(&s.raw_features, &params, &state, &hem, true, Some(layers))?;
            let trace = fwd.trace.expect("HEM model records a trace");
            for (a, v) in sum.iter_mut().zip(trace.elbo_totals()) {
                *a += v;
            }
        }
        let curve = ElboCurve {
            eta,
            kernel: hem.kernel,
            elbo: sum.iter().map(|v| v / probe.len() as f64).collect(),
        };
        elbo_records.extend(curve.to_records(&ctx, 0));
        curves.push(curve);

        let stats = probe_grad_stats(0, &probe, &params, &state, &hem, Some(layers))?;
        grad_records.extend(stats.to_records(&ctx));
        let skip_total: f64 = stats.per_layer_mean_abs_grad_x.iter().sum();
        if skip_total > 0.0 {
            let share = stats.per_layer_mean_abs_grad_x[layers - 1] / skip_total;
            grad_records.push(ctx.record(0, None, "skip_share_last_layer", share));
        }
        if let Ok(h) = layer_entropy(&stats) {
            grad_records.push(ctx.record(0, None, "layer_entropy", h));
        }
    }

    let elbo_path = out.join("elbo_curve.csv");
    emit_csv(&elbo_records, &elbo_path)?;
    let grad_path = out.join("grad_profile.csv");
    emit_csv(&grad_records, &grad_path)?;

    if tc.hem.kernel == Kernel::Rbf {
        let bad = dominance_violations(&curves, DOMINANCE_SLACK);
        if !bad.is_empty() {
            let detail: Vec<String> = bad.iter().map(|(eta, t)| format!("eta={eta} layer={t}")).collect();
            eprintln!("unit-step ELBO curve is not on top at: {}", detail.join("; "));
            return Err(CliError::Check {
                failures: vec!["elbo-dominance".into()],
            });
        }
    }
    Ok(vec![elbo_path, grad_path, config_path])
}
