use std::path::{Path, PathBuf};

use hemnet_core::datagen::Dataset;
use hemnet_core::diagnostics::{emit_csv, emit_summary_json};
use hemnet_core::model::{evaluate, save_checkpoint, train, TrainConfig, TrainOutcome};
use serde_json::json;

use crate::commands::sweep::{write_eval_csv, EvalRow};
use crate::commands::{grad_records, obtain_dataset, prepare_out_dir, record_context, step_records};
use crate::config::{Command, RunConfig};
use crate::error::{CliError, CliResult};

/// Trains, turning a non-finite failure into a dump file next to the outputs.
pub(crate) fn train_or_dump(dataset: &Dataset, tc: &TrainConfig, out: &Path) -> CliResult<TrainOutcome> {
    match train(dataset, tc) {
        Ok(o) => Ok(o),
        Err(hemnet_core::Error::Training(message)) => {
            let dump = out.join("failure_dump.json");
            let body = json!({ "error": message, "train_config": tc });
            let text = serde_json::to_string_pretty(&body).map_err(|e| CliError::Internal(e.to_string()))?;
            std::fs::write(&dump, text + "\n")?;
            Err(CliError::Training { message, dump })
        }
        Err(e) => Err(e.into()),
    }
}

/// Evaluation rows at each requested depth for a finished run.
pub(crate) fn eval_rows(
    dataset: &Dataset,
    outcome: &TrainOutcome,
    tc: &TrainConfig,
    depths: &[usize],
) -> CliResult<Vec<EvalRow>> {
    let mut rows = Vec::with_capacity(depths.len());
    for &t in depths {
        let r = evaluate(dataset, &outcome.params, &outcome.state, &tc.hem, tc.model.use_hem, t)?;
        rows.push(EvalRow::ok(tc, t, &r));
    }
    Ok(rows)
}

pub fn run(cfg: &RunConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    cfg.validate(Command::Train)?;
    let tc = cfg.train_config()?;
    let dataset = obtain_dataset(cfg)?;
    let config_path = prepare_out_dir(out, cfg)?;

    let outcome = train_or_dump(&dataset, &tc, out)?;
    let ctx = record_context(&tc);
    let steps = step_records(&outcome.history, &ctx);

    let metrics = out.join("metrics.csv");
    emit_csv(&steps, &metrics)?;
    let grads = out.join("grads.csv");
    emit_csv(&grad_records(&outcome.history, &ctx), &grads)?;
    let summary = out.join("summary.json");
    emit_summary_json(&steps, &summary)?;
    let checkpoint = out.join("checkpoint.bin");
    save_checkpoint(&checkpoint, &outcome.params, &outcome.state)?;

    let mut depths = vec![tc.hem.t_train];
    if tc.hem.t_eval != tc.hem.t_train {
        depths.push(tc.hem.t_eval);
    }
    let rows = eval_rows(&dataset, &outcome, &tc, &depths)?;
    let eval = out.join("eval.csv");
    write_eval_csv(&rows, &eval)?;

    if let Some(last) = outcome.history.steps.last() {
        eprintln!(
            "trained {} steps: final batch loss {:.4}, accuracy {:.4}; eval accuracy at T={} is {:.4}",
            last.step + 1,
            last.loss,
            last.accuracy,
            rows[0].t_eval,
            rows[0].accuracy.unwrap_or(f64::NAN)
        );
    }
    Ok(vec![metrics, grads, eval, summary, checkpoint, config_path])
}
