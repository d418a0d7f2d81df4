use std::path::{Path, PathBuf};
use std::thread;

use hemnet_core::datagen::Dataset;
use hemnet_core::diagnostics::{emit_csv, format_float};
use hemnet_core::gmm::Kernel;
use hemnet_core::model::{EvalResult, TrainConfig};

use crate::commands::train::{eval_rows, train_or_dump};
use crate::commands::{grad_records, obtain_dataset, prepare_out_dir, record_context, step_records};
use crate::config::{Command, RunConfig};
use crate::error::{CliError, CliResult};

pub const EVAL_HEADER: [&str; 9] = ["eta", "t_train", "t_eval", "kernel", "seed", "accuracy", "loss", "final_elbo", "status"];

/// One (η, T_train, T_eval) cell of an ablation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub eta: f64,
    pub t_train: usize,
    pub t_eval: usize,
    pub kernel: Kernel,
    pub seed: u64,
    pub accuracy: Option<f64>,
    pub loss: Option<f64>,
    pub final_elbo: Option<f64>,
    /// `ok`, or `failed: <reason>`.
    pub status: String,
}

impl EvalRow {
    pub fn ok(tc: &TrainConfig, t_eval: usize, r: &EvalResult) -> Self {
        Self {
            eta: tc.hem.step_size,
            t_train: tc.hem.t_train,
            t_eval,
            kernel: tc.hem.kernel,
            seed: tc.seed,
            accuracy: Some(r.accuracy),
            loss: Some(r.loss),
            final_elbo: Some(r.final_elbo),
            status: "ok".into(),
        }
    }

    fn failed(tc: &TrainConfig, t_eval: usize, reason: &str) -> Self {
        Self {
            eta: tc.hem.step_size,
            t_train: tc.hem.t_train,
            t_eval,
            kernel: tc.hem.kernel,
            seed: tc.seed,
            accuracy: None,
            loss: None,
            final_elbo: None,
            status: format!("failed: {reason}"),
        }
    }
}

pub fn write_eval_csv(rows: &[EvalRow], path: &Path) -> CliResult<()> {
    let io = |e: csv::Error| CliError::Io(e.to_string());
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(io)?;
    w.write_record(EVAL_HEADER).map_err(io)?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, format_float);
    for r in rows {
        w.write_record([
            format_float(r.eta),
            r.t_train.to_string(),
            r.t_eval.to_string(),
            r.kernel.to_string(),
            r.seed.to_string(),
            opt(r.accuracy),
            opt(r.loss),
            opt(r.final_elbo),
            r.status.clone(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

fn cell_dir(out: &Path, eta: f64, t: usize) -> PathBuf {
    out.join("cells").join(format!("eta{eta}_T{t}"))
}

fn run_cell(dataset: &Dataset, tc: &TrainConfig, dir: &Path, t_eval: &[usize]) -> Vec<EvalRow> {
    let attempt = || -> CliResult<Vec<EvalRow>> {
        std::fs::create_dir_all(dir)?;
        let outcome = train_or_dump(dataset, tc, dir)?;
        let ctx = record_context(tc);
        emit_csv(&step_records(&outcome.history, &ctx), dir.join("metrics.csv"))?;
        emit_csv(&grad_records(&outcome.history, &ctx), dir.join("grads.csv"))?;
        eval_rows(dataset, &outcome, tc, t_eval)
    };
    attempt().unwrap_or_else(|e| {
        let reason = e.to_string().replace(['\n', '\r'], " ");
        t_eval.iter().map(|&t| EvalRow::failed(tc, t, &reason)).collect()
    })
}

pub fn run(cfg: &RunConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    cfg.validate(Command::Sweep)?;
    let base = cfg.train_config()?;
    let dataset = obtain_dataset(cfg)?;
    let config_path = prepare_out_dir(out, cfg)?;

    let mut cells = Vec::new();
    for &eta in &cfg.sweep.step_sizes {
        for &t in &cfg.sweep.t_train {
            let mut tc = base.clone();
            tc.hem.step_size = eta;
            tc.hem.t_train = t;
            cells.push((tc, cell_dir(out, eta, t)));
        }
    }
    let t_eval = &cfg.sweep.t_eval;
    let results: Vec<Vec<EvalRow>> = if cfg.sweep.parallel {
        thread::scope(|s| {
            let handles: Vec<_> = cells
                .iter()
                .map(|(tc, dir)| s.spawn(|| run_cell(&dataset, tc, dir, t_eval)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sweep worker panicked"))
                .collect()
        })
    } else {
        cells.iter().map(|(tc, dir)| run_cell(&dataset, tc, dir, t_eval)).collect()
    };

    let rows: Vec<EvalRow> = results.into_iter().flatten().collect();
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    let path = out.join("sweep.csv");
    write_eval_csv(&rows, &path)?;
    eprintln!("sweep finished: {} cells, {} rows, {failed} failed", cells.len(), rows.len());
    Ok(vec![path, config_path])
}
