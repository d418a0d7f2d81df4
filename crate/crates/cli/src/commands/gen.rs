use std::path::{Path, PathBuf};

use hemnet_core::datagen::{gen_toy_seg_dataset, save_dataset};

use crate::commands::prepare_out_dir;
use crate::config::{Command, RunConfig};
use crate::error::CliResult;

pub fn run(cfg: &RunConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    cfg.validate(Command::Gen)?;
    let dataset = gen_toy_seg_dataset(&cfg.data.spec(), cfg.seed()?)?;
    let digest = dataset.digest();

    let config_path = prepare_out_dir(out, cfg)?;
    let data_path = out.join("dataset.bin");
    save_dataset(&dataset, &data_path)?;
    let digest_path = out.join("digest.json");
    let mut text = serde_json::to_string_pretty(&digest).map_err(|e| crate::error::CliError::Internal(e.to_string()))?;
    text.push('\n');
    std::fs::write(&digest_path, text)?;

    eprintln!(
        "generated {} images, {} pixels, feature dim {}, class histogram {:?}",
        digest.samples, digest.rows, digest.feature_dim, digest.class_histogram
    );
    Ok(vec![data_path, digest_path, config_path])
}
