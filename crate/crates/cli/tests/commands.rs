//! Runs the `hemnet` binary the way a user would and checks files and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 7

[data]
num_images = 4
height = 8
width = 8
num_shapes = 2
num_classes = 3

[model]
channels = 4
num_bases = 3

[train]
epochs = 2
probe_size = 2
log_interval = 3

[sweep]
step_sizes = [0.5, 1.0]
t_train = [1, 3]
t_eval = [1, 2]

[fig3]
layers = 4

[gradcheck]
instances = 6
model_instances = 2
skip_instances = 8
reduction_instances = 4
elbo_instances = 10
"#;

fn hemnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hemnet")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_ok(cmd: &str, cfg: &str, out: &Path) -> Output {
    let o = hemnet(&[cmd, "--config", cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{cmd} failed: {}", stderr(&o));
    o
}

#[test]
fn every_command_writes_its_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let expected: [(&str, &[&str]); 5] = [
        ("gen", &["dataset.bin", "digest.json"]),
        ("train", &["metrics.csv", "grads.csv", "eval.csv", "summary.json", "checkpoint.bin"]),
        ("gradcheck", &["gradcheck.json"]),
        ("sweep", &["sweep.csv"]),
        ("fig3", &["elbo_curve.csv", "grad_profile.csv"]),
    ];
    for (cmd, files) in expected {
        let out = dir.path().join(cmd);
        let o = run_ok(cmd, &cfg, &out);
        let printed = String::from_utf8_lossy(&o.stdout).into_owned();
        for f in files.iter().chain(&["config.resolved.toml"]) {
            assert!(out.join(f).is_file(), "{cmd} did not write {f}");
            assert!(printed.contains(f), "{cmd} did not report {f}");
        }
    }
}

#[test]
fn train_reads_a_generated_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let gen_out = dir.path().join("gen");
    run_ok("gen", &cfg, &gen_out);

    let data_path = gen_out.join("dataset.bin");
    let with_path = SMALL.replace("[data]\n", &format!("[data]\npath = {:?}\n", data_path.to_str().unwrap()));
    let cfg2 = write_config(dir.path(), "from_file.toml", &with_path);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_ok("train", &cfg2, &a);
    run_ok("train", &cfg, &b);
    // The generated file holds exactly what `train` would generate itself.
    assert_eq!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(b.join("metrics.csv")).unwrap());
}

#[test]
fn gen_is_byte_reproducible_and_seed_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    run_ok("gen", &cfg, &a);
    run_ok("gen", &cfg, &b);
    let o = hemnet(&["gen", "--config", &cfg, "--out", c.to_str().unwrap(), "--seed", "8"]);
    assert!(o.status.success());
    let bytes = |p: &Path| fs::read(p.join("dataset.bin")).unwrap();
    assert_eq!(bytes(&a), bytes(&b));
    assert_ne!(bytes(&a), bytes(&c));
    assert!(fs::read_to_string(c.join("config.resolved.toml")).unwrap().contains("seed = 8"));
}

#[test]
fn missing_seed_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = hemnet(&["train", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));
}

#[test]
fn bad_step_size_fails_before_writing_anything() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", &format!("{SMALL}\n[hem]\nstep_size = 1.5\n"));
    let out = dir.path().join("out");
    let o = hemnet(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("step_size"), "{}", stderr(&o));
    assert!(!out.exists() || fs::read_dir(&out).unwrap().next().is_none());
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "typo.toml", &format!("{SMALL}\n[hem]\nsteps = 2\n"));
    let o = hemnet(&["train", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unreadable_config_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let o = hemnet(&["train", "--config", missing.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn corrupt_dataset_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.bin");
    fs::write(&junk, b"HEMNETBCgarbage").unwrap();
    let body = SMALL.replace("[data]\n", &format!("[data]\npath = {:?}\n", junk.to_str().unwrap()));
    let cfg = write_config(dir.path(), "junk.toml", &body);
    let o = hemnet(&["train", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn diverging_training_exits_4_with_a_dump() {
    let dir = tempfile::tempdir().unwrap();
    let body = SMALL.replace("[train]\n", "[train]\nlearning_rate = 1e12\n");
    let cfg = write_config(dir.path(), "diverge.toml", &body);
    let out = dir.path().join("out");
    let o = hemnet(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    let dump = out.join("failure_dump.json");
    assert!(dump.is_file());
    assert!(String::from_utf8_lossy(&o.stdout).contains("failure_dump.json"));
    let body: serde_json::Value = serde_json::from_str(&fs::read_to_string(dump).unwrap()).unwrap();
    assert!(body["error"].as_str().unwrap().contains("step"));
}

#[test]
fn injected_gradient_fault_is_caught() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "fault.toml", &format!("{SMALL}inject_fault = true\n"));
    let out = dir.path().join("out");
    let o = hemnet(&["gradcheck", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(5));
    let err = stderr(&o);
    assert!(err.contains("skip-law"), "{err}");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("gradcheck.json")).unwrap()).unwrap();
    let passed = |name: &str| {
        report["checks"]
            .as_array()
            .unwrap()
            .iter()
            .find(|c| c["name"] == name)
            .unwrap()["passed"]
            .as_bool()
            .unwrap()
    };
    assert!(!passed("skip-law"));
    assert!(!passed("skip-structure"));
    assert!(passed("hem-backward-oracle"));
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

#[test]
fn one_cell_sweep_matches_train() {
    let dir = tempfile::tempdir().unwrap();
    let body = SMALL.replace(
        "step_sizes = [0.5, 1.0]\nt_train = [1, 3]\nt_eval = [1, 2]",
        "step_sizes = [0.5]\nt_train = [3]\nt_eval = [3]",
    );
    let cfg = write_config(dir.path(), "one.toml", &body);
    let (tr, sw) = (dir.path().join("train"), dir.path().join("sweep"));
    run_ok("train", &cfg, &tr);
    run_ok("sweep", &cfg, &sw);
    assert_eq!(csv_rows(&tr.join("eval.csv")), csv_rows(&sw.join("sweep.csv")));
    let cell = sw.join("cells").read_dir().unwrap().next().unwrap().unwrap().path();
    assert_eq!(fs::read(cell.join("metrics.csv")).unwrap(), fs::read(tr.join("metrics.csv")).unwrap());
}

#[test]
fn sweep_covers_the_whole_grid_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("sweep");
    run_ok("sweep", &cfg, &out);
    let rows = csv_rows(&out.join("sweep.csv"));
    let keys: Vec<(f64, usize, usize)> = rows
        .iter()
        .map(|r| (r[0].parse().unwrap(), r[1].parse().unwrap(), r[2].parse().unwrap()))
        .collect();
    let mut want = Vec::new();
    for eta in [0.5, 1.0] {
        for t in [1, 3] {
            for te in [1, 2] {
                want.push((eta, t, te));
            }
        }
    }
    assert_eq!(keys, want);
    assert!(rows.iter().all(|r| &r[8] == "ok"));
}

#[test]
fn parallel_sweep_matches_sequential() {
    let dir = tempfile::tempdir().unwrap();
    let seq = write_config(dir.path(), "seq.toml", SMALL);
    let par = write_config(dir.path(), "par.toml", &SMALL.replace("[sweep]\n", "[sweep]\nparallel = true\n"));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_ok("sweep", &seq, &a);
    run_ok("sweep", &par, &b);
    assert_eq!(fs::read(a.join("sweep.csv")).unwrap(), fs::read(b.join("sweep.csv")).unwrap());
}

#[test]
fn fig3_needs_a_checkpoint_when_not_training() {
    let dir = tempfile::tempdir().unwrap();
    let body = SMALL.replace("[fig3]\n", "[fig3]\ntrain_inline = false\n");
    let cfg = write_config(dir.path(), "f.toml", &body);
    let o = hemnet(&["fig3", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let tr = dir.path().join("train");
    run_ok("train", &write_config(dir.path(), "small.toml", SMALL), &tr);
    let ckpt = tr.join("checkpoint.bin");
    let body = SMALL.replace(
        "[fig3]\n",
        &format!("[fig3]\ntrain_inline = false\ncheckpoint = {:?}\n", ckpt.to_str().unwrap()),
    );
    let out = dir.path().join("fig3");
    run_ok("fig3", &write_config(dir.path(), "f2.toml", &body), &out);
    let rows = csv_rows(&out.join("elbo_curve.csv"));
    // Three step sizes, four layers each.
    assert_eq!(rows.iter().filter(|r| &r[2] == "elbo").count(), 12);
}
