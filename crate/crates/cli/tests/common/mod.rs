//! Shared helpers for the CLI integration tests: a tiny four-arm config
//! that trains in about a second, and a runner for the built binary.
//! Each test target uses a different subset of these.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// Four strategy arms over two 16x16 synthetic centres; every training
/// run is two epochs on a handful of images.
pub const TINY_CONFIG: &str = r#"
name = "tiny"
out_dir = "unused"
workers = 1
deterministic = true

[prep]
height = 16
width = 16

[model]
arch = "desk_small"
num_classes = 5
init_seed = 1

[training]
learning_rate = 1e-3
batch_size = 4
max_epochs = 2
pretrain_epochs = 2
finetune_epochs = 2
scratch_epoch_factor = 2
max_val_images = 10

[[centres]]
id = "lab"
[centres.synth]
seed = 11
num_patients = 6
images_per_patient_per_class = 1
image_size = 64

[[centres]]
id = "clinic"
[centres.synth]
seed = 22
num_patients = 5
images_per_patient_per_class = 1
image_size = 64
[centres.synth.shift]
gamma = 1.3
noise_sigma = 0.1

[sweep]
seeds = [1]
pretrain_seed = 900
split_seed = 7
distribution = "uniform"

[[sweep.specs]]
id = "solo"
kind = "single_centre"
source = "lab"
n_grid = [5]

[[sweep.specs]]
id = "mix"
kind = "combination"
source = "lab"
target = "clinic"
n_grid = [5]

[[sweep.specs]]
id = "tl"
kind = "transfer_learning"
source = "lab"
target = "clinic"
n_grid = [5]
p_grid = [1]

[[sweep.specs]]
id = "cold"
kind = "from_scratch"
target = "clinic"
p_grid = [1]
"#;

pub fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

/// Run the built binary with the given args and extra environment.
pub fn planeshift(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_planeshift"));
    cmd.args(args);
    // The test process may carry overrides; start the child clean.
    cmd.env_remove("PLANESHIFT_OUT");
    cmd.env_remove("PLANESHIFT_WORKERS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// All `metrics.json` files under a results tree, keyed by
/// `<spec-id>/<seed>` so two trees can be compared cell by cell.
pub fn metrics_files(results_root: &Path) -> Vec<(String, PathBuf)> {
    let mut found = Vec::new();
    for hash_entry in fs::read_dir(results_root).unwrap().flatten() {
        let hash_dir = hash_entry.path();
        if !hash_dir.is_dir() || !hash_dir.join("spec.json").is_file() {
            continue;
        }
        let spec: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(hash_dir.join("spec.json")).unwrap())
                .unwrap();
        let spec_id = spec["id"].as_str().unwrap().to_string();
        for seed_entry in fs::read_dir(&hash_dir).unwrap().flatten() {
            let metrics = seed_entry.path().join("metrics.json");
            if metrics.is_file() {
                let seed = seed_entry.file_name().to_string_lossy().into_owned();
                found.push((format!("{spec_id}/{seed}"), metrics));
            }
        }
    }
    found.sort();
    found
}
