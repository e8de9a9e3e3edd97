//! Behavioural tests for the command line surface: exit codes, spec-id
//! handling, environment overrides, idempotent synthesis, and the plot
//! and report outputs.

mod common;

use std::fs;
use std::path::{Path, PathBuf};

use common::*;
use tempfile::TempDir;

fn tiny_config_in(tmp: &Path) -> PathBuf {
    write_config(tmp, "tiny.toml", TINY_CONFIG)
}

#[test]
fn run_executes_resumes_and_accepts_cell_ids() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config_in(tmp.path());
    let out_dir = tmp.path().join("a");
    let out_str = out_dir.to_str().unwrap();

    let first = planeshift(
        &["--config", cfg.to_str().unwrap(), "--out", out_str, "run", "solo"],
        &[],
    );
    assert_eq!(exit_code(&first), 0, "stderr: {}", stderr(&first));
    assert!(stdout(&first).contains("computed solo-n5 seed 1"));

    let results = out_dir.join("tiny");
    assert_eq!(metrics_files(&results).len(), 1);

    // Same spec again: nothing recomputed.
    let again = planeshift(
        &["--config", cfg.to_str().unwrap(), "--out", out_str, "run", "solo"],
        &[],
    );
    assert_eq!(exit_code(&again), 0);
    assert!(stdout(&again).contains("reused   solo-n5 seed 1"));

    // The expanded cell id narrows to the same grid point, so the cell
    // hash matches and the completed cell is reused, not recomputed.
    let by_cell = planeshift(
        &["--config", cfg.to_str().unwrap(), "--out", out_str, "run", "solo-n5"],
        &[],
    );
    assert_eq!(exit_code(&by_cell), 0, "stderr: {}", stderr(&by_cell));
    assert!(stdout(&by_cell).contains("reused   solo-n5 seed 1"), "{}", stdout(&by_cell));
}

#[test]
fn single_cell_run_preserves_sweep_aggregate() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config_in(tmp.path());
    let out_dir = tmp.path().join("a");
    let out_str = out_dir.to_str().unwrap();

    let sweep = planeshift(&["--config", cfg.to_str().unwrap(), "--out", out_str, "sweep"], &[]);
    assert_eq!(exit_code(&sweep), 0, "stderr: {}", stderr(&sweep));
    let agg_path = out_dir.join("tiny/aggregate.csv");
    let full = fs::read_to_string(&agg_path).unwrap();
    assert_eq!(full.lines().count(), 1 + 4);

    let run = planeshift(
        &["--config", cfg.to_str().unwrap(), "--out", out_str, "run", "tl-n5-p1"],
        &[],
    );
    assert_eq!(exit_code(&run), 0, "stderr: {}", stderr(&run));
    assert!(stdout(&run).contains("reused   tl-n5-p1 seed 1"));

    // The single-cell rerun refreshes its own row and keeps the rest.
    let merged = fs::read_to_string(&agg_path).unwrap();
    assert_eq!(merged, full, "reused cell leaves the aggregate unchanged");
}

#[test]
fn unknown_spec_id_lists_available_ids() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config_in(tmp.path());
    let out = planeshift(
        &["--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap(), "run", "nope"],
        &[],
    );
    assert_eq!(exit_code(&out), 1);
    let err = stderr(&out);
    assert!(err.contains("unknown spec id `nope`"), "{err}");
    for id in ["solo", "mix", "tl-n5-p1", "cold-p1"] {
        assert!(err.contains(id), "missing `{id}` in: {err}");
    }
}

#[test]
fn partial_sweep_failure_exits_3() {
    // `toobig` asks for more fine-tuning patients than the clinic split
    // can provide, which only surfaces at run time; `solo` succeeds.
    let text = TINY_CONFIG.replace(
        "[[sweep.specs]]\nid = \"mix\"",
        "[[sweep.specs]]\nid = \"toobig\"\nkind = \"transfer_learning\"\nsource = \"lab\"\ntarget = \"clinic\"\nn_grid = [5]\np_grid = [4]\n\n[[sweep.specs]]\nid = \"mix\"",
    );
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "partial.toml", &text);
    let out_dir = tmp.path().join("b");

    let out = planeshift(
        &["--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "sweep"],
        &[],
    );
    assert_eq!(exit_code(&out), 3, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("partial sweep failure"), "{}", stderr(&out));
    assert!(stdout(&out).contains("FAILED   toobig-n5-p4"), "{}", stdout(&out));

    // The failed cell leaves an error marker, not partial results.
    let results = out_dir.join("tiny");
    let mut error_files = 0;
    for hash_entry in fs::read_dir(&results).unwrap().flatten() {
        let dir = hash_entry.path();
        if dir.is_dir() {
            for seed_entry in fs::read_dir(&dir).unwrap().flatten() {
                if seed_entry.path().join("error.json").is_file() {
                    error_files += 1;
                    assert!(!seed_entry.path().join("metrics.json").exists());
                }
            }
        }
    }
    assert_eq!(error_files, 1);
}

#[test]
fn environment_overrides_out_dir_and_workers() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config_in(tmp.path());
    let env_out = tmp.path().join("from-env");

    let out = planeshift(
        &["--config", cfg.to_str().unwrap(), "run", "solo"],
        &[("PLANESHIFT_OUT", env_out.to_str().unwrap())],
    );
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    assert!(env_out.join("tiny").is_dir(), "results follow PLANESHIFT_OUT");

    // The flag beats the environment.
    let flag_out = tmp.path().join("from-flag");
    let out = planeshift(
        &[
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            flag_out.to_str().unwrap(),
            "run",
            "solo",
        ],
        &[("PLANESHIFT_OUT", tmp.path().join("ignored").to_str().unwrap())],
    );
    assert_eq!(exit_code(&out), 0);
    assert!(flag_out.join("tiny").is_dir());
    assert!(!tmp.path().join("ignored").exists());

    // Bad worker count from the environment is a config error.
    let out = planeshift(
        &["--config", cfg.to_str().unwrap(), "run", "solo"],
        &[("PLANESHIFT_WORKERS", "lots")],
    );
    assert_eq!(exit_code(&out), 1);
    assert!(stderr(&out).contains("PLANESHIFT_WORKERS"), "{}", stderr(&out));
}

#[test]
fn synth_is_idempotent_and_ingest_reports_counts() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config_in(tmp.path());
    let out_dir = tmp.path().join("c");
    let args = ["--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "synth"];

    let first = planeshift(&args, &[]);
    assert_eq!(exit_code(&first), 0, "stderr: {}", stderr(&first));
    assert!(stdout(&first).contains("lab: 6 patients, 30 images"));

    let snapshot = |root: &Path| {
        let mut files = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for entry in fs::read_dir(&dir).unwrap().flatten() {
                let path = entry.path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    files.push((path.clone(), fs::read(&path).unwrap()));
                }
            }
        }
        files.sort();
        files
    };
    let before = snapshot(&out_dir.join("data"));
    let second = planeshift(&args, &[]);
    assert_eq!(exit_code(&second), 0);
    assert_eq!(before, snapshot(&out_dir.join("data")), "regeneration must be a no-op diff");

    // Config-driven ingest summarises the generated centres.
    let ingest = planeshift(
        &["--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "ingest"],
        &[],
    );
    assert_eq!(exit_code(&ingest), 0, "stderr: {}", stderr(&ingest));
    let text = stdout(&ingest);
    assert!(text.contains("lab:") && text.contains("clinic:"), "{text}");
    assert!(text.contains("abdomen") && text.contains("other"), "{text}");

    // Direct ingest of one manifest file.
    let manifest = out_dir.join("data/lab/manifest.csv");
    let one = planeshift(&["ingest", manifest.to_str().unwrap()], &[]);
    assert_eq!(exit_code(&one), 0, "stderr: {}", stderr(&one));
    assert!(stdout(&one).contains("6 patients, 30 images"), "{}", stdout(&one));

    // A missing manifest is a runtime error.
    let missing = planeshift(&["ingest", out_dir.join("nope.csv").to_str().unwrap()], &[]);
    assert_eq!(exit_code(&missing), 2);
}

#[test]
fn plot_and_report_mirror_stored_metrics() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config_in(tmp.path());
    let out_dir = tmp.path().join("d");
    let sweep = planeshift(
        &["--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "sweep"],
        &[],
    );
    assert_eq!(exit_code(&sweep), 0, "stderr: {}", stderr(&sweep));

    let results = out_dir.join("tiny");
    let plot = planeshift(&["plot", results.to_str().unwrap()], &[]);
    assert_eq!(exit_code(&plot), 0, "stderr: {}", stderr(&plot));
    let plots = results.join("plots");
    for file in ["auc_vs_n.csv", "auc_vs_p.csv", "recall_precision.csv", "auc_vs_p.svg"] {
        assert!(plots.join(file).is_file(), "missing {file}");
    }
    assert!(plots.join("confusion/tl-n5-p1-s1.csv").is_file());
    assert!(plots.join("auc_vs_n_lab.svg").is_file());
    assert!(plots.join("auc_vs_n_clinic.svg").is_file());

    // The CSV repeats the stored metrics bit for bit: compare the tl
    // cell's row against its metrics.json.
    let (_, tl_metrics) = metrics_files(&results)
        .into_iter()
        .find(|(key, _)| key == "tl-n5-p1/1")
        .expect("tl cell present");
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tl_metrics).unwrap()).unwrap();
    let stored = metrics["macro_auc"].as_f64().unwrap();
    let csv = fs::read_to_string(plots.join("auc_vs_p.csv")).unwrap();
    let row = csv
        .lines()
        .find(|l| l.starts_with("tl-n5-p1,"))
        .expect("tl row in auc_vs_p.csv");
    let plotted: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
    assert_eq!(plotted.to_bits(), stored.to_bits(), "plot must not recompute values");

    // Report prints a per-spec table and writes summary.csv.
    let report = planeshift(&["report", results.to_str().unwrap()], &[]);
    assert_eq!(exit_code(&report), 0, "stderr: {}", stderr(&report));
    let text = stdout(&report);
    for id in ["solo-n5", "mix-n5", "tl-n5-p1", "cold-p1"] {
        assert!(text.contains(id), "missing {id} in report:\n{text}");
    }
    let summary = fs::read_to_string(results.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 4, "header plus one row per cell");

    // An existing but resultless directory has nothing to plot.
    let empty = tmp.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    let none = planeshift(&["plot", empty.to_str().unwrap()], &[]);
    assert_eq!(exit_code(&none), 2);
    assert!(stderr(&none).contains("no completed results"), "{}", stderr(&none));
}

#[test]
fn run_defaults_to_a_sole_spec_and_seed_override_applies() {
    // Strip the config down to one spec so `run` needs no id.
    let mut text = String::new();
    let mut keep = true;
    for chunk in TINY_CONFIG.split("[[sweep.specs]]") {
        if keep {
            text.push_str(chunk);
            keep = false;
        } else if chunk.contains("id = \"solo\"") {
            text.push_str("[[sweep.specs]]");
            text.push_str(chunk);
        }
    }
    let text = text.replace("seeds = [1]", "seeds = [1, 2]");
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "one.toml", &text);
    let out_dir = tmp.path().join("e");

    let out = planeshift(
        &[
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--seed",
            "2",
            "run",
        ],
        &[],
    );
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    let cells = metrics_files(&out_dir.join("tiny"));
    assert_eq!(cells.len(), 1, "--seed narrows two seeds to one");
    assert!(cells[0].0.ends_with("/2"), "seed directory is the override: {}", cells[0].0);
}

#[test]
fn study_preset_parses_and_expands_to_the_full_grid() {
    use planeshift_core::config::ExperimentConfig;
    use planeshift_core::strategies::expand_cells;

    let preset = Path::new(env!("CARGO_MANIFEST_DIR")).join("presets/study.toml");
    let cfg = ExperimentConfig::load(&preset).expect("study preset parses");
    let cells = expand_cells(&cfg);
    // 7 single-centre sizes, 8 combination sizes, 8 x 6 transfer grid,
    // 6 from-scratch baselines.
    assert_eq!(cells.len(), 7 + 8 + 48 + 6);
    assert_eq!(cfg.sweep.seeds.len(), 3);

    let desk = Path::new(env!("CARGO_MANIFEST_DIR")).join("presets/desk.toml");
    let desk_cfg = ExperimentConfig::load(&desk).expect("desk preset parses");
    assert_eq!(expand_cells(&desk_cfg).len(), 6);
}
