//! End-to-end runs of the `oneshot` binary on the procedural dataset.

use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
seed = 3
[data.synthetic]
alphabets = [8, 8, 8, 8]
samples_per_concept = 6
[extractor.protonet]
epochs = 1
episodes_per_epoch = 2
ways = 10
eval_episodes = 5
[model.vae_ns]
epochs = 1
steps_per_epoch = 1
context_size = 2
latent_size = 8
context_latent_size = 16
hidden = 32
[metrics]
samples_per_concept = 4
draws = 2
ways = 10
grid_concepts = 2
[sweep]
extractor = "ext"
"#;

fn oneshot(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oneshot"))
        .current_dir(dir)
        .env_remove("OMNIGLOT_ROOT")
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn workspace() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("cfg.toml"), CONFIG).unwrap();
    tmp
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn prepare_data_reports_split_and_hits_cache() {
    let tmp = workspace();
    let d = tmp.path();
    let first = ok(&oneshot(d, &["--config", "cfg.toml", "prepare-data", "--synthetic"]));
    let v: serde_json::Value = serde_json::from_str(&first).unwrap();
    // 3 characters held out from each of 4 alphabets.
    assert_eq!(v["test_concepts"], 12);
    assert_eq!(v["train_concepts"], 20);
    let second = ok(&oneshot(d, &["--config", "cfg.toml", "prepare-data", "--synthetic"]));
    assert!(second.starts_with("cache hit"), "{second}");

    let other = oneshot(d, &["--config", "cfg.toml", "prepare-data", "--synthetic", "--split-seed", "9"]);
    assert_eq!(code(&other), 2, "{}", stderr(&other));
    let forced = oneshot(d, &["--config", "cfg.toml", "--force", "prepare-data", "--synthetic", "--holdout", "0"]);
    ok(&forced);
    assert!(stderr(&forced).contains("test set empty"), "{}", stderr(&forced));
}

#[test]
fn missing_data_exits_with_data_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = oneshot(tmp.path(), &["prepare-data"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("--root"), "{}", stderr(&out));
    let out = oneshot(tmp.path(), &["prepare-data", "--root", "/no/such/omniglot"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("retry"), "{}", stderr(&out));
    let out = oneshot(tmp.path(), &["train", "protonet"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("prepare-data"), "{}", stderr(&out));
}

#[test]
fn usage_and_config_errors_exit_2() {
    let tmp = workspace();
    let d = tmp.path();
    assert_eq!(code(&oneshot(d, &["train", "resnet"])), 2);
    std::fs::write(d.join("bad.toml"), "[metrics]\nsampels_per_concept = 3\n").unwrap();
    let out = oneshot(d, &["--config", "bad.toml", "prepare-data", "--synthetic"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("sampels_per_concept"), "{}", stderr(&out));
    std::fs::write(d.join("spec.toml"), "model_kind = \"vae_ns\"\nparameter = \"context_size\"\nvaules = [2]\n").unwrap();
    let out = oneshot(d, &["--config", "cfg.toml", "sweep", "spec.toml"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("vaules"), "{}", stderr(&out));
}

#[test]
fn train_evaluate_reproduce_and_report() {
    let tmp = workspace();
    let d = tmp.path();
    let cfg = ["--config", "cfg.toml"];
    let run = |args: &[&str]| oneshot(d, &[&cfg[..], args].concat());
    ok(&run(&["prepare-data", "--synthetic"]));
    ok(&run(&["train", "protonet", "--run-id", "ext"]));
    ok(&run(&["train", "vae_ns", "--run-id", "ns"]));
    let again = run(&["train", "vae_ns", "--run-id", "ns"]);
    assert_eq!(code(&again), 2, "collisions need --force");

    // Zero epochs keep the initialization and refuse to be evaluated.
    let zero = run(&["train", "vae_ns", "--epochs", "0", "--run-id", "ns0"]);
    ok(&zero);
    assert!(d.join("runs/runs/ns0/model.safetensors").exists());
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("runs/runs/ns0/manifest.json")).unwrap()).unwrap();
    assert!(m["warnings"][0].as_str().unwrap().contains("0 epochs"));
    assert_eq!(code(&run(&["evaluate", "--model", "ns0", "--extractor", "ext"])), 5);

    // Human only, then with a model.
    ok(&run(&["evaluate", "--extractor", "ext", "--run-id", "human"]));
    let human_csv = std::fs::read_to_string(d.join("runs/runs/human/per_concept.csv")).unwrap();
    assert!(human_csv.lines().skip(1).all(|l| l.starts_with("human,")));
    ok(&run(&["evaluate", "--model", "ns", "--extractor", "ext", "--run-id", "ev"]));
    let dist = std::fs::read_to_string(d.join("runs/runs/ev/distances.csv")).unwrap();
    let human_row = dist.lines().find(|l| l.starts_with("human,")).unwrap();
    assert!(human_row.ends_with(",0"), "{human_row}");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("runs/runs/ev/manifest.json")).unwrap()).unwrap();
    for a in manifest["artifacts"].as_array().unwrap() {
        assert!(d.join("runs/runs/ev").join(a.as_str().unwrap()).exists(), "{a}");
    }

    let rerun = ok(&run(&["evaluate", "--from-manifest", "runs/runs/ev/manifest.json", "--run-id", "ev2"]));
    assert!(rerun.contains("bit-identical"), "{rerun}");
    for f in ["per_concept.csv", "distances.csv", "scatter.csv"] {
        assert_eq!(
            std::fs::read(d.join("runs/runs/ev").join(f)).unwrap(),
            std::fs::read(d.join("runs/runs/ev2").join(f)).unwrap(),
            "{f}"
        );
    }

    // A checkpoint whose weights were altered is refused.
    let w = d.join("runs/runs/ns/model.safetensors");
    let mut bytes = std::fs::read(&w).unwrap();
    let n = bytes.len();
    bytes[n - 1] ^= 0x55;
    let copy = d.join("tampered.safetensors");
    std::fs::write(&copy, bytes).unwrap();
    std::fs::copy(d.join("runs/runs/ns/model.json"), d.join("tampered.json")).unwrap();
    let out = run(&["evaluate", "--model", "tampered.safetensors", "--extractor", "ext"]);
    assert_eq!(code(&out), 5, "{}", stderr(&out));
    assert!(stderr(&out).contains("digest"), "{}", stderr(&out));

    let rep = ok(&run(&["report", "ev", "--name", "r"]));
    assert!(rep.contains("report.md"));
    for f in ["scatter.svg", "scatter.csv", "distances.svg", "distances.csv", "radar.csv", "ranked_concepts.csv", "diversity_lowest.png", "diversity_highest.png"] {
        assert!(d.join("runs/reports/r").join(f).exists(), "{f}");
    }
    let single = ok(&run(&["report", "human", "--name", "single"]));
    assert!(single.contains("report.md"));
    let scatter = std::fs::read_to_string(d.join("runs/reports/single/scatter.csv")).unwrap();
    assert_eq!(scatter.lines().count(), 2);
    let empty = run(&["report"]);
    assert_eq!(code(&empty), 2);
    assert!(stderr(&empty).contains("empty report"));
    let missing = run(&["report", "ev", "ghost"]);
    assert!(stderr(&missing).contains("ghost"), "{}", stderr(&missing));

    // Re-preparing with another split invalidates the trained checkpoints.
    ok(&run(&["--force", "prepare-data", "--synthetic", "--split-seed", "11"]));
    let out = run(&["evaluate", "--model", "ns", "--extractor", "ext", "--run-id", "stale"]);
    assert_eq!(code(&out), 5);
    assert!(stderr(&out).contains("training hash"), "{}", stderr(&out));
}

#[test]
fn sweep_runs_records_and_resumes() {
    let tmp = workspace();
    let d = tmp.path();
    let cfg = ["--config", "cfg.toml"];
    let run = |args: &[&str]| oneshot(d, &[&cfg[..], args].concat());
    ok(&run(&["prepare-data", "--synthetic"]));
    ok(&run(&["train", "protonet", "--run-id", "ext"]));
    std::fs::write(
        d.join("spec.toml"),
        "model_kind = \"vae_ns\"\nparameter = \"context_size\"\nvalues = [2, 3, 4, 5]\nseeds = [0]\n\
         [fixed_config]\nepochs = 1\nsteps_per_epoch = 1\n",
    )
    .unwrap();
    ok(&run(&["sweep", "spec.toml", "--run-id", "sw"]));
    let dir = d.join("runs/runs/sw");
    let sweep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(sweep["cells"].as_array().unwrap().len(), 4);
    assert!(sweep["cells"].as_array().unwrap().iter().all(|c| c["status"] == "done"));
    for f in ["trend.json", "diversity_vs_context_size.csv", "recognizability_vs_context_size.svg", "plane_context_size.csv"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(dir.join("diversity_vs_context_size.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);

    let before = std::fs::read(dir.join("sweep.json")).unwrap();
    assert_eq!(code(&run(&["sweep", "spec.toml", "--run-id", "sw"])), 2, "existing sweep needs --resume");
    ok(&run(&["--resume", "sweep", "spec.toml", "--run-id", "sw"]));
    assert_eq!(std::fs::read(dir.join("sweep.json")).unwrap(), before);
}

#[test]
fn diverging_training_is_recorded_as_failed() {
    let tmp = workspace();
    let d = tmp.path();
    let cfg = CONFIG.replace("[model.vae_ns]\n", "[model.vae_ns]\nlr = 1e30\n").replace("steps_per_epoch = 1", "steps_per_epoch = 3");
    std::fs::write(d.join("div.toml"), cfg).unwrap();
    ok(&oneshot(d, &["--config", "div.toml", "prepare-data", "--synthetic"]));
    let out = oneshot(d, &["--config", "div.toml", "train", "vae_ns", "--epochs", "3", "--run-id", "div"]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("runs/runs/div/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["status"]["state"], "failed");
    assert!(m["status"]["diagnostics"].as_str().unwrap().contains("diverged"));
}
