use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

fn metacs(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metacs"))
        .args(args)
        .current_dir(cwd)
        .env_remove("META_CS_SEED")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: &str = r#"
seed = 5

[[datasets]]
kind = "sbm"
blocks = [30, 30]
p_in = 0.3
p_out = 0.02
seed = 2

[scenario]
subgraph_size = 40
query_count = 4
n_train = 4
n_valid = 2
n_test = 3

[cgnp]
hidden = 16
attention_dim = 8
mlp_hidden = 32
epochs = 2

[baseline]
hidden = 16
epochs = 2
inner_steps_train = 2
inner_steps_test = 2

[sweep]
models = ["cgnp-ip", "ctc"]
ratios = [[5.0, 25.0], [20.0, 100.0]]
"#;

fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.toml");
    fs::write(&path, TINY).unwrap();
    path
}

#[test]
fn no_arguments_prints_usage_and_exits_2() {
    let o = metacs(&[], &repo_root());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_2() {
    let root = repo_root();
    for args in [&["frobnicate"][..], &["train", "--bogus"]] {
        let o = metacs(args, &root);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
        assert!(stderr(&o).contains("Usage"), "{args:?}");
    }
    for args in [&["train", "--shots", "3"][..], &["train", "--scenario", "xyz"]] {
        let o = metacs(args, &root);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
        assert!(stderr(&o).contains("invalid value"), "{args:?}");
    }
    let o = metacs(&["--help"], &root);
    assert_eq!(o.status.code(), Some(0));
    for sub in ["prepare-tasks", "train", "evaluate", "sweep-ratio", "ablate", "baseline", "report"] {
        assert!(stdout(&o).contains(sub), "{sub}");
    }
}

#[test]
fn runtime_failures_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let root = repo_root();
    let o = metacs(&["--config", "/no/such/file.toml", "train"], &root);
    assert_eq!(o.status.code(), Some(1));
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("out");
    let (cfg, out) = (cfg.to_str().unwrap(), out.to_str().unwrap());
    let o = metacs(&["--config", cfg, "--out", out, "--model", "nonsense", "train"], &root);
    assert_eq!(o.status.code(), Some(1));
    // Evaluating before training has no checkpoint to read.
    let o = metacs(&["--config", cfg, "--out", out, "evaluate"], &root);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("checkpoint"));
}

#[test]
fn train_then_evaluate_writes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    let common = ["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--model", "cgnp-gnn"];
    let root = repo_root();

    let o = metacs(&[&common[..], &["prepare-tasks"]].concat(), &root);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_dir(out.join("tasks/test")).unwrap().count(), 3);

    let o = metacs(&[&common[..], &["train"]].concat(), &root);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("cgnp-gnn_sgsc_1shot.ckpt").exists());

    let o = metacs(&[&common[..], &["evaluate"]].concat(), &root);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("cgnp-gnn_sgsc_1shot.csv")).unwrap();
    assert!(csv.starts_with("task_id,query_id,acc,pre,rec,f1\n"));
    assert_eq!(csv.lines().count(), 1 + 3 * 4);
    assert!(stdout(&o).contains("f1="));

    let o = metacs(&[&common[..], &["baseline", "--method", "kcore"]].concat(), &root);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = metacs(&[&common[..], &["report"]].concat(), &root);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("cgnp-gnn") && stdout(&o).contains("kcore"));
    assert!(out.join("report.csv").exists());
}

#[test]
fn sweep_and_ablation_commands() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    let common = ["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--model", "cgnp-ip"];
    let root = repo_root();
    let o = metacs(&[&common[..], &["sweep-ratio"]].concat(), &root);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("ratio_sweep.csv")).unwrap().lines().count(), 1 + 2 * 2);
    let o = metacs(&[&common[..], &["ablate"]].concat(), &root);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("ablation.csv")).unwrap().lines().count(), 7);
}

fn run_supervised(cfg: &Path, out: &Path, seed: Option<&str>, env_seed: Option<&str>) -> String {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_metacs"));
    cmd.args(["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--model", "supervised"]);
    if let Some(s) = seed {
        cmd.args(["--seed", s]);
    }
    cmd.arg("evaluate").current_dir(repo_root()).env_remove("META_CS_SEED");
    if let Some(s) = env_seed {
        cmd.env("META_CS_SEED", s);
    }
    let o = cmd.output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    fs::read_to_string(out.join("supervised_sgsc_1shot.csv")).unwrap()
}

#[test]
fn repeated_runs_are_byte_identical_and_env_seed_wins() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let a = run_supervised(&cfg, &dir.path().join("a"), Some("9"), None);
    let b = run_supervised(&cfg, &dir.path().join("b"), Some("9"), None);
    assert_eq!(a, b);
    let json = |d: &str| fs::read_to_string(dir.path().join(d).join("supervised_sgsc_1shot.json")).unwrap();
    assert_eq!(json("a"), json("b"));

    // META_CS_SEED=9 overrides --seed 1, so the run matches the seed-9 run.
    let c = run_supervised(&cfg, &dir.path().join("c"), Some("1"), Some("9"));
    assert_eq!(c, a);
    assert_eq!(json("c"), json("a"));
    run_supervised(&cfg, &dir.path().join("d"), Some("1"), None);
    assert_ne!(json("d"), json("a"));
}

#[test]
fn citeseer_task_preparation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cs");
    let o = metacs(
        &["--config", "configs/citeseer_sgsc.toml", "--out", out.to_str().unwrap(), "--scenario", "sgsc", "--shots", "1", "prepare-tasks"],
        &repo_root(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let count = |split: &str| fs::read_dir(out.join("tasks").join(split)).unwrap().count();
    assert_eq!((count("train"), count("valid"), count("test")), (100, 50, 50));
}

#[test]
fn shipped_configs_parse() {
    let dir = tempfile::tempdir().unwrap();
    for entry in fs::read_dir(repo_root().join("configs")).unwrap() {
        let path = entry.unwrap().path();
        // `report` only needs a valid configuration and an output directory with summaries.
        let out = dir.path().join(path.file_stem().unwrap());
        fs::create_dir_all(&out).unwrap();
        let o = metacs(&["--config", path.to_str().unwrap(), "--out", out.to_str().unwrap(), "report"], &repo_root());
        assert_eq!(o.status.code(), Some(1), "{}", path.display());
        assert!(stderr(&o).contains("no run summaries"), "{}: {}", path.display(), stderr(&o));
    }
}
