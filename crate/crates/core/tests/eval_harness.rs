use std::fs;
use std::path::Path;

use metacs::baselines::BaselineConfig;
use metacs::cgnp::{CgnpConfig, CombineMode};
use metacs::eval::{
    ablation_grid, collect_summaries, compute_metrics, prepare_tasks, ratio_sweep,
    relabel_support, render_report, report_rows, restore_model, run_experiment, run_on_tasks,
    run_stem, evaluate_model, DatasetSpec, ExperimentConfig, ModelName, SweepConfig,
};
use metacs::task::{ScenarioConfig, TaskSet};
use metacs::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn metrics_identical_sets() {
    let m = compute_metrics(&[0, 1], &[0, 1], 4).unwrap();
    assert_eq!((m.acc, m.pre, m.rec, m.f1), (1.0, 1.0, 1.0, 1.0));
}

#[test]
fn metrics_half_overlap() {
    // pred {a, b}, truth {b, c} over four nodes.
    let m = compute_metrics(&[0, 1], &[1, 2], 4).unwrap();
    assert_eq!((m.acc, m.pre, m.rec, m.f1), (0.5, 0.5, 0.5, 0.5));
}

#[test]
fn metrics_all_positive_prediction() {
    let all: Vec<usize> = (0..10).collect();
    let m = compute_metrics(&all, &[3, 4, 7], 10).unwrap();
    assert_eq!(m.rec, 1.0);
    assert_eq!(m.pre, 0.3);
    assert_eq!(m.acc, 0.3);
}

#[test]
fn metrics_edge_cases() {
    assert!(matches!(compute_metrics(&[0], &[], 3), Err(Error::Input(_))));
    assert!(compute_metrics(&[5], &[0], 3).is_err());
    let m = compute_metrics(&[], &[0, 1], 3).unwrap();
    assert_eq!((m.pre, m.rec, m.f1), (0.0, 0.0, 0.0));
    assert!((m.acc - 1.0 / 3.0).abs() < 1e-15);
}

fn subset(n: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::btree_set(0..n, 0..=n).prop_map(|s| s.into_iter().collect())
}

proptest! {
    #[test]
    fn metrics_properties(
        (n, pred, truth, seed) in (1usize..40).prop_flat_map(|n| (Just(n), subset(n), subset(n), any::<u64>()))
    ) {
        prop_assume!(!truth.is_empty());
        let m = compute_metrics(&pred, &truth, n).unwrap();
        prop_assert!(m.f1 <= 1.0f64.min(m.pre + m.rec) + 1e-12);
        let overlap = pred.iter().any(|v| truth.contains(v));
        prop_assert_eq!(m.f1 == 0.0, !overlap);
        for x in [m.acc, m.pre, m.rec, m.f1] {
            prop_assert!((0.0..=1.0).contains(&x));
        }
        use rand::seq::SliceRandom;
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let relabel = |s: &[usize]| s.iter().map(|&v| perm[v]).collect::<Vec<_>>();
        prop_assert_eq!(compute_metrics(&relabel(&pred), &relabel(&truth), n).unwrap(), m);
    }
}

/// Tiny SBM experiment that runs in a couple of seconds.
fn tiny_config(out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        model: ModelName::CgnpIp,
        seed: 3,
        out: out.to_path_buf(),
        tasks: None,
        datasets: vec![DatasetSpec::Sbm { blocks: vec![30, 30], p_in: 0.3, p_out: 0.02, seed: 1 }],
        scenario: ScenarioConfig {
            subgraph_size: 40,
            query_count: 4,
            n_train: 4,
            n_valid: 2,
            n_test: 3,
            seed: 3,
            ..ScenarioConfig::default()
        },
        cgnp: CgnpConfig { hidden: 16, attention_dim: 8, mlp_hidden: 32, epochs: 2, ..CgnpConfig::default() },
        baseline: BaselineConfig { hidden: 16, epochs: 2, inner_steps_train: 2, inner_steps_test: 2, ..BaselineConfig::default() },
        sweep: SweepConfig::default(),
    }
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn experiment_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let table = run_experiment(&cfg).unwrap();
    let stem = run_stem(&cfg, ModelName::CgnpIp);
    assert_eq!(stem, "cgnp-ip_sgsc_1shot");
    assert_eq!(table.predictions, 3 * 4);
    assert_eq!(table.per_task.len(), 3);
    assert_eq!(table.seed, 3);
    assert_eq!(table.config_hash, cfg.hash().unwrap());

    let csv = read(&dir.path().join(format!("{stem}.csv")));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("task_id,query_id,acc,pre,rec,f1"));
    assert_eq!(lines.count(), 12);
    for ext in ["json", "timing.json", "ckpt", "train.json"] {
        assert!(dir.path().join(format!("{stem}.{ext}")).exists(), "{ext}");
    }
    assert!(read(&dir.path().join("runs.log")).contains("cgnp-ip"));

    let summary: serde_json::Value = serde_json::from_str(&read(&dir.path().join(format!("{stem}.json")))).unwrap();
    assert_eq!(summary["config_hash"], cfg.hash().unwrap());
    assert_eq!(summary["seed"], 3);
    assert!(summary.get("timing").is_none());
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for model in [ModelName::CgnpGnn, ModelName::Gpn, ModelName::Supervised] {
        let mut ca = tiny_config(a.path());
        ca.model = model;
        let mut cb = tiny_config(b.path());
        cb.model = model;
        run_experiment(&ca).unwrap();
        run_experiment(&cb).unwrap();
        let stem = run_stem(&ca, model);
        for ext in ["csv", "json"] {
            let name = format!("{stem}.{ext}");
            assert_eq!(read(&a.path().join(&name)), read(&b.path().join(&name)), "{name}");
        }
    }
}

#[test]
fn algorithms_record_no_training_time() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    let tasks = prepare_tasks(&cfg).unwrap();
    for model in [ModelName::Ctc, ModelName::Kcore] {
        cfg.model = model;
        let t = run_on_tasks(&cfg, model, &tasks, Some(dir.path())).unwrap();
        assert_eq!(t.timing.train_seconds, 0.0);
        assert!(t.train_report.is_none());
        assert!(!dir.path().join(format!("{}.ckpt", run_stem(&cfg, model))).exists());
    }
}

#[test]
fn checkpoints_restore_the_trained_model() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = prepare_tasks(&tiny_config(dir.path())).unwrap();
    for model in [ModelName::CgnpMlp, ModelName::Maml] {
        let mut cfg = tiny_config(dir.path());
        cfg.model = model;
        let trained = run_on_tasks(&cfg, model, &tasks, Some(dir.path())).unwrap();
        let path = dir.path().join(format!("{}.ckpt", run_stem(&cfg, model)));
        let fitted = restore_model(&cfg, model, &tasks, &path).unwrap();
        let again = evaluate_model(&cfg, model, &fitted, &tasks, None).unwrap();
        assert_eq!(again.mean, trained.mean);
        assert_eq!(again.per_task, trained.per_task);
        let wrong = if model == ModelName::Maml { ModelName::Reptile } else { ModelName::CgnpIp };
        assert!(restore_model(&cfg, wrong, &tasks, &path).is_err());
    }
}

#[test]
fn gpn_results_carry_the_label_note() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let tasks = prepare_tasks(&cfg).unwrap();
    let t = run_on_tasks(&cfg, ModelName::Gpn, &tasks, None).unwrap();
    assert!(t.notes.iter().any(|n| n.contains("3+/3-")));
}

#[test]
fn report_collects_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let tasks = prepare_tasks(&cfg).unwrap();
    for model in [ModelName::Kcore, ModelName::Ctc] {
        run_on_tasks(&cfg, model, &tasks, Some(dir.path())).unwrap();
    }
    fs::write(dir.path().join("unrelated.json"), "{\"x\": 1}").unwrap();
    let rows = report_rows(&collect_summaries(&[dir.path()]).unwrap());
    let names: Vec<&str> = rows.iter().map(|r| r.model.as_str()).collect();
    assert_eq!(names, ["ctc", "kcore"]);
    let text = render_report(&rows);
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("model"));
}

#[test]
fn ratio_sweep_shape() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    cfg.cgnp.epochs = 1;
    cfg.baseline.epochs = 1;
    let tasks = prepare_tasks(&cfg).unwrap();
    let rows = ratio_sweep(&cfg, &tasks, Some(dir.path())).unwrap();
    assert_eq!(rows.len(), 15);
    let csv = read(&dir.path().join("ratio_sweep.csv"));
    assert_eq!(csv.lines().count(), 16);
    assert!(csv.starts_with("model,pos_pct,neg_pct,acc,pre,rec,f1,skipped_tasks"));
    let models: Vec<ModelName> = rows.iter().take(3).map(|r| r.model).collect();
    assert_eq!(models, [ModelName::CgnpGnn, ModelName::Supervised, ModelName::Gpn]);
}

#[test]
fn relabelled_support_follows_the_percentages() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = prepare_tasks(&tiny_config(dir.path())).unwrap();
    let task = &tasks.test[0];
    let truth = &task.support_truth()[0];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let t = relabel_support(task, 20.0, 100.0, 50, &mut rng).unwrap().unwrap();
    let s = &t.support[0];
    let size = truth.members.len();
    let expected = ((0.2 * size as f64).round() as usize).clamp(1, size - 1);
    assert_eq!(s.positives.len(), expected);
    assert_eq!(s.negatives.len(), 50.min(task.node_count() - size));
    assert!(s.positives.iter().all(|v| truth.members.contains(v)));
    assert!(s.negatives.iter().all(|v| !truth.members.contains(v)));
    // The floor keeps one positive at tiny percentages.
    let t = relabel_support(task, 0.01, 0.01, 50, &mut rng).unwrap().unwrap();
    assert_eq!((t.support[0].positives.len(), t.support[0].negatives.len()), (1, 1));
}

#[test]
fn ablation_grid_shape_and_single_view_identity() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    cfg.cgnp.epochs = 1;
    let tasks = prepare_tasks(&cfg).unwrap();
    let rows = ablation_grid(&cfg, &tasks, Some(dir.path())).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows[..3].iter().all(|r| r.sweep == "encoder" && r.combine == CombineMode::Average));
    assert!(rows[3..].iter().all(|r| r.sweep == "combine" && r.encoder == metacs::nn::LayerKind::Gat));
    assert_eq!(rows[3].f1, rows[4].f1, "1-shot sum and average must agree");
    assert_eq!(read(&dir.path().join("ablation.csv")).lines().count(), 7);

    cfg.model = ModelName::Gpn;
    assert!(ablation_grid(&cfg, &tasks, None).is_err());
}

#[test]
fn config_files() {
    let text = r#"
        model = "cgnp-mlp"
        seed = 11
        out = "somewhere"

        [[datasets]]
        kind = "sbm"
        blocks = [10, 10]
        p_in = 0.5
        p_out = 0.1

        [scenario]
        scenario = "sgsc"
        shots = 5

        [cgnp]
        epochs = 7
    "#;
    let cfg = ExperimentConfig::from_toml(text).unwrap();
    assert_eq!(cfg.model, ModelName::CgnpMlp);
    assert_eq!(cfg.scenario.shots, 5);
    assert_eq!(cfg.cgnp.epochs, 7);
    assert_eq!(cfg.cgnp_config(cfg.model).unwrap().decoder, metacs::cgnp::DecoderKind::Mlp);
    let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
    assert_eq!(back, cfg);

    let mut moved = cfg.clone();
    moved.out = "elsewhere".into();
    assert_eq!(moved.hash().unwrap(), cfg.hash().unwrap());
    moved.set_seed(12);
    assert_ne!(moved.hash().unwrap(), cfg.hash().unwrap());
    assert_eq!(moved.scenario.seed, 12);

    for bad in ["colour = 3", "[cgnp]\nepochz = 3", "model = \"bert\""] {
        assert!(matches!(ExperimentConfig::from_toml(bad), Err(Error::Config(_))), "{bad}");
    }
    let missing = ExperimentConfig {
        datasets: vec![DatasetSpec::Citation { dir: "/no/such/dir".into(), name: "x".into() }],
        ..ExperimentConfig::default()
    };
    assert!(matches!(prepare_tasks(&missing), Err(Error::Input(_))));
}

#[test]
fn prepared_tasks_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let tasks = prepare_tasks(&cfg).unwrap();
    tasks.save(&dir.path().join("tasks")).unwrap();
    let back = TaskSet::load(&dir.path().join("tasks")).unwrap();
    assert_eq!(back, tasks);
    let from_dir = ExperimentConfig { tasks: Some(dir.path().join("tasks")), datasets: vec![], ..cfg };
    assert_eq!(prepare_tasks(&from_dir).unwrap().digest().unwrap(), tasks.digest().unwrap());
}
