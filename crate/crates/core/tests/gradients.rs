//! Finite-difference checks of every analytic gradient the learners rely on.

mod common;

use std::sync::Arc;

use metacs::baselines::{maml_meta_gradient, BaselineConfig, Gpn, QueryGnn};
use metacs::cgnp::{Cgnp, CgnpConfig, CombineMode, DecoderKind};
use metacs::nn::{
    bind, gradient_check, GnnStack, GradientCheck, Gradients, LayerKind, LayerSpec, NodeInput,
    ParameterSet, Tape,
};
use metacs::task::{QueryLabels, Task};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{full_targets, toy_task};

const TOLERANCE: f64 = 1e-4;
const COORDINATES: usize = 80;

fn assert_close(what: &str, check: GradientCheck) {
    assert!(check.checked > 0, "{what}: nothing checked");
    assert!(
        check.max_rel_error <= TOLERANCE,
        "{what}: max relative error {:.3e} at {:?}",
        check.max_rel_error,
        check.worst
    );
}

fn check<F>(what: &str, f: F, params: &ParameterSet, seed: u64)
where
    F: FnMut(&ParameterSet) -> (f64, Gradients),
{
    let result = gradient_check(f, params, COORDINATES, &mut ChaCha8Rng::seed_from_u64(seed));
    assert_close(what, result);
}

/// BCE of the single output column against the left clique.
fn stack_loss(stack: &GnnStack, task: &Task, marker: Option<&[f64]>, p: &ParameterSet) -> (f64, Gradients) {
    let mut tape = Tape::new();
    let bound = bind(p, &mut tape);
    let input = NodeInput::Sparse(Arc::clone(&task.features));
    let z = match marker {
        Some(m) => stack
            .forward_marked(&mut tape, &bound, task.ops(), input, &[m.to_vec()], None)
            .unwrap()[0],
        None => stack.forward(&mut tape, &bound, task.ops(), input, None).unwrap(),
    };
    let entries = (0..task.node_count()).map(|v| (v, 0, f64::from(u8::from(v < 5)))).collect();
    let loss = tape.bce_logits(z, entries);
    (tape.scalar(loss), tape.gradients(loss, p))
}

#[test]
fn gnn_layers() {
    let task = toy_task(4, 1);
    for (i, kind) in [LayerKind::Gcn, LayerKind::Gat, LayerKind::Sage].into_iter().enumerate() {
        let mut params = ParameterSet::new();
        let specs = LayerSpec::stack(kind, 4, 6, 1, 2, 0.0);
        let stack = GnnStack::new(&specs, &mut params, "g", &mut ChaCha8Rng::seed_from_u64(i as u64)).unwrap();
        check(&format!("{kind}"), |p| stack_loss(&stack, &task, None, p), &params, 10 + i as u64);
    }
}

#[test]
fn marked_stacks() {
    let task = toy_task(4, 2);
    let mut marker = vec![0.0; 12];
    marker[0] = 1.0;
    marker[3] = 1.0;
    for (i, kind) in [LayerKind::Gcn, LayerKind::Gat, LayerKind::Sage].into_iter().enumerate() {
        let mut params = ParameterSet::new();
        let specs = LayerSpec::stack(kind, 5, 6, 1, 2, 0.0);
        let stack = GnnStack::with_marker(&specs, &mut params, "g", &mut ChaCha8Rng::seed_from_u64(i as u64)).unwrap();
        check(&format!("marked {kind}"), |p| stack_loss(&stack, &task, Some(&marker), p), &params, 20 + i as u64);
    }
}

fn small_cgnp(combine: CombineMode, decoder: DecoderKind) -> CgnpConfig {
    CgnpConfig {
        layers: 2,
        hidden: 6,
        dropout: 0.0,
        combine,
        attention_dim: 4,
        decoder,
        mlp_hidden: 10,
        decoder_layers: 2,
        ..CgnpConfig::default()
    }
}

#[test]
fn cgnp_every_combine_and_decoder() {
    let task = toy_task(3, 3);
    let targets = full_targets(&task);
    let mut seed = 100;
    for combine in [CombineMode::Sum, CombineMode::Average, CombineMode::Attention] {
        for decoder in [DecoderKind::Ip, DecoderKind::Mlp, DecoderKind::Gnn] {
            seed += 1;
            let (model, params) = Cgnp::new(small_cgnp(combine, decoder), 3, seed).unwrap();
            check(
                &format!("cgnp {combine:?}/{decoder:?}"),
                |p| model.episode_loss(p, &task, &task.support, &targets, None).unwrap(),
                &params,
                seed,
            );
        }
    }
}

#[test]
fn cgnp_other_encoders() {
    let task = toy_task(3, 4);
    let targets = full_targets(&task);
    for (i, encoder) in [LayerKind::Gcn, LayerKind::Sage].into_iter().enumerate() {
        let cfg = CgnpConfig {
            encoder,
            ..small_cgnp(CombineMode::Attention, DecoderKind::Gnn)
        };
        let (model, params) = Cgnp::new(cfg, 3, 7 + i as u64).unwrap();
        check(
            &format!("cgnp encoder {encoder}"),
            |p| model.episode_loss(p, &task, &task.support, &targets, None).unwrap(),
            &params,
            30 + i as u64,
        );
    }
}

fn small_baseline() -> BaselineConfig {
    BaselineConfig {
        layers: 2,
        hidden: 6,
        dropout: 0.0,
        ..BaselineConfig::default()
    }
}

#[test]
fn gpn_episode_loss() {
    let task = toy_task(4, 5);
    let gpn = Gpn::new(small_baseline(), 4, 9).unwrap();
    let episodes = vec![
        (
            QueryLabels { query: 2, positives: vec![0, 1], negatives: vec![6, 11] },
            QueryLabels { query: 2, positives: vec![3, 4], negatives: vec![5, 8, 10] },
        ),
        (
            QueryLabels { query: 8, positives: vec![7], negatives: vec![0] },
            QueryLabels { query: 8, positives: vec![5, 6, 9], negatives: vec![1, 2] },
        ),
    ];
    check("gpn", |p| gpn.loss(p, &task, &episodes, None).unwrap(), &gpn.params, 40);
}

#[test]
fn supervised_support_loss() {
    let task = toy_task(4, 6);
    let mut params = ParameterSet::new();
    let net = QueryGnn::new(&small_baseline(), 4, &mut params, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    check("supervised", |p| net.loss(p, &task, &task.support, None).unwrap(), &params, 50);
}

#[test]
fn maml_inner_step() {
    // Exact meta-gradient of one inner step against differences of the adapted query loss.
    let task = toy_task(4, 7);
    let targets = full_targets(&task);
    let mut params = ParameterSet::new();
    let net = QueryGnn::new(&small_baseline(), 4, &mut params, &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
    let alpha = 0.05;
    let meta = |p: &ParameterSet| {
        maml_meta_gradient(
            p,
            |q| net.loss(q, &task, &task.support, None),
            |q| net.loss(q, &task, &targets, None),
            alpha,
            1,
            true,
        )
        .unwrap()
    };
    check("maml inner step", meta, &params, 60);
}
