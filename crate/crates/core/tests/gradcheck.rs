mod common;

use rand::Rng;

use common::*;
use tfcovr::fusion::{
    backward, classification_loss_and_grad, contrastive_loss_and_grad, forward_query, ClassifierHead,
    ContrastiveSample, FusionConfig, FusionParams, ParamSet, Pooling,
};
use tfcovr::loss::LossConfig;

fn samples(batch: &[Sample]) -> Vec<ContrastiveSample<'_>> {
    batch
        .iter()
        .map(|s| ContrastiveSample {
            query: &s.query,
            text: &s.text,
            target: &s.target,
        })
        .collect()
}

fn run(seed: u64, cfg: LossConfig, target_projection: bool) -> GradCheck {
    let mut r = rng(seed);
    let mut model = FusionConfig::new(16, 16);
    model.target_projection = target_projection;
    let mut params = FusionParams::init(&model, seed).unwrap();
    jitter(&mut params, &mut r, 0.05);
    let batch = random_batch(&mut r, 8, 16, 16);
    let (loss, grad) = contrastive_loss_and_grad(&params, &samples(&batch), &cfg).unwrap();
    let reference = ref_batch(&params, &batch);
    assert!((loss - ref_loss(&reference.s, &cfg, None)).abs() < 1e-10);
    let g = check_fusion_gradient(&params, &grad, &batch, &cfg, 1e-5);
    eprintln!(
        "seed {seed}: max rel {:.2e} over {} coords, {} kinks skipped",
        g.max_rel, g.checked, g.skipped_kinks
    );
    g
}

#[test]
fn infonce_path() {
    let g = run(1, LossConfig::default(), false);
    assert!(g.max_rel < 1e-4, "max rel err {}", g.max_rel);
    assert!(g.checked > 1000);
}

#[test]
fn hard_negative_path_with_stopped_weights() {
    for seed in 2..5 {
        let cfg = LossConfig {
            beta: 1.5,
            alpha: 0.7,
            ..Default::default()
        };
        let g = run(seed, cfg, false);
        assert!(g.max_rel < 1e-4, "seed {seed}: {}", g.max_rel);
    }
}

#[test]
fn hard_negative_path_differentiated_weights() {
    for seed in 5..8 {
        let cfg = LossConfig {
            beta: 2.0,
            tau: 0.2,
            differentiate_weights: true,
            ..Default::default()
        };
        let g = run(seed, cfg, seed % 2 == 0);
        assert!(g.max_rel < 1e-4, "seed {seed}: {}", g.max_rel);
    }
}

#[test]
fn target_projection_path() {
    let g = run(
        9,
        LossConfig {
            beta: 0.5,
            ..Default::default()
        },
        true,
    );
    assert!(g.max_rel < 1e-4, "{}", g.max_rel);
}

#[test]
fn stage_one_cross_entropy_path() {
    let mut r = rng(10);
    for pooling in [Pooling::Mean, Pooling::Max] {
        let mut head = ClassifierHead::init(8, 5, pooling, 3).unwrap();
        head.linear.bias = random_vec(&mut r, 5);
        let pooled: Vec<Vec<f64>> = (0..6)
            .map(|_| {
                let rows: Vec<Vec<f64>> = (0..4).map(|_| random_vec(&mut r, 8)).collect();
                head.pool(&rows).unwrap()
            })
            .collect();
        let ys: Vec<usize> = (0..6).map(|_| r.random_range(0..5)).collect();
        let (_, grad) = classification_loss_and_grad(&head, &pooled, &ys).unwrap();
        let loss_of = |h: &ClassifierHead| {
            let terms = pooled.iter().zip(&ys).map(|(x, &y)| {
                let logits = naive_affine(&h.linear, x);
                let z = ext_sum(logits.iter().map(|l| l.exp()));
                z.ln() - logits[y]
            });
            ext_sum(terms) / pooled.len() as f64
        };
        let step = 1e-5;
        let analytic: Vec<Vec<f64>> = grad.tensors().iter().map(|t| t.to_vec()).collect();
        for (ti, t) in analytic.iter().enumerate() {
            for k in 0..t.len() {
                let mut p = head.clone();
                p.tensors_mut()[ti][k] += step;
                let mut m = head.clone();
                m.tensors_mut()[ti][k] -= step;
                let fd = (loss_of(&p) - loss_of(&m)) / (2.0 * step);
                assert!(rel_err(t[k], fd) < 1e-4, "tensor {ti}[{k}]: {} vs {fd}", t[k]);
            }
        }
    }
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let mut r = rng(11);
    let mut model = FusionConfig::new(6, 5);
    model.target_projection = true;
    let params = FusionParams::init(&model, 1).unwrap();
    let batch = random_batch(&mut r, 3, 6, 5);
    let caches: Vec<_> = batch
        .iter()
        .map(|s| forward_query(&params, &s.query, &s.text).unwrap())
        .collect();
    let zeros = vec![vec![0.0; 6]; 3];
    let targets: Vec<(&[f64], Vec<f64>)> = batch.iter().map(|s| (&s.target[..], vec![0.0; 6])).collect();
    let g = backward(&params, &caches, &zeros, &targets).unwrap();
    assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
}

#[test]
fn gradients_finite_on_random_batch() {
    let mut r = rng(12);
    let params = FusionParams::init(&FusionConfig::new(16, 16), 2).unwrap();
    let batch = random_batch(&mut r, 32, 16, 16);
    let (loss, grad) = contrastive_loss_and_grad(&params, &samples(&batch), &LossConfig::default()).unwrap();
    assert!(loss.is_finite());
    assert!(grad.all_finite());
}
