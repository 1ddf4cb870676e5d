//! Independent reference computations shared by the integration tests.
//! Nothing here calls into the library's math; it only reads parameters.

#![allow(dead_code)]

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tfcovr::fusion::{FusionParams, Linear, ParamSet};
use tfcovr::loss::LossConfig;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Error-free product `a*b = p + e`.
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Neumaier-compensated sum.
pub fn ext_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = 0.0f64;
    let mut c = 0.0f64;
    for v in values {
        let t = s + v;
        if s.abs() >= v.abs() {
            c += (s - t) + v;
        } else {
            c += (v - t) + s;
        }
        s = t;
    }
    s + c
}

/// Dot product with exact products and compensated accumulation.
pub fn ext_dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    ext_sum(a.iter().zip(b).flat_map(|(&x, &y)| {
        let (p, e) = two_prod(x, y);
        [p, e]
    }))
}

pub fn ext_norm(a: &[f64]) -> f64 {
    ext_dot(a, a).sqrt()
}

pub fn ext_cosine(a: &[f64], b: &[f64]) -> f64 {
    ext_dot(a, b) / (ext_norm(a) * ext_norm(b))
}

/// `y_j = sum_i x_i W[i][j] + b_j`, by explicit index loops.
pub fn naive_affine(layer: &Linear, x: &[f64]) -> Vec<f64> {
    let (rows, cols) = (layer.weight.rows(), layer.weight.cols());
    assert_eq!(rows, x.len());
    (0..cols)
        .map(|j| {
            let terms = (0..rows).map(|i| x[i] * layer.weight[(i, j)]);
            ext_sum(terms.chain(std::iter::once(layer.bias[j])))
        })
        .collect()
}

/// Pre-activations of both hidden layers and the output.
pub struct RefForward {
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub out: Vec<f64>,
}

pub fn ref_compose(p: &FusionParams, zq: &[f64], zt: &[f64]) -> RefForward {
    let zm = naive_affine(&p.projection, zt);
    let x: Vec<f64> = zq.iter().chain(&zm).copied().collect();
    let a1 = naive_affine(&p.fusion.hidden1, &x);
    let h1: Vec<f64> = a1.iter().map(|v| v.max(0.0)).collect();
    let a2 = naive_affine(&p.fusion.hidden2, &h1);
    let h2: Vec<f64> = a2.iter().map(|v| v.max(0.0)).collect();
    let out = naive_affine(&p.fusion.output, &h2);
    RefForward { a1, a2, out }
}

pub fn ref_target(p: &FusionParams, z: &[f64]) -> Vec<f64> {
    match &p.target_projection {
        Some(l) => naive_affine(l, z),
        None => z.to_vec(),
    }
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = ext_norm(v);
    v.iter().map(|x| x / n).collect()
}

/// Off-diagonal weights from the defining ratio of exponentials:
/// `i2t[i][j] = (n-1) e^{bS_ij} / sum_{k!=i} e^{bS_ik}` and
/// `t2i[j][i] = (n-1) e^{bS_ji} / sum_{k!=i} e^{bS_ki}`; diagonal `alpha`.
pub fn ref_weights(s: &[Vec<f64>], alpha: f64, beta: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = s.len();
    let mut i2t = vec![vec![alpha; n]; n];
    let mut t2i = vec![vec![alpha; n]; n];
    for i in 0..n {
        let row = ext_sum((0..n).filter(|&k| k != i).map(|k| (beta * s[i][k]).exp()));
        let col = ext_sum((0..n).filter(|&k| k != i).map(|k| (beta * s[k][i]).exp()));
        for j in 0..n {
            if j != i {
                i2t[i][j] = (n - 1) as f64 * (beta * s[i][j]).exp() / row;
                t2i[j][i] = (n - 1) as f64 * (beta * s[j][i]).exp() / col;
            }
        }
    }
    (i2t, t2i)
}

/// The displayed loss, evaluated term by term with `S' = S / tau`. With
/// `frozen` the weights are taken as given instead of recomputed from `s`.
pub fn ref_loss(s: &[Vec<f64>], cfg: &LossConfig, frozen: Option<&(Vec<Vec<f64>>, Vec<Vec<f64>>)>) -> f64 {
    let n = s.len();
    let computed;
    let (i2t, t2i) = match frozen {
        Some(w) => w,
        None => {
            computed = ref_weights(s, cfg.alpha, cfg.beta);
            &computed
        }
    };
    let sp = |i: usize, j: usize| s[i][j] / cfg.tau;
    let mut terms = Vec::with_capacity(n);
    for i in 0..n {
        let row = ext_sum((0..n).map(|j| sp(i, j).exp() * i2t[i][j]));
        let col = ext_sum((0..n).map(|j| sp(j, i).exp() * t2i[j][i]));
        terms.push(row.ln() + col.ln() - 2.0 * sp(i, i));
    }
    ext_sum(terms) / n as f64
}

/// Plain symmetric InfoNCE on `S' = S / tau`.
pub fn ref_infonce(s: &[Vec<f64>], tau: f64) -> f64 {
    let n = s.len();
    let mut terms = Vec::with_capacity(n);
    for i in 0..n {
        let row = ext_sum((0..n).map(|j| (s[i][j] / tau).exp()));
        let col = ext_sum((0..n).map(|j| (s[j][i] / tau).exp()));
        terms.push(row.ln() + col.ln() - 2.0 * s[i][i] / tau);
    }
    ext_sum(terms) / n as f64
}

/// `(R + C - 2I) / (n tau)` with row/column softmaxes by direct
/// exponentiation.
pub fn ref_infonce_grad(s: &[Vec<f64>], tau: f64) -> Vec<Vec<f64>> {
    let n = s.len();
    let mut g = vec![vec![0.0; n]; n];
    for i in 0..n {
        let row = ext_sum((0..n).map(|j| (s[i][j] / tau).exp()));
        for j in 0..n {
            g[i][j] += (s[i][j] / tau).exp() / row;
        }
    }
    for j in 0..n {
        let col = ext_sum((0..n).map(|i| (s[i][j] / tau).exp()));
        for i in 0..n {
            g[i][j] += (s[i][j] / tau).exp() / col;
        }
    }
    for (i, row) in g.iter_mut().enumerate() {
        row[i] -= 2.0;
        for v in row.iter_mut() {
            *v /= n as f64 * tau;
        }
    }
    g
}

pub struct Sample {
    pub query: Vec<f64>,
    pub text: Vec<f64>,
    pub target: Vec<f64>,
}

pub struct RefBatch {
    pub s: Vec<Vec<f64>>,
    /// Sign pattern of every hidden pre-activation, for kink detection.
    pub pattern: Vec<bool>,
}

pub fn ref_batch(p: &FusionParams, batch: &[Sample]) -> RefBatch {
    let mut pattern = Vec::new();
    let q: Vec<Vec<f64>> = batch
        .iter()
        .map(|b| {
            let f = ref_compose(p, &b.query, &b.text);
            pattern.extend(f.a1.iter().chain(&f.a2).map(|&a| a > 0.0));
            unit(&f.out)
        })
        .collect();
    let t: Vec<Vec<f64>> = batch.iter().map(|b| unit(&ref_target(p, &b.target))).collect();
    let s = q
        .iter()
        .map(|qi| t.iter().map(|tj| ext_dot(qi, tj)).collect())
        .collect();
    RefBatch { s, pattern }
}

pub fn random_batch(rng: &mut ChaCha8Rng, n: usize, d_video: usize, d_text: usize) -> Vec<Sample> {
    (0..n)
        .map(|_| Sample {
            query: random_vec(rng, d_video),
            text: random_vec(rng, d_text),
            target: random_vec(rng, d_video),
        })
        .collect()
}

/// Give every tensor (biases included) random non-zero values.
pub fn jitter(params: &mut FusionParams, rng: &mut ChaCha8Rng, scale: f64) {
    for t in params.tensors_mut() {
        for v in t {
            *v += rng.random_range(-scale..scale);
        }
    }
}

pub struct GradCheck {
    pub max_rel: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
}

/// Relative error with a floor on the denominator so entries at round-off
/// level do not dominate.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central differences of the reference loss for every parameter,
/// compared with `analytic`. Coordinates whose perturbation flips a ReLU
/// are skipped and counted.
pub fn check_fusion_gradient(
    params: &FusionParams,
    analytic: &FusionParams,
    batch: &[Sample],
    cfg: &LossConfig,
    h: f64,
) -> GradCheck {
    let base = ref_batch(params, batch);
    let frozen = (!cfg.differentiate_weights).then(|| ref_weights(&base.s, cfg.alpha, cfg.beta));
    let grads: Vec<Vec<f64>> = analytic.tensors().iter().map(|t| t.to_vec()).collect();
    let sizes: Vec<usize> = grads.iter().map(Vec::len).collect();
    let mut out = GradCheck {
        max_rel: 0.0,
        checked: 0,
        skipped_kinks: 0,
    };
    for (ti, &len) in sizes.iter().enumerate() {
        for k in 0..len {
            let mut plus = params.clone();
            plus.tensors_mut()[ti][k] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[ti][k] -= h;
            let bp = ref_batch(&plus, batch);
            let bm = ref_batch(&minus, batch);
            if bp.pattern != base.pattern || bm.pattern != base.pattern {
                out.skipped_kinks += 1;
                continue;
            }
            let fd = (ref_loss(&bp.s, cfg, frozen.as_ref()) - ref_loss(&bm.s, cfg, frozen.as_ref())) / (2.0 * h);
            out.max_rel = out.max_rel.max(rel_err(grads[ti][k], fd));
            out.checked += 1;
        }
    }
    out
}

pub fn to_rows(m: &tfcovr::linalg::Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> tfcovr::linalg::Matrix {
    tfcovr::linalg::Matrix::from_rows(rows).expect("rectangular")
}

pub fn random_similarity(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| random_vec(rng, n)).collect()
}

/// AP by listing the ranks of relevant items first.
pub fn ap_by_enumeration(ranking: &[String], gt: &HashSet<String>, k: usize) -> f64 {
    let ranks: Vec<usize> = ranking
        .iter()
        .enumerate()
        .filter(|(i, id)| *i < k && gt.contains(*id))
        .map(|(i, _)| i + 1)
        .collect();
    let mut sum = 0.0;
    for (hit, rank) in ranks.iter().enumerate() {
        sum += (hit + 1) as f64 / *rank as f64;
    }
    sum / k.min(gt.len()) as f64
}

pub fn random_instance(r: &mut ChaCha8Rng) -> (Vec<String>, HashSet<String>) {
    let g = r.random_range(1..=100);
    let mut ids: Vec<String> = (0..g).map(|i| format!("i{i}")).collect();
    ids.shuffle(r);
    let m = r.random_range(1..=10.min(g));
    let gt = ids.choose_multiple(r, m).cloned().collect();
    (ids, gt)
}
