//! Trainable retrieval head: text projection, query/text fusion MLP, optional
//! target projection, and the frame-pooling classifier used in stage one.
//! Forward passes keep the activations needed for the hand-written backward.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, softmax, Matrix};
use crate::loss::{loss_and_grad, LossConfig};
use crate::par;

/// Anything the optimizer can walk tensor by tensor.
pub trait ParamSet: Clone + Send + Sync {
    /// `(name, shape)` per tensor in declaration order.
    fn shapes(&self) -> Vec<(String, Vec<usize>)>;
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    fn scale(&mut self, k: f64) {
        for t in self.tensors_mut() {
            for x in t {
                *x *= k;
            }
        }
    }

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Affine map `y = W^T x + b` with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

pub type ProjectionLayer = Linear;

impl Linear {
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Linear {
            weight: Matrix::zeros(d_in, d_out),
            bias: vec![0.0; d_out],
        }
    }

    pub fn identity(d: usize) -> Self {
        Linear {
            weight: Matrix::identity(d),
            bias: vec![0.0; d],
        }
    }

    /// Uniform in `+-sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn xavier(d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (d_in + d_out) as f64).sqrt();
        let data = (0..d_in * d_out).map(|_| rng.random_range(-limit..limit)).collect();
        Linear {
            weight: Matrix::from_vec(d_in, d_out, data).expect("sized"),
            bias: vec![0.0; d_out],
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn d_out(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d_in() {
            return Err(Error::Shape(format!(
                "linear layer expects {} inputs, got {}",
                self.d_in(),
                x.len()
            )));
        }
        let mut y = self.bias.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (yj, wij) in y.iter_mut().zip(self.weight.row(i)) {
                *yj += xi * wij;
            }
        }
        Ok(y)
    }

    /// Accumulate `dW += x dy^T`, `db += dy` into `grad`; return `dx`.
    fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Linear) -> Vec<f64> {
        for (gb, d) in grad.bias.iter_mut().zip(dy) {
            *gb += d;
        }
        let mut dx = vec![0.0; x.len()];
        for (i, &xi) in x.iter().enumerate() {
            let g_row = grad.weight.row_mut(i);
            for (g, d) in g_row.iter_mut().zip(dy) {
                *g += xi * d;
            }
            dx[i] = dot(self.weight.row(i), dy);
        }
        dx
    }
}

/// `z_m = W^T z_text + b`.
pub fn project_text(z_text: &[f64], projection: &ProjectionLayer) -> Result<Vec<f64>> {
    projection.forward(z_text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionMlp {
    pub hidden1: Linear,
    pub hidden2: Linear,
    pub output: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuseCache {
    x: Vec<f64>,
    a1: Vec<f64>,
    h1: Vec<f64>,
    a2: Vec<f64>,
    h2: Vec<f64>,
}

fn relu(a: &[f64]) -> Vec<f64> {
    a.iter().map(|&v| v.max(0.0)).collect()
}

fn check_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite values in {what}")))
    }
}

impl FusionMlp {
    pub fn d_in(&self) -> usize {
        self.hidden1.d_in()
    }

    pub fn d_out(&self) -> usize {
        self.output.d_out()
    }

    fn forward_cached(&self, z_q: &[f64], z_m: &[f64]) -> Result<(Vec<f64>, FuseCache)> {
        if z_q.len() + z_m.len() != self.d_in() {
            return Err(Error::Shape(format!(
                "fusion input {} + {} does not match d_in {}",
                z_q.len(),
                z_m.len(),
                self.d_in()
            )));
        }
        let x: Vec<f64> = z_q.iter().chain(z_m).copied().collect();
        let a1 = self.hidden1.forward(&x)?;
        let h1 = relu(&a1);
        let a2 = self.hidden2.forward(&h1)?;
        let h2 = relu(&a2);
        let out = self.output.forward(&h2)?;
        check_finite(&out, "fusion output")?;
        Ok((out, FuseCache { x, a1, h1, a2, h2 }))
    }

    /// Returns `dx` for the concatenated input.
    fn backward(&self, cache: &FuseCache, d_out: &[f64], grad: &mut FusionMlp) -> Vec<f64> {
        let mut d = self.output.backward(&cache.h2, d_out, &mut grad.output);
        for (g, &a) in d.iter_mut().zip(&cache.a2) {
            if a <= 0.0 {
                *g = 0.0;
            }
        }
        let mut d = self.hidden2.backward(&cache.h1, &d, &mut grad.hidden2);
        for (g, &a) in d.iter_mut().zip(&cache.a1) {
            if a <= 0.0 {
                *g = 0.0;
            }
        }
        self.hidden1.backward(&cache.x, &d, &mut grad.hidden1)
    }
}

/// `MLP([z_q ; z_m])`, unnormalized.
pub fn fuse(z_q: &[f64], z_m: &[f64], mlp: &FusionMlp) -> Result<Vec<f64>> {
    Ok(mlp.forward_cached(z_q, z_m)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub d_video: usize,
    pub d_text: usize,
    pub d_proj: usize,
    pub hidden: [usize; 2],
    pub d_out: usize,
    pub target_projection: bool,
}

impl FusionConfig {
    /// Hidden widths `d_in` and `d_in / 2`, text projected to `d_video`,
    /// output in the video space.
    pub fn new(d_video: usize, d_text: usize) -> Self {
        let d_in = 2 * d_video;
        FusionConfig {
            d_video,
            d_text,
            d_proj: d_video,
            hidden: [d_in, (d_in / 2).max(1)],
            d_out: d_video,
            target_projection: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.d_video,
            self.d_text,
            self.d_proj,
            self.hidden[0],
            self.hidden[1],
            self.d_out,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(format!("zero dimension in fusion config {self:?}")));
        }
        if !self.target_projection && self.d_out != self.d_video {
            return Err(Error::Config(
                "d_out must equal d_video unless a target projection is enabled".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub projection: ProjectionLayer,
    pub fusion: FusionMlp,
    pub target_projection: Option<ProjectionLayer>,
}

impl FusionParams {
    pub fn init(cfg: &FusionConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let projection = Linear::xavier(cfg.d_text, cfg.d_proj, &mut rng);
        let d_in = cfg.d_video + cfg.d_proj;
        let fusion = FusionMlp {
            hidden1: Linear::xavier(d_in, cfg.hidden[0], &mut rng),
            hidden2: Linear::xavier(cfg.hidden[0], cfg.hidden[1], &mut rng),
            output: Linear::xavier(cfg.hidden[1], cfg.d_out, &mut rng),
        };
        let target_projection = cfg.target_projection.then(|| {
            if cfg.d_out == cfg.d_video {
                Linear::identity(cfg.d_video)
            } else {
                Linear::xavier(cfg.d_video, cfg.d_out, &mut rng)
            }
        });
        Ok(FusionParams {
            projection,
            fusion,
            target_projection,
        })
    }

    pub fn config(&self) -> FusionConfig {
        FusionConfig {
            d_video: self.fusion.d_in() - self.projection.d_out(),
            d_text: self.projection.d_in(),
            d_proj: self.projection.d_out(),
            hidden: [self.fusion.hidden1.d_out(), self.fusion.hidden2.d_out()],
            d_out: self.fusion.d_out(),
            target_projection: self.target_projection.is_some(),
        }
    }

    /// Unnormalized composed query embedding.
    pub fn compose(&self, z_q: &[f64], z_text: &[f64]) -> Result<Vec<f64>> {
        let z_m = project_text(z_text, &self.projection)?;
        fuse(z_q, &z_m, &self.fusion)
    }

    /// Unnormalized target embedding.
    pub fn embed_target(&self, z_t: &[f64]) -> Result<Vec<f64>> {
        match &self.target_projection {
            Some(p) => p.forward(z_t),
            None => Ok(z_t.to_vec()),
        }
    }

    /// Rebuild from named tensors in the checkpoint naming scheme.
    pub fn from_tensors(tensors: &[(String, Vec<usize>, Vec<f64>)]) -> Result<Self> {
        let find = |name: &str| -> Result<&(String, Vec<usize>, Vec<f64>)> {
            tensors
                .iter()
                .find(|t| t.0 == name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name}")))
        };
        let linear = |prefix: &str| -> Result<Linear> {
            let (_, ws, w) = find(&format!("{prefix}.weight"))?;
            let (_, bs, b) = find(&format!("{prefix}.bias"))?;
            if ws.len() != 2 || bs.len() != 1 || bs[0] != ws[1] {
                return Err(Error::Format(format!("bad shapes for {prefix}: {ws:?} / {bs:?}")));
            }
            Ok(Linear {
                weight: Matrix::from_vec(ws[0], ws[1], w.clone())?,
                bias: b.clone(),
            })
        };
        let has_target = tensors.iter().any(|t| t.0 == "target_projection.weight");
        let params = FusionParams {
            projection: linear("projection")?,
            fusion: FusionMlp {
                hidden1: linear("fusion.hidden1")?,
                hidden2: linear("fusion.hidden2")?,
                output: linear("fusion.output")?,
            },
            target_projection: if has_target {
                Some(linear("target_projection")?)
            } else {
                None
            },
        };
        let cfg = params.config();
        let chain_ok = params.fusion.hidden1.d_out() == params.fusion.hidden2.d_in()
            && params.fusion.hidden2.d_out() == params.fusion.output.d_in()
            && params.fusion.d_in() > params.projection.d_out()
            && params
                .target_projection
                .as_ref()
                .is_none_or(|t| t.d_in() == cfg.d_video && t.d_out() == cfg.d_out);
        if !chain_ok {
            return Err(Error::Format("checkpoint layer shapes do not chain".into()));
        }
        cfg.validate()?;
        Ok(params)
    }
}

fn linear_shapes(prefix: &str, l: &Linear, out: &mut Vec<(String, Vec<usize>)>) {
    out.push((format!("{prefix}.weight"), vec![l.d_in(), l.d_out()]));
    out.push((format!("{prefix}.bias"), vec![l.d_out()]));
}

impl ParamSet for FusionParams {
    fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        linear_shapes("projection", &self.projection, &mut out);
        linear_shapes("fusion.hidden1", &self.fusion.hidden1, &mut out);
        linear_shapes("fusion.hidden2", &self.fusion.hidden2, &mut out);
        linear_shapes("fusion.output", &self.fusion.output, &mut out);
        if let Some(t) = &self.target_projection {
            linear_shapes("target_projection", t, &mut out);
        }
        out
    }

    fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in [
            &self.projection,
            &self.fusion.hidden1,
            &self.fusion.hidden2,
            &self.fusion.output,
        ]
        .into_iter()
        .chain(self.target_projection.as_ref())
        {
            out.push(l.weight.as_slice());
            out.push(&l.bias);
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in [
            &mut self.projection,
            &mut self.fusion.hidden1,
            &mut self.fusion.hidden2,
            &mut self.fusion.output,
        ]
        .into_iter()
        .chain(self.target_projection.as_mut())
        {
            out.push(l.weight.as_mut_slice());
            out.push(&mut l.bias);
        }
        out
    }
}

/// Activations for one composed query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryCache {
    z_text: Vec<f64>,
    fuse: FuseCache,
    pub output: Vec<f64>,
}

/// Forward pass for one composed query, keeping activations.
pub fn forward_query(params: &FusionParams, z_q: &[f64], z_text: &[f64]) -> Result<QueryCache> {
    let z_m = project_text(z_text, &params.projection)?;
    let (output, fuse) = params.fusion.forward_cached(z_q, &z_m)?;
    Ok(QueryCache {
        z_text: z_text.to_vec(),
        fuse,
        output,
    })
}

/// Gradients of every parameter given `dL/d output` per cached query and,
/// when a target projection exists, per target input.
pub fn backward(
    params: &FusionParams,
    caches: &[QueryCache],
    upstream: &[Vec<f64>],
    targets: &[(&[f64], Vec<f64>)],
) -> Result<FusionParams> {
    if caches.len() != upstream.len() {
        return Err(Error::Shape(format!(
            "{} upstream gradients for {} forward caches",
            upstream.len(),
            caches.len()
        )));
    }
    let d_video = params.config().d_video;
    let mut grad = params.zeros_like();
    for (cache, d_out) in caches.iter().zip(upstream) {
        if d_out.len() != cache.output.len() {
            return Err(Error::Shape("upstream gradient has wrong width".into()));
        }
        let dx = params.fusion.backward(&cache.fuse, d_out, &mut grad.fusion);
        params
            .projection
            .backward(&cache.z_text, &dx[d_video..], &mut grad.projection);
    }
    if let (Some(tp), Some(gtp)) = (&params.target_projection, grad.target_projection.as_mut()) {
        for (z_t, d) in targets {
            tp.backward(z_t, d, gtp);
        }
    }
    Ok(grad)
}

/// Gradient of `v / |v|` pulled back: `(I - u u^T) d / |v|`.
fn normalize_backward(v: &[f64], unit: &[f64], d_unit: &[f64]) -> Vec<f64> {
    let n = dot(v, v).sqrt();
    let proj = dot(unit, d_unit);
    d_unit.iter().zip(unit).map(|(d, u)| (d - u * proj) / n).collect()
}

fn unit(v: &[f64]) -> Result<Vec<f64>> {
    let n = dot(v, v).sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Numeric(format!("cannot normalize embedding with norm {n}")));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// One in-batch contrastive sample: query video, modification text, target.
#[derive(Debug, Clone, Copy)]
pub struct ContrastiveSample<'a> {
    pub query: &'a [f64],
    pub text: &'a [f64],
    pub target: &'a [f64],
}

/// Samples per gradient chunk. Fixed so reduction order never depends on
/// the worker count.
const GRAD_CHUNK: usize = 8;

/// Loss and parameter gradients of a batch: compose, normalize, cosine
/// matrix, HN-NCE, and back through every layer.
pub fn contrastive_loss_and_grad(
    params: &FusionParams,
    batch: &[ContrastiveSample<'_>],
    cfg: &LossConfig,
) -> Result<(f64, FusionParams)> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    let caches = par::try_map(batch, |s| forward_query(params, s.query, s.text))?;
    let targets = par::try_map(batch, |s| params.embed_target(s.target))?;
    let q_unit: Vec<Vec<f64>> = caches.iter().map(|c| unit(&c.output)).collect::<Result<_>>()?;
    let t_unit: Vec<Vec<f64>> = targets.iter().map(|t| unit(t)).collect::<Result<_>>()?;
    let mut s = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            s[(i, j)] = dot(&q_unit[i], &t_unit[j]);
        }
    }
    let (loss, g) = loss_and_grad(&s, cfg)?;

    let d_out: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut d = vec![0.0; q_unit[i].len()];
            for j in 0..n {
                let gij = g[(i, j)];
                for (dk, tk) in d.iter_mut().zip(&t_unit[j]) {
                    *dk += gij * tk;
                }
            }
            normalize_backward(&caches[i].output, &q_unit[i], &d)
        })
        .collect();
    let d_target: Vec<(&[f64], Vec<f64>)> = if params.target_projection.is_some() {
        (0..n)
            .map(|j| {
                let mut d = vec![0.0; t_unit[j].len()];
                for i in 0..n {
                    let gij = g[(i, j)];
                    for (dk, qk) in d.iter_mut().zip(&q_unit[i]) {
                        *dk += gij * qk;
                    }
                }
                (batch[j].target, normalize_backward(&targets[j], &t_unit[j], &d))
            })
            .collect()
    } else {
        Vec::new()
    };

    let idx: Vec<usize> = (0..n).collect();
    let partials = par::map_chunks(&idx, GRAD_CHUNK, |chunk| {
        let lo = chunk[0];
        let hi = lo + chunk.len();
        let tg = if d_target.is_empty() {
            &d_target[..]
        } else {
            &d_target[lo..hi]
        };
        backward(params, &caches[lo..hi], &d_out[lo..hi], tg)
    });
    let mut grad = params.zeros_like();
    for p in partials {
        grad.add_assign(&p?);
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Mean,
    Max,
}

impl std::str::FromStr for Pooling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "max" => Ok(Pooling::Max),
            other => Err(Error::Config(format!("unknown pooling {other:?}"))),
        }
    }
}

/// Frame pooling followed by a linear layer over `C` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub pooling: Pooling,
    pub linear: Linear,
}

impl ClassifierHead {
    pub fn init(dim: usize, classes: usize, pooling: Pooling, seed: u64) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Config(format!("classifier needs >= 2 classes, got {classes}")));
        }
        if dim == 0 {
            return Err(Error::Config("classifier input dimension is zero".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(ClassifierHead {
            pooling,
            linear: Linear::xavier(dim, classes, &mut rng),
        })
    }

    pub fn classes(&self) -> usize {
        self.linear.d_out()
    }

    pub fn dim(&self) -> usize {
        self.linear.d_in()
    }

    /// Pool frame rows (a single row is a plain clip embedding).
    pub fn pool(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        let d = self.dim();
        if rows.is_empty() || rows.iter().any(|r| r.len() != d) {
            return Err(Error::Shape(format!("classifier expects non-empty rows of width {d}")));
        }
        Ok(match self.pooling {
            Pooling::Mean => {
                let mut acc = vec![0.0; d];
                for r in rows {
                    for (a, x) in acc.iter_mut().zip(r) {
                        *a += x;
                    }
                }
                acc.iter().map(|a| a / rows.len() as f64).collect()
            }
            Pooling::Max => (0..d)
                .map(|k| rows.iter().map(|r| r[k]).fold(f64::NEG_INFINITY, f64::max))
                .collect(),
        })
    }

    pub fn logits(&self, pooled: &[f64]) -> Result<Vec<f64>> {
        self.linear.forward(pooled)
    }
}

/// Class probabilities for a clip given its frame rows.
pub fn classify(rows: &[Vec<f64>], head: &ClassifierHead) -> Result<Vec<f64>> {
    let pooled = head.pool(rows)?;
    Ok(softmax(&head.logits(&pooled)?))
}

pub const CE_FLOOR: f64 = 1e-12;

/// `-ln p[target]`, with the probability floored at [`CE_FLOOR`]. The flag
/// reports whether the floor was hit.
pub fn cross_entropy(probs: &[f64], target: usize) -> Result<(f64, bool)> {
    let p = *probs
        .get(target)
        .ok_or_else(|| Error::Shape(format!("class {target} out of range for {} classes", probs.len())))?;
    if p < CE_FLOOR {
        log::debug!("cross-entropy floor hit at class {target}");
        return Ok((-CE_FLOOR.ln(), true));
    }
    Ok((-p.ln(), false))
}

/// Mean cross-entropy of a batch of pooled inputs and its gradient.
pub fn classification_loss_and_grad(
    head: &ClassifierHead,
    pooled: &[Vec<f64>],
    targets: &[usize],
) -> Result<(f64, ClassifierHead)> {
    if pooled.len() != targets.len() || pooled.is_empty() {
        return Err(Error::Shape("batch inputs and labels disagree or are empty".into()));
    }
    let n = pooled.len() as f64;
    let mut grad = head.zeros_like();
    let mut total = 0.0;
    for (x, &y) in pooled.iter().zip(targets) {
        let p = softmax(&head.logits(x)?);
        total += cross_entropy(&p, y)?.0;
        let mut d = p;
        d[y] -= 1.0;
        for v in &mut d {
            *v /= n;
        }
        head.linear.backward(x, &d, &mut grad.linear);
    }
    Ok((total / n, grad))
}

impl ParamSet for ClassifierHead {
    fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        linear_shapes("classifier", &self.linear, &mut out);
        out
    }

    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.linear.weight.as_slice(), &self.linear.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let Linear { weight, bias } = &mut self.linear;
        vec![weight.as_mut_slice(), bias]
    }
}

impl ClassifierHead {
    pub fn from_tensors(tensors: &[(String, Vec<usize>, Vec<f64>)], pooling: Pooling) -> Result<Self> {
        let get = |name: &str| {
            tensors
                .iter()
                .find(|t| t.0 == name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name}")))
        };
        let (_, ws, w) = get("classifier.weight")?;
        let (_, bs, b) = get("classifier.bias")?;
        if ws.len() != 2 || bs.len() != 1 || bs[0] != ws[1] || ws[1] < 2 {
            return Err(Error::Format(format!("bad classifier shapes {ws:?} / {bs:?}")));
        }
        Ok(ClassifierHead {
            pooling,
            linear: Linear {
                weight: Matrix::from_vec(ws[0], ws[1], w.clone())?,
                bias: b.clone(),
            },
        })
    }
}
