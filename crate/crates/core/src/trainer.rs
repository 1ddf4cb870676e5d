//! Mini-batch training loops for the classifier head (stage one) and the
//! contrastive fusion head (stage two).

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::fusion::{
    classification_loss_and_grad, contrastive_loss_and_grad, ClassifierHead, ContrastiveSample, FusionParams, ParamSet,
    Pooling,
};
use crate::io::{sha256_hex, to_jsonl};
use crate::linalg::softmax;
use crate::loss::LossConfig;
use crate::optim::{adamw_step, AdamWConfig, AdamWState};
use crate::par;
use crate::tripletgen::Triplet;

pub const FULL_SCALE_BATCH: usize = 512;
pub const DESK_SCALE_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub adamw: AdamWConfig,
    pub loss: LossConfig,
    /// Run the evaluation hook every this many epochs (and after the last).
    pub eval_every: usize,
    /// Abort once more than this many steps were skipped.
    pub max_skipped_steps: u64,
    /// Build batches without repeated target labels.
    pub dedup_batch_labels: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: FULL_SCALE_BATCH,
            epochs: 100,
            seed: 0,
            adamw: AdamWConfig::default(),
            loss: LossConfig::default(),
            eval_every: 10,
            max_skipped_steps: 100,
            dedup_batch_labels: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be positive".into()));
        }
        self.loss.validate()
    }
}

/// Batch size to use when none was given: the full-scale size unless the
/// dataset is too small to fill ten such batches.
pub fn default_batch_size(triplet_count: usize) -> usize {
    if triplet_count < 10 * FULL_SCALE_BATCH {
        DESK_SCALE_BATCH
    } else {
        FULL_SCALE_BATCH
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub dataset_fingerprint: String,
    pub history: Vec<EpochRecord>,
    pub skipped_steps: u64,
}

impl RunManifest {
    fn new(stage: &str, cfg: &TrainConfig, extra: serde_json::Value, fingerprint: String) -> Self {
        let mut config = serde_json::to_value(cfg).expect("config serializes");
        if let (Some(obj), serde_json::Value::Object(more)) = (config.as_object_mut(), extra) {
            obj.extend(more);
        }
        RunManifest {
            stage: stage.into(),
            config_hash: crate::checkpoint::config_hash(&config),
            config,
            seed: cfg.seed,
            dataset_fingerprint: fingerprint,
            history: Vec::new(),
            skipped_steps: 0,
        }
    }

    fn push(&mut self, record: EpochRecord) {
        self.history.push(record);
    }

    /// `epoch,loss[,metric...]` with one row per epoch.
    pub fn metrics_csv(&self) -> String {
        let names: Vec<&String> = {
            let mut set = std::collections::BTreeSet::new();
            for r in &self.history {
                set.extend(r.metrics.keys());
            }
            let mut v: Vec<&String> = set.into_iter().collect();
            v.sort_by_key(|n| natural_key(n));
            v
        };
        let mut out = String::from("epoch,loss");
        for n in &names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for r in &self.history {
            out.push_str(&format!("{},{:.10}", r.epoch, r.loss));
            for n in &names {
                out.push(',');
                if let Some(v) = r.metrics.get(*n) {
                    out.push_str(&format!("{v:.10}"));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// `map@5` sorts before `map@10`.
fn natural_key(name: &str) -> (String, u64) {
    let digits = name.len() - name.trim_end_matches(|c: char| c.is_ascii_digit()).len();
    let (stem, num) = name.split_at(name.len() - digits);
    (stem.to_string(), num.parse().unwrap_or(0))
}

fn epoch_batches(order: &[usize], batch: usize) -> Vec<Vec<usize>> {
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

/// Greedy batches in which no target label repeats; items that would repeat
/// a label wait for a later batch.
fn dedup_batches(order: &[usize], batch: usize, label_of: &[Option<&str>]) -> Vec<Vec<usize>> {
    let mut pending: Vec<usize> = order.to_vec();
    let mut out = Vec::new();
    while !pending.is_empty() {
        let mut cur = Vec::with_capacity(batch);
        let mut labels: HashSet<&str> = HashSet::new();
        let mut rest = Vec::with_capacity(pending.len());
        for &i in &pending {
            let fits = cur.len() < batch
                && match label_of[i] {
                    Some(l) => labels.insert(l),
                    None => true,
                };
            if fits {
                cur.push(i);
            } else {
                rest.push(i);
            }
        }
        out.push(cur);
        pending = rest;
    }
    out
}

fn check_skips(state: &AdamWState, cfg: &TrainConfig) -> Result<()> {
    if state.skipped() > cfg.max_skipped_steps {
        return Err(Error::Numeric(format!(
            "{} optimizer steps skipped (limit {})",
            state.skipped(),
            cfg.max_skipped_steps
        )));
    }
    Ok(())
}

/// Train the pooling classifier on frame-sequence embeddings. `labels` maps
/// clip id to a class in `0..classes`.
pub fn train_stage1(
    frames: &EmbeddingTable,
    labels: &HashMap<String, usize>,
    classes: usize,
    pooling: Pooling,
    cfg: &TrainConfig,
) -> Result<(ClassifierHead, RunManifest)> {
    cfg.validate()?;
    if frames.is_empty() {
        return Err(Error::Validation("no clips to train on".into()));
    }
    let mut targets = Vec::with_capacity(frames.len());
    for r in frames.records() {
        let y = *labels
            .get(r.id())
            .ok_or_else(|| Error::Validation(format!("clip {} has no class label", r.id())))?;
        if y >= classes {
            return Err(Error::Validation(format!(
                "clip {} has class {y}, expected < {classes}",
                r.id()
            )));
        }
        targets.push(y);
    }
    if targets.iter().collect::<HashSet<_>>().len() < 2 {
        return Err(Error::Validation(
            "stage one needs at least two classes in the data".into(),
        ));
    }

    let mut head = ClassifierHead::init(frames.dim(), classes, pooling, cfg.seed)?;
    let pooled = par::try_map(frames.records(), |r| {
        let rows: Vec<Vec<f64>> = r
            .frame_rows()
            .map(|row| row.iter().map(|&x| x as f64).collect())
            .collect();
        head.pool(&rows)
    })?;

    let fingerprint = sha256_hex(format!("{}:{:?}", frames.checksum()?, targets).as_bytes());
    let extra = serde_json::json!({ "classes": classes, "pooling": pooling });
    let mut manifest = RunManifest::new("stage1", cfg, extra, fingerprint);
    let mut state = AdamWState::new(&head);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let batch = cfg.batch_size.min(pooled.len());
    let mut order: Vec<usize> = (0..pooled.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut losses = Vec::new();
        for idx in epoch_batches(&order, batch) {
            let xs: Vec<Vec<f64>> = idx.iter().map(|&i| pooled[i].clone()).collect();
            let ys: Vec<usize> = idx.iter().map(|&i| targets[i]).collect();
            let (loss, grad) = classification_loss_and_grad(&head, &xs, &ys)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}")));
            }
            adamw_step(&mut head, &grad, &mut state, cfg.lr, &cfg.adamw);
            check_skips(&state, cfg)?;
            losses.push(loss);
        }
        let mut metrics = BTreeMap::new();
        metrics.insert("train_accuracy".into(), accuracy(&head, &pooled, &targets)?);
        manifest.push(EpochRecord {
            epoch,
            loss: losses.iter().sum::<f64>() / losses.len() as f64,
            metrics,
        });
    }
    manifest.skipped_steps = state.skipped();
    Ok((head, manifest))
}

/// Fraction of pooled inputs whose arg-max class matches the label.
pub fn accuracy(head: &ClassifierHead, pooled: &[Vec<f64>], targets: &[usize]) -> Result<f64> {
    let hits = par::try_map(pooled, |x| {
        let p = softmax(&head.logits(x)?);
        let best = p
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
            .0;
        Ok::<_, Error>(best)
    })?;
    let correct = hits.iter().zip(targets).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / targets.len().max(1) as f64)
}

pub type EvalHook<'a> = dyn Fn(&FusionParams) -> Result<BTreeMap<String, f64>> + 'a;

/// Train projection and fusion layers with in-batch contrastive negatives.
/// Base embedding tables are only read.
pub fn train_stage2(
    triplets: &[Triplet],
    video: &EmbeddingTable,
    text: &EmbeddingTable,
    params: FusionParams,
    cfg: &TrainConfig,
    target_labels: Option<&HashMap<String, String>>,
    eval: Option<&EvalHook<'_>>,
) -> Result<(FusionParams, RunManifest)> {
    cfg.validate()?;
    if triplets.is_empty() {
        return Err(Error::Validation("no training triplets".into()));
    }
    let pcfg = params.config();
    if video.dim() != pcfg.d_video || text.dim() != pcfg.d_text {
        return Err(Error::Shape(format!(
            "tables have dims video={} text={}, model expects {} / {}",
            video.dim(),
            text.dim(),
            pcfg.d_video,
            pcfg.d_text
        )));
    }

    let video_vecs: Vec<Vec<f64>> = video.records().iter().map(|r| r.vector_f64()).collect();
    let text_vecs: Vec<Vec<f64>> = text.records().iter().map(|r| r.vector_f64()).collect();
    let resolve = |table: &EmbeddingTable, id: &str| {
        table
            .position(id)
            .ok_or_else(|| Error::Lookup(format!("triplet references unknown id {id:?}")))
    };
    let samples: Vec<(usize, usize, usize)> = triplets
        .iter()
        .map(|t| {
            Ok((
                resolve(video, &t.query_clip_id)?,
                resolve(text, &t.modification_text)?,
                resolve(video, &t.target_clip_id)?,
            ))
        })
        .collect::<Result<_>>()?;

    let batch = if cfg.batch_size > samples.len() {
        log::warn!(
            "batch size {} exceeds {} triplets; training on a single smaller batch",
            cfg.batch_size,
            samples.len()
        );
        samples.len()
    } else {
        cfg.batch_size
    };
    let label_of: Vec<Option<&str>> = match (cfg.dedup_batch_labels, target_labels) {
        (true, Some(map)) => triplets
            .iter()
            .map(|t| map.get(&t.target_clip_id).map(String::as_str))
            .collect(),
        (true, None) => return Err(Error::Config("label-deduplicated batches need clip labels".into())),
        (false, _) => Vec::new(),
    };

    let fingerprint = sha256_hex(
        format!(
            "{}:{}:{}",
            sha256_hex(&to_jsonl(triplets)?),
            video.checksum()?,
            text.checksum()?
        )
        .as_bytes(),
    );
    let extra = serde_json::json!({ "model": pcfg });
    let mut manifest = RunManifest::new("stage2", cfg, extra, fingerprint);
    let mut params = params;
    let mut state = AdamWState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let batches = if cfg.dedup_batch_labels {
            dedup_batches(&order, batch, &label_of)
        } else {
            epoch_batches(&order, batch)
        };
        let mut losses = Vec::with_capacity(batches.len());
        for idx in batches {
            let items: Vec<ContrastiveSample<'_>> = idx
                .iter()
                .map(|&k| {
                    let (q, m, t) = samples[k];
                    ContrastiveSample {
                        query: &video_vecs[q],
                        text: &text_vecs[m],
                        target: &video_vecs[t],
                    }
                })
                .collect();
            let (loss, grad) = contrastive_loss_and_grad(&params, &items, &cfg.loss)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}")));
            }
            adamw_step(&mut params, &grad, &mut state, cfg.lr, &cfg.adamw);
            check_skips(&state, cfg)?;
            losses.push(loss);
        }
        let mut metrics = BTreeMap::new();
        if let Some(hook) = eval {
            if epoch % cfg.eval_every.max(1) == 0 || epoch == cfg.epochs {
                metrics = hook(&params)?;
            }
        }
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        log::info!("stage2 epoch {epoch}: loss {mean:.6}");
        manifest.push(EpochRecord {
            epoch,
            loss: mean,
            metrics,
        });
    }
    manifest.skipped_steps = state.skipped();
    if !params.all_finite() {
        return Err(Error::Numeric("parameters became non-finite".into()));
    }
    Ok((params, manifest))
}
