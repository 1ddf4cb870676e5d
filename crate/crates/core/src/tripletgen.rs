//! Triplets and multi-ground-truth test queries from label pairs.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::modification::{generate_modification, ModificationGenerator};
use crate::par;
use crate::taxonomy::{
    apply_overrides, classify_pairs, pair_labels, ChangeKind, ClipRecord, DroppedPair, LabelId, LabelPair, LabelRecord,
    LabelStore, PairOverride,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Train,
    Test,
}

/// Disjoint train/test sets of source videos.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_video_ids: BTreeSet<String>,
    pub test_video_ids: BTreeSet<String>,
    pub seed: u64,
}

impl SplitPlan {
    pub fn partition_of(&self, video_id: &str) -> Option<Partition> {
        if self.train_video_ids.contains(video_id) {
            Some(Partition::Train)
        } else if self.test_video_ids.contains(video_id) {
            Some(Partition::Test)
        } else {
            None
        }
    }

    pub fn clips_in<'a>(&self, clips: &'a [ClipRecord], part: Partition) -> Vec<&'a ClipRecord> {
        clips
            .iter()
            .filter(|c| self.partition_of(&c.source_video_id) == Some(part))
            .collect()
    }
}

/// Split source videos so no long-form video contributes to both sides.
pub fn split_by_source_video(clips: &[ClipRecord], test_fraction: f64, seed: u64) -> Result<SplitPlan> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    let videos: BTreeSet<&str> = clips.iter().map(|c| c.source_video_id.as_str()).collect();
    let n = videos.len();
    if n < 2 {
        return Err(Error::Validation(format!(
            "need at least 2 source videos to split, found {n}"
        )));
    }
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<&str> = videos.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (test, train) = order.split_at(n_test);
    Ok(SplitPlan {
        train_video_ids: train.iter().map(|s| s.to_string()).collect(),
        test_video_ids: test.iter().map(|s| s.to_string()).collect(),
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub query_clip_id: String,
    pub modification_text: String,
    pub target_clip_id: String,
    pub change_kind: ChangeKind,
    pub partition: Partition,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestQuery {
    pub query_id: String,
    pub query_clip_id: String,
    pub modification_text: String,
    pub gt_target_ids: Vec<String>,
    pub target_label_id: LabelId,
}

fn clips_by_label(clips: &[ClipRecord]) -> BTreeMap<&LabelId, Vec<&ClipRecord>> {
    let mut by_label: BTreeMap<&LabelId, Vec<&ClipRecord>> = BTreeMap::new();
    for c in clips {
        by_label.entry(&c.label_id).or_default().push(c);
    }
    for v in by_label.values_mut() {
        v.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    }
    by_label
}

pub fn validate_clips(clips: &[ClipRecord], labels: Option<&LabelStore>) -> Result<()> {
    let mut seen = HashSet::new();
    for c in clips {
        if !(c.duration_s > 0.0) || !c.duration_s.is_finite() {
            return Err(Error::Validation(format!(
                "clip {} has non-positive duration {}",
                c.clip_id, c.duration_s
            )));
        }
        if !seen.insert(c.clip_id.as_str()) {
            return Err(Error::Validation(format!("duplicate clip id {}", c.clip_id)));
        }
        if let Some(store) = labels {
            if store.get(&c.label_id).is_none() {
                return Err(Error::Lookup(format!(
                    "clip {} references unknown label {}",
                    c.clip_id, c.label_id
                )));
            }
        }
    }
    Ok(())
}

/// Every same-partition (query with label A, target with label B) combination
/// for each pair A -> B, deduplicated on (query, text, target).
pub fn enumerate_triplets(
    pairs: &[LabelPair],
    clips: &[ClipRecord],
    plan: &SplitPlan,
    mods: &HashMap<(LabelId, LabelId), String>,
) -> Result<Vec<Triplet>> {
    validate_clips(clips, None)?;
    if let Some(c) = clips.iter().find(|c| plan.partition_of(&c.source_video_id).is_none()) {
        return Err(Error::Validation(format!(
            "clip {} comes from video {} which the split plan does not cover",
            c.clip_id, c.source_video_id
        )));
    }
    let by_label = clips_by_label(clips);
    let per_pair = par::try_map(pairs, |pair| {
        let text = mods
            .get(&(pair.src_label.clone(), pair.dst_label.clone()))
            .ok_or_else(|| {
                Error::Lookup(format!(
                    "no modification text for pair {} -> {}",
                    pair.src_label, pair.dst_label
                ))
            })?;
        let kind = pair.change_kind.ok_or_else(|| Error::InvalidPair {
            src: pair.src_label.to_string(),
            dst: pair.dst_label.to_string(),
            reason: "pair has not been classified".into(),
        })?;
        let empty = Vec::new();
        let queries = by_label.get(&pair.src_label).unwrap_or(&empty);
        let targets = by_label.get(&pair.dst_label).unwrap_or(&empty);
        let mut out = Vec::new();
        for q in queries {
            let Some(pq) = plan.partition_of(&q.source_video_id) else {
                continue;
            };
            for t in targets {
                if q.clip_id == t.clip_id || plan.partition_of(&t.source_video_id) != Some(pq) {
                    continue;
                }
                out.push(Triplet {
                    query_clip_id: q.clip_id.clone(),
                    modification_text: text.clone(),
                    target_clip_id: t.clip_id.clone(),
                    change_kind: kind,
                    partition: pq,
                });
            }
        }
        Ok::<_, Error>(out)
    })?;

    let mut seen: HashSet<(String, String, String)> = HashSet::new();
    let mut triplets = Vec::new();
    for t in per_pair.into_iter().flatten() {
        let key = (
            t.query_clip_id.clone(),
            t.modification_text.clone(),
            t.target_clip_id.clone(),
        );
        if seen.insert(key) {
            triplets.push(t);
        }
    }
    Ok(triplets)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedQuery {
    pub query_clip_id: String,
    pub modification_text: String,
    pub reason: String,
}

/// Merge test triplets into queries whose ground truth is every gallery clip
/// carrying the target label (minus the query clip itself).
pub fn build_test_queries(test_triplets: &[Triplet], gallery: &[ClipRecord]) -> (Vec<TestQuery>, Vec<DroppedQuery>) {
    let label_of: HashMap<&str, &LabelId> = gallery.iter().map(|c| (c.clip_id.as_str(), &c.label_id)).collect();
    let by_label = clips_by_label(gallery);

    let mut order: Vec<(String, String, Option<LabelId>)> = Vec::new();
    let mut seen = HashSet::new();
    for t in test_triplets {
        let label = label_of.get(t.target_clip_id.as_str()).map(|l| (*l).clone());
        let key = (t.query_clip_id.clone(), t.modification_text.clone(), label);
        if seen.insert(key.clone()) {
            order.push(key);
        }
    }

    let mut queries = Vec::new();
    let mut dropped = Vec::new();
    for (query, text, label) in order {
        let gt: Vec<String> = label
            .as_ref()
            .and_then(|l| by_label.get(l))
            .map(|clips| {
                clips
                    .iter()
                    .filter(|c| c.clip_id != query)
                    .map(|c| c.clip_id.clone())
                    .collect()
            })
            .unwrap_or_default();
        match label {
            Some(label) if !gt.is_empty() => queries.push(TestQuery {
                query_id: format!("q{:05}", queries.len()),
                query_clip_id: query,
                modification_text: text,
                gt_target_ids: gt,
                target_label_id: label,
            }),
            _ => {
                log::info!("dropping query {query} ({text:?}): target label absent from test gallery");
                dropped.push(DroppedQuery {
                    query_clip_id: query,
                    modification_text: text,
                    reason: "target label absent from test gallery".into(),
                });
            }
        }
    }
    (queries, dropped)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl Summary {
    fn of(values: impl IntoIterator<Item = f64>) -> Option<Summary> {
        let mut n = 0usize;
        let (mut min, mut max, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for v in values {
            n += 1;
            min = min.min(v);
            max = max.max(v);
            sum += v;
        }
        (n > 0).then(|| Summary {
            min,
            mean: sum / n as f64,
            max,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub triplet_count: usize,
    pub query_count: usize,
    pub mean_gt_per_query: f64,
    pub label_count: usize,
    pub modification_words: Summary,
    pub clip_duration_s: Summary,
}

pub fn dataset_stats(
    triplets: &[Triplet],
    queries: &[TestQuery],
    clips: &[ClipRecord],
    mods: &[String],
) -> Result<Stats> {
    let modification_words = Summary::of(mods.iter().map(|m| m.split_whitespace().count() as f64))
        .ok_or_else(|| Error::Validation("no modification texts to summarize".into()))?;
    let clip_duration_s = Summary::of(clips.iter().map(|c| c.duration_s))
        .ok_or_else(|| Error::Validation("no clips to summarize".into()))?;
    let gt_total: usize = queries.iter().map(|q| q.gt_target_ids.len()).sum();
    let mean_gt_per_query = if queries.is_empty() {
        0.0
    } else {
        gt_total as f64 / queries.len() as f64
    };
    let label_count = clips.iter().map(|c| &c.label_id).collect::<HashSet<_>>().len();
    Ok(Stats {
        triplet_count: triplets.len(),
        query_count: queries.len(),
        mean_gt_per_query,
        label_count,
        modification_words,
        clip_duration_s,
    })
}

/// Published statistics of the full-scale TF-CoVR release.
pub const REFERENCE_STATS: &[(&str, &str)] = &[
    ("triplets (train)", "180K"),
    ("test queries", "473"),
    ("mean targets / query", "3.94"),
    ("labels", "306"),
    ("modification words", "2 / 6.11 / 19"),
    ("clip duration (s)", "0.03 / 1.90 / 29.00"),
];

impl Stats {
    pub fn to_table(&self, with_reference: bool) -> String {
        let rows = [
            ("triplets (train)", self.triplet_count.to_string()),
            ("test queries", self.query_count.to_string()),
            ("mean targets / query", format!("{:.2}", self.mean_gt_per_query)),
            ("labels", self.label_count.to_string()),
            (
                "modification words",
                format!(
                    "{:.0} / {:.2} / {:.0}",
                    self.modification_words.min, self.modification_words.mean, self.modification_words.max
                ),
            ),
            (
                "clip duration (s)",
                format!(
                    "{:.2} / {:.2} / {:.2}",
                    self.clip_duration_s.min, self.clip_duration_s.mean, self.clip_duration_s.max
                ),
            ),
        ];
        let mut out = String::new();
        if with_reference {
            let _ = writeln!(
                out,
                "{:<22} {:>22} {:>22}",
                "statistic", "value", "full-scale reference"
            );
            for ((name, value), (_, reference)) in rows.iter().zip(REFERENCE_STATS) {
                let _ = writeln!(out, "{name:<22} {value:>22} {reference:>22}");
            }
        } else {
            let _ = writeln!(out, "{:<22} {:>22}", "statistic", "value");
            for (name, value) in &rows {
                let _ = writeln!(out, "{name:<22} {value:>22}");
            }
        }
        out
    }
}

/// Modification text chosen for one directed pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairModification {
    pub src: LabelId,
    pub dst: LabelId,
    pub change_kind: ChangeKind,
    pub text: String,
    pub flagged: bool,
}

#[derive(Debug, Clone)]
pub struct BuildConfig {
    pub threshold: f64,
    pub test_fraction: f64,
    pub split_seed: u64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            threshold: crate::taxonomy::DEFAULT_PAIR_THRESHOLD,
            test_fraction: 0.2,
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub pairs: Vec<LabelPair>,
    pub dropped_pairs: Vec<DroppedPair>,
    pub modifications: Vec<PairModification>,
    pub plan: SplitPlan,
    pub train: Vec<Triplet>,
    pub test: Vec<Triplet>,
    pub queries: Vec<TestQuery>,
    pub dropped_queries: Vec<DroppedQuery>,
}

/// Full generation pipeline: pair, classify, describe, split, enumerate, group.
pub fn build_dataset(
    cfg: &BuildConfig,
    labels: &[LabelRecord],
    caption_embeddings: &EmbeddingTable,
    clips: &[ClipRecord],
    generator: &dyn ModificationGenerator,
    overrides: &[PairOverride],
) -> Result<Dataset> {
    let store = LabelStore::new(labels)?;
    validate_clips(clips, Some(&store))?;
    let candidates = pair_labels(labels, caption_embeddings, cfg.threshold)?;
    let candidates = apply_overrides(candidates, overrides, caption_embeddings)?;
    let (pairs, mut dropped_pairs) = classify_pairs(candidates, &store)?;

    let mut kept = Vec::new();
    let mut modifications = Vec::new();
    for pair in pairs {
        match generate_modification(&pair, &store, generator) {
            Ok(m) => {
                modifications.push(PairModification {
                    src: pair.src_label.clone(),
                    dst: pair.dst_label.clone(),
                    change_kind: pair.change_kind.expect("classified"),
                    text: m.text,
                    flagged: m.flagged,
                });
                kept.push(pair);
            }
            Err(Error::InvalidPair { reason, .. }) => dropped_pairs.push(DroppedPair { pair, reason }),
            Err(e) => return Err(e),
        }
    }
    let mods: HashMap<(LabelId, LabelId), String> = modifications
        .iter()
        .map(|m| ((m.src.clone(), m.dst.clone()), m.text.clone()))
        .collect();

    let plan = split_by_source_video(clips, cfg.test_fraction, cfg.split_seed)?;
    let all = enumerate_triplets(&kept, clips, &plan, &mods)?;
    let (train, test): (Vec<_>, Vec<_>) = all.into_iter().partition(|t| t.partition == Partition::Train);
    let gallery: Vec<ClipRecord> = plan.clips_in(clips, Partition::Test).into_iter().cloned().collect();
    let (queries, dropped_queries) = build_test_queries(&test, &gallery);
    Ok(Dataset {
        pairs: kept,
        dropped_pairs,
        modifications,
        plan,
        train,
        test,
        queries,
        dropped_queries,
    })
}
