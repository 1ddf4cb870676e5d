//! Fine-grained label space and similar-label pair discovery.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, EmbeddingTable};
use crate::error::{Error, Result};
use crate::par;

pub const DEFAULT_PAIR_THRESHOLD: f64 = 0.90;

/// Label key. Accepts integers or strings in JSON; integer-looking keys
/// order numerically, everything else lexicographically after them.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "RawLabelId", into = "String")]
pub struct LabelId(String);

#[derive(Deserialize)]
#[serde(untagged)]
enum RawLabelId {
    Int(i64),
    Str(String),
}

impl From<RawLabelId> for LabelId {
    fn from(raw: RawLabelId) -> Self {
        match raw {
            RawLabelId::Int(i) => LabelId(i.to_string()),
            RawLabelId::Str(s) => LabelId(s),
        }
    }
}

impl From<LabelId> for String {
    fn from(id: LabelId) -> String {
        id.0
    }
}

impl LabelId {
    pub fn new(s: impl Into<String>) -> Self {
        LabelId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn numeric(&self) -> Option<i64> {
        self.0.parse().ok()
    }
}

impl Ord for LabelId {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self.numeric(), other.numeric()) {
            (Some(a), Some(b)) => a.cmp(&b).then_with(|| self.0.cmp(&other.0)),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => self.0.cmp(&other.0),
        }
    }
}

impl PartialOrd for LabelId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for LabelId {
    fn from(s: &str) -> Self {
        LabelId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceDataset {
    Gym,
    Diving,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub label_id: LabelId,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_tag: Option<String>,
    pub source_dataset: SourceDataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: String,
    pub label_id: LabelId,
    pub source_video_id: String,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeKind {
    Temporal,
    Event,
}

/// Directed pair of similar labels. `change_kind` is filled in by
/// [`classify_pairs`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelPair {
    pub src_label: LabelId,
    pub dst_label: LabelId,
    pub similarity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub change_kind: Option<ChangeKind>,
}

/// Manual-verification override for an unordered pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOverride {
    pub src: LabelId,
    pub dst: LabelId,
    pub keep: bool,
}

const GYM_EVENTS: &[(&str, &str)] = &[
    ("vault", "VT"),
    ("floor exercise", "FX"),
    ("floor", "FX"),
    ("balance beam", "BB"),
    ("beam", "BB"),
    ("uneven bars", "UB"),
    ("uneven bar", "UB"),
];

const DIVE_FAMILIES: &[&str] = &[
    "Forward",
    "Back",
    "Reverse",
    "Inward",
    "Arm.Forward",
    "Arm.Back",
    "Arm.Reverse",
];

/// Event tag and the caption text that follows it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedCaption {
    pub event_tag: String,
    pub remainder: String,
}

/// Split a caption into its event tag and remainder. Gym captions lead with a
/// parenthesized apparatus token; diving captions with a takeoff family.
pub fn parse_caption(caption: &str, dataset: SourceDataset) -> Option<ParsedCaption> {
    let caption = caption.trim();
    match dataset {
        SourceDataset::Gym => {
            let rest = caption.strip_prefix('(')?;
            let close = rest.find(')')?;
            let token = rest[..close].trim();
            let lower = token.to_lowercase();
            let tag = GYM_EVENTS
                .iter()
                .find(|(name, _)| *name == lower)
                .map(|(_, abbr)| abbr.to_string())
                .unwrap_or_else(|| token.to_uppercase());
            if tag.is_empty() {
                return None;
            }
            Some(ParsedCaption {
                event_tag: tag,
                remainder: rest[close + 1..].trim().to_string(),
            })
        }
        SourceDataset::Diving => {
            let (head, rest) = caption.split_once(',').unwrap_or((caption, ""));
            let head = head.trim();
            let family = DIVE_FAMILIES.iter().find(|f| f.eq_ignore_ascii_case(head))?;
            Some(ParsedCaption {
                event_tag: family.to_string(),
                remainder: rest.trim().to_string(),
            })
        }
    }
}

fn canonical(text: &str) -> String {
    let lowered = text.trim().trim_end_matches('.').to_lowercase();
    lowered.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Label catalog indexed by key, with captions pre-parsed.
#[derive(Debug, Clone)]
pub struct LabelStore {
    labels: BTreeMap<LabelId, (LabelRecord, ParsedCaption)>,
}

impl LabelStore {
    pub fn new(labels: &[LabelRecord]) -> Result<Self> {
        let mut map = BTreeMap::new();
        for label in labels {
            if label.caption.trim().is_empty() {
                return Err(Error::Validation(format!(
                    "label {} has an empty caption",
                    label.label_id
                )));
            }
            let parsed = match &label.event_tag {
                Some(tag) => {
                    let remainder = parse_caption(&label.caption, label.source_dataset)
                        .map(|p| p.remainder)
                        .unwrap_or_else(|| label.caption.trim().to_string());
                    ParsedCaption {
                        event_tag: tag.clone(),
                        remainder,
                    }
                }
                None => parse_caption(&label.caption, label.source_dataset).ok_or_else(|| {
                    Error::Validation(format!(
                        "label {}: cannot derive an event tag from {:?}",
                        label.label_id, label.caption
                    ))
                })?,
            };
            if map.insert(label.label_id.clone(), (label.clone(), parsed)).is_some() {
                return Err(Error::Validation(format!("duplicate label id {}", label.label_id)));
            }
        }
        Ok(LabelStore { labels: map })
    }

    pub fn get(&self, id: &LabelId) -> Option<&LabelRecord> {
        self.labels.get(id).map(|(r, _)| r)
    }

    pub fn require(&self, id: &LabelId) -> Result<&LabelRecord> {
        self.get(id).ok_or_else(|| Error::Lookup(format!("unknown label {id}")))
    }

    pub fn parsed(&self, id: &LabelId) -> Result<&ParsedCaption> {
        self.labels
            .get(id)
            .map(|(_, p)| p)
            .ok_or_else(|| Error::Lookup(format!("unknown label {id}")))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &LabelRecord> {
        self.labels.values().map(|(r, _)| r)
    }

    /// Contiguous class index per label, in key order.
    pub fn class_indices(&self) -> BTreeMap<LabelId, usize> {
        self.labels.keys().cloned().enumerate().map(|(i, k)| (k, i)).collect()
    }
}

/// All ordered pairs `(a, b)`, `a != b`, whose caption embeddings have
/// cosine at least `threshold`, sorted by source then destination key.
pub fn pair_labels(
    labels: &[LabelRecord],
    caption_embeddings: &EmbeddingTable,
    threshold: f64,
) -> Result<Vec<LabelPair>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("pair threshold {threshold} outside (0, 1)")));
    }
    let mut keyed: Vec<(&LabelId, Vec<f64>)> = labels
        .iter()
        .map(|l| {
            caption_embeddings
                .get(l.label_id.as_str())
                .map(|r| (&l.label_id, r.vector_f64()))
                .ok_or_else(|| Error::Lookup(format!("no caption embedding for label {}", l.label_id)))
        })
        .collect::<Result<_>>()?;
    keyed.sort_by(|a, b| a.0.cmp(b.0));
    if let Some(w) = keyed.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Validation(format!("duplicate label id {}", w[0].0)));
    }

    let per_src = par::try_map(&keyed, |(src, u)| {
        let mut out = Vec::new();
        for (dst, v) in &keyed {
            if src == dst {
                continue;
            }
            let s = cosine(u, v)?;
            if s >= threshold {
                out.push(LabelPair {
                    src_label: (*src).clone(),
                    dst_label: (*dst).clone(),
                    similarity: s,
                    change_kind: None,
                });
            }
        }
        Ok::<_, Error>(out)
    })?;
    Ok(per_src.into_iter().flatten().collect())
}

/// Temporal if the event tags match and the remainders differ; event if the
/// tags differ and the remainders match. `Ok(None)` when both differ.
pub fn classify_pair(pair: &LabelPair, labels: &LabelStore) -> Result<Option<ChangeKind>> {
    let a = labels.parsed(&pair.src_label)?;
    let b = labels.parsed(&pair.dst_label)?;
    let same_tag = a.event_tag.eq_ignore_ascii_case(&b.event_tag);
    let same_rest = canonical(&a.remainder) == canonical(&b.remainder);
    match (same_tag, same_rest) {
        (true, true) => Err(Error::InvalidPair {
            src: pair.src_label.to_string(),
            dst: pair.dst_label.to_string(),
            reason: "labels are identical in event tag and sub-action".into(),
        }),
        (true, false) => Ok(Some(ChangeKind::Temporal)),
        (false, true) => Ok(Some(ChangeKind::Event)),
        (false, false) => Ok(None),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedPair {
    pub pair: LabelPair,
    pub reason: String,
}

/// Classify every pair; keep the classifiable ones and report the rest.
pub fn classify_pairs(pairs: Vec<LabelPair>, labels: &LabelStore) -> Result<(Vec<LabelPair>, Vec<DroppedPair>)> {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for mut pair in pairs {
        match classify_pair(&pair, labels) {
            Ok(Some(kind)) => {
                pair.change_kind = Some(kind);
                kept.push(pair);
            }
            Ok(None) => {
                log::info!(
                    "dropping pair {} -> {}: event tag and sub-action both differ",
                    pair.src_label,
                    pair.dst_label
                );
                dropped.push(DroppedPair {
                    pair,
                    reason: "event tag and sub-action both differ".into(),
                });
            }
            Err(Error::InvalidPair { reason, .. }) => {
                log::warn!("dropping pair {} -> {}: {reason}", pair.src_label, pair.dst_label);
                dropped.push(DroppedPair { pair, reason });
            }
            Err(e) => return Err(e),
        }
    }
    Ok((kept, dropped))
}

/// Apply manual keep/drop decisions. Decisions are unordered: they affect
/// both directions. Kept pairs missing from `pairs` are added with their
/// measured similarity.
pub fn apply_overrides(
    pairs: Vec<LabelPair>,
    overrides: &[PairOverride],
    caption_embeddings: &EmbeddingTable,
) -> Result<Vec<LabelPair>> {
    let unordered = |a: &LabelId, b: &LabelId| {
        if a <= b {
            (a.clone(), b.clone())
        } else {
            (b.clone(), a.clone())
        }
    };
    let deny: BTreeSet<_> = overrides
        .iter()
        .filter(|o| !o.keep)
        .map(|o| unordered(&o.src, &o.dst))
        .collect();
    let mut out: Vec<LabelPair> = pairs
        .into_iter()
        .filter(|p| !deny.contains(&unordered(&p.src_label, &p.dst_label)))
        .collect();
    let mut present: BTreeSet<(LabelId, LabelId)> =
        out.iter().map(|p| (p.src_label.clone(), p.dst_label.clone())).collect();
    for o in overrides.iter().filter(|o| o.keep) {
        if o.src == o.dst {
            return Err(Error::InvalidPair {
                src: o.src.to_string(),
                dst: o.dst.to_string(),
                reason: "override pairs a label with itself".into(),
            });
        }
        let u = caption_embeddings.require(o.src.as_str())?.vector_f64();
        let v = caption_embeddings.require(o.dst.as_str())?.vector_f64();
        let s = cosine(&u, &v)?;
        for (a, b) in [(&o.src, &o.dst), (&o.dst, &o.src)] {
            if present.insert((a.clone(), b.clone())) {
                out.push(LabelPair {
                    src_label: a.clone(),
                    dst_label: b.clone(),
                    similarity: s,
                    change_kind: None,
                });
            }
        }
    }
    out.sort_by(|a, b| {
        a.src_label
            .cmp(&b.src_label)
            .then_with(|| a.dst_label.cmp(&b.dst_label))
    });
    Ok(out)
}
