//! Modification-text generation for label pairs.
//!
//! [`TemplateGenerator`] is deterministic and handles the common substitution
//! styles: turn, twist and somersault counts, apparatus or takeoff family, and
//! body position. Anything it cannot express falls back to a flagged generic
//! `show <delta>.` form. [`MappedGenerator`] serves texts produced elsewhere
//! (for example by an LLM client) from a JSONL mapping and defers to the
//! templates for pairs it does not cover.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::read_jsonl;
use crate::taxonomy::{ChangeKind, LabelId, LabelPair, LabelStore, ParsedCaption, SourceDataset};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Modification {
    pub text: String,
    /// Set when the text came from the generic fallback.
    pub flagged: bool,
}

pub trait ModificationGenerator: Sync {
    fn generate(&self, pair: &LabelPair, labels: &LabelStore) -> Result<Modification>;
}

/// Produce the modification text for a classified pair.
pub fn generate_modification(
    pair: &LabelPair,
    labels: &LabelStore,
    generator: &dyn ModificationGenerator,
) -> Result<Modification> {
    let invalid = |reason: &str| Error::InvalidPair {
        src: pair.src_label.to_string(),
        dst: pair.dst_label.to_string(),
        reason: reason.into(),
    };
    if pair.change_kind.is_none() {
        return Err(invalid("pair has not been classified"));
    }
    let a = labels.require(&pair.src_label)?;
    let b = labels.require(&pair.dst_label)?;
    if normalize_caption(&a.caption) == normalize_caption(&b.caption) {
        return Err(invalid("captions are identical, no delta to describe"));
    }
    let m = generator.generate(pair, labels).map_err(|e| match e {
        Error::Generator { .. } => e,
        other => Error::Generator {
            src: pair.src_label.to_string(),
            dst: pair.dst_label.to_string(),
            reason: other.to_string(),
        },
    })?;
    if m.text.trim().is_empty() {
        return Err(Error::Generator {
            src: pair.src_label.to_string(),
            dst: pair.dst_label.to_string(),
            reason: "generator returned empty text".into(),
        });
    }
    Ok(m)
}

fn normalize_caption(s: &str) -> String {
    s.trim()
        .trim_end_matches('.')
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateGenerator;

const POSITIONS: &[&str] = &[
    "stretched",
    "tucked",
    "piked",
    "straddled",
    "straight",
    "layout",
    "tuck",
    "pike",
    "straddle",
];

const COUNT_UNITS: &[&str] = &[
    "turn",
    "turns",
    "twist",
    "twists",
    "somersault",
    "somersaults",
    "salto",
    "saltos",
];

fn bare(token: &str) -> &str {
    token.trim_matches(|c: char| c == ',' || c == '.' || c == ';')
}

fn is_number(token: &str) -> bool {
    bare(token).parse::<f64>().is_ok()
}

fn gym_temporal(src: &str, dst: &str) -> Option<String> {
    let a: Vec<String> = normalize_caption(src).split(' ').map(String::from).collect();
    let b: Vec<String> = normalize_caption(dst).split(' ').map(String::from).collect();
    if a.len() != b.len() {
        return None;
    }
    let mut positions = Vec::new();
    let mut counts = Vec::new();
    for i in 0..a.len() {
        if a[i] == b[i] {
            continue;
        }
        let (x, y) = (bare(&a[i]), bare(&b[i]));
        if POSITIONS.contains(&x) && POSITIONS.contains(&y) {
            positions.push(y.to_string());
            continue;
        }
        let unit = b.get(i + 1).map(|t| bare(t));
        match unit {
            Some(u) if is_number(x) && is_number(y) && COUNT_UNITS.contains(&u) => {
                let same_unit: Vec<usize> = (0..b.len().saturating_sub(1))
                    .filter(|&j| is_number(&b[j]) && bare(&b[j + 1]) == u)
                    .collect();
                let anchor = if same_unit.last() != Some(&i) && i >= 2 && bare(&b[i - 1]) == "with" {
                    Some(bare(&b[i - 2]).to_string())
                } else {
                    None
                };
                counts.push((anchor, y.to_string(), u.to_string()));
            }
            _ => return None,
        }
    }
    if positions.is_empty() && counts.is_empty() {
        return None;
    }
    let mut text = String::from("show");
    for p in &positions {
        text.push(' ');
        text.push_str(p);
    }
    for (n, (anchor, count, unit)) in counts.iter().enumerate() {
        if n > 0 {
            text.push_str(" and");
        }
        if let Some(anchor) = anchor {
            text.push(' ');
            text.push_str(anchor);
        }
        text.push_str(&format!(" with {count} {unit}"));
    }
    text.push('.');
    Some(text)
}

#[derive(Debug, Default, PartialEq)]
struct DiveParts {
    twists: Option<String>,
    soms: Option<(String, String)>,
    rest: Vec<String>,
}

fn dive_parts(remainder: &str) -> DiveParts {
    let mut parts = DiveParts::default();
    for field in remainder.split(',').map(str::trim).filter(|f| !f.is_empty()) {
        let (count, what) = field.split_once(' ').unwrap_or(("", field));
        if is_number(count) && what.to_lowercase().starts_with("twist") {
            parts.twists = Some(count.to_string());
        } else if is_number(count) && what.to_lowercase().starts_with("soms") {
            let position = what.split_once('.').map(|(_, p)| p.to_string()).unwrap_or_default();
            parts.soms = Some((count.to_string(), position));
        } else {
            parts.rest.push(field.to_lowercase());
        }
    }
    parts
}

fn diving_temporal(src: &str, dst: &str) -> Option<String> {
    let a = dive_parts(src);
    let b = dive_parts(dst);
    if a.rest != b.rest {
        return None;
    }
    let mut changes = Vec::new();
    if a.twists != b.twists {
        changes.push(match &b.twists {
            Some(n) => format!("{n} twists"),
            None => "no twists".to_string(),
        });
    }
    match (&a.soms, &b.soms) {
        (Some((ac, ap)), Some((bc, bp))) if ac != bc || ap != bp => {
            if ap != bp && !bp.is_empty() {
                changes.push(format!("{bc} somersaults {bp}"));
            } else {
                changes.push(format!("{bc} somersaults"));
            }
        }
        (None, Some((bc, _))) => changes.push(format!("{bc} somersaults")),
        (Some(_), None) => return None,
        _ => {}
    }
    if changes.is_empty() {
        return None;
    }
    Some(format!("Show with {}.", changes.join(" and ")))
}

fn dive_family_phrase(family: &str) -> String {
    match family.strip_prefix("Arm.") {
        Some(rest) => format!("armstand {}", rest.to_lowercase()),
        None => family.to_lowercase(),
    }
}

fn fallback(src: &ParsedCaption, dst: &ParsedCaption) -> String {
    let src_tokens: Vec<String> = normalize_caption(&src.remainder)
        .split(' ')
        .map(|t| bare(t).to_string())
        .collect();
    let mut unused = src_tokens.clone();
    let mut delta = Vec::new();
    for tok in normalize_caption(&dst.remainder).split(' ') {
        let t = bare(tok);
        if t.is_empty() {
            continue;
        }
        if let Some(pos) = unused.iter().position(|u| u == t) {
            unused.remove(pos);
        } else {
            delta.push(t.to_string());
        }
    }
    let body = if delta.is_empty() {
        normalize_caption(&dst.remainder)
    } else {
        delta.join(" ")
    };
    if !src.event_tag.eq_ignore_ascii_case(&dst.event_tag) {
        format!("show {body} on {}.", dst.event_tag)
    } else {
        format!("show {body}.")
    }
}

impl ModificationGenerator for TemplateGenerator {
    fn generate(&self, pair: &LabelPair, labels: &LabelStore) -> Result<Modification> {
        let src = labels.parsed(&pair.src_label)?;
        let dst = labels.parsed(&pair.dst_label)?;
        let dataset = labels.require(&pair.dst_label)?.source_dataset;
        let kind = pair.change_kind.ok_or_else(|| Error::InvalidPair {
            src: pair.src_label.to_string(),
            dst: pair.dst_label.to_string(),
            reason: "pair has not been classified".into(),
        })?;
        let templated = match (kind, dataset) {
            (ChangeKind::Event, SourceDataset::Gym) => Some(format!("show on {}.", dst.event_tag)),
            (ChangeKind::Event, SourceDataset::Diving) => {
                Some(format!("Change direction to {}.", dive_family_phrase(&dst.event_tag)))
            }
            (ChangeKind::Temporal, SourceDataset::Gym) => gym_temporal(&src.remainder, &dst.remainder),
            (ChangeKind::Temporal, SourceDataset::Diving) => diving_temporal(&src.remainder, &dst.remainder),
        };
        Ok(match templated {
            Some(text) => Modification { text, flagged: false },
            None => {
                log::warn!(
                    "no template matched {} -> {}; using generic fallback",
                    pair.src_label,
                    pair.dst_label
                );
                Modification {
                    text: fallback(src, dst),
                    flagged: true,
                }
            }
        })
    }
}

/// One externally generated modification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModificationEntry {
    pub src: LabelId,
    pub dst: LabelId,
    pub text: String,
}

/// Serves texts from a pair-to-text mapping, with template fallback.
#[derive(Debug, Clone, Default)]
pub struct MappedGenerator {
    texts: HashMap<(LabelId, LabelId), String>,
    templates: TemplateGenerator,
}

impl MappedGenerator {
    pub fn new(entries: Vec<ModificationEntry>) -> Self {
        let texts = entries
            .into_iter()
            .filter(|e| !e.text.trim().is_empty())
            .map(|e| ((e.src, e.dst), e.text.trim().to_string()))
            .collect();
        MappedGenerator {
            texts,
            templates: TemplateGenerator,
        }
    }

    pub fn from_jsonl(path: &Path) -> Result<Self> {
        Ok(Self::new(read_jsonl(path)?))
    }
}

impl ModificationGenerator for MappedGenerator {
    fn generate(&self, pair: &LabelPair, labels: &LabelStore) -> Result<Modification> {
        match self.texts.get(&(pair.src_label.clone(), pair.dst_label.clone())) {
            Some(text) => Ok(Modification {
                text: text.clone(),
                flagged: false,
            }),
            None => {
                let mut m = self.templates.generate(pair, labels)?;
                m.flagged = true;
                Ok(m)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::{LabelRecord, SourceDataset};

    fn store(labels: &[(&str, &str, SourceDataset)]) -> LabelStore {
        let recs: Vec<LabelRecord> = labels
            .iter()
            .map(|(id, c, d)| LabelRecord {
                label_id: (*id).into(),
                caption: (*c).into(),
                event_tag: None,
                source_dataset: *d,
            })
            .collect();
        LabelStore::new(&recs).unwrap()
    }

    fn classified(a: &str, b: &str, s: &LabelStore) -> LabelPair {
        let mut p = LabelPair {
            src_label: a.into(),
            dst_label: b.into(),
            similarity: 0.97,
            change_kind: None,
        };
        p.change_kind = crate::taxonomy::classify_pair(&p, s).unwrap();
        p
    }

    fn gen(a: &str, b: &str, ds: SourceDataset) -> Modification {
        let s = store(&[("1", a, ds), ("2", b, ds)]);
        let p = classified("1", "2", &s);
        generate_modification(&p, &s, &TemplateGenerator).unwrap()
    }

    use SourceDataset::{Diving, Gym};

    #[test]
    fn turn_count_substitution() {
        let m = gen(
            "(VT) tsukahara stretched with 2 turn.",
            "(VT) tsukahara stretched with 1 turn.",
            Gym,
        );
        assert_eq!(
            m,
            Modification {
                text: "show with 1 turn.".into(),
                flagged: false
            }
        );
        let m = gen(
            "(VT) round-off, flic-flac with 0.5 turn on, stretched salto forward with 1.5 turn off.",
            "(VT) round-off, flic-flac with 0.5 turn on, stretched salto forward with 0.5 turn off.",
            Gym,
        );
        assert_eq!(m.text, "show with 0.5 turn.");
    }

    #[test]
    fn apparatus_substitution() {
        let m = gen(
            "(FX) switch leap with 0.5 turn.",
            "(BB) switch leap with 0.5 turn.",
            Gym,
        );
        assert_eq!(m.text, "show on BB.");
        assert!(!m.flagged);
    }

    #[test]
    fn position_and_count_together() {
        let m = gen(
            "(VT) tsukahara stretched with 2 turn.",
            "(VT) tsukahara tucked with 1 turn.",
            Gym,
        );
        assert_eq!(m.text, "show tucked with 1 turn.");
    }

    #[test]
    fn earlier_count_gets_anchor() {
        let m = gen(
            "(VT) round-off, flic-flac with 0.5 turn on, stretched salto forward with 1.5 turn off.",
            "(VT) round-off, flic-flac with 1 turn on, stretched salto forward with 1.5 turn off.",
            Gym,
        );
        assert_eq!(m.text, "show flic-flac with 1 turn.");
    }

    #[test]
    fn diving_counts() {
        let m = gen(
            "Back, 1.5 Twists, 2.5 Soms.Pike, Entry",
            "Back, 2.5 Twists, 1.5 Soms.Pike, Entry",
            Diving,
        );
        assert_eq!(m.text, "Show with 2.5 twists and 1.5 somersaults.");
        let m = gen("Forward, 3.5 Soms.Pike, Entry", "Forward, 1.5 Soms.Pike, Entry", Diving);
        assert_eq!(m.text, "Show with 1.5 somersaults.");
        let m = gen(
            "Arm.Back, 2.5 Twists, 2 Soms.Pike, Entry",
            "Arm.Back, 1.5 Twists, 2 Soms.Pike, Entry",
            Diving,
        );
        assert_eq!(m.text, "Show with 1.5 twists.");
        let m = gen("Inward, 3.5 Soms.Tuck, Entry", "Forward, 3.5 Soms.Tuck, Entry", Diving);
        assert_eq!(m.text, "Change direction to forward.");
    }

    #[test]
    fn unmatched_change_falls_back_flagged() {
        let m = gen("(FX) stag jump.", "(FX) stag ring jump.", Gym);
        assert!(m.flagged);
        assert_eq!(m.text, "show ring.");
        let m = gen("(FX) switch leap with 0.5 turn.", "(FX) switch leap.", Gym);
        assert!(m.flagged);
        assert_eq!(m.text, "show switch leap.");
    }

    #[test]
    fn identical_captions_rejected() {
        let s = store(&[("1", "(FX) stag jump", Gym), ("2", "(FX) stag jump.", Gym)]);
        let p = LabelPair {
            src_label: "1".into(),
            dst_label: "2".into(),
            similarity: 1.0,
            change_kind: Some(ChangeKind::Temporal),
        };
        assert!(matches!(
            generate_modification(&p, &s, &TemplateGenerator),
            Err(Error::InvalidPair { .. })
        ));
    }

    #[test]
    fn mapped_generator_prefers_mapping() {
        let s = store(&[
            ("1", "(FX) switch leap with 0.5 turn.", Gym),
            ("2", "(BB) switch leap with 0.5 turn.", Gym),
        ]);
        let g = MappedGenerator::new(vec![ModificationEntry {
            src: "1".into(),
            dst: "2".into(),
            text: "Show on Balance Beam".into(),
        }]);
        let fwd = classified("1", "2", &s);
        let back = classified("2", "1", &s);
        assert_eq!(g.generate(&fwd, &s).unwrap().text, "Show on Balance Beam");
        let m = g.generate(&back, &s).unwrap();
        assert_eq!(m.text, "show on FX.");
        assert!(m.flagged);
    }

    struct Failing;
    impl ModificationGenerator for Failing {
        fn generate(&self, _: &LabelPair, _: &LabelStore) -> Result<Modification> {
            Err(Error::Io {
                path: "llm".into(),
                source: std::io::Error::other("rate limited"),
            })
        }
    }

    #[test]
    fn generator_failure_carries_pair_context() {
        let s = store(&[("1", "(FX) stag jump", Gym), ("2", "(BB) stag jump", Gym)]);
        let p = classified("1", "2", &s);
        match generate_modification(&p, &s, &Failing) {
            Err(Error::Generator { src, dst, reason }) => {
                assert_eq!((src.as_str(), dst.as_str()), ("1", "2"));
                assert!(reason.contains("rate limited"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
