//! Gallery ranking and multi-ground-truth metrics (mAP@K, Recall@K).

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::fusion::FusionParams;
use crate::linalg::dot;
use crate::par;
use crate::tripletgen::TestQuery;

pub const DEFAULT_KS: [usize; 4] = [5, 10, 25, 50];

/// Gallery entries sorted by descending score, ties by ascending id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<(String, f64)>,
}

impl RankedList {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(id, _)| id.as_str())
    }
}

/// Unit-normalized gallery vectors ready for repeated ranking.
#[derive(Debug, Clone)]
pub struct GalleryIndex {
    ids: Vec<String>,
    units: Vec<Vec<f64>>,
}

fn unit(v: &[f64]) -> Result<Vec<f64>> {
    let n = dot(v, v).sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Degenerate(format!("cannot rank with a vector of norm {n}")));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

impl GalleryIndex {
    /// Index the given ids (all records when `ids` is `None`), optionally
    /// mapping each vector through `embed` first.
    pub fn build(
        table: &EmbeddingTable,
        ids: Option<&[String]>,
        embed: &(dyn Fn(&[f64]) -> Result<Vec<f64>> + Sync),
    ) -> Result<Self> {
        let ids: Vec<String> = match ids {
            Some(ids) => {
                let mut v = ids.to_vec();
                v.sort();
                v.dedup();
                v
            }
            None => table.ids().map(String::from).collect(),
        };
        let units = par::try_map(&ids, |id| unit(&embed(&table.require(id)?.vector_f64())?))?;
        Ok(GalleryIndex { ids, units })
    }

    pub fn from_table(table: &EmbeddingTable) -> Result<Self> {
        Self::build(table, None, &|v| Ok(v.to_vec()))
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn rank(&self, query_id: &str, z: &[f64], exclude: &HashSet<&str>) -> Result<RankedList> {
        let q = unit(z)?;
        let mut entries: Vec<(String, f64)> = self
            .ids
            .iter()
            .zip(&self.units)
            .filter(|(id, _)| !exclude.contains(id.as_str()))
            .map(|(id, u)| {
                if u.len() != q.len() {
                    return Err(Error::Shape(format!(
                        "query has dim {}, gallery has dim {}",
                        q.len(),
                        u.len()
                    )));
                }
                Ok((id.clone(), dot(&q, u)))
            })
            .collect::<Result<_>>()?;
        if entries.is_empty() {
            return Err(Error::Validation(format!("empty gallery for query {query_id}")));
        }
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(RankedList {
            query_id: query_id.to_string(),
            entries,
        })
    }
}

/// Rank every gallery record by cosine to `z_qm`.
pub fn rank_gallery(z_qm: &[f64], gallery: &EmbeddingTable, exclude: &HashSet<&str>) -> Result<RankedList> {
    GalleryIndex::from_table(gallery)?.rank("query", z_qm, exclude)
}

/// `AP@K = 1/min(K, |gt|) * sum_{k<=K} P(k) rel(k)`.
pub fn average_precision_at_k<'a>(
    ranked: impl IntoIterator<Item = &'a str>,
    gt: &HashSet<&str>,
    k: usize,
) -> Result<f64> {
    if gt.is_empty() {
        return Err(Error::Validation("average precision with empty ground truth".into()));
    }
    if k == 0 {
        return Err(Error::Config("cutoff K must be at least 1".into()));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, id) in ranked.into_iter().take(k).enumerate() {
        if gt.contains(id) {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / k.min(gt.len()) as f64)
}

/// Whether any ground-truth item appears in the top `k`.
pub fn recall_at_k<'a>(ranked: impl IntoIterator<Item = &'a str>, gt: &HashSet<&str>, k: usize) -> Result<bool> {
    if gt.is_empty() {
        return Err(Error::Validation("recall with empty ground truth".into()));
    }
    Ok(ranked.into_iter().take(k).any(|id| gt.contains(id)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryScores {
    pub query_id: String,
    pub ap: Vec<f64>,
    pub hit: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ks: Vec<usize>,
    pub map: Vec<f64>,
    pub recall: Vec<f64>,
    pub gallery_size: usize,
    pub query_count: usize,
    pub per_query: Vec<QueryScores>,
}

impl EvalReport {
    pub fn map_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.map[i])
    }

    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.recall[i])
    }

    /// Percentages in a `mAP@5 mAP@10 ...` row, plus a Recall row.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<10}", "");
        for k in &self.ks {
            let _ = write!(out, " {:>9}", format!("@{k}"));
        }
        out.push('\n');
        for (name, vals) in [("mAP", &self.map), ("Recall", &self.recall)] {
            let _ = write!(out, "{name:<10}");
            for v in vals {
                let _ = write!(out, " {:>9.2}", 100.0 * v);
            }
            out.push('\n');
        }
        let _ = writeln!(out, "queries: {}  gallery: {}", self.query_count, self.gallery_size);
        out
    }
}

/// Mean AP@K and hit-rate Recall@K over queries.
pub fn map_at_k(
    queries: &[TestQuery],
    rankings: &HashMap<String, RankedList>,
    ks: &[usize],
    gallery_size: usize,
) -> Result<EvalReport> {
    if ks.is_empty() {
        return Err(Error::Config("no cutoffs requested".into()));
    }
    let per_query = par::try_map(queries, |q| {
        let ranked = rankings
            .get(&q.query_id)
            .ok_or_else(|| Error::Lookup(format!("no ranking for query {}", q.query_id)))?;
        let gt: HashSet<&str> = q.gt_target_ids.iter().map(String::as_str).collect();
        let mut ap = Vec::with_capacity(ks.len());
        let mut hit = Vec::with_capacity(ks.len());
        for &k in ks {
            ap.push(average_precision_at_k(ranked.ids(), &gt, k)?);
            hit.push(recall_at_k(ranked.ids(), &gt, k)?);
        }
        Ok::<_, Error>(QueryScores {
            query_id: q.query_id.clone(),
            ap,
            hit,
        })
    })?;
    let n = per_query.len().max(1) as f64;
    let map = (0..ks.len())
        .map(|i| per_query.iter().map(|q| q.ap[i]).sum::<f64>() / n)
        .collect();
    let recall = (0..ks.len())
        .map(|i| per_query.iter().filter(|q| q.hit[i]).count() as f64 / n)
        .collect();
    Ok(EvalReport {
        ks: ks.to_vec(),
        map,
        recall,
        gallery_size,
        query_count: queries.len(),
        per_query,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GalleryMode {
    /// Every clip in the test partition.
    All,
    /// Only clips that are a ground-truth target of some query.
    TargetsOnly,
}

impl std::str::FromStr for GalleryMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" | "all-test" => Ok(GalleryMode::All),
            "targets-only" => Ok(GalleryMode::TargetsOnly),
            other => Err(Error::Config(format!("unknown gallery mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    pub gallery: GalleryMode,
    /// Keep the query clip in its own ranking.
    pub include_query: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            ks: DEFAULT_KS.to_vec(),
            gallery: GalleryMode::All,
            include_query: false,
        }
    }
}

/// Compose each query, rank the gallery, and score it.
pub fn evaluate(
    params: &FusionParams,
    queries: &[TestQuery],
    video: &EmbeddingTable,
    text: &EmbeddingTable,
    test_clip_ids: &[String],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let gallery_ids: Vec<String> = match opts.gallery {
        GalleryMode::All => test_clip_ids.to_vec(),
        GalleryMode::TargetsOnly => queries
            .iter()
            .flat_map(|q| q.gt_target_ids.iter().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    let index = GalleryIndex::build(video, Some(&gallery_ids), &|v| params.embed_target(v))?;
    if index.is_empty() {
        return Err(Error::Validation("evaluation gallery is empty".into()));
    }
    let ranked = par::try_map(queries, |q| {
        let zq = video.require(&q.query_clip_id)?.vector_f64();
        let zt = text.require(&q.modification_text)?.vector_f64();
        let z = params.compose(&zq, &zt)?;
        let mut exclude = HashSet::new();
        if !opts.include_query {
            exclude.insert(q.query_clip_id.as_str());
        }
        index.rank(&q.query_id, &z, &exclude)
    })?;
    let rankings: HashMap<String, RankedList> = ranked.into_iter().map(|r| (r.query_id.clone(), r)).collect();
    map_at_k(queries, &rankings, &opts.ks, index.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{EmbeddingKind, EmbeddingRecord};

    fn gt<'a>(ids: &[&'a str]) -> HashSet<&'a str> {
        ids.iter().copied().collect()
    }

    #[test]
    fn hand_case_half() {
        let ranking = ["x", "a", "y", "b", "z", "w"];
        let ap = average_precision_at_k(ranking, &gt(&["a", "b"]), 5).unwrap();
        assert!((ap - 0.5).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_miss() {
        let ranking = ["a", "b", "c", "d"];
        for k in [2, 3, 10] {
            assert_eq!(average_precision_at_k(ranking, &gt(&["a", "b"]), k).unwrap(), 1.0);
        }
        assert_eq!(average_precision_at_k(ranking, &gt(&["d"]), 3).unwrap(), 0.0);
        assert!(average_precision_at_k(ranking, &gt(&[]), 3).is_err());
        assert!(average_precision_at_k(ranking, &gt(&["a"]), 0).is_err());
    }

    #[test]
    fn recall_boundaries() {
        let ranking = ["a", "b", "c"];
        assert!(recall_at_k(ranking, &gt(&["a"]), 1).unwrap());
        assert!(!recall_at_k(ranking, &gt(&["c"]), 2).unwrap());
        assert!(recall_at_k(ranking, &gt(&["c"]), 3).unwrap());
    }

    fn table(rows: &[(&str, Vec<f32>)]) -> EmbeddingTable {
        let recs = rows
            .iter()
            .map(|(id, v)| EmbeddingRecord::new(*id, EmbeddingKind::Video, v.clone()).unwrap())
            .collect();
        EmbeddingTable::from_records(rows[0].1.len(), recs).unwrap()
    }

    #[test]
    fn self_retrieval_and_ties() {
        let t = table(&[
            ("b", vec![0.0, 1.0, 0.0]),
            ("self", vec![0.5, 0.0, 0.5]),
            ("a", vec![0.0, 1.0, 0.0]),
            ("c", vec![0.0, 0.0, -1.0]),
        ]);
        let r = rank_gallery(&[1.0, 0.0, 1.0], &t, &HashSet::new()).unwrap();
        let ids: Vec<&str> = r.ids().collect();
        assert_eq!(ids, ["self", "a", "b", "c"]);
        let r = rank_gallery(&[1.0, 0.0, 1.0], &t, &HashSet::from(["self"])).unwrap();
        assert_eq!(r.entries.len(), 3);
        let all: HashSet<&str> = t.ids().collect();
        assert!(rank_gallery(&[1.0, 0.0, 1.0], &t, &all).is_err());
    }

    #[test]
    fn map_of_single_query_is_its_ap() {
        let q = TestQuery {
            query_id: "q0".into(),
            query_clip_id: "x".into(),
            modification_text: "m".into(),
            gt_target_ids: vec!["a".into(), "b".into()],
            target_label_id: "1".into(),
        };
        let r = RankedList {
            query_id: "q0".into(),
            entries: ["x", "a", "y", "b", "z"].iter().map(|s| (s.to_string(), 0.0)).collect(),
        };
        let rep = map_at_k(&[q.clone()], &HashMap::from([("q0".into(), r)]), &[5], 5).unwrap();
        assert!((rep.map[0] - 0.5).abs() < 1e-15);
        assert_eq!(rep.recall[0], 1.0);
        assert!(map_at_k(&[q], &HashMap::new(), &[5], 5).is_err());
        assert!(rep.to_table().contains("50.00"));
    }
}
