//! Synthetic corpus with a known answer: clustered clip embeddings, paired
//! labels, and modification-text embeddings that point from one cluster
//! center to another.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::embedding::{save_table_with_source, EmbeddingKind, EmbeddingRecord, EmbeddingTable};
use crate::error::{Error, Result};
use crate::io::write_jsonl;
use crate::linalg::{dot, norm};
use crate::modification::{ModificationGenerator, TemplateGenerator};
use crate::taxonomy::{ChangeKind, ClipRecord, LabelId, LabelPair, LabelRecord, LabelStore, SourceDataset};

#[derive(Debug, Clone)]
pub struct FixtureConfig {
    /// Number of labels. Labels `2k` and `2k + 1` form a designated pair.
    pub clusters: usize,
    pub dim: usize,
    pub clips_per_cluster: usize,
    pub videos: usize,
    pub frames_per_clip: usize,
    pub clip_noise: f64,
    pub text_noise: f64,
    pub max_center_cosine: f64,
    pub seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            clusters: 20,
            dim: 64,
            clips_per_cluster: 30,
            videos: 40,
            frames_per_clip: 4,
            clip_noise: 0.04,
            text_noise: 0.05,
            max_center_cosine: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub labels: Vec<LabelRecord>,
    pub clips: Vec<ClipRecord>,
    pub centers: Vec<Vec<f64>>,
    pub captions: EmbeddingTable,
    pub video: EmbeddingTable,
    pub frames: EmbeddingTable,
    pub text: EmbeddingTable,
    /// Directed designated pairs and the modification text of each.
    pub modifications: Vec<(LabelId, LabelId, String)>,
}

fn caption(cluster: usize) -> String {
    let k = cluster / 2;
    if cluster.is_multiple_of(2) {
        format!("(FX) element {k} with {} turn.", k + 1)
    } else {
        format!("(FX) element {k} with {}.5 turn.", k + 1)
    }
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let n = Normal::new(0.0, 1.0).expect("valid");
    loop {
        let v: Vec<f64> = (0..dim).map(|_| n.sample(rng)).collect();
        let l = norm(&v);
        if l > 1e-6 {
            return v.into_iter().map(|x| x / l).collect();
        }
    }
}

fn centers(cfg: &FixtureConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(cfg.clusters);
    let mut attempts = 0usize;
    while out.len() < cfg.clusters {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::Config(format!(
                "could not place {} centers in d={} with cosine < {}",
                cfg.clusters, cfg.dim, cfg.max_center_cosine
            )));
        }
        let c = unit_gaussian(rng, cfg.dim);
        if out.iter().all(|o| dot(o, &c) < cfg.max_center_cosine) {
            out.push(c);
        }
    }
    Ok(out)
}

pub fn generate(cfg: &FixtureConfig) -> Result<Fixture> {
    if cfg.clusters < 2 || !cfg.clusters.is_multiple_of(2) {
        return Err(Error::Config("fixture needs an even number of clusters >= 2".into()));
    }
    if cfg.videos < 2 || cfg.clips_per_cluster == 0 || cfg.frames_per_clip == 0 {
        return Err(Error::Config(
            "fixture needs clips, frames, and at least two videos".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centers = centers(cfg, &mut rng)?;
    let clip_noise = Normal::new(0.0, cfg.clip_noise).map_err(|e| Error::Config(e.to_string()))?;
    let text_noise = Normal::new(0.0, cfg.text_noise).map_err(|e| Error::Config(e.to_string()))?;

    let labels: Vec<LabelRecord> = (0..cfg.clusters)
        .map(|c| LabelRecord {
            label_id: LabelId::new(c.to_string()),
            caption: caption(c),
            event_tag: None,
            source_dataset: SourceDataset::Gym,
        })
        .collect();

    // Pair members share a basis direction and differ by a small offset,
    // cosine (1 - 0.15^2) / (1 + 0.15^2) ~ 0.956; other labels are orthogonal.
    let half = cfg.clusters / 2;
    let mut captions = EmbeddingTable::new(cfg.clusters)?;
    for c in 0..cfg.clusters {
        let mut v = vec![0.0f32; cfg.clusters];
        v[c / 2] = 1.0;
        v[half + c / 2] = if c % 2 == 0 { 0.15 } else { -0.15 };
        captions.push(EmbeddingRecord::new(c.to_string(), EmbeddingKind::Text, v)?)?;
    }

    let mut clips = Vec::new();
    let mut video = EmbeddingTable::new(cfg.dim)?;
    let mut frames = EmbeddingTable::new(cfg.dim)?;
    for (c, center) in centers.iter().enumerate() {
        for j in 0..cfg.clips_per_cluster {
            let id = format!("c{c:02}_{j:03}");
            let base: Vec<f64> = center.iter().map(|x| x + clip_noise.sample(&mut rng)).collect();
            let mut rows = Vec::with_capacity(cfg.frames_per_clip * cfg.dim);
            for _ in 0..cfg.frames_per_clip {
                rows.extend(base.iter().map(|x| (x + clip_noise.sample(&mut rng)) as f32));
            }
            video.push(EmbeddingRecord::new(id.clone(), EmbeddingKind::Video, to_f32(&base))?)?;
            frames.push(EmbeddingRecord::frame_sequence(id.clone(), cfg.dim, rows)?)?;
            let duration: f64 = rng.random_range(0.5..3.0);
            clips.push(ClipRecord {
                clip_id: id,
                label_id: LabelId::new(c.to_string()),
                source_video_id: format!("v{:03}", (c * cfg.clips_per_cluster + j) % cfg.videos),
                duration_s: (duration * 100.0).round() / 100.0,
            });
        }
    }

    let store = LabelStore::new(&labels)?;
    let mut modifications = Vec::new();
    let mut text = EmbeddingTable::new(cfg.dim)?;
    for k in 0..half {
        for (a, b) in [(2 * k, 2 * k + 1), (2 * k + 1, 2 * k)] {
            let pair = LabelPair {
                src_label: LabelId::new(a.to_string()),
                dst_label: LabelId::new(b.to_string()),
                similarity: 1.0,
                change_kind: Some(ChangeKind::Temporal),
            };
            let m = TemplateGenerator.generate(&pair, &store)?;
            let dir: Vec<f64> = centers[b]
                .iter()
                .zip(&centers[a])
                .map(|(x, y)| x - y + text_noise.sample(&mut rng))
                .collect();
            text.push(EmbeddingRecord::new(m.text.clone(), EmbeddingKind::Text, to_f32(&dir))?)?;
            modifications.push((pair.src_label, pair.dst_label, m.text));
        }
    }

    Ok(Fixture {
        labels,
        clips,
        centers,
        captions,
        video,
        frames,
        text,
        modifications,
    })
}

pub const LABELS_FILE: &str = "labels.jsonl";
pub const CLIPS_FILE: &str = "clips.jsonl";
pub const CAPTIONS_FILE: &str = "captions.tfcv";
pub const VIDEO_FILE: &str = "video.tfcv";
pub const FRAMES_FILE: &str = "frames.tfcv";
pub const TEXT_FILE: &str = "text.tfcv";

impl Fixture {
    /// Write every table and catalog under `dir` using the file names above.
    pub fn write(&self, dir: &Path, cfg: &FixtureConfig) -> Result<()> {
        let source = serde_json::json!({
            "generator": "fixture",
            "seed": cfg.seed,
            "clusters": cfg.clusters,
            "dim": cfg.dim,
        });
        write_jsonl(&dir.join(LABELS_FILE), &self.labels)?;
        write_jsonl(&dir.join(CLIPS_FILE), &self.clips)?;
        save_table_with_source(dir.join(CAPTIONS_FILE), &self.captions, source.clone())?;
        save_table_with_source(dir.join(VIDEO_FILE), &self.video, source.clone())?;
        save_table_with_source(dir.join(FRAMES_FILE), &self.frames, source.clone())?;
        save_table_with_source(dir.join(TEXT_FILE), &self.text, source)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centers_are_spread_and_texts_unique() {
        let cfg = FixtureConfig::default();
        let f = generate(&cfg).unwrap();
        for i in 0..f.centers.len() {
            for j in 0..i {
                assert!(dot(&f.centers[i], &f.centers[j]) < 0.3);
            }
        }
        assert_eq!(f.clips.len(), 600);
        assert_eq!(f.text.len(), 20);
        assert_eq!(f.modifications[0].2, "show with 1.5 turn.");
        assert_eq!(f.modifications[1].2, "show with 1 turn.");
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = FixtureConfig::default();
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.video.to_bytes().unwrap(), b.video.to_bytes().unwrap());
        assert_eq!(a.text.to_bytes().unwrap(), b.text.to_bytes().unwrap());
    }
}
