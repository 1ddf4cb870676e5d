//! `tfcovr` command-line front end.

mod args;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use clap::Parser;

use crate::ablation::{ablate_hn, AblationGrid, AblationInputs};
use crate::checkpoint::{self, CheckpointMeta, ModelKind};
use crate::embedding::{load_manifest, load_table, EmbeddingKind, EmbeddingTable};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalOptions, EvalReport};
use crate::fixture::{self, FixtureConfig};
use crate::fusion::{FusionConfig, FusionParams};
use crate::io::{read_json, read_jsonl, write_atomic, write_json, write_jsonl};
use crate::modification::{MappedGenerator, ModificationGenerator, TemplateGenerator};
use crate::par;
use crate::taxonomy::{ClipRecord, LabelRecord, LabelStore, PairOverride};
use crate::trainer::{default_batch_size, train_stage1, train_stage2, RunManifest};
use crate::tripletgen::{build_dataset, dataset_stats, PairModification, Partition, Stats, TestQuery, Triplet};

pub use args::{Cli, Command, FileConfig};

pub const PAIRS_FILE: &str = "pairs.jsonl";
pub const DROPPED_PAIRS_FILE: &str = "dropped_pairs.jsonl";
pub const MODIFICATIONS_FILE: &str = "modifications.jsonl";
pub const SPLIT_FILE: &str = "split.json";
pub const GALLERY_FILE: &str = "gallery.json";
pub const TRAIN_FILE: &str = "train_triplets.jsonl";
pub const TEST_FILE: &str = "test_triplets.jsonl";
pub const QUERIES_FILE: &str = "test_queries.jsonl";
pub const DROPPED_QUERIES_FILE: &str = "dropped_queries.jsonl";
pub const STATS_FILE: &str = "stats.json";
pub const STATS_TABLE_FILE: &str = "stats.txt";
pub const FUSION_CHECKPOINT: &str = "fusion.tfcp";
pub const CLASSIFIER_CHECKPOINT: &str = "classifier.tfcp";
pub const RUN_MANIFEST: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.csv";

/// Parse arguments, run, and map the outcome to a process exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    par::init_threads(cli.threads);
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest(a) => ingest(&a.embeddings, a.out.as_deref()),
        Command::GenTriplets(a) => gen_triplets(&file, &a),
        Command::Stats(a) => {
            let stats = stats_for(&a.data, &read_jsonl(&a.clips)?)?;
            print!("{}", stats.to_table(a.reference));
            match a.out {
                Some(out) => write_json(&out, &stats),
                None => Ok(()),
            }
        }
        Command::TrainStage1(a) => stage1(&file, &a),
        Command::TrainStage2(a) => stage2(&file, &a),
        Command::Eval(a) => eval_cmd(&file, &a),
        Command::AblateHn(a) => ablate_cmd(&file, &a),
        Command::Report(a) => report(&a),
        Command::MakeFixture(a) => {
            let cfg = FixtureConfig {
                seed: a.seed,
                clusters: a.clusters,
                dim: a.dim,
                ..Default::default()
            };
            fixture::generate(&cfg)?.write(&a.out, &cfg)
        }
    }
}

fn ingest(path: &Path, out: Option<&Path>) -> Result<()> {
    let table = load_table(path)?;
    let mut kinds: BTreeMap<&str, usize> = BTreeMap::new();
    for r in table.records() {
        let k = match r.kind() {
            EmbeddingKind::Video => "video",
            EmbeddingKind::Text => "text",
            EmbeddingKind::FrameSequence => "frame_sequence",
        };
        *kinds.entry(k).or_default() += 1;
    }
    let issues = match load_manifest(path)? {
        Some(m) => m.discrepancies(&table),
        None => Vec::new(),
    };
    let summary = serde_json::json!({
        "path": path.display().to_string(),
        "dim": table.dim(),
        "count": table.len(),
        "kinds": kinds,
        "checksum": table.checksum()?,
        "manifest_issues": issues,
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).map_err(|e| Error::json("summary", e))?
    );
    if let Some(out) = out {
        write_json(out, &summary)?;
    }
    if !issues.is_empty() {
        return Err(Error::Validation(format!(
            "manifest disagrees with table: {}",
            issues.join("; ")
        )));
    }
    Ok(())
}

fn gen_triplets(file: &FileConfig, a: &args::GenArgs) -> Result<()> {
    let cfg = file.build(a);
    let labels: Vec<LabelRecord> = read_jsonl(&a.labels)?;
    let clips: Vec<ClipRecord> = read_jsonl(&a.clips)?;
    let captions = load_table(&a.embeddings)?;
    let overrides: Vec<PairOverride> = match &a.overrides {
        Some(p) => read_jsonl(p)?,
        None => Vec::new(),
    };
    let generator: Box<dyn ModificationGenerator> = match &a.modifications {
        Some(p) => Box::new(MappedGenerator::from_jsonl(p)?),
        None => Box::new(TemplateGenerator),
    };
    let ds = build_dataset(&cfg, &labels, &captions, &clips, generator.as_ref(), &overrides)?;
    let gallery: Vec<String> = ds
        .plan
        .clips_in(&clips, Partition::Test)
        .into_iter()
        .map(|c| c.clip_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let out = &a.out;
    write_jsonl(&out.join(PAIRS_FILE), &ds.pairs)?;
    write_jsonl(&out.join(DROPPED_PAIRS_FILE), &ds.dropped_pairs)?;
    write_jsonl(&out.join(MODIFICATIONS_FILE), &ds.modifications)?;
    write_json(&out.join(SPLIT_FILE), &ds.plan)?;
    write_json(&out.join(GALLERY_FILE), &gallery)?;
    write_jsonl(&out.join(TRAIN_FILE), &ds.train)?;
    write_jsonl(&out.join(TEST_FILE), &ds.test)?;
    write_jsonl(&out.join(QUERIES_FILE), &ds.queries)?;
    write_jsonl(&out.join(DROPPED_QUERIES_FILE), &ds.dropped_queries)?;
    let stats = stats_for(out, &clips)?;
    write_json(&out.join(STATS_FILE), &stats)?;
    write_atomic(&out.join(STATS_TABLE_FILE), stats.to_table(true).as_bytes())?;
    write_json(
        &out.join("config.json"),
        &serde_json::json!({
            "threshold": cfg.threshold,
            "test_fraction": cfg.test_fraction,
            "split_seed": cfg.split_seed,
            "external_modifications": a.modifications.is_some(),
            "overrides": overrides.len(),
        }),
    )?;
    log::info!(
        "{} pairs, {} train / {} test triplets, {} queries",
        ds.pairs.len(),
        ds.train.len(),
        ds.test.len(),
        ds.queries.len()
    );
    Ok(())
}

fn stats_for(dir: &Path, clips: &[ClipRecord]) -> Result<Stats> {
    let train: Vec<Triplet> = read_jsonl(&dir.join(TRAIN_FILE))?;
    let queries: Vec<TestQuery> = read_jsonl(&dir.join(QUERIES_FILE))?;
    let mods: Vec<PairModification> = read_jsonl(&dir.join(MODIFICATIONS_FILE))?;
    let texts: Vec<String> = mods.into_iter().map(|m| m.text).collect();
    dataset_stats(&train, &queries, clips, &texts)
}

fn write_run(out: &Path, manifest: &RunManifest) -> Result<()> {
    write_json(&out.join(RUN_MANIFEST), manifest)?;
    write_atomic(&out.join(METRICS_FILE), manifest.metrics_csv().as_bytes())
}

fn stage1(file: &FileConfig, a: &args::Stage1Args) -> Result<()> {
    let frames = load_table(&a.embeddings)?;
    let clips: Vec<ClipRecord> = read_jsonl(&a.clips)?;
    let classes: BTreeMap<String, usize> = match &a.labels {
        Some(p) => {
            let labels: Vec<LabelRecord> = read_jsonl(p)?;
            LabelStore::new(&labels)?
                .class_indices()
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect()
        }
        None => {
            let ids: BTreeSet<_> = clips.iter().map(|c| c.label_id.clone()).collect();
            ids.into_iter().enumerate().map(|(i, l)| (l.to_string(), i)).collect()
        }
    };
    let mut targets = HashMap::new();
    for c in &clips {
        let y = classes
            .get(c.label_id.as_str())
            .ok_or_else(|| Error::Validation(format!("clip {} has unknown label {}", c.clip_id, c.label_id)))?;
        targets.insert(c.clip_id.clone(), *y);
    }
    let cfg = file.train(&a.train, None, default_batch_size(frames.len()));
    let (head, manifest) = train_stage1(&frames, &targets, classes.len(), a.pooling, &cfg)?;
    let meta = CheckpointMeta::new(
        ModelKind::Classifier { pooling: a.pooling },
        manifest.config.clone(),
        cfg.seed,
    );
    checkpoint::save(&a.out.join(CLASSIFIER_CHECKPOINT), &head, &meta)?;
    write_run(&a.out, &manifest)
}

struct EvalData {
    queries: Vec<TestQuery>,
    gallery: Vec<String>,
}

fn eval_data(dir: &Path) -> Result<EvalData> {
    Ok(EvalData {
        queries: read_jsonl(&dir.join(QUERIES_FILE))?,
        gallery: read_json(&dir.join(GALLERY_FILE))?,
    })
}

fn tables(video: &Path, text: &Path) -> Result<(EmbeddingTable, EmbeddingTable)> {
    Ok((load_table(video)?, load_table(text)?))
}

fn stage2(file: &FileConfig, a: &args::Stage2Args) -> Result<()> {
    let (video, text) = tables(&a.embeddings, &a.text_embeddings)?;
    let train: Vec<Triplet> = read_jsonl(&a.data.join(TRAIN_FILE))?;
    let mut cfg = file.train(&a.train, Some(&a.loss), default_batch_size(train.len()));
    cfg.dedup_batch_labels = a.dedup_batch_labels;
    let target_labels: Option<HashMap<String, String>> = match &a.clips {
        Some(p) => {
            let clips: Vec<ClipRecord> = read_jsonl(p)?;
            Some(clips.into_iter().map(|c| (c.clip_id, c.label_id.to_string())).collect())
        }
        None => None,
    };
    let mut model = FusionConfig::new(video.dim(), text.dim());
    model.target_projection = a.target_projection;
    let init = FusionParams::init(&model, cfg.seed)?;

    let opts = file.eval(&a.eval)?;
    let data = if a.data.join(QUERIES_FILE).exists() && a.data.join(GALLERY_FILE).exists() {
        Some(eval_data(&a.data)?)
    } else {
        None
    };
    let hook = |p: &FusionParams| -> Result<BTreeMap<String, f64>> {
        let d = data.as_ref().expect("hook only installed with data");
        let r = evaluate(p, &d.queries, &video, &text, &d.gallery, &opts)?;
        Ok(r.ks.iter().zip(&r.map).map(|(k, m)| (format!("map@{k}"), *m)).collect())
    };
    let hook_ref: Option<&crate::trainer::EvalHook<'_>> = match &data {
        Some(d) if !d.queries.is_empty() => Some(&hook),
        _ => None,
    };
    let (params, manifest) = train_stage2(&train, &video, &text, init, &cfg, target_labels.as_ref(), hook_ref)?;
    let meta = CheckpointMeta::new(ModelKind::Fusion, manifest.config.clone(), cfg.seed);
    checkpoint::save(&a.out.join(FUSION_CHECKPOINT), &params, &meta)?;
    write_run(&a.out, &manifest)
}

fn eval_cmd(file: &FileConfig, a: &args::EvalArgs) -> Result<()> {
    let (video, text) = tables(&a.embeddings, &a.text_embeddings)?;
    let params = match (&a.checkpoint, a.untrained) {
        (Some(p), false) => checkpoint::load_fusion(p)?,
        (None, true) => FusionParams::init(&FusionConfig::new(video.dim(), text.dim()), a.seed)?,
        _ => return Err(Error::Config("give exactly one of --checkpoint or --untrained".into())),
    };
    let opts: EvalOptions = file.eval(&a.eval)?;
    let data = eval_data(&a.data)?;
    let report = evaluate(&params, &data.queries, &video, &text, &data.gallery, &opts)?;
    print!("{}", report.to_table());
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    Ok(())
}

fn ablate_cmd(file: &FileConfig, a: &args::AblateArgs) -> Result<()> {
    let (video, text) = tables(&a.embeddings, &a.text_embeddings)?;
    let train: Vec<Triplet> = read_jsonl(&a.data.join(TRAIN_FILE))?;
    let data = eval_data(&a.data)?;
    let cfg = file.train(&a.train, Some(&a.loss), default_batch_size(train.len()));
    let opts = file.eval(&a.eval)?;
    let inputs = AblationInputs {
        train: &train,
        queries: &data.queries,
        gallery_ids: &data.gallery,
        video: &video,
        text: &text,
        model: FusionConfig::new(video.dim(), text.dim()),
    };
    let grid = ablate_hn(&inputs, &a.betas, &cfg, &opts)?;
    let table = grid.to_table();
    print!("{table}");
    if let Some(best) = grid.best_beta() {
        println!("best β at mAP@{}: {best}", grid.ks.last().copied().unwrap_or(0));
    }
    write_json(&a.out.join("grid.json"), &grid)?;
    write_atomic(&a.out.join("grid.txt"), table.as_bytes())?;
    write_json(&a.out.join("config.json"), &cfg)
}

fn report(a: &args::ReportArgs) -> Result<()> {
    let mut out = String::new();
    for p in &a.eval {
        let r: EvalReport = read_json(p)?;
        out.push_str(&format!("# {}\n{}\n", p.display(), r.to_table()));
    }
    if let Some(p) = &a.grid {
        let g: AblationGrid = read_json(p)?;
        out.push_str(&format!("# {}\n{}\n", p.display(), g.to_table()));
    }
    if let Some(p) = &a.stats {
        let s: Stats = read_json(p)?;
        out.push_str(&format!("# {}\n{}\n", p.display(), s.to_table(true)));
    }
    if out.is_empty() {
        return Err(Error::Config(
            "nothing to report; pass --eval, --grid or --stats".into(),
        ));
    }
    print!("{out}");
    match &a.out {
        Some(p) => write_atomic(p, out.as_bytes()),
        None => Ok(()),
    }
}
