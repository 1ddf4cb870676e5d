mod common;

use std::process::Command;

use rand::Rng;

use common::*;
use tfcovr::embedding::{load_manifest, load_table, save_table, EmbeddingKind, EmbeddingTable};
use tfcovr::error::Error;
use tfcovr::modification::{generate_modification, MappedGenerator, ModificationEntry, TemplateGenerator};
use tfcovr::taxonomy::{ChangeKind, LabelPair, LabelRecord, LabelStore, SourceDataset};

/// Writer that follows the byte layout directly, sharing no code with the
/// library.
fn hand_written(dim: u32, records: &[(String, u8, u32, Vec<f32>)]) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(b"TFCV");
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&dim.to_le_bytes());
    b.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for (id, kind, t, values) in records {
        b.extend_from_slice(&(id.len() as u16).to_le_bytes());
        b.extend_from_slice(id.as_bytes());
        b.push(*kind);
        b.extend_from_slice(&t.to_le_bytes());
        for v in values {
            b.extend_from_slice(&v.to_le_bytes());
        }
    }
    b
}

#[test]
fn independent_writer_loads_record_by_record() {
    let mut r = rng(1);
    let records: Vec<(String, u8, u32, Vec<f32>)> = (0..100)
        .map(|i| {
            let kind = (i % 3) as u8;
            let t = if kind == 2 { 1 + (i % 4) as u32 } else { 1 };
            let values = (0..t * 64).map(|_| r.random_range(-1.0f32..1.0)).collect();
            (format!("id-{i:03}"), kind, t, values)
        })
        .collect();
    let bytes = hand_written(64, &records);
    let table = EmbeddingTable::from_bytes(&bytes).unwrap();
    assert_eq!(table.len(), 100);
    for (id, kind, t, values) in &records {
        let rec = table.require(id).unwrap();
        let want_kind = match kind {
            0 => EmbeddingKind::Video,
            1 => EmbeddingKind::Text,
            _ => EmbeddingKind::FrameSequence,
        };
        assert_eq!(rec.kind(), want_kind);
        assert_eq!(rec.frame_count(), *t as usize);
        let rows: Vec<f32> = rec.frame_rows().flatten().copied().collect();
        assert_eq!(&rows, values);
    }
    assert_eq!(table.to_bytes().unwrap(), bytes);
}

#[test]
fn python_writer_roundtrip() {
    if Command::new("python3").arg("--version").output().is_err() {
        eprintln!("python3 not available; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bridge.tfcv");
    let script = r#"
import random, struct, sys, json
random.seed(5)
d, n = 64, 100
out = bytearray(b"TFCV" + struct.pack("<HIQ", 1, d, n))
rows = {}
for i in range(n):
    rid = f"clip_{i:03d}".encode()
    vec = [random.uniform(-1, 1) for _ in range(d)]
    rows[rid.decode()] = vec
    out += struct.pack("<H", len(rid)) + rid + struct.pack("<BI", 0, 1)
    out += struct.pack(f"<{d}f", *vec)
open(sys.argv[1], "wb").write(out)
json.dump(rows, open(sys.argv[1] + ".json", "w"))
"#;
    let status = Command::new("python3")
        .arg("-c")
        .arg(script)
        .arg(&path)
        .status()
        .unwrap();
    assert!(status.success());
    let table = load_table(&path).unwrap();
    assert_eq!((table.len(), table.dim()), (100, 64));
    let reference: std::collections::BTreeMap<String, Vec<f64>> =
        serde_json::from_str(&std::fs::read_to_string(path.with_extension("tfcv.json")).unwrap()).unwrap();
    for (id, vec) in reference {
        let rec = table.require(&id).unwrap();
        for (a, b) in rec.vector().iter().zip(&vec) {
            assert_eq!(*a, *b as f32);
        }
    }
    assert!(load_manifest(&path).unwrap().is_none());
}

#[test]
fn save_writes_manifest_and_reload_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let rows = hand_written(
        3,
        &[
            ("a".into(), 0, 1, vec![1.0, 2.0, 3.0]),
            ("b".into(), 2, 2, vec![1.0; 6]),
        ],
    );
    let src = dir.path().join("x.tfcv");
    std::fs::write(&src, &rows).unwrap();
    let table = load_table(&src).unwrap();
    let dst = dir.path().join("y.tfcv");
    save_table(&dst, &table).unwrap();
    assert_eq!(std::fs::read(&dst).unwrap(), rows);
    let m = load_manifest(&dst).unwrap().unwrap();
    assert!(m.discrepancies(&table).is_empty());
    assert_eq!(m.records.len(), 2);
}

#[test]
fn error_classes() {
    let good = hand_written(2, &[("a".into(), 0, 1, vec![1.0, 0.0])]);
    let mut bad_version = good.clone();
    bad_version[4] = 9;
    assert!(matches!(
        EmbeddingTable::from_bytes(&bad_version),
        Err(Error::Format(_))
    ));
    assert!(matches!(
        EmbeddingTable::from_bytes(&good[..good.len() - 2]),
        Err(Error::Corruption(_))
    ));
    let nan = hand_written(2, &[("a".into(), 0, 1, vec![f32::NAN, 0.0])]);
    assert!(matches!(EmbeddingTable::from_bytes(&nan), Err(Error::Validation(_))));
    let empty = hand_written(4, &[]);
    let t = EmbeddingTable::from_bytes(&empty).unwrap();
    assert_eq!((t.len(), t.dim()), (0, 4));
    assert!(matches!(load_table("/nonexistent/file.tfcv"), Err(Error::Io { .. })));
}

fn gym(id: &str, caption: &str) -> LabelRecord {
    LabelRecord {
        label_id: id.into(),
        caption: caption.into(),
        event_tag: None,
        source_dataset: SourceDataset::Gym,
    }
}

#[test]
fn external_mapping_jsonl_is_served_with_template_fallback() {
    let labels = vec![
        gym("1", "(VT) tsukahara stretched with 2 turn"),
        gym("2", "(VT) tsukahara stretched with 1 turn"),
        gym("3", "(FX) switch leap with 0.5 turn"),
        gym("4", "(BB) switch leap with 0.5 turn"),
    ];
    let store = LabelStore::new(&labels).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mods.jsonl");
    let entries = vec![ModificationEntry {
        src: "1".into(),
        dst: "2".into(),
        text: "show it with one turn.".into(),
    }];
    tfcovr::io::write_jsonl(&path, &entries).unwrap();
    let gen = MappedGenerator::from_jsonl(&path).unwrap();
    let pair = |a: &str, b: &str, k| LabelPair {
        src_label: a.into(),
        dst_label: b.into(),
        similarity: 0.95,
        change_kind: Some(k),
    };
    let m = generate_modification(&pair("1", "2", ChangeKind::Temporal), &store, &gen).unwrap();
    assert_eq!((m.text.as_str(), m.flagged), ("show it with one turn.", false));
    let m = generate_modification(&pair("3", "4", ChangeKind::Event), &store, &gen).unwrap();
    assert_eq!((m.text.as_str(), m.flagged), ("show on BB.", true));
    let t = generate_modification(&pair("1", "2", ChangeKind::Temporal), &store, &TemplateGenerator).unwrap();
    assert_eq!(t.text, "show with 1 turn.");
}
