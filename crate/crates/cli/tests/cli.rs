use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use clap::Parser;
use nemo_forge_cli::{Cli, Command as Sub, EXIT_USAGE};
use nemo_forge_core::miner::{MiningMode, Threshold};
use nemo_forge_core::EmbeddingStore;
use serde_json::{json, Value};

const BIN: &str = env!("CARGO_BIN_EXE_nemo-forge");
const N_IMAGES: u64 = 8;
const SIDE: u32 = 16;

fn nemo(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("NEMO_FORGE_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn augment_config(args: &[&str]) -> nemo_forge_core::PipelineConfig {
    let mut argv = vec![
        "nemo-forge",
        "augment",
        "--dataset",
        "d.json",
        "--embeddings",
        "e.bin",
        "--out",
        "o",
    ];
    argv.extend_from_slice(args);
    match Cli::try_parse_from(argv).unwrap().command {
        Sub::Augment(a) => a.config.resolve().unwrap(),
        _ => unreachable!(),
    }
}

/// Eight solid-colour images, one square target and one expression each,
/// orthonormal image embeddings and text rows equal to their image's row.
fn fixture(dir: &Path) {
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    for i in 1..=N_IMAGES {
        let name = format!("img_{i}.png");
        let shade = (i * 30) as u8;
        image::RgbImage::from_pixel(SIDE, SIDE, image::Rgb([shade, 255 - shade, 7]))
            .save(dir.join(&name))
            .unwrap();
        images.push(json!({"id": i, "file_name": name, "height": SIDE, "width": SIDE}));
        annotations.push(json!({
            "id": 100 + i,
            "image_id": i,
            "category_id": 1,
            "segmentation": [[4.0, 4.0, 12.0, 4.0, 12.0, 12.0, 4.0, 12.0]],
            "iscrowd": 0,
            "expressions": [if i % 2 == 0 { "the cup on the left" } else { "a red cup" }],
            "expression_ids": [i - 1],
        }));
    }
    let coco = json!({"images": images, "annotations": annotations, "categories": [{"id": 1, "name": "cup"}]});
    fs::write(
        dir.join("refs.json"),
        serde_json::to_vec_pretty(&coco).unwrap(),
    )
    .unwrap();

    let dim = N_IMAGES as usize;
    let mut rows = vec![0f32; dim * dim];
    for i in 0..dim {
        rows[i * dim + i] = 1.0;
    }
    let ids: Vec<u64> = (1..=N_IMAGES).collect();
    let text_ids: Vec<u64> = (0..N_IMAGES).collect();
    EmbeddingStore::new(dim, ids, rows.clone(), text_ids, rows)
        .unwrap()
        .save(dir.join("emb.bin"))
        .unwrap();
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn explicit_flags_match_gref_defaults() {
    let c = augment_config(&[
        "--tau",
        "0.75",
        "--k",
        "200",
        "--gamma",
        "0.6",
        "--seed",
        "7",
        "--mode",
        "i2i-upper",
    ]);
    assert_eq!((c.mining.tau, c.mining.k), (Threshold::at(0.75), 200));
    assert_eq!(c.mining.mode, MiningMode::I2iUpper);
    assert_eq!((c.gamma, c.master_seed), (0.6, 7));
    let mut profile = augment_config(&["--profile", "gref", "--seed", "7"]);
    profile.workers = c.workers;
    assert_eq!(profile, c);
}

#[test]
fn refcoco_profile_without_flags() {
    let c = augment_config(&["--profile", "refcoco"]);
    assert_eq!((c.mining.tau, c.mining.k), (Threshold::at(0.85), 800));
    let c = augment_config(&["--profile", "refcoco+"]);
    assert_eq!((c.mining.tau, c.mining.k), (Threshold::at(0.85), 800));
}

#[test]
fn flags_override_profile() {
    let c = augment_config(&["--profile", "refcoco", "--k", "50", "--tau", "none"]);
    assert_eq!((c.mining.tau, c.mining.k), (Threshold::UNBOUNDED, 50));
}

#[test]
fn gamma_out_of_range_is_usage_error() {
    let out = nemo(&[
        "augment",
        "--dataset",
        "d.json",
        "--embeddings",
        "e.bin",
        "--out",
        "o",
        "--gamma",
        "1.5",
    ]);
    assert_eq!(out.status.code(), Some(EXIT_USAGE as i32));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("gamma"), "{err}");
}

#[test]
fn grid_3x3_with_constraints_is_usage_error() {
    let out = nemo(&[
        "augment",
        "--dataset",
        "d.json",
        "--embeddings",
        "e.bin",
        "--out",
        "o",
        "--grid",
        "3x3",
        "--constraints",
        "on",
    ]);
    assert_eq!(out.status.code(), Some(EXIT_USAGE as i32));
    assert!(String::from_utf8_lossy(&out.stderr).contains("3x3"));
}

#[test]
fn unknown_flag_and_bad_values_rejected() {
    for args in [
        vec![
            "augment",
            "--dataset",
            "d",
            "--embeddings",
            "e",
            "--out",
            "o",
            "--topk",
            "5",
        ],
        vec![
            "augment",
            "--dataset",
            "d",
            "--embeddings",
            "e",
            "--out",
            "o",
            "--mode",
            "i2i",
        ],
        vec![
            "augment",
            "--dataset",
            "d",
            "--embeddings",
            "e",
            "--out",
            "o",
            "--tau",
            "abc",
        ],
        vec![
            "augment",
            "--dataset",
            "d",
            "--embeddings",
            "e",
            "--out",
            "o",
            "--tau-t2i",
            "0.2",
        ],
    ] {
        let out = nemo(&args);
        assert_eq!(out.status.code(), Some(EXIT_USAGE as i32), "{args:?}");
    }
}

#[test]
fn help_lists_every_flag() {
    let out = nemo(&["augment", "--help"]);
    assert!(out.status.success());
    let help = String::from_utf8_lossy(&out.stdout);
    for flag in [
        "--dataset",
        "--embeddings",
        "--out",
        "--tau",
        "--tau-t2i",
        "--tau-i2i",
        "--k",
        "--gamma",
        "--mode",
        "--grid",
        "--cross-point",
        "--constraints",
        "--seed",
        "--workers",
        "--report",
        "--dump-previews",
        "--profile",
        "--config",
        "--verbose",
    ] {
        assert!(help.contains(flag), "{flag} missing from help");
    }
}

#[test]
fn verbose_echo_reparses_to_equal_config() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let d = dir.path();
    let out = nemo(&[
        "mine",
        "--verbose",
        "--dataset",
        path_str(&d.join("refs.json")),
        "--embeddings",
        path_str(&d.join("emb.bin")),
        "--profile",
        "refcoco",
        "--seed",
        "11",
        "--constraints",
        "on",
        "--cross-point",
        "central-quarter",
        "--k",
        "4",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let echo = String::from_utf8(out.stderr).unwrap();
    let cfg = d.join("echo.toml");
    fs::write(&cfg, &echo).unwrap();
    let original = augment_config(&[
        "--profile",
        "refcoco",
        "--seed",
        "11",
        "--constraints",
        "on",
        "--cross-point",
        "central-quarter",
        "--k",
        "4",
    ]);
    let reparsed = augment_config(&["--config", path_str(&cfg)]);
    assert_eq!(reparsed, original);
}

#[test]
fn augment_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let d = dir.path();
    let out_dir = d.join("out");
    let report = d.join("report.json");
    let out = nemo(&[
        "augment",
        "--dataset",
        path_str(&d.join("refs.json")),
        "--embeddings",
        path_str(&d.join("emb.bin")),
        "--out",
        path_str(&out_dir),
        "--gamma",
        "1",
        "--k",
        "5",
        "--seed",
        "3",
        "--workers",
        "2",
        "--report",
        path_str(&report),
        "--dump-previews",
        "2",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r: Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(r["totals"]["samples"], 8);
    assert_eq!(r["totals"]["augmented"], 8);
    assert!(out_dir.join("manifest.json").is_file());
    assert!(!out_dir.join("_INCOMPLETE").exists());
    assert_eq!(fs::read_dir(out_dir.join("previews")).unwrap().count(), 2);
    let written = nemo_forge_core::load_dataset(out_dir.join("annotations.json")).unwrap();
    assert_eq!(written.samples.len(), 8);
}

#[test]
fn augment_report_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let d = dir.path();
    let out = nemo(&[
        "augment",
        "--dataset",
        path_str(&d.join("refs.json")),
        "--embeddings",
        path_str(&d.join("emb.bin")),
        "--out",
        path_str(&d.join("out")),
        "--gamma",
        "0",
    ]);
    assert!(out.status.success());
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["totals"]["passed_through"], 8);
    assert_eq!(r["config"]["gamma"], 0.0);
}

#[test]
fn mine_prints_one_pool_per_sample() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let d = dir.path();
    let out = nemo(&[
        "mine",
        "--dataset",
        path_str(&d.join("refs.json")),
        "--embeddings",
        path_str(&d.join("emb.bin")),
        "--k",
        "3",
        "--sample-id",
        "0",
        "--sample-id",
        "5",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let lines: Vec<Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    // All other images score 0; ties break by ascending id.
    assert_eq!(lines[0]["pool"], json!([2, 3, 4]));
    assert_eq!(lines[1]["pool"], json!([1, 2, 3]));
    assert_eq!(lines[0]["survivors"], 7);
}

#[test]
fn mine_unknown_sample_fails() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let d = dir.path();
    let out = nemo(&[
        "mine",
        "--dataset",
        path_str(&d.join("refs.json")),
        "--embeddings",
        path_str(&d.join("emb.bin")),
        "--sample-id",
        "99",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn validate_embeddings_reports_shape_and_coverage() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let d = dir.path();
    let out = nemo(&[
        "validate-embeddings",
        "--embeddings",
        path_str(&d.join("emb.bin")),
        "--dataset",
        path_str(&d.join("refs.json")),
    ]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(
        v,
        json!({"dim": 8, "images": 8, "texts": 8, "coverage_checked": true})
    );

    let mut bytes = fs::read(d.join("emb.bin")).unwrap();
    let last = bytes.len() - 4;
    bytes[last..].copy_from_slice(&0.5f32.to_le_bytes());
    fs::write(d.join("bad.bin"), bytes).unwrap();
    let out = nemo(&[
        "validate-embeddings",
        "--embeddings",
        path_str(&d.join("bad.bin")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn analyze_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let d = dir.path();
    let dets = json!([
        {"image_id": 1, "category_id": 1, "bbox": [4.0, 4.0, 8.0, 8.0], "score": 0.9},
        {"image_id": 1, "category_id": 1, "bbox": [0.0, 0.0, 3.0, 3.0], "score": 0.8}
    ]);
    fs::write(d.join("dets.json"), dets.to_string()).unwrap();
    let out_dir = d.join("analysis");
    let out = nemo(&[
        "analyze",
        "--dataset",
        path_str(&d.join("refs.json")),
        "--detections",
        path_str(&d.join("dets.json")),
        "--out",
        path_str(&out_dir),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary: Value =
        serde_json::from_slice(&fs::read(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["corpus"]["n_expressions"], 8);
    assert_eq!(summary["negative_objects"], json!({"0": 7, "1": 1}));
    assert_eq!(summary["with_positional_keyword"], 4);
    let csv = fs::read_to_string(out_dir.join("profiles.csv")).unwrap();
    assert_eq!(csv.lines().count(), 9);
    assert!(fs::read_to_string(out_dir.join("lengths.md"))
        .unwrap()
        .contains("| 1-5 |"));
}

#[test]
fn preview_writes_overlays() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let d = dir.path();
    let out_dir = d.join("previews");
    let out = nemo(&[
        "preview",
        "--dataset",
        path_str(&d.join("refs.json")),
        "--embeddings",
        path_str(&d.join("emb.bin")),
        "--out",
        path_str(&out_dir),
        "--count",
        "3",
        "--k",
        "5",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(fs::read_dir(&out_dir).unwrap().count(), 3);
    let img = image::open(out_dir.join("preview_000000000000.png")).unwrap();
    assert_eq!((img.width(), img.height()), (SIDE, SIDE));
}
