use std::path::Path;

use phe::baselines::ModelId;
use phe::checkpoint;
use phe::config::ExperimentConfig;
use phe::experiment::{execute, run};
use phe::inference::LossRecord;

const TINY_BENCH: &str = r#"{
  "name": "tiny-bench",
  "kind": "bench",
  "seed": 3,
  "hash": { "bucket_count": 31, "num_hashes": 2, "weight_buckets": 11, "embed_dim": 4, "seed": 5 },
  "encoder": { "product_features": true },
  "head": { "type": "gaussian-mlp", "hidden": 4, "sigma_y": 0.1 },
  "train": { "batch_size": 32, "epochs_initial": 3, "epochs_online": 2 },
  "bench": { "users": 30, "items": 20, "genres": 3, "genres_per_item": 1, "latent_dim": 2, "days": 6, "ratings_per_day": 40, "seed": 1 },
  "stream": { "init_before": 2, "step_by_timestamp": true, "smoothing_bandwidth": 1.0 }
}"#;

fn tiny(model: ModelId) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_json(TINY_BENCH).unwrap();
    cfg.model = model;
    cfg
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn every_model_runs_the_stream_and_reports_one_step_per_day() {
    for model in ModelId::ALL {
        let r = execute(&tiny(model), Path::new(".")).unwrap();
        assert_eq!(r.summary.steps, 4, "{model}");
        assert_eq!(r.summary.records, 160, "{model}");
        let mae = r.summary.cumulative.unwrap();
        assert!(mae.is_finite() && mae > 0.0 && mae < 1.0, "{model}: {mae}");
    }
}

#[test]
fn output_files_have_the_documented_shape() {
    let dir = tempfile::tempdir().unwrap();
    run(&tiny(ModelId::Phe), Path::new("."), dir.path()).unwrap();

    let losses: Vec<LossRecord> = read(dir.path(), "losses.jsonl")
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let first = read(dir.path(), "losses.jsonl").lines().next().unwrap().to_string();
    let keys: Vec<String> = serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(&first)
        .unwrap()
        .keys()
        .cloned()
        .collect();
    let mut want = ["stage", "epoch", "step", "loss", "kl_E", "kl_W", "nll"].map(String::from).to_vec();
    want.sort();
    let mut got = keys.clone();
    got.sort();
    assert_eq!(got, want);
    assert_eq!(losses.iter().map(|l| l.stage).max(), Some(4));
    assert!(losses.iter().all(|l| (l.loss - (l.nll + l.kl_e + l.kl_w)).abs() < 1e-9 * l.loss.abs().max(1.0)));

    assert_eq!(read(dir.path(), "metrics.jsonl").lines().count(), 4);
    let csv = read(dir.path(), "smoothed.csv");
    assert_eq!(csv.lines().next(), Some("step,value,smoothed"));
    assert_eq!(csv.lines().count(), 5);
    let summary: serde_json::Value = serde_json::from_str(&read(dir.path(), "summary.json")).unwrap();
    assert_eq!(summary["name"], "tiny-bench");
    assert_eq!(summary["metric"], "mae");
}

#[test]
fn checkpoint_on_disk_restores_the_final_model() {
    let dir = tempfile::tempdir().unwrap();
    let r = run(&tiny(ModelId::Pee), Path::new("."), dir.path()).unwrap();
    let restored = checkpoint::load(&dir.path().join("checkpoint.json")).unwrap();
    assert_eq!(&restored, r.model.as_ref().unwrap());
    assert_eq!(checkpoint::to_string(&restored).unwrap(), read(dir.path(), "checkpoint.json"));
}

#[test]
fn reruns_are_byte_identical_and_seeds_matter() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(&tiny(ModelId::Phe), Path::new("."), a.path()).unwrap();
    run(&tiny(ModelId::Phe), Path::new("."), b.path()).unwrap();
    for f in ["summary.json", "metrics.jsonl", "losses.jsonl", "smoothed.csv", "checkpoint.json"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f}");
    }
    let mut other = tiny(ModelId::Phe);
    other.seed = 4;
    let c = tempfile::tempdir().unwrap();
    run(&other, Path::new("."), c.path()).unwrap();
    assert_ne!(read(a.path(), "metrics.jsonl"), read(c.path(), "metrics.jsonl"));
}

#[test]
fn missing_dataset_is_a_data_error() {
    let cfg = ExperimentConfig::from_json(
        r#"{
          "name": "nowhere", "kind": "online_stream",
          "hash": { "bucket_count": 5, "num_hashes": 2, "weight_buckets": 1, "embed_dim": 2 },
          "head": { "type": "categorical-linear" },
          "data": { "path": "does/not/exist.csv", "columns": [
            { "name": "c", "kind": "categorical" }, { "name": "y", "kind": "target-class" } ] }
        }"#,
    )
    .unwrap();
    assert_eq!(execute(&cfg, Path::new(".")).unwrap_err().exit_code(), 3);
}

#[test]
fn hashed_tables_stay_fixed_size_while_expandable_ones_grow() {
    let phe = execute(&tiny(ModelId::Phe), Path::new(".")).unwrap();
    let pee = execute(&tiny(ModelId::Pee), Path::new(".")).unwrap();
    assert_eq!(phe.summary.embedding_params, Some(2 * (31 * 4 + 11 * 2)));
    let vocab = pee.model.as_ref().unwrap().vocab_size().unwrap();
    assert!(vocab > 0);
    assert_eq!(pee.summary.embedding_params, Some(2 * vocab * 4));
}
