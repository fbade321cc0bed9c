#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ctq_core::corpus::{load_parallel, ParallelFormat};
use ctq_core::features::{unit_normalize, FeatureConfig, ScoreStore, StoreKind};
use ctq_core::pipeline::enumerate_store_keys;
use ctq_core::retrieval::{build_index, Bm25Params};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const VOCAB: [&str; 40] = [
    "red", "blue", "house", "car", "dog", "cat", "river", "tree", "small", "big", "old", "new", "man", "woman", "child",
    "sees", "likes", "has", "runs", "sleeps", "near", "under", "over", "green", "bird", "book", "road", "city", "sun",
    "moon", "walks", "reads", "quick", "slow", "garden", "table", "window", "door", "light", "night",
];

pub fn translate_word(w: &str) -> String {
    format!("{}o", w.chars().rev().collect::<String>())
}

pub fn sentence(rng: &mut ChaCha8Rng, min: usize, max: usize) -> (String, String) {
    let len = rng.gen_range(min..=max);
    let words: Vec<&str> = (0..len).map(|_| VOCAB[rng.gen_range(0..VOCAB.len())]).collect();
    let src = words.join(" ");
    let tgt = words.iter().map(|w| translate_word(w)).collect::<Vec<_>>().join(" ");
    (src, tgt)
}

pub fn write_tsv(path: &Path, pairs: &[(String, String)]) {
    let mut s = String::new();
    for (a, b) in pairs {
        writeln!(s, "{a}\t{b}").unwrap();
    }
    std::fs::write(path, s).unwrap();
}

/// Random scores for every store key the given queries can need.
pub fn synthetic_store(db_path: &Path, queries: &[String], n: usize, seed: u64) -> ScoreStore {
    let db = load_parallel(db_path, ParallelFormat::Tsv).unwrap();
    let index = build_index(&db, Bm25Params::default()).unwrap();
    let cfg = FeatureConfig::default();
    let keys = enumerate_store_keys(&db, &index, queries, n, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ScoreStore::new();
    for key in keys {
        match key.kind {
            StoreKind::Emb => {
                let v: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
                store.insert_embedding(&key.id, &key.texts[0], unit_normalize(&v)).unwrap();
            }
            StoreKind::Pair => store
                .insert_pair_score(&key.id, &key.texts[0], &key.texts[1], rng.gen_range(0.0..1.0))
                .unwrap(),
            StoreKind::Ppl => store.insert_ppl(&key.id, &key.texts[0], rng.gen_range(1.0..60.0)).unwrap(),
        }
    }
    store
}

pub struct FixtureWorld {
    pub dir: PathBuf,
    pub config: PathBuf,
}

/// A 200-pair database with held-out and test sets, a full score store and
/// a config that runs every method against the echo mock.
pub fn tiny_world(dir: &Path, seed: u64) -> FixtureWorld {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let db: Vec<(String, String)> = (0..200).map(|_| sentence(&mut rng, 3, 8)).collect();
    let heldout: Vec<(String, String)> = (0..30).map(|_| sentence(&mut rng, 4, 7)).collect();
    let test: Vec<(String, String)> = (0..20).map(|_| sentence(&mut rng, 4, 7)).collect();
    write_tsv(&dir.join("db.tsv"), &db);
    write_tsv(&dir.join("heldout.tsv"), &heldout);
    write_tsv(&dir.join("test.tsv"), &test);
    let queries: Vec<String> = heldout.iter().chain(&test).map(|p| p.0.clone()).collect();
    synthetic_store(&dir.join("db.tsv"), &queries, 100, seed + 1)
        .save(&dir.join("store.tsv"))
        .unwrap();
    let config = dir.join("config.toml");
    std::fs::write(
        &config,
        r#"[run]
dir = "run"
seed = 7

[data]
db = "db.tsv"
heldout = "heldout.tsv"
test = "test.tsv"
store = "store.tsv"

[datagen]
k = 20

[train]
hidden_layers = 2
hidden_width = 16
epochs = 5

[select]
methods = ["ctq", "bm25", "rbm25", "random", "feat:labse_in_src", "scavg:labse_in_src,ppl_src_tgt"]

[llm]
endpoint = "mock:echo"
"#,
    )
    .unwrap();
    FixtureWorld {
        dir: dir.to_path_buf(),
        config,
    }
}

/// Every file under `dir` by relative path, with manifest timestamps zeroed.
pub fn snapshot(dir: &Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
            let mut bytes = std::fs::read(&p).unwrap();
            if rel == "manifest.json" {
                let mut m: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                for stage in m["stages"].as_object_mut().unwrap().values_mut() {
                    stage["started_at"] = 0.into();
                    stage["finished_at"] = 0.into();
                }
                bytes = serde_json::to_vec(&m).unwrap();
            }
            out.insert(rel, bytes);
        }
    }
    out
}
