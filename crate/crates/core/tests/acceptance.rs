//! One PASS/FAIL line per acceptance criterion. Exits non-zero when a
//! criterion fails that is not listed in `EXPECTED_FAILURES`.

mod common;

use std::collections::hash_map::DefaultHasher;
use std::collections::{HashMap, HashSet};
use std::hash::{Hash, Hasher};
use std::path::Path;
use std::time::{Duration, Instant};

use ctq_core::corpus::{ExampleDatabase, HeldOutSet, PairId, SentencePair};
use ctq_core::datagen::{impute, DatagenRun, Emitted, MissingPolicy, TrainingRow};
use ctq_core::features::{
    chrf, Feature, FeatureConfig, FeatureVector, ImputePolicy, ScoreStore, StoreKind, WhitespaceTokenizer, NUM_FEATURES,
};
use ctq_core::llm_client::{FnMock, GenerationRequest};
use ctq_core::pipeline::{enumerate_store_keys, run_all, Config, RunOptions};
use ctq_core::prompt::{build_prompt, enforce_budget, extract_query, postprocess, PromptSpec};
use ctq_core::regressor::{
    grad_check_decays, split_811, split_811_ungrouped, train, Activation, MlpConfig, Optimizer, TrainConfig, TrainingInstance,
};
use ctq_core::retrieval::{build_index, Bm25Params};
use ctq_core::selection::{ctq_rerank, random_select, single_feature_rerank, FeatureSource};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EXPECTED_FAILURES: &[&str] = &["algorithm1_accounting"];

type Outcome = Result<String, String>;

fn within(limit: Duration, start: Instant) -> Result<Duration, String> {
    let took = start.elapsed();
    if took > limit {
        Err(format!("took {took:.2?}, limit {limit:?}"))
    } else {
        Ok(took)
    }
}

// ---------------------------------------------------------------- chrF

fn brute_chrf(hyp: &str, reference: &str) -> f64 {
    let h: Vec<char> = hyp.split_whitespace().collect::<Vec<_>>().join(" ").chars().collect();
    let r: Vec<char> = reference.split_whitespace().collect::<Vec<_>>().join(" ").chars().collect();
    let grams = |s: &[char], n: usize| -> Vec<String> {
        if s.len() < n {
            return Vec::new();
        }
        (0..=s.len() - n).map(|i| s[i..i + n].iter().collect()).collect()
    };
    let (mut p, mut rc, mut orders) = (0.0, 0.0, 0.0);
    for n in 1..=6 {
        let hg = grams(&h, n);
        let rg = grams(&r, n);
        if hg.is_empty() && rg.is_empty() {
            continue;
        }
        let mut seen: Vec<&String> = Vec::new();
        let mut matched = 0usize;
        for g in &hg {
            if seen.contains(&g) {
                continue;
            }
            seen.push(g);
            let in_h = hg.iter().filter(|x| *x == g).count();
            let in_r = rg.iter().filter(|x| *x == g).count();
            matched += in_h.min(in_r);
        }
        if !hg.is_empty() {
            p += matched as f64 / hg.len() as f64;
        }
        if !rg.is_empty() {
            rc += matched as f64 / rg.len() as f64;
        }
        orders += 1.0;
    }
    if orders == 0.0 {
        return 0.0;
    }
    let (p, rc) = (p / orders, rc / orders);
    if 4.0 * p + rc == 0.0 {
        0.0
    } else {
        100.0 * 5.0 * p * rc / (4.0 * p + rc)
    }
}

fn random_text(rng: &mut ChaCha8Rng, max_len: usize) -> String {
    let alphabet: Vec<char> = "abcde fgé  xy".chars().collect();
    let len = rng.gen_range(0..=max_len);
    (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect()
}

fn chrf_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for i in 0..50 {
        let a = random_text(&mut rng, 40);
        let b = if i % 5 == 0 {
            format!("{a}{}", random_text(&mut rng, 6))
        } else {
            random_text(&mut rng, 40)
        };
        worst = worst.max((chrf(&a, &b) - brute_chrf(&a, &b)).abs());
    }
    for s in ["a", "the cat sat on the mat", "naïve café ###", "  spaced   out  "] {
        if chrf(s, s) != 100.0 {
            return Err(format!("chrf({s:?}, itself) = {}", chrf(s, s)));
        }
    }
    let took = within(Duration::from_secs(1), start)?;
    if worst >= 1e-9 {
        return Err(format!("max |delta| {worst:e}"));
    }
    Ok(format!("50 pairs, max |delta| {worst:.1e}, identity 100, {took:.2?}"))
}

// ---------------------------------------------------------------- BM25

fn bm25_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut docs: Vec<Vec<String>> = Vec::new();
    for i in 0..1000 {
        if i % 10 == 9 {
            let copy = docs[rng.gen_range(0..docs.len())].clone();
            docs.push(copy);
            continue;
        }
        let len = rng.gen_range(3..=20);
        docs.push((0..len).map(|_| format!("w{}", rng.gen_range(0..300))).collect());
    }
    let db = ExampleDatabase::from_pairs(docs.iter().enumerate().map(|(i, d)| (d.join(" "), format!("t{i}"))));
    if db.len() != docs.len() {
        return Err("fixture documents were merged".into());
    }
    let index = build_index(&db, Bm25Params::default()).map_err(|e| e.to_string())?;

    let (k1, b) = (1.2, 0.75);
    let n = docs.len() as f64;
    let avg = docs.iter().map(|d| d.len()).sum::<usize>() as f64 / n;
    let mut checked = 0;
    for _ in 0..100 {
        let qlen = rng.gen_range(1..=6);
        let query: Vec<String> = (0..qlen).map(|_| format!("w{}", rng.gen_range(0..320))).collect();
        let mut terms: Vec<&String> = Vec::new();
        for t in &query {
            if !terms.contains(&t) {
                terms.push(t);
            }
        }
        let dfs: Vec<f64> = terms.iter().map(|t| docs.iter().filter(|x| x.contains(t)).count() as f64).collect();
        let mut expected: Vec<(usize, f64)> = Vec::new();
        for (id, d) in docs.iter().enumerate() {
            let mut score = 0.0;
            for (t, &df) in terms.iter().zip(&dfs) {
                let tf = d.iter().filter(|w| w == t).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * d.len() as f64 / avg));
            }
            if score > 0.0 {
                expected.push((id, score));
            }
        }
        expected.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
        for limit in [100, 1000] {
            let got = index.shortlist(&query.join(" "), limit);
            let want: Vec<usize> = expected.iter().take(limit).map(|e| e.0).collect();
            let ids: Vec<usize> = got.ids().collect();
            if ids != want {
                let at = ids.iter().zip(&want).position(|(x, y)| x != y).unwrap_or(ids.len().min(want.len()));
                return Err(format!(
                    "query {:?}: rank mismatch at n={limit}, position {at}: got {:?}, oracle {:?} ({} vs {} entries)",
                    query.join(" "),
                    got.entries.get(at),
                    expected.get(at),
                    ids.len(),
                    want.len()
                ));
            }
            for (c, e) in got.entries.iter().zip(&expected) {
                if (c.score - e.1).abs() > 1e-9 * e.1.max(1.0) {
                    return Err(format!("doc {} score {} vs {}", c.pair_id, c.score, e.1));
                }
            }
        }
        checked += 1;
    }
    let took = within(Duration::from_secs(5), start)?;
    Ok(format!("1000 docs, {checked} queries, exact rank match, {took:.2?}"))
}

// ---------------------------------------------------------------- gradients

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let batch: Vec<(Vec<f64>, f64)> = (0..4)
        .map(|_| ((0..NUM_FEATURES).map(|_| rng.gen_range(-1.5..1.5)).collect(), rng.gen_range(-1.0..1.0)))
        .collect();
    // each optimizer is checked on the objective it is trained with
    let decays: Vec<(Optimizer, f64)> = vec![(Optimizer::Sgd, 0.0), (Optimizer::Adam, 1e-4), (Optimizer::Rmsprop, 1e-2)];
    let decay_values: Vec<f64> = decays.iter().map(|d| d.1).collect();
    let mut worst_smooth = 0.0f64;
    let mut worst_relu = 0.0f64;
    for (i, act) in [Activation::Sigmoid, Activation::Tanh, Activation::Relu].into_iter().enumerate() {
        let mlp = MlpConfig::new(3, 64, act);
        let reports = grad_check_decays(&mlp, &decay_values, &batch, 100 + i as u64).map_err(|e| e.to_string())?;
        let limit = if act == Activation::Relu { 1e-4 } else { 1e-6 };
        for ((opt, _), r) in decays.iter().zip(reports) {
            let err = r.max_relative_error;
            if err >= limit {
                return Err(format!("{act}/{opt}: relative error {err:e} >= {limit:e}"));
            }
            if act == Activation::Relu {
                worst_relu = worst_relu.max(err);
            } else {
                worst_smooth = worst_smooth.max(err);
            }
        }
    }
    let took = within(Duration::from_secs(30), start)?;
    Ok(format!(
        "9 combinations on 12-64-64-64-1, max rel err {worst_smooth:.1e} smooth, {worst_relu:.1e} relu, {took:.2?}"
    ))
}

// ---------------------------------------------------------------- training

fn training_sanity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let w: Vec<f64> = (0..NUM_FEATURES).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let data: Vec<TrainingInstance> = (0..10_000)
        .map(|_| {
            let x: [f64; NUM_FEATURES] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            TrainingInstance {
                features: FeatureVector::from_array(x),
                ctq: x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + 2.0,
            }
        })
        .collect();
    let (tr, val, _) = split_811_ungrouped(data, 4);
    let mean = val.iter().map(|t| t.ctq).sum::<f64>() / val.len() as f64;
    let var = val.iter().map(|t| (t.ctq - mean).powi(2)).sum::<f64>() / val.len() as f64;
    let mlp = MlpConfig::new(2, 64, Activation::Relu);
    let tc = TrainConfig {
        optimizer: Optimizer::Adam,
        learning_rate: 0.001,
        epochs: 40,
        seed: 11,
        ..TrainConfig::default()
    };
    let a = train(&tr, &val, &mlp, &tc).map_err(|e| e.to_string())?;
    let b = train(&tr, &val, &mlp, &tc).map_err(|e| e.to_string())?;
    let bits = |h: &[ctq_core::regressor::EpochStats]| -> Vec<(u64, u64)> {
        h.iter().map(|s| (s.train_mse.to_bits(), s.val_mse.to_bits())).collect()
    };
    if bits(&a.history) != bits(&b.history) {
        return Err("histories of two seeded runs differ".into());
    }
    let best = a.history[a.best_epoch].val_mse;
    let took = within(Duration::from_secs(60), start)?;
    if best >= 0.01 * var {
        return Err(format!("val MSE {best:.5} vs variance {var:.4}"));
    }
    Ok(format!(
        "val MSE {best:.2e} = {:.3}% of variance, identical histories, {took:.2?}",
        100.0 * best / var
    ))
}

// ---------------------------------------------------------------- Algorithm 1 accounting

fn algorithm1_accounting() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let db_pairs: Vec<(String, String)> = (0..3000).map(|_| common::sentence(&mut rng, 5, 10)).collect();
    let db = ExampleDatabase::from_pairs(db_pairs);
    let queries: Vec<SentencePair> = (0..997)
        .map(|i| {
            let (s, _) = common::sentence(&mut rng, 4, 7);
            SentencePair::new(i, s, format!("reference {i}"))
        })
        .collect();
    let (heldout, dropped) = HeldOutSet::against(&db, queries);
    if dropped != 0 || heldout.len() != 997 {
        return Err(format!("fixture held-out set has {} queries", heldout.len()));
    }
    let index = build_index(&db, Bm25Params::default()).map_err(|e| e.to_string())?;
    let store = ScoreStore::new();
    let spec = PromptSpec::new("English", "French").map_err(|e| e.to_string())?;
    let mut run = DatagenRun::new(&heldout, &db, &index, &store, spec);
    run.k = 100;
    run.missing = MissingPolicy::FillDefault;
    let llm = FnMock(|_: &GenerationRequest| Ok(" la maison ###".to_string()));
    let mut rows: Vec<TrainingRow> = Vec::new();
    let report = run
        .generate(&llm, &HashSet::new(), |e| {
            if let Emitted::Row(r) = e {
                rows.push(r);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let distinct: HashSet<(usize, PairId)> = rows.iter().map(|r| (r.query_id, r.candidate_id)).collect();
    let mut per_query: HashMap<usize, usize> = HashMap::new();
    for r in &rows {
        *per_query.entry(r.query_id).or_default() += 1;
    }
    let (tr, val, test) = split_811(rows.clone(), 13, |r: &TrainingRow| r.query_id);
    let ids = |s: &[TrainingRow]| -> HashSet<usize> { s.iter().map(|r| r.query_id).collect() };
    let (a, b, c) = (ids(&tr), ids(&val), ids(&test));
    let leaks = a.intersection(&b).count() + a.intersection(&c).count() + b.intersection(&c).count();
    let took = within(Duration::from_secs(120), start)?;

    let mut problems = Vec::new();
    if rows.len() != 99_700 || report.rows != 99_700 || distinct.len() != 99_700 {
        problems.push(format!("{} rows", rows.len()));
    }
    if per_query.len() != 997 || per_query.values().any(|&n| n != 100) {
        problems.push("some query lacks 100 candidates".into());
    }
    if leaks != 0 {
        problems.push(format!("{leaks} query ids shared between splits"));
    }
    let sizes = (tr.len(), val.len(), test.len());
    if sizes != (79_760, 9_970, 9_970) {
        problems.push(format!(
            "split sizes {}/{}/{} (whole 100-row query groups cannot make 79,760/9,970/9,970)",
            sizes.0, sizes.1, sizes.2
        ));
    }
    let summary = format!(
        "{} rows over {} queries, split {}/{}/{}, {leaks} leaked ids, {took:.2?}",
        rows.len(),
        per_query.len(),
        sizes.0,
        sizes.1,
        sizes.2
    );
    if problems.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{}; {summary}", problems.join("; ")))
    }
}

// ---------------------------------------------------------------- planted oracle

const QE: &str = "comet-qe";
const REF_LEN: usize = 400;

/// A fixed pseudo-random score in `[0, 1)` for an ordered text pair.
fn planted_score(a: &str, b: &str) -> f64 {
    let mut h = DefaultHasher::new();
    (a, b).hash(&mut h);
    (h.finish() >> 11) as f64 / (1u64 << 53) as f64
}

/// The planted quality of an example: a fixed mix of the scores the store
/// reports as cmt_in_src and cmt_src_tgt.
fn planted_quality(input: &str, source: &str, target: &str) -> f64 {
    0.6 * planted_score(input, source) + 0.4 * planted_score(source, target)
}

/// Parses every example of a prompt built with English/French labels.
fn prompt_examples(prompt: &str) -> Vec<(String, String)> {
    prompt
        .split("\n###\n")
        .filter_map(|block| {
            let mut lines = block.lines();
            let src = lines.next()?.strip_prefix("English sentence: ")?;
            let tgt = lines.next()?.strip_prefix("French sentence: ")?;
            Some((src.to_string(), tgt.to_string()))
        })
        .collect()
}

fn planted_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let db = ExampleDatabase::from_pairs((0..2000).map(|_| common::sentence(&mut rng, 5, 9)));
    let letters: Vec<char> = ('a'..='z').collect();
    let make_set = |rng: &mut ChaCha8Rng, n: usize| -> Vec<SentencePair> {
        (0..n)
            .map(|i| {
                let (s, _) = common::sentence(rng, 4, 7);
                let reference: String = (0..REF_LEN).map(|_| letters[rng.gen_range(0..26)]).collect();
                SentencePair::new(i, s, reference)
            })
            .collect()
    };
    let (heldout, _) = HeldOutSet::against(&db, make_set(&mut rng, 200));
    let (test, _) = HeldOutSet::against(&db, make_set(&mut rng, 200));
    let index = build_index(&db, Bm25Params::default()).map_err(|e| e.to_string())?;

    let cfg = FeatureConfig::default();
    let queries: Vec<String> = heldout.pairs().iter().chain(test.pairs()).map(|p| p.source.clone()).collect();
    let store_path = tempfile::NamedTempFile::new().map_err(|e| e.to_string())?;
    write_db(&db, store_path.path());
    let mut store = common::synthetic_store(store_path.path(), &queries, 100, 60);
    for key in enumerate_store_keys(&db, &index, &queries, 100, &cfg).map_err(|e| e.to_string())? {
        if key.kind == StoreKind::Pair {
            let (x, y) = (&key.texts[0], &key.texts[1]);
            store.insert_pair_score(QE, x, y, planted_score(x, y)).map_err(|e| e.to_string())?;
        }
    }

    let references: HashMap<String, String> = heldout
        .pairs()
        .iter()
        .chain(test.pairs())
        .map(|p| (p.source.clone(), p.target.clone()))
        .collect();
    let spec = PromptSpec::new("English", "French").map_err(|e| e.to_string())?;
    let mock_spec = spec.clone();
    let llm = FnMock(|req: &GenerationRequest| {
        let input = extract_query(&req.prompt, &mock_spec).expect("well-formed prompt");
        let reference = &references[input];
        let examples = prompt_examples(&req.prompt);
        let q = examples
            .iter()
            .map(|(s, t)| planted_quality(input, s, t))
            .sum::<f64>()
            / examples.len().max(1) as f64;
        let keep = (q * REF_LEN as f64).round() as usize;
        Ok(format!(" {}\n###", &reference[..keep]))
    });

    let mut run = DatagenRun::new(&heldout, &db, &index, &store, spec);
    run.k = 100;
    let mut rows: Vec<TrainingRow> = Vec::new();
    run.generate(&llm, &HashSet::new(), |e| {
        if let Emitted::Row(r) = e {
            rows.push(r);
        }
        Ok(())
    })
    .map_err(|e| e.to_string())?;
    let (tr, val, _) = split_811(rows, 6, |r: &TrainingRow| r.query_id);
    let fill = FeatureVector::from_array([0.0; NUM_FEATURES]);
    let mlp = MlpConfig::new(2, 64, Activation::Tanh);
    let tc = TrainConfig {
        optimizer: Optimizer::Adam,
        learning_rate: 0.003,
        epochs: 30,
        seed: 6,
        ..TrainConfig::default()
    };
    let model = train(&impute(&tr, &fill), &impute(&val, &fill), &mlp, &tc)
        .map_err(|e| e.to_string())?
        .model;

    let policy = ImputePolicy::Strict;
    let source = FeatureSource {
        db: &db,
        store: &store,
        config: &cfg,
        policy: &policy,
    };
    let k = 4;
    let mut agree = 0usize;
    let mut totals: HashMap<&str, f64> = HashMap::new();
    for q in test.pairs() {
        let cands = index.shortlist(&q.source, 100);
        let quality = |id: PairId| {
            let p = db.get(id).unwrap();
            planted_quality(&q.source, &p.source, &p.target)
        };
        let best = cands
            .ids()
            .max_by(|&x, &y| quality(x).total_cmp(&quality(y)).then(y.cmp(&x)))
            .ok_or("empty shortlist")?;
        let mean_q = |ids: Vec<PairId>| ids.iter().map(|&i| quality(i)).sum::<f64>() / ids.len() as f64;
        let ctq = ctq_rerank(&cands, &q.source, &model, &source, k).map_err(|e| e.to_string())?;
        if ctq.chosen[0].pair_id == best {
            agree += 1;
        }
        *totals.entry("ctq").or_default() += mean_q(ctq.ids());
        for f in [Feature::CmtInSrc, Feature::CmtSrcTgt] {
            let r = single_feature_rerank(&cands, &q.source, f, &source, k).map_err(|e| e.to_string())?;
            *totals.entry(f.name()).or_default() += mean_q(r.ids());
        }
        for seed in 1..=3u64 {
            let r = random_select(&db, k, seed * 1000 + q.id as u64, q.id).map_err(|e| e.to_string())?;
            *totals.entry("random").or_default() += mean_q(r.ids()) / 3.0;
        }
    }
    let n = test.len() as f64;
    let top1 = agree as f64 / n;
    let m = |key: &str| totals[key] / n;
    let took = within(Duration::from_secs(300), start)?;
    let summary = format!(
        "top-1 {:.1}%, mean oracle ctq {:.4} vs random {:.4}, cmt_in_src {:.4}, cmt_src_tgt {:.4}, {took:.2?}",
        100.0 * top1,
        m("ctq"),
        m("random"),
        m("cmt_in_src"),
        m("cmt_src_tgt")
    );
    if top1 < 0.9 || m("ctq") <= m("random") || m("ctq") <= m("cmt_in_src") || m("ctq") <= m("cmt_src_tgt") {
        return Err(summary);
    }
    Ok(summary)
}

fn write_db(db: &ExampleDatabase, path: &Path) {
    let pairs: Vec<(String, String)> = db.pairs().iter().map(|p| (p.source.clone(), p.target.clone())).collect();
    common::write_tsv(path, &pairs);
}

// ---------------------------------------------------------------- prompt

fn prompt_byte_exactness() -> Outcome {
    let spec = PromptSpec::new("German", "English").map_err(|e| e.to_string())?;
    let golden = std::fs::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/prompt_k2.txt"))
        .map_err(|e| e.to_string())?;
    let examples = [
        SentencePair::new(0, "Das Haus ist klein.", "The house is small."),
        SentencePair::new(1, "Ich habe  zwei Katzen.", "I have two cats."),
    ];
    let built = build_prompt(&examples, "Der Hund schläft.", &spec);
    if built.as_bytes() != golden.as_slice() {
        return Err(format!("prompt differs from golden file:\n{built}"));
    }
    let cases: [(&str, &str); 10] = [
        (" The dog sleeps.\n###\nGerman sentence: x", "The dog sleeps."),
        ("The dog sleeps.", "The dog sleeps."),
        ("###", ""),
        ("  a ### b ### c", "a"),
        ("English sentence: Hello there\n###", "Hello there"),
        ("\n\nHi\n", "Hi"),
        ("A#B ## C\n###", "A#B ## C"),
        ("x####", "x"),
        ("English sentence: English sentence: y", "English sentence: y"),
        ("", ""),
    ];
    for (completion, want) in cases {
        let got = postprocess(completion, &spec);
        if got.text != want || got.empty != want.is_empty() {
            return Err(format!("postprocess({completion:?}) = {:?}, want {want:?}", got.text));
        }
    }
    Ok("k=2 golden prompt byte-identical, 10 completions truncated correctly".into())
}

// ---------------------------------------------------------------- budget

fn words(prefix: &str, n: usize) -> String {
    (0..n).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>().join(" ")
}

/// An example whose rendered block is exactly `total` whitespace tokens.
fn example_of(id: usize, total: usize) -> SentencePair {
    let body = total - 5;
    SentencePair::new(id, words("s", body / 2), words("t", body - body / 2))
}

fn budget_enforcement() -> Outcome {
    let spec = PromptSpec::new("German", "English").map_err(|e| e.to_string())?;
    let input = words("q", 56);
    let orders: [&[usize]; 4] = [
        &[400, 300, 200, 150, 100],
        &[100, 400, 300, 200, 150],
        &[150, 100, 400, 300, 200],
        &[200, 150, 100, 400, 300],
    ];
    let mut lines = Vec::new();
    for lens in orders {
        let examples: Vec<SentencePair> = lens.iter().enumerate().map(|(i, &l)| example_of(i, l)).collect();
        let mut used = 60;
        let mut expected = Vec::new();
        for (i, &l) in lens.iter().enumerate() {
            if used + l > 1000 {
                break;
            }
            used += l;
            expected.push(i);
        }
        let kept = enforce_budget(&examples, &input, &spec, &WhitespaceTokenizer).map_err(|e| e.to_string())?;
        let got: Vec<usize> = kept.iter().map(|p| p.id).collect();
        if got != expected {
            return Err(format!("lengths {lens:?}: kept {got:?}, oracle {expected:?}"));
        }
        let tokens = build_prompt(&kept, &input, &spec).split_whitespace().count();
        if tokens != used || tokens > 1000 {
            return Err(format!("lengths {lens:?}: prompt has {tokens} tokens, oracle {used}"));
        }
        lines.push(format!("{:?}", got.iter().map(|&i| lens[i]).collect::<Vec<_>>()));
    }
    Ok(format!("survivors {} at budget 1000", lines.join(" ")))
}

// ---------------------------------------------------------------- determinism

fn run_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let world = common::tiny_world(tmp.path(), 21);
    let mut cfg = Config::load(&world.config).map_err(|e| e.to_string())?;
    for dir in ["run_a", "run_b"] {
        cfg.run.dir = tmp.path().join(dir);
        run_all(&cfg, RunOptions::default()).map_err(|e| e.to_string())?;
    }
    let a = common::snapshot(&tmp.path().join("run_a"));
    let b = common::snapshot(&tmp.path().join("run_b"));
    if a.keys().ne(b.keys()) {
        return Err("run directories hold different files".into());
    }
    if let Some(k) = a.keys().find(|k| a[*k] != b[*k]) {
        return Err(format!("{k} differs"));
    }
    Ok(format!("{} files byte-identical", a.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("chrf_oracle", chrf_oracle),
        ("bm25_oracle", bm25_oracle),
        ("gradient_correctness", gradient_correctness),
        ("training_sanity", training_sanity),
        ("algorithm1_accounting", algorithm1_accounting),
        ("planted_oracle", planted_oracle),
        ("prompt_byte_exactness", prompt_byte_exactness),
        ("budget_enforcement", budget_enforcement),
        ("run_determinism", run_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut unexpected = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                let expected = EXPECTED_FAILURES.contains(&name);
                println!("FAIL {name}: {detail}{}", if expected { " [expected]" } else { "" });
                if !expected {
                    unexpected += 1;
                }
            }
        }
    }
    if unexpected > 0 {
        std::process::exit(1);
    }
}
