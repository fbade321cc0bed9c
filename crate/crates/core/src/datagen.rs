//! Training data for the CTQ scorer: every shortlisted example is tried as
//! the single prompt example for its held-out input, and the quality of the
//! resulting translation becomes the regression target.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{ExampleDatabase, HeldOutSet, PairId, SentencePair};
use crate::error::{Error, Result};
use crate::features::{chrf, extract_features, Feature, FeatureConfig, FeatureVector, ImputePolicy, ScoreStore, NUM_FEATURES};
use crate::llm_client::{batch_generate, GenerationRequest, LlmClient, Retrying, DEFAULT_MAX_IN_FLIGHT, DEFAULT_MAX_NEW_TOKENS};
use crate::prompt::{build_prompt, count_examples, postprocess, PromptSpec};
use crate::regressor::TrainingInstance;
use crate::retrieval::{Bm25Index, DEFAULT_SHORTLIST};

pub const TRAIN_HEADER: &str = "# ctq-train v1";
pub const TOMBSTONE_HEADER: &str = "# ctq-tombstones v1";
pub const DEFAULT_MAX_TOMBSTONE_RATE: f64 = 0.01;

/// Sentence-level metric used as the regression target.
#[derive(Debug, Clone, PartialEq)]
pub enum XlateMetric {
    Chrf,
    /// Precomputed reference-aware scores keyed by [`triple_hash`].
    External(HashMap<[u8; 32], f64>),
}

/// `sha256(len(src) ‖ src ‖ len(hyp) ‖ hyp ‖ ref)` with lengths as
/// little-endian u64 byte counts.
pub fn triple_hash(src: &str, hyp: &str, reference: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((src.len() as u64).to_le_bytes());
    h.update(src.as_bytes());
    h.update((hyp.len() as u64).to_le_bytes());
    h.update(hyp.as_bytes());
    h.update(reference.as_bytes());
    h.finalize().into()
}

impl XlateMetric {
    /// Reads `hexhash<TAB>score` lines.
    pub fn load_external(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut map = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (hash, score) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(i + 1, "expected `hash<TAB>score`"))?;
            let mut key = [0u8; 32];
            hex::decode_to_slice(hash.trim(), &mut key).map_err(|e| Error::parse(i + 1, format!("bad hash: {e}")))?;
            let score: f64 = score
                .trim()
                .parse()
                .map_err(|e| Error::parse(i + 1, format!("bad score: {e}")))?;
            map.insert(key, score);
        }
        Ok(XlateMetric::External(map))
    }
}

pub fn xlate_score(src: &str, hyp: &str, reference: &str, metric: &XlateMetric) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::InvalidParameter("reference translation is empty".into()));
    }
    match metric {
        XlateMetric::Chrf => Ok(chrf(hyp, reference)),
        XlateMetric::External(map) => map.get(&triple_hash(src, hyp, reference)).copied().ok_or_else(|| {
            Error::InvalidParameter(format!(
                "external metric has no score for source {src:?}, hypothesis {hyp:?}, reference {reference:?}"
            ))
        }),
    }
}

/// Handling of store misses during data generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    #[default]
    Strict,
    /// Missing features are written as NaN and imputed when training.
    FillDefault,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub query_id: usize,
    pub candidate_id: PairId,
    pub features: FeatureVector,
    pub ctq: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tombstone {
    pub query_id: usize,
    pub candidate_id: PairId,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Emitted {
    Row(TrainingRow),
    Tombstone(Tombstone),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatagenReport {
    pub queries: usize,
    pub rows: usize,
    pub tombstones: usize,
    /// Rows or tombstones found from an earlier run and not regenerated.
    pub resumed: usize,
}

pub struct DatagenRun<'a> {
    pub heldout: &'a HeldOutSet,
    pub db: &'a ExampleDatabase,
    pub index: &'a Bm25Index,
    pub store: &'a ScoreStore,
    pub features: FeatureConfig,
    pub missing: MissingPolicy,
    pub prompt: PromptSpec,
    pub metric: XlateMetric,
    pub k: usize,
    pub max_in_flight: usize,
    pub max_new_tokens: usize,
    pub retries: usize,
    pub retry_backoff: Duration,
    pub max_tombstone_rate: f64,
}

impl<'a> DatagenRun<'a> {
    pub fn new(
        heldout: &'a HeldOutSet,
        db: &'a ExampleDatabase,
        index: &'a Bm25Index,
        store: &'a ScoreStore,
        prompt: PromptSpec,
    ) -> Self {
        Self {
            heldout,
            db,
            index,
            store,
            features: FeatureConfig::default(),
            missing: MissingPolicy::Strict,
            prompt,
            metric: XlateMetric::Chrf,
            k: DEFAULT_SHORTLIST,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            retries: 3,
            retry_backoff: Duration::from_millis(200),
            max_tombstone_rate: DEFAULT_MAX_TOMBSTONE_RATE,
        }
    }

    fn policy(&self) -> ImputePolicy {
        match self.missing {
            MissingPolicy::Strict => ImputePolicy::Strict,
            MissingPolicy::FillDefault => ImputePolicy::FillDefault(FeatureVector::from_array([f64::NAN; NUM_FEATURES])),
        }
    }

    /// Emits one row (or tombstone) per shortlisted candidate, in held-out
    /// order then shortlist rank, skipping `(query, candidate)` keys in
    /// `done`. Fails when more than `max_tombstone_rate` of all keys are
    /// tombstones.
    pub fn generate<C, F>(&self, llm: &C, done: &HashSet<(usize, PairId)>, mut emit: F) -> Result<DatagenReport>
    where
        C: LlmClient + ?Sized,
        F: FnMut(Emitted) -> Result<()>,
    {
        if self.k == 0 {
            return Err(Error::InvalidParameter("K must be at least 1".into()));
        }
        let client = Retrying {
            inner: llm,
            attempts: self.retries.max(1),
            backoff: self.retry_backoff,
        };
        let policy = self.policy();
        let mut report = DatagenReport {
            queries: self.heldout.len(),
            ..DatagenReport::default()
        };
        let mut failed_total = 0usize;
        let mut total = 0usize;
        for query in self.heldout.pairs() {
            let shortlist = self.index.shortlist(&query.source, self.k);
            let mut todo: Vec<&SentencePair> = Vec::new();
            for cand in &shortlist.entries {
                total += 1;
                if done.contains(&(query.id, cand.pair_id)) {
                    report.resumed += 1;
                    continue;
                }
                let pair = self.db.get(cand.pair_id).ok_or_else(|| {
                    Error::InvalidParameter(format!("index refers to pair {} outside the database", cand.pair_id))
                })?;
                todo.push(pair);
            }
            let reqs: Vec<GenerationRequest> = todo
                .iter()
                .map(|p| {
                    let prompt = build_prompt(std::slice::from_ref(*p), &query.source, &self.prompt);
                    debug_assert_eq!(count_examples(&prompt, &self.prompt), 1);
                    GenerationRequest::greedy(prompt)
                        .with_max_new_tokens(self.max_new_tokens)
                        .with_stop(self.prompt.delimiter.clone())
                })
                .collect();
            let responses = batch_generate(&client, &reqs, self.max_in_flight);
            for (pair, response) in todo.into_iter().zip(responses) {
                let item = match response {
                    Ok(resp) => {
                        let hyp = postprocess(&resp.completion, &self.prompt).text;
                        let ctq = xlate_score(&query.source, &hyp, &query.target, &self.metric)?;
                        let features = extract_features(pair, &query.source, self.store, &self.features, &policy)?.vector;
                        report.rows += 1;
                        Emitted::Row(TrainingRow {
                            query_id: query.id,
                            candidate_id: pair.id,
                            features,
                            ctq,
                        })
                    }
                    Err(e) => {
                        log::warn!("query {} candidate {}: generation failed: {e}", query.id, pair.id);
                        report.tombstones += 1;
                        failed_total += 1;
                        Emitted::Tombstone(Tombstone {
                            query_id: query.id,
                            candidate_id: pair.id,
                            reason: e.to_string(),
                        })
                    }
                };
                emit(item)?;
            }
        }
        if total > 0 && failed_total as f64 > self.max_tombstone_rate * total as f64 {
            return Err(Error::TooManyTombstones {
                failed: failed_total,
                total,
            });
        }
        Ok(report)
    }

    /// Writes rows to `out` and tombstones to [`tombstone_path`]`(out)`,
    /// continuing after whatever an earlier run already wrote there.
    pub fn generate_to_file<C: LlmClient + ?Sized>(&self, llm: &C, out: &Path) -> Result<DatagenReport> {
        let tomb_path = tombstone_path(out);
        let mut done: HashSet<(usize, PairId)> = HashSet::new();
        let rows_exist = prepare_append(out, TRAIN_HEADER, &column_line())?;
        if rows_exist {
            for row in read_training_file(out)? {
                done.insert((row.query_id, row.candidate_id));
            }
        }
        let tombs_exist = prepare_append(&tomb_path, TOMBSTONE_HEADER, "query_id\tcandidate_id\treason")?;
        if tombs_exist {
            for t in read_tombstones(&tomb_path)? {
                done.insert((t.query_id, t.candidate_id));
            }
        }
        let open = |p: &Path| -> Result<BufWriter<File>> {
            let f = OpenOptions::new().append(true).open(p).map_err(|e| Error::io(p, e))?;
            Ok(BufWriter::new(f))
        };
        let mut rows = open(out)?;
        let mut tombs = open(&tomb_path)?;
        let result = self.generate(llm, &done, |item| {
            match item {
                Emitted::Row(r) => writeln!(rows, "{}", format_row(&r)).map_err(|e| Error::io(out, e))?,
                Emitted::Tombstone(t) => writeln!(tombs, "{}\t{}\t{}", t.query_id, t.candidate_id, t.reason.replace(['\t', '\n'], " "))
                    .map_err(|e| Error::io(&tomb_path, e))?,
            }
            Ok(())
        });
        rows.flush().map_err(|e| Error::io(out, e))?;
        tombs.flush().map_err(|e| Error::io(&tomb_path, e))?;
        result
    }
}

pub fn tombstone_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".tombstones");
    PathBuf::from(s)
}

fn column_line() -> String {
    let mut cols = vec!["query_id", "candidate_id"];
    cols.extend(Feature::ALL.iter().map(|f| f.name()));
    cols.push("ctq");
    cols.join(",")
}

pub fn format_row(r: &TrainingRow) -> String {
    let mut s = format!("{},{}", r.query_id, r.candidate_id);
    for v in r.features.to_array() {
        s.push_str(&format!(",{v}"));
    }
    s.push_str(&format!(",{}", r.ctq));
    s
}

/// Creates the file with its header lines, or drops a torn final line from
/// an interrupted run. Returns whether the file already existed.
fn prepare_append(path: &Path, header: &str, columns: &str) -> Result<bool> {
    match std::fs::read(path) {
        Ok(bytes) => {
            if !bytes.ends_with(b"\n") {
                let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
                let f = OpenOptions::new().write(true).open(path).map_err(|e| Error::io(path, e))?;
                f.set_len(keep as u64).map_err(|e| Error::io(path, e))?;
                if keep == 0 {
                    std::fs::write(path, format!("{header}\n{columns}\n")).map_err(|e| Error::io(path, e))?;
                }
            }
            Ok(true)
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            std::fs::write(path, format!("{header}\n{columns}\n")).map_err(|e| Error::io(path, e))?;
            Ok(false)
        }
        Err(e) => Err(Error::io(path, e)),
    }
}

pub fn read_training_file(path: &Path) -> Result<Vec<TrainingRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_training(BufReader::new(file))
}

pub fn read_training<R: BufRead>(reader: R) -> Result<Vec<TrainingRow>> {
    let mut lines = reader.lines().enumerate();
    match lines.next() {
        Some((_, Ok(h))) if h == TRAIN_HEADER => {}
        Some((_, Ok(h))) => return Err(Error::parse(1, format!("expected `{TRAIN_HEADER}`, found `{h}`"))),
        Some((_, Err(e))) => return Err(Error::parse(1, e.to_string())),
        None => return Err(Error::EmptyInput("training file".into())),
    }
    let expected = column_line();
    let mut rows = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        let line = line.map_err(|e| Error::parse(n, e.to_string()))?;
        if n == 2 {
            if line != expected {
                return Err(Error::parse(n, "unexpected column line"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != NUM_FEATURES + 3 {
            return Err(Error::parse(n, format!("expected {} fields, found {}", NUM_FEATURES + 3, fields.len())));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|e| Error::parse(n, format!("bad id `{s}`: {e}")));
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::parse(n, format!("bad number `{s}`: {e}")));
        let mut feats = [0.0; NUM_FEATURES];
        for (slot, s) in feats.iter_mut().zip(&fields[2..2 + NUM_FEATURES]) {
            *slot = num(s)?;
        }
        let ctq = num(fields[NUM_FEATURES + 2])?;
        if !ctq.is_finite() {
            return Err(Error::parse(n, "ctq must be finite"));
        }
        rows.push(TrainingRow {
            query_id: int(fields[0])?,
            candidate_id: int(fields[1])?,
            features: FeatureVector::from_array(feats),
            ctq,
        });
    }
    Ok(rows)
}

pub fn read_tombstones(path: &Path) -> Result<Vec<Tombstone>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if i < 2 || line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, '\t');
        let mut id = || -> Result<usize> {
            parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::parse(i + 1, "bad tombstone"))
        };
        let query_id = id()?;
        let candidate_id = id()?;
        out.push(Tombstone {
            query_id,
            candidate_id,
            reason: parts.next().unwrap_or("").to_string(),
        });
    }
    Ok(out)
}

/// Per-feature means over the finite values of each column; 0 for a
/// column with none.
pub fn finite_means(rows: &[TrainingRow]) -> FeatureVector {
    let mut sum = [0.0; NUM_FEATURES];
    let mut count = [0usize; NUM_FEATURES];
    for r in rows {
        for (j, v) in r.features.to_array().into_iter().enumerate() {
            if v.is_finite() {
                sum[j] += v;
                count[j] += 1;
            }
        }
    }
    let mut mean = [0.0; NUM_FEATURES];
    for j in 0..NUM_FEATURES {
        if count[j] == 0 {
            log::warn!("feature {} has no observed values; imputing 0", Feature::ALL[j]);
            continue;
        }
        mean[j] = sum[j] / count[j] as f64;
    }
    FeatureVector::from_array(mean)
}

/// Replaces non-finite feature values with `fill`.
pub fn impute(rows: &[TrainingRow], fill: &FeatureVector) -> Vec<TrainingInstance> {
    let fill = fill.to_array();
    rows.iter()
        .map(|r| {
            let mut a = r.features.to_array();
            for (v, f) in a.iter_mut().zip(fill) {
                if !v.is_finite() {
                    *v = f;
                }
            }
            TrainingInstance {
                features: FeatureVector::from_array(a),
                ctq: r.ctq,
            }
        })
        .collect()
}
