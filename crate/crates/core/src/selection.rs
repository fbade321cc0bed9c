use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ExampleDatabase, PairId, SentencePair};
use crate::error::{Error, Result};
use crate::features::{extract_features, Feature, FeatureConfig, FeatureVector, ImputePolicy, ScoreStore};
use crate::regressor::CtqModel;
use crate::retrieval::{tokenize_for_retrieval, Candidate, CandidateList};

pub const DEFAULT_K: usize = 4;

/// Longest word n-gram tracked by the diversity reranker.
pub const RBM25_MAX_N: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Method {
    Ctq,
    Bm25,
    Rbm25,
    Random,
    Feature(Feature),
    ScoreAvg(Vec<Feature>),
}

impl Method {
    /// Whether the method reads model-backed feature scores.
    pub fn needs_features(&self) -> bool {
        matches!(self, Method::Ctq | Method::Feature(_) | Method::ScoreAvg(_))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Ctq => f.write_str("ctq"),
            Method::Bm25 => f.write_str("bm25"),
            Method::Rbm25 => f.write_str("rbm25"),
            Method::Random => f.write_str("random"),
            Method::Feature(feat) => write!(f, "feat:{feat}"),
            Method::ScoreAvg(feats) => {
                let names: Vec<&str> = feats.iter().map(|x| x.name()).collect();
                write!(f, "scavg:{}", names.join(","))
            }
        }
    }
}

fn rankable(name: &str) -> Result<Feature> {
    let feature: Feature = name.trim().parse()?;
    if !feature.is_rankable() {
        return Err(Error::UnknownFeature(format!("{name} (token-count features cannot be ranked)")));
    }
    Ok(feature)
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ctq" => Ok(Method::Ctq),
            "bm25" => Ok(Method::Bm25),
            "rbm25" => Ok(Method::Rbm25),
            "random" => Ok(Method::Random),
            _ => {
                if let Some(name) = s.strip_prefix("feat:") {
                    Ok(Method::Feature(rankable(name)?))
                } else if let Some(list) = s.strip_prefix("scavg:") {
                    let feats = list.split(',').map(rankable).collect::<Result<Vec<_>>>()?;
                    Ok(Method::ScoreAvg(feats))
                } else {
                    Err(Error::Config(format!(
                        "unknown method `{s}` (expected ctq, bm25, rbm25, random, feat:<name> or scavg:<f1,f2,...>)"
                    )))
                }
            }
        }
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Chosen {
    pub pair_id: PairId,
    pub score: f64,
    /// Added by the random fallback rather than by the method itself.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fill: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub method: String,
    pub input_id: usize,
    /// Best first.
    pub chosen: Vec<Chosen>,
    /// Every candidate with the score the method ranked it by, in ranked order.
    pub diagnostics: Vec<Candidate>,
}

impl SelectionResult {
    pub fn ids(&self) -> Vec<PairId> {
        self.chosen.iter().map(|c| c.pair_id).collect()
    }
}

/// Placement of the selected examples in the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExampleOrder {
    /// Best example right before the query.
    #[default]
    BestLast,
    BestFirst,
}

impl ExampleOrder {
    /// Turns a best-first list into prompt order.
    pub fn arrange<T: Clone>(self, best_first: &[T]) -> Vec<T> {
        match self {
            ExampleOrder::BestFirst => best_first.to_vec(),
            ExampleOrder::BestLast => best_first.iter().rev().cloned().collect(),
        }
    }
}

impl FromStr for ExampleOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "best-last" => Ok(ExampleOrder::BestLast),
            "best-first" => Ok(ExampleOrder::BestFirst),
            _ => Err(Error::Config(format!("unknown example order `{s}`"))),
        }
    }
}

/// Everything needed to compute candidate feature vectors.
#[derive(Clone, Copy)]
pub struct FeatureSource<'a> {
    pub db: &'a ExampleDatabase,
    pub store: &'a ScoreStore,
    pub config: &'a FeatureConfig,
    pub policy: &'a ImputePolicy,
}

impl FeatureSource<'_> {
    pub fn vectors(&self, cands: &CandidateList, input: &str) -> Result<Vec<FeatureVector>> {
        cands
            .entries
            .iter()
            .map(|c| {
                let pair = lookup(self.db, c.pair_id)?;
                Ok(extract_features(pair, input, self.store, self.config, self.policy)?.vector)
            })
            .collect()
    }
}

fn lookup(db: &ExampleDatabase, id: PairId) -> Result<&SentencePair> {
    db.get(id)
        .ok_or_else(|| Error::InvalidParameter(format!("candidate {id} is not in the example database")))
}

/// Sorts candidates by score (descending unless `ascending`), ties by pair id,
/// and keeps the first `k`.
fn rank(method: String, cands: &CandidateList, scores: Vec<f64>, ascending: bool, k: usize) -> SelectionResult {
    let mut scored: Vec<Candidate> = cands
        .entries
        .iter()
        .zip(scores)
        .map(|(c, score)| Candidate {
            pair_id: c.pair_id,
            score,
        })
        .collect();
    scored.sort_by(|a, b| {
        let by_score = if ascending {
            a.score.total_cmp(&b.score)
        } else {
            b.score.total_cmp(&a.score)
        };
        by_score.then(a.pair_id.cmp(&b.pair_id))
    });
    finish(method, cands.input_id, scored, k)
}

fn finish(method: String, input_id: usize, ranked: Vec<Candidate>, k: usize) -> SelectionResult {
    let mut seen = HashSet::new();
    let chosen = ranked
        .iter()
        .filter(|c| seen.insert(c.pair_id))
        .take(k)
        .map(|c| Chosen {
            pair_id: c.pair_id,
            score: c.score,
            fill: false,
        })
        .collect();
    SelectionResult {
        method,
        input_id,
        chosen,
        diagnostics: ranked,
    }
}

/// Shortlist order.
pub fn bm25_select(cands: &CandidateList, k: usize) -> SelectionResult {
    finish(Method::Bm25.to_string(), cands.input_id, cands.entries.clone(), k)
}

/// Ranks candidates by predicted contextual translation quality.
pub fn ctq_rerank(
    cands: &CandidateList,
    input: &str,
    model: &CtqModel,
    source: &FeatureSource<'_>,
    k: usize,
) -> Result<SelectionResult> {
    let rows = source.vectors(cands, input)?;
    let scores = model.predict_all(&rows)?;
    Ok(rank(Method::Ctq.to_string(), cands, scores, false, k))
}

/// Ranks candidates by one feature; perplexities rank lowest first.
pub fn single_feature_rerank(
    cands: &CandidateList,
    input: &str,
    feature: Feature,
    source: &FeatureSource<'_>,
    k: usize,
) -> Result<SelectionResult> {
    if !feature.is_rankable() {
        return Err(Error::UnknownFeature(format!("{feature} (token-count features cannot be ranked)")));
    }
    let rows = source.vectors(cands, input)?;
    let scores = rows.iter().map(|v| v.get(feature)).collect();
    Ok(rank(Method::Feature(feature).to_string(), cands, scores, feature.lower_is_better(), k))
}

/// Per-candidate-set min-max scaling of each feature (perplexities negated
/// first), averaged. Constant features contribute zero.
pub fn average_scores(rows: &[FeatureVector], features: &[Feature]) -> Option<Vec<f64>> {
    let mut total = vec![0.0; rows.len()];
    let mut informative = false;
    for &f in features {
        let vals: Vec<f64> = rows
            .iter()
            .map(|r| if f.lower_is_better() { -r.get(f) } else { r.get(f) })
            .collect();
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            informative = true;
            for (t, v) in total.iter_mut().zip(&vals) {
                *t += (v - lo) / (hi - lo);
            }
        }
    }
    let n = features.len() as f64;
    informative.then(|| total.into_iter().map(|t| t / n).collect())
}

pub fn score_avg_rerank(
    cands: &CandidateList,
    input: &str,
    features: &[Feature],
    source: &FeatureSource<'_>,
    k: usize,
) -> Result<SelectionResult> {
    if features.is_empty() {
        return Err(Error::InvalidParameter("score averaging needs at least one feature".into()));
    }
    if let Some(f) = features.iter().find(|f| !f.is_rankable()) {
        return Err(Error::UnknownFeature(format!("{f} (token-count features cannot be ranked)")));
    }
    let method = Method::ScoreAvg(features.to_vec()).to_string();
    let rows = source.vectors(cands, input)?;
    match average_scores(&rows, features) {
        Some(scores) => Ok(rank(method, cands, scores, false, k)),
        None => {
            log::warn!(
                "input {}: all candidates score the same on {method}; using BM25 order",
                cands.input_id
            );
            let mut out = bm25_select(cands, k);
            out.method = method;
            Ok(out)
        }
    }
}

/// Word n-grams of orders `1..=max_n` with their counts.
pub fn word_ngrams(text: &str, max_n: usize) -> HashMap<Vec<String>, usize> {
    let toks = tokenize_for_retrieval(text);
    let mut out = HashMap::new();
    for n in 1..=max_n {
        for w in toks.windows(n) {
            *out.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    out
}

/// Greedy n-gram coverage: each step takes the candidate whose source covers
/// the largest weight of still-uncovered query n-grams (an n-gram weighs `n`
/// per occurrence in the query), ties by shortlist rank. When nothing new
/// can be covered the rest is filled in shortlist order, candidates whose
/// source repeats an already chosen one last.
pub fn rbm25_rerank(cands: &CandidateList, input: &str, db: &ExampleDatabase, k: usize) -> Result<SelectionResult> {
    let mut uncovered = word_ngrams(input, RBM25_MAX_N);
    let sources: Vec<(&str, HashSet<Vec<String>>)> = cands
        .entries
        .iter()
        .map(|c| {
            let src = lookup(db, c.pair_id)?.source.as_str();
            Ok((src, word_ngrams(src, RBM25_MAX_N).into_keys().collect()))
        })
        .collect::<Result<_>>()?;

    let k = k.min(cands.len());
    let mut taken = vec![false; cands.len()];
    let mut ranked: Vec<Candidate> = Vec::with_capacity(cands.len());
    let mut chosen_sources: HashSet<&str> = HashSet::new();

    while ranked.len() < k {
        let mut best: Option<(usize, usize)> = None;
        for (i, (_, grams)) in sources.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let gain: usize = grams
                .iter()
                .filter_map(|g| uncovered.get(g).map(|count| count * g.len()))
                .sum();
            if gain > 0 && best.map_or(true, |(_, b)| gain > b) {
                best = Some((i, gain));
            }
        }
        let Some((i, gain)) = best else { break };
        taken[i] = true;
        uncovered.retain(|g, _| !sources[i].1.contains(g));
        chosen_sources.insert(sources[i].0);
        ranked.push(Candidate {
            pair_id: cands.entries[i].pair_id,
            score: gain as f64,
        });
    }

    let rest: Vec<usize> = (0..cands.len()).filter(|&i| !taken[i]).collect();
    let (fresh, repeats): (Vec<usize>, Vec<usize>) =
        rest.into_iter().partition(|&i| !chosen_sources.contains(sources[i].0));
    let mut fresh_seen: HashSet<&str> = HashSet::new();
    let (fresh, fresh_dups): (Vec<usize>, Vec<usize>) =
        fresh.into_iter().partition(|&i| fresh_seen.insert(sources[i].0));
    let mut tail: Vec<usize> = fresh_dups.into_iter().chain(repeats).collect();
    tail.sort_unstable();
    for i in fresh.into_iter().chain(tail) {
        ranked.push(Candidate {
            pair_id: cands.entries[i].pair_id,
            score: 0.0,
        });
    }
    Ok(finish(Method::Rbm25.to_string(), cands.input_id, ranked, k))
}

/// `k` distinct pairs drawn uniformly from the whole database.
pub fn random_select(db: &ExampleDatabase, k: usize, seed: u64, input_id: usize) -> Result<SelectionResult> {
    if db.len() < k {
        return Err(Error::InsufficientPool {
            requested: k,
            available: db.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ranked: Vec<Candidate> = rand::seq::index::sample(&mut rng, db.len(), k)
        .into_iter()
        .map(|i| Candidate {
            pair_id: db.pairs()[i].id,
            score: 0.0,
        })
        .collect();
    Ok(finish(Method::Random.to_string(), input_id, ranked, k))
}

/// Tops `result` up to `k` with random database pairs not already chosen,
/// tagging them as fill.
pub fn random_fill(result: &mut SelectionResult, db: &ExampleDatabase, k: usize, seed: u64) {
    let have: HashSet<PairId> = result.chosen.iter().map(|c| c.pair_id).collect();
    let pool: Vec<PairId> = db.pairs().iter().map(|p| p.id).filter(|id| !have.contains(id)).collect();
    let need = k.saturating_sub(result.chosen.len()).min(pool.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in rand::seq::index::sample(&mut rng, pool.len(), need) {
        result.chosen.push(Chosen {
            pair_id: pool[i],
            score: 0.0,
            fill: true,
        });
    }
}

/// Runs one method for one input.
pub struct Selector<'a> {
    pub db: &'a ExampleDatabase,
    pub features: Option<FeatureSource<'a>>,
    pub model: Option<&'a CtqModel>,
}

impl Selector<'_> {
    pub fn select(
        &self,
        method: &Method,
        cands: &CandidateList,
        input: &str,
        k: usize,
        seed: u64,
    ) -> Result<SelectionResult> {
        let source = || {
            self.features
                .as_ref()
                .ok_or_else(|| Error::Config(format!("method {method} needs a score store")))
        };
        match method {
            Method::Bm25 => Ok(bm25_select(cands, k)),
            Method::Rbm25 => rbm25_rerank(cands, input, self.db, k),
            Method::Random => random_select(self.db, k, seed, cands.input_id),
            Method::Ctq => {
                let model = self
                    .model
                    .ok_or_else(|| Error::Config("method ctq needs a trained model".into()))?;
                ctq_rerank(cands, input, model, source()?, k)
            }
            Method::Feature(f) => single_feature_rerank(cands, input, *f, source()?, k),
            Method::ScoreAvg(fs) => score_avg_rerank(cands, input, fs, source()?, k),
        }
    }
}
