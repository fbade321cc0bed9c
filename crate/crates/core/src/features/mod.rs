//! The twelve-feature description of a (candidate example, input) pair.
//!
//! Lexical features (chrF, token counts) are computed here. Embedding
//! similarities, quality-estimation scores and perplexities are read from a
//! [`ScoreStore`] that was filled offline.

mod chrf;
mod store;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use chrf::{chrf, chrf_with, ChrfScore, DEFAULT_BETA, DEFAULT_MAX_N};
pub use store::{pair_hash, text_hash, unit_normalize, ScoreStore, StoreKey, StoreKind, STORE_HEADER};

use crate::corpus::SentencePair;
use crate::error::{Error, Result};

pub const NUM_FEATURES: usize = 12;

/// Separator used when concatenating texts for perplexity keys.
pub const PPL_SEPARATOR: &str = "\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    LabseInSrc,
    LabseInTgt,
    ChrfInSrc,
    CmtInSrc,
    CmtInTgt,
    LabseSrcTgt,
    CmtSrcTgt,
    NumTokIn,
    NumTokSrc,
    NumTokTgt,
    PplSrcTgt,
    PplSrcTgtIn,
}

impl Feature {
    /// Schema order; this is also the serialized column order.
    pub const ALL: [Feature; NUM_FEATURES] = [
        Feature::LabseInSrc,
        Feature::LabseInTgt,
        Feature::ChrfInSrc,
        Feature::CmtInSrc,
        Feature::CmtInTgt,
        Feature::LabseSrcTgt,
        Feature::CmtSrcTgt,
        Feature::NumTokIn,
        Feature::NumTokSrc,
        Feature::NumTokTgt,
        Feature::PplSrcTgt,
        Feature::PplSrcTgtIn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::LabseInSrc => "labse_in_src",
            Feature::LabseInTgt => "labse_in_tgt",
            Feature::ChrfInSrc => "chrf_in_src",
            Feature::CmtInSrc => "cmt_in_src",
            Feature::CmtInTgt => "cmt_in_tgt",
            Feature::LabseSrcTgt => "labse_src_tgt",
            Feature::CmtSrcTgt => "cmt_src_tgt",
            Feature::NumTokIn => "num_tok_in",
            Feature::NumTokSrc => "num_tok_src",
            Feature::NumTokTgt => "num_tok_tgt",
            Feature::PplSrcTgt => "ppl_src_tgt",
            Feature::PplSrcTgtIn => "ppl_src_tgt_in",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Token counts describe length, not quality, so they are never used to
    /// rank on their own.
    pub fn is_rankable(self) -> bool {
        !matches!(self, Feature::NumTokIn | Feature::NumTokSrc | Feature::NumTokTgt)
    }

    /// Perplexities rank ascending.
    pub fn lower_is_better(self) -> bool {
        matches!(self, Feature::PplSrcTgt | Feature::PplSrcTgtIn)
    }

    pub fn rankable() -> impl Iterator<Item = Feature> {
        Self::ALL.into_iter().filter(|f| f.is_rankable())
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Feature::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::UnknownFeature(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    pub labse_in_src: f64,
    pub labse_in_tgt: f64,
    pub chrf_in_src: f64,
    pub cmt_in_src: f64,
    pub cmt_in_tgt: f64,
    pub labse_src_tgt: f64,
    pub cmt_src_tgt: f64,
    pub num_tok_in: f64,
    pub num_tok_src: f64,
    pub num_tok_tgt: f64,
    pub ppl_src_tgt: f64,
    pub ppl_src_tgt_in: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; NUM_FEATURES] {
        [
            self.labse_in_src,
            self.labse_in_tgt,
            self.chrf_in_src,
            self.cmt_in_src,
            self.cmt_in_tgt,
            self.labse_src_tgt,
            self.cmt_src_tgt,
            self.num_tok_in,
            self.num_tok_src,
            self.num_tok_tgt,
            self.ppl_src_tgt,
            self.ppl_src_tgt_in,
        ]
    }

    pub fn from_array(a: [f64; NUM_FEATURES]) -> Self {
        Self {
            labse_in_src: a[0],
            labse_in_tgt: a[1],
            chrf_in_src: a[2],
            cmt_in_src: a[3],
            cmt_in_tgt: a[4],
            labse_src_tgt: a[5],
            cmt_src_tgt: a[6],
            num_tok_in: a[7],
            num_tok_src: a[8],
            num_tok_tgt: a[9],
            ppl_src_tgt: a[10],
            ppl_src_tgt_in: a[11],
        }
    }

    pub fn get(&self, feature: Feature) -> f64 {
        self.to_array()[feature.index()]
    }

    pub fn set(&mut self, feature: Feature, value: f64) {
        let mut a = self.to_array();
        a[feature.index()] = value;
        *self = Self::from_array(a);
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Which provider/metric/model ids to read from the store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub embedding_provider: String,
    pub qe_metric: String,
    pub lm_model: String,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            embedding_provider: "labse".into(),
            qe_metric: "comet-qe".into(),
            lm_model: "llm".into(),
        }
    }
}

/// What to do when a model-backed score is missing from the store.
#[derive(Debug, Clone, PartialEq)]
pub enum ImputePolicy {
    Strict,
    /// Substitute the given per-feature values (normally the training-set
    /// means).
    FillDefault(FeatureVector),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extracted {
    pub vector: FeatureVector,
    /// True when at least one field was filled with a default.
    pub imputed: bool,
}

pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Counts maximal runs of non-whitespace characters.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl TokenCounter for WhitespaceTokenizer {
    fn count(&self, text: &str) -> usize {
        token_count(text)
    }
}

pub fn token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::UndefinedSimilarity("vectors differ in dimension or are empty"));
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y): (f64, f64) = (x.into(), y.into());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedSimilarity("zero vector"));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

pub fn ppl_key_src_tgt(pair: &SentencePair) -> String {
    format!("{}{PPL_SEPARATOR}{}", pair.source, pair.target)
}

pub fn ppl_key_src_tgt_in(pair: &SentencePair, input: &str) -> String {
    format!(
        "{}{PPL_SEPARATOR}{}{PPL_SEPARATOR}{input}",
        pair.source, pair.target
    )
}

/// Every store key that [`extract_features`] reads for this pair, in a
/// fixed order.
pub fn required_keys(candidate: &SentencePair, input: &str, cfg: &FeatureConfig) -> Vec<StoreKey> {
    let emb = &cfg.embedding_provider;
    let qe = &cfg.qe_metric;
    let lm = &cfg.lm_model;
    vec![
        StoreKey::embedding(emb, input),
        StoreKey::embedding(emb, &candidate.source),
        StoreKey::embedding(emb, &candidate.target),
        StoreKey::pair(qe, input, &candidate.source),
        StoreKey::pair(qe, input, &candidate.target),
        StoreKey::pair(qe, &candidate.source, &candidate.target),
        StoreKey::ppl(lm, &ppl_key_src_tgt(candidate)),
        StoreKey::ppl(lm, &ppl_key_src_tgt_in(candidate, input)),
    ]
}

/// Builds the feature vector for `candidate` as a prompt example for
/// `input`.
///
/// QE scores are looked up with the first text in the source role: the
/// input for `cmt_in_src`/`cmt_in_tgt`, the example source for
/// `cmt_src_tgt`.
pub fn extract_features(
    candidate: &SentencePair,
    input: &str,
    store: &ScoreStore,
    cfg: &FeatureConfig,
    policy: &ImputePolicy,
) -> Result<Extracted> {
    let mut missing: Vec<StoreKey> = Vec::new();
    let mut imputed: Vec<Feature> = Vec::new();

    let emb = &cfg.embedding_provider;
    let e_in = store.embedding(emb, input);
    let e_src = store.embedding(emb, &candidate.source);
    let e_tgt = store.embedding(emb, &candidate.target);
    for (e, text) in [(e_in, input), (e_src, candidate.source.as_str()), (e_tgt, candidate.target.as_str())] {
        if e.is_none() {
            missing.push(StoreKey::embedding(emb, text));
        }
    }
    let mut sim = |a: Option<&[f32]>, b: Option<&[f32]>, f: Feature| -> Result<f64> {
        match (a, b) {
            (Some(a), Some(b)) => cosine(a, b),
            _ => {
                imputed.push(f);
                Ok(0.0)
            }
        }
    };
    let labse_in_src = sim(e_in, e_src, Feature::LabseInSrc)?;
    let labse_in_tgt = sim(e_in, e_tgt, Feature::LabseInTgt)?;
    let labse_src_tgt = sim(e_src, e_tgt, Feature::LabseSrcTgt)?;

    let mut lookup = |key: StoreKey, f: Feature| -> f64 {
        let value = match key.kind {
            StoreKind::Pair => store.pair_score(&key.id, &key.texts[0], &key.texts[1]),
            StoreKind::Ppl => store.ppl(&key.id, &key.texts[0]),
            StoreKind::Emb => unreachable!(),
        };
        value.unwrap_or_else(|| {
            missing.push(key);
            imputed.push(f);
            0.0
        })
    };
    let qe = &cfg.qe_metric;
    let lm = &cfg.lm_model;
    let cmt_in_src = lookup(StoreKey::pair(qe, input, &candidate.source), Feature::CmtInSrc);
    let cmt_in_tgt = lookup(StoreKey::pair(qe, input, &candidate.target), Feature::CmtInTgt);
    let cmt_src_tgt = lookup(
        StoreKey::pair(qe, &candidate.source, &candidate.target),
        Feature::CmtSrcTgt,
    );
    let ppl_src_tgt = lookup(StoreKey::ppl(lm, &ppl_key_src_tgt(candidate)), Feature::PplSrcTgt);
    let ppl_src_tgt_in = lookup(
        StoreKey::ppl(lm, &ppl_key_src_tgt_in(candidate, input)),
        Feature::PplSrcTgtIn,
    );

    let mut vector = FeatureVector {
        labse_in_src,
        labse_in_tgt,
        chrf_in_src: chrf(input, &candidate.source),
        cmt_in_src,
        cmt_in_tgt,
        labse_src_tgt,
        cmt_src_tgt,
        num_tok_in: token_count(input) as f64,
        num_tok_src: token_count(&candidate.source) as f64,
        num_tok_tgt: token_count(&candidate.target) as f64,
        ppl_src_tgt,
        ppl_src_tgt_in,
    };

    if missing.is_empty() {
        return Ok(Extracted {
            vector,
            imputed: false,
        });
    }
    match policy {
        ImputePolicy::Strict => Err(Error::MissingScores(missing)),
        ImputePolicy::FillDefault(defaults) => {
            for f in imputed {
                vector.set(f, defaults.get(f));
            }
            Ok(Extracted {
                vector,
                imputed: true,
            })
        }
    }
}
