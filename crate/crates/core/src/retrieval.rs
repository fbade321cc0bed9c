//! Okapi BM25 over the source side of the example database, used to
//! shortlist candidate examples for an input sentence.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{ExampleDatabase, PairId};
use crate::error::{Error, Result};

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;
pub const DEFAULT_SHORTLIST: usize = 100;

const INDEX_MAGIC: &str = "ctq-bm25";
const INDEX_VERSION: u32 = 1;

/// Lowercases, splits on Unicode whitespace and strips leading/trailing
/// non-alphanumeric characters from each token.
pub fn tokenize_for_retrieval(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|tok| tok.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|tok| !tok.is_empty())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self {
            k1: DEFAULT_K1,
            b: DEFAULT_B,
        }
    }
}

impl Bm25Params {
    pub fn new(k1: f64, b: f64) -> Result<Self> {
        if !(k1 > 0.0 && k1.is_finite()) {
            return Err(Error::InvalidParameter(format!("bm25 k1 must be > 0, got {k1}")));
        }
        if !(0.0..=1.0).contains(&b) {
            return Err(Error::InvalidParameter(format!("bm25 b must be in [0, 1], got {b}")));
        }
        Ok(Self { k1, b })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Index {
    postings: HashMap<String, Vec<Posting>>,
    doc_lengths: Vec<u32>,
    avg_doc_len: f64,
    params: Bm25Params,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub pair_id: PairId,
    pub score: f64,
}

/// Shortlisted candidates, best first. Ties are ordered by ascending id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateList {
    pub input_id: usize,
    pub entries: Vec<Candidate>,
}

impl CandidateList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = PairId> + '_ {
        self.entries.iter().map(|c| c.pair_id)
    }
}

pub fn build_index(db: &ExampleDatabase, params: Bm25Params) -> Result<Bm25Index> {
    build_index_from_texts(db.pairs().iter().map(|p| p.source.as_str()), params)
}

/// Indexes documents in iteration order; document `i` gets id `i`.
pub fn build_index_from_texts<'a, I>(docs: I, params: Bm25Params) -> Result<Bm25Index>
where
    I: IntoIterator<Item = &'a str>,
{
    let params = Bm25Params::new(params.k1, params.b)?;
    let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
    let mut doc_lengths = Vec::new();
    for (doc, text) in docs.into_iter().enumerate() {
        let tokens = tokenize_for_retrieval(text);
        doc_lengths.push(tokens.len() as u32);
        let mut tf: BTreeMap<String, u32> = BTreeMap::new();
        for tok in tokens {
            *tf.entry(tok).or_default() += 1;
        }
        for (term, count) in tf {
            postings.entry(term).or_default().push(Posting {
                doc: doc as u32,
                tf: count,
            });
        }
    }
    if doc_lengths.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    let avg_doc_len = mean_length(&doc_lengths);
    Ok(Bm25Index {
        postings,
        doc_lengths,
        avg_doc_len,
        params,
    })
}

fn mean_length(lengths: &[u32]) -> f64 {
    let total: u64 = lengths.iter().map(|&l| l as u64).sum();
    total as f64 / lengths.len() as f64
}

/// Smoothed, always-positive Okapi IDF.
pub fn idf(doc_count: usize, doc_freq: usize) -> f64 {
    let n = doc_count as f64;
    let df = doc_freq as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// Saturated term-frequency component of a single term's score.
pub fn tf_component(tf: f64, doc_len: f64, avg_doc_len: f64, params: Bm25Params) -> f64 {
    let norm = if avg_doc_len > 0.0 {
        doc_len / avg_doc_len
    } else {
        1.0
    };
    tf * (params.k1 + 1.0) / (tf + params.k1 * (1.0 - params.b + params.b * norm))
}

/// Distinct query terms in order of first occurrence.
pub fn query_terms(query: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    tokenize_for_retrieval(query)
        .into_iter()
        .filter(|t| seen.insert(t.clone()))
        .collect()
}

impl Bm25Index {
    pub fn doc_count(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn doc_lengths(&self) -> &[u32] {
        &self.doc_lengths
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    pub fn vocabulary_size(&self) -> usize {
        self.postings.len()
    }

    /// Top `n` documents by BM25 score. Documents sharing no term with the
    /// query are never returned, so the list may be shorter than `n`.
    pub fn shortlist(&self, query: &str, n: usize) -> CandidateList {
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for term in query_terms(query) {
            let postings = self.postings(&term);
            if postings.is_empty() {
                continue;
            }
            let weight = idf(self.doc_count(), postings.len());
            for p in postings {
                let len = self.doc_lengths[p.doc as usize] as f64;
                *scores.entry(p.doc).or_insert(0.0) +=
                    weight * tf_component(p.tf as f64, len, self.avg_doc_len, self.params);
            }
        }
        let mut entries: Vec<Candidate> = scores
            .into_iter()
            .filter(|&(_, s)| s > 0.0)
            .map(|(doc, score)| Candidate {
                pair_id: doc as PairId,
                score,
            })
            .collect();
        entries.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.pair_id.cmp(&b.pair_id)));
        entries.truncate(n);
        CandidateList { input_id: 0, entries }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(file).map_err(|e| Error::io(path, e))
    }

    /// Line format: a `ctq-bm25` header with version and parameters, a
    /// `lengths` line, then one `term<TAB>doc:tf,...` line per term in
    /// lexicographic order.
    pub fn write<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut out = BufWriter::new(out);
        writeln!(
            out,
            "{INDEX_MAGIC}\t{INDEX_VERSION}\t{}\t{}\t{}",
            self.params.k1,
            self.params.b,
            self.doc_count()
        )?;
        let lengths: Vec<String> = self.doc_lengths.iter().map(u32::to_string).collect();
        writeln!(out, "lengths\t{}", lengths.join(","))?;
        let mut terms: Vec<&String> = self.postings.keys().collect();
        terms.sort();
        for term in terms {
            let list: Vec<String> = self.postings[term]
                .iter()
                .map(|p| format!("{}:{}", p.doc, p.tf))
                .collect();
            writeln!(out, "{term}\t{}", list.join(","))?;
        }
        out.flush()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file))
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let bad = |line: usize, msg: &str| Error::parse(line, format!("bm25 index: {msg}"));

        let (_, header) = lines.next().ok_or_else(|| bad(1, "missing header"))?;
        let header = header.map_err(|e| Error::io("<index>", e))?;
        let fields: Vec<&str> = header.split('\t').collect();
        if fields.len() != 5 || fields[0] != INDEX_MAGIC {
            return Err(bad(1, "bad header"));
        }
        if fields[1].parse::<u32>().ok() != Some(INDEX_VERSION) {
            return Err(bad(1, &format!("unsupported version {}", fields[1])));
        }
        let k1: f64 = fields[2].parse().map_err(|_| bad(1, "bad k1"))?;
        let b: f64 = fields[3].parse().map_err(|_| bad(1, "bad b"))?;
        let doc_count: usize = fields[4].parse().map_err(|_| bad(1, "bad doc count"))?;
        let params = Bm25Params::new(k1, b)?;

        let (_, lengths) = lines.next().ok_or_else(|| bad(2, "missing lengths"))?;
        let lengths = lengths.map_err(|e| Error::io("<index>", e))?;
        let rest = lengths
            .strip_prefix("lengths\t")
            .ok_or_else(|| bad(2, "missing lengths"))?;
        let doc_lengths = rest
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<u32>().map_err(|_| bad(2, "bad length")))
            .collect::<Result<Vec<_>>>()?;
        if doc_lengths.len() != doc_count || doc_count == 0 {
            return Err(bad(2, "document count mismatch"));
        }

        let mut postings = HashMap::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            let line = line.map_err(|e| Error::io("<index>", e))?;
            let (term, list) = line.split_once('\t').ok_or_else(|| bad(lineno, "bad term line"))?;
            let list = list
                .split(',')
                .map(|entry| {
                    let (doc, tf) = entry.split_once(':').ok_or_else(|| bad(lineno, "bad posting"))?;
                    let doc: u32 = doc.parse().map_err(|_| bad(lineno, "bad doc id"))?;
                    let tf: u32 = tf.parse().map_err(|_| bad(lineno, "bad tf"))?;
                    if doc as usize >= doc_count {
                        return Err(bad(lineno, "doc id out of range"));
                    }
                    Ok(Posting { doc, tf })
                })
                .collect::<Result<Vec<_>>>()?;
            postings.insert(term.to_string(), list);
        }
        let avg_doc_len = mean_length(&doc_lengths);
        Ok(Self {
            postings,
            doc_lengths,
            avg_doc_len,
            params,
        })
    }
}
