//! Offline cache of model-backed scores: sentence embeddings, pairwise
//! quality-estimation scores and language-model perplexities.
//!
//! File format, one record per line:
//!
//! ```text
//! #ctq-store	1
//! emb:<provider>	<sha256(text)>	<hex of little-endian f32 components>
//! pair:<metric>	<sha256(len(a) ++ a ++ b)>	<decimal>
//! ppl:<model>	<sha256(text)>	<decimal>
//! ```
//!
//! Lines starting with `#` after the header are comments.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const STORE_HEADER: &str = "#ctq-store\t1";
const UNIT_NORM_TOLERANCE: f64 = 1e-6;

pub type KeyHash = [u8; 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StoreKind {
    Emb,
    Pair,
    Ppl,
}

impl StoreKind {
    fn prefix(self) -> &'static str {
        match self {
            StoreKind::Emb => "emb",
            StoreKind::Pair => "pair",
            StoreKind::Ppl => "ppl",
        }
    }
}

/// A fully spelled-out store key: kind, provider/metric/model id, and the
/// text(s) it is computed on.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StoreKey {
    pub kind: StoreKind,
    pub id: String,
    pub texts: Vec<String>,
}

impl StoreKey {
    pub fn embedding(provider: &str, text: &str) -> Self {
        Self {
            kind: StoreKind::Emb,
            id: provider.to_string(),
            texts: vec![text.to_string()],
        }
    }

    pub fn pair(metric: &str, a: &str, b: &str) -> Self {
        Self {
            kind: StoreKind::Pair,
            id: metric.to_string(),
            texts: vec![a.to_string(), b.to_string()],
        }
    }

    pub fn ppl(model: &str, text: &str) -> Self {
        Self {
            kind: StoreKind::Ppl,
            id: model.to_string(),
            texts: vec![text.to_string()],
        }
    }

    /// The `kind:id` column of the file format.
    pub fn tag(&self) -> String {
        format!("{}:{}", self.kind.prefix(), self.id)
    }

    pub fn hash(&self) -> KeyHash {
        match self.texts.as_slice() {
            [a, b] => pair_hash(a, b),
            [t] => text_hash(t),
            _ => unreachable!("store keys carry one or two texts"),
        }
    }
}

impl fmt::Display for StoreKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.tag())?;
        for (i, t) in self.texts.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{t:?}")?;
        }
        f.write_str(")")
    }
}

pub fn text_hash(text: &str) -> KeyHash {
    Sha256::digest(text.as_bytes()).into()
}

/// Hash of an ordered text pair. The length prefix keeps `("ab", "c")` and
/// `("a", "bc")` apart.
pub fn pair_hash(a: &str, b: &str) -> KeyHash {
    let mut h = Sha256::new();
    h.update((a.len() as u64).to_le_bytes());
    h.update(a.as_bytes());
    h.update(b.as_bytes());
    h.finalize().into()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreStore {
    embeddings: HashMap<(String, KeyHash), Vec<f32>>,
    pair_scores: HashMap<(String, KeyHash), f64>,
    ppl: HashMap<(String, KeyHash), f64>,
}

impl ScoreStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.embeddings.len() + self.pair_scores.len() + self.ppl.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stores an embedding. It must already be unit-norm.
    pub fn insert_embedding(&mut self, provider: &str, text: &str, vector: Vec<f32>) -> Result<()> {
        check_unit_norm(&vector)?;
        self.embeddings
            .insert((provider.to_string(), text_hash(text)), vector);
        Ok(())
    }

    pub fn insert_pair_score(&mut self, metric: &str, a: &str, b: &str, value: f64) -> Result<()> {
        check_finite(value)?;
        self.pair_scores
            .insert((metric.to_string(), pair_hash(a, b)), value);
        Ok(())
    }

    pub fn insert_ppl(&mut self, model: &str, text: &str, value: f64) -> Result<()> {
        check_finite(value)?;
        if value <= 0.0 {
            return Err(Error::StoreFormat(format!("perplexity must be positive, got {value}")));
        }
        self.ppl.insert((model.to_string(), text_hash(text)), value);
        Ok(())
    }

    pub fn embedding(&self, provider: &str, text: &str) -> Option<&[f32]> {
        self.embeddings
            .get(&(provider.to_string(), text_hash(text)))
            .map(Vec::as_slice)
    }

    pub fn pair_score(&self, metric: &str, a: &str, b: &str) -> Option<f64> {
        self.pair_scores
            .get(&(metric.to_string(), pair_hash(a, b)))
            .copied()
    }

    pub fn ppl(&self, model: &str, text: &str) -> Option<f64> {
        self.ppl.get(&(model.to_string(), text_hash(text))).copied()
    }

    pub fn contains(&self, key: &StoreKey) -> bool {
        let k = (key.id.clone(), key.hash());
        match key.kind {
            StoreKind::Emb => self.embeddings.contains_key(&k),
            StoreKind::Pair => self.pair_scores.contains_key(&k),
            StoreKind::Ppl => self.ppl.contains_key(&k),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file))
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut store = Self::new();
        let mut lines = reader.lines();
        match lines.next() {
            Some(Ok(h)) if h.trim_end() == STORE_HEADER => {}
            Some(Ok(h)) => {
                return Err(Error::StoreFormat(format!("line 1: bad header {h:?}")));
            }
            Some(Err(e)) => return Err(Error::io("<store>", e)),
            None => return Err(Error::StoreFormat("empty store file".into())),
        }
        for (idx, line) in lines.enumerate() {
            let lineno = idx + 2;
            let line = line.map_err(|e| Error::io("<store>", e))?;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            store
                .read_record(&line)
                .map_err(|msg| Error::StoreFormat(format!("line {lineno}: {msg}")))?;
        }
        Ok(store)
    }

    fn read_record(&mut self, line: &str) -> std::result::Result<(), String> {
        let fields: Vec<&str> = line.split('\t').collect();
        let [tag, hash, payload] = fields.as_slice() else {
            return Err(format!("expected 3 fields, found {}", fields.len()));
        };
        let (kind, id) = tag.split_once(':').ok_or("missing `kind:id` tag")?;
        let mut key = [0u8; 32];
        hex::decode_to_slice(hash, &mut key).map_err(|e| format!("bad key hash: {e}"))?;
        match kind {
            "emb" => {
                let bytes = hex::decode(payload).map_err(|e| format!("bad embedding: {e}"))?;
                if bytes.is_empty() || bytes.len() % 4 != 0 {
                    return Err("embedding payload is not a whole number of f32s".into());
                }
                let vector: Vec<f32> = bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                check_unit_norm(&vector).map_err(|e| e.to_string())?;
                self.embeddings.insert((id.to_string(), key), vector);
            }
            "pair" | "ppl" => {
                let value: f64 = payload.parse().map_err(|_| format!("bad number {payload:?}"))?;
                check_finite(value).map_err(|e| e.to_string())?;
                if kind == "pair" {
                    self.pair_scores.insert((id.to_string(), key), value);
                } else {
                    if value <= 0.0 {
                        return Err(format!("perplexity must be positive, got {value}"));
                    }
                    self.ppl.insert((id.to_string(), key), value);
                }
            }
            other => return Err(format!("unknown record kind `{other}`")),
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(file).map_err(|e| Error::io(path, e))
    }

    /// Writes every record, sorted by (kind, id, hash) so output is stable.
    pub fn write<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut out = BufWriter::new(out);
        writeln!(out, "{STORE_HEADER}")?;
        let mut rows: Vec<(StoreKind, &str, &KeyHash, String)> = Vec::with_capacity(self.len());
        for ((id, h), v) in &self.embeddings {
            let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
            rows.push((StoreKind::Emb, id, h, hex::encode(bytes)));
        }
        for ((id, h), v) in &self.pair_scores {
            rows.push((StoreKind::Pair, id, h, v.to_string()));
        }
        for ((id, h), v) in &self.ppl {
            rows.push((StoreKind::Ppl, id, h, v.to_string()));
        }
        rows.sort_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));
        for (kind, id, h, payload) in rows {
            writeln!(out, "{}:{id}\t{}\t{payload}", kind.prefix(), hex::encode(h))?;
        }
        out.flush()
    }
}

fn check_finite(value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::StoreFormat(format!("non-finite score {value}")))
    }
}

fn check_unit_norm(v: &[f32]) -> Result<()> {
    let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if (norm - 1.0).abs() <= UNIT_NORM_TOLERANCE {
        Ok(())
    } else {
        Err(Error::StoreFormat(format!(
            "embedding norm {norm} is not within {UNIT_NORM_TOLERANCE} of 1"
        )))
    }
}

/// Scales a vector to unit L2 norm (computed in f64, rounded to f32).
pub fn unit_normalize(v: &[f64]) -> Vec<f32> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / norm) as f32).collect()
}
