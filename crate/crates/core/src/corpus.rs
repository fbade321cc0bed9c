//! Parallel corpora: the example database that prompt examples are drawn
//! from, and held-out sets used to generate scorer training data.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type PairId = usize;

/// One translation example.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SentencePair {
    pub id: PairId,
    pub source: String,
    pub target: String,
}

impl SentencePair {
    pub fn new(id: PairId, source: impl Into<String>, target: impl Into<String>) -> Self {
        Self {
            id,
            source: source.into(),
            target: target.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParallelFormat {
    Tsv,
    Jsonl,
}

impl FromStr for ParallelFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(Self::Tsv),
            "jsonl" => Ok(Self::Jsonl),
            other => Err(Error::InvalidParameter(format!(
                "unknown corpus format `{other}` (expected tsv or jsonl)"
            ))),
        }
    }
}

impl ParallelFormat {
    /// Guesses the format from a file extension, defaulting to TSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => Self::Jsonl,
            _ => Self::Tsv,
        }
    }
}

/// The example database. Immutable once loaded; ids are dense `0..len`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExampleDatabase {
    pairs: Vec<SentencePair>,
    pub src_lang: String,
    pub tgt_lang: String,
    pub provenance: String,
}

impl ExampleDatabase {
    /// Builds a database from raw `(source, target)` records, trimming and
    /// deduplicating them.
    pub fn from_pairs<I, S, T>(records: I) -> Self
    where
        I: IntoIterator<Item = (S, T)>,
        S: AsRef<str>,
        T: AsRef<str>,
    {
        let pairs = records
            .into_iter()
            .enumerate()
            .map(|(i, (s, t))| SentencePair::new(i, s.as_ref().trim(), t.as_ref().trim()))
            .collect();
        dedup(Self {
            pairs,
            ..Default::default()
        })
    }

    pub fn with_languages(mut self, src: impl Into<String>, tgt: impl Into<String>) -> Self {
        self.src_lang = src.into();
        self.tgt_lang = tgt.into();
        self
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    pub fn pairs(&self) -> &[SentencePair] {
        &self.pairs
    }

    pub fn get(&self, id: PairId) -> Option<&SentencePair> {
        self.pairs.get(id)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains_pair(&self, source: &str, target: &str) -> bool {
        self.pairs
            .iter()
            .any(|p| p.source == source && p.target == target)
    }
}

/// Keeps the first occurrence of each `(source, target)` pair, preserving
/// order, and reassigns dense ids.
pub fn dedup(db: ExampleDatabase) -> ExampleDatabase {
    let ExampleDatabase {
        pairs,
        src_lang,
        tgt_lang,
        provenance,
    } = db;
    let pairs = dedup_pairs(pairs);
    ExampleDatabase {
        pairs,
        src_lang,
        tgt_lang,
        provenance,
    }
}

fn dedup_pairs(pairs: Vec<SentencePair>) -> Vec<SentencePair> {
    let mut seen: HashSet<(String, String)> = HashSet::with_capacity(pairs.len());
    let mut out = Vec::with_capacity(pairs.len());
    for pair in pairs {
        if seen.insert((pair.source.clone(), pair.target.clone())) {
            let id = out.len();
            out.push(SentencePair { id, ..pair });
        }
    }
    out
}

/// Held-out parallel pairs. Never overlaps the example database it was
/// built against.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HeldOutSet {
    pairs: Vec<SentencePair>,
}

impl HeldOutSet {
    /// Drops any pair that also occurs verbatim in `db` and renumbers the
    /// survivors densely. Returns the set and the number of dropped pairs.
    pub fn against(db: &ExampleDatabase, pairs: Vec<SentencePair>) -> (Self, usize) {
        let in_db: HashSet<(&str, &str)> = db
            .pairs()
            .iter()
            .map(|p| (p.source.as_str(), p.target.as_str()))
            .collect();
        let total = pairs.len();
        let kept: Vec<SentencePair> = pairs
            .into_iter()
            .filter(|p| !in_db.contains(&(p.source.as_str(), p.target.as_str())))
            .enumerate()
            .map(|(id, p)| SentencePair { id, ..p })
            .collect();
        let dropped = total - kept.len();
        (Self { pairs: kept }, dropped)
    }

    pub fn pairs(&self) -> &[SentencePair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Deserialize)]
struct JsonRecord {
    source: Option<String>,
    target: Option<String>,
    #[allow(dead_code)]
    id: Option<u64>,
}

/// Loads, trims and deduplicates a parallel file.
pub fn load_parallel(path: &Path, format: ParallelFormat) -> Result<ExampleDatabase> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    read_parallel(file, format, &name)
}

pub fn read_parallel<R: Read>(
    reader: R,
    format: ParallelFormat,
    name: &str,
) -> Result<ExampleDatabase> {
    let pairs = read_records(reader, format, name)?;
    Ok(dedup(ExampleDatabase {
        pairs,
        provenance: name.to_string(),
        ..Default::default()
    }))
}

/// Reads records without deduplication. Whitespace-only lines are skipped.
pub fn read_records<R: Read>(
    reader: R,
    format: ParallelFormat,
    name: &str,
) -> Result<Vec<SentencePair>> {
    let mut pairs = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(name, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (source, target) = match format {
            ParallelFormat::Tsv => parse_tsv_line(&line, lineno)?,
            ParallelFormat::Jsonl => parse_json_line(&line, lineno)?,
        };
        let (source, target) = (source.trim(), target.trim());
        if source.is_empty() || target.is_empty() {
            return Err(Error::parse(lineno, "empty source or target"));
        }
        pairs.push(SentencePair::new(pairs.len(), source, target));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyInput(name.to_string()));
    }
    Ok(pairs)
}

fn parse_tsv_line(line: &str, lineno: usize) -> Result<(String, String)> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 2 {
        return Err(Error::parse(
            lineno,
            format!("expected 2 fields, found {}", fields.len()),
        ));
    }
    Ok((fields[0].to_string(), fields[1].to_string()))
}

fn parse_json_line(line: &str, lineno: usize) -> Result<(String, String)> {
    let rec: JsonRecord =
        serde_json::from_str(line).map_err(|e| Error::parse(lineno, e.to_string()))?;
    match (rec.source, rec.target) {
        (Some(s), Some(t)) => Ok((s, t)),
        (None, _) => Err(Error::parse(lineno, "missing field `source`")),
        (_, None) => Err(Error::parse(lineno, "missing field `target`")),
    }
}

/// Loads a held-out file and removes pairs present in `db`.
pub fn load_heldout(path: &Path, format: ParallelFormat, db: &ExampleDatabase) -> Result<HeldOutSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let pairs = read_records(file, format, &path.display().to_string())?;
    let (set, dropped) = HeldOutSet::against(db, pairs);
    if dropped > 0 {
        log::warn!(
            "{}: dropped {dropped} held-out pairs that also occur in the example database",
            path.display()
        );
    }
    Ok(set)
}

/// Writes pairs in the internal line-delimited format: one JSON object per
/// line carrying `id`, `source` and `target`.
pub fn write_jsonl<W: Write>(pairs: &[SentencePair], out: W) -> std::io::Result<()> {
    let mut out = BufWriter::new(out);
    for pair in pairs {
        serde_json::to_writer(&mut out, pair)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn save_jsonl(pairs: &[SentencePair], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_jsonl(pairs, file).map_err(|e| Error::io(path, e))
}

/// Reads a one-sentence-per-line file (blank lines are kept as empty strings).
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn db(records: &[(&str, &str)]) -> ExampleDatabase {
        ExampleDatabase {
            pairs: records
                .iter()
                .enumerate()
                .map(|(i, (s, t))| SentencePair::new(i, *s, *t))
                .collect(),
            ..Default::default()
        }
    }

    fn texts(db: &ExampleDatabase) -> Vec<(&str, &str)> {
        db.pairs()
            .iter()
            .map(|p| (p.source.as_str(), p.target.as_str()))
            .collect()
    }

    #[test]
    fn tsv_duplicate_is_dropped() {
        let input = "a\tb\nc\td\na\tb\n";
        let db = read_parallel(input.as_bytes(), ParallelFormat::Tsv, "t").unwrap();
        assert_eq!(texts(&db), vec![("a", "b"), ("c", "d")]);
        assert_eq!(db.pairs().iter().map(|p| p.id).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn tsv_single_column_names_line() {
        let err = read_parallel("only one\n".as_bytes(), ParallelFormat::Tsv, "t").unwrap_err();
        assert!(err.to_string().starts_with("line 1: expected 2 fields"), "{err}");
    }

    #[test]
    fn tsv_wrong_column_count_later_line() {
        let err = read_parallel("a\tb\nx\ty\tz\n".as_bytes(), ParallelFormat::Tsv, "t").unwrap_err();
        assert!(err.to_string().starts_with("line 2:"), "{err}");
    }

    #[test]
    fn empty_file_is_error() {
        let err = read_parallel("".as_bytes(), ParallelFormat::Tsv, "empty.tsv").unwrap_err();
        assert!(matches!(err, Error::EmptyInput(_)));
    }

    #[test]
    fn jsonl_preserves_order() {
        let input = (0..5)
            .map(|i| format!("{{\"source\": \"s{i}\", \"target\": \"t{i}\"}}\n"))
            .collect::<String>();
        let db = read_parallel(input.as_bytes(), ParallelFormat::Jsonl, "j").unwrap();
        assert_eq!(db.len(), 5);
        for (i, p) in db.pairs().iter().enumerate() {
            assert_eq!(p.id, i);
            assert_eq!(p.source, format!("s{i}"));
        }
    }

    #[test]
    fn jsonl_missing_target() {
        let err = read_parallel(
            "{\"source\": \"a\", \"target\": \"b\"}\n{\"source\": \"a\"}\n".as_bytes(),
            ParallelFormat::Jsonl,
            "j",
        )
        .unwrap_err();
        assert_eq!(err.to_string(), "line 2: missing field `target`");
    }

    #[test]
    fn trimming_happens_before_dedup() {
        let db = read_parallel("  a \tb\na\t b  \n".as_bytes(), ParallelFormat::Tsv, "t").unwrap();
        assert_eq!(texts(&db), vec![("a", "b")]);
    }

    #[test]
    fn dedup_examples() {
        assert_eq!(
            texts(&dedup(db(&[("A", "B"), ("A", "B"), ("C", "D")]))),
            vec![("A", "B"), ("C", "D")]
        );
        assert_eq!(
            texts(&dedup(db(&[("A", "B"), ("A", "E")]))),
            vec![("A", "B"), ("A", "E")]
        );
        assert!(dedup(db(&[])).is_empty());
    }

    #[test]
    fn heldout_excludes_database_pairs() {
        let d = db(&[("a", "b"), ("c", "d")]);
        let (held, dropped) = HeldOutSet::against(
            &d,
            vec![SentencePair::new(0, "a", "b"), SentencePair::new(1, "a", "z")],
        );
        assert_eq!(dropped, 1);
        assert_eq!(held.pairs(), &[SentencePair::new(0, "a", "z")]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn records() -> impl Strategy<Value = Vec<(String, String)>> {
            prop::collection::vec(("[a-c ]{1,4}", "[x-z]{1,3}"), 0..30)
        }

        proptest! {
            #[test]
            fn dedup_is_idempotent(recs in records()) {
                let once = ExampleDatabase::from_pairs(recs);
                let twice = dedup(once.clone());
                prop_assert_eq!(once, twice);
            }

            #[test]
            fn jsonl_round_trip(recs in prop::collection::vec(("[^\t\n\r]{1,12}", "\\PC{1,12}"), 1..20)) {
                let recs: Vec<_> = recs
                    .into_iter()
                    .filter(|(s, t)| !s.trim().is_empty() && !t.trim().is_empty())
                    .collect();
                prop_assume!(!recs.is_empty());
                let db = ExampleDatabase::from_pairs(recs.clone());
                prop_assert!(db.len() <= recs.len());
                let mut buf = Vec::new();
                write_jsonl(db.pairs(), &mut buf).unwrap();
                let back = read_parallel(buf.as_slice(), ParallelFormat::Jsonl, "rt").unwrap();
                prop_assert_eq!(back.pairs(), db.pairs());
            }
        }
    }
}
