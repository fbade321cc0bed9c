use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::read_lines;
use crate::error::{Error, Result};
use crate::features::chrf;

#[derive(Debug, Clone, PartialEq)]
pub enum EvalMetric {
    Chrf,
    /// Per-sentence scores, one per hypothesis line.
    External(Vec<f64>),
}

impl EvalMetric {
    /// One decimal per line.
    pub fn load_external(path: &Path) -> Result<Self> {
        let scores = read_lines(path)?
            .iter()
            .enumerate()
            .map(|(i, l)| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::parse(i + 1, format!("bad score `{l}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EvalMetric::External(scores))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusScore {
    pub score: f64,
    pub sentences: Vec<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn corpus_score(hyps: &[String], refs: &[String], metric: &EvalMetric) -> Result<CorpusScore> {
    if hyps.len() != refs.len() {
        return Err(Error::InvalidParameter(format!(
            "{} hypotheses but {} references",
            hyps.len(),
            refs.len()
        )));
    }
    if hyps.is_empty() {
        return Err(Error::EmptyInput("hypotheses".into()));
    }
    let sentences = match metric {
        EvalMetric::Chrf => hyps.iter().zip(refs).map(|(h, r)| chrf(h, r)).collect(),
        EvalMetric::External(scores) => {
            if scores.len() < hyps.len() {
                return Err(Error::Parse {
                    line: scores.len() + 1,
                    message: format!("score file has {} lines for {} sentences", scores.len(), hyps.len()),
                });
            }
            scores[..hyps.len()].to_vec()
        }
    };
    Ok(CorpusScore {
        score: mean(&sentences),
        sentences,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScores {
    pub method: String,
    pub scores: CorpusScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub score: f64,
    pub delta: f64,
    /// Share of sentences where the method beats the baseline; ties count half.
    pub win_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub baseline: String,
    pub rows: Vec<ReportRow>,
}

pub fn win_rate(a: &[f64], b: &[f64]) -> f64 {
    let wins: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| if x > y { 1.0 } else if x == y { 0.5 } else { 0.0 })
        .sum();
    wins / a.len() as f64
}

/// Scores every method against `baseline`, in the given method order.
pub fn compare_methods(runs: &[MethodScores], baseline: &str) -> Result<Report> {
    let base = runs
        .iter()
        .find(|r| r.method == baseline)
        .ok_or_else(|| Error::InvalidParameter(format!("baseline `{baseline}` was not run")))?;
    let n = base.scores.sentences.len();
    if let Some(bad) = runs.iter().find(|r| r.scores.sentences.len() != n) {
        return Err(Error::InvalidParameter(format!(
            "method `{}` was scored on {} sentences, baseline on {n}",
            bad.method,
            bad.scores.sentences.len()
        )));
    }
    let rows = runs
        .iter()
        .map(|r| ReportRow {
            method: r.method.clone(),
            score: r.scores.score,
            delta: r.scores.score - base.scores.score,
            win_rate: win_rate(&r.scores.sentences, &base.scores.sentences),
        })
        .collect();
    Ok(Report {
        baseline: baseline.to_string(),
        rows,
    })
}

impl Report {
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.method.len()).max().unwrap_or(0).max("method".len());
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>9}  {:>9}  {:>8}", "method", "score", "delta", "win_rate");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>9.4}  {:>+9.4}  {:>8.4}",
                r.method, r.score, r.delta, r.win_rate
            );
        }
        let _ = writeln!(out, "baseline: {}", self.baseline);
        out
    }
}
