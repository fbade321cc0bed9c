//! Configuration-driven orchestration: data preparation, training data
//! generation, scorer training, translation with each selection method and
//! evaluation, with per-stage checksums so interrupted runs resume.

mod config;
mod run;
mod translate;

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

pub use config::{
    Config, DataSection, DatagenSection, EvalSection, Fallback, LlmSection, PromptSection, RetrievalSection, RunSection,
    SelectSection, TrainSection,
};
pub use run::{file_sha256, method_slug, run_all, Manifest, RunOptions, RunReport, StageOutcome, StageRecord, STAGES};
pub use translate::{input_seed, Provenance, Translation, Translator};

use crate::corpus::{ExampleDatabase, HeldOutSet};
use crate::error::{Error, Result};
use crate::features::{required_keys, FeatureConfig, StoreKey};
use crate::llm_client::{EchoMock, HttpClient, LlmClient, Retrying, TableMock};
use crate::prompt::PromptSpec;
use crate::retrieval::Bm25Index;

/// Builds the generation client named by `endpoint`. The echo mock answers
/// with the reference of any sentence in `references`.
pub fn make_client(
    llm: &LlmSection,
    spec: &PromptSpec,
    references: &[(String, String)],
) -> Result<Box<dyn LlmClient>> {
    let ep = llm.endpoint.as_str();
    if ep == "mock:echo" {
        return Ok(Box::new(EchoMock::new(spec.clone(), references.iter().cloned())));
    }
    if let Some(path) = ep.strip_prefix("mock:table:") {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table: HashMap<String, String> = serde_json::from_str(&text)?;
        return Ok(Box::new(TableMock::new(table)));
    }
    if ep.starts_with("http://") || ep.starts_with("https://") {
        return Ok(Box::new(Retrying {
            inner: HttpClient::new(ep, llm.timeout()),
            attempts: llm.retries.max(1),
            backoff: llm.backoff(),
        }));
    }
    Err(Error::Config(format!("unsupported llm.endpoint `{ep}`")))
}

/// Source/target pairs of the given sets, for the echo mock.
pub fn reference_table(sets: &[&HeldOutSet]) -> Vec<(String, String)> {
    sets.iter()
        .flat_map(|s| s.pairs().iter().map(|p| (p.source.clone(), p.target.clone())))
        .collect()
}

/// Every store key strict extraction will ask for when each query is
/// paired with its top-`n` shortlist, deduplicated and sorted.
pub fn enumerate_store_keys(
    db: &ExampleDatabase,
    index: &Bm25Index,
    queries: &[String],
    n: usize,
    cfg: &FeatureConfig,
) -> Result<Vec<StoreKey>> {
    let mut seen: BTreeSet<(String, [u8; 32])> = BTreeSet::new();
    let mut keys = Vec::new();
    for q in queries {
        for c in index.shortlist(q, n).entries {
            let pair = db
                .get(c.pair_id)
                .ok_or_else(|| Error::InvalidParameter(format!("pair {} is not in the database", c.pair_id)))?;
            for key in required_keys(pair, q, cfg) {
                if seen.insert((key.tag(), key.hash())) {
                    keys.push(key);
                }
            }
        }
    }
    keys.sort_by(|a, b| (a.tag(), a.hash()).cmp(&(b.tag(), b.hash())));
    Ok(keys)
}

pub(crate) fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}
