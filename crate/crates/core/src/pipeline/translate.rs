use serde::{Deserialize, Serialize};

use crate::corpus::{ExampleDatabase, PairId, SentencePair};
use crate::error::{Error, Result};
use crate::features::TokenCounter;
use crate::llm_client::{batch_generate, GenerationRequest, LlmClient};
use crate::prompt::{build_prompt, enforce_budget, postprocess, PromptSpec};
use crate::retrieval::Bm25Index;
use crate::selection::{random_fill, Chosen, ExampleOrder, Method, Selector};

use super::config::Fallback;

/// Per-input seed derived from a run seed.
pub fn input_seed(seed: u64, input_id: usize) -> u64 {
    seed ^ (input_id as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub struct Translator<'a> {
    pub db: &'a ExampleDatabase,
    pub index: &'a Bm25Index,
    pub selector: Selector<'a>,
    pub method: Method,
    pub shortlist: usize,
    pub k: usize,
    pub order: ExampleOrder,
    pub fallback: Fallback,
    pub spec: PromptSpec,
    pub tokenizer: &'a dyn TokenCounter,
    pub max_new_tokens: usize,
    pub max_in_flight: usize,
    pub seed: u64,
}

/// What went into one translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub input_id: usize,
    pub method: String,
    /// Selected examples, best first.
    pub chosen: Vec<Chosen>,
    /// Example ids in the order they appear in the prompt.
    pub prompt_order: Vec<PairId>,
    /// Selected examples dropped to fit the token budget.
    pub dropped: Vec<PairId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Translation {
    pub output: String,
    pub provenance: Provenance,
}

impl Translator<'_> {
    /// Builds the prompt for one input.
    pub fn prepare(&self, input_id: usize, input: &str) -> Result<(String, Provenance)> {
        let mut cands = self.index.shortlist(input, self.shortlist);
        cands.input_id = input_id;
        let seed = input_seed(self.seed, input_id);
        let mut result = self.selector.select(&self.method, &cands, input, self.k, seed)?;
        if result.chosen.len() < self.k && self.fallback == Fallback::RandomFill {
            random_fill(&mut result, self.db, self.k, seed);
        }
        let best_first: Vec<SentencePair> = result
            .chosen
            .iter()
            .map(|c| {
                self.db
                    .get(c.pair_id)
                    .cloned()
                    .ok_or_else(|| Error::InvalidParameter(format!("pair {} is not in the database", c.pair_id)))
            })
            .collect::<Result<_>>()?;
        let kept = enforce_budget(&best_first, input, &self.spec, self.tokenizer)?;
        let kept_ids: Vec<PairId> = kept.iter().map(|p| p.id).collect();
        let dropped = result.ids().into_iter().filter(|id| !kept_ids.contains(id)).collect();
        let arranged = self.order.arrange(&kept);
        let prompt = build_prompt(&arranged, input, &self.spec);
        Ok((
            prompt,
            Provenance {
                input_id,
                method: result.method,
                chosen: result.chosen,
                prompt_order: arranged.iter().map(|p| p.id).collect(),
                dropped,
                error: None,
            },
        ))
    }

    /// Translates every input. A failed generation yields an empty output
    /// with the error in its provenance; selection and budget errors abort.
    pub fn translate<C: LlmClient + ?Sized>(&self, inputs: &[String], llm: &C) -> Result<Vec<Translation>> {
        let prepared: Vec<(String, Provenance)> = inputs
            .iter()
            .enumerate()
            .map(|(i, x)| self.prepare(i, x))
            .collect::<Result<_>>()?;
        let reqs: Vec<GenerationRequest> = prepared
            .iter()
            .map(|(p, _)| {
                GenerationRequest::greedy(p.clone())
                    .with_max_new_tokens(self.max_new_tokens)
                    .with_stop(self.spec.delimiter.clone())
            })
            .collect();
        let responses = batch_generate(llm, &reqs, self.max_in_flight);
        Ok(prepared
            .into_iter()
            .zip(responses)
            .map(|((_, mut provenance), resp)| match resp {
                Ok(r) => Translation {
                    output: postprocess(&r.completion, &self.spec).text,
                    provenance,
                },
                Err(e) => {
                    log::warn!("input {}: generation failed: {e}", provenance.input_id);
                    provenance.error = Some(e.to_string());
                    Translation {
                        output: String::new(),
                        provenance,
                    }
                }
            })
            .collect())
    }
}
