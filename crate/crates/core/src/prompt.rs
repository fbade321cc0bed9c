//! k-shot translation prompts and completion post-processing.
//!
//! Layout, with `<Src>`/`<Tgt>` replaced by the language names:
//!
//! ```text
//! <Src> sentence: <x_1>
//! <Tgt> sentence: <y_1>
//! ###
//! ...
//! <Src> sentence: <input>
//! <Tgt> sentence:
//! ```

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::SentencePair;
use crate::error::{Error, Result};
use crate::features::TokenCounter;

pub const DEFAULT_DELIMITER: &str = "###";
pub const DEFAULT_TOKEN_BUDGET: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub src_lang: String,
    pub tgt_lang: String,
    pub delimiter: String,
    pub token_budget: usize,
}

impl PromptSpec {
    pub fn new(src_lang: impl Into<String>, tgt_lang: impl Into<String>) -> Result<Self> {
        Self {
            src_lang: src_lang.into(),
            tgt_lang: tgt_lang.into(),
            delimiter: DEFAULT_DELIMITER.into(),
            token_budget: DEFAULT_TOKEN_BUDGET,
        }
        .validated()
    }

    pub fn with_delimiter(mut self, delimiter: impl Into<String>) -> Result<Self> {
        self.delimiter = delimiter.into();
        self.validated()
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.token_budget = budget;
        self
    }

    pub fn validated(self) -> Result<Self> {
        if self.delimiter.is_empty() {
            return Err(Error::InvalidParameter("prompt delimiter must be non-empty".into()));
        }
        if self.src_lang.contains(&self.delimiter) || self.tgt_lang.contains(&self.delimiter) {
            return Err(Error::InvalidParameter(format!(
                "delimiter {:?} occurs in a language name",
                self.delimiter
            )));
        }
        Ok(self)
    }

    fn src_label(&self) -> String {
        format!("{} sentence:", self.src_lang)
    }

    fn tgt_label(&self) -> String {
        format!("{} sentence:", self.tgt_lang)
    }

    /// The text of one example block, including its trailing delimiter line.
    pub fn example_block(&self, source: &str, target: &str) -> String {
        format!(
            "{} {source}\n{} {target}\n{}\n",
            self.src_label(),
            self.tgt_label(),
            self.delimiter
        )
    }

    pub fn query_block(&self, input: &str) -> String {
        format!("{} {input}\n{}", self.src_label(), self.tgt_label())
    }
}

/// Renders the prompt with examples in the given order.
pub fn build_prompt(examples: &[SentencePair], input: &str, spec: &PromptSpec) -> String {
    let mut out = String::new();
    for ex in examples {
        out.push_str(&spec.example_block(&ex.source, &ex.target));
    }
    out.push_str(&spec.query_block(input));
    out
}

/// Drops duplicate examples, then drops the lowest-ranked examples until the
/// rendered prompt fits the token budget. `examples` is ordered best first;
/// the result keeps that order.
pub fn enforce_budget(
    examples: &[SentencePair],
    input: &str,
    spec: &PromptSpec,
    tokenizer: &dyn TokenCounter,
) -> Result<Vec<SentencePair>> {
    let query_tokens = tokenizer.count(&spec.query_block(input));
    if query_tokens > spec.token_budget {
        return Err(Error::BudgetExceeded {
            tokens: query_tokens,
            budget: spec.token_budget,
        });
    }
    let mut seen = HashSet::new();
    let mut kept: Vec<SentencePair> = examples
        .iter()
        .filter(|p| seen.insert((p.source.as_str(), p.target.as_str())))
        .cloned()
        .collect();
    while !kept.is_empty() && tokenizer.count(&build_prompt(&kept, input, spec)) > spec.token_budget {
        kept.pop();
    }
    Ok(kept)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostProcessed {
    pub text: String,
    /// Nothing was left after truncation and trimming.
    pub empty: bool,
}

/// Cuts a completion at the first delimiter, trims it and removes one echoed
/// `<Tgt> sentence:` label.
pub fn postprocess(completion: &str, spec: &PromptSpec) -> PostProcessed {
    let head = match completion.find(&spec.delimiter) {
        Some(pos) => &completion[..pos],
        None => completion,
    };
    let mut text = head.trim();
    if let Some(rest) = text.strip_prefix(&spec.tgt_label()) {
        text = rest.trim();
    }
    PostProcessed {
        text: text.to_string(),
        empty: text.is_empty(),
    }
}

/// Recovers the input sentence from a prompt built by [`build_prompt`].
pub fn extract_query<'a>(prompt: &'a str, spec: &PromptSpec) -> Option<&'a str> {
    let body = prompt.strip_suffix(&format!("\n{}", spec.tgt_label()))?;
    let start = body.rfind(&format!("{} ", spec.src_label())).filter(|&i| {
        i == 0 || body[..i].ends_with('\n')
    })?;
    Some(&body[start + spec.src_label().len() + 1..])
}

/// Number of example blocks in a prompt, counted by delimiter lines.
pub fn count_examples(prompt: &str, spec: &PromptSpec) -> usize {
    prompt.lines().filter(|l| *l == spec.delimiter).count()
}
