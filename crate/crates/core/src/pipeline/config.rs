use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::datagen::{MissingPolicy, DEFAULT_MAX_TOMBSTONE_RATE};
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::llm_client::{DEFAULT_MAX_IN_FLIGHT, DEFAULT_MAX_NEW_TOKENS};
use crate::prompt::{PromptSpec, DEFAULT_DELIMITER, DEFAULT_TOKEN_BUDGET};
use crate::regressor::{Activation, MlpConfig, Optimizer, TrainConfig};
use crate::retrieval::{Bm25Params, DEFAULT_B, DEFAULT_K1, DEFAULT_SHORTLIST};
use crate::selection::{ExampleOrder, Method, DEFAULT_K};

/// Whole-pipeline configuration. Relative paths are resolved against the
/// directory of the config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub run: RunSection,
    pub data: DataSection,
    pub retrieval: RetrievalSection,
    pub features: FeatureConfig,
    pub datagen: DatagenSection,
    pub train: TrainSection,
    pub select: SelectSection,
    pub prompt: PromptSection,
    pub llm: LlmSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub dir: PathBuf,
    pub seed: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("run"),
            seed: 13,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Example database (TSV or JSONL).
    pub db: PathBuf,
    /// Held-out pairs used to generate scorer training data.
    pub heldout: PathBuf,
    /// Test pairs to translate and score.
    pub test: PathBuf,
    pub store: Option<PathBuf>,
    pub src_lang: String,
    pub tgt_lang: String,
    pub missing: MissingPolicy,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            db: PathBuf::new(),
            heldout: PathBuf::new(),
            test: PathBuf::new(),
            store: None,
            src_lang: "English".into(),
            tgt_lang: "French".into(),
            missing: MissingPolicy::Strict,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub k1: f64,
    pub b: f64,
    /// Shortlist size for selection.
    pub shortlist: usize,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        Self {
            k1: DEFAULT_K1,
            b: DEFAULT_B,
            shortlist: DEFAULT_SHORTLIST,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatagenSection {
    /// Candidates per held-out query.
    pub k: usize,
    /// `chrf`, or a path to a reference-aware score file.
    pub metric: String,
    pub retries: usize,
    pub max_tombstone_rate: f64,
}

impl Default for DatagenSection {
    fn default() -> Self {
        Self {
            k: DEFAULT_SHORTLIST,
            metric: "chrf".into(),
            retries: 3,
            max_tombstone_rate: DEFAULT_MAX_TOMBSTONE_RATE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub activation: Activation,
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    /// Run the hyper-parameter search instead of a single configuration.
    pub tune: bool,
    /// Grid file for the search; the full default grid when absent.
    pub grid: Option<PathBuf>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let mlp = MlpConfig::default();
        let tc = TrainConfig::default();
        Self {
            hidden_layers: mlp.hidden_layers,
            hidden_width: mlp.hidden_width,
            activation: mlp.activation,
            optimizer: tc.optimizer,
            learning_rate: tc.learning_rate,
            batch_size: tc.batch_size,
            epochs: tc.epochs,
            weight_decay: tc.weight_decay,
            tune: false,
            grid: None,
        }
    }
}

impl TrainSection {
    pub fn mlp(&self) -> MlpConfig {
        MlpConfig::new(self.hidden_layers, self.hidden_width, self.activation)
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            optimizer: self.optimizer,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            weight_decay: self.weight_decay,
            seed,
            shuffle: true,
            zero_init_output: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fallback {
    /// Top up short selections with random database pairs.
    #[default]
    RandomFill,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectSection {
    pub methods: Vec<Method>,
    pub k: usize,
    pub example_order: ExampleOrder,
    pub fallback: Fallback,
    /// Seeds averaged for the random baseline.
    pub random_seeds: Vec<u64>,
}

impl Default for SelectSection {
    fn default() -> Self {
        Self {
            methods: vec![Method::Ctq, Method::Bm25, Method::Rbm25, Method::Random],
            k: DEFAULT_K,
            example_order: ExampleOrder::BestLast,
            fallback: Fallback::RandomFill,
            random_seeds: vec![1, 2, 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSection {
    pub delimiter: String,
    pub token_budget: usize,
    pub max_new_tokens: usize,
}

impl Default for PromptSection {
    fn default() -> Self {
        Self {
            delimiter: DEFAULT_DELIMITER.into(),
            token_budget: DEFAULT_TOKEN_BUDGET,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    /// `mock:echo`, `mock:table:<json file>` or an `http(s)://` base URL.
    pub endpoint: String,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
    pub retries: usize,
    pub retry_backoff_ms: u64,
}

impl Default for LlmSection {
    fn default() -> Self {
        Self {
            endpoint: "mock:echo".into(),
            timeout_secs: 120,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            retries: 3,
            retry_backoff_ms: 500,
        }
    }
}

impl LlmSection {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }

    pub fn backoff(&self) -> Duration {
        Duration::from_millis(self.retry_backoff_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Method the others are compared with.
    pub baseline: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { baseline: "bm25".into() }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses and validates a config file, resolving its relative paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if !p.as_os_str().is_empty() && p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.run.dir);
        fix(&mut self.data.db);
        fix(&mut self.data.heldout);
        fix(&mut self.data.test);
        if let Some(p) = self.data.store.as_mut() {
            fix(p);
        }
        if let Some(p) = self.train.grid.as_mut() {
            fix(p);
        }
        if self.datagen.metric != "chrf" {
            let mut p = PathBuf::from(&self.datagen.metric);
            fix(&mut p);
            self.datagen.metric = p.to_string_lossy().into_owned();
        }
        if let Some(rest) = self.llm.endpoint.strip_prefix("mock:table:") {
            let mut p = PathBuf::from(rest);
            fix(&mut p);
            self.llm.endpoint = format!("mock:table:{}", p.display());
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, p) in [("data.db", &self.data.db), ("data.heldout", &self.data.heldout), ("data.test", &self.data.test)] {
            if p.as_os_str().is_empty() {
                return bad(format!("{name} is required"));
            }
        }
        Bm25Params::new(self.retrieval.k1, self.retrieval.b).map_err(|e| Error::Config(e.to_string()))?;
        if self.retrieval.shortlist == 0 || self.datagen.k == 0 || self.select.k == 0 {
            return bad("shortlist, datagen.k and select.k must be at least 1".into());
        }
        if self.select.methods.is_empty() {
            return bad("select.methods is empty".into());
        }
        if self.select.methods.contains(&Method::Random) && self.select.random_seeds.is_empty() {
            return bad("select.random_seeds is empty".into());
        }
        let tags: Vec<String> = self.select.methods.iter().map(|m| m.to_string()).collect();
        if !tags.contains(&self.eval.baseline) {
            return bad(format!("eval.baseline `{}` is not among select.methods", self.eval.baseline));
        }
        self.train.mlp().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train.train_config(0).validate().map_err(|e| Error::Config(e.to_string()))?;
        self.prompt_spec()?;
        let ep = &self.llm.endpoint;
        if !(ep == "mock:echo" || ep.starts_with("mock:table:") || ep.starts_with("http://") || ep.starts_with("https://")) {
            return bad(format!("unsupported llm.endpoint `{ep}`"));
        }
        if !(0.0..=1.0).contains(&self.datagen.max_tombstone_rate) {
            return bad("datagen.max_tombstone_rate must be within [0, 1]".into());
        }
        Ok(())
    }

    pub fn prompt_spec(&self) -> Result<PromptSpec> {
        PromptSpec::new(&self.data.src_lang, &self.data.tgt_lang)
            .and_then(|s| s.with_delimiter(&self.prompt.delimiter))
            .map(|s| s.with_budget(self.prompt.token_budget))
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn bm25_params(&self) -> Bm25Params {
        Bm25Params {
            k1: self.retrieval.k1,
            b: self.retrieval.b,
        }
    }

    pub fn needs_model(&self) -> bool {
        self.select.methods.contains(&Method::Ctq)
    }

    /// The config as echoed into the run directory: everything except the
    /// run directory itself.
    pub fn effective_toml(&self) -> String {
        let mut echo = self.clone();
        echo.run.dir = PathBuf::new();
        toml::to_string(&echo).expect("config serializes")
    }
}
