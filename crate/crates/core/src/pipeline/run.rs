use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::Config;
use super::translate::Translator;
use super::{ensure_dir, make_client, reference_table};
use crate::corpus::{load_heldout, load_parallel, save_jsonl, ExampleDatabase, HeldOutSet, ParallelFormat};
use crate::datagen::{finite_means, impute, read_training_file, DatagenRun, MissingPolicy, XlateMetric};
use crate::error::{Error, Result};
use crate::eval::{compare_methods, corpus_score, CorpusScore, EvalMetric, MethodScores};
use crate::features::{FeatureVector, ImputePolicy, ScoreStore, WhitespaceTokenizer};
use crate::llm_client::LlmClient;
use crate::regressor::{grid_search, split_811, train, write_leaderboard, CtqModel, GridSpec};
use crate::retrieval::{build_index, Bm25Index};
use crate::selection::{FeatureSource, Method, Selector};

pub const STAGES: [&str; 5] = ["prepare", "datagen", "train", "translate", "evaluate"];
pub const MANIFEST: &str = "manifest.json";
pub const EFFECTIVE_CONFIG: &str = "config.effective.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Digest of the stage's configuration and inputs.
    pub key: String,
    /// Output files relative to the run directory, with their SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub started_at: u64,
    pub finished_at: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        match std::fs::read_to_string(&path) {
            Ok(text) => Ok(serde_json::from_str(&text)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Manifest {
                version: 1,
                stages: BTreeMap::new(),
            }),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageOutcome {
    Ran,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub stages: Vec<(String, StageOutcome)>,
    /// Rendered comparison table, when the evaluate stage was reached.
    pub report: Option<String>,
}

#[derive(Default)]
pub struct RunOptions<'a> {
    /// Used instead of the configured endpoint.
    pub llm: Option<&'a dyn LlmClient>,
    /// Stop after this stage completes.
    pub stop_after: Option<String>,
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// File-name-safe form of a method tag.
pub fn method_slug(tag: &str) -> String {
    tag.replace([':', ','], "_")
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

struct Ctx<'a> {
    cfg: &'a Config,
    dir: PathBuf,
    manifest: Manifest,
    opts: RunOptions<'a>,
    outcomes: Vec<(String, StageOutcome)>,
}

impl Ctx<'_> {
    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn upstream(&self, stage: &str) -> String {
        self.manifest
            .stages
            .get(stage)
            .map(|r| serde_json::to_string(&r.outputs).expect("map serializes"))
            .unwrap_or_default()
    }

    fn is_current(&self, stage: &str, key: &str) -> bool {
        let Some(rec) = self.manifest.stages.get(stage) else {
            return false;
        };
        rec.key == key
            && rec
                .outputs
                .iter()
                .all(|(rel, sum)| file_sha256(&self.path(rel)).map_or(false, |s| &s == sum))
    }

    /// Runs `body` unless the recorded outputs for the same key are intact.
    /// `body` returns the output files it wrote, relative to the run dir.
    fn stage<F>(&mut self, name: &str, key_parts: &[String], body: F) -> Result<()>
    where
        F: FnOnce(&Self) -> Result<Vec<String>>,
    {
        let mut h = Sha256::new();
        h.update(name.as_bytes());
        for part in key_parts {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        let key = hex::encode(h.finalize());
        if self.is_current(name, &key) {
            log::info!("stage {name}: up to date, skipping");
            self.outcomes.push((name.to_string(), StageOutcome::Skipped));
            return Ok(());
        }
        log::info!("stage {name}: running");
        let started_at = now();
        let outputs = body(self).map_err(|e| match e {
            Error::Config(_) => e,
            other => Error::Stage {
                stage: name.to_string(),
                message: format!("{other} (resume token: stage {name}; rerun with the same config to resume)"),
            },
        })?;
        let mut sums = BTreeMap::new();
        for rel in outputs {
            sums.insert(rel.clone(), file_sha256(&self.path(&rel))?);
        }
        self.manifest.stages.insert(
            name.to_string(),
            StageRecord {
                key,
                outputs: sums,
                started_at,
                finished_at: now(),
            },
        );
        self.manifest.save(&self.dir)?;
        self.outcomes.push((name.to_string(), StageOutcome::Ran));
        Ok(())
    }

    fn stop_here(&self, stage: &str) -> bool {
        self.opts.stop_after.as_deref() == Some(stage)
    }
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("config serializes")
}

fn input_sum(path: &Option<PathBuf>) -> Result<String> {
    path.as_deref().map(file_sha256).transpose().map(|s| s.unwrap_or_default())
}

struct World {
    db: ExampleDatabase,
    heldout: HeldOutSet,
    test: HeldOutSet,
    index: Bm25Index,
}

fn load_world(ctx: &Ctx<'_>) -> Result<World> {
    let db = load_parallel(&ctx.path("prepare/db.jsonl"), ParallelFormat::Jsonl)?
        .with_languages(&ctx.cfg.data.src_lang, &ctx.cfg.data.tgt_lang);
    let heldout = load_heldout(&ctx.path("prepare/heldout.jsonl"), ParallelFormat::Jsonl, &db)?;
    let test = load_heldout(&ctx.path("prepare/test.jsonl"), ParallelFormat::Jsonl, &db)?;
    let index = Bm25Index::load(&ctx.path("prepare/index.bm25"))?;
    Ok(World {
        db,
        heldout,
        test,
        index,
    })
}

fn load_store(cfg: &Config) -> Result<ScoreStore> {
    match &cfg.data.store {
        Some(p) => ScoreStore::load(p),
        None => Ok(ScoreStore::new()),
    }
}

fn with_client<T>(
    ctx: &Ctx<'_>,
    world: &World,
    f: impl FnOnce(&dyn LlmClient) -> Result<T>,
) -> Result<T> {
    match ctx.opts.llm {
        Some(c) => f(c),
        None => {
            let spec = ctx.cfg.prompt_spec()?;
            let client = make_client(&ctx.cfg.llm, &spec, &reference_table(&[&world.heldout, &world.test]))?;
            f(client.as_ref())
        }
    }
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for l in lines {
        writeln!(w, "{l}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Output files of one method: `(tag, seed, relative path stem)`.
fn method_runs(cfg: &Config) -> Vec<(Method, u64, String)> {
    let mut out = Vec::new();
    for m in &cfg.select.methods {
        if *m == Method::Random {
            for &s in &cfg.select.random_seeds {
                out.push((m.clone(), s, format!("translate/random-s{s}")));
            }
        } else {
            out.push((m.clone(), cfg.run.seed, format!("translate/{}", method_slug(&m.to_string()))));
        }
    }
    out
}

/// Executes every stage whose inputs changed since the last run into the
/// same directory.
pub fn run_all(cfg: &Config, opts: RunOptions<'_>) -> Result<RunReport> {
    cfg.validate()?;
    let dir = cfg.run.dir.clone();
    ensure_dir(&dir)?;
    std::fs::write(dir.join(EFFECTIVE_CONFIG), cfg.effective_toml()).map_err(|e| Error::io(dir.join(EFFECTIVE_CONFIG), e))?;
    let manifest = Manifest::load(&dir)?;
    let mut ctx = Ctx {
        cfg,
        dir,
        manifest,
        opts,
        outcomes: Vec::new(),
    };
    let mut report_text = None;

    let key = vec![
        json(&cfg.data),
        json(&cfg.retrieval),
        file_sha256(&cfg.data.db)?,
        file_sha256(&cfg.data.heldout)?,
        file_sha256(&cfg.data.test)?,
    ];
    ctx.stage("prepare", &key, |ctx| {
        ensure_dir(&ctx.path("prepare"))?;
        let db = load_parallel(&cfg.data.db, ParallelFormat::from_path(&cfg.data.db))?;
        let heldout = load_heldout(&cfg.data.heldout, ParallelFormat::from_path(&cfg.data.heldout), &db)?;
        let test = load_heldout(&cfg.data.test, ParallelFormat::from_path(&cfg.data.test), &db)?;
        if heldout.is_empty() || test.is_empty() {
            return Err(Error::EmptyInput("held-out or test set after removing database overlap".into()));
        }
        save_jsonl(db.pairs(), &ctx.path("prepare/db.jsonl"))?;
        save_jsonl(heldout.pairs(), &ctx.path("prepare/heldout.jsonl"))?;
        save_jsonl(test.pairs(), &ctx.path("prepare/test.jsonl"))?;
        build_index(&db, cfg.bm25_params())?.save(&ctx.path("prepare/index.bm25"))?;
        Ok(vec![
            "prepare/db.jsonl".into(),
            "prepare/heldout.jsonl".into(),
            "prepare/test.jsonl".into(),
            "prepare/index.bm25".into(),
        ])
    })?;
    if ctx.stop_here("prepare") {
        return Ok(RunReport { stages: ctx.outcomes, report: None });
    }

    let needs_model = cfg.needs_model();
    if needs_model {
        let key = vec![
            ctx.upstream("prepare"),
            json(&cfg.datagen),
            json(&cfg.features),
            json(&cfg.prompt),
            json(&cfg.llm),
            json(&cfg.data.missing),
            input_sum(&cfg.data.store)?,
            if cfg.datagen.metric == "chrf" { String::new() } else { file_sha256(Path::new(&cfg.datagen.metric))? },
        ];
        ctx.stage("datagen", &key, |ctx| {
            ensure_dir(&ctx.path("datagen"))?;
            let world = load_world(ctx)?;
            let store = load_store(cfg)?;
            let out = ctx.path("datagen/train.csv");
            let mut run = DatagenRun::new(&world.heldout, &world.db, &world.index, &store, cfg.prompt_spec()?);
            run.features = cfg.features.clone();
            run.missing = cfg.data.missing;
            run.metric = if cfg.datagen.metric == "chrf" {
                XlateMetric::Chrf
            } else {
                XlateMetric::load_external(Path::new(&cfg.datagen.metric))?
            };
            run.k = cfg.datagen.k;
            run.max_in_flight = cfg.llm.max_in_flight;
            run.max_new_tokens = cfg.prompt.max_new_tokens;
            run.retries = cfg.datagen.retries;
            run.retry_backoff = cfg.llm.backoff();
            run.max_tombstone_rate = cfg.datagen.max_tombstone_rate;
            let partial_key = ctx.path("datagen/.key");
            let key_text = json(&(&cfg.datagen, &cfg.features, &cfg.prompt, &cfg.data.missing, ctx.upstream("prepare")));
            if std::fs::read_to_string(&partial_key).ok().as_deref() != Some(key_text.as_str()) {
                for p in [out.clone(), crate::datagen::tombstone_path(&out)] {
                    if p.exists() {
                        std::fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
                    }
                }
                std::fs::write(&partial_key, &key_text).map_err(|e| Error::io(&partial_key, e))?;
            }
            let report = with_client(ctx, &world, |llm| run.generate_to_file(llm, &out))?;
            log::info!("datagen: {} rows, {} tombstones, {} resumed", report.rows, report.tombstones, report.resumed);
            Ok(vec!["datagen/train.csv".into(), "datagen/train.csv.tombstones".into()])
        })?;
        if ctx.stop_here("datagen") {
            return Ok(RunReport { stages: ctx.outcomes, report: None });
        }

        let grid_sum = match (&cfg.train.tune, &cfg.train.grid) {
            (true, Some(p)) => file_sha256(p)?,
            _ => String::new(),
        };
        let key = vec![ctx.upstream("datagen"), json(&cfg.train), cfg.run.seed.to_string(), grid_sum];
        ctx.stage("train", &key, |ctx| {
            ensure_dir(&ctx.path("model"))?;
            let rows = read_training_file(&ctx.path("datagen/train.csv"))?;
            let (tr, va, te) = split_811(rows, cfg.run.seed, |r| r.query_id);
            let means: FeatureVector = finite_means(&tr);
            let (tr, va, te) = (impute(&tr, &means), impute(&va, &means), impute(&te, &means));
            let mut outputs = vec!["model/ctq.model".to_string(), "model/history.jsonl".into(), "model/split.json".into()];
            let (mlp, tc) = if cfg.train.tune {
                let grid = match &cfg.train.grid {
                    Some(p) => {
                        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
                    }
                    None => GridSpec::default(),
                };
                let outcome = grid_search(&tr, &va, &grid, cfg.run.seed)?;
                let lb = ctx.path("model/leaderboard.jsonl");
                let file = File::create(&lb).map_err(|e| Error::io(&lb, e))?;
                write_leaderboard(&outcome.leaderboard, BufWriter::new(file)).map_err(|e| Error::io(&lb, e))?;
                outputs.push("model/leaderboard.jsonl".into());
                (outcome.best.mlp, outcome.best.train)
            } else {
                (cfg.train.mlp(), cfg.train.train_config(cfg.run.seed))
            };
            let out = train(&tr, &va, &mlp, &tc)?;
            out.model.save(&ctx.path("model/ctq.model"))?;
            write_lines(
                &ctx.path("model/history.jsonl"),
                out.history.iter().map(|h| json(h)),
            )?;
            let test_mse = if te.is_empty() {
                None
            } else {
                let preds = out.model.predict_all(&te.iter().map(|t| t.features).collect::<Vec<_>>())?;
                Some(preds.iter().zip(&te).map(|(p, t)| (p - t.ctq).powi(2)).sum::<f64>() / te.len() as f64)
            };
            let split = serde_json::json!({
                "train": tr.len(), "val": va.len(), "test": te.len(),
                "best_epoch": out.best_epoch, "val_mse": out.model.meta.final_val_mse, "test_mse": test_mse,
            });
            write_lines(&ctx.path("model/split.json"), [split.to_string()])?;
            Ok(outputs)
        })?;
        if ctx.stop_here("train") {
            return Ok(RunReport { stages: ctx.outcomes, report: None });
        }
    }

    let key = vec![
        ctx.upstream("prepare"),
        if needs_model { ctx.upstream("train") } else { String::new() },
        json(&cfg.select),
        json(&cfg.retrieval),
        json(&cfg.features),
        json(&cfg.prompt),
        json(&cfg.llm),
        json(&cfg.data.missing),
        cfg.run.seed.to_string(),
        input_sum(&cfg.data.store)?,
    ];
    ctx.stage("translate", &key, |ctx| {
        ensure_dir(&ctx.path("translate"))?;
        let world = load_world(ctx)?;
        let store = load_store(cfg)?;
        let model = if needs_model { Some(CtqModel::load(&ctx.path("model/ctq.model"))?) } else { None };
        let policy = match cfg.data.missing {
            MissingPolicy::Strict => ImputePolicy::Strict,
            MissingPolicy::FillDefault => {
                ImputePolicy::FillDefault(model.as_ref().map(|m| m.norm.mean_vector()).unwrap_or_default())
            }
        };
        let spec = cfg.prompt_spec()?;
        let inputs: Vec<String> = world.test.pairs().iter().map(|p| p.source.clone()).collect();
        let mut outputs = Vec::new();
        with_client(ctx, &world, |llm| {
            for (method, seed, stem) in method_runs(cfg) {
                let t = Translator {
                    db: &world.db,
                    index: &world.index,
                    selector: Selector {
                        db: &world.db,
                        features: Some(FeatureSource {
                            db: &world.db,
                            store: &store,
                            config: &cfg.features,
                            policy: &policy,
                        }),
                        model: model.as_ref(),
                    },
                    method,
                    shortlist: cfg.retrieval.shortlist,
                    k: cfg.select.k,
                    order: cfg.select.example_order,
                    fallback: cfg.select.fallback,
                    spec: spec.clone(),
                    tokenizer: &WhitespaceTokenizer,
                    max_new_tokens: cfg.prompt.max_new_tokens,
                    max_in_flight: cfg.llm.max_in_flight,
                    seed,
                };
                let results = t.translate(&inputs, llm)?;
                let txt = format!("{stem}.txt");
                let prov = format!("{stem}.provenance.jsonl");
                write_lines(&ctx.path(&txt), results.iter().map(|r| r.output.replace('\n', " ")))?;
                write_lines(&ctx.path(&prov), results.iter().map(|r| json(&r.provenance)))?;
                outputs.push(txt);
                outputs.push(prov);
            }
            Ok(())
        })?;
        Ok(outputs)
    })?;
    if ctx.stop_here("translate") {
        return Ok(RunReport { stages: ctx.outcomes, report: None });
    }

    let key = vec![ctx.upstream("translate"), ctx.upstream("prepare"), json(&cfg.eval)];
    ctx.stage("evaluate", &key, |ctx| {
        ensure_dir(&ctx.path("eval"))?;
        let test = crate::corpus::read_records(
            File::open(ctx.path("prepare/test.jsonl")).map_err(|e| Error::io(ctx.path("prepare/test.jsonl"), e))?,
            ParallelFormat::Jsonl,
            "test set",
        )?;
        let refs: Vec<String> = test.into_iter().map(|p| p.target).collect();
        let mut runs: Vec<MethodScores> = Vec::new();
        for m in &cfg.select.methods {
            let stems: Vec<String> = method_runs(cfg)
                .into_iter()
                .filter(|(mm, _, _)| mm == m)
                .map(|(_, _, s)| s)
                .collect();
            let mut per_run = Vec::new();
            for stem in &stems {
                let hyps = crate::corpus::read_lines(&ctx.path(&format!("{stem}.txt")))?;
                per_run.push(corpus_score(&hyps, &refs, &EvalMetric::Chrf)?);
            }
            let n = per_run.len() as f64;
            let sentences: Vec<f64> = (0..refs.len())
                .map(|i| per_run.iter().map(|r| r.sentences[i]).sum::<f64>() / n)
                .collect();
            let score = per_run.iter().map(|r| r.score).sum::<f64>() / n;
            runs.push(MethodScores {
                method: m.to_string(),
                scores: CorpusScore { score, sentences },
            });
        }
        let report = compare_methods(&runs, &cfg.eval.baseline)?;
        write_lines(&ctx.path("eval/scores.jsonl"), runs.iter().map(json))?;
        std::fs::write(ctx.path("eval/report.txt"), report.to_text()).map_err(|e| Error::io(ctx.path("eval/report.txt"), e))?;
        write_lines(&ctx.path("eval/report.json"), [json(&report)])?;
        Ok(vec!["eval/scores.jsonl".into(), "eval/report.txt".into(), "eval/report.json".into()])
    })?;
    report_text = std::fs::read_to_string(ctx.path("eval/report.txt")).ok().or(report_text);
    Ok(RunReport {
        stages: ctx.outcomes,
        report: report_text,
    })
}
