use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ctq_core::corpus::{load_heldout, load_parallel, read_lines, save_jsonl, ExampleDatabase, ParallelFormat};
use ctq_core::datagen::{finite_means, impute, read_training_file, DatagenRun, MissingPolicy, XlateMetric};
use ctq_core::eval::{compare_methods, corpus_score, EvalMetric, MethodScores};
use ctq_core::features::{extract_features, ImputePolicy, ScoreStore, WhitespaceTokenizer};
use ctq_core::pipeline::{
    enumerate_store_keys, make_client, reference_table, run_all, Config, Fallback, RunOptions, Translator, STAGES,
};
use ctq_core::regressor::{
    grad_check, grid_search, split_811, train, write_leaderboard, Activation, CtqModel, GridSpec, MlpConfig,
};
use ctq_core::retrieval::{build_index, Bm25Index};
use ctq_core::selection::{random_fill, FeatureSource, Method, Selector};
use ctq_core::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::{
    Cli, Command, CorpusArgs, DataArgs, DatagenArgs, EvaluateArgs, FallbackArg, FeaturesCommand, GradcheckArgs,
    HyperArgs, IndexCommand, LlmArgs, Policy, QueryArgs, RetrievalArgs, RunAllArgs, SelectArgs, SelectionArgs,
    StoreArgs, TrainArgs, TranslateArgs, TuneArgs,
};

/// Largest relative gradient error accepted for relu and for smooth activations.
const RELU_TOLERANCE: f64 = 1e-4;
const SMOOTH_TOLERANCE: f64 = 1e-6;

pub fn run(cli: Cli) -> Result<()> {
    let cfg = base_config(cli.config.as_deref())?;
    match cli.command {
        Command::Corpus(a) => corpus(cfg, a),
        Command::Index(c) => index(cfg, c),
        Command::Features(c) => features(cfg, c),
        Command::Datagen(a) => datagen(cfg, a),
        Command::Train(a) => train_cmd(cfg, a),
        Command::Tune(a) => tune(cfg, a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Select(a) => select(cfg, a),
        Command::Translate(a) => translate(cfg, a),
        Command::Evaluate(a) => evaluate(cfg, a),
        Command::RunAll(a) => run_all_cmd(cfg, cli.config.is_some(), a),
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// The config file with relative paths resolved, or the defaults. Fields a
/// subcommand needs are checked by that subcommand.
fn base_config(path: Option<&Path>) -> Result<Config> {
    let Some(path) = path else {
        return Ok(Config::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    let mut cfg = Config::from_toml(&text)?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}

fn apply_data(cfg: &mut Config, a: &DataArgs) {
    if let Some(p) = &a.db {
        cfg.data.db = p.clone();
    }
    if let Some(s) = &a.src_lang {
        cfg.data.src_lang = s.clone();
    }
    if let Some(s) = &a.tgt_lang {
        cfg.data.tgt_lang = s.clone();
    }
}

fn apply_retrieval(cfg: &mut Config, a: &RetrievalArgs) {
    if let Some(v) = a.bm25_k1 {
        cfg.retrieval.k1 = v;
    }
    if let Some(v) = a.bm25_b {
        cfg.retrieval.b = v;
    }
    if let Some(v) = a.shortlist_n {
        cfg.retrieval.shortlist = v;
    }
}

fn apply_store(cfg: &mut Config, a: &StoreArgs) {
    if let Some(p) = &a.store {
        cfg.data.store = Some(p.clone());
    }
    match a.policy {
        Some(Policy::Strict) => cfg.data.missing = MissingPolicy::Strict,
        Some(Policy::FillDefault) => cfg.data.missing = MissingPolicy::FillDefault,
        None => {}
    }
}

fn apply_llm(cfg: &mut Config, a: &LlmArgs) {
    if let Some(e) = &a.endpoint {
        cfg.llm.endpoint = e.clone();
    }
    if let Some(v) = a.max_in_flight {
        cfg.llm.max_in_flight = v;
    }
    if let Some(v) = a.timeout_s {
        cfg.llm.timeout_secs = v;
    }
    if let Some(v) = a.max_new_tokens {
        cfg.prompt.max_new_tokens = v;
    }
}

fn apply_hyper(cfg: &mut Config, a: &HyperArgs) {
    let t = &mut cfg.train;
    if let Some(v) = a.hidden_layers {
        t.hidden_layers = v;
    }
    if let Some(v) = a.hidden_width {
        t.hidden_width = v;
    }
    if let Some(v) = a.activation {
        t.activation = v;
    }
    if let Some(v) = a.optimizer {
        t.optimizer = v;
    }
    if let Some(v) = a.learning_rate {
        t.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.weight_decay {
        t.weight_decay = v;
    }
}

fn apply_selection(cfg: &mut Config, a: &SelectionArgs) {
    if let Some(m) = &a.method {
        cfg.select.methods = vec![m.clone()];
    }
    if let Some(k) = a.k {
        cfg.select.k = k;
    }
    match a.fallback {
        Some(FallbackArg::RandomFill) => cfg.select.fallback = Fallback::RandomFill,
        Some(FallbackArg::None) => cfg.select.fallback = Fallback::None,
        None => {}
    }
    if let Some(s) = a.seed {
        cfg.run.seed = s;
    }
}

fn check_positive(cfg: &Config) -> Result<()> {
    ctq_core::retrieval::Bm25Params::new(cfg.retrieval.k1, cfg.retrieval.b).map_err(|e| config_err(e.to_string()))?;
    if cfg.retrieval.shortlist == 0 || cfg.select.k == 0 || cfg.datagen.k == 0 {
        return Err(config_err("shortlist size, k and datagen k must be at least 1"));
    }
    if cfg.llm.max_in_flight == 0 {
        return Err(config_err("max in flight must be at least 1"));
    }
    Ok(())
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.as_os_str().is_empty() {
        Err(config_err(format!("{what} is required (flag or config)")))
    } else {
        Ok(())
    }
}

fn load_db(cfg: &Config) -> Result<ExampleDatabase> {
    require(&cfg.data.db, "--db")?;
    Ok(load_parallel(&cfg.data.db, ParallelFormat::from_path(&cfg.data.db))?
        .with_languages(&cfg.data.src_lang, &cfg.data.tgt_lang))
}

fn load_index(cfg: &Config, saved: Option<&Path>, db: &ExampleDatabase) -> Result<Bm25Index> {
    match saved {
        Some(p) => {
            let index = Bm25Index::load(p)?;
            if index.doc_count() != db.len() {
                return Err(config_err(format!(
                    "index {} covers {} documents but the database has {}",
                    p.display(),
                    index.doc_count(),
                    db.len()
                )));
            }
            Ok(index)
        }
        None => build_index(db, cfg.bm25_params()),
    }
}

fn load_store(cfg: &Config) -> Result<ScoreStore> {
    match &cfg.data.store {
        Some(p) => ScoreStore::load(p),
        None => Ok(ScoreStore::new()),
    }
}

fn load_queries(a: &QueryArgs) -> Result<Vec<String>> {
    let mut out = a.query.clone();
    if let Some(p) = &a.queries {
        out.extend(read_lines(p)?);
    }
    if out.is_empty() {
        return Err(config_err("give --query or --queries"));
    }
    Ok(out)
}

fn impute_policy(missing: MissingPolicy, model: Option<&CtqModel>) -> ImputePolicy {
    match missing {
        MissingPolicy::Strict => ImputePolicy::Strict,
        MissingPolicy::FillDefault => ImputePolicy::FillDefault(model.map(|m| m.norm.mean_vector()).unwrap_or_default()),
    }
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_config_echo(cfg: &Config, out: &Path) -> Result<()> {
    let path = sidecar(out, ".config.toml");
    std::fs::write(&path, cfg.effective_toml()).map_err(|e| Error::io(&path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_lines<I, S>(path: &Path, lines: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut w = create(path)?;
    for l in lines {
        writeln!(w, "{}", l.as_ref()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string(v)?);
    Ok(())
}

fn corpus(mut cfg: Config, a: CorpusArgs) -> Result<()> {
    apply_data(&mut cfg, &a.data);
    if let Some(p) = a.heldout {
        cfg.data.heldout = p;
    }
    if let Some(p) = a.test {
        cfg.data.test = p;
    }
    let db = load_db(&cfg)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    save_jsonl(db.pairs(), &a.out.join("db.jsonl"))?;
    let mut counts = json!({ "db": db.len() });
    for (name, path) in [("heldout", &cfg.data.heldout), ("test", &cfg.data.test)] {
        if path.as_os_str().is_empty() {
            continue;
        }
        let set = load_heldout(path, ParallelFormat::from_path(path), &db)?;
        save_jsonl(set.pairs(), &a.out.join(format!("{name}.jsonl")))?;
        counts[name] = json!(set.len());
    }
    println!("{counts}");
    Ok(())
}

fn index(mut cfg: Config, c: IndexCommand) -> Result<()> {
    match c {
        IndexCommand::Build { data, retrieval, out } => {
            apply_data(&mut cfg, &data);
            apply_retrieval(&mut cfg, &retrieval);
            check_positive(&cfg)?;
            let db = load_db(&cfg)?;
            let index = build_index(&db, cfg.bm25_params())?;
            index.save(&out)?;
            println!(
                "{}",
                json!({ "documents": index.doc_count(), "vocabulary": index.vocabulary_size(), "out": out })
            );
            Ok(())
        }
        IndexCommand::Query { data, retrieval, queries } => {
            apply_data(&mut cfg, &data);
            apply_retrieval(&mut cfg, &retrieval);
            check_positive(&cfg)?;
            let db = load_db(&cfg)?;
            let index = load_index(&cfg, retrieval.index.as_deref(), &db)?;
            for (i, q) in load_queries(&queries)?.iter().enumerate() {
                let mut list = index.shortlist(q, cfg.retrieval.shortlist);
                list.input_id = i;
                print_json(&list)?;
            }
            Ok(())
        }
    }
}

fn features(mut cfg: Config, c: FeaturesCommand) -> Result<()> {
    match c {
        FeaturesCommand::Extract { data, retrieval, store, queries } => {
            apply_data(&mut cfg, &data);
            apply_retrieval(&mut cfg, &retrieval);
            apply_store(&mut cfg, &store);
            check_positive(&cfg)?;
            let db = load_db(&cfg)?;
            let index = load_index(&cfg, retrieval.index.as_deref(), &db)?;
            let scores = load_store(&cfg)?;
            let policy = impute_policy(cfg.data.missing, None);
            for (i, q) in load_queries(&queries)?.iter().enumerate() {
                for c in index.shortlist(q, cfg.retrieval.shortlist).entries {
                    let pair = db.get(c.pair_id).expect("shortlisted ids are in the database");
                    let ex = extract_features(pair, q, &scores, &cfg.features, &policy)?;
                    print_json(&json!({
                        "input_id": i, "pair_id": c.pair_id, "bm25": c.score,
                        "features": ex.vector, "imputed": ex.imputed,
                    }))?;
                }
            }
            Ok(())
        }
        FeaturesCommand::Keys { data, retrieval, queries } => {
            apply_data(&mut cfg, &data);
            apply_retrieval(&mut cfg, &retrieval);
            check_positive(&cfg)?;
            let db = load_db(&cfg)?;
            let index = load_index(&cfg, retrieval.index.as_deref(), &db)?;
            let qs = load_queries(&queries)?;
            for key in enumerate_store_keys(&db, &index, &qs, cfg.retrieval.shortlist, &cfg.features)? {
                print_json(&key)?;
            }
            Ok(())
        }
    }
}

fn datagen(mut cfg: Config, a: DatagenArgs) -> Result<()> {
    apply_data(&mut cfg, &a.data);
    apply_retrieval(&mut cfg, &a.retrieval);
    apply_store(&mut cfg, &a.store);
    apply_llm(&mut cfg, &a.llm);
    if let Some(p) = a.heldout {
        cfg.data.heldout = p;
    }
    if let Some(k) = a.k {
        cfg.datagen.k = k;
    }
    if let Some(m) = a.metric {
        cfg.datagen.metric = m;
    }
    check_positive(&cfg)?;
    require(&cfg.data.heldout, "--heldout")?;
    let spec = cfg.prompt_spec()?;
    let db = load_db(&cfg)?;
    let heldout = load_heldout(&cfg.data.heldout, ParallelFormat::from_path(&cfg.data.heldout), &db)?;
    let index = load_index(&cfg, a.retrieval.index.as_deref(), &db)?;
    let store = load_store(&cfg)?;
    let llm = make_client(&cfg.llm, &spec, &reference_table(&[&heldout]))?;
    let mut run = DatagenRun::new(&heldout, &db, &index, &store, spec);
    run.features = cfg.features.clone();
    run.missing = cfg.data.missing;
    run.metric = match cfg.datagen.metric.as_str() {
        "chrf" => XlateMetric::Chrf,
        path => XlateMetric::load_external(Path::new(path))?,
    };
    run.k = cfg.datagen.k;
    run.max_in_flight = cfg.llm.max_in_flight;
    run.max_new_tokens = cfg.prompt.max_new_tokens;
    run.retries = cfg.datagen.retries;
    run.retry_backoff = cfg.llm.backoff();
    run.max_tombstone_rate = cfg.datagen.max_tombstone_rate;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_config_echo(&cfg, &a.out)?;
    let report = run.generate_to_file(llm.as_ref(), &a.out)?;
    print_json(&report)
}

fn prepared_split(
    data: &Path,
    seed: u64,
) -> Result<(
    Vec<ctq_core::regressor::TrainingInstance>,
    Vec<ctq_core::regressor::TrainingInstance>,
    Vec<ctq_core::regressor::TrainingInstance>,
)> {
    let rows = read_training_file(data)?;
    if rows.is_empty() {
        return Err(Error::EmptyInput(data.display().to_string()));
    }
    let (tr, va, te) = split_811(rows, seed, |r| r.query_id);
    let means = finite_means(&tr);
    Ok((impute(&tr, &means), impute(&va, &means), impute(&te, &means)))
}

fn train_cmd(mut cfg: Config, a: TrainArgs) -> Result<()> {
    apply_hyper(&mut cfg, &a.hyper);
    if let Some(s) = a.seed {
        cfg.run.seed = s;
    }
    let mlp = cfg.train.mlp();
    let tc = cfg.train.train_config(cfg.run.seed);
    mlp.validate().map_err(|e| config_err(e.to_string()))?;
    tc.validate().map_err(|e| config_err(e.to_string()))?;
    let (tr, va, te) = prepared_split(&a.data, cfg.run.seed)?;
    let out = train(&tr, &va, &mlp, &tc)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    out.model.save(&a.out)?;
    write_config_echo(&cfg, &a.out)?;
    let history: Vec<String> = out
        .history
        .iter()
        .map(serde_json::to_string)
        .collect::<std::result::Result<_, _>>()?;
    write_lines(&sidecar(&a.out, ".history.jsonl"), history)?;
    print_json(&json!({
        "train": tr.len(), "val": va.len(), "test": te.len(),
        "best_epoch": out.best_epoch, "val_mse": out.model.meta.final_val_mse,
    }))
}

fn tune(mut cfg: Config, a: TuneArgs) -> Result<()> {
    if let Some(s) = a.seed {
        cfg.run.seed = s;
    }
    if let Some(p) = a.grid {
        cfg.train.grid = Some(p);
    }
    cfg.train.tune = true;
    let grid: GridSpec = match &cfg.train.grid {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", p.display())))?
        }
        None => GridSpec::default(),
    };
    if grid.cardinality() == 0 {
        return Err(config_err("the grid is empty"));
    }
    let (tr, va, _) = prepared_split(&a.data, cfg.run.seed)?;
    let outcome = grid_search(&tr, &va, &grid, cfg.run.seed)?;
    let best = &outcome.best;
    let model = train(&tr, &va, &best.mlp, &best.train)?.model;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    model.save(&a.out)?;
    write_config_echo(&cfg, &a.out)?;
    let lb = sidecar(&a.out, ".leaderboard.jsonl");
    let w = create(&lb)?;
    write_leaderboard(&outcome.leaderboard, w).map_err(|e| Error::io(&lb, e))?;
    print_json(&json!({ "runs": outcome.leaderboard.len(), "best": best }))
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    if a.batch == 0 {
        return Err(config_err("--batch must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed ^ 0x9e37_79b9);
    let activations = match a.activation {
        Some(act) => vec![act],
        None => Activation::ALL.to_vec(),
    };
    let mut failed = Vec::new();
    for act in activations {
        let mlp = MlpConfig::new(a.hidden_layers, a.hidden_width, act);
        mlp.validate().map_err(|e| config_err(e.to_string()))?;
        let batch: Vec<(Vec<f64>, f64)> = (0..a.batch)
            .map(|_| {
                let x = (0..mlp.input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                (x, rng.gen_range(-1.0..1.0))
            })
            .collect();
        let report = grad_check(&mlp, a.weight_decay, &batch, a.seed)?;
        let tolerance = if act == Activation::Relu { RELU_TOLERANCE } else { SMOOTH_TOLERANCE };
        let pass = report.max_relative_error <= tolerance;
        print_json(&json!({ "activation": act.name(), "tolerance": tolerance, "pass": pass, "report": report }))?;
        if !pass {
            failed.push(act.name());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("gradient check failed for {}", failed.join(", "))))
    }
}

fn selection_method(cfg: &Config) -> Method {
    cfg.select.methods.first().cloned().unwrap_or(Method::Ctq)
}

fn load_model(method: &Method, path: Option<&Path>) -> Result<Option<CtqModel>> {
    match (method, path) {
        (Method::Ctq, None) => Err(config_err("method ctq needs --model")),
        (_, Some(p)) => CtqModel::load(p).map(Some),
        (_, None) => Ok(None),
    }
}

fn select(mut cfg: Config, a: SelectArgs) -> Result<()> {
    apply_data(&mut cfg, &a.data);
    apply_retrieval(&mut cfg, &a.retrieval);
    apply_store(&mut cfg, &a.store);
    apply_selection(&mut cfg, &a.selection);
    check_positive(&cfg)?;
    let method = selection_method(&cfg);
    let db = load_db(&cfg)?;
    let index = load_index(&cfg, a.retrieval.index.as_deref(), &db)?;
    let store = load_store(&cfg)?;
    let model = load_model(&method, a.selection.model.as_deref())?;
    let policy = impute_policy(cfg.data.missing, model.as_ref());
    let selector = Selector {
        db: &db,
        features: Some(FeatureSource {
            db: &db,
            store: &store,
            config: &cfg.features,
            policy: &policy,
        }),
        model: model.as_ref(),
    };
    for (i, q) in load_queries(&a.queries)?.iter().enumerate() {
        let mut cands = index.shortlist(q, cfg.retrieval.shortlist);
        cands.input_id = i;
        let seed = ctq_core::pipeline::input_seed(cfg.run.seed, i);
        let mut result = selector.select(&method, &cands, q, cfg.select.k, seed)?;
        if cfg.select.fallback == Fallback::RandomFill {
            random_fill(&mut result, &db, cfg.select.k, seed);
        }
        print_json(&result)?;
    }
    Ok(())
}

fn translate(mut cfg: Config, a: TranslateArgs) -> Result<()> {
    apply_data(&mut cfg, &a.data);
    apply_retrieval(&mut cfg, &a.retrieval);
    apply_store(&mut cfg, &a.store);
    apply_selection(&mut cfg, &a.selection);
    apply_llm(&mut cfg, &a.llm);
    if let Some(b) = a.budget {
        cfg.prompt.token_budget = b;
    }
    if let Some(d) = a.delimiter {
        cfg.prompt.delimiter = d;
    }
    if let Some(o) = a.example_order {
        cfg.select.example_order = o;
    }
    check_positive(&cfg)?;
    let spec = cfg.prompt_spec()?;
    let method = selection_method(&cfg);
    let inputs = read_lines(&a.inputs)?;
    if inputs.is_empty() {
        return Err(Error::EmptyInput(a.inputs.display().to_string()));
    }
    let refs: Vec<(String, String)> = match &a.refs {
        Some(p) => {
            let r = read_lines(p)?;
            if r.len() != inputs.len() {
                return Err(config_err(format!("{} inputs but {} references", inputs.len(), r.len())));
            }
            inputs.iter().cloned().zip(r).collect()
        }
        None => Vec::new(),
    };
    let db = load_db(&cfg)?;
    let index = load_index(&cfg, a.retrieval.index.as_deref(), &db)?;
    let store = load_store(&cfg)?;
    let model = load_model(&method, a.selection.model.as_deref())?;
    let policy = impute_policy(cfg.data.missing, model.as_ref());
    let llm = make_client(&cfg.llm, &spec, &refs)?;
    let translator = Translator {
        db: &db,
        index: &index,
        selector: Selector {
            db: &db,
            features: Some(FeatureSource {
                db: &db,
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
        spec,
        tokenizer: &WhitespaceTokenizer,
        max_new_tokens: cfg.prompt.max_new_tokens,
        max_in_flight: cfg.llm.max_in_flight,
        seed: cfg.run.seed,
    };
    let results = translator.translate(&inputs, llm.as_ref())?;
    write_lines(&a.out, results.iter().map(|r| r.output.replace('\n', " ")))?;
    let prov: Vec<String> = results
        .iter()
        .map(|r| serde_json::to_string(&r.provenance))
        .collect::<std::result::Result<_, _>>()?;
    write_lines(&sidecar(&a.out, ".provenance.jsonl"), prov)?;
    write_config_echo(&cfg, &a.out)?;
    let failed = results.iter().filter(|r| r.provenance.error.is_some()).count();
    print_json(&json!({ "translated": results.len(), "failed": failed, "out": a.out }))
}

fn named_file(spec: &str) -> Result<(String, PathBuf)> {
    match spec.split_once('=') {
        Some((name, file)) if !name.is_empty() && !file.is_empty() => Ok((name.to_string(), PathBuf::from(file))),
        _ => Err(config_err(format!("expected NAME=FILE, got `{spec}`"))),
    }
}

fn evaluate(cfg: Config, a: EvaluateArgs) -> Result<()> {
    let mut runs = Vec::new();
    if !a.hyps.is_empty() {
        let refs_path = a.refs.as_deref().ok_or_else(|| config_err("--hyp needs --refs"))?;
        let refs = read_lines(refs_path)?;
        for spec in &a.hyps {
            let (name, path) = named_file(spec)?;
            let hyps = read_lines(&path)?;
            runs.push(MethodScores {
                method: name,
                scores: corpus_score(&hyps, &refs, &EvalMetric::Chrf)?,
            });
        }
    }
    for spec in &a.scores {
        let (name, path) = named_file(spec)?;
        let metric = EvalMetric::load_external(&path)?;
        let n = match &metric {
            EvalMetric::External(v) => v.len(),
            EvalMetric::Chrf => 0,
        };
        let blank = vec![String::new(); n];
        runs.push(MethodScores {
            method: name,
            scores: corpus_score(&blank, &blank, &metric)?,
        });
    }
    if runs.is_empty() {
        return Err(config_err("give at least one --hyp or --scores"));
    }
    let baseline = match a.baseline {
        Some(b) => b,
        None if runs.iter().any(|r| r.method == cfg.eval.baseline) => cfg.eval.baseline.clone(),
        None => runs[0].method.clone(),
    };
    if !runs.iter().any(|r| r.method == baseline) {
        return Err(config_err(format!("baseline `{baseline}` is not among the evaluated methods")));
    }
    let report = compare_methods(&runs, &baseline)?;
    print!("{}", report.to_text());
    if let Some(p) = a.json {
        let text = serde_json::to_string_pretty(&json!({ "report": report, "methods": runs }))?;
        write_lines(&p, [text])?;
    }
    Ok(())
}

fn run_all_cmd(mut cfg: Config, has_config: bool, a: RunAllArgs) -> Result<()> {
    if !has_config {
        return Err(config_err("run-all needs --config"));
    }
    if let Some(d) = a.run_dir {
        cfg.run.dir = d;
    }
    apply_llm(&mut cfg, &a.llm);
    if let Some(s) = &a.stop_after {
        if !STAGES.contains(&s.as_str()) {
            return Err(config_err(format!("unknown stage `{s}`; expected one of {}", STAGES.join(", "))));
        }
    }
    cfg.validate()?;
    let report = run_all(
        &cfg,
        RunOptions {
            llm: None,
            stop_after: a.stop_after,
        },
    )?;
    for (stage, outcome) in &report.stages {
        eprintln!("{stage}: {outcome:?}");
    }
    if let Some(text) = report.report {
        print!("{text}");
    }
    Ok(())
}
