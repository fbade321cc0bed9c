use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const WORDS: [(&str, &str); 12] = [
    ("the", "le"),
    ("red", "rouge"),
    ("house", "maison"),
    ("small", "petit"),
    ("dog", "chien"),
    ("cat", "chat"),
    ("sleeps", "dort"),
    ("eats", "mange"),
    ("green", "vert"),
    ("garden", "jardin"),
    ("big", "grand"),
    ("car", "voiture"),
];

fn ctq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctq"))
        .args(args)
        .env_remove("CTQ_ENDPOINT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        stdout(o),
        String::from_utf8_lossy(&o.stderr)
    );
}

fn sentence(i: usize, len: usize) -> (String, String) {
    let picks: Vec<usize> = (0..len).map(|j| (i * 7 + j * 5 + i / 3) % WORDS.len()).collect();
    let src: Vec<&str> = picks.iter().map(|&p| WORDS[p].0).collect();
    let tgt: Vec<&str> = picks.iter().map(|&p| WORDS[p].1).collect();
    (format!("{} {i}", src.join(" ")), format!("{} {i}", tgt.join(" ")))
}

fn write_tsv(path: &Path, pairs: &[(String, String)]) {
    let text: String = pairs.iter().map(|(s, t)| format!("{s}\t{t}\n")).collect();
    std::fs::write(path, text).unwrap();
}

struct Fixture {
    db: PathBuf,
    heldout: PathBuf,
    test: PathBuf,
}

fn fixture(dir: &Path) -> Fixture {
    let all: Vec<(String, String)> = (0..90).map(|i| sentence(i, 3 + i % 4)).collect();
    let f = Fixture {
        db: dir.join("db.tsv"),
        heldout: dir.join("heldout.tsv"),
        test: dir.join("test.tsv"),
    };
    write_tsv(&f.db, &all[..60]);
    write_tsv(&f.heldout, &all[60..75]);
    write_tsv(&f.test, &all[75..]);
    f
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let text = format!(
        "[run]\ndir = \"run\"\n\n[data]\ndb = \"db.tsv\"\nheldout = \"heldout.tsv\"\ntest = \"test.tsv\"\n\n\
         [select]\nmethods = [\"bm25\", \"rbm25\", \"random\"]\nrandom_seeds = [1, 2]\n{extra}"
    );
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_states_the_defaults() {
    let o = ctq(&["translate", "--help"]);
    assert_ok(&o);
    let help = stdout(&o);
    for needle in ["[default: 100]", "[default: 4]", "[default: 1000]", "[default: 8]", "[default: ###]"] {
        assert!(help.contains(needle), "translate --help lacks {needle}");
    }
    let top = stdout(&ctq(&["--help"]));
    for sub in ["corpus", "index", "features", "datagen", "train", "tune", "gradcheck", "select", "translate", "evaluate", "run-all"] {
        assert!(top.contains(sub), "--help lacks {sub}");
    }
}

#[test]
fn configuration_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    fixture(tmp.path());
    let typo = write_config(tmp.path(), "kk = 3\n");
    let o = ctq(&["--config", s(&typo), "run-all"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!tmp.path().join("run").exists());

    let bad_method = write_config(tmp.path(), "").to_path_buf();
    let text = std::fs::read_to_string(&bad_method).unwrap().replace("\"rbm25\"", "\"rbm26\"");
    std::fs::write(&bad_method, text).unwrap();
    assert_eq!(ctq(&["--config", s(&bad_method), "run-all"]).status.code(), Some(2));

    assert_eq!(ctq(&["select", "--method", "rbm26", "--query", "x"]).status.code(), Some(2));
    assert_eq!(ctq(&["select", "--method", "bm25", "--query", "x"]).status.code(), Some(2));
    let f = fixture(tmp.path());
    let o = ctq(&["select", "--db", s(&f.db), "--method", "ctq", "--query", "the dog"]);
    assert_eq!(o.status.code(), Some(2), "ctq without a model");
}

#[test]
fn missing_input_file_exits_with_3() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ctq(&["index", "build", "--db", s(&tmp.path().join("nope.tsv")), "--out", s(&tmp.path().join("i"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn run_all_on_a_small_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    fixture(tmp.path());
    let cfg = write_config(tmp.path(), "");
    let o = ctq(&["--config", s(&cfg), "run-all"]);
    assert_ok(&o);
    let report = stdout(&o);
    assert!(report.contains("bm25") && report.contains("rbm25"), "{report}");
    assert!(report.contains("100.0000"), "echo endpoint reproduces references: {report}");
    let run = tmp.path().join("run");
    for f in ["manifest.json", "config.effective.toml", "eval/report.txt", "translate/random-s2.txt"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let again = ctq(&["--config", s(&cfg), "run-all"]);
    assert_ok(&again);
    assert!(String::from_utf8_lossy(&again.stderr).contains("translate: Skipped"));

    let other = tmp.path().join("elsewhere");
    let o = ctq(&["--config", s(&cfg), "run-all", "--run-dir", s(&other), "--stop-after", "prepare"]);
    assert_ok(&o);
    assert!(other.join("prepare/index.bm25").exists());
    assert!(!other.join("translate").exists());
    let o = ctq(&["--config", s(&cfg), "run-all", "--stop-after", "nowhere"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn index_select_translate_evaluate_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let f = fixture(tmp.path());
    let t = tmp.path();

    let corpus = t.join("corpus");
    let o = ctq(&["corpus", "--db", s(&f.db), "--heldout", s(&f.heldout), "--test", s(&f.test), "--out", s(&corpus)]);
    assert_ok(&o);
    let counts: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(counts["db"], 60);
    assert_eq!(counts["test"], 15);
    assert!(corpus.join("heldout.jsonl").exists());

    let index = t.join("db.bm25");
    assert_ok(&ctq(&["index", "build", "--db", s(&f.db), "--out", s(&index)]));
    let o = ctq(&["index", "query", "--db", s(&f.db), "--index", s(&index), "--query", "the red house", "--shortlist-n", "5"]);
    assert_ok(&o);
    let list: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    let entries = list["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 5);
    let scores: Vec<f64> = entries.iter().map(|e| e["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));

    let o = ctq(&["select", "--db", s(&f.db), "--index", s(&index), "--method", "bm25", "--query", "the red house", "--query", "a dog"]);
    assert_ok(&o);
    let lines: Vec<serde_json::Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    for l in &lines {
        assert_eq!(l["chosen"].as_array().unwrap().len(), 4);
    }
    let first_bm25: Vec<u64> = entries.iter().take(4).map(|e| e["pair_id"].as_u64().unwrap()).collect();
    let chosen: Vec<u64> = lines[0]["chosen"].as_array().unwrap().iter().map(|c| c["pair_id"].as_u64().unwrap()).collect();
    assert_eq!(chosen, first_bm25);

    let test: Vec<(String, String)> = std::fs::read_to_string(&f.test)
        .unwrap()
        .lines()
        .map(|l| {
            let (a, b) = l.split_once('\t').unwrap();
            (a.to_string(), b.to_string())
        })
        .collect();
    let inputs = t.join("inputs.txt");
    let refs = t.join("refs.txt");
    std::fs::write(&inputs, test.iter().map(|p| format!("{}\n", p.0)).collect::<String>()).unwrap();
    std::fs::write(&refs, test.iter().map(|p| format!("{}\n", p.1)).collect::<String>()).unwrap();
    let out = t.join("out/rbm25.txt");
    let o = ctq(&[
        "translate", "--db", s(&f.db), "--method", "rbm25", "--inputs", s(&inputs), "--refs", s(&refs),
        "--endpoint", "mock:echo", "--out", s(&out),
    ]);
    assert_ok(&o);
    assert_eq!(std::fs::read_to_string(&out).unwrap(), std::fs::read_to_string(&refs).unwrap());
    let prov = std::fs::read_to_string(t.join("out/rbm25.txt.provenance.jsonl")).unwrap();
    assert_eq!(prov.lines().count(), test.len());
    let echo = std::fs::read_to_string(t.join("out/rbm25.txt.config.toml")).unwrap();
    assert!(echo.contains("rbm25") && echo.contains("token_budget = 1000"));

    let broken = t.join("broken.txt");
    let mut lines: Vec<String> = test.iter().map(|p| p.1.clone()).collect();
    lines[0] = "nothing".into();
    std::fs::write(&broken, lines.join("\n") + "\n").unwrap();
    let json = t.join("report.json");
    let o = ctq(&[
        "evaluate", "--refs", s(&refs), "--hyp", &format!("rbm25={}", s(&out)), "--hyp", &format!("bm25={}", s(&broken)),
        "--json", s(&json),
    ]);
    assert_ok(&o);
    let text = stdout(&o);
    assert!(text.contains("100.0000"), "{text}");
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report["report"]["baseline"], "bm25");
    assert!(report["report"]["rows"][0]["delta"].as_f64().unwrap() > 0.0);
    assert_eq!(ctq(&["evaluate", "--refs", s(&refs), "--hyp", "oops"]).status.code(), Some(2));
}

#[test]
fn datagen_train_and_ctq_selection() {
    let tmp = tempfile::tempdir().unwrap();
    let f = fixture(tmp.path());
    let t = tmp.path();
    let data = t.join("train.csv");
    let o = ctq(&[
        "datagen", "--db", s(&f.db), "--heldout", s(&f.heldout), "--k", "10", "--policy", "fill_default",
        "--endpoint", "mock:echo", "--out", s(&data),
    ]);
    assert_ok(&o);
    let report: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(report["rows"], 150);
    assert!(t.join("train.csv.config.toml").exists());

    let strict = ctq(&["datagen", "--db", s(&f.db), "--heldout", s(&f.heldout), "--k", "10", "--out", s(&t.join("s.csv"))]);
    assert_eq!(strict.status.code(), Some(3), "strict policy with no store");

    let model = t.join("ctq.model");
    let o = ctq(&[
        "train", "--data", s(&data), "--hidden-layers", "2", "--hidden-width", "16", "--epochs", "5", "--seed", "3",
        "--out", s(&model),
    ]);
    assert_ok(&o);
    let history = std::fs::read_to_string(t.join("ctq.model.history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 6);
    let first = std::fs::read(&model).unwrap();
    assert_ok(&ctq(&[
        "train", "--data", s(&data), "--hidden-layers", "2", "--hidden-width", "16", "--epochs", "5", "--seed", "3",
        "--out", s(&model),
    ]));
    assert_eq!(first, std::fs::read(&model).unwrap(), "training is deterministic");

    let o = ctq(&[
        "select", "--db", s(&f.db), "--method", "ctq", "--model", s(&model), "--policy", "fill_default",
        "--query", "the small dog sleeps",
    ]);
    assert_ok(&o);
    let sel: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(sel["method"], "ctq");
    assert_eq!(sel["chosen"].as_array().unwrap().len(), 4);

    let grid = t.join("grid.toml");
    std::fs::write(
        &grid,
        "hidden_layers = [1]\nhidden_width = [8, 16]\nactivation = [\"tanh\"]\nbatch_size = [16]\n\
         learning_rate = [0.01]\nepochs = [3]\noptimizer = [\"adam\"]\nweight_decay = [0.0]\n",
    )
    .unwrap();
    let tuned = t.join("tuned.model");
    let o = ctq(&["tune", "--data", s(&data), "--grid", s(&grid), "--out", s(&tuned)]);
    assert_ok(&o);
    let board = std::fs::read_to_string(t.join("tuned.model.leaderboard.jsonl")).unwrap();
    assert_eq!(board.lines().count(), 2);
    assert!(tuned.exists());
}

#[test]
fn gradcheck_passes_and_reports_each_activation() {
    let o = ctq(&["gradcheck", "--hidden-layers", "2", "--hidden-width", "12", "--weight-decay", "0.01"]);
    assert_ok(&o);
    let lines: Vec<serde_json::Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    assert!(lines.iter().all(|l| l["pass"] == true));
    assert_eq!(ctq(&["gradcheck", "--batch", "0"]).status.code(), Some(2));
}

#[test]
fn endpoint_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let f = fixture(tmp.path());
    let inputs = tmp.path().join("in.txt");
    std::fs::write(&inputs, "the dog\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_ctq"))
        .args(["translate", "--db", s(&f.db), "--method", "bm25", "--inputs", s(&inputs)])
        .args(["--out", s(&tmp.path().join("o.txt"))])
        .env("CTQ_ENDPOINT", "ftp://nowhere")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}
