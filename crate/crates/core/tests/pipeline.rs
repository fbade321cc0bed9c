mod common;

use std::time::Instant;

use ctq_core::corpus::{load_parallel, read_lines, ParallelFormat};
use ctq_core::pipeline::{run_all, Config, Provenance, RunOptions, StageOutcome};
use ctq_core::Error;

fn outcomes(r: &ctq_core::pipeline::RunReport) -> Vec<(&str, StageOutcome)> {
    r.stages.iter().map(|(n, o)| (n.as_str(), *o)).collect()
}

#[test]
fn run_all_is_deterministic_and_fast() {
    let tmp = tempfile::tempdir().unwrap();
    let world = common::tiny_world(tmp.path(), 5);
    let mut cfg = Config::load(&world.config).unwrap();
    let start = Instant::now();
    cfg.run.dir = tmp.path().join("run_a");
    let a = run_all(&cfg, RunOptions::default()).unwrap();
    cfg.run.dir = tmp.path().join("run_b");
    run_all(&cfg, RunOptions::default()).unwrap();
    assert!(start.elapsed().as_secs() < 60, "two runs took {:?}", start.elapsed());
    assert!(a.stages.iter().all(|(_, o)| *o == StageOutcome::Ran));

    let sa = common::snapshot(&tmp.path().join("run_a"));
    let sb = common::snapshot(&tmp.path().join("run_b"));
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (k, v) in &sa {
        assert!(v == &sb[k], "{k} differs between runs");
    }
    for f in ["config.effective.toml", "model/ctq.model", "datagen/train.csv", "eval/report.txt", "translate/random-s3.txt"] {
        assert!(sa.contains_key(f), "missing {f}");
    }
    assert!(a.report.unwrap().contains("scavg:labse_in_src,ppl_src_tgt"));
}

#[test]
fn echo_endpoint_translations_equal_references() {
    let tmp = tempfile::tempdir().unwrap();
    let world = common::tiny_world(tmp.path(), 6);
    let cfg = Config::load(&world.config).unwrap();
    run_all(&cfg, RunOptions::default()).unwrap();
    let test = load_parallel(&tmp.path().join("test.tsv"), ParallelFormat::Tsv).unwrap();
    let refs: Vec<String> = test.pairs().iter().map(|p| p.target.clone()).collect();
    for stem in ["ctq", "bm25", "rbm25", "random-s1", "feat_labse_in_src"] {
        let hyps = read_lines(&cfg.run.dir.join(format!("translate/{stem}.txt"))).unwrap();
        assert_eq!(hyps, refs, "{stem}");
        let prov = read_lines(&cfg.run.dir.join(format!("translate/{stem}.provenance.jsonl"))).unwrap();
        for line in prov {
            let p: Provenance = serde_json::from_str(&line).unwrap();
            assert_eq!(p.chosen.len(), 4);
            assert!(p.error.is_none());
        }
    }
    let report = std::fs::read_to_string(cfg.run.dir.join("eval/report.txt")).unwrap();
    assert!(report.contains("100.0000"));
}

#[test]
fn interrupted_run_resumes_from_translate() {
    let tmp = tempfile::tempdir().unwrap();
    let world = common::tiny_world(tmp.path(), 8);
    let cfg = Config::load(&world.config).unwrap();
    let first = run_all(
        &cfg,
        RunOptions {
            stop_after: Some("train".into()),
            ..RunOptions::default()
        },
    )
    .unwrap();
    assert_eq!(first.stages.len(), 3);
    let second = run_all(&cfg, RunOptions::default()).unwrap();
    assert_eq!(
        outcomes(&second),
        vec![
            ("prepare", StageOutcome::Skipped),
            ("datagen", StageOutcome::Skipped),
            ("train", StageOutcome::Skipped),
            ("translate", StageOutcome::Ran),
            ("evaluate", StageOutcome::Ran),
        ]
    );
    // a damaged output forces its stage and everything downstream to rerun
    std::fs::write(cfg.run.dir.join("translate/bm25.txt"), "tampered\n").unwrap();
    let third = run_all(&cfg, RunOptions::default()).unwrap();
    assert_eq!(third.stages[2].1, StageOutcome::Skipped);
    assert_eq!(third.stages[3].1, StageOutcome::Ran);
    let fourth = run_all(&cfg, RunOptions::default()).unwrap();
    assert!(fourth.stages.iter().all(|(_, o)| *o == StageOutcome::Skipped));
}

#[test]
fn unknown_method_fails_before_any_work() {
    let tmp = tempfile::tempdir().unwrap();
    let world = common::tiny_world(tmp.path(), 9);
    let text = std::fs::read_to_string(&world.config)
        .unwrap()
        .replace("\"rbm25\"", "\"rbm26\"");
    std::fs::write(&world.config, text).unwrap();
    let err = Config::load(&world.config).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    assert!(!tmp.path().join("run").exists());
}

#[test]
fn stage_failures_name_the_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let world = common::tiny_world(tmp.path(), 10);
    let mut cfg = Config::load(&world.config).unwrap();
    cfg.data.store = None;
    let err = run_all(&cfg, RunOptions::default()).unwrap_err();
    match err {
        Error::Stage { stage, message } => {
            assert_eq!(stage, "datagen");
            assert!(message.contains("missing score store entries"), "{message}");
            assert!(message.contains("resume"));
        }
        other => panic!("unexpected {other}"),
    }
}
