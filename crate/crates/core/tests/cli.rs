mod common;

use std::path::{Path, PathBuf};

use common::*;
use soup::cli::{default_sidecar_path, run_with};
use soup::pipeline::load_sidecar;
use soup::prelude::*;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn soup(args: &[&str]) -> Run {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("soup").chain(args.iter().copied());
    let code = run_with(argv, &mut out, &mut err);
    Run {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn reviews(file: &str) -> String {
    data_dir()
        .join("reviews")
        .join(file)
        .to_str()
        .unwrap()
        .to_string()
}

fn precompute_reviews(dir: &Path) -> PathBuf {
    let cache = dir.join("pool.emb");
    let mock = reviews("mock.json");
    let pool = reviews("pool.jsonl");
    let run = soup(&[
        "precompute",
        "--task",
        "imdb",
        "--pool",
        &pool,
        "--cache",
        path(&cache),
        "--mock-scorer",
        &mock,
    ]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    cache
}

fn read_report(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn precompute_writes_cache_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let cache = precompute_reviews(dir.path());
    let index = Index::load_cache(&cache).unwrap();
    assert_eq!(index.len(), 3);
    let sidecar = load_sidecar(default_sidecar_path(&cache)).unwrap();
    assert_eq!(sidecar.len(), 3);
    assert_close(sidecar["n1"].distribution.probs(), &[0.7, 0.3], 1e-12);
    assert_eq!(sidecar["n1"].label, BAD);

    let raw = read_report(&default_sidecar_path(&cache));
    assert_eq!(raw["n1"]["label"], 0);
    assert!(raw["n1"]["distribution"].is_array());
}

#[test]
fn precompute_is_byte_identical_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let cache = precompute_reviews(dir.path());
    let first = std::fs::read(&cache).unwrap();
    let first_sidecar = std::fs::read(default_sidecar_path(&cache)).unwrap();
    precompute_reviews(dir.path());
    assert_eq!(std::fs::read(&cache).unwrap(), first);
    assert_eq!(
        std::fs::read(default_sidecar_path(&cache)).unwrap(),
        first_sidecar
    );
}

#[test]
fn unreachable_scorer_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("pool.emb");
    let pool = reviews("pool.jsonl");
    let run = soup(&[
        "precompute",
        "--task",
        "imdb",
        "--pool",
        &pool,
        "--cache",
        path(&cache),
        "--scorer-url",
        "http://127.0.0.1:1",
    ]);
    assert_eq!(run.code, 2, "{}", run.stderr);
    assert!(run.stderr.starts_with("soup: "));
}

#[test]
fn classify_reports_bad() {
    let dir = tempfile::tempdir().unwrap();
    let cache = precompute_reviews(dir.path());
    let report = dir.path().join("report.json");
    let (mock, pool, test) = (
        reviews("mock.json"),
        reviews("pool.jsonl"),
        reviews("test.jsonl"),
    );
    let run = soup(&[
        "classify",
        "--task",
        "imdb",
        "--pool",
        &pool,
        "--test",
        &test,
        "--cache",
        path(&cache),
        "--mock-scorer",
        &mock,
        "--k",
        "2",
        "--out",
        path(&report),
        "--stdout",
    ]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert_eq!(run.stdout, "x\tnegative\n");
    let r = read_report(&report);
    let x = &r["predictions"][0];
    assert_eq!(x["token"], "bad");
    assert_eq!(x["label"], 0);
    assert!((x["distribution"][0].as_f64().unwrap() - 0.8).abs() < 1e-12);
    assert_eq!(x["neighbors"][0]["id"], "n1");
    assert_eq!(x["neighbors"][1]["id"], "n2");
}

#[test]
fn classify_inline_matches_cached() {
    let dir = tempfile::tempdir().unwrap();
    let (mock, pool, test) = (
        reviews("mock.json"),
        reviews("pool.jsonl"),
        reviews("test.jsonl"),
    );
    let run = soup(&[
        "classify",
        "--task",
        "imdb",
        "--pool",
        &pool,
        "--test",
        &test,
        "--mock-scorer",
        &mock,
        "--k",
        "2",
        "--precompute-inline",
    ]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let inline: serde_json::Value = serde_json::from_str(&run.stdout).unwrap();

    let cache = precompute_reviews(dir.path());
    let run = soup(&[
        "classify",
        "--task",
        "imdb",
        "--pool",
        &pool,
        "--test",
        &test,
        "--cache",
        path(&cache),
        "--mock-scorer",
        &mock,
        "--k",
        "2",
    ]);
    let cached: serde_json::Value = serde_json::from_str(&run.stdout).unwrap();
    assert_eq!(inline, cached);
}

#[test]
fn flags_echo_into_report_config() {
    let dir = tempfile::tempdir().unwrap();
    let cache = precompute_reviews(dir.path());
    let report = dir.path().join("report.json");
    let (mock, pool, test) = (
        reviews("mock.json"),
        reviews("pool.jsonl"),
        reviews("test.jsonl"),
    );
    let run = soup(&[
        "classify",
        "--task",
        "imdb",
        "--pool",
        &pool,
        "--test",
        &test,
        "--cache",
        path(&cache),
        "--mock-scorer",
        &mock,
        "--k",
        "50",
        "--strategy",
        "boc",
        "--weighting",
        "uniform",
        "--seed",
        "9",
        "--out",
        path(&report),
    ]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let r = read_report(&report);
    assert_eq!(r["config"]["k"], 50);
    assert_eq!(r["config"]["strategy"], "boc");
    assert_eq!(r["config"]["weighting"], "uniform");
    assert_eq!(r["config"]["example_token_budget"], 120);
    assert_eq!(r["seed"], 9);
    assert_eq!(
        r["predictions"][0]["neighbors"].as_array().unwrap().len(),
        3
    );
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cache = precompute_reviews(dir.path());
    let report = dir.path().join("report.json");
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        format!(
            "task = \"imdb\"\npool = {:?}\ntest = {:?}\ncache = {:?}\nmock_scorer = {:?}\nk = 1\nstrategy = \"concat\"\n",
            reviews("pool.jsonl"),
            reviews("test.jsonl"),
            path(&cache),
            reviews("mock.json"),
        ),
    )
    .unwrap();
    let run = soup(&[
        "classify",
        "--config",
        path(&config),
        "--k",
        "3",
        "--out",
        path(&report),
    ]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let r = read_report(&report);
    assert_eq!(r["config"]["k"], 3);
    assert_eq!(r["config"]["strategy"], "concat");
}

#[test]
fn concat_strategy_is_dispatched() {
    let dir = tempfile::tempdir().unwrap();
    let cache = precompute_reviews(dir.path());
    let (mock, pool, test) = (
        reviews("mock.json"),
        reviews("pool.jsonl"),
        reviews("test.jsonl"),
    );
    let classify = |strategy: &str| {
        let run = soup(&[
            "classify",
            "--task",
            "imdb",
            "--pool",
            &pool,
            "--test",
            &test,
            "--cache",
            path(&cache),
            "--mock-scorer",
            &mock,
            "--k",
            "3",
            "--strategy",
            strategy,
        ]);
        assert_eq!(run.code, 0, "{}", run.stderr);
        serde_json::from_str::<serde_json::Value>(&run.stdout).unwrap()
    };
    let concat = classify("concat");
    assert_eq!(concat["config"]["strategy"], "concat");
    // The three-neighbor concatenation is not in the table, so it scores
    // uniformly and is calibrated to a uniform distribution.
    assert_eq!(
        concat["predictions"][0]["distribution"],
        serde_json::json!([0.5, 0.5])
    );
    let boc = classify("boc");
    assert_ne!(
        boc["predictions"][0]["distribution"],
        concat["predictions"][0]["distribution"]
    );
}

fn write_synthetic(dir: &Path, labelled_test: bool) -> (String, String, String) {
    let syn = synthetic(8, 4);
    let mock = dir.join("mock.json");
    std::fs::write(&mock, serde_json::to_string(&syn.fixture).unwrap()).unwrap();
    let pool = dir.join("pool.jsonl");
    Dataset::new(&imdb(), syn.pool)
        .unwrap()
        .write_jsonl(&pool)
        .unwrap();
    let test = dir.join("test.jsonl");
    let mut examples = syn.test;
    if !labelled_test {
        examples.iter_mut().for_each(|x| x.gold_label = None);
    }
    Dataset::new(&imdb(), examples)
        .unwrap()
        .write_jsonl(&test)
        .unwrap();
    (path(&mock).into(), path(&pool).into(), path(&test).into())
}

#[test]
fn eval_reports_accuracy_and_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let (mock, pool, test) = write_synthetic(dir.path(), true);
    let report = dir.path().join("report.json");
    let run = soup(&[
        "eval",
        "--task",
        "imdb",
        "--pool",
        &pool,
        "--test",
        &test,
        "--mock-scorer",
        &mock,
        "--k",
        "3",
        "--precompute-inline",
        "--baseline",
        "--jobs",
        "4",
        "--out",
        path(&report),
    ]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!(
        run.stdout.contains("accuracy: 1.0000 (n = 4)"),
        "{}",
        run.stdout
    );
    assert!(
        run.stdout.contains("baseline_accuracy: 0.5000"),
        "{}",
        run.stdout
    );
    let r = read_report(&report);
    assert_eq!(r["accuracy"], 1.0);
    assert_eq!(r["baseline_accuracy"], 0.5);
}

#[test]
fn eval_without_baseline_omits_it() {
    let dir = tempfile::tempdir().unwrap();
    let (mock, pool, test) = write_synthetic(dir.path(), true);
    let report = dir.path().join("report.json");
    let run = soup(&[
        "eval",
        "--task",
        "imdb",
        "--pool",
        &pool,
        "--test",
        &test,
        "--mock-scorer",
        &mock,
        "--k",
        "3",
        "--precompute-inline",
        "--out",
        path(&report),
    ]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!(read_report(&report).get("baseline_accuracy").is_none());
}

#[test]
fn eval_without_gold_labels_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let (mock, pool, test) = write_synthetic(dir.path(), false);
    let run = soup(&[
        "eval",
        "--task",
        "imdb",
        "--pool",
        &pool,
        "--test",
        &test,
        "--mock-scorer",
        &mock,
        "--precompute-inline",
    ]);
    assert_eq!(run.code, 3, "{}", run.stderr);
}

#[test]
fn jobs_do_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let (mock, pool, test) = write_synthetic(dir.path(), true);
    let outputs: Vec<String> = ["1", "3"]
        .iter()
        .map(|jobs| {
            let run = soup(&[
                "classify",
                "--task",
                "imdb",
                "--pool",
                &pool,
                "--test",
                &test,
                "--mock-scorer",
                &mock,
                "--k",
                "3",
                "--precompute-inline",
                "--jobs",
                jobs,
            ]);
            assert_eq!(run.code, 0, "{}", run.stderr);
            run.stdout
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
}

fn precompute_iterate_fixture(dir: &Path) -> (PathBuf, String, String) {
    let cache = dir.join("pool.emb");
    let mock = data_dir()
        .join("iterate")
        .join("mock.json")
        .to_str()
        .unwrap()
        .to_string();
    let pool = data_dir()
        .join("iterate")
        .join("pool.jsonl")
        .to_str()
        .unwrap()
        .to_string();
    let run = soup(&[
        "precompute",
        "--task",
        "imdb",
        "--pool",
        &pool,
        "--cache",
        path(&cache),
        "--mock-scorer",
        &mock,
    ]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    (cache, mock, pool)
}

#[test]
fn iterate_zero_leaves_sidecar_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let (cache, mock, pool) = precompute_iterate_fixture(dir.path());
    let sidecar = default_sidecar_path(&cache);
    let before = std::fs::read(&sidecar).unwrap();
    let run = soup(&[
        "iterate",
        "--task",
        "imdb",
        "--pool",
        &pool,
        "--cache",
        path(&cache),
        "--mock-scorer",
        &mock,
        "--k",
        "1",
        "--iterations",
        "0",
    ]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert_eq!(std::fs::read(&sidecar).unwrap(), before);
}

#[test]
fn iterate_matches_hand_trace() {
    let dir = tempfile::tempdir().unwrap();
    let (cache, mock, pool) = precompute_iterate_fixture(dir.path());
    let run = soup(&[
        "iterate",
        "--task",
        "imdb",
        "--pool",
        &pool,
        "--cache",
        path(&cache),
        "--mock-scorer",
        &mock,
        "--k",
        "1",
        "--iterations",
        "2",
    ]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert_eq!(
        run.stderr,
        "iteration 1: 2/2 labels changed\niteration 2: 2/2 labels changed\n"
    );
    let sidecar = load_sidecar(default_sidecar_path(&cache)).unwrap();
    let half = [0.5, 0.5];
    assert_eq!(
        sidecar["a"].distribution.probs(),
        calibrated(&[0.25, 0.75], &half).as_slice()
    );
    assert_eq!(sidecar["a"].label, GOOD);
    assert_eq!(
        sidecar["b"].distribution.probs(),
        calibrated(&[0.8, 0.2], &half).as_slice()
    );
    assert_eq!(sidecar["b"].label, BAD);
}

#[test]
fn iterate_rejects_similarity_weighting() {
    let dir = tempfile::tempdir().unwrap();
    let (cache, mock, pool) = precompute_iterate_fixture(dir.path());
    let run = soup(&[
        "iterate",
        "--task",
        "imdb",
        "--pool",
        &pool,
        "--cache",
        path(&cache),
        "--mock-scorer",
        &mock,
        "--weighting",
        "similarity",
    ]);
    assert_eq!(run.code, 1);
}

#[test]
fn usage_errors() {
    assert_eq!(soup(&["classify", "--strategy", "nope"]).code, 1);
    assert_eq!(soup(&["bogus"]).code, 1);
    assert_eq!(soup(&["--help"]).code, 0);
    let mock = reviews("mock.json");
    let run = soup(&["classify", "--task", "imdb", "--mock-scorer", &mock]);
    assert_eq!(run.code, 1);
    assert!(run.stderr.contains("--test is required"), "{}", run.stderr);
    let run = soup(&["classify", "--task", "imdb"]);
    assert_eq!(run.code, 1);
    assert!(run.stderr.contains("SOUP_SCORER_URL"), "{}", run.stderr);
}

#[test]
fn task_files_are_accepted() {
    let task = data_dir().join("sample_task.toml");
    let dir = tempfile::tempdir().unwrap();
    let pool = dir.path().join("pool.jsonl");
    std::fs::write(&pool, "{\"id\": \"a\", \"text\": \"Crash on save.\"}\n{\"id\": \"b\", \"text\": \"Add dark mode.\"}\n").unwrap();
    let cache = dir.path().join("pool.emb");
    let mock = dir.path().join("mock.json");
    std::fs::write(&mock, "{}").unwrap();
    let run = soup(&[
        "precompute",
        "--task",
        path(&task),
        "--pool",
        path(&pool),
        "--cache",
        path(&cache),
        "--mock-scorer",
        path(&mock),
    ]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert_eq!(Index::load_cache(&cache).unwrap().len(), 2);
}
