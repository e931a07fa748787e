//! `soup precompute | classify | eval | iterate`.
//!
//! Every flag can also come from a TOML file passed with `--config`; flags
//! given on the command line win. Exit codes: 0 success, 1 general failure,
//! 2 scorer or encoder unreachable, 3 evaluation data without gold labels.

use std::collections::HashMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::data::{accuracy, load_jsonl, subsample, Dataset};
use crate::error::{Result, SoupError};
use crate::index::Index;
use crate::pipeline::{
    load_sidecar, save_sidecar, RunReport, Soup, SoupConfig, Strategy, UnlabeledPool, DEFAULT_CAP,
    DEFAULT_ITERATIONS, DEFAULT_TOKEN_BUDGET,
};
use crate::priming::WeightingKind;
use crate::scorer::{Encoder, HttpScorer, MockFixture, Scorer};
use crate::task::{LabelId, TaskConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_SCORER_UNREACHABLE: i32 = 2;
pub const EXIT_NO_GOLD_LABELS: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "soup",
    version,
    about = "Classify text with self-labeled unlabeled neighbors"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Embed and self-label the unlabeled pool; write the embedding cache
    /// and the self-prediction sidecar.
    Precompute(RunArgs),
    /// Classify a dataset and write a prediction report.
    Classify(RunArgs),
    /// Classify a labeled dataset and report accuracy.
    Eval(RunArgs),
    /// Refine the pool's self-predictions by reclassifying it against itself.
    Iterate(RunArgs),
}

#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunArgs {
    /// TOML file with default values for any of these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Built-in task name (imdb, yelp, agnews, yahoo) or a task TOML file.
    #[arg(long)]
    pub task: Option<String>,
    /// Unlabeled pool, JSONL.
    #[arg(long)]
    pub pool: Option<PathBuf>,
    /// Examples to classify, JSONL.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Embedding cache file.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Self-prediction JSON; defaults to `<cache>.selfpred.json`.
    #[arg(long)]
    pub sidecar: Option<PathBuf>,
    /// Report output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub strategy: Option<Strategy>,
    #[arg(long)]
    pub weighting: Option<WeightingKind>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Per-example token budget.
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub pool_cap: Option<usize>,
    #[arg(long)]
    pub test_cap: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Inference service URL; falls back to $SOUP_SCORER_URL.
    #[arg(long)]
    pub scorer_url: Option<String>,
    /// Mock scorer/encoder fixture (JSON) for model-free runs.
    #[arg(long)]
    pub mock_scorer: Option<PathBuf>,
    /// Also compute the prompt-only baseline.
    #[arg(long)]
    #[serde(skip)]
    pub baseline: bool,
    /// Concurrent classifications.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Print one `id<TAB>label` line per example.
    #[arg(long)]
    #[serde(skip)]
    pub stdout: bool,
    /// Build the pool in memory instead of reading the cache.
    #[arg(long)]
    #[serde(skip)]
    pub precompute_inline: bool,
}

impl RunArgs {
    /// Fill unset flags from the `--config` file.
    pub fn resolve(mut self) -> Result<Self> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let raw = std::fs::read_to_string(&path)?;
        let file: RunArgs = toml::from_str(&raw)
            .map_err(|e| SoupError::Config(format!("{}: {e}", path.display())))?;
        macro_rules! fill {
            ($($field:ident),*) => {$(
                if self.$field.is_none() {
                    self.$field = file.$field;
                }
            )*};
        }
        fill!(
            task,
            pool,
            test,
            cache,
            sidecar,
            out,
            k,
            strategy,
            weighting,
            iterations,
            budget,
            pool_cap,
            test_cap,
            seed,
            scorer_url,
            mock_scorer,
            jobs
        );
        Ok(self)
    }

    pub fn soup_config(&self, task: &TaskConfig) -> SoupConfig {
        SoupConfig {
            task: task.name().to_string(),
            k: self.k.unwrap_or(10),
            strategy: self.strategy.unwrap_or_default(),
            weighting: self.weighting.unwrap_or_default(),
            iterations: self.iterations.unwrap_or(DEFAULT_ITERATIONS),
            example_token_budget: Some(self.budget.unwrap_or(DEFAULT_TOKEN_BUDGET)),
            pool_cap: self.pool_cap.unwrap_or(DEFAULT_CAP),
            test_cap: self.test_cap.unwrap_or(DEFAULT_CAP),
            seed: self.seed.unwrap_or(42),
        }
    }

    fn require<'a, T>(&self, value: &'a Option<T>, flag: &str) -> Result<&'a T> {
        value
            .as_ref()
            .ok_or_else(|| SoupError::Config(format!("--{flag} is required")))
    }

    fn sidecar_path(&self) -> Result<PathBuf> {
        if let Some(p) = &self.sidecar {
            return Ok(p.clone());
        }
        let cache = self.require(&self.cache, "cache")?;
        Ok(default_sidecar_path(cache))
    }
}

/// `<cache>.selfpred.json`
pub fn default_sidecar_path(cache: &Path) -> PathBuf {
    let mut name = cache.as_os_str().to_owned();
    name.push(".selfpred.json");
    PathBuf::from(name)
}

type DynSoup = Soup<Box<dyn Scorer>, Box<dyn Encoder>>;

fn backend(args: &RunArgs) -> Result<(Box<dyn Scorer>, Box<dyn Encoder>)> {
    if let Some(path) = &args.mock_scorer {
        let (scorer, encoder) = MockFixture::from_json_file(path)?.build()?;
        return Ok((Box::new(scorer), Box::new(encoder)));
    }
    let http = HttpScorer::from_config(args.scorer_url.as_deref())?;
    Ok((Box::new(http.clone()), Box::new(http)))
}

fn build_soup(args: &RunArgs) -> Result<DynSoup> {
    let task = TaskConfig::resolve(args.require(&args.task, "task")?)?;
    let config = args.soup_config(&task);
    let (scorer, encoder) = backend(args)?;
    Soup::new(scorer, encoder, task, config)
}

fn thread_pool(args: &RunArgs) -> Result<rayon::ThreadPool> {
    let jobs = args.jobs.unwrap_or(1);
    if jobs == 0 {
        return Err(SoupError::Config("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| SoupError::Config(format!("thread pool: {e}")))
}

fn load_pool(soup: &DynSoup, args: &RunArgs) -> Result<UnlabeledPool> {
    let pool_path = args.require(&args.pool, "pool")?;
    let dataset = load_jsonl(pool_path, soup.task())?;
    if args.precompute_inline {
        return soup.precompute_pool(&dataset.examples);
    }
    let index = Index::load_cache(args.require(&args.cache, "cache")?)?;
    let predictions = load_sidecar(args.sidecar_path()?)?;
    let examples = dataset
        .examples
        .into_iter()
        .filter(|x| index.contains(&x.id))
        .collect::<Vec<_>>();
    UnlabeledPool::new(examples, index, predictions)
}

fn load_test(soup: &DynSoup, args: &RunArgs) -> Result<Dataset> {
    let ds = load_jsonl(args.require(&args.test, "test")?, soup.task())?;
    subsample(&ds, soup.config().test_cap, soup.config().seed)
}

fn cmd_precompute(args: &RunArgs, _out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let soup = build_soup(args)?;
    let cache = args.require(&args.cache, "cache")?.clone();
    let dataset = load_jsonl(args.require(&args.pool, "pool")?, soup.task())?;
    let pool = thread_pool(args)?.install(|| soup.precompute_pool(&dataset.examples))?;
    pool.index().save_cache(&cache)?;
    let sidecar = args.sidecar_path()?;
    pool.save_sidecar(&sidecar)?;
    writeln!(
        err,
        "precomputed {} pool examples -> {} (+ {})",
        pool.len(),
        cache.display(),
        sidecar.display()
    )?;
    Ok(EXIT_OK)
}

fn classify_report(soup: &DynSoup, args: &RunArgs, test: &Dataset) -> Result<RunReport> {
    let pool = load_pool(soup, args)?;
    let results = thread_pool(args)?.install(|| soup.classify_all(&pool, &test.examples))?;
    let mut report = RunReport::new(soup.task(), soup.config(), &test.examples, &results);
    if args.baseline {
        let preds = thread_pool(args)?.install(|| {
            use rayon::prelude::*;
            test.examples
                .par_iter()
                .map(|x| Ok((x.id.clone(), soup.prompt_only(x)?.label)))
                .collect::<Result<HashMap<String, LabelId>>>()
        })?;
        if test.has_gold_labels() {
            report.baseline_accuracy = Some(accuracy(&preds, test)?);
        }
    }
    Ok(report)
}

fn print_labels(report: &RunReport, out: &mut dyn Write) -> Result<()> {
    for p in &report.predictions {
        writeln!(out, "{}\t{}", p.id, p.label_name)?;
    }
    Ok(())
}

fn cmd_classify(args: &RunArgs, out: &mut dyn Write, _err: &mut dyn Write) -> Result<i32> {
    let soup = build_soup(args)?;
    let test = load_test(&soup, args)?;
    let report = classify_report(&soup, args, &test)?;
    if let Some(path) = &args.out {
        report.write(path)?;
    }
    if args.stdout {
        print_labels(&report, out)?;
    } else if args.out.is_none() {
        serde_json::to_writer_pretty(&mut *out, &report).map_err(std::io::Error::from)?;
        writeln!(out)?;
    }
    Ok(EXIT_OK)
}

fn cmd_eval(args: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let soup = build_soup(args)?;
    let test = load_test(&soup, args)?;
    if test.is_empty() || !test.has_gold_labels() {
        writeln!(
            err,
            "soup: evaluation data must carry a gold label on every example"
        )?;
        return Ok(EXIT_NO_GOLD_LABELS);
    }
    let report = classify_report(&soup, args, &test)?;
    if let Some(path) = &args.out {
        report.write(path)?;
    }
    if args.stdout {
        print_labels(&report, out)?;
    }
    let acc = report
        .accuracy
        .ok_or_else(|| SoupError::Evaluation("accuracy unavailable".into()))?;
    writeln!(out, "accuracy: {acc:.4} (n = {})", report.n)?;
    if let Some(b) = report.baseline_accuracy {
        writeln!(out, "baseline_accuracy: {b:.4}")?;
    }
    Ok(EXIT_OK)
}

fn cmd_iterate(args: &RunArgs, _out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let soup = build_soup(args)?;
    let pool = load_pool(&soup, args)?;
    let sidecar = args.sidecar_path()?;
    let total = pool.len();
    let outcome = thread_pool(args)?.install(|| soup.iterative_soup(pool))?;
    for (i, changed) in outcome.label_changes.iter().enumerate() {
        writeln!(err, "iteration {}: {changed}/{total} labels changed", i + 1)?;
    }
    save_sidecar(outcome.pool.self_predictions(), &sidecar)?;
    Ok(EXIT_OK)
}

type CommandFn = fn(&RunArgs, &mut dyn Write, &mut dyn Write) -> Result<i32>;

fn exit_code(e: &SoupError) -> i32 {
    match e {
        SoupError::Transport(_) => EXIT_SCORER_UNREACHABLE,
        _ => EXIT_FAILURE,
    }
}

/// Parse `argv` and run, writing to the given streams. Returns the exit code.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() {
                EXIT_FAILURE
            } else {
                EXIT_OK
            };
        }
    };
    let (cmd, args): (CommandFn, RunArgs) = match cli.command {
        Command::Precompute(a) => (cmd_precompute, a),
        Command::Classify(a) => (cmd_classify, a),
        Command::Eval(a) => (cmd_eval, a),
        Command::Iterate(a) => (cmd_iterate, a),
    };
    let result = args.resolve().and_then(|args| cmd(&args, out, err));
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "soup: {e}");
            exit_code(&e)
        }
    }
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}
