//! The `ldta` command line: `train`, `infer`, `eval` and `generate`.
//!
//! Exit codes: 0 success, 2 usage, 3 unreadable or malformed input,
//! 4 numerical failure, 5 training stopped at the iteration cap.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ldta_core::dtree::{make_beta_liouville_prior, make_dirichlet_prior, make_generalized_dirichlet_prior};
use ldta_core::ep::{ep_infer_document, fit_ep, EPConfig};
use ldta_core::eval::{coherence_umass, diversity, perplexity, top_words};
use ldta_core::mfvi::{e_step_document, fit_vi, EStepConfig, FitConfig};
use ldta_core::model::{generate_corpus, random_word_topic, GenerationConfig};
use ldta_core::{Corpus, DTParams, DocRunner, ModelParams};

use crate::error::{exit, CliError, CliResult};
use crate::formats::{format_uci, read_corpus, read_tree_spec, vocab_checksum, write_text};
use crate::model_file::{ModelFile, TrainingMetadata};
use crate::runner::RayonRunner;

#[derive(Debug, Parser)]
#[command(name = "ldta", version, about = "Latent Dirichlet-Tree Allocation topic models")]
pub struct Cli {
    /// Worker threads for per-document inference (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model to a corpus.
    Train(TrainArgs),
    /// Per-document posteriors under a saved model.
    Infer(InferArgs),
    /// Held-out perplexity, coherence and diversity.
    Eval(EvalArgs),
    /// Sample a synthetic corpus.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PriorFamily {
    Dirichlet,
    /// Beta-Liouville.
    Bl,
    /// Generalized Dirichlet.
    Gd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    Vi,
    Ep,
}

impl Backend {
    fn name(self) -> &'static str {
        match self {
            Backend::Vi => "vi",
            Backend::Ep => "ep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Perplexity,
    Coherence,
    Diversity,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// UCI bag-of-words corpus.
    #[arg(long)]
    pub corpus: PathBuf,
    /// One token per line, line i naming word i.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PriorArgs {
    /// Prior family with all parameters 1.0; needs --topics.
    #[arg(long, conflicts_with = "tree")]
    pub prior: Option<PriorFamily>,
    /// Tree spec file (`child parent [xi=<float>]` per line).
    #[arg(long)]
    pub tree: Option<PathBuf>,
    /// Number of topics for --prior.
    #[arg(long)]
    pub topics: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InferenceArgs {
    #[arg(long, value_enum, default_value = "vi")]
    pub inference: Backend,
    /// EP damping in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub damping: f64,
    /// Rescale EP transition columns to sum to one after every update.
    #[arg(long)]
    pub normalize_columns: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub prior: PriorArgs,
    #[command(flatten)]
    pub inference: InferenceArgs,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    /// Relative objective change that ends training.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Keep the prior parameters at their initial values.
    #[arg(long)]
    pub fixed_prior: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-iteration CSV (default: `<out>.trace.csv`).
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub inference: InferenceArgs,
    /// CSV destination (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub inference: InferenceArgs,
    #[arg(long, value_enum, value_delimiter = ',', default_values = ["perplexity", "coherence", "diversity"])]
    pub metrics: Vec<Metric>,
    /// Top words per topic for coherence and diversity.
    #[arg(long, default_value_t = ldta_core::eval::DEFAULT_TOP_WORDS)]
    pub top_n: usize,
    /// Per-topic CSV table.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Model file to sample from; otherwise --prior/--tree with random topics.
    #[arg(long, conflicts_with_all = ["prior", "tree"])]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub prior: PriorArgs,
    /// Vocabulary size for random topics.
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub docs: usize,
    /// Poisson mean of document length.
    #[arg(long, default_value_t = 100.0)]
    pub mean_length: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// UCI corpus to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Latent CSV (default: `<out>.latent.csv`).
    #[arg(long)]
    pub latent: Option<PathBuf>,
    /// Also save the generating model here.
    #[arg(long)]
    pub save_model: Option<PathBuf>,
}

/// Parses `args` and runs the command, writing reports to `out` and
/// diagnostics to `err`. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { exit::USAGE } else { exit::OK };
        }
    };
    match execute(cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> CliResult<u8> {
    if cli.threads == Some(0) {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    let runner = RayonRunner::new(cli.threads).map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    match cli.command {
        Command::Train(a) => train(&a, &runner, out),
        Command::Infer(a) => infer(&a, &runner, out),
        Command::Eval(a) => eval(&a, &runner, out),
        Command::Generate(a) => generate(&a, out),
    }
}

fn stdout_err(e: std::io::Error) -> CliError {
    CliError::io("<stdout>", e)
}

fn build_prior(args: &PriorArgs) -> CliResult<DTParams> {
    match (&args.prior, &args.tree) {
        (Some(_), Some(_)) => Err(CliError::Usage("--prior and --tree are mutually exclusive".into())),
        (None, None) => Err(CliError::Usage("one of --prior or --tree is required".into())),
        (None, Some(path)) => {
            if args.topics.is_some() {
                return Err(CliError::Usage("--topics only applies to --prior; the tree fixes K".into()));
            }
            read_tree_spec(path)
        }
        (Some(family), None) => {
            let k = args
                .topics
                .ok_or_else(|| CliError::Usage("--prior needs --topics".into()))?;
            if k < 2 {
                return Err(CliError::Usage("--topics must be at least 2".into()));
            }
            let built = match family {
                PriorFamily::Dirichlet => make_dirichlet_prior(k, &vec![1.0; k]),
                PriorFamily::Bl => make_beta_liouville_prior(k, 1.0, 1.0, &vec![1.0; k - 1]),
                PriorFamily::Gd => make_generalized_dirichlet_prior(k, &vec![1.0; k - 1], &vec![1.0; k - 1]),
            };
            built.map_err(|e| CliError::Usage(format!("--prior {family:?} with {k} topics: {e}")))
        }
    }
}

fn ep_config(args: &InferenceArgs) -> CliResult<EPConfig> {
    if !(args.damping > 0.0 && args.damping <= 1.0) {
        return Err(CliError::Usage(format!("--damping must lie in (0, 1], got {}", args.damping)));
    }
    Ok(EPConfig {
        damping: args.damping,
        normalize: args.normalize_columns,
        ..EPConfig::default()
    })
}

fn train(a: &TrainArgs, runner: &RayonRunner, out: &mut dyn Write) -> CliResult<u8> {
    if !(a.tol > 0.0) {
        return Err(CliError::Usage(format!("--tol must be positive, got {}", a.tol)));
    }
    if a.max_iters == 0 {
        return Err(CliError::Usage("--max-iters must be at least 1".into()));
    }
    let ep = ep_config(&a.inference)?;
    let prior = build_prior(&a.prior)?;
    let corpus = read_corpus(&a.corpus.corpus, a.corpus.vocab.as_deref())?;
    let k = prior.topology().leaf_count();
    let init = ModelParams::new(prior, random_word_topic(corpus.vocab_size(), k, a.seed))?;
    let cfg = FitConfig {
        max_iters: a.max_iters,
        tol: a.tol,
        seed: a.seed,
        learn_prior: !a.fixed_prior,
        ..FitConfig::default()
    };

    let start = Instant::now();
    let mut trace = String::from("iter,objective,seconds\n");
    let mut observer = |iter: usize, objective: f64| {
        let secs = start.elapsed().as_secs_f64();
        log::info!("iteration {iter}: objective {objective}");
        writeln!(trace, "{iter},{objective},{secs}").expect("writing to a String");
    };
    let (params, mut report) = match a.inference.inference {
        Backend::Vi => {
            let fit = fit_vi(&corpus, init, &cfg, runner, &mut observer)?;
            (fit.params, fit.report)
        }
        Backend::Ep => {
            let fit = fit_ep(&corpus, init, &cfg, &ep, runner, &mut observer)?;
            (fit.params, fit.report)
        }
    };
    report.wall_time = start.elapsed();

    let objective = report.objective_trace.last().copied().unwrap_or(f64::NAN);
    let meta = TrainingMetadata {
        backend: a.inference.inference.name().into(),
        iterations: report.iterations,
        converged: report.converged,
        objective,
        seed: a.seed,
    };
    ModelFile::from_params(&params, corpus.vocab().map(vocab_checksum), Some(meta)).save(&a.out)?;
    let trace_path = a.trace.clone().unwrap_or_else(|| suffixed(&a.out, ".trace.csv"));
    write_text(&trace_path, &trace)?;

    writeln!(
        out,
        "{} after {} iterations in {:.3}s; objective {objective}",
        if report.converged { "converged" } else { "stopped at the iteration cap" },
        report.iterations,
        report.wall_time.as_secs_f64()
    )
    .map_err(stdout_err)?;
    if report.prior_failures > 0 {
        log::warn!("{} prior updates failed and kept the previous prior", report.prior_failures);
    }
    Ok(if report.converged { exit::OK } else { exit::NOT_CONVERGED })
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Model plus a corpus checked against it.
fn load_model_and_corpus(model: &Path, corpus: &CorpusArgs) -> CliResult<(ModelParams, Corpus)> {
    let file = ModelFile::load(model)?;
    let params = file.to_params()?;
    let corpus = read_corpus(&corpus.corpus, corpus.vocab.as_deref())?;
    if corpus.vocab_size() != params.vocab_size() {
        return Err(CliError::Input(format!(
            "corpus has {} words but the model has {}",
            corpus.vocab_size(),
            params.vocab_size()
        )));
    }
    if let (Some(expected), Some(vocab)) = (&file.vocab_sha256, corpus.vocab()) {
        if *expected != vocab_checksum(vocab) {
            return Err(CliError::Input("vocabulary differs from the one the model was trained with".into()));
        }
    }
    Ok((params, corpus))
}

/// Per-document posterior plus its objective (ELBO or log evidence).
struct DocPosterior {
    zeta: DTParams,
    objective: f64,
    converged: bool,
}

fn posteriors(params: &ModelParams, corpus: &Corpus, args: &InferenceArgs, runner: &RayonRunner) -> CliResult<Vec<DocPosterior>> {
    let ep = ep_config(args)?;
    let results: Vec<ldta_core::Result<DocPosterior>> = runner.map_docs(corpus.len(), |m| {
        let doc = &corpus.docs()[m];
        match args.inference {
            Backend::Vi => e_step_document(params, doc, None, &EStepConfig::default()).map(|s| DocPosterior {
                zeta: s.zeta,
                objective: s.elbo,
                converged: s.converged,
            }),
            Backend::Ep => ep_infer_document(params, doc, None, &ep).map(|s| DocPosterior {
                zeta: s.zeta,
                objective: s.log_evidence,
                converged: s.converged,
            }),
        }
    });
    let posts: Vec<DocPosterior> = results.into_iter().collect::<ldta_core::Result<_>>()?;
    let stuck = posts.iter().filter(|p| !p.converged).count();
    if stuck > 0 {
        log::warn!("{stuck} documents hit the inference iteration cap");
    }
    Ok(posts)
}

fn infer(a: &InferArgs, runner: &RayonRunner, out: &mut dyn Write) -> CliResult<u8> {
    let (params, corpus) = load_model_and_corpus(&a.model, &a.corpus)?;
    let posts = posteriors(&params, &corpus, &a.inference, runner)?;
    let topo = params.prior.topology();
    let mut csv = String::from("doc,");
    csv.push_str(match a.inference.inference {
        Backend::Vi => "elbo",
        Backend::Ep => "log_evidence",
    });
    for d in 0..topo.branch_count() {
        write!(csv, ",zeta_{}", topo.name(topo.branch_node(d))).expect("writing to a String");
    }
    for &leaf in topo.leaves() {
        write!(csv, ",theta_{}", topo.name(leaf)).expect("writing to a String");
    }
    csv.push('\n');
    for (m, p) in posts.iter().enumerate() {
        write!(csv, "{},{}", m + 1, p.objective).expect("writing to a String");
        for x in p.zeta.xi().iter().chain(&p.zeta.expected_theta()) {
            write!(csv, ",{x}").expect("writing to a String");
        }
        csv.push('\n');
    }
    match &a.out {
        Some(path) => write_text(path, &csv)?,
        None => out.write_all(csv.as_bytes()).map_err(stdout_err)?,
    }
    Ok(exit::OK)
}

fn eval(a: &EvalArgs, runner: &RayonRunner, out: &mut dyn Write) -> CliResult<u8> {
    let (params, corpus) = load_model_and_corpus(&a.model, &a.corpus)?;
    if a.top_n == 0 || a.top_n > params.vocab_size() {
        return Err(CliError::Usage(format!("--top-n must lie in 1..={}", params.vocab_size())));
    }
    let mut report = String::new();
    let wants = |m: Metric| a.metrics.contains(&m);
    if wants(Metric::Perplexity) {
        let posts = posteriors(&params, &corpus, &a.inference, runner)?;
        let zetas: Vec<DTParams> = posts.into_iter().map(|p| p.zeta).collect();
        writeln!(report, "perplexity={}", perplexity(&params, &zetas, &corpus)?).expect("writing to a String");
    }
    let coherence = coherence_umass(&params.word_topic, &corpus, a.top_n)?;
    if wants(Metric::Coherence) {
        writeln!(report, "coherence={}", coherence.0).expect("writing to a String");
    }
    if wants(Metric::Diversity) {
        writeln!(report, "diversity={}", diversity(&params.word_topic, a.top_n)?).expect("writing to a String");
    }
    out.write_all(report.as_bytes()).map_err(stdout_err)?;

    if let Some(path) = &a.out {
        let topo = params.prior.topology();
        let lists = top_words(&params.word_topic, a.top_n)?;
        let mut csv = String::from("topic,coherence,top_words\n");
        for (k, list) in lists.iter().enumerate() {
            let words: Vec<String> = list
                .iter()
                .map(|&w| corpus.vocab().map_or_else(|| (w + 1).to_string(), |v| v[w].clone()))
                .collect();
            let score = coherence.1[k].map_or_else(String::new, |c| c.to_string());
            writeln!(csv, "{},{score},{}", topo.name(topo.leaf_node(k)), words.join(" ")).expect("writing to a String");
        }
        write_text(path, &csv)?;
    }
    Ok(exit::OK)
}

fn generate(a: &GenerateArgs, out: &mut dyn Write) -> CliResult<u8> {
    let params = match &a.model {
        Some(path) => {
            if a.vocab_size.is_some() {
                return Err(CliError::Usage("--vocab-size conflicts with --model".into()));
            }
            ModelFile::load(path)?.to_params()?
        }
        None => {
            let prior = build_prior(&a.prior)?;
            let v = a
                .vocab_size
                .ok_or_else(|| CliError::Usage("--vocab-size is required without --model".into()))?;
            if v == 0 {
                return Err(CliError::Usage("--vocab-size must be positive".into()));
            }
            let k = prior.topology().leaf_count();
            // Offset the seed so topics and documents use unrelated streams.
            ModelParams::new(prior, random_word_topic(v, k, a.seed ^ 0x9e37_79b9_7f4a_7c15))?
        }
    };
    if a.docs == 0 || !(a.mean_length > 0.0 && a.mean_length.is_finite()) {
        return Err(CliError::Usage("--docs and --mean-length must be positive".into()));
    }
    let g = generate_corpus(
        &params,
        &GenerationConfig {
            doc_count: a.docs,
            mean_length: a.mean_length,
            seed: a.seed,
        },
    )?;
    write_text(&a.out, &format_uci(&g.corpus))?;

    let topo = params.prior.topology();
    let mut csv = String::from("doc");
    for prefix in ["theta", "count"] {
        for &leaf in topo.leaves() {
            write!(csv, ",{prefix}_{}", topo.name(leaf)).expect("writing to a String");
        }
    }
    csv.push('\n');
    for (m, (theta, counts)) in g.thetas.iter().zip(&g.topic_counts).enumerate() {
        write!(csv, "{}", m + 1).expect("writing to a String");
        for x in theta {
            write!(csv, ",{x}").expect("writing to a String");
        }
        for c in counts {
            write!(csv, ",{c}").expect("writing to a String");
        }
        csv.push('\n');
    }
    let latent = a.latent.clone().unwrap_or_else(|| suffixed(&a.out, ".latent.csv"));
    write_text(&latent, &csv)?;
    if let Some(path) = &a.save_model {
        ModelFile::from_params(&params, None, None).save(path)?;
    }
    let tokens: u64 = g.corpus.docs().iter().map(|d| d.total()).sum();
    writeln!(out, "wrote {} documents, {tokens} tokens", g.corpus.len()).map_err(stdout_err)?;
    Ok(exit::OK)
}
