//! `xaug` — XAI-guided context-aware data augmentation.
//!
//! Subcommands mirror the pipeline stages so each one is independently
//! scriptable: corpus generation, training, attribution, a single
//! augmentation pass, evaluation, and the full refinement loop.

mod config;

use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use config::{parse_config, AppConfig, Overrides};
use xaug_core::attribution::{integrated_gradients, rank_and_select};
use xaug_core::augment::{augment_dataset, AugmentBackends, Paraphraser};
use xaug_core::corpus::{build_vocab, load_dataset, save_jsonl, DataFormat};
use xaug_core::lexical::load_synonym_table;
use xaug_core::model::{evaluate_model, train_classifier};
use xaug_core::pipeline::{generate_planted_corpus, run_refinement, PipelineResources, PlantedConfig};
use xaug_core::{
    AugmentMethod, Classifier, Dataset, LexicalDatabase, ReplacementPlan, RunReport,
    TranslationCache, Translator, Vocabulary,
};

#[derive(Parser)]
#[command(
    name = "xaug",
    version,
    about = "XAI-guided context-aware data augmentation for text classification",
    long_about = None
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the planted-keyword synthetic corpus as JSONL
    GenCorpus(GenCorpusArgs),
    /// Train the pooled embedding classifier and save a checkpoint
    Train(TrainArgs),
    /// Dump per-token Integrated Gradients attributions as JSONL
    Attribute(AttributeArgs),
    /// Run one augmentation pass and save the augmented examples
    Augment(AugmentArgs),
    /// Evaluate a saved model on a dataset
    Evaluate(EvaluateArgs),
    /// Run the full iterative refinement loop and write a run report
    Run(RunArgs),
}

#[derive(Args)]
struct GenCorpusArgs {
    /// Output JSONL path
    #[arg(long)]
    out: PathBuf,
    /// Number of examples [default: 200]
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// RNG seed [default: 13]
    #[arg(long, default_value_t = 13)]
    seed: u64,
    /// Size of the filler-token pool [default: 50]
    #[arg(long, default_value_t = 50)]
    filler_vocab: usize,
    /// Minimum filler tokens per example [default: 8]
    #[arg(long, default_value_t = 8)]
    min_fillers: usize,
    /// Maximum filler tokens per example [default: 16]
    #[arg(long, default_value_t = 16)]
    max_fillers: usize,
    /// Probability of flipping an example's label [default: 0]
    #[arg(long, default_value_t = 0.0)]
    label_noise: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// Flat JSON configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training dataset (overrides the config's dataset)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Dataset format: jsonl or tsv [default: jsonl]
    #[arg(long)]
    format: Option<String>,
    /// RNG seed override
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint output path; the vocabulary lands beside it
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AttributeArgs {
    /// Flat JSON configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model checkpoint written by `train` or `run`
    #[arg(long)]
    model: PathBuf,
    /// Dataset to attribute (overrides the config's dataset)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Dataset format: jsonl or tsv [default: jsonl]
    #[arg(long)]
    format: Option<String>,
    /// IG step count m [default: 64]
    #[arg(long)]
    steps: Option<usize>,
    /// Selection ratio r for the reported bottom-k set [default: 0.20]
    #[arg(long)]
    ratio: Option<f64>,
    /// Attribute the softmax probability instead of the logit
    #[arg(long, default_value_t = false)]
    prob: bool,
    /// Output JSONL path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AugmentArgs {
    /// Flat JSON configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model checkpoint guiding the selection
    #[arg(long)]
    model: PathBuf,
    /// Dataset to augment (overrides the config's dataset)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Dataset format: jsonl or tsv [default: jsonl]
    #[arg(long)]
    format: Option<String>,
    /// Augmentation method: sr_bt, pr_bt, or random [default: sr_bt]
    #[arg(long)]
    method: Option<AugmentMethod>,
    /// Selection ratio r [default: 0.20]
    #[arg(long)]
    ratio: Option<f64>,
    /// RNG seed override
    #[arg(long)]
    seed: Option<u64>,
    /// Output JSONL path for the augmented examples
    #[arg(long)]
    out: PathBuf,
    /// Optional JSONL dump of the replacement plans
    #[arg(long)]
    plans: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Flat JSON configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model checkpoint to evaluate
    #[arg(long)]
    model: PathBuf,
    /// Evaluation dataset (overrides the config's dataset)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Dataset format: jsonl or tsv [default: jsonl]
    #[arg(long)]
    format: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    /// Flat JSON configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset to run on (overrides the config's dataset)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Dataset format: jsonl or tsv [default: jsonl]
    #[arg(long)]
    format: Option<String>,
    /// Augmentation method: sr_bt, pr_bt, or random [default: sr_bt]
    #[arg(long)]
    method: Option<AugmentMethod>,
    /// Base selection ratio r [default: 0.20]
    #[arg(long)]
    ratio: Option<f64>,
    /// RNG seed override
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory for report.json and artifacts
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failed command, carrying the process exit code: 1 for usage or
/// configuration problems, 2 for runtime failures.
struct Failure {
    code: i32,
    error: anyhow::Error,
}

fn usage<E: Into<anyhow::Error>>(error: E) -> Failure {
    Failure {
        code: 1,
        error: error.into(),
    }
}

fn runtime<E: Into<anyhow::Error>>(error: E) -> Failure {
    Failure {
        code: 2,
        error: error.into(),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    if let Err(failure) = dispatch(cli) {
        eprintln!("error: {:#}", failure.error);
        std::process::exit(failure.code);
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenCorpus(args) => gen_corpus(args),
        Command::Train(args) => train(args),
        Command::Attribute(args) => attribute(args),
        Command::Augment(args) => augment(args),
        Command::Evaluate(args) => evaluate(args),
        Command::Run(args) => run(args),
    }
}

fn gen_corpus(args: GenCorpusArgs) -> Result<(), Failure> {
    let cfg = PlantedConfig {
        n: args.n,
        seed: args.seed,
        filler_vocab: args.filler_vocab,
        min_fillers: args.min_fillers,
        max_fillers: args.max_fillers,
        label_noise: args.label_noise,
    };
    let dataset = generate_planted_corpus(&cfg).map_err(usage)?;
    save_jsonl(&dataset, &args.out).map_err(runtime)?;
    println!("wrote {} examples to {}", dataset.len(), args.out.display());
    Ok(())
}

fn load_configured_dataset(cfg: &AppConfig) -> Result<Dataset, Failure> {
    let path = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| usage(anyhow!("no dataset given; use --data or the config's 'dataset' key")))?;
    let format: DataFormat = cfg.data_format.parse().map_err(usage)?;
    load_dataset(path, format).map_err(runtime)
}

fn vocab_sidecar(model_path: &Path) -> PathBuf {
    model_path.with_extension("vocab.json")
}

fn load_model_and_vocab(model_path: &Path) -> Result<(Classifier, Vocabulary), Failure> {
    let model = Classifier::load(model_path).map_err(runtime)?;
    let sidecar = vocab_sidecar(model_path);
    let text = std::fs::read_to_string(&sidecar)
        .with_context(|| format!("cannot read vocabulary sidecar {}", sidecar.display()))
        .map_err(runtime)?;
    let vocab: Vocabulary = serde_json::from_str(&text)
        .with_context(|| format!("invalid vocabulary sidecar {}", sidecar.display()))
        .map_err(runtime)?;
    Ok((model, vocab))
}

fn train(args: TrainArgs) -> Result<(), Failure> {
    let overrides = Overrides {
        seed: args.seed,
        data: args.data,
        data_format: args.format,
        ..Overrides::default()
    };
    let cfg = parse_config(args.config.as_deref(), &overrides).map_err(usage)?;
    let dataset = load_configured_dataset(&cfg)?;
    let vocab = build_vocab(&dataset, cfg.min_freq).map_err(runtime)?;
    let (model, history) = train_classifier(&dataset, &vocab, cfg.train_config()).map_err(runtime)?;
    model.save(&args.out).map_err(runtime)?;
    let sidecar = vocab_sidecar(&args.out);
    std::fs::write(
        &sidecar,
        serde_json::to_string(&vocab).expect("vocabulary serializes"),
    )
    .with_context(|| format!("cannot write {}", sidecar.display()))
    .map_err(runtime)?;
    let metrics = evaluate_model(&model, &dataset, &vocab).map_err(runtime)?;
    println!(
        "trained {} epochs, final loss {:.6}, train accuracy {:.4}",
        history.len(),
        history.last().copied().unwrap_or(f64::NAN),
        metrics.accuracy
    );
    println!("model: {}", args.out.display());
    println!("vocab: {}", sidecar.display());
    Ok(())
}

#[derive(Serialize)]
struct AttributionRecord<'a> {
    id: u64,
    tokens: &'a [String],
    target_class: usize,
    signed: &'a [f64],
    importance: &'a [f64],
    selected: &'a [usize],
}

fn attribute(args: AttributeArgs) -> Result<(), Failure> {
    let overrides = Overrides {
        ratio: args.ratio,
        ig_steps: args.steps,
        data: args.data,
        data_format: args.format,
        ..Overrides::default()
    };
    let cfg = parse_config(args.config.as_deref(), &overrides).map_err(usage)?;
    let dataset = load_configured_dataset(&cfg)?;
    let (model, vocab) = load_model_and_vocab(&args.model)?;

    let mut out = std::io::BufWriter::new(
        std::fs::File::create(&args.out)
            .with_context(|| format!("cannot create {}", args.out.display()))
            .map_err(runtime)?,
    );
    for example in &dataset.examples {
        if example.tokens.is_empty() {
            continue;
        }
        let indices = vocab.encode(&example.tokens);
        let target = model.predict(&indices);
        let attr = integrated_gradients(
            &model,
            example,
            &vocab,
            cfg.run.ig_steps,
            target,
            !args.prob,
        )
        .map_err(runtime)?;
        let selection = rank_and_select(&attr, cfg.policy(), None).map_err(runtime)?;
        let record = AttributionRecord {
            id: example.id,
            tokens: &example.tokens,
            target_class: attr.target_class,
            signed: &attr.signed,
            importance: &attr.importance,
            selected: &selection.positions,
        };
        serde_json::to_writer(&mut out, &record)
            .map_err(|e| runtime(anyhow!("cannot serialize attribution record: {e}")))?;
        out.write_all(b"\n").map_err(runtime)?;
    }
    out.flush().map_err(runtime)?;
    println!("wrote attributions to {}", args.out.display());
    Ok(())
}

fn build_translator(cfg: &AppConfig) -> Result<Translator, Failure> {
    if let Some(endpoint) = &cfg.translator_endpoint {
        return Ok(Translator::http(
            "http",
            endpoint.clone(),
            cfg.api_key_env.as_deref(),
        ));
    }
    match (&cfg.forward_dict, &cfg.reverse_dict) {
        (Some(forward), Some(reverse)) => Translator::mock_from_files(
            "mock",
            &[
                (
                    (cfg.run.src_lang.as_str(), cfg.run.pivot_lang.as_str()),
                    forward.as_path(),
                ),
                (
                    (cfg.run.pivot_lang.as_str(), cfg.run.src_lang.as_str()),
                    reverse.as_path(),
                ),
            ],
        )
        .map_err(runtime),
        _ => Err(usage(anyhow!(
            "translation needs 'forward_dict' and 'reverse_dict' (mock) or 'translator_endpoint' (http) in the config"
        ))),
    }
}

fn build_paraphraser(cfg: &AppConfig) -> Result<Option<Paraphraser>, Failure> {
    if let Some(path) = &cfg.paraphrases {
        return Paraphraser::rule_mock_from_file(path).map(Some).map_err(runtime);
    }
    if let Some(endpoint) = &cfg.paraphraser_endpoint {
        return Ok(Some(Paraphraser::Http {
            id: "http".into(),
            endpoint: endpoint.clone(),
        }));
    }
    Ok(None)
}

fn build_lexdb(cfg: &AppConfig) -> Result<LexicalDatabase, Failure> {
    match &cfg.synonyms {
        Some(path) => load_synonym_table(path).map_err(runtime),
        None => {
            if cfg.run.method == AugmentMethod::SrBt {
                Err(usage(anyhow!("sr_bt needs a 'synonyms' table in the config")))
            } else {
                Ok(LexicalDatabase::empty())
            }
        }
    }
}

fn open_cache(cfg: &AppConfig) -> Result<TranslationCache, Failure> {
    match &cfg.cache {
        Some(path) => TranslationCache::open(path).map_err(runtime),
        None => Ok(TranslationCache::in_memory()),
    }
}

fn write_plans(path: &Path, plans: &[ReplacementPlan]) -> Result<(), Failure> {
    let mut out = String::new();
    for plan in plans {
        out.push_str(&serde_json::to_string(plan).expect("plan serializes"));
        out.push('\n');
    }
    std::fs::write(path, out)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(runtime)
}

fn augment(args: AugmentArgs) -> Result<(), Failure> {
    let overrides = Overrides {
        method: args.method,
        ratio: args.ratio,
        seed: args.seed,
        data: args.data,
        data_format: args.format,
        ..Overrides::default()
    };
    let cfg = parse_config(args.config.as_deref(), &overrides).map_err(usage)?;
    let dataset = load_configured_dataset(&cfg)?;
    let (model, vocab) = load_model_and_vocab(&args.model)?;

    let translator = build_translator(&cfg)?;
    let paraphraser = build_paraphraser(&cfg)?;
    if cfg.run.method == AugmentMethod::PrBt && paraphraser.is_none() {
        return Err(usage(anyhow!(
            "pr_bt needs 'paraphrases' or 'paraphraser_endpoint' in the config"
        )));
    }
    let lexdb = build_lexdb(&cfg)?;
    let mut cache = open_cache(&cfg)?;

    let mut plans = Vec::new();
    let mut backends = AugmentBackends {
        translator: &translator,
        cache: &mut cache,
        lexdb: &lexdb,
        paraphraser: paraphraser.as_ref(),
        src_lang: &cfg.run.src_lang,
        pivot_lang: &cfg.run.pivot_lang,
    };
    let (augmented, report) = augment_dataset(
        &dataset,
        cfg.run.method,
        &model,
        &vocab,
        cfg.policy(),
        None,
        cfg.run.ig_steps,
        cfg.run.seed,
        &mut backends,
        args.plans.as_ref().map(|_| &mut plans),
    )
    .map_err(runtime)?;

    save_jsonl(&augmented, &args.out).map_err(runtime)?;
    if let Some(path) = &args.plans {
        write_plans(path, &plans)?;
    }
    cache.save().map_err(runtime)?;

    println!(
        "augmented {} of {} examples (miss ratio {:.3})",
        augmented.len(),
        dataset.len(),
        report.miss_ratio()
    );
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("miss report serializes")
    );
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<(), Failure> {
    let overrides = Overrides {
        data: args.data,
        data_format: args.format,
        ..Overrides::default()
    };
    let cfg = parse_config(args.config.as_deref(), &overrides).map_err(usage)?;
    let dataset = load_configured_dataset(&cfg)?;
    let (model, vocab) = load_model_and_vocab(&args.model)?;
    let metrics = evaluate_model(&model, &dataset, &vocab).map_err(runtime)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&metrics).expect("metrics serialize")
    );
    Ok(())
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let overrides = Overrides {
        method: args.method,
        ratio: args.ratio,
        seed: args.seed,
        out_dir: args.out,
        data: args.data,
        data_format: args.format,
        ..Overrides::default()
    };
    let cfg = parse_config(args.config.as_deref(), &overrides).map_err(usage)?;
    let dataset = load_configured_dataset(&cfg)?;
    let out_dir = cfg
        .out_dir
        .clone()
        .ok_or_else(|| usage(anyhow!("no run directory given; use --out or the config's 'out_dir' key")))?;

    let translator = build_translator(&cfg)?;
    let paraphraser = build_paraphraser(&cfg)?;
    if cfg.run.method == AugmentMethod::PrBt && paraphraser.is_none() {
        return Err(usage(anyhow!(
            "pr_bt needs 'paraphrases' or 'paraphraser_endpoint' in the config"
        )));
    }
    let lexdb = build_lexdb(&cfg)?;
    let mut cache = open_cache(&cfg)?;

    let mut plans = Vec::new();
    let mut resources = PipelineResources {
        translators: vec![&translator],
        paraphrasers: paraphraser.iter().collect(),
        lexdb: &lexdb,
        cache: &mut cache,
    };
    let (report, artifacts) =
        run_refinement(&dataset, &cfg.run, &mut resources, Some(&mut plans)).map_err(runtime)?;

    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("cannot create run directory {}", out_dir.display()))
        .map_err(runtime)?;

    let report_json = serde_json::to_string_pretty(&report).expect("run report serializes");
    std::fs::write(out_dir.join("report.json"), format!("{report_json}\n"))
        .context("cannot write report.json")
        .map_err(runtime)?;
    std::fs::write(out_dir.join("report.txt"), render_report(&report))
        .context("cannot write report.txt")
        .map_err(runtime)?;
    save_jsonl(&artifacts.augmented, &out_dir.join("augmented.jsonl")).map_err(runtime)?;
    write_plans(&out_dir.join("plans.jsonl"), &plans)?;
    artifacts
        .baseline
        .save(&out_dir.join("baseline.model.json"))
        .map_err(runtime)?;
    artifacts
        .final_model
        .save(&out_dir.join("final.model.json"))
        .map_err(runtime)?;
    let vocab_json = serde_json::to_string(&artifacts.vocab).expect("vocabulary serializes");
    std::fs::write(out_dir.join("final.model.vocab.json"), &vocab_json)
        .context("cannot write vocabulary")
        .map_err(runtime)?;
    std::fs::write(out_dir.join("baseline.model.vocab.json"), &vocab_json)
        .context("cannot write vocabulary")
        .map_err(runtime)?;
    cache.save().map_err(runtime)?;

    println!(
        "run finished: baseline acc {:.4}, final Δacc {:+.4}, improved={}, exhausted={}",
        report.baseline_metrics.accuracy,
        report.final_delta_acc,
        report.improved,
        report.exhausted
    );
    println!("report: {}", out_dir.join("report.json").display());
    Ok(())
}

fn render_report(report: &RunReport) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(out, "method:   {}", report.method.as_str());
    let _ = writeln!(out, "seed:     {}", report.seed);
    let _ = writeln!(out, "test set: {} examples", report.test_size);
    let _ = writeln!(
        out,
        "baseline: accuracy {:.4}, macro-F1 {:.4}",
        report.baseline_metrics.accuracy, report.baseline_metrics.macro_f1
    );
    let _ = writeln!(out);
    for it in &report.iterations {
        let _ = writeln!(
            out,
            "iteration {}: r={:.2}, train {} + augmented {} = {}, miss ratio {:.3}, acc {:.4} (Δ{:+.4}), macro-F1 {:.4} (Δ{:+.4})",
            it.iteration,
            it.ratio_used,
            it.train_size,
            it.augmented_size,
            it.combined_size,
            it.miss_report.miss_ratio(),
            it.augmented_metrics.accuracy,
            it.delta_acc,
            it.augmented_metrics.macro_f1,
            it.delta_f1,
        );
    }
    for event in &report.events {
        let _ = writeln!(
            out,
            "event (iteration {}): {} — {}",
            event.iteration, event.kind, event.detail
        );
    }
    let ratios: Vec<String> = report
        .ratio_sequence
        .iter()
        .map(|r| format!("{r:.2}"))
        .collect();
    let _ = writeln!(out);
    let _ = writeln!(out, "ratio sequence: {}", ratios.join(" -> "));
    let _ = writeln!(
        out,
        "improved: {}, exhausted: {}, final Δacc {:+.4}, final Δmacro-F1 {:+.4}",
        report.improved, report.exhausted, report.final_delta_acc, report.final_delta_f1
    );
    if let Some(stability) = &report.stability {
        let _ = writeln!(
            out,
            "attribution stability (q={}): mean top-position overlap {:.4}",
            stability.q, stability.mean_overlap
        );
    }
    out
}
