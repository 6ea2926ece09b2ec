mod config;
mod svg;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use labelcraft::annotation::{self, adjudicate, build_variant, ItemStatus, Label, VariantName};
use labelcraft::corpus::{self, CorpusError, Message, RuleSet, Source};
use labelcraft::eval::{self, LearningCurvePoint, ModelSettings};
use labelcraft::experiment::{self, fmt_opt, ExperimentConfig, ExperimentError, VariantStatus};
use labelcraft::svm;
use labelcraft::synth::{self, SynthConfig};
use labelcraft_adjudication::{ServiceError, ServiceOptions, StateConfig};

use config::{parse_grid, ExperimentArgs};

#[derive(Parser)]
#[command(name = "labelcraft", version, about = "Crowd label aggregation and n-gram SVM experiments")]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply the keyword filter to a corpus or to a plain-text file.
    Filter(FilterArgs),
    /// Aggregate crowd and expert labels into the gold-label variants.
    Aggregate(ExperimentArgs),
    /// Train one model per requested variant on all of its items.
    Train(TrainArgs),
    /// Compute learning curves per requested variant.
    Curve(CurveArgs),
    /// Summarize an existing run-all output directory.
    Report(ReportArgs),
    /// Run the expert adjudication service.
    Serve(ServeArgs),
    /// Full pipeline: aggregate, build variants, train, evaluate, write reports.
    RunAll(ExperimentArgs),
    /// Write a synthetic corpus and annotation file.
    Synth(SynthArgs),
}

#[derive(Args)]
struct FilterArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    /// Plain-text input, one message per line, instead of the corpus.
    #[arg(long, value_name = "FILE", conflicts_with = "sample")]
    lines: Option<PathBuf>,
    /// Keep a seeded uniform sample of this many matched messages and write
    /// them as corpus JSON Lines.
    #[arg(long)]
    sample: Option<usize>,
    /// Output file (stdout when omitted).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    /// Fixed class weights `pos:neg`; skips the grid search.
    #[arg(long)]
    weights: Option<String>,
}

#[derive(Args)]
struct CurveArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    /// Fixed class weights `pos:neg`; skips the grid search.
    #[arg(long)]
    weights: Option<String>,
    /// Also render learning_curve.svg per variant.
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory written by `run-all`.
    #[arg(short, long, value_name = "DIR", default_value = "out")]
    output_dir: PathBuf,
    /// Render learning_curve.svg next to each learning_curve.csv.
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, value_name = "FILE")]
    corpus: PathBuf,
    /// Annotation file; new expert labels are appended to it on shutdown.
    #[arg(long, value_name = "FILE")]
    annotations: PathBuf,
    /// Directory for the event log and snapshots.
    #[arg(long, value_name = "DIR", default_value = "adjudication-state")]
    state_dir: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
    /// The two expert ids, comma separated.
    #[arg(long, default_value = "expert1,expert2")]
    experts: String,
    /// Show crowd vote counts to experts.
    #[arg(long)]
    show_crowd: bool,
    /// Serve the queue in seeded random order instead of id order.
    #[arg(long)]
    queue_seed: Option<u64>,
    #[arg(long, default_value = "unresolved")]
    tie_policy: String,
    /// Directory of a built front end, served at `/`.
    #[arg(long, value_name = "DIR")]
    static_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    snapshot_every: u64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(short, long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    n_items: usize,
    #[arg(long, default_value_t = 2016)]
    seed: u64,
    /// Leave split items without expert labels.
    #[arg(long)]
    no_experts: bool,
}

enum Failure {
    Input(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 1,
            Failure::Internal(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Internal(m) => m,
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Internal(e.to_string())
        }
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<annotation::AnnotationError> for Failure {
    fn from(e: annotation::AnnotationError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<eval::EvalError> for Failure {
    fn from(e: eval::EvalError) -> Self {
        Failure::Internal(e.to_string())
    }
}

impl From<svm::SvmError> for Failure {
    fn from(e: svm::SvmError) -> Self {
        Failure::Internal(e.to_string())
    }
}

impl From<ServiceError> for Failure {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Corpus(_) | ServiceError::Annotation(_) | ServiceError::Bind { .. } | ServiceError::Store(_) => {
                Failure::Input(e.to_string())
            }
            other => Failure::Internal(other.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn write_out(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::Internal(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| Failure::Internal(format!("cannot write {}: {e}", path.display())))
}

fn resolve(args: &ExperimentArgs) -> Result<ExperimentConfig> {
    let config = args.resolve().map_err(Failure::Input)?;
    config.validate()?;
    Ok(config)
}

fn ruleset(config: &ExperimentConfig) -> Result<RuleSet> {
    Ok(match &config.ruleset_path {
        Some(p) => corpus::load_ruleset(p)?,
        None => RuleSet::bundled(),
    })
}

fn filter(args: FilterArgs) -> Result<()> {
    let config = args.exp.resolve().map_err(Failure::Input)?;
    let rules = ruleset(&config)?;
    let messages: Vec<Message> = match &args.lines {
        Some(p) => fs::read_to_string(p)
            .map_err(|e| Failure::Input(format!("cannot read {}: {e}", p.display())))?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| Message::new(format!("line{}", i + 1), l, Source::Synthetic))
            .collect(),
        None => corpus::read_corpus(&config.corpus_path)?,
    };

    if let Some(n) = args.sample {
        let sample = corpus::sample_matched(&messages, &rules, n, config.seed)?;
        let out = args
            .out
            .ok_or_else(|| Failure::Input("--sample needs --out for the sampled corpus".into()))?;
        corpus::write_corpus(&out, &sample)?;
        eprintln!("{} of {} messages sampled to {}", sample.len(), messages.len(), out.display());
        return Ok(());
    }

    let mut csv = String::from("id,matched,rules\n");
    let mut matched = 0;
    for m in &messages {
        let r = corpus::filter_match(&rules, m);
        matched += r.matched as usize;
        let _ = writeln!(csv, "{},{},{}", m.id, r.matched, r.rule_ids.join(";"));
    }
    match &args.out {
        Some(p) => write_out(p, &csv)?,
        None => print!("{csv}"),
    }
    eprintln!("{matched} of {} messages match ruleset {:?}", messages.len(), rules.name);
    Ok(())
}

fn aggregate(args: ExperimentArgs) -> Result<()> {
    let config = resolve(&args)?;
    let inputs = experiment::load_inputs(&config)?;
    let adj = adjudicate(&inputs.annotations, config.tie_policy)?;
    let variants: Vec<_> = VariantName::ALL.iter().map(|&v| build_variant(v, &adj)).collect();

    let mut table = String::from("category");
    for v in &variants {
        let _ = write!(table, ",{}", v.name.id());
    }
    table.push('\n');
    let counts: Vec<[usize; 4]> = variants.iter().map(|v| v.label_counts()).collect();
    for label in Label::ALL {
        let _ = write!(table, "{label}");
        for c in &counts {
            let _ = write!(table, ",{}", c[label.index()]);
        }
        table.push('\n');
    }
    table.push_str("total");
    for v in &variants {
        let _ = write!(table, ",{}", v.len());
    }
    table.push('\n');

    let out = &config.output_dir;
    write_out(&out.join("table1.csv"), &table)?;
    write_out(&out.join("gold_labels.csv"), &annotation::gold_labels_csv(&adj.gold_labels()))?;

    println!("items {}", adj.len());
    println!("crowd unanimous {} ({:.1}%)", adj.count(ItemStatus::CrowdUnanimous), adj.crowd_unanimity_percent());
    println!("round-2 queue {}", adj.round2_queue().count());
    println!(
        "expert agreed {}, crowd fallback {}, dropped {}, pending {}",
        adj.count(ItemStatus::ExpertAgreed),
        adj.count(ItemStatus::CrowdFallback),
        adj.count(ItemStatus::Dropped),
        adj.count(ItemStatus::Pending)
    );
    match adj.expert_agreement() {
        Some(a) if !a.degenerate() => println!("expert kappa {:.4} over {} items", a.kappa, a.items),
        Some(a) => println!("expert kappa undefined over {} items", a.items),
        None => println!("expert kappa undefined"),
    }
    print!("{table}");
    Ok(())
}

/// Settings for one variant: fixed weights if given, else the grid winner.
fn chosen_settings(
    config: &ExperimentConfig,
    docs: &[eval::LabeledDoc],
    weights: Option<&str>,
) -> Result<Option<ModelSettings>> {
    let settings = config.model_settings();
    if let Some(w) = weights {
        let pairs = parse_grid(w).map_err(Failure::Input)?;
        let [(pos, neg)] = pairs[..] else {
            return Err(Failure::Input(format!("--weights takes one pos:neg pair, got {w:?}")));
        };
        let train = settings.train.with_class_weights(pos, neg);
        train.validate().map_err(|e| Failure::Input(e.to_string()))?;
        return Ok(Some(ModelSettings { train, ..settings }));
    }
    let (pos, neg) = experiment::class_counts(docs);
    if pos < config.k || neg < config.k {
        return Ok(None);
    }
    let grid = eval::grid_search_class_weights(docs, &settings, &config.grid, config.k, config.seed)?;
    for p in &grid.table {
        log::info!("weights {}:{} mean roc_auc {}", p.class_weight_pos, p.class_weight_neg, fmt_opt(p.mean_auc));
    }
    Ok(Some(ModelSettings {
        train: grid.best,
        ..settings
    }))
}

fn dir_name(v: VariantName) -> String {
    format!("{}_{}", v.model(), v.id())
}

fn train(args: TrainArgs) -> Result<()> {
    let config = resolve(&args.exp)?;
    let inputs = experiment::load_inputs(&config)?;
    let adj = adjudicate(&inputs.annotations, config.tie_policy)?;
    for name in config.ordered_variants() {
        let variant = build_variant(name, &adj);
        let docs = experiment::variant_docs(&variant, &inputs);
        let (pos, neg) = experiment::class_counts(&docs);
        if pos == 0 || neg == 0 {
            eprintln!("{}: skipped, needs both classes ({pos} positive, {neg} negative)", name.id());
            continue;
        }
        let Some(settings) = chosen_settings(&config, &docs, args.weights.as_deref())? else {
            eprintln!("{}: skipped, grid search needs k = {} items per class ({pos}/{neg})", name.id(), config.k);
            continue;
        };
        let all: Vec<_> = docs.iter().collect();
        let fit = eval::fit(&all, &settings)?;
        let top = svm::top_features(&fit.model, &fit.vocab, 20.min(fit.vocab.len()))?;
        let dir = config.output_dir.join(dir_name(name));
        let model_json = serde_json::to_string_pretty(&fit.model).map_err(|e| Failure::Internal(e.to_string()))?;
        write_out(&dir.join("model.json"), &(model_json + "\n"))?;
        write_out(&dir.join("vocabulary.csv"), &fit.vocab.to_csv())?;
        write_out(&dir.join("top_features.csv"), &experiment::top_features_csv(name.model(), &top))?;
        println!(
            "{} {}: {} items, {} features, weights {}:{}, converged {} after {} epochs",
            name.model(),
            name.id(),
            docs.len(),
            fit.vocab.len(),
            settings.train.class_weight_pos,
            settings.train.class_weight_neg,
            fit.model.converged,
            fit.model.epochs
        );
    }
    Ok(())
}

fn curve(args: CurveArgs) -> Result<()> {
    let config = resolve(&args.exp)?;
    let inputs = experiment::load_inputs(&config)?;
    let adj = adjudicate(&inputs.annotations, config.tie_policy)?;
    for name in config.ordered_variants() {
        let variant = build_variant(name, &adj);
        let docs = experiment::variant_docs(&variant, &inputs);
        let (pos, neg) = experiment::class_counts(&docs);
        if pos < config.k || neg < config.k {
            eprintln!("{}: skipped, needs k = {} items per class ({pos}/{neg})", name.id(), config.k);
            continue;
        }
        let Some(settings) = chosen_settings(&config, &docs, args.weights.as_deref())? else {
            continue;
        };
        let points = eval::learning_curve(&docs, &settings, &config.curve_fractions, config.k, config.seed)?;
        let dir = config.output_dir.join(dir_name(name));
        write_out(&dir.join("learning_curve.csv"), &experiment::learning_curve_csv(name.model(), &points))?;
        if args.svg {
            let title = format!("{} {}", name.model(), name.id());
            write_out(&dir.join("learning_curve.svg"), &svg::learning_curve_svg(&title, &points))?;
        }
        for p in &points {
            println!(
                "{} {:>6} train {} cv {}",
                name.model(),
                p.train_size,
                fmt_opt(p.train_score),
                fmt_opt(p.cv_score)
            );
        }
    }
    Ok(())
}

fn read_json(path: &Path) -> Result<serde_json::Value> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn parse_curve_csv(text: &str) -> std::result::Result<Vec<LearningCurvePoint>, String> {
    let opt = |s: &str| -> std::result::Result<Option<f64>, String> {
        if s == "NA" {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|e| format!("{s:?}: {e}"))
        }
    };
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 4 {
                return Err(format!("expected 4 fields in {l:?}"));
            }
            Ok(LearningCurvePoint {
                fraction: f64::NAN,
                train_size: f[1].parse().map_err(|e| format!("{:?}: {e}", f[1]))?,
                train_score: opt(f[2])?,
                cv_score: opt(f[3])?,
            })
        })
        .collect()
}

fn report(args: ReportArgs) -> Result<()> {
    let out = &args.output_dir;
    let top = read_json(&out.join("manifest.json"))?;
    let ann = &top["annotation"];
    println!("seed {}  config {}", top["seed"], top["config_hash"].as_str().unwrap_or("?"));
    println!(
        "items {}  crowd unanimous {}  round-2 queue {}  dropped {}  expert kappa {}",
        ann["items"], ann["crowd_unanimous"], ann["round2_queue"], ann["dropped"], ann["expert_kappa"]
    );
    const COLS: [&str; 5] = ["roc_auc", "average_precision", "precision", "recall", "f1"];
    println!("{:<4} {:<15} {:>6} {:>9} {:>9} {:>9} {:>9} {:>9}", "", "variant", "items", "auc", "ap", "prec", "recall", "f1");
    let empty = Vec::new();
    for v in top["variants"].as_array().unwrap_or(&empty) {
        let dir = out.join(v["directory"].as_str().unwrap_or_default());
        let m = read_json(&dir.join("manifest.json"))?;
        let mut line = format!(
            "{:<4} {:<15} {:>6}",
            m["model"].as_str().unwrap_or("?"),
            m["variant"].as_str().unwrap_or("?"),
            m["items"]
        );
        if m["status"] == "skipped" {
            let _ = write!(line, "  skipped: {}", m["reason"].as_str().unwrap_or(""));
        } else {
            for c in COLS {
                let _ = write!(line, " {:>9}", fmt_opt(m["metrics"][c]["mean"].as_f64()));
            }
        }
        println!("{line}");

        if args.svg && m["status"] != "skipped" {
            let csv_path = dir.join("learning_curve.csv");
            let text =
                fs::read_to_string(&csv_path).map_err(|e| Failure::Input(format!("cannot read {}: {e}", csv_path.display())))?;
            let points = parse_curve_csv(&text).map_err(|e| Failure::Input(format!("{}: {e}", csv_path.display())))?;
            let title = format!("{} {}", m["model"].as_str().unwrap_or(""), m["variant"].as_str().unwrap_or(""));
            write_out(&dir.join("learning_curve.svg"), &svg::learning_curve_svg(&title, &points))?;
        }
    }
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    let experts: Vec<&str> = args.experts.split(',').map(str::trim).collect();
    let [e1, e2] = experts[..] else {
        return Err(Failure::Input(format!("--experts needs exactly two ids, got {:?}", args.experts)));
    };
    let opts = ServiceOptions {
        corpus_path: args.corpus,
        annotations_path: args.annotations,
        state_dir: args.state_dir,
        state: StateConfig {
            experts: [e1.to_string(), e2.to_string()],
            show_crowd: args.show_crowd,
            queue_seed: args.queue_seed,
            tie_policy: args.tie_policy.parse().map_err(Failure::Input)?,
        },
        snapshot_every: args.snapshot_every,
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Internal(e.to_string()))?;
    let written = runtime.block_on(labelcraft_adjudication::serve(&opts, &args.addr, args.static_dir, async {
        let _ = tokio::signal::ctrl_c().await;
    }))?;
    eprintln!("{written} expert annotations written to {}", opts.annotations_path.display());
    Ok(())
}

fn run_all(args: ExperimentArgs) -> Result<()> {
    let config = resolve(&args)?;
    let report = experiment::run_experiment(&config)?;
    println!("config {}", report.config_hash);
    for v in &report.variants {
        match (&v.status, &v.trained) {
            (VariantStatus::Trained, Some(t)) => {
                let best = t.grid.best_point();
                println!(
                    "{} {:<15} {:>5} items  weights {}:{}  roc_auc {}",
                    v.variant.name.model(),
                    v.variant.name.id(),
                    v.variant.len(),
                    best.class_weight_pos,
                    best.class_weight_neg,
                    fmt_opt(best.mean_auc)
                );
            }
            (VariantStatus::Skipped { reason }, _) => {
                println!("{} {:<15} skipped: {reason}", v.variant.name.model(), v.variant.name.id())
            }
            _ => {}
        }
    }
    println!("reports written to {}", config.output_dir.display());
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let data = synth::generate(&SynthConfig {
        n_items: args.n_items,
        seed: args.seed,
        with_experts: !args.no_experts,
        ..SynthConfig::default()
    });
    fs::create_dir_all(&args.out).map_err(|e| Failure::Internal(format!("cannot create {}: {e}", args.out.display())))?;
    data.write(&args.out)?;
    println!(
        "{} messages, {} annotations written to {}",
        data.messages.len(),
        data.annotations.len(),
        args.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Filter(a) => filter(a),
        Command::Aggregate(a) => aggregate(a),
        Command::Train(a) => train(a),
        Command::Curve(a) => curve(a),
        Command::Report(a) => report(a),
        Command::Serve(a) => serve(a),
        Command::RunAll(a) => run_all(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
