//! The `ltc` command line: one subcommand per pipeline stage, each writing a run manifest.

mod config;

pub use config::{AnalyzeSection, ClassifySection, DataSection, FileConfig, RefineSection};

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, LineWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::analytics::{
    self, birth_distance_distribution, build_timelines, classify_corpus, departure_ratio_series, geocode_tuples,
    life_stage_histogram, paired_nonempty, pearson, type_ratio_series, GazetteerBackend, GeocodeBackend, Geocoder,
    HttpGeocoder, LabeledTuple,
};
use crate::dataset::{
    load_samples, read_jsonl_records, samples_to_jsonl, DatasetVariant, LoadReport, SampleFormat, TrajectorySample,
    Triple,
};
use crate::error::{Error, Result};
use crate::fusion::{load_checkpoint, read_checkpoint_manifest, save_checkpoint};
use crate::manifest::{config_hash, RunManifest};
use crate::refine::{refine_batch, ChatEndpoint, HttpChat, PromptStyle, RefineRequest, StubChat};
use crate::syntax_graph::{
    mean_pairwise_graph_distance, mean_pairwise_token_distance, preprocess, to_dot, VerbTags,
};
use crate::train::{
    build_tokenizer, evaluate, prepare_all, run_cv, train_final, write_cv_report, Ablation, PrepareOptions,
    PreparedSample, TrainConfig,
};
use crate::Scalar;

#[derive(Debug, Parser)]
#[command(name = "ltc", version, about = "Activity classification of life-trajectory triples and corpus analytics")]
pub struct Cli {
    /// Run configuration (TOML with [data] [train] [refine] [classify] [analyze] sections).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Use file-backed stubs for the chat endpoint and the geocoder.
    #[arg(long, global = true)]
    pub stub: bool,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate samples and parses into a self-contained store.
    Ingest(IngestArgs),
    /// Rewrite sentences through the chat endpoint under triple constraints.
    Refine(RefineArgs),
    /// Export one sample's sentence graph as Graphviz.
    Graph(GraphArgs),
    /// Cross-validate, then train a final checkpoint on all samples.
    Train(TrainArgs),
    /// Score a checkpoint on labeled samples.
    Eval(EvalArgs),
    /// Cross-validate the full model against one ablation.
    Ablate(AblateArgs),
    /// Label a corpus with a checkpoint, producing tuples.
    Classify(ClassifyArgs),
    /// Time-binned, mobility and distance analyses over tuples.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Sample JSONL or ingest store directory; defaults to [data].samples.
    #[arg(long)]
    pub samples: Option<PathBuf>,
    /// CoNLL-U sidecar; defaults to [data].parses.
    #[arg(long)]
    pub parses: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long)]
    pub parses: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Fail if any record is rejected (the default).
    #[arg(long, conflicts_with = "lenient")]
    pub strict: bool,
    /// Keep valid records and write rejected ones to rejections.jsonl.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_with::<PromptStyle>)]
    pub style: Option<PromptStyle>,
    #[arg(long)]
    pub retries: Option<usize>,
    #[arg(long)]
    pub in_flight: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    #[command(flatten)]
    pub data: SampleArgs,
    #[arg(long)]
    pub sample: String,
    #[arg(long)]
    pub dot: PathBuf,
    #[arg(long, value_parser = parse_kebab::<DatasetVariant>)]
    pub variant: Option<DatasetVariant>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: SampleArgs,
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long, value_parser = parse_with::<Ablation>)]
    pub ablation: Option<Ablation>,
    /// Skip cross-validation and only train the final checkpoint.
    #[arg(long)]
    pub no_cv: bool,
    /// Train in single precision.
    #[arg(long)]
    pub f32: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: SampleArgs,
    #[arg(long, value_parser = parse_kebab::<DatasetVariant>)]
    pub variant: Option<DatasetVariant>,
    /// Write metrics.json and confusion.csv here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_parser = parse_with::<Ablation>)]
    pub variant: Ablation,
    #[command(flatten)]
    pub data: SampleArgs,
    #[arg(long, default_value = "ablation")]
    pub out: PathBuf,
    #[arg(long)]
    pub f32: bool,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub parses: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Append to an existing output, skipping samples already labeled there.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub chunk: Option<usize>,
    #[arg(long, value_parser = parse_kebab::<DatasetVariant>)]
    pub variant: Option<DatasetVariant>,
    /// Geocode the output tuples (also enabled by [classify].geocode).
    #[arg(long)]
    pub geocode: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AnalysisKind {
    Ratios,
    Departures,
    Lifestages,
    Distances,
}

impl AnalysisKind {
    fn name(self) -> &'static str {
        match self {
            AnalysisKind::Ratios => "ratios",
            AnalysisKind::Departures => "departures",
            AnalysisKind::Lifestages => "lifestages",
            AnalysisKind::Distances => "distances",
        }
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(value_enum)]
    pub kind: AnalysisKind,
    /// Tuple JSONL; defaults to [analyze].tuples.
    #[arg(long)]
    pub tuples: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_with<T: std::str::FromStr<Err = Error>>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_kebab<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

/// Parse `argv`, run the command and return the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    match &cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Refine(a) => refine(a, &cfg, cli.stub),
        Command::Graph(a) => graph(a, &cfg),
        Command::Train(a) => train(a, &cfg),
        Command::Eval(a) => eval(a, &cfg),
        Command::Ablate(a) => ablate(a, &cfg),
        Command::Classify(a) => classify(a, &cfg, cli.stub),
        Command::Analyze(a) => analyze(a, &cfg),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, serde_json::to_string_pretty(value)?)
}

/// `tuples.jsonl` → `tuples.jsonl.manifest.json`.
fn sidecar_manifest(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn with_suffix(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    out.with_file_name(name)
}

/// A store directory stands for its `samples.jsonl`.
fn sample_file(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("samples.jsonl")
    } else {
        path.to_path_buf()
    }
}

struct Loaded {
    samples: Vec<TrajectorySample>,
    report: LoadReport,
    inputs: Vec<PathBuf>,
}

fn load(samples: &Path, parses: Option<&Path>) -> Result<Loaded> {
    let file = sample_file(samples);
    let format = match parses {
        Some(p) => SampleFormat::ConlluPair(p.to_path_buf()),
        None => SampleFormat::Jsonl,
    };
    let mut report = load_samples(&file, &format)?;
    for r in &report.rejections {
        log::warn!("rejected {r}");
    }
    let mut inputs = vec![file];
    inputs.extend(parses.map(Path::to_path_buf));
    Ok(Loaded {
        samples: std::mem::take(&mut report.samples),
        report,
        inputs,
    })
}

fn load_configured(args: &SampleArgs, cfg: &FileConfig) -> Result<Loaded> {
    let samples = args
        .samples
        .as_ref()
        .or(cfg.data.samples.as_ref())
        .ok_or_else(|| Error::Config("no samples given; pass --samples or set [data].samples".into()))?;
    let parses = args.parses.as_ref().or(cfg.data.parses.as_ref());
    load(samples, parses.map(PathBuf::as_path))
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let loaded = load(&a.samples, a.parses.as_deref())?;
    let rejected = &loaded.report.rejections;
    if !a.lenient && !rejected.is_empty() {
        for r in rejected {
            eprintln!("{r}");
        }
        return Err(Error::validation(format!(
            "{} of {} records rejected; rerun with --lenient to keep the rest",
            rejected.len(),
            rejected.len() + loaded.samples.len()
        )));
    }
    let mode = if a.lenient { "lenient" } else { "strict" };
    let mut m = RunManifest::start("ingest", config_hash(&mode)?, None);
    for p in &loaded.inputs {
        m.input(p)?;
    }
    let samples_out = a.out.join("samples.jsonl");
    write_file(&samples_out, samples_to_jsonl(&loaded.samples))?;
    let rej_out = a.out.join("rejections.jsonl");
    let mut rej = String::new();
    for r in rejected {
        rej.push_str(&serde_json::to_string(r)?);
        rej.push('\n');
    }
    write_file(&rej_out, rej)?;
    m.output(&samples_out)?;
    m.output(&rej_out)?;
    m.write(&a.out)?;
    println!("ingested {} samples, rejected {}", loaded.samples.len(), rejected.len());
    Ok(())
}

#[derive(Serialize)]
struct RefineReportLine<'a> {
    id: &'a str,
    #[serde(flatten)]
    result: &'a crate::refine::RefineResult,
}

fn refine(a: &RefineArgs, cfg: &FileConfig, stub: bool) -> Result<()> {
    let mut section = cfg.refine.clone();
    if let Some(s) = a.style {
        section.style = s;
    }
    if let Some(r) = a.retries {
        section.retries = r;
    }
    if let Some(n) = a.in_flight {
        section.in_flight = n;
    }
    let endpoint: Box<dyn ChatEndpoint> = if stub {
        match &section.stub_file {
            Some(p) => Box::new(StubChat::from_file(p)?),
            None => Box::new(StubChat::from_env()?),
        }
    } else {
        Box::new(HttpChat::from_env(
            section.temperature,
            Duration::from_millis(section.min_interval_ms),
        )?)
    };
    let records = read_jsonl_records(&a.input)?;
    let requests: Vec<RefineRequest> = records
        .iter()
        .map(|(_, r)| {
            let mut req = RefineRequest::new(
                r.sentence.clone(),
                Triple {
                    person: (&r.person).into(),
                    time: (&r.time).into(),
                    location: (&r.location).into(),
                },
            );
            req.prompt_style = section.style;
            req.max_retries = section.retries;
            req
        })
        .collect();
    let mut m = RunManifest::start("refine", config_hash(&section)?, None);
    m.input(&a.input)?;
    let results = refine_batch(&requests, endpoint.as_ref(), section.in_flight)?;
    let mut out = String::new();
    let mut report = String::new();
    let mut fell_back = 0;
    for ((_, rec), res) in records.iter().zip(&results) {
        let mut rec = rec.clone();
        rec.refined_sentence = Some(res.refined.clone());
        // an unchanged sentence keeps its parse
        rec.refined_parse = if res.fell_back { rec.parse.clone() } else { None };
        fell_back += res.fell_back as usize;
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
        report.push_str(&serde_json::to_string(&RefineReportLine {
            id: &rec.id,
            result: res,
        })?);
        report.push('\n');
    }
    write_file(&a.out, out)?;
    let report_path = with_suffix(&a.out, ".report.jsonl");
    write_file(&report_path, report)?;
    m.output(&a.out)?;
    m.output(&report_path)?;
    m.write_file(&sidecar_manifest(&a.out))?;
    println!("refined {} sentences, {} kept the original", results.len(), fell_back);
    Ok(())
}

fn graph(a: &GraphArgs, cfg: &FileConfig) -> Result<()> {
    let loaded = load_configured(&a.data, cfg)?;
    let sample = loaded
        .samples
        .iter()
        .find(|s| s.id == a.sample)
        .ok_or_else(|| Error::validation(format!("no sample with id {:?}", a.sample)))?;
    let tc = &cfg.train;
    let tokenizer = build_tokenizer(&loaded.samples, tc)?;
    let view = sample.active(a.variant.unwrap_or(tc.variant));
    let pre = preprocess(view, &tokenizer, tc.max_len, &VerbTags::default())?;
    let mut m = RunManifest::start("graph", config_hash(tc)?, None);
    for p in &loaded.inputs {
        m.input(p)?;
    }
    write_file(&a.dot, to_dot(&sample.id, &pre.graph, &pre.alignment, &pre.subgraph))?;
    m.output(&a.dot)?;
    m.write_file(&sidecar_manifest(&a.dot))?;
    println!(
        "{}: {} tokens, {} subgraph nodes{}",
        sample.id,
        pre.alignment.len(),
        pre.subgraph.nodes.len(),
        if pre.subgraph.fallback { " (entity-only fallback)" } else { "" }
    );
    match mean_pairwise_graph_distance(&pre.graph) {
        Some(d) => println!("mean entity distance: graph {d:.2}, sentence {:.2}", mean_pairwise_token_distance(&pre.alignment)),
        None => println!("entities are not connected in the graph"),
    }
    Ok(())
}

fn train(a: &TrainArgs, cfg: &FileConfig) -> Result<()> {
    let mut tc = cfg.train.clone();
    if let Some(e) = a.epochs {
        tc.epochs = e;
    }
    if let Some(s) = a.seed {
        tc.seed = s;
    }
    if let Some(f) = a.folds {
        tc.folds = f;
    }
    if let Some(ab) = a.ablation {
        tc.ablation = ab;
    }
    tc.validate()?;
    let loaded = load_configured(&a.data, cfg)?;
    if a.f32 {
        train_with::<f32>(a, &tc, &loaded)
    } else {
        train_with::<f64>(a, &tc, &loaded)
    }
}

fn train_with<T: Scalar>(a: &TrainArgs, tc: &TrainConfig, loaded: &Loaded) -> Result<()> {
    let mut m = RunManifest::start("train", tc.hash()?, Some(tc.seed));
    for p in &loaded.inputs {
        m.input(p)?;
    }
    if let Some(v) = &tc.vocab {
        m.input(v)?;
    }
    if !a.no_cv {
        let report = run_cv::<T>(&loaded.samples, tc)?;
        for p in write_cv_report(&a.out, &report)? {
            m.output(&p)?;
        }
        let s = &report.aggregate;
        println!(
            "cv ({} folds): precision {:.4} recall {:.4} f1 {:.4}; last epoch recall {:.4}",
            report.folds.len(),
            s.precision,
            s.recall,
            s.f1,
            report.aggregate_last.recall
        );
    }
    let (ckpt, fin) = train_final::<T>(&loaded.samples, tc)?;
    let ckpt_dir = a.out.join("checkpoint");
    save_checkpoint(&ckpt_dir, &ckpt)?;
    let fin_path = a.out.join("final.json");
    write_json(&fin_path, &fin)?;
    m.output(&ckpt_dir)?;
    m.output(&fin_path)?;
    m.write(&a.out)?;
    println!(
        "checkpoint {} (train accuracy {:.4}, {} skipped)",
        ckpt_dir.display(),
        fin.train_metrics.accuracy,
        fin.skipped.len()
    );
    Ok(())
}

fn eval(a: &EvalArgs, cfg: &FileConfig) -> Result<()> {
    match read_checkpoint_manifest(&a.checkpoint)?.scalar.as_str() {
        "f32" => eval_with::<f32>(a, cfg),
        _ => eval_with::<f64>(a, cfg),
    }
}

fn eval_with<T: Scalar>(a: &EvalArgs, cfg: &FileConfig) -> Result<()> {
    let ckpt = load_checkpoint::<T>(&a.checkpoint)?;
    let loaded = load_configured(&a.data, cfg)?;
    let variant = a.variant.unwrap_or(cfg.train.variant);
    let opts = PrepareOptions::from_manifest(&ckpt.manifest, variant);
    let (prepared, skipped) = prepare_all(&loaded.samples, &ckpt.tokenizer, &opts);
    let refs: Vec<&PreparedSample> = prepared.iter().collect();
    let report = evaluate(&ckpt.model, &refs, ckpt.manifest.mode, ckpt.manifest.granularity)?;
    println!(
        "precision {:.4} recall {:.4} f1 {:.4} accuracy {:.4} on {} samples ({} skipped)",
        report.precision,
        report.recall,
        report.f1,
        report.accuracy,
        report.total,
        skipped.len()
    );
    if let Some(out) = &a.out {
        let mut m = RunManifest::start("eval", config_hash(&(variant, &ckpt.manifest))?, None);
        m.input(&a.checkpoint)?;
        for p in &loaded.inputs {
            m.input(p)?;
        }
        let metrics = out.join("metrics.json");
        write_json(&metrics, &serde_json::json!({ "report": report, "skipped": skipped }))?;
        let confusion = out.join("confusion.csv");
        write_file(&confusion, crate::train::confusion_csv(&report))?;
        m.output(&metrics)?;
        m.output(&confusion)?;
        m.write(out)?;
    }
    Ok(())
}

fn ablate(a: &AblateArgs, cfg: &FileConfig) -> Result<()> {
    let loaded = load_configured(&a.data, cfg)?;
    if a.f32 {
        ablate_with::<f32>(a, cfg, &loaded)
    } else {
        ablate_with::<f64>(a, cfg, &loaded)
    }
}

fn ablate_with<T: Scalar>(a: &AblateArgs, cfg: &FileConfig, loaded: &Loaded) -> Result<()> {
    let mut m = RunManifest::start("ablate", cfg.train.hash()?, Some(cfg.train.seed));
    for p in &loaded.inputs {
        m.input(p)?;
    }
    let mut summaries = Vec::new();
    for ablation in [Ablation::None, a.variant] {
        let tc = TrainConfig {
            ablation,
            ..cfg.train.clone()
        };
        let report = run_cv::<T>(&loaded.samples, &tc)?;
        for p in write_cv_report(&a.out.join(ablation.name()), &report)? {
            m.output(&p)?;
        }
        summaries.push(report.aggregate);
    }
    let (full, ablated) = (&summaries[0], &summaries[1]);
    let path = a.out.join("ablation.json");
    write_json(
        &path,
        &serde_json::json!({
            "ablation": a.variant.name(),
            "full": full,
            "ablated": ablated,
            "delta_f1": ablated.f1 - full.f1,
            "delta_recall": ablated.recall - full.recall,
        }),
    )?;
    m.output(&path)?;
    m.write(&a.out)?;
    println!(
        "full f1 {:.4}, {} f1 {:.4} ({:+.4})",
        full.f1,
        a.variant.name(),
        ablated.f1,
        ablated.f1 - full.f1
    );
    Ok(())
}

/// Ids already in a tuple file. A torn last line from an interrupted run is dropped.
fn existing_ids(path: &Path) -> Result<HashSet<String>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(HashSet::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut ids = HashSet::new();
    for (i, line) in lines.iter().enumerate() {
        match serde_json::from_str::<LabeledTuple>(line) {
            Ok(t) => {
                ids.insert(t.source_sample_id);
            }
            Err(_) if i + 1 == lines.len() => {
                log::warn!("dropping incomplete last line of {}", path.display());
                let mut kept = lines[..i].join("\n");
                if !kept.is_empty() {
                    kept.push('\n');
                }
                write_file(path, kept)?;
            }
            Err(e) => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("{}: {e}", path.display()),
                })
            }
        }
    }
    Ok(ids)
}

fn read_tuples(path: &Path) -> Result<Vec<LabeledTuple>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn write_tuples(path: &Path, tuples: &[LabeledTuple]) -> Result<()> {
    let mut text = String::new();
    for t in tuples {
        text.push_str(&serde_json::to_string(t)?);
        text.push('\n');
    }
    let tmp = with_suffix(path, ".tmp");
    write_file(&tmp, text)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn geocoder(section: &ClassifySection, out: &Path, stub: bool) -> Result<Geocoder> {
    let backend: Box<dyn GeocodeBackend> = match (&section.gazetteer, stub) {
        (Some(p), _) => Box::new(GazetteerBackend::from_file(p)?),
        (None, true) => {
            let p = std::env::var("LTC_GEOCODER_STUB_FILE").map_err(|_| {
                Error::Config("--stub geocoding needs [classify].gazetteer or LTC_GEOCODER_STUB_FILE".into())
            })?;
            Box::new(GazetteerBackend::from_file(Path::new(&p))?)
        }
        (None, false) => Box::new(HttpGeocoder::from_env(Duration::from_millis(section.min_interval_ms))?),
    };
    let cache = section
        .geocode_cache
        .clone()
        .unwrap_or_else(|| with_suffix(out, ".geocache.json"));
    Geocoder::new(backend, Some(cache))
}

fn classify(a: &ClassifyArgs, cfg: &FileConfig, stub: bool) -> Result<()> {
    match read_checkpoint_manifest(&a.checkpoint)?.scalar.as_str() {
        "f32" => classify_with::<f32>(a, cfg, stub),
        _ => classify_with::<f64>(a, cfg, stub),
    }
}

fn classify_with<T: Scalar>(a: &ClassifyArgs, cfg: &FileConfig, stub: bool) -> Result<()> {
    let mut section = cfg.classify.clone();
    if let Some(c) = a.chunk {
        section.chunk = c;
    }
    if let Some(v) = a.variant {
        section.variant = v;
    }
    section.geocode |= a.geocode;
    let ckpt = load_checkpoint::<T>(&a.checkpoint)?;
    let loaded = load(&a.input, a.parses.as_deref())?;
    let mut m = RunManifest::start("classify", config_hash(&(&section, &ckpt.manifest))?, None);
    m.input(&a.checkpoint)?;
    for p in &loaded.inputs {
        m.input(p)?;
    }

    let done = if a.resume { existing_ids(&a.out)? } else { HashSet::new() };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(a.resume)
        .truncate(!a.resume)
        .open(&a.out)
        .map_err(|e| Error::io(&a.out, e))?;
    let mut sink = LineWriter::new(file);
    let mut stats = classify_corpus(&loaded.samples, &ckpt, section.variant, &done, section.chunk, |t| {
        let line = serde_json::to_string(t)?;
        writeln!(sink, "{line}").map_err(|e| Error::io(&a.out, e))
    })?;
    sink.flush().map_err(|e| Error::io(&a.out, e))?;
    drop(sink);
    stats.inputs += loaded.report.rejections.len();
    stats
        .failed
        .extend(loaded.report.rejections.iter().map(|r| crate::train::Skipped {
            id: r.id.clone().unwrap_or_else(|| format!("line {}", r.line)),
            reason: r.reason.clone(),
        }));

    let geocode_stats = if section.geocode {
        let geo = geocoder(&section, &a.out, stub)?;
        let mut tuples = read_tuples(&a.out)?;
        let mut pending: Vec<LabeledTuple> = Vec::new();
        let mut slots = Vec::new();
        for (i, t) in tuples.iter().enumerate() {
            if t.latitude.is_none() && !t.location.trim().is_empty() {
                slots.push(i);
                pending.push(t.clone());
            }
        }
        let gs = geocode_tuples(&mut pending, &geo, section.workers)?;
        for (i, t) in slots.into_iter().zip(pending) {
            tuples[i] = t;
        }
        write_tuples(&a.out, &tuples)?;
        Some(gs)
    } else {
        None
    };

    let report_path = with_suffix(&a.out, ".report.json");
    write_json(&report_path, &serde_json::json!({ "classify": stats, "geocode": geocode_stats }))?;
    m.output(&a.out)?;
    m.output(&report_path)?;
    m.write_file(&sidecar_manifest(&a.out))?;
    println!(
        "labeled {} samples ({} resumed, {} failed, {} without a year)",
        stats.emitted,
        stats.resumed,
        stats.failed.len(),
        stats.year_missing.len()
    );
    Ok(())
}

fn analyze(a: &AnalyzeArgs, cfg: &FileConfig) -> Result<()> {
    let s = &cfg.analyze;
    let tuples_path = a
        .tuples
        .as_ref()
        .or(s.tuples.as_ref())
        .ok_or_else(|| Error::Config("no tuples given; pass --tuples or set [analyze].tuples".into()))?;
    if s.width <= 0 || s.age_width == 0 {
        return Err(Error::Config("bin widths must be positive".into()));
    }
    if s.year_min > s.year_max {
        return Err(Error::Config("year_min exceeds year_max".into()));
    }
    let tuples = read_tuples(tuples_path)?;
    let timelines = build_timelines(&tuples, s.min_tuples);
    let mut m = RunManifest::start(&format!("analyze {}", a.kind.name()), config_hash(s)?, None);
    m.input(tuples_path)?;
    let mut outputs: Vec<PathBuf> = Vec::new();
    let mut emit = |name: &str, contents: String| -> Result<()> {
        let p = a.out.join(name);
        write_file(&p, contents)?;
        outputs.push(p);
        Ok(())
    };
    match a.kind {
        AnalysisKind::Ratios => {
            let kept: Vec<LabeledTuple> = timelines.iter().flat_map(|t| t.tuples.iter().cloned()).collect();
            let series: Vec<(String, Vec<analytics::RatioPoint>)> = s
                .series
                .iter()
                .map(|(name, types)| (name.clone(), type_ratio_series(&kept, types, s.year_min, s.year_max, s.width)))
                .collect();
            emit("ratios.csv", analytics::ratios_csv(&series))?;
            let correlation = match &s.correlate {
                Some((x, y)) => {
                    let find = |n: &str| {
                        series
                            .iter()
                            .find(|(name, _)| name == n)
                            .map(|(_, v)| v)
                            .ok_or_else(|| Error::Config(format!("correlate names unknown series {n:?}")))
                    };
                    let (xs, ys) = paired_nonempty(find(x)?, find(y)?, s.correlate_from, s.correlate_to);
                    let n = xs.len();
                    match pearson(&xs, &ys) {
                        Ok((r, p)) => serde_json::json!({ "x": x, "y": y, "n": n, "r": r, "p": p }),
                        Err(e) => serde_json::json!({ "x": x, "y": y, "n": n, "undefined": e.to_string() }),
                    }
                }
                None => serde_json::Value::Null,
            };
            if let Some(r) = correlation.get("r") {
                println!("pearson r = {r}");
            }
            emit(
                "ratios.json",
                serde_json::to_string_pretty(&serde_json::json!({ "series": series, "correlation": correlation }))?,
            )?;
        }
        AnalysisKind::Departures => {
            let home = s
                .home_country
                .as_deref()
                .ok_or_else(|| Error::Config("departures need [analyze].home_country".into()))?;
            let d = departure_ratio_series(&timelines, home, s.top_n, s.min_travel_km, s.year_min, s.year_max, s.width);
            emit("departures.csv", d.to_csv())?;
            emit("departures.json", serde_json::to_string_pretty(&d)?)?;
        }
        AnalysisKind::Lifestages => {
            let h = life_stage_histogram(&timelines, s.age_width);
            emit("lifestages.csv", h.to_csv())?;
            emit("lifestages.json", serde_json::to_string_pretty(&h)?)?;
        }
        AnalysisKind::Distances => {
            let mut summary = Vec::new();
            for &t in &s.distance_types {
                let d = birth_distance_distribution(&timelines, t);
                emit(&format!("distances_{}.csv", t.name().replace(' ', "_")), d.to_csv())?;
                summary.push(serde_json::json!({
                    "type": t, "count": d.distances.len(), "mean_km": d.mean, "skipped": d.skipped
                }));
            }
            emit("distances.json", serde_json::to_string_pretty(&summary)?)?;
        }
    }
    for p in &outputs {
        m.output(p)?;
    }
    m.write_file(&a.out.join(format!("{}.manifest.json", a.kind.name())))?;
    println!("{} persons analysed, wrote {} files to {}", timelines.len(), outputs.len(), a.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn help_and_usage_exit_codes() {
        assert_eq!(main_with_args(["ltc", "--help"]), 0);
        assert_eq!(main_with_args(["ltc", "frobnicate"]), 1);
        assert_eq!(main_with_args(["ltc", "ablate", "--variant", "no-such"]), 1);
    }

    #[test]
    fn missing_config_is_a_validation_failure() {
        assert_eq!(main_with_args(["ltc", "train", "--config", "/nonexistent/missing.cfg"]), 1);
    }

    #[test]
    fn sidecar_names() {
        assert_eq!(sidecar_manifest(Path::new("a/t.jsonl")), Path::new("a/t.jsonl.manifest.json"));
        assert_eq!(parse_kebab::<DatasetVariant>("llm-refined"), Ok(DatasetVariant::LlmRefined));
    }

    #[test]
    fn torn_last_line_is_dropped_on_resume() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        let t = LabeledTuple {
            person: "A".into(),
            year: Some(1900),
            time: "1900".into(),
            location: "X".into(),
            latitude: None,
            longitude: None,
            country: None,
            activity: crate::taxonomy::ActivityType::Birth,
            source_sample_id: "s1".into(),
        };
        fs::write(&p, format!("{}\n{{\"person\":", serde_json::to_string(&t).unwrap())).unwrap();
        let ids = existing_ids(&p).unwrap();
        assert_eq!(ids, HashSet::from(["s1".to_string()]));
        assert_eq!(read_tuples(&p).unwrap(), vec![t]);
    }
}
