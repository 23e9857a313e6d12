use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use uniparse::corpus::{evaluate, gen_corpus, save_corpus, CorpusSpec, GroundTruth, TRUTH_FILE};
use uniparse::docmodel::{load_document, DocumentIr};
use uniparse::engine::prepare_document;
use uniparse::experts::{spawn_echo_server, Modality};
use uniparse::format::{chunk, from_structured, to_html, to_markdown, to_structured};
use uniparse::runtime::{
    bubble_report, compare_modes, run_pipeline, simulate, simulate_scaling, Mode, PipelineConfig, RuntimeError,
    Workload,
};
use uniparse::{ConfigOverrides, ParsedDocument};

const EXIT_ERROR: u8 = 1;
const EXIT_STRICT: u8 = 2;
const EXIT_USAGE: u8 = 64;

/// Document parsing engine and scheduling simulator.
///
/// Exit codes: 0 success, 1 error, 2 strict-mode task failure, 64 usage error.
#[derive(Debug, Parser)]
#[command(name = "uniparse", version)]
struct Cli {
    /// Flat TOML file of threshold overrides (falls back to $UNIPARSE_CONFIG).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed for every random choice made by the command [default: 0, or the corpus spec's own seed].
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse an IR document, or every document in a directory.
    Parse(ParseArgs),
    /// Run a workload on the virtual clock and report metrics.
    Simulate(SimulateArgs),
    /// Compare schedules and worker counts on the reference workloads.
    Bench(BenchArgs),
    /// Generate a synthetic corpus with ground truth.
    GenCorpus(GenCorpusArgs),
    /// Score parsed documents against corpus ground truth.
    Eval(EvalArgs),
    /// Serve the expert wire protocol by echoing request truth back.
    ServeEcho(ServeEchoArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Structured,
    Markdown,
    Html,
    Chunks,
}

impl Format {
    fn extension(self) -> &'static str {
        match self {
            Format::Structured => "json",
            Format::Markdown => "md",
            Format::Html => "html",
            Format::Chunks => "jsonl",
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Emit {
    /// Serialized layout tree of every page.
    Layout,
    /// Unit ids in reading order, one per line, pages separated by a header line.
    Order,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Report {
    Text,
    Json,
}

#[derive(Debug, Args)]
struct ParseArgs {
    /// IR file or directory of IR files.
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Structured)]
    format: Format,
    /// Emit an intermediate result instead of the parsed output.
    #[arg(long, value_enum)]
    emit: Option<Emit>,
    /// Parse only this modality; everything else passes through unparsed.
    #[arg(long, value_name = "MODALITY", value_parser = parse_modality)]
    only_modality: Option<Modality>,
    /// Exit with code 2 when any expert task fails.
    #[arg(long)]
    strict: bool,
    #[arg(long, default_value = "pipe", value_parser = parse_mode)]
    mode: Mode,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Output file (directory for directory input); stdout when omitted.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, default_value = "pipe", value_parser = parse_mode)]
    mode: Mode,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    /// Corpus directory; the generated reference workload when omitted.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Report::Text)]
    report: Report,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Throughput, latency and bubble fraction for each schedule.
    #[arg(long)]
    compare_modes: bool,
    /// Throughput at each worker count on a contention-free workload.
    #[arg(long, value_delimiter = ',', value_name = "N,N,..")]
    scaling: Option<Vec<usize>>,
    /// Idle fraction of every stage under each schedule.
    #[arg(long)]
    bubbles: bool,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Report::Text)]
    report: Report,
}

#[derive(Debug, Args)]
struct GenCorpusArgs {
    /// JSON or TOML corpus spec; defaults apply to absent keys.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Directory of structured outputs.
    #[arg(long)]
    pred: PathBuf,
    /// Corpus directory or truth file.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, value_enum, default_value_t = Report::Text)]
    report: Report,
}

#[derive(Debug, Args)]
struct ServeEchoArgs {
    /// 0 picks a free port; the bound endpoint is printed on stdout.
    #[arg(long, default_value_t = 0)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

fn parse_modality(s: &str) -> Result<Modality, String> {
    s.parse()
}

/// Strict-mode failure, kept apart from ordinary errors for the exit code.
#[derive(Debug)]
struct StrictFailure(String);

impl std::fmt::Display for StrictFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "strict mode: document {} has failed tasks", self.0)
    }
}

impl std::error::Error for StrictFailure {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<StrictFailure>().is_some() {
                ExitCode::from(EXIT_STRICT)
            } else {
                ExitCode::from(EXIT_ERROR)
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let overrides = load_overrides(cli.config.as_deref())?;
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Parse(a) => cmd_parse(a, &overrides, seed),
        Command::Simulate(a) => cmd_simulate(a, &overrides, seed),
        Command::Bench(a) => cmd_bench(a, &overrides, seed),
        Command::GenCorpus(a) => cmd_gen_corpus(a, cli.seed),
        Command::Eval(a) => cmd_eval(a),
        Command::ServeEcho(a) => cmd_serve_echo(a),
    }
}

fn load_overrides(path: Option<&Path>) -> Result<ConfigOverrides> {
    let path = match path {
        Some(p) => p.to_path_buf(),
        None => match std::env::var_os("UNIPARSE_CONFIG") {
            Some(p) if !p.is_empty() => PathBuf::from(p),
            _ => return Ok(ConfigOverrides::default()),
        },
    };
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

fn pipeline(mode: Mode, workers: usize, overrides: &ConfigOverrides, seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(mode, workers).with_seed(seed);
    cfg.apply_overrides(overrides);
    cfg
}

fn write_out(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(stdout.flush()?)
        }
    }
}

fn is_json(p: &Path) -> bool {
    p.extension().is_some_and(|e| e == "json") && p.file_name().is_some_and(|n| n != TRUTH_FILE)
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| is_json(p));
    files.sort();
    Ok(files)
}

fn load_inputs(input: &Path) -> Result<Vec<DocumentIr>> {
    if !input.exists() {
        bail!("input {} does not exist", input.display());
    }
    let files = if input.is_dir() { json_files(input)? } else { vec![input.to_path_buf()] };
    files
        .iter()
        .map(|f| load_document(f).with_context(|| format!("loading {}", f.display())))
        .collect()
}

fn render(doc: &ParsedDocument, format: Format, max_tokens: usize) -> String {
    match format {
        Format::Structured => to_structured(doc),
        Format::Markdown => to_markdown(doc),
        Format::Html => to_html(doc),
        Format::Chunks => {
            #[derive(Serialize)]
            struct Record<'a> {
                chunk_id: &'a str,
                section_path: &'a [String],
                text: &'a str,
                token_estimate: usize,
            }
            let mut s = String::new();
            for c in chunk(doc, max_tokens) {
                let r = Record {
                    chunk_id: &c.chunk_id,
                    section_path: &c.section_path,
                    text: &c.text,
                    token_estimate: c.token_estimate,
                };
                s += &serde_json::to_string(&r).expect("chunk record serializes");
                s.push('\n');
            }
            s
        }
    }
}

fn emit(doc: &DocumentIr, what: Emit, cfg: &PipelineConfig) -> String {
    let plan = prepare_document(doc, &cfg.engine, &cfg.policy());
    match what {
        Emit::Layout => {
            let trees: Vec<_> = plan.pages.iter().map(|p| &p.tree).collect();
            serde_json::to_string_pretty(&trees).expect("layout serializes") + "\n"
        }
        Emit::Order => {
            let mut s = String::new();
            for p in &plan.pages {
                let _ = writeln!(s, "# page {}", p.page_index);
                for u in &p.units {
                    let _ = writeln!(s, "{}", u.unit_id);
                }
            }
            s
        }
    }
}

fn cmd_parse(a: ParseArgs, overrides: &ConfigOverrides, seed: u64) -> Result<()> {
    let docs = load_inputs(&a.input)?;
    let mut cfg = pipeline(a.mode, a.workers, overrides, seed);
    cfg.strict = a.strict;
    cfg.only_modality = a.only_modality;

    let texts: Vec<(String, String)> = match a.emit {
        Some(what) => docs.iter().map(|d| (d.doc_id.clone(), emit(d, what, &cfg))).collect(),
        None => {
            let out = run_pipeline(&docs, &cfg).map_err(|e| match e {
                RuntimeError::StrictModeFailure(id) => anyhow::Error::new(StrictFailure(id)),
                e => e.into(),
            })?;
            out.outputs
                .iter()
                .map(|d| (d.doc_id.clone(), render(d, a.format, cfg.engine.max_tokens)))
                .collect()
        }
    };

    if a.input.is_dir() {
        match &a.out {
            Some(dir) => {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                let ext = if a.emit.is_some() { "txt" } else { a.format.extension() };
                for (id, text) in &texts {
                    write_out(Some(&dir.join(format!("{id}.{ext}"))), text)?;
                }
                Ok(())
            }
            None => write_out(None, &texts.into_iter().map(|(_, t)| t).collect::<String>()),
        }
    } else {
        write_out(a.out.as_deref(), &texts[0].1)
    }
}

fn workload(corpus: Option<&Path>, mode: Mode, workers: usize, overrides: &ConfigOverrides, seed: u64) -> Result<Workload> {
    let mut w = Workload::reference(seed);
    if let Some(dir) = corpus {
        w.name = dir.display().to_string();
        w.docs = load_inputs(dir)?;
    }
    w.config = pipeline(mode, workers, overrides, seed);
    Ok(w)
}

fn cmd_simulate(a: SimulateArgs, overrides: &ConfigOverrides, seed: u64) -> Result<()> {
    let w = workload(a.corpus.as_deref(), a.mode, a.workers, overrides, seed)?;
    let m = simulate(&w.docs, &w.config)?.metrics;
    let text = match a.report {
        Report::Json => m.to_json(),
        Report::Text => {
            let mut s = format!(
                "mode {} workers {} pages {}\nthroughput {:.3} pages/s  wall {:.1} ms  mean latency {:.1} ms  bubble {:.3}\n",
                a.mode.as_str(),
                m.workers,
                w.pages(),
                m.throughput_pps,
                m.wall_ms(),
                m.mean_latency_ms(),
                m.bubble_fraction
            );
            for st in &m.per_stage {
                let _ = writeln!(s, "  {:<12} bubble {:.3}", format!("{:?}", st.stage).to_lowercase(), st.bubble_fraction);
            }
            s
        }
    };
    write_out(None, &text)
}

fn cmd_bench(a: BenchArgs, overrides: &ConfigOverrides, seed: u64) -> Result<()> {
    let compare = a.compare_modes || (a.scaling.is_none() && !a.bubbles);
    let w = workload(a.corpus.as_deref(), Mode::PipelineParallel, a.workers, overrides, seed)?;
    let mut json = serde_json::Map::new();
    let mut text = String::new();

    if compare {
        let rows = compare_modes(&w)?;
        let _ = writeln!(text, "{:<6}{:>8}{:>14}{:>12}{:>14}{:>10}", "mode", "workers", "pages/s", "wall ms", "latency ms", "bubble");
        for r in &rows {
            let _ = writeln!(
                text,
                "{:<6}{:>8}{:>14.3}{:>12.1}{:>14.1}{:>10.3}",
                r.mode.as_str(),
                r.workers,
                r.throughput_pps,
                r.wall_ms,
                r.mean_latency_ms,
                r.bubble_fraction
            );
        }
        json.insert("compare_modes".into(), serde_json::to_value(&rows)?);
    }
    if a.bubbles {
        let report = bubble_report(&w)?;
        text += &report.table();
        json.insert("bubbles".into(), serde_json::to_value(&report)?);
    }
    if let Some(counts) = &a.scaling {
        if counts.is_empty() || counts.contains(&0) {
            bail!("--scaling needs positive worker counts");
        }
        let mut cf = Workload::contention_free(seed, w.docs.len().min(40));
        cf.config.apply_overrides(overrides);
        let curve = simulate_scaling(&cf, counts)?;
        for p in &curve.points {
            let _ = writeln!(text, "workers {:>3}  {:>10.3} pages/s", p.workers, p.throughput_pps);
        }
        let _ = writeln!(text, "r2 {:.4}  efficiency {:.3}", curve.r_squared, curve.efficiency);
        json.insert("scaling".into(), serde_json::to_value(&curve)?);
    }
    match a.report {
        Report::Json => write_out(None, &(serde_json::to_string_pretty(&json)? + "\n")),
        Report::Text => write_out(None, &text),
    }
}

fn cmd_gen_corpus(a: GenCorpusArgs, seed: Option<u64>) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            if p.extension().is_some_and(|e| e == "toml") {
                toml::from_str(&text).with_context(|| format!("invalid spec {}", p.display()))?
            } else {
                serde_json::from_str(&text).with_context(|| format!("invalid spec {}", p.display()))?
            }
        }
        None => CorpusSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let (docs, truth) = gen_corpus(&spec)?;
    save_corpus(&docs, &truth, &a.out)?;
    eprintln!("wrote {} documents ({} pages) to {}", docs.len(), truth.pages(), a.out.display());
    Ok(())
}

fn load_outputs(dir: &Path) -> Result<Vec<ParsedDocument>> {
    json_files(dir)?
        .iter()
        .map(|f| {
            let text = std::fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?;
            from_structured(&text).with_context(|| format!("parsing {}", f.display()))
        })
        .collect()
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    if !a.pred.is_dir() {
        bail!("prediction directory {} does not exist", a.pred.display());
    }
    let outputs = load_outputs(&a.pred)?;
    let truth: GroundTruth = uniparse::corpus::load_truth(&a.truth)?;
    let r = evaluate(&outputs, &truth);
    let text = match a.report {
        Report::Json => r.to_json(),
        Report::Text => format!(
            "docs {} pages {} missing {}\nedit distance {:.4}\ngrouping p {:.3} r {:.3} f1 {:.3}\ninline {}/{} placed\ntokens {}/{} resolved\n",
            r.docs,
            r.pages,
            r.missing_docs.len(),
            r.mean_edit_distance,
            r.grouping.precision,
            r.grouping.recall,
            r.grouping.f1,
            r.inline.placed,
            r.inline.expected,
            r.tokens_resolved,
            r.tokens_emitted
        ),
    };
    write_out(None, &text)
}

fn cmd_serve_echo(a: ServeEchoArgs) -> Result<()> {
    let server = spawn_echo_server((a.host, a.port).into()).context("binding echo server")?;
    write_out(None, &format!("{}\n", server.endpoint()))?;
    server.join();
    Ok(())
}
