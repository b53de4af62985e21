use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use logcompass::block_metrics::{read_metrics_csv, MeanN};
use logcompass::crown_graph::GraphFormat;
use logcompass::log_ingest::{FilterRules, FilterSpec, ItemCount, LogFormat};
use logcompass::pipeline::{self as pl, ArtifactWriter, PipelineConfig, PipelineError};
use logcompass::routes::{self, read_routes_csv, RouteGrouping};
use logcompass::synth::{generate_logs, SynthProfile};
use logcompass::taxonomy::ClassifierConfig;

#[derive(Parser)]
#[command(name = "logcompass", version, about = "Access logs to compass-graph analytics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and sessionize logs into sessions.csv.
    Ingest {
        #[command(flatten)]
        ingest: IngestArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Block metrics from sessions.csv.
    Metrics {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        blocks: BlockArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Compass types from metrics.csv.
    Classify {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        classifier: ClassifierArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Routes from classifications.csv.
    Routes {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        routing: RouteArgs,
        /// sessions.csv, needed for per-user routes.
        #[arg(long)]
        sessions: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        block_size: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Communities from routes.csv.
    Communities {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        linkage: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Export the compass graph, optionally weighted by routes.csv.
    Graph {
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        graph: GraphArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Write a synthetic log.
    Synth {
        /// TOML profile; the built-in mostly-one profile when absent.
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        blocks: Option<u64>,
        #[arg(long)]
        sessions_per_block: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// All stages, end to end.
    Run {
        #[command(flatten)]
        ingest: IngestArgs,
        #[command(flatten)]
        blocks: BlockArgs,
        #[command(flatten)]
        classifier: ClassifierArgs,
        #[command(flatten)]
        routing: RouteArgs,
        #[arg(long, default_value_t = 2.0)]
        linkage: f64,
        #[command(flatten)]
        graph: GraphArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Summarize the artifacts of a run.
    Report {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::A)]
    format: Format,
    #[arg(long, default_value_t = 1800)]
    gap_seconds: u64,
    /// Drop events whose source tag matches this regex; repeatable.
    #[arg(long)]
    deny: Vec<String>,
    /// Keep only items matching this regex.
    #[arg(long)]
    allow_items: Option<String>,
    /// TOML file with `deny = [...]` and `allow_items = "..."`.
    #[arg(long)]
    filters: Option<PathBuf>,
    /// Count every request toward K, not just distinct items.
    #[arg(long)]
    raw_k: bool,
}

#[derive(Args)]
struct BlockArgs {
    #[arg(long, default_value_t = 10_000)]
    block_size: usize,
    #[arg(long, value_enum, default_value_t = MeanNArg::Distinct)]
    mean_n: MeanNArg,
}

#[derive(Args)]
struct ClassifierArgs {
    #[arg(long, default_value_t = 0.25)]
    z: f64,
    #[arg(long, default_value_t = 0.25)]
    epsilon: f64,
}

#[derive(Args)]
struct RouteArgs {
    #[arg(long, value_enum, default_value_t = Grouping::Stream)]
    grouping: Grouping,
}

#[derive(Args)]
struct GraphArgs {
    /// Repeatable; all three formats when absent.
    #[arg(long, value_enum)]
    export: Vec<Export>,
    #[arg(long, value_enum, default_value_t = Weights::Uniform)]
    weights: Weights,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    #[value(alias = "delimited")]
    A,
    #[value(alias = "structured")]
    B,
}

#[derive(Clone, Copy, ValueEnum)]
enum MeanNArg {
    Distinct,
    Weighted,
}

#[derive(Clone, Copy, ValueEnum)]
enum Grouping {
    Stream,
    User,
}

#[derive(Clone, Copy, ValueEnum)]
enum Export {
    Dot,
    Graphml,
    Canonical,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Weights {
    Uniform,
    Transitions,
}

impl IngestArgs {
    fn filters(&self) -> Result<FilterRules, PipelineError> {
        let config = |e: &dyn std::fmt::Display| PipelineError::Config(e.to_string());
        let mut spec = match &self.filters {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| config(&format!("{}: {e}", p.display())))?;
                toml::from_str::<FilterSpec>(&text).map_err(|e| config(&e))?
            }
            None => FilterSpec::default(),
        };
        spec.deny.extend(self.deny.iter().cloned());
        if self.allow_items.is_some() {
            spec.allow_items = self.allow_items.clone();
        }
        FilterRules::from_spec(&spec).map_err(|e| config(&e))
    }

    fn format(&self) -> LogFormat {
        match self.format {
            Format::A => LogFormat::Delimited,
            Format::B => LogFormat::Structured,
        }
    }

    fn item_count(&self) -> ItemCount {
        if self.raw_k {
            ItemCount::Raw
        } else {
            ItemCount::Distinct
        }
    }

    fn gap(&self) -> Result<Duration, PipelineError> {
        if self.gap_seconds == 0 {
            return Err(PipelineError::Config("gap must be positive".into()));
        }
        Ok(Duration::from_secs(self.gap_seconds))
    }
}

impl MeanNArg {
    fn policy(self) -> MeanN {
        match self {
            MeanNArg::Distinct => MeanN::DistinctK,
            MeanNArg::Weighted => MeanN::SessionWeighted,
        }
    }
}

impl ClassifierArgs {
    fn config(&self) -> ClassifierConfig {
        ClassifierConfig { z: self.z, epsilon: self.epsilon, ..ClassifierConfig::default() }
    }
}

impl Grouping {
    fn grouping(self) -> RouteGrouping {
        match self {
            Grouping::Stream => RouteGrouping::Stream,
            Grouping::User => RouteGrouping::User,
        }
    }
}

impl GraphArgs {
    fn formats(&self) -> Vec<GraphFormat> {
        if self.export.is_empty() {
            return vec![GraphFormat::Dot, GraphFormat::GraphMl, GraphFormat::Canonical];
        }
        self.export
            .iter()
            .map(|e| match e {
                Export::Dot => GraphFormat::Dot,
                Export::Graphml => GraphFormat::GraphMl,
                Export::Canonical => GraphFormat::Canonical,
            })
            .collect()
    }
}

fn open(path: &Path, stage: &'static str) -> Result<BufReader<File>, PipelineError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| PipelineError::Input { stage, message: format!("{}: {e}", path.display()) })
}

fn bad_input(stage: &'static str) -> impl Fn(&dyn std::fmt::Display) -> PipelineError {
    move |e| PipelineError::Input { stage, message: e.to_string() }
}

fn execute(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Ingest { ingest, out } => {
            let (sessions, diagnostics) =
                pl::ingest(&ingest.input, ingest.format(), &ingest.filters()?, ingest.gap()?, ingest.item_count())?;
            if sessions.is_empty() {
                return Err(PipelineError::Input { stage: "ingest", message: "no sessions".into() });
            }
            let mut w = ArtifactWriter::new(&out)?;
            w.write(pl::SESSIONS_FILE, |f| pl::write_sessions_csv(f, &sessions).map_err(|e| e.to_string()))?;
            w.write(pl::DIAGNOSTICS_FILE, |f| {
                diagnostics.iter().try_for_each(|d| writeln!(f, "{d}")).map_err(|e| e.to_string())
            })?;
            println!("sessions: {}", sessions.len());
            println!("skipped lines: {}", diagnostics.len());
        }
        Command::Metrics { input, blocks, out } => {
            let records = pl::read_sessions_csv(open(&input, "metrics")?).map_err(|e| bad_input("metrics")(&e))?;
            let ks: Vec<u32> = records.iter().map(|r| r.k_items).collect();
            let metrics = pl::metrics_for_k_values(&ks, blocks.block_size, blocks.mean_n.policy())?;
            let mut w = ArtifactWriter::new(&out)?;
            w.write(pl::METRICS_FILE, |f| logcompass::block_metrics::write_metrics_csv(f, &metrics).map_err(|e| e.to_string()))?;
            w.write(pl::METRICS_JSONL_FILE, |f| {
                logcompass::block_metrics::write_metrics_jsonl(f, &metrics).map_err(|e| e.to_string())
            })?;
            println!("blocks: {}", metrics.len());
        }
        Command::Classify { input, classifier, out } => {
            let metrics = read_metrics_csv(open(&input, "classify")?).map_err(|e| bad_input("classify")(&e))?;
            let cs = pl::classify(&metrics, &classifier.config())?;
            ArtifactWriter::new(&out)?
                .write(pl::CLASSIFICATIONS_FILE, |f| pl::write_classifications_csv(f, &cs).map_err(|e| e.to_string()))?;
            println!("classified blocks: {}", cs.len());
        }
        Command::Routes { input, routing, sessions, block_size, out } => {
            let cs = pl::read_classifications_csv(open(&input, "routes")?).map_err(|e| bad_input("routes")(&e))?;
            let grouping = routing.grouping.grouping();
            let users = match (&sessions, grouping) {
                (Some(p), _) => pl::read_sessions_csv(open(p, "routes")?)
                    .map_err(|e| bad_input("routes")(&e))?
                    .into_iter()
                    .map(|r| r.user_hash)
                    .collect(),
                (None, RouteGrouping::User) => {
                    return Err(PipelineError::Config("per-user routes need --sessions".into()));
                }
                (None, RouteGrouping::Stream) => Vec::new(),
            };
            if block_size == 0 {
                return Err(PipelineError::Config("block size must be at least 1".into()));
            }
            let rs = pl::routes_for(&cs, grouping, users.iter().map(String::as_str), block_size)?;
            ArtifactWriter::new(&out)?.write(pl::ROUTES_FILE, |f| routes::write_routes_csv(f, &rs).map_err(|e| e.to_string()))?;
            println!("routes: {}", rs.len());
        }
        Command::Communities { input, linkage, out } => {
            let rs = read_routes_csv(open(&input, "communities")?).map_err(|e| bad_input("communities")(&e))?;
            let cs = routes::detect_communities(&rs, linkage).map_err(|e| PipelineError::Config(e.to_string()))?;
            ArtifactWriter::new(&out)?
                .write(pl::COMMUNITIES_FILE, |f| routes::write_communities_csv(f, &cs).map_err(|e| e.to_string()))?;
            println!("communities: {}", cs.len());
        }
        Command::Graph { input, graph, out } => {
            let rs = match &input {
                Some(p) => read_routes_csv(open(p, "graph")?).map_err(|e| bad_input("graph")(&e))?,
                None if graph.weights == Weights::Transitions => {
                    return Err(PipelineError::Config("transition weights need --input routes.csv".into()));
                }
                None => Vec::new(),
            };
            let g = pl::compass_for(&rs, graph.weights == Weights::Transitions)?;
            for format in graph.formats() {
                println!("{}", pl::export_graph(&g, format, &out)?.display());
            }
        }
        Command::Synth { profile, seed, blocks, sessions_per_block, out } => {
            let mut p = match &profile {
                Some(path) => {
                    let text = fs::read_to_string(path)
                        .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
                    SynthProfile::from_toml_str(&text).map_err(|e| PipelineError::Config(e.to_string()))?
                }
                None => SynthProfile::default(),
            };
            p.seed = seed.unwrap_or(p.seed);
            p.n_blocks = blocks.unwrap_or(p.n_blocks);
            p.sessions_per_block = sessions_per_block.unwrap_or(p.sessions_per_block);
            p.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
            let file = File::create(&out)
                .map_err(|e| PipelineError::Input { stage: "synth", message: format!("{}: {e}", out.display()) })?;
            let mut w = BufWriter::with_capacity(1 << 20, file);
            let summary = generate_logs(&p, &mut w)
                .and_then(|s| w.flush().map(|_| s).map_err(Into::into))
                .map_err(|e| {
                    let _ = fs::remove_file(&out);
                    PipelineError::Input { stage: "synth", message: e.to_string() }
                })?;
            println!("sessions: {}", summary.sessions);
            println!("events: {}", summary.events);
        }
        Command::Run { ingest, blocks, classifier, routing, linkage, graph, out } => {
            let cfg = PipelineConfig {
                inputs: ingest.input.clone(),
                format: ingest.format(),
                filters: ingest.filters()?,
                gap: ingest.gap()?,
                item_count: ingest.item_count(),
                block_size: blocks.block_size,
                mean_n: blocks.mean_n.policy(),
                classifier: classifier.config(),
                grouping: routing.grouping.grouping(),
                linkage,
                transition_weights: graph.weights == Weights::Transitions,
                out_dir: out,
                graph_formats: graph.formats(),
            };
            let outputs = pl::run_pipeline(&cfg)?;
            print!("{}", outputs.report.render());
        }
        Command::Report { out } => {
            print!("{}", pl::report_stats(&out)?.render());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
