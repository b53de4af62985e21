//! End-to-end runs and the artifact files each stage reads and writes.
//!
//! A full run writes, in order: `sessions.csv`, `diagnostics.txt`,
//! `metrics.csv`, `metrics.jsonl`, `classifications.csv`, `routes.csv`,
//! `communities.csv`, the compass exports (`compass.dot`, `compass.graphml`,
//! `compass.txt`) and `report.txt`. All stages are computed before the first
//! file is written; if writing fails midway, files already written are
//! removed.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block_metrics::{
    self, block_metrics, compute_block_means, compute_variety_series, partition_blocks, BlockMetrics, MeanN,
    UsageHistogram,
};
use crate::crown_graph::{self, build_base_graph, CrownGraph, EdgeWeighting, GraphFormat};
use crate::log_ingest::{self, filter_events, parse_events, sessionize, Diagnostic, FilterRules, ItemCount, LogFormat, Session};
use crate::routes::{
    self, build_transition_graph, detect_communities, extract_routes, CognitiveCommunity, RouteGrouping, SearchRoute,
};
use crate::taxonomy::{self, classify_series, Classification, ClassifierConfig, NodeType};

pub const SESSIONS_FILE: &str = "sessions.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_JSONL_FILE: &str = "metrics.jsonl";
pub const CLASSIFICATIONS_FILE: &str = "classifications.csv";
pub const ROUTES_FILE: &str = "routes.csv";
pub const COMMUNITIES_FILE: &str = "communities.csv";
pub const REPORT_FILE: &str = "report.txt";
pub const GRAPH_STEM: &str = "compass";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{stage}: {message}")]
    Input { stage: &'static str, message: String },
    #[error("{stage}: internal invariant violated: {message}")]
    Internal { stage: &'static str, message: String },
}

impl PipelineError {
    /// 1 configuration error, 2 input error, 3 internal invariant violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Input { .. } => 2,
            PipelineError::Internal { .. } => 3,
        }
    }

    fn input(stage: &'static str, e: impl ToString) -> Self {
        PipelineError::Input { stage, message: e.to_string() }
    }

    fn internal(stage: &'static str, e: impl ToString) -> Self {
        PipelineError::Internal { stage, message: e.to_string() }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub inputs: Vec<PathBuf>,
    pub format: LogFormat,
    pub filters: FilterRules,
    pub gap: Duration,
    pub item_count: ItemCount,
    pub block_size: usize,
    pub mean_n: MeanN,
    pub classifier: ClassifierConfig,
    pub grouping: RouteGrouping,
    pub linkage: f64,
    pub transition_weights: bool,
    pub out_dir: PathBuf,
    pub graph_formats: Vec<GraphFormat>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            inputs: Vec::new(),
            format: LogFormat::Delimited,
            filters: FilterRules::default(),
            gap: log_ingest::DEFAULT_GAP,
            item_count: ItemCount::Distinct,
            block_size: 10_000,
            mean_n: MeanN::DistinctK,
            classifier: ClassifierConfig::default(),
            grouping: RouteGrouping::Stream,
            linkage: 2.0,
            transition_weights: false,
            out_dir: PathBuf::from("out"),
            graph_formats: vec![GraphFormat::Dot, GraphFormat::GraphMl, GraphFormat::Canonical],
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.inputs.is_empty() {
            return Err(PipelineError::Config("no input files".into()));
        }
        if self.gap.is_zero() {
            return Err(PipelineError::Config("gap must be positive".into()));
        }
        if self.block_size == 0 {
            return Err(PipelineError::Config("block size must be at least 1".into()));
        }
        if !(self.linkage >= 0.0) {
            return Err(PipelineError::Config(format!("linkage must be non-negative, got {}", self.linkage)));
        }
        self.classifier.validate().map_err(|e| PipelineError::Config(e.to_string()))
    }
}

/// Everything a run computes, before anything is written.
#[derive(Debug)]
pub struct RunOutputs {
    pub sessions: Vec<Session>,
    pub diagnostics: Vec<String>,
    pub metrics: Vec<BlockMetrics>,
    pub classifications: Vec<Classification>,
    pub routes: Vec<SearchRoute>,
    pub communities: Vec<CognitiveCommunity>,
    pub graph: CrownGraph,
    pub report: RunReport,
}

/// Parses, filters and sessionizes every input file.
pub fn ingest(
    inputs: &[PathBuf],
    format: LogFormat,
    filters: &FilterRules,
    gap: Duration,
    count: ItemCount,
) -> Result<(Vec<Session>, Vec<String>), PipelineError> {
    let mut events = Vec::new();
    let mut diagnostics = Vec::new();
    for path in inputs {
        let file = File::open(path).map_err(|e| PipelineError::input("ingest", format!("{}: {e}", path.display())))?;
        let parsed = parse_events(BufReader::with_capacity(1 << 20, file), format)
            .map_err(|e| PipelineError::input("ingest", format!("{}: {e}", path.display())))?;
        let prefix = |d: &Diagnostic| {
            if inputs.len() > 1 {
                format!("{}: {d}", path.display())
            } else {
                d.to_string()
            }
        };
        diagnostics.extend(parsed.diagnostics.iter().map(prefix));
        events.extend(filter_events(parsed.events, filters));
    }
    let sessions = sessionize(events, gap, count).map_err(|e| PipelineError::Config(e.to_string()))?;
    Ok((sessions, diagnostics))
}

pub fn metrics_for_sessions(sessions: &[Session], block_size: usize, mean_n: MeanN) -> Result<Vec<BlockMetrics>, PipelineError> {
    let blocks = partition_blocks(sessions, block_size).map_err(|e| PipelineError::Config(e.to_string()))?;
    let mut metrics = blocks
        .iter()
        .map(|b| block_metrics(b, mean_n))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| PipelineError::internal("metrics", e))?;
    compute_variety_series(&mut metrics).map_err(|e| PipelineError::internal("metrics", e))?;
    Ok(metrics)
}

/// Block metrics from per-session K values in session order.
pub fn metrics_for_k_values(k_values: &[u32], block_size: usize, mean_n: MeanN) -> Result<Vec<BlockMetrics>, PipelineError> {
    if block_size == 0 {
        return Err(PipelineError::Config("block size must be at least 1".into()));
    }
    let mut metrics = k_values
        .chunks(block_size)
        .enumerate()
        .map(|(i, ks)| compute_block_means(&UsageHistogram::from_k_values(ks.iter().copied()), i, mean_n))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| PipelineError::internal("metrics", e))?;
    compute_variety_series(&mut metrics).map_err(|e| PipelineError::internal("metrics", e))?;
    Ok(metrics)
}

pub fn classify(metrics: &[BlockMetrics], cfg: &ClassifierConfig) -> Result<Vec<Classification>, PipelineError> {
    classify_series(metrics, cfg).map_err(|e| match e {
        taxonomy::TaxonomyError::BadZ(_) | taxonomy::TaxonomyError::BadEpsilon(_) | taxonomy::TaxonomyError::BadWeights => {
            PipelineError::Config(e.to_string())
        }
        other => PipelineError::internal("classify", other),
    })
}

/// Routes from classifications; `session_users` (session order) is read in
/// per-user mode only.
pub fn routes_for<'a>(
    classifications: &[Classification],
    grouping: RouteGrouping,
    session_users: impl IntoIterator<Item = &'a str>,
    block_size: usize,
) -> Result<Vec<SearchRoute>, PipelineError> {
    let labelled: Vec<(usize, NodeType)> = classifications.iter().map(|c| (c.block_index, c.label)).collect();
    let session_blocks = session_users.into_iter().enumerate().map(|(i, u)| (i / block_size.max(1), u));
    extract_routes(&labelled, grouping, session_blocks).map_err(|e| PipelineError::internal("routes", e))
}

pub fn compass_for(routes: &[SearchRoute], transition_weights: bool) -> Result<CrownGraph, PipelineError> {
    let weighting = if transition_weights {
        build_transition_graph(routes).compass_weighting()
    } else {
        EdgeWeighting::Uniform
    };
    build_base_graph(&weighting).map_err(|e| PipelineError::internal("graph", e))
}

/// Runs every stage in memory.
pub fn compute(cfg: &PipelineConfig) -> Result<RunOutputs, PipelineError> {
    cfg.validate()?;
    let (sessions, diagnostics) = ingest(&cfg.inputs, cfg.format, &cfg.filters, cfg.gap, cfg.item_count)?;
    if sessions.is_empty() {
        return Err(PipelineError::input("ingest", "no sessions"));
    }
    let metrics = metrics_for_sessions(&sessions, cfg.block_size, cfg.mean_n)?;
    let classifications = classify(&metrics, &cfg.classifier)?;
    let routes = routes_for(&classifications, cfg.grouping, sessions.iter().map(|s| &*s.user_hash), cfg.block_size)?;
    let communities = detect_communities(&routes, cfg.linkage).map_err(|e| PipelineError::Config(e.to_string()))?;
    let graph = compass_for(&routes, cfg.transition_weights)?;
    let report = RunReport::new(&metrics, &classifications, routes.len(), communities.len());
    Ok(RunOutputs { sessions, diagnostics, metrics, classifications, routes, communities, graph, report })
}

/// Computes all stages and writes the artifact files.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunOutputs, PipelineError> {
    let outputs = compute(cfg)?;
    write_artifacts(&outputs, &cfg.out_dir, &cfg.graph_formats)?;
    Ok(outputs)
}

/// Writes files into a directory, removing them again on failure.
pub struct ArtifactWriter {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl ArtifactWriter {
    pub fn new(dir: &Path) -> Result<Self, PipelineError> {
        fs::create_dir_all(dir).map_err(|e| PipelineError::input("output", format!("{}: {e}", dir.display())))?;
        Ok(ArtifactWriter { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn write<F>(&mut self, name: &str, body: F) -> Result<(), PipelineError>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<(), String>,
    {
        let path = self.dir.join(name);
        let result = File::create(&path).map_err(|e| e.to_string()).and_then(|f| {
            self.written.push(path.clone());
            let mut w = BufWriter::with_capacity(1 << 20, f);
            body(&mut w)?;
            w.flush().map_err(|e| e.to_string())
        });
        result.map_err(|message| {
            self.rollback();
            PipelineError::Input { stage: "output", message: format!("{}: {message}", path.display()) }
        })
    }

    pub fn rollback(&mut self) {
        for p in self.written.drain(..) {
            let _ = fs::remove_file(p);
        }
    }
}

pub fn write_artifacts(out: &RunOutputs, dir: &Path, formats: &[GraphFormat]) -> Result<(), PipelineError> {
    let mut w = ArtifactWriter::new(dir)?;
    w.write(SESSIONS_FILE, |f| write_sessions_csv(f, &out.sessions).map_err(|e| e.to_string()))?;
    w.write(DIAGNOSTICS_FILE, |f| {
        out.diagnostics.iter().try_for_each(|d| writeln!(f, "{d}")).map_err(|e| e.to_string())
    })?;
    w.write(METRICS_FILE, |f| block_metrics::write_metrics_csv(f, &out.metrics).map_err(|e| e.to_string()))?;
    w.write(METRICS_JSONL_FILE, |f| block_metrics::write_metrics_jsonl(f, &out.metrics).map_err(|e| e.to_string()))?;
    w.write(CLASSIFICATIONS_FILE, |f| write_classifications_csv(f, &out.classifications).map_err(|e| e.to_string()))?;
    w.write(ROUTES_FILE, |f| routes::write_routes_csv(f, &out.routes).map_err(|e| e.to_string()))?;
    w.write(COMMUNITIES_FILE, |f| routes::write_communities_csv(f, &out.communities).map_err(|e| e.to_string()))?;
    for format in formats {
        let name = format!("{GRAPH_STEM}.{}", format.extension());
        w.write(&name, |f| f.write_all(format.render(&out.graph).as_bytes()).map_err(|e| e.to_string()))?;
    }
    w.write(REPORT_FILE, |f| f.write_all(out.report.render().as_bytes()).map_err(|e| e.to_string()))?;
    Ok(())
}

/// One row of `sessions.csv`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: usize,
    pub user_hash: String,
    pub start: String,
    pub end: String,
    pub events: usize,
    pub k_items: u32,
}

pub fn write_sessions_csv<W: Write>(writer: W, sessions: &[Session]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["session_id", "user_hash", "start", "end", "events", "k_items"])?;
    let (mut start, mut end) = (Vec::with_capacity(24), Vec::with_capacity(24));
    for s in sessions {
        start.clear();
        end.clear();
        crate::fmt::write_timestamp(&mut start, &s.start)?;
        crate::fmt::write_timestamp(&mut end, &s.end)?;
        w.write_field(s.session_id.to_string())?;
        w.write_field(s.user_hash.as_bytes())?;
        w.write_field(&start)?;
        w.write_field(&end)?;
        w.write_field(s.events.len().to_string())?;
        w.write_field(s.k_items.to_string())?;
        w.write_record(None::<&[u8]>)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sessions_csv<R: Read>(reader: R) -> Result<Vec<SessionRecord>, csv::Error> {
    csv::Reader::from_reader(reader).deserialize().collect()
}

pub fn write_classifications_csv<W: Write>(writer: W, cs: &[Classification]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    for c in cs {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_classifications_csv<R: Read>(reader: R) -> Result<Vec<Classification>, csv::Error> {
    csv::Reader::from_reader(reader).deserialize().collect()
}

/// Run summary: per-type session shares, with every session of a block
/// carrying its block's type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunReport {
    pub blocks: usize,
    pub classified_blocks: usize,
    pub total_sessions: u64,
    pub unclassified_sessions: u64,
    pub sessions_per_type: [u64; 6],
    pub routes: usize,
    pub communities: usize,
}

impl RunReport {
    pub fn new(metrics: &[BlockMetrics], classifications: &[Classification], routes: usize, communities: usize) -> Self {
        let mut sessions_per_type = [0u64; 6];
        for c in classifications {
            if let Some(m) = metrics.iter().find(|m| m.block_index == c.block_index) {
                sessions_per_type[c.label.index()] += m.q;
            }
        }
        let total_sessions = metrics.iter().map(|m| m.q).sum();
        let classified: u64 = sessions_per_type.iter().sum();
        RunReport {
            blocks: metrics.len(),
            classified_blocks: classifications.len(),
            total_sessions,
            unclassified_sessions: total_sessions - classified,
            sessions_per_type,
            routes,
            communities,
        }
    }

    pub fn classified_sessions(&self) -> u64 {
        self.sessions_per_type.iter().sum()
    }

    /// Shares in tenths of a percent, rounded by largest remainder so that
    /// they add up to exactly 1000 whenever any session is classified.
    pub fn shares_permille(&self) -> [u64; 6] {
        let total = self.classified_sessions();
        let mut shares = [0u64; 6];
        if total == 0 {
            return shares;
        }
        let mut remainders = [(0u64, 0usize); 6];
        for (i, &n) in self.sessions_per_type.iter().enumerate() {
            shares[i] = n * 1000 / total;
            remainders[i] = (n * 1000 % total, i);
        }
        let missing = 1000 - shares.iter().sum::<u64>();
        remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, i) in remainders.iter().take(missing as usize) {
            shares[i] += 1;
        }
        shares
    }

    /// The type holding more than half of the classified sessions, if any.
    pub fn dominant(&self) -> Option<NodeType> {
        let total = self.classified_sessions();
        NodeType::ALL.into_iter().find(|n| 2 * self.sessions_per_type[n.index()] > total)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "blocks: {}", self.blocks);
        let _ = writeln!(out, "classified blocks: {}", self.classified_blocks);
        let _ = writeln!(out, "sessions: {}", self.total_sessions);
        let _ = writeln!(out, "unclassified sessions: {}", self.unclassified_sessions);
        let _ = writeln!(out, "routes: {}", self.routes);
        let _ = writeln!(out, "communities: {}", self.communities);
        let _ = writeln!(out, "sessions per type:");
        let shares = self.shares_permille();
        for n in NodeType::ALL {
            let s = shares[n.index()];
            let _ = writeln!(out, "  {n} {:>10} {:>3}.{}%", self.sessions_per_type[n.index()], s / 10, s % 10);
        }
        match self.dominant() {
            Some(n) => {
                let s = shares[n.index()];
                let _ = writeln!(out, "dominant type: {n} ({}.{}%)", s / 10, s % 10);
            }
            None => {
                let _ = writeln!(out, "dominant type: none");
            }
        }
        out
    }
}

fn open_artifact(dir: &Path, file: &str, what: &str) -> Result<BufReader<File>, PipelineError> {
    let path = dir.join(file);
    File::open(&path)
        .map(BufReader::new)
        .map_err(|_| PipelineError::Input { stage: "report", message: format!("missing: {what}") })
}

/// Rebuilds the run report from the artifact files in `dir`.
pub fn report_stats(dir: &Path) -> Result<RunReport, PipelineError> {
    let bad = |e: &dyn std::fmt::Display| PipelineError::input("report", e.to_string());
    let metrics = block_metrics::read_metrics_csv(open_artifact(dir, METRICS_FILE, "metrics")?).map_err(|e| bad(&e))?;
    let classifications =
        read_classifications_csv(open_artifact(dir, CLASSIFICATIONS_FILE, "classifications")?).map_err(|e| bad(&e))?;
    let routes = routes::read_routes_csv(open_artifact(dir, ROUTES_FILE, "routes")?).map_err(|e| bad(&e))?;
    let communities = csv::Reader::from_reader(open_artifact(dir, COMMUNITIES_FILE, "communities")?)
        .records()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| bad(&e))?;
    Ok(RunReport::new(&metrics, &classifications, routes.len(), communities.len()))
}

/// Renders `graph` in `format` into `dir`, returning the file path.
pub fn export_graph(graph: &CrownGraph, format: GraphFormat, dir: &Path) -> Result<PathBuf, PipelineError> {
    let name = format!("{GRAPH_STEM}.{}", format.extension());
    ArtifactWriter::new(dir)?.write(&name, |f| f.write_all(format.render(graph).as_bytes()).map_err(|e| e.to_string()))?;
    Ok(dir.join(name))
}

pub fn parse_graph_format(s: &str) -> Result<GraphFormat, PipelineError> {
    s.parse::<GraphFormat>().map_err(|e: crown_graph::GraphError| PipelineError::Config(e.to_string()))
}
