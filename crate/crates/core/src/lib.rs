//! Search-session analytics over content access logs.
//!
//! The pipeline turns raw access-log records into sessions, cuts the session
//! stream into blocks, measures each block's Mass (N), Intensity (K) and
//! Variety (α/β), and types every block onto one of six compass nodes `a`–`f`.
//! Sequences of node types form search routes, which are grouped into
//! cognitive communities and positioned on the compass graph.
//!
//! Modules follow the stage order:
//!
//! * [`log_ingest`]: parsing, filtering and sessionization.
//! * [`block_metrics`]: blocks, N-per-K histograms, block means, variety series.
//! * [`taxonomy`]: tendencies, triplets and the six admissible node types.
//! * [`crown_graph`]: the compass graph, its analytics, exports and self-similar hierarchy.
//! * [`routes`]: search routes, route distance, communities and transitions.
//! * [`synth`]: deterministic synthetic log generation.
//! * [`pipeline`]: end-to-end orchestration, artifact files and the run report.

pub mod block_metrics;
pub mod crown_graph;
pub mod log_ingest;
pub mod pipeline;
pub mod routes;
pub mod synth;
pub mod taxonomy;

mod fmt;
