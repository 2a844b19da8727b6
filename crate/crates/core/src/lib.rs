//! Evaluation harness for temporal graph generation (TGG).
//!
//! Scenarios pair a goal with an unordered event set; models are prompted to
//! emit the temporal graph over those events as the body of a Python-style
//! `get_relations()` method. This crate renders those prompts, parses the
//! completions back into graphs, and scores them against gold graphs with
//! semantic (precision/recall/F1) and structural (graph edit distance, edge
//! ratio, component count, pairwise consistency) metrics.

pub mod client;
pub mod corpus;
pub mod graph;
pub mod judging;
pub mod metrics;
pub mod parse;
pub mod prompt;
pub mod runner;
pub mod synth;

pub use graph::{Event, EventId, LabelAssignment, Scenario, TemporalGraph};
pub use metrics::{GedResult, ReportRow, ScoreCard};
pub use parse::{JudgeVerdict, ModelOutput};
pub use prompt::{Demonstration, InputFormat, Method, MetaPromptSpec, PromptBundle};
