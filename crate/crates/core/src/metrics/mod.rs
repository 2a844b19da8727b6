//! The metric suite: edge-set precision/recall/F1, graph edit distance,
//! edge-count ratio, weak component count, pairwise consistency across input
//! shuffles, and dataset-level aggregation into report rows.

pub mod ged;

pub use ged::{graph_edit_distance, GedResult, DEFAULT_BUDGET, EXACT_NODE_LIMIT};

use crate::graph::{weak_components, TemporalGraph};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("gold graph has no edges")]
    EmptyGold,
    #[error("pairwise consistency needs at least 2 graphs, got {0}")]
    TooFewGraphs(usize),
    #[error("scenarios missing shuffle cards: {0:?}")]
    MissingShuffles(Vec<String>),
}

/// Per-scenario, per-shuffle metric record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCard {
    pub scenario: String,
    pub shuffle: u32,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ged: f64,
    /// False when the edit-distance search timed out and `ged` is an upper
    /// bound rather than the exact minimum.
    pub ged_exact: bool,
    pub edge_ratio: f64,
    pub components: u32,
    pub validity: bool,
}

/// Precision, recall and F1 between gold and predicted edge sets.
///
/// Precision is 0 when the prediction is empty; F1 is the harmonic mean and
/// 0 when both components are 0. Errors when the gold set is empty (the
/// corpora guarantee at least one gold edge).
pub fn precision_recall_f1(
    gold: &TemporalGraph,
    pred: &TemporalGraph,
) -> Result<(f64, f64, f64), MetricsError> {
    if gold.edges.is_empty() {
        return Err(MetricsError::EmptyGold);
    }
    let common = gold.edges.intersection(&pred.edges).count() as f64;
    let precision = if pred.edges.is_empty() {
        0.0
    } else {
        common / pred.edges.len() as f64
    };
    let recall = common / gold.edges.len() as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok((precision, recall, f1))
}

/// Scores one prediction against its gold graph.
///
/// An invalid prediction (no parsed relations) scores 0 across the semantic
/// metrics and the edge ratio, reports 0 components, and its GED is the
/// distance from the edgeless graph.
pub fn score_pair(
    scenario: &str,
    shuffle: u32,
    gold: &TemporalGraph,
    pred: &TemporalGraph,
    ged_budget: Option<Duration>,
) -> Result<ScoreCard, MetricsError> {
    let (precision, recall, f1) = precision_recall_f1(gold, pred)?;
    let ged = graph_edit_distance(gold, pred, ged_budget);
    let edge_ratio = if pred.valid {
        pred.edges.len() as f64 / gold.edges.len() as f64
    } else {
        0.0
    };
    Ok(ScoreCard {
        scenario: scenario.to_string(),
        shuffle,
        precision,
        recall,
        f1,
        ged: ged.value,
        ged_exact: ged.exact,
        edge_ratio,
        components: weak_components(pred) as u32,
        validity: pred.valid,
    })
}

/// Mean Jaccard overlap of predicted edge sets over all unordered pairs.
/// A pair of two empty edge sets scores 0: two refusals are not consistent.
pub fn pairwise_consistency(preds: &[TemporalGraph]) -> Result<f64, MetricsError> {
    if preds.len() < 2 {
        return Err(MetricsError::TooFewGraphs(preds.len()));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..preds.len() {
        for j in (i + 1)..preds.len() {
            let inter = preds[i].edges.intersection(&preds[j].edges).count();
            let union = preds[i].edges.union(&preds[j].edges).count();
            total += if union == 0 {
                0.0
            } else {
                inter as f64 / union as f64
            };
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// How invalid predictions enter the mean component count. Averaging them
/// as 0 is the default: report rows below 1.00 then signal parse failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ComponentsConvention {
    #[default]
    InvalidAsZero,
    ExcludeInvalid,
}

/// Dataset-level summary in the units the result tables use: P/R/F1 and
/// consistency as percentages, GED / edge ratio / components as raw means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub method: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ged: f64,
    pub edge_ratio: f64,
    pub components: f64,
    pub consistency: f64,
    pub scenarios: usize,
    pub cards: usize,
}

/// Aggregates per-shuffle cards into one report row.
///
/// Every scenario must contribute exactly `shuffles` cards. Metric means are
/// unweighted over cards; consistency is averaged per scenario first, then
/// across scenarios.
pub fn aggregate(
    cards: &[ScoreCard],
    consistency_by_scenario: &BTreeMap<String, f64>,
    shuffles: u32,
    dataset: &str,
    method: &str,
    components_convention: ComponentsConvention,
) -> Result<ReportRow, MetricsError> {
    let mut per_scenario: BTreeMap<&str, u32> = BTreeMap::new();
    for card in cards {
        *per_scenario.entry(card.scenario.as_str()).or_insert(0) += 1;
    }
    let mut missing: Vec<String> = per_scenario
        .iter()
        .filter(|(_, &count)| count != shuffles)
        .map(|(id, _)| id.to_string())
        .collect();
    for id in consistency_by_scenario.keys() {
        if !per_scenario.contains_key(id.as_str()) {
            missing.push(id.clone());
        }
    }
    if !missing.is_empty() || cards.is_empty() {
        missing.sort();
        return Err(MetricsError::MissingShuffles(missing));
    }

    let n = cards.len() as f64;
    let mean = |f: &dyn Fn(&ScoreCard) -> f64| cards.iter().map(f).sum::<f64>() / n;
    let components = match components_convention {
        ComponentsConvention::InvalidAsZero => mean(&|c| c.components as f64),
        ComponentsConvention::ExcludeInvalid => {
            let valid: Vec<_> = cards.iter().filter(|c| c.validity).collect();
            if valid.is_empty() {
                0.0
            } else {
                valid.iter().map(|c| c.components as f64).sum::<f64>() / valid.len() as f64
            }
        }
    };
    let consistency = if consistency_by_scenario.is_empty() {
        0.0
    } else {
        consistency_by_scenario.values().sum::<f64>() / consistency_by_scenario.len() as f64
    };
    Ok(ReportRow {
        dataset: dataset.to_string(),
        method: method.to_string(),
        precision: 100.0 * mean(&|c| c.precision),
        recall: 100.0 * mean(&|c| c.recall),
        f1: 100.0 * mean(&|c| c.f1),
        ged: mean(&|c| c.ged),
        edge_ratio: mean(&|c| c.edge_ratio),
        components,
        consistency: 100.0 * consistency,
        scenarios: per_scenario.len(),
        cards: cards.len(),
    })
}

const REPORT_COLUMNS: [&str; 9] = [
    "dataset",
    "method",
    "P",
    "R",
    "F1",
    "GED",
    "edge_ratio",
    "k(G)",
    "consistency",
];

impl ReportRow {
    fn cells(&self) -> [String; 9] {
        [
            self.dataset.clone(),
            self.method.clone(),
            format!("{:.1}", self.precision),
            format!("{:.1}", self.recall),
            format!("{:.1}", self.f1),
            format!("{:.2}", self.ged),
            format!("{:.2}", self.edge_ratio),
            format!("{:.2}", self.components),
            format!("{:.1}", self.consistency),
        ]
    }
}

/// Renders rows as a Markdown table in the result-table column order.
pub fn render_markdown(rows: &[ReportRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!("| {} |\n", REPORT_COLUMNS.join(" | ")));
    out.push_str(&format!("|{}\n", " --- |".repeat(REPORT_COLUMNS.len())));
    for row in rows {
        out.push_str(&format!("| {} |\n", row.cells().join(" | ")));
    }
    out
}

/// Renders rows as CSV with the same columns.
pub fn render_csv(rows: &[ReportRow]) -> String {
    let mut out = String::new();
    out.push_str(&REPORT_COLUMNS.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.cells().join(","));
        out.push('\n');
    }
    out
}
