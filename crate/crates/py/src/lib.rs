//! Python bindings: the core graph types, metric suite, completion parser,
//! and prompt rendering, exposed as the `tgg_py` extension module.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use std::path::PathBuf;
use std::time::Duration;

use tgg_core::graph::{self, EventId};
use tgg_core::metrics;
use tgg_core::parse;
use tgg_core::prompt::{
    self, InputFormat, LabelScheme, Method, Templates,
};

fn value_err(message: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(message.to_string())
}

fn parse_input_format(s: &str) -> PyResult<InputFormat> {
    match s {
        "alphabetical" => Ok(InputFormat::Alphabetical),
        "descriptive" => Ok(InputFormat::Descriptive),
        other => Err(value_err(format!("unknown input format: {other}"))),
    }
}

fn parse_method(s: &str) -> PyResult<Method> {
    match s {
        "standard" => Ok(Method::Standard),
        "cot" => Ok(Method::Cot),
        "not" => Ok(Method::Not),
        other => Err(value_err(format!("unknown method: {other}"))),
    }
}

fn to_event_ids(ids: &[String]) -> Vec<EventId> {
    ids.iter().map(|s| EventId::new(s.as_str())).collect()
}

/// Directed graph over event identities.
#[pyclass(name = "TemporalGraph", from_py_object)]
#[derive(Clone)]
struct PyTemporalGraph {
    inner: graph::TemporalGraph,
}

#[pymethods]
impl PyTemporalGraph {
    #[new]
    #[pyo3(signature = (nodes, edges, valid = true))]
    fn new(nodes: Vec<String>, edges: Vec<(String, String)>, valid: bool) -> Self {
        let edge_ids: Vec<(EventId, EventId)> = edges
            .iter()
            .map(|(s, d)| (EventId::new(s.as_str()), EventId::new(d.as_str())))
            .collect();
        let mut inner = graph::TemporalGraph::from_edges(to_event_ids(&nodes), &edge_ids);
        inner.valid = valid;
        PyTemporalGraph { inner }
    }

    #[getter]
    fn nodes(&self) -> Vec<String> {
        self.inner.nodes.iter().map(|n| n.0.clone()).collect()
    }

    #[getter]
    fn edges(&self) -> Vec<(String, String)> {
        self.inner
            .sorted_edges()
            .into_iter()
            .map(|(s, d)| (s.0, d.0))
            .collect()
    }

    #[getter]
    fn valid(&self) -> bool {
        self.inner.valid
    }

    fn weak_components(&self) -> usize {
        graph::weak_components(&self.inner)
    }

    fn is_acyclic(&self) -> bool {
        graph::is_acyclic(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "TemporalGraph(nodes={}, edges={}, valid={})",
            self.inner.node_count(),
            self.inner.edge_count(),
            self.inner.valid
        )
    }
}

/// Events connected in presentation order.
#[pyfunction]
fn linear_chain(events_in_presentation_order: Vec<String>) -> PyTemporalGraph {
    PyTemporalGraph {
        inner: graph::linear_chain(&to_event_ids(&events_in_presentation_order)),
    }
}

/// Maps parsed (label, label) relations onto event identities; unknown
/// labels become hallucinated nodes.
#[pyfunction]
#[pyo3(signature = (raw_relations, assignment, all_events, input_format = "alphabetical"))]
fn canonicalize(
    raw_relations: Vec<(String, String)>,
    assignment: Vec<(String, String)>,
    all_events: Vec<String>,
    input_format: &str,
) -> PyResult<PyTemporalGraph> {
    let assignment = graph::LabelAssignment::new(
        assignment
            .into_iter()
            .map(|(label, event)| (label, EventId::new(event)))
            .collect(),
        parse_input_format(input_format)?,
    );
    Ok(PyTemporalGraph {
        inner: graph::canonicalize(&raw_relations, &assignment, &to_event_ids(&all_events)),
    })
}

/// Minimum edit cost transforming `pred` into a graph isomorphic to
/// `gold`; returns (value, exact).
#[pyfunction]
#[pyo3(signature = (gold, pred, budget_secs = None))]
fn graph_edit_distance(
    gold: &PyTemporalGraph,
    pred: &PyTemporalGraph,
    budget_secs: Option<f64>,
) -> (f64, bool) {
    let result = metrics::graph_edit_distance(
        &gold.inner,
        &pred.inner,
        budget_secs.map(Duration::from_secs_f64),
    );
    (result.value, result.exact)
}

/// Edge-set precision, recall and F1.
#[pyfunction]
fn precision_recall_f1(
    gold: &PyTemporalGraph,
    pred: &PyTemporalGraph,
) -> PyResult<(f64, f64, f64)> {
    metrics::precision_recall_f1(&gold.inner, &pred.inner).map_err(value_err)
}

/// Mean Jaccard overlap of predicted edge sets over all unordered pairs.
#[pyfunction]
fn pairwise_consistency(graphs: Vec<PyTemporalGraph>) -> PyResult<f64> {
    let inner: Vec<graph::TemporalGraph> = graphs.into_iter().map(|g| g.inner).collect();
    metrics::pairwise_consistency(&inner).map_err(value_err)
}

/// A parsed model completion.
#[pyclass(name = "ModelOutput")]
struct PyModelOutput {
    #[pyo3(get)]
    relations: Vec<(String, String)>,
    #[pyo3(get)]
    narrative: Option<String>,
    #[pyo3(get)]
    validity: bool,
    #[pyo3(get)]
    diagnostics: Vec<String>,
}

/// Extracts the relation list (and narrative, when present) from a raw
/// completion. Total: failures set validity to False.
#[pyfunction]
fn extract_relations(raw: &str) -> PyModelOutput {
    let out = parse::extract_relations(raw);
    PyModelOutput {
        relations: out.relations,
        narrative: out.narrative,
        validity: out.validity,
        diagnostics: out.diagnostics,
    }
}

/// A parsed five-way faithfulness verdict.
#[pyclass(name = "JudgeVerdict")]
struct PyJudgeVerdict {
    #[pyo3(get)]
    verdict: String,
    #[pyo3(get)]
    rationale: String,
    #[pyo3(get)]
    total_links: Option<u32>,
    #[pyo3(get)]
    correct_links: Option<u32>,
}

#[pyfunction]
fn parse_judge(raw: &str) -> PyResult<PyJudgeVerdict> {
    let verdict = parse::parse_judge(raw).map_err(value_err)?;
    Ok(PyJudgeVerdict {
        verdict: serde_json::to_value(verdict.verdict)
            .expect("serializes")
            .as_str()
            .unwrap()
            .to_string(),
        rationale: verdict.rationale,
        total_links: verdict.total_links,
        correct_links: verdict.correct_links,
    })
}

/// Percentage of judged outputs rated "yes" or "largely yes".
#[pyfunction]
fn alignment_percent(
    yes: usize,
    largely_yes: usize,
    ambivalent: usize,
    largely_no: usize,
    no: usize,
) -> f64 {
    tgg_core::judging::VerdictDistribution {
        yes,
        largely_yes,
        ambivalent,
        largely_no,
        no,
        unparseable: 0,
    }
    .alignment_percent()
}

/// Loads normalized scenarios; each comes back as a JSON string.
#[pyfunction]
fn load_scenarios(path: &str) -> PyResult<Vec<String>> {
    let scenarios =
        tgg_core::corpus::load_normalized(&PathBuf::from(path)).map_err(value_err)?;
    Ok(scenarios
        .iter()
        .map(|s| serde_json::to_string(s).expect("scenario serializes"))
        .collect())
}

/// The seeded letter-to-event binding used for a scenario in a run.
#[pyfunction]
#[pyo3(signature = (scenario_json, master_seed, input_format = "alphabetical"))]
fn assign_labels(
    scenario_json: &str,
    master_seed: u64,
    input_format: &str,
) -> PyResult<Vec<(String, String)>> {
    let scenario: graph::Scenario = serde_json::from_str(scenario_json).map_err(value_err)?;
    let assignment = prompt::assign_labels(
        &scenario,
        tgg_core::runner::label_seed(master_seed, &scenario.id),
        parse_input_format(input_format)?,
        LabelScheme::SeededRandom,
    )
    .map_err(value_err)?;
    Ok(assignment
        .labels
        .into_iter()
        .map(|(label, event)| (label, event.0))
        .collect())
}

/// Renders the chat messages for one scenario and shuffle, exactly as the
/// experiment runner would. Returns (role, text) pairs.
#[pyfunction]
#[pyo3(signature = (scenario_json, method, master_seed, shuffle = 0, shots = 0, input_format = "alphabetical", demo_bank = None, narrative_generator = None, narrative_instruction = None))]
#[allow(clippy::too_many_arguments)]
fn build_prompt(
    scenario_json: &str,
    method: &str,
    master_seed: u64,
    shuffle: u32,
    shots: usize,
    input_format: &str,
    demo_bank: Option<String>,
    narrative_generator: Option<String>,
    narrative_instruction: Option<String>,
) -> PyResult<Vec<(String, String)>> {
    let scenario: graph::Scenario = serde_json::from_str(scenario_json).map_err(value_err)?;
    let format = parse_input_format(input_format)?;
    let method = parse_method(method)?;
    let demos = match demo_bank {
        Some(path) if shots > 0 => {
            let bank =
                tgg_core::corpus::DemoBank::load(&PathBuf::from(path)).map_err(value_err)?;
            let key = match (narrative_generator, narrative_instruction) {
                (Some(generator), Some(instruction)) => Some(tgg_core::corpus::NarrativeKey {
                    generator,
                    instruction: instruction.parse().map_err(value_err)?,
                    input_format: format,
                }),
                _ => None,
            };
            bank.select(shots, format, key.as_ref()).map_err(value_err)?
        }
        _ => Vec::new(),
    };
    let assignment = prompt::assign_labels(
        &scenario,
        tgg_core::runner::label_seed(master_seed, &scenario.id),
        format,
        LabelScheme::SeededRandom,
    )
    .map_err(value_err)?;
    let seed = tgg_core::runner::shuffle_seed(master_seed, &scenario.id, shuffle);
    let order = prompt::presentation_order(&scenario, seed);
    let bundle = prompt::build_prompt(
        method,
        &demos,
        &scenario,
        &assignment,
        &order,
        shots,
        Templates::builtin(),
        seed,
    )
    .map_err(value_err)?;
    Ok(bundle
        .messages
        .into_iter()
        .map(|(role, text)| (role.to_string(), text))
        .collect())
}

#[pymodule]
fn tgg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTemporalGraph>()?;
    m.add_class::<PyModelOutput>()?;
    m.add_class::<PyJudgeVerdict>()?;
    m.add_function(wrap_pyfunction!(linear_chain, m)?)?;
    m.add_function(wrap_pyfunction!(canonicalize, m)?)?;
    m.add_function(wrap_pyfunction!(graph_edit_distance, m)?)?;
    m.add_function(wrap_pyfunction!(precision_recall_f1, m)?)?;
    m.add_function(wrap_pyfunction!(pairwise_consistency, m)?)?;
    m.add_function(wrap_pyfunction!(extract_relations, m)?)?;
    m.add_function(wrap_pyfunction!(parse_judge, m)?)?;
    m.add_function(wrap_pyfunction!(alignment_percent, m)?)?;
    m.add_function(wrap_pyfunction!(load_scenarios, m)?)?;
    m.add_function(wrap_pyfunction!(assign_labels, m)?)?;
    m.add_function(wrap_pyfunction!(build_prompt, m)?)?;
    Ok(())
}
