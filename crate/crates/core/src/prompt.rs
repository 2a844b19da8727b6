//! Deterministic rendering of scenarios into the class-style code prompt
//! surface, and assembly of the standard / chain-of-thought / narrative
//! prompting bundles, the reference-narrative meta prompts, and the
//! faithfulness-judge prompt.
//!
//! Everything here is byte-deterministic given its inputs; the prompt text
//! is a wire format and golden tests pin it.

use crate::graph::{EventId, LabelAssignment, Scenario, TemporalGraph, HALLUCINATED_PREFIX};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("scenario {0} has {1} events; alphabetical labels support at most 26")]
    TooManyEvents(String, usize),
    #[error("presentation order does not permute the scenario's events")]
    BadPresentationOrder,
    #[error("demonstration {0} has no reference narrative for the requested key")]
    MissingNarrative(String),
    #[error("requested {requested} shots but only {available} demonstrations available")]
    NotEnoughDemos { requested: usize, available: usize },
    #[error("failed to read template {path}: {source}")]
    TemplateIo {
        path: String,
        source: std::io::Error,
    },
}

/// How events are named in the rendered class: `step[A-Z]` letters or
/// camel-cased event descriptions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Alphabetical,
    Descriptive,
}

impl fmt::Display for InputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputFormat::Alphabetical => "alphabetical",
            InputFormat::Descriptive => "descriptive",
        })
    }
}

/// Prompting method for inference bundles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Standard,
    Cot,
    Not,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Standard => "standard",
            Method::Cot => "cot",
            Method::Not => "not",
        })
    }
}

/// How step letters are bound to events. Seeded-random is the default so the
/// labeling cannot leak gold topology through dataset order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LabelScheme {
    #[default]
    SeededRandom,
    DatasetOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        })
    }
}

/// An ordered chat-message sequence plus the settings that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub messages: Vec<(Role, String)>,
    pub method: Method,
    pub shots: usize,
    pub input_format: InputFormat,
    pub assignment: LabelAssignment,
    pub shuffle_seed: u64,
}

impl PromptBundle {
    pub fn user_text(&self) -> &str {
        self.messages
            .last()
            .map(|(_, text)| text.as_str())
            .unwrap_or_default()
    }
}

/// The four reference-narrative instruction types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaInstruction {
    NewsReport,
    SimpleEnglish,
    RolePlay,
    SimpleReport,
}

impl MetaInstruction {
    pub const ALL: [MetaInstruction; 4] = [
        MetaInstruction::NewsReport,
        MetaInstruction::SimpleEnglish,
        MetaInstruction::RolePlay,
        MetaInstruction::SimpleReport,
    ];

    /// The genre noun the instruction asks for, used in the closing cue.
    fn genre(&self) -> &'static str {
        match self {
            MetaInstruction::NewsReport => "*news report*",
            MetaInstruction::SimpleEnglish => "*story*",
            MetaInstruction::RolePlay => "*story*",
            MetaInstruction::SimpleReport => "*report*",
        }
    }
}

impl fmt::Display for MetaInstruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetaInstruction::NewsReport => "news_report",
            MetaInstruction::SimpleEnglish => "simple_english",
            MetaInstruction::RolePlay => "role_play",
            MetaInstruction::SimpleReport => "simple_report",
        })
    }
}

impl std::str::FromStr for MetaInstruction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "news_report" => Ok(MetaInstruction::NewsReport),
            "simple_english" => Ok(MetaInstruction::SimpleEnglish),
            "role_play" => Ok(MetaInstruction::RolePlay),
            "simple_report" => Ok(MetaInstruction::SimpleReport),
            other => Err(format!("unknown instruction type: {other}")),
        }
    }
}

/// Instruction type plus input format for one meta-prompt variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaPromptSpec {
    pub instruction: MetaInstruction,
    pub input_format: InputFormat,
}

/// A few-shot demonstration, fully prepared for rendering: the scenario, its
/// stable label assignment and presentation order, and the reference
/// narrative when one is attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub scenario: Scenario,
    pub reference_narrative: Option<String>,
    pub assignment: LabelAssignment,
    pub presentation: Vec<EventId>,
    pub meta: DemoMeta,
}

/// Provenance of a demonstration's reference narrative.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct DemoMeta {
    pub generator: Option<String>,
    pub instruction: Option<MetaInstruction>,
    pub input_format: Option<InputFormat>,
}

/// Prompt text templates, shipped under `templates/` and also embedded so
/// the built binary works without the directory present.
#[derive(Debug, Clone)]
pub struct Templates {
    pub preamble_standard: String,
    pub preamble_narrative: String,
    pub judge: String,
    pub meta_news_report: String,
    pub meta_simple_english: String,
    pub meta_role_play: String,
    pub meta_simple_report: String,
}

impl Templates {
    pub fn builtin() -> &'static Templates {
        static BUILTIN: OnceLock<Templates> = OnceLock::new();
        BUILTIN.get_or_init(|| Templates {
            preamble_standard: include_str!("../../../templates/preamble_standard.txt").to_string(),
            preamble_narrative: include_str!("../../../templates/preamble_narrative.txt")
                .to_string(),
            judge: include_str!("../../../templates/judge.txt").to_string(),
            meta_news_report: include_str!("../../../templates/meta_news_report.txt").to_string(),
            meta_simple_english: include_str!("../../../templates/meta_simple_english.txt")
                .to_string(),
            meta_role_play: include_str!("../../../templates/meta_role_play.txt").to_string(),
            meta_simple_report: include_str!("../../../templates/meta_simple_report.txt")
                .to_string(),
        })
    }

    pub fn from_dir(dir: &Path) -> Result<Templates, PromptError> {
        let read = |name: &str| -> Result<String, PromptError> {
            let path = dir.join(name);
            std::fs::read_to_string(&path).map_err(|source| PromptError::TemplateIo {
                path: path.display().to_string(),
                source,
            })
        };
        Ok(Templates {
            preamble_standard: read("preamble_standard.txt")?,
            preamble_narrative: read("preamble_narrative.txt")?,
            judge: read("judge.txt")?,
            meta_news_report: read("meta_news_report.txt")?,
            meta_simple_english: read("meta_simple_english.txt")?,
            meta_role_play: read("meta_role_play.txt")?,
            meta_simple_report: read("meta_simple_report.txt")?,
        })
    }

    fn meta_instruction(&self, instruction: MetaInstruction) -> &str {
        match instruction {
            MetaInstruction::NewsReport => &self.meta_news_report,
            MetaInstruction::SimpleEnglish => &self.meta_simple_english,
            MetaInstruction::RolePlay => &self.meta_role_play,
            MetaInstruction::SimpleReport => &self.meta_simple_report,
        }
    }
}

const NARRATIVE_CUE: &str =
    "# Let's think of a narrative to link aforementioned events in the correct temporal order.";
const COT_CUE: &str = "# Let's think step by step";

/// Camel-cases an event description into a Python identifier:
/// "push pedal" becomes "pushPedal".
pub fn camel_case_identifier(description: &str) -> String {
    let words: Vec<String> = description
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect();
    if words.is_empty() {
        return "event".to_string();
    }
    let mut out = String::new();
    for (i, word) in words.iter().enumerate() {
        if i == 0 {
            out.push_str(word);
        } else {
            let mut chars = word.chars();
            if let Some(first) = chars.next() {
                out.extend(first.to_uppercase());
                out.push_str(chars.as_str());
            }
        }
    }
    if out.chars().next().is_some_and(|c| c.is_ascii_digit()) {
        out = format!("event{out}");
    }
    out
}

/// Camel-cases a scenario title into the class name:
/// "bombing attacks" becomes "BombingAttacks".
pub fn class_name(title: &str) -> String {
    let mut out = String::new();
    for word in title
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
    {
        let lower = word.to_lowercase();
        let mut chars = lower.chars();
        if let Some(first) = chars.next() {
            out.extend(first.to_uppercase());
            out.push_str(chars.as_str());
        }
    }
    if out.is_empty() {
        out.push_str("Scenario");
    }
    if out.chars().next().is_some_and(|c| c.is_ascii_digit()) {
        out = format!("Scenario{out}");
    }
    out
}

/// Binds labels to a scenario's events.
///
/// Alphabetical labels are `stepA..` letters bound by a seed-determined
/// permutation (or by dataset order under [`LabelScheme::DatasetOrder`]);
/// the seed is fixed per scenario for a run, so the binding is identical
/// across all shuffles. Descriptive labels are camel-cased descriptions,
/// deduplicated with numeric suffixes.
pub fn assign_labels(
    scenario: &Scenario,
    seed: u64,
    input_format: InputFormat,
    scheme: LabelScheme,
) -> Result<LabelAssignment, PromptError> {
    let n = scenario.events.len();
    match input_format {
        InputFormat::Alphabetical => {
            if n > 26 {
                return Err(PromptError::TooManyEvents(scenario.id.clone(), n));
            }
            let mut order: Vec<usize> = (0..n).collect();
            if scheme == LabelScheme::SeededRandom {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                order.shuffle(&mut rng);
            }
            let labels = order
                .iter()
                .enumerate()
                .map(|(i, &ev)| {
                    let letter = (b'A' + i as u8) as char;
                    (format!("step{letter}"), scenario.events[ev].id.clone())
                })
                .collect();
            Ok(LabelAssignment::new(labels, InputFormat::Alphabetical))
        }
        InputFormat::Descriptive => {
            let mut used = BTreeSet::new();
            let labels = scenario
                .events
                .iter()
                .map(|ev| {
                    let base = camel_case_identifier(&ev.description);
                    let mut label = base.clone();
                    let mut suffix = 2;
                    while !used.insert(label.clone()) {
                        label = format!("{base}{suffix}");
                        suffix += 1;
                    }
                    (label, ev.id.clone())
                })
                .collect();
            Ok(LabelAssignment::new(labels, InputFormat::Descriptive))
        }
    }
}

/// Deterministic shuffle of the scenario's events for one presentation.
pub fn presentation_order(scenario: &Scenario, seed: u64) -> Vec<EventId> {
    let mut order = scenario.event_ids();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order
}

/// What a rendered class carries beyond its event methods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassBody<'a> {
    /// Event methods only.
    EventsOnly,
    /// A demonstration: implemented `get_relations` over the gold edges,
    /// preceded by an implemented `get_narrative` when one is supplied.
    Demonstration { narrative: Option<&'a str> },
    /// The query: stub endings for the given method.
    Query(Method),
}

/// Renders one scenario as a Python class, event methods in presentation
/// order. Byte-deterministic.
pub fn render_class(
    scenario: &Scenario,
    assignment: &LabelAssignment,
    presentation: &[EventId],
    body: ClassBody,
) -> Result<String, PromptError> {
    let scenario_ids: BTreeSet<&EventId> = scenario.events.iter().map(|e| &e.id).collect();
    let presented: BTreeSet<&EventId> = presentation.iter().collect();
    if presentation.len() != scenario.events.len() || scenario_ids != presented {
        return Err(PromptError::BadPresentationOrder);
    }

    let mut out = String::new();
    out.push_str(&format!("class {}:\n\n", class_name(&scenario.title)));
    out.push_str(&format!("    title = \"{}\"\n", scenario.title));
    out.push_str(&format!("    steps = {}\n", scenario.events.len()));
    for id in presentation {
        let label = assignment.label_for(id).ok_or(PromptError::BadPresentationOrder)?;
        let description = scenario.description_of(id).unwrap_or_default();
        out.push_str(&format!(
            "\n    def {label}(self):\n        return \"{description}\"\n"
        ));
    }

    let relations_body = || -> String {
        let mut text = String::from("\n    def get_relations(self):\n        return [\n");
        for (src, dst) in &scenario.edges {
            let s = assignment.label_for(src).unwrap_or(src.as_str());
            let d = assignment.label_for(dst).unwrap_or(dst.as_str());
            text.push_str(&format!("            \"{s} -> {d}\",\n"));
        }
        text.push_str("        ]\n");
        text
    };

    match body {
        ClassBody::EventsOnly => {}
        ClassBody::Demonstration { narrative } => {
            if let Some(narrative) = narrative {
                out.push_str(&format!(
                    "\n    {NARRATIVE_CUE}\n    def get_narrative(self):\n        return \"{narrative}\"\n"
                ));
            }
            out.push_str(&relations_body());
        }
        ClassBody::Query(method) => match method {
            Method::Standard => {
                out.push_str("\n    def get_relations(self):\n        # TODO\n        # END\n");
            }
            Method::Cot => {
                out.push_str(&format!(
                    "\n    {COT_CUE}\n    def get_relations(self):\n        # TODO\n        # END\n"
                ));
            }
            Method::Not => {
                out.push_str(&format!(
                    "\n    {NARRATIVE_CUE}\n    def get_narrative(self):\n        # TODO\n"
                ));
                out.push_str("\n    def get_relations(self):\n        # TODO\n        # END\n");
            }
        },
    }
    Ok(out)
}

/// Assembles the full few-shot inference prompt: preamble, demonstration
/// classes in bank order, then the query class ending at the method's
/// completion cue. The query never carries its gold relations.
#[allow(clippy::too_many_arguments)]
pub fn build_prompt(
    method: Method,
    demos: &[Demonstration],
    query: &Scenario,
    assignment: &LabelAssignment,
    presentation: &[EventId],
    shots: usize,
    templates: &Templates,
    shuffle_seed: u64,
) -> Result<PromptBundle, PromptError> {
    if shots > demos.len() {
        return Err(PromptError::NotEnoughDemos {
            requested: shots,
            available: demos.len(),
        });
    }
    // Reference narratives are all-or-nothing: a bundle mixing narrative
    // and narrative-less demonstrations means a required narrative is
    // missing from the bank.
    if method == Method::Not && demos[..shots].iter().any(|d| d.reference_narrative.is_some()) {
        if let Some(missing) = demos[..shots]
            .iter()
            .find(|d| d.reference_narrative.is_none())
        {
            return Err(PromptError::MissingNarrative(missing.scenario.id.clone()));
        }
    }
    let preamble = match method {
        Method::Standard | Method::Cot => templates.preamble_standard.trim_end(),
        Method::Not => templates.preamble_narrative.trim_end(),
    };
    let mut parts = vec![preamble.to_string()];
    for demo in &demos[..shots] {
        let narrative = if method == Method::Not {
            demo.reference_narrative.as_deref()
        } else {
            None
        };
        parts.push(render_class(
            &demo.scenario,
            &demo.assignment,
            &demo.presentation,
            ClassBody::Demonstration { narrative },
        )?);
    }
    parts.push(render_class(
        query,
        assignment,
        presentation,
        ClassBody::Query(method),
    )?);
    let text = parts.join("\n\n");
    Ok(PromptBundle {
        messages: vec![(Role::User, text)],
        method,
        shots,
        input_format: assignment.input_format,
        assignment: assignment.clone(),
        shuffle_seed,
    })
}

/// Builds the meta prompt that asks a generator model to write a reference
/// narrative from a demonstration's events and gold relations.
pub fn build_meta_prompt(
    demo: &Scenario,
    assignment: &LabelAssignment,
    presentation: &[EventId],
    spec: MetaPromptSpec,
    templates: &Templates,
) -> Result<PromptBundle, PromptError> {
    let class = render_class(
        demo,
        assignment,
        presentation,
        ClassBody::Demonstration { narrative: None },
    )?;
    let instruction = templates.meta_instruction(spec.instruction).trim_end();
    let text = format!(
        "{instruction}\n\n{class}\n\nNow, let's write the {}:",
        spec.instruction.genre()
    );
    Ok(PromptBundle {
        messages: vec![(Role::User, text)],
        method: Method::Standard,
        shots: 0,
        input_format: spec.input_format,
        assignment: assignment.clone(),
        shuffle_seed: 0,
    })
}

/// Serializes a graph in the tuple-list surface the judge template
/// describes, with node labels resolved to event descriptions.
pub fn render_graph_tuples(scenario: &Scenario, graph: &TemporalGraph) -> String {
    let label = |id: &EventId| -> String {
        scenario
            .description_of(id)
            .map(|d| d.to_string())
            .unwrap_or_else(|| id.as_str().trim_start_matches(HALLUCINATED_PREFIX).to_string())
    };
    let tuples: Vec<String> = graph
        .sorted_edges()
        .iter()
        .map(|(s, d)| format!("(\"{}\" -> \"{}\")", label(s), label(d)))
        .collect();
    format!("[{}]", tuples.join(", "))
}

/// Fills the faithfulness-judge template for one narrative/graph pair.
pub fn build_judge_prompt(
    scenario: &Scenario,
    narrative: &str,
    graph: &TemporalGraph,
    templates: &Templates,
) -> PromptBundle {
    let events: Vec<String> = scenario
        .events
        .iter()
        .map(|e| format!("\"{}\"", e.description))
        .collect();
    let text = templates
        .judge
        .trim_end()
        .replace("[SCENARIO]", &scenario.title)
        .replace("[EVENTS]", &format!("[{}]", events.join(", ")))
        .replace("[NARRATIVE]", narrative)
        .replace("[TEMPORAL GRAPH]", &render_graph_tuples(scenario, graph));
    PromptBundle {
        messages: vec![(Role::User, text)],
        method: Method::Standard,
        shots: 0,
        input_format: InputFormat::Alphabetical,
        assignment: LabelAssignment::new(Vec::new(), InputFormat::Alphabetical),
        shuffle_seed: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Domain, Event, Split};

    fn scenario(title: &str, events: &[(&str, &str)], edges: &[(&str, &str)]) -> Scenario {
        Scenario {
            id: format!("test-{}", title.replace(' ', "-")),
            title: title.to_string(),
            events: events
                .iter()
                .map(|(id, desc)| Event::new(*id, *desc))
                .collect(),
            edges: edges
                .iter()
                .map(|(s, d)| (EventId::from(*s), EventId::from(*d)))
                .collect(),
            domain: Domain::Daily,
            split: Split::Train,
        }
    }

    fn ride() -> Scenario {
        scenario(
            "ride a bike",
            &[
                ("e0", "put on helmet"),
                ("e1", "push pedal"),
                ("e2", "keep balance"),
            ],
            &[("e0", "e1"), ("e1", "e2")],
        )
    }

    #[test]
    fn camel_case_examples() {
        assert_eq!(camel_case_identifier("push pedal"), "pushPedal");
        assert_eq!(camel_case_identifier("Person Places Bomb!"), "personPlacesBomb");
        assert_eq!(camel_case_identifier("911 is called"), "event911IsCalled");
        assert_eq!(camel_case_identifier("   "), "event");
    }

    #[test]
    fn class_name_examples() {
        assert_eq!(class_name("bombing attacks"), "BombingAttacks");
        assert_eq!(class_name("ride a bike"), "RideABike");
    }

    #[test]
    fn alphabetical_labels_are_a_bijection() {
        let s = ride();
        let a = assign_labels(&s, 7, InputFormat::Alphabetical, LabelScheme::SeededRandom).unwrap();
        let labels: BTreeSet<&String> = a.labels.iter().map(|(l, _)| l).collect();
        let events: BTreeSet<&EventId> = a.labels.iter().map(|(_, e)| e).collect();
        assert_eq!(labels.len(), 3);
        assert_eq!(events.len(), 3);
        assert!(labels.contains(&"stepA".to_string()));
        assert!(labels.contains(&"stepB".to_string()));
        assert!(labels.contains(&"stepC".to_string()));
        // Identical seed reproduces the binding.
        let b = assign_labels(&s, 7, InputFormat::Alphabetical, LabelScheme::SeededRandom).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn alphabetical_rejects_more_than_26_events() {
        let events: Vec<(String, String)> = (0..27)
            .map(|i| (format!("e{i}"), format!("event number {i}")))
            .collect();
        let refs: Vec<(&str, &str)> = events
            .iter()
            .map(|(a, b)| (a.as_str(), b.as_str()))
            .collect();
        let s = scenario("too many", &refs, &[("e0", "e1")]);
        assert!(matches!(
            assign_labels(&s, 0, InputFormat::Alphabetical, LabelScheme::SeededRandom),
            Err(PromptError::TooManyEvents(_, 27))
        ));
    }

    #[test]
    fn descriptive_labels_dedupe_collisions() {
        let s = scenario(
            "bake",
            &[("e0", "check oven"), ("e1", "check oven"), ("e2", "mix dough")],
            &[("e0", "e1")],
        );
        let a = assign_labels(&s, 0, InputFormat::Descriptive, LabelScheme::SeededRandom).unwrap();
        let labels: Vec<&String> = a.labels.iter().map(|(l, _)| l).collect();
        assert_eq!(labels, vec!["checkOven", "checkOven2", "mixDough"]);
    }

    #[test]
    fn rendered_class_has_title_steps_and_methods() {
        let s = ride();
        let a = assign_labels(&s, 3, InputFormat::Alphabetical, LabelScheme::DatasetOrder).unwrap();
        let text = render_class(&s, &a, &s.event_ids(), ClassBody::EventsOnly).unwrap();
        assert!(text.starts_with("class RideABike:\n"));
        assert!(text.contains("    title = \"ride a bike\"\n"));
        assert!(text.contains("    steps = 3\n"));
        assert!(text.contains("    def stepA(self):\n        return \"put on helmet\"\n"));
        assert!(!text.contains("get_relations"));
    }

    #[test]
    fn demo_class_lists_relations_in_label_space() {
        let s = ride();
        let a = assign_labels(&s, 3, InputFormat::Alphabetical, LabelScheme::DatasetOrder).unwrap();
        let text =
            render_class(&s, &a, &s.event_ids(), ClassBody::Demonstration { narrative: None })
                .unwrap();
        assert!(text.contains("            \"stepA -> stepB\",\n"));
        assert!(text.contains("            \"stepB -> stepC\",\n"));
    }

    #[test]
    fn permuting_presentation_changes_order_not_content() {
        let s = ride();
        let a = assign_labels(&s, 11, InputFormat::Alphabetical, LabelScheme::SeededRandom).unwrap();
        let one = render_class(&s, &a, &s.event_ids(), ClassBody::EventsOnly).unwrap();
        let mut rev = s.event_ids();
        rev.reverse();
        let two = render_class(&s, &a, &rev, ClassBody::EventsOnly).unwrap();
        assert_ne!(one, two);
        let mut lines_one: Vec<&str> = one.lines().collect();
        let mut lines_two: Vec<&str> = two.lines().collect();
        lines_one.sort_unstable();
        lines_two.sort_unstable();
        assert_eq!(lines_one, lines_two);
    }

    #[test]
    fn query_tails_by_method() {
        let s = ride();
        let a = assign_labels(&s, 3, InputFormat::Alphabetical, LabelScheme::DatasetOrder).unwrap();
        let order = s.event_ids();
        let standard = render_class(&s, &a, &order, ClassBody::Query(Method::Standard)).unwrap();
        assert!(standard.ends_with("    def get_relations(self):\n        # TODO\n        # END\n"));
        assert!(!standard.contains("stepA -> "));

        let cot = render_class(&s, &a, &order, ClassBody::Query(Method::Cot)).unwrap();
        assert!(cot.contains(COT_CUE));

        let not = render_class(&s, &a, &order, ClassBody::Query(Method::Not)).unwrap();
        let narrative_at = not.find("def get_narrative").unwrap();
        let relations_at = not.find("def get_relations").unwrap();
        assert!(narrative_at < relations_at);
        assert!(not.contains(NARRATIVE_CUE));
    }

    #[test]
    fn bundles_count_demos_and_hide_gold() {
        let s = ride();
        let a = assign_labels(&s, 5, InputFormat::Alphabetical, LabelScheme::SeededRandom).unwrap();
        let order = presentation_order(&s, 99);
        let demo_scenario = scenario(
            "plant a tree",
            &[("d0", "dig a hole"), ("d1", "place the sapling")],
            &[("d0", "d1")],
        );
        let demo_assignment =
            assign_labels(&demo_scenario, 1, InputFormat::Alphabetical, LabelScheme::SeededRandom)
                .unwrap();
        let demo = Demonstration {
            presentation: demo_scenario.event_ids(),
            scenario: demo_scenario,
            reference_narrative: Some("A hole is dug, then the sapling is placed.".into()),
            assignment: demo_assignment,
            meta: DemoMeta::default(),
        };
        let templates = Templates::builtin();

        let zero = build_prompt(Method::Standard, &[], &s, &a, &order, 0, templates, 99).unwrap();
        assert_eq!(zero.user_text().matches("\nclass ").count(), 1);

        let one = build_prompt(Method::Not, &[demo.clone()], &s, &a, &order, 1, templates, 99)
            .unwrap();
        assert_eq!(one.user_text().matches("\nclass ").count(), 2);
        let text = one.user_text();
        let query_at = text.rfind("class RideABike").unwrap();
        let tail = &text[query_at..];
        assert!(tail.find("get_narrative").unwrap() < tail.find("get_relations").unwrap());
        // No label leakage: the query class carries no implemented relations.
        for (src, dst) in &s.edges {
            let leak = format!(
                "\"{} -> {}\"",
                a.label_for(src).unwrap(),
                a.label_for(dst).unwrap()
            );
            assert!(!tail.contains(&leak));
        }

        assert!(matches!(
            build_prompt(Method::Cot, &[demo], &s, &a, &order, 5, templates, 99),
            Err(PromptError::NotEnoughDemos { requested: 5, available: 1 })
        ));
    }

    #[test]
    fn template_dir_matches_the_embedded_copies() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .ancestors()
            .nth(2)
            .unwrap()
            .join("templates");
        let from_disk = Templates::from_dir(&dir).unwrap();
        let builtin = Templates::builtin();
        assert_eq!(from_disk.preamble_standard, builtin.preamble_standard);
        assert_eq!(from_disk.preamble_narrative, builtin.preamble_narrative);
        assert_eq!(from_disk.judge, builtin.judge);
        assert_eq!(from_disk.meta_simple_report, builtin.meta_simple_report);
        assert!(Templates::from_dir(std::path::Path::new("/no/such/dir")).is_err());
    }

    #[test]
    fn narrative_bundles_reject_partially_attached_narratives() {
        let s = ride();
        let a = assign_labels(&s, 5, InputFormat::Alphabetical, LabelScheme::SeededRandom).unwrap();
        let make_demo = |id: &str, narrative: Option<&str>| {
            let demo_scenario = scenario(
                id,
                &[("d0", "first step"), ("d1", "second step")],
                &[("d0", "d1")],
            );
            Demonstration {
                presentation: demo_scenario.event_ids(),
                assignment: assign_labels(
                    &demo_scenario,
                    1,
                    InputFormat::Alphabetical,
                    LabelScheme::SeededRandom,
                )
                .unwrap(),
                scenario: demo_scenario,
                reference_narrative: narrative.map(String::from),
                meta: DemoMeta::default(),
            }
        };
        let demos = vec![
            make_demo("with", Some("One step, then the other.")),
            make_demo("without", None),
        ];
        let err = build_prompt(
            Method::Not,
            &demos,
            &s,
            &a,
            &s.event_ids(),
            2,
            Templates::builtin(),
            0,
        )
        .unwrap_err();
        assert!(matches!(err, PromptError::MissingNarrative(id) if id.contains("without")));
    }

    #[test]
    fn meta_prompts_carry_the_verbatim_instructions() {
        let s = ride();
        let a = assign_labels(&s, 5, InputFormat::Alphabetical, LabelScheme::SeededRandom).unwrap();
        let templates = Templates::builtin();
        let spec = MetaPromptSpec {
            instruction: MetaInstruction::SimpleReport,
            input_format: InputFormat::Alphabetical,
        };
        let bundle = build_meta_prompt(&s, &a, &s.event_ids(), spec, templates).unwrap();
        assert!(bundle.user_text().contains("write a *simple and concise report*"));
        assert!(bundle.user_text().contains("class RideABike:"));
        assert_eq!(bundle.user_text().matches("def step").count(), 3);

        let news = build_meta_prompt(
            &s,
            &a,
            &s.event_ids(),
            MetaPromptSpec {
                instruction: MetaInstruction::NewsReport,
                input_format: InputFormat::Alphabetical,
            },
            templates,
        )
        .unwrap();
        assert!(news.user_text().contains("adhere to the non-fiction genre"));
    }

    #[test]
    fn judge_prompt_round_trips_the_narrative() {
        let s = ride();
        let graph = s.gold_graph();
        let narrative = "The rider puts on a helmet, pushes the pedal, and keeps balance.";
        let bundle = build_judge_prompt(&s, narrative, &graph, Templates::builtin());
        let text = bundle.user_text();
        assert!(text.contains("Temporal links:"));
        assert!(text.contains("Correct temporal links:"));
        let recovered = text
            .split("Narrative: ")
            .nth(1)
            .unwrap()
            .split("\nTemporal Graph:")
            .next()
            .unwrap();
        assert_eq!(recovered, narrative);
        let tuples = text.split("Temporal Graph: ").nth(1).unwrap();
        assert_eq!(tuples.matches(" -> ").count(), 2);
        assert!(tuples.contains("(\"put on helmet\" -> \"push pedal\")"));
    }
}
