//! Experiment orchestration: the shuffle protocol, baselines, scoring,
//! reference-narrative generation, faithfulness judging, and offline
//! rescoring.
//!
//! Determinism contract: (config, cache) fully determine every score card.
//! Per-scenario seeds derive from the master seed and the scenario id, so
//! concurrent and sequential execution produce identical results.

use crate::client::{hash_seed, GenerationParams, LlmClient, ResponseCache};
use crate::corpus::{
    load_normalized, CorpusManifest, DemoBank, NarrativeKey,
};
use crate::graph::{canonicalize, linear_chain, EventId, Scenario, TemporalGraph};
use crate::judging::{review_reason, FaithfulnessReport, ReviewItem, VerdictDistribution};
use crate::metrics::{
    aggregate, pairwise_consistency, score_pair, ComponentsConvention, ReportRow, ScoreCard,
};
use crate::parse::{extract_relations, parse_judge};
use crate::prompt::{
    assign_labels, build_judge_prompt, build_meta_prompt, build_prompt, Demonstration,
    InputFormat, LabelScheme, Method, MetaPromptSpec, PromptBundle, Templates,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Prompt(#[from] crate::prompt::PromptError),
    #[error(transparent)]
    Client(#[from] crate::client::ClientError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error("i/o at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad config {path}: {message}")]
    Config { path: String, message: String },
    #[error("offline rescore is missing raw completions for scenarios: {0:?}")]
    MissingRaw(Vec<String>),
    #[error("run at {0} has no manifest.json")]
    NoManifest(String),
    #[error("judging needs narrative outputs; none found in the run")]
    NothingToJudge,
}

fn io_err(path: &Path, source: std::io::Error) -> RunError {
    RunError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// What produces predicted graphs for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMethod {
    Standard,
    Cot,
    Not,
    /// The random baseline: a linear chain over the shuffled input order,
    /// no model in the loop.
    Random,
}

impl RunMethod {
    pub fn prompting(self) -> Option<Method> {
        match self {
            RunMethod::Standard => Some(Method::Standard),
            RunMethod::Cot => Some(Method::Cot),
            RunMethod::Not => Some(Method::Not),
            RunMethod::Random => None,
        }
    }
}

impl std::fmt::Display for RunMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RunMethod::Standard => "standard",
            RunMethod::Cot => "cot",
            RunMethod::Not => "not",
            RunMethod::Random => "random",
        })
    }
}

fn default_shots() -> usize {
    5
}
fn default_shuffles() -> u32 {
    3
}
fn default_ged_budget() -> f64 {
    10.0
}
fn default_workers() -> usize {
    2
}
fn default_max_tokens() -> u32 {
    2048
}
fn default_api_key_env() -> String {
    "TGG_API_KEY".to_string()
}

/// Full description of one experiment. Serialized into the run manifest;
/// two runs with equal configs and caches are score-identical.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Dataset label used in reports.
    pub dataset: String,
    /// Normalized scenario JSONL.
    pub scenarios: PathBuf,
    pub method: RunMethod,
    #[serde(default = "default_shots")]
    pub shots: usize,
    pub input_format: InputFormat,
    /// Reference-narrative key for narrative prompting; absent means
    /// narrative prompting without references.
    #[serde(default)]
    pub narrative_generator: Option<String>,
    #[serde(default)]
    pub narrative_instruction: Option<crate::prompt::MetaInstruction>,
    /// Input format the narratives were generated from; defaults to the
    /// run's own input format.
    #[serde(default)]
    pub narrative_input_format: Option<InputFormat>,
    #[serde(default = "default_shuffles")]
    pub shuffles: u32,
    pub master_seed: u64,
    pub model: String,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_ged_budget")]
    pub ged_budget_secs: f64,
    #[serde(default)]
    pub demo_bank: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub cache_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub components_convention: ComponentsConvention,
    /// Pool shuffle pairs across scenarios instead of averaging each
    /// scenario first. With a fixed shuffle count the two coincide.
    #[serde(default)]
    pub consistency_pooled: bool,
    #[serde(default)]
    pub label_scheme: LabelScheme,
    /// Evaluate only the first N scenarios (desk-scale runs).
    #[serde(default)]
    pub limit: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_toml_file(path: &Path) -> Result<ExperimentConfig, RunError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        toml::from_str(&text).map_err(|e| RunError::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn narrative_key(&self) -> Option<NarrativeKey> {
        let generator = self.narrative_generator.clone()?;
        let instruction = self.narrative_instruction?;
        Some(NarrativeKey {
            generator,
            instruction,
            input_format: self.narrative_input_format.unwrap_or(self.input_format),
        })
    }

    pub fn ged_budget(&self) -> Option<Duration> {
        Some(Duration::from_secs_f64(self.ged_budget_secs))
    }

    pub fn generation_params(&self) -> GenerationParams {
        let mut params = GenerationParams::greedy(&self.model);
        params.max_tokens = self.max_tokens;
        params
    }

    fn label_seed(&self, scenario_id: &str) -> u64 {
        label_seed(self.master_seed, scenario_id)
    }

    fn shuffle_seed(&self, scenario_id: &str, shuffle: u32) -> u64 {
        shuffle_seed(self.master_seed, scenario_id, shuffle)
    }
}

/// Per-scenario label-binding seed: fixed across all shuffles of a run.
pub fn label_seed(master_seed: u64, scenario_id: &str) -> u64 {
    hash_seed(&["labels", &master_seed.to_string(), scenario_id])
}

/// Per-scenario, per-shuffle presentation seed.
pub fn shuffle_seed(master_seed: u64, scenario_id: &str, shuffle: u32) -> u64 {
    hash_seed(&[
        "shuffle",
        &master_seed.to_string(),
        scenario_id,
        &shuffle.to_string(),
    ])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShuffleRecord {
    pub index: u32,
    pub seed: u64,
    /// Request hash of the completion behind this shuffle; absent for the
    /// random baseline.
    pub key: Option<String>,
    pub from_cache: bool,
    pub validity: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub id: String,
    pub label_seed: u64,
    pub labels: Vec<(String, EventId)>,
    pub shuffles: Vec<ShuffleRecord>,
    pub consistency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub dataset_manifest: CorpusManifest,
    pub scenarios: Vec<ScenarioRecord>,
    pub failures: Vec<String>,
    pub divergences: Vec<String>,
    pub report: ReportRow,
}

pub struct RunOutcome {
    pub manifest: RunManifest,
    pub cards: Vec<ScoreCard>,
}

struct ScenarioResult {
    record: ScenarioRecord,
    cards: Vec<ScoreCard>,
    consistency: Option<f64>,
    pair_scores: Vec<f64>,
    raw_keys: Vec<String>,
    divergences: Vec<String>,
}

/// The random baseline prediction for one shuffle: events naively chained
/// in the order they appear in the input.
pub fn random_baseline(
    _scenario: &Scenario,
    presentation_order: &[EventId],
) -> TemporalGraph {
    linear_chain(presentation_order)
}

fn presentation_for(scenario: &Scenario, seed: u64) -> Vec<EventId> {
    let mut order = scenario.event_ids();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order
}

fn evaluate_scenario(
    config: &ExperimentConfig,
    scenario: &Scenario,
    demos: &[Demonstration],
    client: &LlmClient,
    templates: &Templates,
) -> Result<ScenarioResult, RunError> {
    let label_seed = config.label_seed(&scenario.id);
    let assignment = assign_labels(
        scenario,
        label_seed,
        config.input_format,
        config.label_scheme,
    )?;
    let gold = scenario.gold_graph();
    let all_events = scenario.event_ids();
    let params = config.generation_params();

    let mut cards = Vec::new();
    let mut shuffle_records = Vec::new();
    let mut preds = Vec::new();
    let mut raw_keys = Vec::new();
    let mut divergences = Vec::new();
    for shuffle in 0..config.shuffles {
        let seed = config.shuffle_seed(&scenario.id, shuffle);
        let order = presentation_for(scenario, seed);
        let (pred, key, from_cache) = match config.method.prompting() {
            None => (random_baseline(scenario, &order), None, false),
            Some(method) => {
                let bundle = build_prompt(
                    method,
                    demos,
                    scenario,
                    &assignment,
                    &order,
                    config.shots,
                    templates,
                    seed,
                )?;
                let completion = client.complete(&bundle, &params)?;
                if let Some(divergence) = completion.divergence {
                    divergences.push(divergence);
                }
                let parsed = extract_relations(&completion.text);
                raw_keys.push(completion.key.clone());
                (
                    canonicalize(&parsed.relations, &assignment, &all_events),
                    Some(completion.key),
                    completion.from_cache,
                )
            }
        };
        let card = score_pair(&scenario.id, shuffle, &gold, &pred, config.ged_budget())?;
        shuffle_records.push(ShuffleRecord {
            index: shuffle,
            seed,
            key,
            from_cache,
            validity: card.validity,
        });
        cards.push(card);
        preds.push(pred);
    }
    let (consistency, pair_scores) = if preds.len() >= 2 {
        let mut pairs = Vec::new();
        for i in 0..preds.len() {
            for j in (i + 1)..preds.len() {
                pairs.push(pairwise_consistency(&[preds[i].clone(), preds[j].clone()])?);
            }
        }
        (Some(pairwise_consistency(&preds)?), pairs)
    } else {
        (None, Vec::new())
    };
    Ok(ScenarioResult {
        record: ScenarioRecord {
            id: scenario.id.clone(),
            label_seed,
            labels: assignment.labels.clone(),
            shuffles: shuffle_records,
            consistency,
            error: None,
        },
        cards,
        consistency,
        pair_scores,
        raw_keys,
        divergences,
    })
}

fn load_run_scenarios(config: &ExperimentConfig) -> Result<Vec<Scenario>, RunError> {
    let mut scenarios = load_normalized(&config.scenarios)?;
    if let Some(limit) = config.limit {
        scenarios.truncate(limit);
    }
    Ok(scenarios)
}

fn load_run_demos(config: &ExperimentConfig) -> Result<Vec<Demonstration>, RunError> {
    if config.method.prompting().is_none() || config.shots == 0 {
        return Ok(Vec::new());
    }
    let bank_path = config.demo_bank.clone().ok_or_else(|| RunError::Config {
        path: String::new(),
        message: "method requires a demo bank but none was configured".to_string(),
    })?;
    let bank = DemoBank::load(&bank_path)?;
    let key = if config.method == RunMethod::Not {
        config.narrative_key()
    } else {
        None
    };
    Ok(bank.select(config.shots, config.input_format, key.as_ref())?)
}

/// Runs the full experiment and writes the results directory: manifest,
/// cards, reports, and raw completion copies. Endpoint failures abort only
/// the affected scenario and are surfaced in the manifest.
pub fn run_experiment(
    config: &ExperimentConfig,
    client: &LlmClient,
    templates: &Templates,
) -> Result<RunOutcome, RunError> {
    let scenarios = load_run_scenarios(config)?;
    let demos = load_run_demos(config)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()
        .expect("worker pool builds");
    let results: Vec<Result<ScenarioResult, (String, String)>> = pool.install(|| {
        use rayon::prelude::*;
        scenarios
            .par_iter()
            .map(|scenario| {
                evaluate_scenario(config, scenario, &demos, client, templates)
                    .map_err(|e| (scenario.id.clone(), e.to_string()))
            })
            .collect()
    });

    let mut cards = Vec::new();
    let mut records = Vec::new();
    let mut consistency_by_scenario = BTreeMap::new();
    let mut pooled_pairs = Vec::new();
    let mut failures = Vec::new();
    let mut divergences = Vec::new();
    let mut raw_keys = Vec::new();
    for (scenario, result) in scenarios.iter().zip(results) {
        match result {
            Ok(mut r) => {
                cards.append(&mut r.cards);
                if let Some(c) = r.consistency {
                    consistency_by_scenario.insert(scenario.id.clone(), c);
                }
                pooled_pairs.extend(r.pair_scores);
                raw_keys.extend(r.raw_keys);
                divergences.extend(r.divergences);
                records.push(r.record);
            }
            Err((id, message)) => {
                failures.push(format!("{id}: {message}"));
                records.push(ScenarioRecord {
                    id,
                    label_seed: config.label_seed(&scenario.id),
                    labels: Vec::new(),
                    shuffles: Vec::new(),
                    consistency: None,
                    error: Some(message),
                });
            }
        }
    }

    let mut report = aggregate(
        &cards,
        &consistency_by_scenario,
        config.shuffles,
        &config.dataset,
        &config.method.to_string(),
        config.components_convention,
    )?;
    if config.consistency_pooled && !pooled_pairs.is_empty() {
        report.consistency =
            100.0 * pooled_pairs.iter().sum::<f64>() / pooled_pairs.len() as f64;
    }

    let manifest = RunManifest {
        config: config.clone(),
        dataset_manifest: CorpusManifest::compute(
            &config.dataset,
            &config.scenarios.display().to_string(),
            &scenarios,
        ),
        scenarios: records,
        failures,
        divergences,
        report,
    };
    write_results(config, &manifest, &cards, &raw_keys, client.cache())?;
    Ok(RunOutcome { manifest, cards })
}

pub fn cards_to_jsonl(cards: &[ScoreCard]) -> String {
    let mut out = String::new();
    for card in cards {
        out.push_str(&serde_json::to_string(card).expect("card serializes"));
        out.push('\n');
    }
    out
}

fn write_results(
    config: &ExperimentConfig,
    manifest: &RunManifest,
    cards: &[ScoreCard],
    raw_keys: &[String],
    cache: Option<&ResponseCache>,
) -> Result<(), RunError> {
    let dir = &config.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let write = |name: &str, contents: &str| -> Result<(), RunError> {
        let path = dir.join(name);
        std::fs::write(&path, contents).map_err(|e| io_err(&path, e))
    };
    write(
        "manifest.json",
        &serde_json::to_string_pretty(manifest).expect("manifest serializes"),
    )?;
    write("cards.jsonl", &cards_to_jsonl(cards))?;
    write(
        "report.md",
        &crate::metrics::render_markdown(std::slice::from_ref(&manifest.report)),
    )?;
    write(
        "report.csv",
        &crate::metrics::render_csv(std::slice::from_ref(&manifest.report)),
    )?;
    if let Some(cache) = cache {
        let raw_dir = dir.join("raw");
        std::fs::create_dir_all(&raw_dir).map_err(|e| io_err(&raw_dir, e))?;
        for key in raw_keys {
            let src = cache.path_for(key);
            let dst = raw_dir.join(format!("{key}.json"));
            if src.exists() && !dst.exists() {
                std::fs::copy(&src, &dst).map_err(|e| io_err(&dst, e))?;
            }
        }
    }
    Ok(())
}

/// Backend that refuses every request: offline rescoring must be served
/// entirely from stored completions.
struct OfflineBackend;

impl crate::client::Backend for OfflineBackend {
    fn complete(
        &self,
        _bundle: &PromptBundle,
        _params: &GenerationParams,
        key: &str,
    ) -> Result<String, crate::client::ClientError> {
        Err(crate::client::ClientError::Transport {
            key: key.to_string(),
            message: "offline rescore: completion not in the raw store".to_string(),
        })
    }

    fn name(&self) -> &str {
        "offline"
    }
}

/// Re-parses and re-scores a completed run from its stored raw completions,
/// with zero network. Byte-identical cards are the determinism contract;
/// a missing completion is an error naming the affected scenarios.
pub fn score_offline(results_dir: &Path, templates: &Templates) -> Result<RunOutcome, RunError> {
    let manifest_path = results_dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(RunError::NoManifest(results_dir.display().to_string()));
    }
    let manifest_text =
        std::fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let old: RunManifest = serde_json::from_str(&manifest_text).map_err(|e| RunError::Config {
        path: manifest_path.display().to_string(),
        message: e.to_string(),
    })?;

    let mut config = old.config.clone();
    let raw_dir = results_dir.join("raw");
    let replay_dir = if raw_dir.exists() {
        raw_dir
    } else {
        config.cache_dir.clone()
    };
    let rescore_dir = results_dir.join("rescore");
    config.out_dir = rescore_dir;
    let cache = ResponseCache::open(&replay_dir)?;
    let client = LlmClient::new(Box::new(OfflineBackend), Some(cache));
    let outcome = run_experiment(&config, &client, templates)?;
    if !outcome.manifest.failures.is_empty() {
        let mut ids: Vec<String> = outcome
            .manifest
            .failures
            .iter()
            .map(|f| f.split(':').next().unwrap_or_default().to_string())
            .collect();
        ids.sort();
        return Err(RunError::MissingRaw(ids));
    }
    Ok(outcome)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NarrativeGenReport {
    pub generator: String,
    pub stored: usize,
    pub refused: Vec<String>,
}

/// Generates reference narratives for every demonstration and meta-prompt
/// spec, storing them in the bank keyed by (generator, instruction, input
/// format). Refusals flag the demo unusable for that key and are reported.
pub fn generate_reference_narratives(
    bank_path: &Path,
    specs: &[MetaPromptSpec],
    generator: &str,
    client: &LlmClient,
    templates: &Templates,
    out_path: &Path,
) -> Result<NarrativeGenReport, RunError> {
    let mut bank = DemoBank::load(bank_path)?;
    let mut params = GenerationParams::greedy(generator);
    params.stop = Vec::new();
    let mut stored = 0usize;
    let mut refused = Vec::new();
    for index in 0..bank.demos.len() {
        let scenario = bank.demos[index].scenario.clone();
        for spec in specs {
            let assignment = assign_labels(
                &scenario,
                crate::corpus::demo_label_seed(&scenario.id),
                spec.input_format,
                LabelScheme::SeededRandom,
            )?;
            let bundle = build_meta_prompt(
                &scenario,
                &assignment,
                &scenario.event_ids(),
                *spec,
                templates,
            )?;
            let completion = client.complete(&bundle, &params)?;
            let text = completion.text.trim().to_string();
            let key = NarrativeKey {
                generator: generator.to_string(),
                instruction: spec.instruction,
                input_format: spec.input_format,
            };
            if text.is_empty() || text.starts_with("I cannot") || text.starts_with("I can't") {
                refused.push(format!("{}: {key}", scenario.id));
                continue;
            }
            bank.set_narrative(index, &key, text);
            stored += 1;
        }
    }
    bank.save(out_path)?;
    Ok(NarrativeGenReport {
        generator: generator.to_string(),
        stored,
        refused,
    })
}

/// Judges the self-faithfulness of sampled narrative outputs from a
/// completed run: rebuilds each output from the raw store, asks the judge
/// model, and tallies verdicts, alignment, and the review queue.
pub fn judge_faithfulness(
    results_dir: &Path,
    sample_size: usize,
    judge_model: &str,
    client: &LlmClient,
    templates: &Templates,
) -> Result<FaithfulnessReport, RunError> {
    let manifest_path = results_dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(RunError::NoManifest(results_dir.display().to_string()));
    }
    let manifest: RunManifest = serde_json::from_str(
        &std::fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?,
    )
    .map_err(|e| RunError::Config {
        path: manifest_path.display().to_string(),
        message: e.to_string(),
    })?;
    let config = &manifest.config;
    let scenarios = load_run_scenarios(config)?;
    let by_id: BTreeMap<&str, &Scenario> =
        scenarios.iter().map(|s| (s.id.as_str(), s)).collect();
    let raw_store = ResponseCache::open(&results_dir.join("raw"))?;

    // Collect (scenario, shuffle, narrative, graph) candidates.
    let mut candidates = Vec::new();
    for record in &manifest.scenarios {
        let Some(scenario) = by_id.get(record.id.as_str()) else {
            continue;
        };
        let assignment = crate::graph::LabelAssignment::new(
            record.labels.clone(),
            config.input_format,
        );
        for shuffle in &record.shuffles {
            let Some(key) = &shuffle.key else { continue };
            let Some(entry) = raw_store.get(key) else { continue };
            let parsed = extract_relations(&entry.value);
            let Some(narrative) = parsed.narrative else { continue };
            let graph = canonicalize(&parsed.relations, &assignment, &scenario.event_ids());
            candidates.push((record.id.clone(), shuffle.index, narrative, graph));
        }
    }
    if candidates.is_empty() {
        return Err(RunError::NothingToJudge);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(hash_seed(&[
        "judge-sample",
        &config.master_seed.to_string(),
    ]));
    candidates.shuffle(&mut rng);
    candidates.truncate(sample_size);

    let mut params = GenerationParams::greedy(judge_model);
    params.stop = Vec::new();
    let mut distribution = VerdictDistribution::default();
    let mut review_queue = Vec::new();
    for (scenario_id, shuffle, narrative, graph) in &candidates {
        let scenario = by_id[scenario_id.as_str()];
        let bundle = build_judge_prompt(scenario, narrative, graph, templates);
        let completion = client.complete(&bundle, &params)?;
        match parse_judge(&completion.text) {
            Ok(verdict) => {
                distribution.record(verdict.verdict);
                if let Some(reason) = review_reason(&verdict) {
                    review_queue.push(ReviewItem {
                        scenario: scenario_id.clone(),
                        shuffle: *shuffle,
                        reason,
                        verdict: Some(verdict.verdict),
                        rationale: verdict.rationale,
                    });
                }
            }
            Err(e) => {
                distribution.unparseable += 1;
                review_queue.push(ReviewItem {
                    scenario: scenario_id.clone(),
                    shuffle: *shuffle,
                    reason: format!("unparseable verdict: {e}"),
                    verdict: None,
                    rationale: completion.text.chars().take(200).collect(),
                });
            }
        }
    }
    let report = FaithfulnessReport {
        judge_model: judge_model.to_string(),
        sample_size: candidates.len(),
        alignment_percent: distribution.alignment_percent(),
        distribution,
        review_queue,
    };
    let path = results_dir.join("judge_report.json");
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )
    .map_err(|e| io_err(&path, e))?;
    Ok(report)
}
