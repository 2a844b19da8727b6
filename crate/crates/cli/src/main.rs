//! `tgg` — batch evaluation harness for temporal graph generation.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::collections::BTreeMap;
use std::path::PathBuf;

use tgg_core::client::{HttpBackend, LlmClient, MockBackend, MockPolicy, ResponseCache};
use tgg_core::corpus::{
    load_normalized, load_proscript, load_schema11, load_wikihow, save_normalized, LoadedCorpus,
};
use tgg_core::graph::Scenario;
use tgg_core::metrics::{aggregate, render_csv, render_markdown};
use tgg_core::prompt::{InputFormat, MetaInstruction, MetaPromptSpec, Templates};
use tgg_core::runner::{
    generate_reference_narratives, judge_faithfulness, run_experiment, score_offline,
    ExperimentConfig, RunManifest,
};

#[derive(Parser)]
#[command(name = "tgg", version, about = "Evaluate temporal graph generation with LLM prompting")]
struct Cli {
    /// Directory of prompt templates; the built-in copies are used if unset.
    #[arg(long, global = true)]
    templates: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetKind {
    Proscript,
    Schema11,
    Wikihow,
}

#[derive(Clone, Copy, ValueEnum)]
enum MockKind {
    Gold,
    RandomChain,
    Refusal,
}

#[derive(Subcommand)]
enum Command {
    /// Convert an upstream corpus release into normalized scenario JSONL.
    Convert {
        #[arg(long, value_enum)]
        dataset: DatasetKind,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Where to write the corpus manifest (defaults next to the output).
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Write the synthetic stand-in for an upstream corpus release.
    Synth {
        #[arg(long, value_enum)]
        dataset: DatasetKind,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 17)]
        seed: u64,
    },
    /// Generate reference narratives into the demonstration bank.
    GenNarratives {
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        generator: String,
        /// Instruction types (comma-separated).
        #[arg(long, value_delimiter = ',', default_value = "simple_report")]
        instruction: Vec<String>,
        /// Input formats (comma-separated).
        #[arg(long, value_delimiter = ',', default_value = "alphabetical")]
        format: Vec<String>,
        /// Updated bank path; defaults to overwriting the input bank.
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Run an experiment from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Replace the configured endpoint with a deterministic mock.
        #[arg(long, value_enum)]
        mock: Option<MockKind>,
    },
    /// Re-parse and re-score a completed run offline from its raw store.
    Score {
        #[arg(long)]
        results: PathBuf,
    },
    /// Judge self-faithfulness of sampled narrative outputs.
    Judge {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, default_value_t = 600)]
        sample: usize,
        #[arg(long)]
        judge_model: String,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Re-emit report.md / report.csv from a run's cards and manifest.
    Report {
        #[arg(long)]
        results: PathBuf,
    },
}

#[derive(Args)]
struct BackendArgs {
    /// OpenAI-compatible base URL (e.g. https://host/v1).
    #[arg(long)]
    endpoint: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long, default_value = "TGG_API_KEY")]
    api_key_env: String,
    #[arg(long, default_value = "cache")]
    cache: PathBuf,
    /// Use a deterministic mock instead of the endpoint.
    #[arg(long, value_enum)]
    mock: Option<MockKind>,
}

fn mock_policy(kind: MockKind) -> MockPolicy {
    match kind {
        MockKind::Gold => MockPolicy::Gold,
        MockKind::RandomChain => MockPolicy::RandomChain,
        MockKind::Refusal => MockPolicy::Refusal,
    }
}

fn build_client(
    endpoint: Option<&str>,
    api_key_env: &str,
    cache_dir: &std::path::Path,
    mock: Option<MockKind>,
    scenarios: &[Scenario],
) -> Result<LlmClient> {
    let cache = ResponseCache::open(cache_dir)?;
    let backend: Box<dyn tgg_core::client::Backend> = match (mock, endpoint) {
        (Some(kind), _) => Box::new(MockBackend::new(mock_policy(kind), scenarios)),
        (None, Some(url)) => Box::new(HttpBackend::new(url, api_key_env)),
        (None, None) => bail!("no endpoint configured; pass --mock or set an endpoint"),
    };
    Ok(LlmClient::new(backend, Some(cache)))
}

fn templates_from(cli_path: &Option<PathBuf>) -> Result<Templates> {
    Ok(match cli_path {
        Some(dir) => Templates::from_dir(dir)?,
        None => Templates::builtin().clone(),
    })
}

fn convert(
    kind: DatasetKind,
    input: &std::path::Path,
    output: &std::path::Path,
    manifest: Option<PathBuf>,
) -> Result<()> {
    let loaded: LoadedCorpus = match kind {
        DatasetKind::Proscript => load_proscript(input)?,
        DatasetKind::Schema11 => load_schema11(input)?,
        DatasetKind::Wikihow => load_wikihow(input)?,
    };
    save_normalized(output, &loaded.scenarios)?;
    let manifest_path = manifest.unwrap_or_else(|| output.with_extension("manifest.json"));
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&loaded.manifest)?,
    )
    .with_context(|| format!("writing {}", manifest_path.display()))?;
    println!(
        "{}: {} scenarios (mean events {:.2}, mean edges {:.2}, max events {}, {:.0}% non-linear)",
        loaded.manifest.dataset,
        loaded.manifest.scenario_count,
        loaded.manifest.mean_events,
        loaded.manifest.mean_gold_edges,
        loaded.manifest.max_events,
        loaded.manifest.percent_non_linear,
    );
    for note in &loaded.manifest.notes {
        println!("note: {note}");
    }
    if !loaded.rejected.is_empty() {
        println!("rejected {} records:", loaded.rejected.len());
        for reason in &loaded.rejected {
            println!("  {reason}");
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let templates = templates_from(&cli.templates)?;
    match cli.command {
        Command::Convert {
            dataset,
            input,
            output,
            manifest,
        } => convert(dataset, &input, &output, manifest)?,
        Command::Synth {
            dataset,
            output,
            seed,
        } => match dataset {
            DatasetKind::Proscript => tgg_core::synth::write_proscript(&output, seed)?,
            DatasetKind::Wikihow => tgg_core::synth::write_wikihow(&output, seed)?,
            DatasetKind::Schema11 => {
                bail!("the schema corpus ships as reviewed data (data/schema11.jsonl); nothing to synthesize")
            }
        },
        Command::GenNarratives {
            bank,
            generator,
            instruction,
            format,
            output,
            backend,
        } => {
            let mut specs = Vec::new();
            for instr in &instruction {
                let instruction: MetaInstruction =
                    instr.parse().map_err(|e: String| anyhow::anyhow!(e))?;
                for fmt in &format {
                    let input_format = match fmt.as_str() {
                        "alphabetical" => InputFormat::Alphabetical,
                        "descriptive" => InputFormat::Descriptive,
                        other => bail!("unknown input format: {other}"),
                    };
                    specs.push(MetaPromptSpec {
                        instruction,
                        input_format,
                    });
                }
            }
            let client = build_client(
                backend.endpoint.as_deref(),
                &backend.api_key_env,
                &backend.cache,
                backend.mock,
                &[],
            )?;
            let out = output.unwrap_or_else(|| bank.clone());
            let report =
                generate_reference_narratives(&bank, &specs, &generator, &client, &templates, &out)?;
            println!(
                "stored {} narratives for generator {}",
                report.stored, report.generator
            );
            for refusal in &report.refused {
                println!("refused: {refusal}");
            }
        }
        Command::Run { config, mock } => {
            let config = ExperimentConfig::from_toml_file(&config)?;
            let scenarios = load_normalized(&config.scenarios)?;
            // The random baseline never touches the backend.
            let mock = if config.method == tgg_core::runner::RunMethod::Random
                && mock.is_none()
                && config.endpoint.is_none()
            {
                Some(MockKind::Refusal)
            } else {
                mock
            };
            let client = build_client(
                config.endpoint.as_deref(),
                &config.api_key_env,
                &config.cache_dir,
                mock,
                &scenarios,
            )?;
            let outcome = run_experiment(&config, &client, &templates)?;
            println!(
                "{}",
                render_markdown(std::slice::from_ref(&outcome.manifest.report))
            );
            if !outcome.manifest.failures.is_empty() {
                println!("{} scenario failure(s); see manifest.json", outcome.manifest.failures.len());
            }
            println!("results in {}", config.out_dir.display());
        }
        Command::Score { results } => {
            let outcome = score_offline(&results, &templates)?;
            println!(
                "{}",
                render_markdown(std::slice::from_ref(&outcome.manifest.report))
            );
            println!("rescored into {}", outcome.manifest.config.out_dir.display());
        }
        Command::Judge {
            results,
            sample,
            judge_model,
            backend,
        } => {
            let manifest: RunManifest = serde_json::from_str(&std::fs::read_to_string(
                results.join("manifest.json"),
            )?)?;
            let scenarios = load_normalized(&manifest.config.scenarios)?;
            let client = build_client(
                backend.endpoint.as_deref(),
                &backend.api_key_env,
                &backend.cache,
                backend.mock,
                &scenarios,
            )?;
            let report = judge_faithfulness(&results, sample, &judge_model, &client, &templates)?;
            println!(
                "judged {} outputs: alignment {:.1}% (yes {}, largely yes {}, ambivalent {}, largely no {}, no {}, unparseable {})",
                report.sample_size,
                report.alignment_percent,
                report.distribution.yes,
                report.distribution.largely_yes,
                report.distribution.ambivalent,
                report.distribution.largely_no,
                report.distribution.no,
                report.distribution.unparseable,
            );
            println!("review queue: {} item(s)", report.review_queue.len());
        }
        Command::Report { results } => {
            let manifest: RunManifest = serde_json::from_str(&std::fs::read_to_string(
                results.join("manifest.json"),
            )?)?;
            let cards: Vec<tgg_core::metrics::ScoreCard> =
                std::fs::read_to_string(results.join("cards.jsonl"))?
                    .lines()
                    .map(serde_json::from_str)
                    .collect::<Result<_, _>>()?;
            let consistency: BTreeMap<String, f64> = manifest
                .scenarios
                .iter()
                .filter_map(|s| s.consistency.map(|c| (s.id.clone(), c)))
                .collect();
            let row = aggregate(
                &cards,
                &consistency,
                manifest.config.shuffles,
                &manifest.config.dataset,
                &manifest.config.method.to_string(),
                manifest.config.components_convention,
            )?;
            std::fs::write(results.join("report.md"), render_markdown(std::slice::from_ref(&row)))?;
            std::fs::write(results.join("report.csv"), render_csv(std::slice::from_ref(&row)))?;
            print!("{}", render_markdown(std::slice::from_ref(&row)));
        }
    }
    Ok(())
}
