//! `icm` — label-elicitation pipeline CLI.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error. Every run writes
//! the resolved configuration echo into the output directory next to its
//! artifacts.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use icm_core::consistency::derive_constraints;
use icm_core::datasets::{sample, unify, SourceDataset, UnificationTemplate};
use icm_core::eval::{accuracy_by_task, bias_failure_rates, run_baseline, BaselineMode, EvalMode, EvaluationReport};
use icm_core::model::{Dataset, LabelAssignment, Provenance};
use icm_core::scorer::ScorerBackend;
use icm_core::search::run_icm;
use icm_pipeline::config::RunConfig;
use icm_pipeline::formats::{
    atomic_write, load_source, read_assignment, read_dataset, read_report_json, write_assignment,
    write_dataset, write_report_csv, write_report_json, write_trace,
};
use icm_pipeline::pipeline::{export_finetune, pseudo_label};
use icm_pipeline::udhr;

#[derive(Parser)]
#[command(name = "icm", version, about = "Coherence-maximizing label elicitation pipeline")]
struct Cli {
    /// Run configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides ICM_OUTPUT_DIR and the config file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// HTTP backend token; overrides ICM_BACKEND_TOKEN and the config file.
    #[arg(long, global = true)]
    token: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CliBaselineMode {
    ZeroShot,
    ManyShot,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CliEvalMode {
    IcmLabels,
    ZeroShotBase,
    ZeroShotChat,
    ManyShot,
}

impl From<CliEvalMode> for EvalMode {
    fn from(mode: CliEvalMode) -> EvalMode {
        match mode {
            CliEvalMode::IcmLabels => EvalMode::IcmLabels,
            CliEvalMode::ZeroShotBase => EvalMode::ZeroShotBase,
            CliEvalMode::ZeroShotChat => EvalMode::ZeroShotChat,
            CliEvalMode::ManyShot => EvalMode::ManyShot,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Load a source file, unify it into the claim schema, and sample it.
    Ingest {
        /// Line-delimited JSON source file.
        #[arg(long)]
        input: PathBuf,
        /// Source kind (normbank, ethics_commonsense, ...).
        #[arg(long)]
        source: String,
        /// Optional sample size (whole groups, seeded).
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Expand the bundled identity x article tables into the benchmark.
    ExpandUdhr,
    /// Run the coherence-maximizing search over a dataset.
    Label {
        /// Native-format dataset; defaults to the configured path.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Run a zero-shot or many-shot prompting baseline.
    Baseline {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: CliBaselineMode,
        /// Demonstration count for many-shot; defaults to the config.
        #[arg(long)]
        shots: Option<usize>,
        /// Gold-labeled demonstration pool, disjoint from the dataset.
        #[arg(long)]
        demo_pool: Option<PathBuf>,
        /// Instruction prefix file; defaults to the configured path.
        #[arg(long)]
        instruction: Option<PathBuf>,
    },
    /// Extend a seed assignment to the unlabeled remainder.
    PseudoLabel {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Seed assignment (ICM output) covering a subset of the dataset.
        #[arg(long)]
        seed_assignment: PathBuf,
    },
    /// Score an assignment against gold labels and bias expectations.
    Eval {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        assignment: PathBuf,
        /// Mode tag recorded in the report.
        #[arg(long, value_enum, default_value = "icm-labels")]
        mode: CliEvalMode,
        /// Also compute UDHR bias failure rates.
        #[arg(long)]
        bias: bool,
    },
    /// Export prompt/completion fine-tuning data for a labeled dataset.
    ExportFt {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        assignment: PathBuf,
    },
    /// Re-render report.csv and a summary from a run's report.json.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    match &cli.config {
        Some(path) => RunConfig::load(path),
        None => Ok(RunConfig::default()),
    }
}

fn output_dir(cli: &Cli, config: &RunConfig) -> anyhow::Result<PathBuf> {
    let dir = cli
        .out
        .clone()
        .or_else(|| std::env::var_os("ICM_OUTPUT_DIR").map(PathBuf::from))
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating output dir {}", dir.display()))?;
    Ok(dir)
}

fn write_echo(dir: &Path, config: &RunConfig) -> anyhow::Result<()> {
    atomic_write(&dir.join("config.echo"), config.echo().as_bytes())?;
    Ok(())
}

fn dataset_path(flag: &Option<PathBuf>, config: &RunConfig) -> anyhow::Result<PathBuf> {
    flag.clone()
        .or_else(|| config.dataset.path.clone())
        .ok_or_else(|| anyhow::anyhow!("no dataset given: pass --dataset or set dataset.path in the config"))
}

fn load_native_dataset(flag: &Option<PathBuf>, config: &RunConfig) -> anyhow::Result<Dataset> {
    let path = dataset_path(flag, config)?;
    Ok(read_dataset(&path)?)
}

fn build_backend(cli: &Cli, config: &RunConfig) -> anyhow::Result<Box<dyn ScorerBackend>> {
    config.backend.build(cli.token.as_deref())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = load_config(&cli)?;
    let dir = output_dir(&cli, &config)?;
    write_echo(&dir, &config)?;

    match &cli.command {
        Command::Ingest { input, source, sample: sample_n, seed } => {
            let source = SourceDataset::parse(source)
                .ok_or_else(|| anyhow::anyhow!("unknown source kind {source:?}"))?;
            let template = UnificationTemplate::for_source(source);
            let records = load_source(input, source)?;
            let mut examples = Vec::with_capacity(records.len());
            for record in &records {
                examples.push(unify(record, &template)?);
            }
            let mut dataset = Dataset::new(source.as_str(), examples);
            let derived = derive_constraints(&dataset);
            for warning in &derived.warnings {
                eprintln!("warning: {warning}");
            }
            dataset.constraints = derived.constraints;
            let n = sample_n.or(config.dataset.sample_size);
            if let Some(n) = n {
                let sample_seed = seed.unwrap_or(config.dataset.sample_seed);
                dataset = sample(&dataset, n, sample_seed)?;
                // Re-derive over the surviving groups.
                dataset.constraints = derive_constraints(&dataset).constraints;
            }
            write_dataset(&dir.join("dataset.jsonl"), &dataset)?;
            println!("ingested {} examples, {} constraints", dataset.len(), dataset.constraints.len());
        }
        Command::ExpandUdhr => {
            let dataset = udhr::expand()?;
            let (identities_sha, articles_sha) = udhr::table_checksums();
            write_dataset(&dir.join("dataset.jsonl"), &dataset)?;
            println!(
                "expanded {} examples ({} identity-article pairs)\n\
                 identities table sha256 {identities_sha}\narticles table sha256 {articles_sha}",
                dataset.len(),
                dataset.len() / 2
            );
        }
        Command::Label { dataset } => {
            let dataset = load_native_dataset(dataset, &config)?;
            let backend = build_backend(&cli, &config)?;
            let annealing = config.annealing.to_core();
            let trace = run_icm(&dataset, backend.as_ref(), &annealing)?;
            write_trace(&dir.join("trace.jsonl"), &trace)?;
            write_assignment(&dir.join("assignment.json"), &dataset, &trace.final_assignment)?;
            println!(
                "labeled {} examples in {} iterations; total {:.4}, {} inconsistencies",
                trace.final_assignment.len(),
                trace.records.len(),
                trace.final_score.total,
                trace.final_score.inconsistency_count
            );
        }
        Command::Baseline { dataset, mode, shots, demo_pool, instruction } => {
            let dataset = load_native_dataset(dataset, &config)?;
            let backend = build_backend(&cli, &config)?;
            let mode = match mode {
                CliBaselineMode::ZeroShot => BaselineMode::ZeroShot,
                CliBaselineMode::ManyShot => BaselineMode::ManyShot,
            };
            let shots = shots.unwrap_or(config.evaluation.shots);
            let pool = match demo_pool {
                Some(path) => Some(read_dataset(path)?),
                None => None,
            };
            let instruction_path = instruction.clone().or_else(|| config.evaluation.instruction_path.clone());
            let instruction_text = match &instruction_path {
                Some(path) => Some(
                    std::fs::read_to_string(path)
                        .with_context(|| format!("reading instruction {}", path.display()))?,
                ),
                None => None,
            };
            let predictions = run_baseline(
                &dataset,
                backend.as_ref(),
                mode,
                shots,
                pool.as_ref(),
                instruction_text.as_deref().map(str::trim_end),
                config.evaluation.seed,
            )?;
            write_assignment(&dir.join("assignment.json"), &dataset, &predictions)?;
            println!("baseline labeled {} examples", predictions.len());
        }
        Command::PseudoLabel { dataset, seed_assignment } => {
            let dataset = load_native_dataset(dataset, &config)?;
            let backend = build_backend(&cli, &config)?;
            let seed = read_assignment(seed_assignment, &dataset)?;
            let combined = pseudo_label(
                &dataset,
                &seed,
                backend.as_ref(),
                config.pipeline.demo_pool_size,
                config.pipeline.pseudo_seed,
            )?;
            write_assignment(&dir.join("assignment.json"), &dataset, &combined)?;
            let pseudo = combined
                .iter()
                .filter(|(id, _)| combined.provenance(id) == Some(Provenance::Pseudo))
                .count();
            println!("pseudo-labeled {pseudo} of {} examples", combined.len());
        }
        Command::Eval { dataset, assignment, mode, bias } => {
            let dataset = load_native_dataset(dataset, &config)?;
            let predictions = read_assignment(assignment, &dataset)?;
            let report = evaluate(&dataset, &predictions, (*mode).into(), *bias, &config)?;
            write_report_json(&dir.join("report.json"), &report)?;
            write_report_csv(&dir.join("report.csv"), &report)?;
            print_summary(&report);
        }
        Command::ExportFt { dataset, assignment } => {
            let dataset = load_native_dataset(dataset, &config)?;
            let labels = read_assignment(assignment, &dataset)?;
            let summary = export_finetune(&dataset, &labels, &dir.join("finetune.jsonl"))?;
            println!("exported {} records, sha256 {}", summary.records, summary.sha256);
        }
        Command::Report { run_dir } => {
            let report = read_report_json(&run_dir.join("report.json"))?;
            write_report_csv(&run_dir.join("report.csv"), &report)?;
            print_summary(&report);
        }
    }
    Ok(())
}

fn evaluate(
    dataset: &Dataset,
    predictions: &LabelAssignment,
    mode: EvalMode,
    bias: bool,
    config: &RunConfig,
) -> anyhow::Result<EvaluationReport> {
    let per_task_accuracy = accuracy_by_task(dataset, predictions)?;
    let bias = if bias {
        let all_udhr = dataset.examples.iter().all(|e| e.metadata.get("source").map(String::as_str) == Some("udhr"));
        if !all_udhr {
            bail!("--bias requires a UDHR dataset (every example tagged source=udhr)");
        }
        Some(bias_failure_rates(dataset, predictions)?)
    } else {
        None
    };
    Ok(EvaluationReport {
        mode,
        backend: config.backend.name().to_owned(),
        config_echo: config.echo(),
        per_task_accuracy,
        bias,
    })
}

fn print_summary(report: &EvaluationReport) {
    for (task, cell) in &report.per_task_accuracy {
        println!("accuracy {task}: {}/{} = {:.4}", cell.correct, cell.total, cell.rate());
    }
    if let Some(bias) = &report.bias {
        for row in &bias.per_framing {
            println!("bias {} framing: {}/{} = {:.4}", row.framing, row.failures, row.total, row.rate);
        }
    }
}
