//! Command-line front end: data generation, the three training phases,
//! zero-shot evaluation, the variant matrix and gradient checks.
//!
//! Exit codes: 0 success, 1 configuration error, 2 numeric failure,
//! 3 missing artifact.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use orthoadapt::adapters::AdapterWeights;
use orthoadapt::encoder::Model;
use orthoadapt::evalcli::gradsuite::gradcheck_suite;
use orthoadapt::evalcli::matrix::{backbone_path, cell_path, lang_adapter_path, Pipeline};
use orthoadapt::evalcli::{evaluate_zero_shot, run_variant_matrix, ExperimentConfig, Variant};
use orthoadapt::exec::ExecMode;
use orthoadapt::synthlang::{Bed, TaskKind};
use orthoadapt::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "orthoadapt", version, about = "Orthogonal language and task adapters on synthetic languages")]
struct Cli {
    /// Experiment config file (`key = value` with `[section]` headers).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed; defaults to the first seed of the config's matrix.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Root directory for all artifacts.
    #[arg(long, global = true, default_value = "runs")]
    out_dir: PathBuf,
    /// Disable data-parallel execution.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic bed (vocabulary, languages, corpora, task splits).
    GenData,
    /// MLM-pretrain the backbone on the multilingual mix.
    PretrainBackbone,
    /// Train one language adapter on top of the pretrained backbone.
    TrainLang {
        #[arg(long)]
        lang: String,
        /// Train with the orthogonality loss.
        #[arg(long)]
        ortho: bool,
    },
    /// Train one task model for a variant on source-language data.
    TrainTask {
        #[arg(long)]
        task: TaskKind,
        #[arg(long)]
        variant: Variant,
    },
    /// Zero-shot evaluation of a task checkpoint on one language.
    Eval {
        #[arg(long)]
        task: TaskKind,
        #[arg(long)]
        lang: String,
        /// Locates the default checkpoint and adapter under --out-dir.
        #[arg(long, required_unless_present = "checkpoint")]
        variant: Option<Variant>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Target-language adapter (required for checkpoints with a language slot).
        #[arg(long)]
        adapter: Option<PathBuf>,
    },
    /// Run (or resume) the full variant matrix and write result tables.
    Matrix,
    /// Finite-difference gradient checks over every operation and the composite.
    Gradcheck,
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(path.to_path_buf()))
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    let seed = cli.seed.unwrap_or(cfg.seeds[0]);
    let mode = if cli.sequential { ExecMode::Sequential } else { ExecMode::default() };
    let out = cli.out_dir.as_path();

    match cli.command {
        Command::GenData => {
            let bed = Bed::generate(&cfg.bed)?;
            let dir = out.join("data");
            bed.write(&dir)?;
            println!(
                "wrote {} languages, vocabulary of {} to {}",
                bed.languages.len(),
                bed.vocab.len(),
                dir.display()
            );
        }
        Command::PretrainBackbone => {
            let bed = Bed::generate(&cfg.bed)?;
            let pipeline = Pipeline::new(&cfg, &bed, out, mode);
            pipeline.backbone(seed)?;
            println!("{} ({} steps)", backbone_path(out, seed).display(), pipeline.steps());
        }
        Command::TrainLang { lang, ortho } => {
            let bed = Bed::generate(&cfg.bed)?;
            bed.language(&lang)?;
            let backbone = Model::load(&backbone_path(out, seed))?.0;
            let pipeline = Pipeline::new(&cfg, &bed, out, mode);
            pipeline.lang_adapter(&backbone, seed, ortho, &lang)?;
            let path = lang_adapter_path(out, seed, ortho, &lang);
            println!("{} ({} steps)", path.display(), pipeline.steps());
        }
        Command::TrainTask { task, variant } => {
            let bed = Bed::generate(&cfg.bed)?;
            let backbone = Model::load(&backbone_path(out, seed))?.0;
            let source_adapter = match variant.lang_ortho() {
                Some(o) => Some(AdapterWeights::load(&lang_adapter_path(out, seed, o, cfg.source_code()))?.0),
                None => None,
            };
            let pipeline = Pipeline::new(&cfg, &bed, out, mode);
            pipeline.task_model(&backbone, source_adapter.as_ref(), (seed, task, variant))?;
            println!("{} ({} steps)", cell_path(out, seed, task, variant).display(), pipeline.steps());
        }
        Command::Eval {
            task,
            lang,
            variant,
            checkpoint,
            adapter,
        } => {
            let bed = Bed::generate(&cfg.bed)?;
            let test = bed
                .task(task)
                .test
                .get(&lang)
                .ok_or_else(|| Error::Config(format!("unknown language `{lang}`")))?;
            let checkpoint = match (checkpoint, variant) {
                (Some(p), _) => p,
                (None, Some(v)) => cell_path(out, seed, task, v),
                (None, None) => unreachable!("clap requires one of --checkpoint and --variant"),
            };
            require(&checkpoint)?;
            let adapter = adapter.or_else(|| {
                variant
                    .and_then(Variant::lang_ortho)
                    .map(|o| lang_adapter_path(out, seed, o, &lang))
            });
            if let Some(a) = &adapter {
                require(a)?;
            }
            let report = evaluate_zero_shot(&checkpoint, adapter.as_deref(), test, cfg.eval_batch_size, mode)?;
            println!("{report}");
        }
        Command::Matrix => {
            if let Some(s) = cli.seed {
                cfg.seeds = vec![s];
            }
            let outcome = run_variant_matrix(&cfg, out, mode)?;
            for table in &outcome.tables {
                println!("{}", table.to_markdown());
            }
            for ((seed, task, variant), msg) in &outcome.failures {
                eprintln!("cell failed: seed {seed}, {task}, {variant}: {msg}");
            }
            println!("training steps executed: {}", outcome.steps_executed);
        }
        Command::Gradcheck => {
            let cases = gradcheck_suite(seed, mode)?;
            let mut failed = Vec::new();
            for c in &cases {
                let verdict = if c.passed() { "PASS" } else { "FAIL" };
                println!("{verdict}\t{}\t{:.3e}", c.name, c.report.max_rel_error);
                if !c.passed() {
                    failed.push(c.name.clone());
                }
            }
            if !failed.is_empty() {
                return Err(Error::NonFinite(format!("gradient check failed for {}", failed.join(", "))));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
