use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use promptmix::classifier::evaluate_accuracy;
use promptmix::data::{emit_dataset, load_examples, EmitFormat, RelabelStats};
use promptmix::jsonl;
use promptmix::mixgen::GenerationRecord;
use promptmix::pipeline::{self, AugmentationRun, PipelineConfig, RunStore, MANIFEST_FILE};
use promptmix::relabel::{build_index, RelabelRecord};
use promptmix::Execution;

/// Exit code for a run that finished with fewer generations than requested.
const EXIT_SHORTFALL: u8 = 2;

#[derive(Parser)]
#[command(name = "promptmix", version, about = "Borderline LLM augmentation and relabeling for few-shot text classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and relabel an augmented dataset.
    Augment {
        #[command(flatten)]
        run: RunArgs,
        /// Print the first generation prompt and the call plan, then exit.
        #[arg(long)]
        dry_run: bool,
        /// Continue the run in the output directory.
        #[arg(long, conflicts_with = "force")]
        resume: bool,
        /// Replace a run already present in the output directory.
        #[arg(long)]
        force: bool,
    },
    /// Relabel an existing generations file.
    Relabel {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        generations: PathBuf,
    },
    /// Classify a labeled test file directly with the LLM and report accuracy.
    Classify {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        test: PathBuf,
    },
    /// Print relabel statistics for a relabels file.
    Stats { relabels: PathBuf },
    /// Write an example file in the training format.
    Emit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "jsonl")]
        format: EmitFormat,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_mixup: bool,
    #[arg(long)]
    no_relabel: bool,
    #[arg(long)]
    zero_shot: bool,
    /// Overrides `run.output_dir`.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Run every backend call on the current thread.
    #[arg(long)]
    sequential: bool,
}

impl RunArgs {
    fn config(&self) -> Result<PipelineConfig> {
        let mut config = PipelineConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            config.run.seed = seed;
        }
        if self.no_mixup {
            config.generation.mixup_enabled = false;
        }
        if self.no_relabel {
            config.relabel.enabled = false;
        }
        if self.zero_shot {
            config.dataset.zero_shot = true;
            config.dataset.k = None;
        }
        if let Some(dir) = &self.output {
            config.run.output_dir = dir.clone();
        }
        config.validate()?;
        Ok(config)
    }

    fn execution(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }
}

fn augment(run: &RunArgs, dry_run: bool, resume: bool, force: bool) -> Result<u8> {
    let config = run.config()?;
    let dataset = config.load_dataset()?;
    if dry_run {
        let (plan, prompt) = pipeline::plan(&dataset, &config)?;
        println!("# first generation prompt");
        for message in &prompt {
            println!("[{}]\n{}\n", serde_json::to_string(&message.role)?.trim_matches('"'), message.content);
        }
        println!("# call plan\n{plan}");
        return Ok(0);
    }
    let backends = config.build_backends()?;
    let run_handle = if resume {
        let manifest = config.run.output_dir.join(MANIFEST_FILE);
        AugmentationRun::resume(&manifest, &dataset, &config, &backends)
            .with_context(|| format!("resuming {}", manifest.display()))?
    } else {
        AugmentationRun::start(&dataset, &config, &backends, force)?
    };
    let out = run_handle.with_execution(run.execution()).execute()?;
    let m = &out.augmented.manifest;
    println!("output:      {}", config.run.output_dir.display());
    println!("seed:        {}", m.seed);
    println!("examples:    {} ({} generated)", out.augmented.examples.len(), m.total_generated);
    if let Some(stats) = &m.relabel_stats {
        println!("relabeled:   {:.1}%", stats.percent_relabeled);
        println!("oos suspect: {}", m.out_of_scope_suspects);
    }
    let session = backends.ledger().summary();
    println!("calls:       {} chat, {} embed", session.chat_calls, session.embed_calls);
    if m.has_shortfall() {
        eprintln!("shortfall in {} classes: {}", m.shortfall_classes.len(), m.shortfall_classes.join(", "));
        return Ok(EXIT_SHORTFALL);
    }
    Ok(0)
}

fn relabel(run: &RunArgs, generations: &Path) -> Result<u8> {
    let config = run.config()?;
    let dataset = config.load_dataset()?;
    let backends = config.build_backends()?;
    let records: Vec<GenerationRecord> = jsonl::read(generations)?;
    let (relabels, examples) = pipeline::relabel_generations(
        &dataset,
        &config,
        &records,
        &backends,
        &config.run.output_dir,
        run.execution(),
    )?;
    println!("wrote {} relabels and {} examples to {}", relabels.len(), examples.len(), config.run.output_dir.display());
    println!("{}", RelabelStats::from_relabels(&relabels));
    Ok(0)
}

fn classify(run: &RunArgs, test: &Path) -> Result<u8> {
    let config = run.config()?;
    let dataset = config.load_dataset()?;
    let backends = config.build_backends()?;
    let examples = load_examples(test)?;
    let exec = run.execution();
    let settings = config.relabel_settings();
    let eval = exec.install(backends.max_in_flight(), || -> Result<_> {
        let index = build_index(&dataset, &backends)?;
        Ok(evaluate_accuracy(&examples, &dataset, &index, &settings, &backends, exec)?)
    })?;
    let store = RunStore::new(&config.run.output_dir);
    std::fs::create_dir_all(store.dir())?;
    jsonl::write(&store.path("predictions.jsonl"), &eval.predictions)?;
    let metrics = serde_json::json!({
        "accuracy": eval.accuracy,
        "correct": eval.correct,
        "total": eval.total,
        "confusion": eval.confusion,
    });
    store.write_json("classify_metrics.json", &metrics)?;
    println!("accuracy: {:.4} ({}/{})", eval.accuracy, eval.correct, eval.total);
    Ok(0)
}

fn stats(path: &Path) -> Result<u8> {
    let records: Vec<RelabelRecord> = jsonl::read(path)?;
    println!("{}", RelabelStats::from_relabels(&records));
    Ok(0)
}

fn emit(input: &Path, output: &Path, format: EmitFormat) -> Result<u8> {
    let examples = load_examples(input)?;
    if examples.is_empty() {
        bail!("{} holds no examples", input.display());
    }
    emit_dataset(&examples, output, format)?;
    println!("wrote {} examples to {}", examples.len(), output.display());
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Augment {
            run,
            dry_run,
            resume,
            force,
        } => augment(run, *dry_run, *resume, *force),
        Command::Relabel { run, generations } => relabel(run, generations),
        Command::Classify { run, test } => classify(run, test),
        Command::Stats { relabels } => stats(relabels),
        Command::Emit { input, output, format } => emit(input, output, *format),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            log::debug!("{err:?}");
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
