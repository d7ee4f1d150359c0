use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pgcbm::config::RunConfig;
use pgcbm::data::Attribute;
use pgcbm::pipeline;
use pgcbm::variants::Registry;
use pgcbm::CoreError;

#[derive(Parser)]
#[command(name = "pgcbm", version, about = "Concept bottleneck biomass models on synthetic forest patches")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Suppress the JSON summary on stdout.
    #[arg(short, long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset, normalization statistics and split.
    Synth(Common),
    /// Pre-train concept sub-models (all three unless one is named).
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// cover, height or stems.
        #[arg(long)]
        attribute: Option<String>,
    },
    /// Train a variant end to end on biomass labels.
    Finetune {
        #[command(flatten)]
        common: Common,
        /// pgcbm, vanilla or blackbox.
        #[arg(long)]
        variant: String,
    },
    /// Evaluate fine-tuned variants (all three unless named).
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long = "variant")]
        variants: Vec<String>,
    },
    /// Evaluate all three variants and report the OOD ordering verdict.
    Compare(Common),
}

fn load(c: &Common) -> Result<RunConfig, CoreError> {
    let cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.resolve(c.seed, c.out.clone())
}

fn emit(quiet: bool, v: serde_json::Value) {
    if !quiet {
        println!("{v}");
    }
}

fn run(cli: Cli) -> Result<(), CoreError> {
    let registry = Registry::default();
    match cli.command {
        Command::Synth(c) => {
            let cfg = load(&c)?;
            let s = pipeline::synth(&cfg)?;
            emit(c.quiet, serde_json::to_value(s)?);
        }
        Command::Pretrain { common, attribute } => {
            let cfg = load(&common)?;
            let attrs = match attribute {
                Some(a) => vec![Attribute::parse(&a)
                    .filter(|a| *a != Attribute::Agbd)
                    .ok_or_else(|| CoreError::Config(format!("unknown concept attribute `{a}`")))?],
                None => Attribute::CONCEPTS.to_vec(),
            };
            for a in attrs {
                let s = pipeline::pretrain(&cfg, a)?;
                emit(common.quiet, serde_json::to_value(s)?);
            }
        }
        Command::Finetune { common, variant } => {
            let cfg = load(&common)?;
            let s = pipeline::finetune(&cfg, &registry, &variant)?;
            emit(common.quiet, serde_json::to_value(s)?);
        }
        Command::Eval { common, variants } => {
            let cfg = load(&common)?;
            let variants = if variants.is_empty() {
                registry.names().into_iter().map(String::from).collect()
            } else {
                variants
            };
            let r = pipeline::evaluate(&cfg, &registry, &variants, "eval")?;
            emit(common.quiet, serde_json::to_value(r)?);
        }
        Command::Compare(c) => {
            let cfg = load(&c)?;
            let r = pipeline::compare(&cfg, &registry)?;
            emit(
                c.quiet,
                serde_json::json!({ "ood": r.ood, "ordering_holds": r.ood.as_ref().map(|t| t.ordering_holds) }),
            );
        }
    }
    Ok(())
}

fn exit_code(e: &CoreError) -> u8 {
    match e {
        CoreError::Config(_) | CoreError::UnknownVariant(_) => 2,
        CoreError::MissingPrerequisite(_) => 3,
        CoreError::NumericFailure(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
