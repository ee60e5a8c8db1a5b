use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kgalign::experiment::{Arm, ExperimentConfig, Manifest, Pipeline};
use kgalign::projection::Variant;
use kgalign::Error;

#[derive(Parser)]
#[command(name = "kgalign", version, about = "Knowledge-graph embedding infusion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the top-level seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Artifact directory; defaults to the config's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build or import the knowledge graph.
    GenKg(Common),
    /// Generate the QA dataset and its train/test split.
    GenQa(Common),
    /// Train TransE entity embeddings.
    TrainKge(Common),
    /// Train the shared base language model.
    Pretrain(Common),
    /// Text-only fine-tune of the base model.
    TrainBaseline(Common),
    /// Stage 1: align the projection with the base model frozen.
    TrainAlign(Common),
    /// Stage 2: train projection and output head on QA.
    Finetune(Common),
    /// Score checkpoints on the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Arms to score; both by default.
        #[arg(long, value_delimiter = ',')]
        arm: Vec<String>,
    },
    /// Baseline vs aligned table with paired t-tests.
    Compare(Common),
    /// Error-category breakdown of the predictions.
    ErrorReport {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        arm: Vec<String>,
    },
    /// Projection variant and embedding size contrasts.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "linear,complex")]
        projection: Vec<String>,
        /// Embedding sizes; the configured size by default.
        #[arg(long, value_delimiter = ',')]
        dims: Vec<usize>,
    },
    /// Every step from gen-kg through error-report.
    Pipeline(Common),
}

fn pipeline(c: &Common) -> Result<Pipeline, Error> {
    let mut config = ExperimentConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        config.seed = seed;
    }
    let out = match (&c.out, &config.out) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => config.resolve(o),
        (None, None) => return Err(Error::Config("no output directory; pass --out or set `out`".into())),
    };
    Pipeline::new(config, out)
}

fn arms(names: &[String]) -> Result<Vec<Arm>, Error> {
    if names.is_empty() {
        return Ok(Arm::BOTH.to_vec());
    }
    names.iter().map(|n| n.parse()).collect()
}

fn variant(name: &str) -> Result<Variant, Error> {
    serde_json::from_value(serde_json::Value::String(name.into()))
        .map_err(|_| Error::Config(format!("unknown projection `{name}`; expected identity, linear or complex")))
}

fn print_manifest(m: &Manifest) -> Result<(), Error> {
    println!("{}", serde_json::to_string(m)?);
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenKg(c) => print_manifest(&pipeline(&c)?.gen_kg()?),
        Command::GenQa(c) => print_manifest(&pipeline(&c)?.gen_qa()?),
        Command::TrainKge(c) => print_manifest(&pipeline(&c)?.train_kge()?),
        Command::Pretrain(c) => print_manifest(&pipeline(&c)?.pretrain()?),
        Command::TrainBaseline(c) => print_manifest(&pipeline(&c)?.train_baseline()?),
        Command::TrainAlign(c) => print_manifest(&pipeline(&c)?.train_align()?),
        Command::Finetune(c) => print_manifest(&pipeline(&c)?.finetune()?),
        Command::Evaluate { common, arm } => print_manifest(&pipeline(&common)?.evaluate(&arms(&arm)?)?),
        Command::Compare(c) => {
            let p = pipeline(&c)?;
            p.compare()?;
            print!("{}", std::fs::read_to_string(p.path(kgalign::experiment::COMPARE_CSV))?);
            Ok(())
        }
        Command::ErrorReport { common, arm } => {
            let (_, breakdown) = pipeline(&common)?.error_report(&arms(&arm)?)?;
            println!("{}", serde_json::to_string(&breakdown)?);
            Ok(())
        }
        Command::Ablate { common, projection, dims } => {
            let p = pipeline(&common)?;
            let variants = projection.iter().map(|v| variant(v)).collect::<Result<Vec<_>, _>>()?;
            let dims = if dims.is_empty() { vec![p.config.transe.dim] } else { dims };
            p.ablate(&variants, &dims)?;
            print!("{}", std::fs::read_to_string(p.path(kgalign::experiment::ABLATION_CSV))?);
            Ok(())
        }
        Command::Pipeline(c) => {
            let p = pipeline(&c)?;
            p.run_all()?;
            print!("{}", std::fs::read_to_string(p.path(kgalign::experiment::COMPARE_CSV))?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut report = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            if let Error::Missing { producer, .. } = &e {
                report["producer"] = producer.as_str().into();
            }
            eprintln!("{report}");
            ExitCode::from(match e {
                Error::Config(_) => 2,
                Error::Missing { .. } => 3,
                _ => 1,
            })
        }
    }
}
