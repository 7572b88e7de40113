use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pgrules_core::evalmetrics::{box_reduction_report, compare};
use pgrules_core::knowledge::client::LiveClient;
use pgrules_core::knowledge::{fetch_knowledge, FixtureStore, KnowledgeClient};
use pgrules_core::pipeline::config::InputPaths;
use pgrules_core::pipeline::{io, run_pipeline, PipelineConfig};
use pgrules_core::testkit::{gen_scenario, write_scenario, ScenarioSpec};
use pgrules_core::{Error, Result};

/// Rule-based refinement of object-detection outputs.
#[derive(Parser)]
#[command(name = "pgrules", version)]
struct Cli {
    /// Log more (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Refine a detection file and write the refined set and reports.
    Run(RunArgs),
    /// Compare a baseline and a refined detection file against ground truth.
    Eval(EvalArgs),
    /// Knowledge documents.
    Knowledge {
        #[command(subcommand)]
        command: KnowledgeCommand,
    },
    /// Write a seeded synthetic scenario with its config and manifest.
    GenFixtures(GenArgs),
    /// Box reduction percentage for a pair of counts.
    Reduction {
        #[arg(long)]
        baseline: usize,
        #[arg(long)]
        refined: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    detections: Option<PathBuf>,
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    #[arg(long)]
    scenes: Option<PathBuf>,
    #[arg(long)]
    knowledge: Option<PathBuf>,
    #[arg(long)]
    shape_counts: Option<PathBuf>,
    /// Shape-count table; the bundled one is used when absent.
    #[arg(long)]
    shape_knowledge: Option<PathBuf>,
    /// TOML config; paths given here win over paths in the config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    baseline: PathBuf,
    #[arg(long)]
    refined: PathBuf,
    #[arg(long)]
    ground_truth: PathBuf,
    /// Config supplying vocabulary, class groups and the FP threshold.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print JSON instead of tables.
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand)]
enum KnowledgeCommand {
    /// Fetch a knowledge document by prompt key and validate it.
    Fetch {
        #[arg(long)]
        prompt: String,
        /// Query the configured chat-completion endpoint instead of the
        /// bundled fixtures.
        #[arg(long)]
        live: bool,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = ScenarioSpec::default().images)]
    images: usize,
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref())?;
    let flags = InputPaths {
        detections: args.detections,
        ground_truth: args.ground_truth,
        scenes: args.scenes,
        knowledge: args.knowledge,
        shape_counts: args.shape_counts,
        shape_knowledge: args.shape_knowledge,
    };
    cfg.inputs = flags.or(cfg.inputs);
    let out = args
        .out
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out".into()))?;
    let output = run_pipeline(&cfg, &out)?;
    print!("{}", output.report.render());
    println!();
    println!("outputs written to {}", out.display());
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?.resolve()?;
    let baseline = io::load_detections(&args.baseline, &cfg.vocab)?;
    let refined = io::load_detections(&args.refined, &cfg.vocab)?;
    let gts = io::load_ground_truth(&args.ground_truth, &cfg.vocab)?;
    let cmp = compare(&baseline, &refined, &gts, &cfg.vocab, &cfg.groups, cfg.fp_score_threshold)?;
    if args.json {
        print!("{}", comparison_json(&cmp));
    } else {
        print!("{}", cmp.render());
    }
    Ok(())
}

fn comparison_json(cmp: &pgrules_core::EvalComparison) -> String {
    let mut s = serde_json::to_string_pretty(cmp).expect("serializable");
    s.push('\n');
    s
}

fn knowledge_fetch(prompt: &str, live: bool, out: Option<&Path>) -> Result<()> {
    let client: Box<dyn KnowledgeClient> = if live {
        Box::new(LiveClient::from_env()?)
    } else {
        Box::new(FixtureStore)
    };
    let doc = fetch_knowledge(prompt, client.as_ref())?;
    match out {
        Some(p) => std::fs::write(p, doc).map_err(|e| Error::io(p, e)),
        None => {
            print!("{doc}");
            Ok(())
        }
    }
}

fn gen_fixtures(args: GenArgs) -> Result<()> {
    let spec = ScenarioSpec {
        seed: args.seed,
        images: args.images,
        ..Default::default()
    };
    let scenario = gen_scenario(&spec);
    write_scenario(&args.out, &scenario)?;
    let m = &scenario.manifest;
    println!(
        "wrote {} images, {} detections ({} redundant planted) to {}",
        spec.images,
        m.detections,
        m.redundant_total,
        args.out.display()
    );
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => run(args),
        Command::Eval(args) => eval(args),
        Command::Knowledge {
            command: KnowledgeCommand::Fetch { prompt, live, out },
        } => knowledge_fetch(&prompt, live, out.as_deref()),
        Command::GenFixtures(args) => gen_fixtures(args),
        Command::Reduction { baseline, refined } => {
            println!("{}", box_reduction_report(baseline, refined)?.render());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
