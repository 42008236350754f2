//! `cropnav` command-line driver.

use clap::{Args, Parser, Subcommand};
use cropnav::harness::{
    collect, eval_checkpoints, frames_for, load_corpus, run_navigation_suite, run_obstacle_scenarios, run_table1,
    ExperimentConfig, Layout, Report,
};
use cropnav::model::Variant;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "cropnav", version, about = "Learned dynamics model and sampling planner on synthetic terrain")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration; defaults apply to every omitted field.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory for data, checkpoints, logs and tables.
    #[arg(long, default_value = "runs/default")]
    out: PathBuf,
    /// collect: corpus and split seed. train, eval-mse: the single training
    /// seed. navigate, obstacles: the checkpoint seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Restrict to one model variant.
    #[arg(long)]
    variant: Option<Variant>,
}

#[derive(Subcommand)]
enum Command {
    /// Drive the random-walk policy over seeded terrains and save the corpus.
    Collect(Common),
    /// Train every configured variant and seed; writes loss logs, checkpoints and table1.csv.
    Train(Common),
    /// Evaluate saved checkpoints on the train, val and test splits.
    EvalMse(Common),
    /// Run the point-goal navigation suite with saved checkpoints.
    Navigate(Common),
    /// Run the unseen-obstacle scenarios.
    Obstacles(Common),
    /// Rebuild and print every table from the logs in the run directory.
    Report(Common),
}

fn configure(c: &Common, command: &Command) -> cropnav::Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = c.variant {
        cfg.table1.variants = vec![v];
        cfg.navigation.variants = vec![v];
        cfg.obstacles.variant = v;
    }
    if let Some(s) = c.seed {
        match command {
            Command::Collect(_) => {
                cfg.seed = s;
                cfg.collect.seed = s;
            }
            Command::Train(_) | Command::EvalMse(_) => cfg.table1.seeds = vec![s],
            _ => cfg.navigation.checkpoint_seed = s,
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(command: &Command) -> cropnav::Result<()> {
    let (Command::Collect(c)
    | Command::Train(c)
    | Command::EvalMse(c)
    | Command::Navigate(c)
    | Command::Obstacles(c)
    | Command::Report(c)) = command;
    let cfg = configure(c, command)?;
    let layout = Layout::new(&c.out);
    layout.create()?;
    match command {
        Command::Collect(_) => {
            let (corpus, split) = collect(&cfg, &layout)?;
            println!(
                "{} episodes, {} samples ({} train, {} val, {} test) in {}",
                corpus.episodes.len(),
                corpus.total_samples(),
                split.train.len(),
                split.val.len(),
                split.test.len(),
                layout.data().display()
            );
        }
        Command::Train(_) => {
            let (corpus, split) = load_corpus(&layout)?;
            let frames = frames_for(&corpus, &split);
            let table = run_table1(&cfg, &corpus, &split, &frames, &layout)?;
            print!("{}", table.summary().to_text());
        }
        Command::EvalMse(_) => {
            let (corpus, split) = load_corpus(&layout)?;
            let frames = frames_for(&corpus, &split);
            let table = eval_checkpoints(&cfg, &layout, &corpus, &split, &frames)?;
            table.save_csv(&layout.table("eval_mse.csv"))?;
            print!("{}", table.to_text());
        }
        Command::Navigate(_) => {
            let table = run_navigation_suite(&cfg, &layout)?;
            print!("{}", table.summary().to_text());
        }
        Command::Obstacles(_) => {
            let report = run_obstacle_scenarios(&cfg, &layout)?;
            print!("{}", report.table(&cfg).to_text());
            let (a, n) = report.one_side(&cfg);
            let (g, m) = report.gap(&cfg);
            println!("one-side avoided {a}/{n}, gap threaded {g}/{m}");
        }
        Command::Report(_) => print!("{}", Report::from_logs(&cfg, &layout).to_text()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
