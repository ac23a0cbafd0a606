use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kga2c::trainer::{Ablation, TrainConfig, TrainError};

mod inspect;
mod play;
mod run;

/// Text-game agent lab: play, train, evaluate and inspect.
#[derive(Debug, Parser)]
#[command(name = "kga2c", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Play a game interactively on stdin.
    Play(PlayArgs),
    /// Train an agent, writing metrics and checkpoints.
    Train(TrainArgs),
    /// Evaluate a checkpoint with greedy decoding.
    Eval(EvalArgs),
    /// Train every ablation into its own subdirectory.
    Ablate(TrainArgs),
    /// Render an artifact as text.
    Inspect(InspectArgs),
    /// Train the subword model and segment text.
    Tokenize(TokenizeArgs),
}

#[derive(Debug, Args)]
struct PlayArgs {
    /// Bundled game name or path to a game file.
    #[arg(long, default_value = "microzork")]
    game: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print the valid-action set after every step.
    #[arg(long)]
    dump_valid: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    game: Option<String>,
    /// TOML or JSON training config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    updates: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    ablation: Option<Ablation>,
    /// Graph-mask exploration probability.
    #[arg(long = "p-m")]
    p_m: Option<f64>,
    /// Save a checkpoint every K updates.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
    /// Greedy episodes to evaluate after training.
    #[arg(long, default_value_t = 0)]
    eval_episodes: usize,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Overrides the game recorded next to the checkpoint.
    #[arg(long)]
    game: Option<String>,
    #[arg(long, default_value_t = 10)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct InspectArgs {
    /// One of graph-dump, checkpoint, valid-trace.
    kind: String,
    /// Triples file for graph-dump, checkpoint file for checkpoint.
    path: Option<PathBuf>,
    /// Model for valid-trace; untrained parameters if absent.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "microzork")]
    game: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    steps: usize,
}

#[derive(Debug, Args)]
struct TokenizeArgs {
    /// Target piece count.
    #[arg(long, default_value_t = 512)]
    size: usize,
    /// Write the trained model here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Text to segment; stdin lines if empty.
    text: Vec<String>,
}

/// Bad input from the user rather than a failure while running.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

impl TrainArgs {
    fn config(&self) -> anyhow::Result<TrainConfig> {
        let mut config = match &self.config {
            Some(path) => TrainConfig::load(path).map_err(usage)?,
            None => TrainConfig::default(),
        };
        if let Some(g) = &self.game {
            config.game = g.clone();
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(u) = self.updates {
            config.updates = u;
        }
        if let Some(w) = self.workers {
            config.workers = w;
        }
        if let Some(a) = self.ablation {
            config.ablation = a;
        }
        if let Some(p) = self.p_m {
            config.mask_probability = p;
        }
        if let Some(k) = self.checkpoint_every {
            config.checkpoint_every = k;
        }
        config.validate().map_err(usage)?;
        Ok(config)
    }
}

fn usage(e: TrainError) -> anyhow::Error {
    match e {
        TrainError::Config(problems) => {
            UsageError(format!("invalid config:\n  {}", problems.join("\n  "))).into()
        }
        TrainError::UnknownGame(g) => UsageError(format!("unknown game: {g}")).into(),
        other => other.into(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("KGA2C_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Play(a) => play::run(&a.game, a.seed, a.dump_valid),
        Command::Train(a) => a
            .config()
            .and_then(|c| run::train(&c, &a.out, a.eval_episodes)),
        Command::Eval(a) => run::eval(&a.checkpoint, a.game.as_deref(), a.episodes, a.seed),
        Command::Ablate(a) => a
            .config()
            .and_then(|c| run::ablate(&c, &a.out, a.eval_episodes)),
        Command::Inspect(a) => inspect::run(&a),
        Command::Tokenize(a) => run::tokenize(a.size, a.out.as_deref(), &a.text),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
