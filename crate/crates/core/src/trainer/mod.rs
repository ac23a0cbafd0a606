//! Advantage actor-critic training with parallel workers, valid-action
//! supervision and the ablation variants.

mod config;
mod env;
mod losses;
mod metrics;
mod run;
mod update;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentError, Network, SeqDecoder};
use crate::corpus;
use crate::engine::{games, GameSpec};
use crate::numerics::{
    self, Adam, AdamConfig, CheckpointError, Gradients, NumericsError, ParameterSet,
};
use crate::tokenizer::{train_unigram, SubwordModel};

pub use config::{Ablation, TrainConfig};
pub use env::{Choice, Context, Env, Record};
pub use losses::{
    actor_loss, advantage, critic_loss, entropy_term, masked_entropy_term, object_loss, q_target,
    template_loss,
};
pub use metrics::{mean_std, write_csv, MetricsLog, UpdateMetrics};
pub use run::{
    random_valid_scores, train_run, LoadedRun, RunSummary, CONFIG_FILE, CSV_FILE, METRICS_FILE,
    MODEL_FILE, TOKENIZER_FILE,
};
pub use update::{record_gradients, LossParts};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("unknown game `{0}`")]
    UnknownGame(String),
    #[error("could not load game: {0}")]
    Game(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("tokenizer: {0}")]
    Tokenizer(String),
    #[error("oracle: {0}")]
    Oracle(String),
    #[error("non-finite loss: {0}")]
    NonFinite(String),
    #[error("all {0} workers failed")]
    AllWorkersFailed(usize),
    #[error("evaluation needs at least one episode")]
    NoEpisodes,
    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for TrainError {
    fn from(e: std::io::Error) -> Self {
        TrainError::Io(e.to_string())
    }
}

/// Loads a bundled game by name, or a game file by path.
pub fn load_game(name_or_path: &str) -> Result<GameSpec, TrainError> {
    if let Some(spec) = games::bundled(name_or_path) {
        return spec.map_err(|e| TrainError::Game(e.to_string()));
    }
    let path = Path::new(name_or_path);
    if !path.exists() {
        return Err(TrainError::UnknownGame(name_or_path.to_string()));
    }
    let text = std::fs::read_to_string(path)?;
    games::load_canonical(&text).map_err(|e| TrainError::Game(e.to_string()))
}

/// Trains the shared subword model on the bundled corpus.
pub fn train_tokenizer(size: usize) -> Result<SubwordModel, TrainError> {
    train_unigram(&corpus::tokenizer_lines(), size)
        .map_err(|e| TrainError::Tokenizer(e.to_string()))
}

/// Per-worker output of one rollout phase.
#[derive(Debug, Clone, Default)]
pub struct RolloutBatch {
    /// Records per surviving worker, in worker order.
    pub workers: Vec<Vec<Record>>,
    pub degraded_workers: usize,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.workers.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> impl Iterator<Item = &Record> {
        self.workers.iter().flatten()
    }
}

/// Greedy evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub episodes: usize,
    pub mean: f64,
    pub std: f64,
    pub scores: Vec<i64>,
}

/// Owns parameters, optimizer and workers for one training run.
pub struct Trainer {
    pub ctx: Context,
    pub params: ParameterSet,
    adam: Adam,
    envs: Vec<Env>,
    pub updates: usize,
    pub env_steps: u64,
    episodes_total: usize,
    recent_scores: Vec<i64>,
}

/// Builds the network for `config` against `spec`, registering parameters.
pub fn build_context(
    spec: GameSpec,
    tokenizer: SubwordModel,
    config: &TrainConfig,
    params: &mut ParameterSet,
) -> Result<Context, TrainError> {
    config.validate()?;
    let mut spec = spec;
    spec.limits.valid_steps = config.valid_step_cap;
    spec.limits.turns = config.turn_cap;
    let network = Network::new(
        params,
        config.agent,
        tokenizer.len(),
        spec.templates.len(),
        spec.vocabulary.len(),
        config.ablation.graph_attention(),
    )?;
    let seq = if config.ablation == Ablation::Seq {
        Some(SeqDecoder::new(
            params,
            network.state_dim(),
            config.agent.decoder_hidden,
            spec.vocabulary.len(),
        )?)
    } else {
        None
    };
    let blanks = spec.templates.iter().map(|t| t.blanks()).collect();
    Ok(Context {
        spec: Arc::new(spec),
        tokenizer: Arc::new(tokenizer),
        network,
        seq,
        config: config.clone(),
        blanks,
    })
}

/// Completed episodes averaged into `mean_score`.
pub const SCORE_WINDOW: usize = 20;

fn worker_seed(seed: u64, worker: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(worker as u64 + 1)
}

impl Trainer {
    pub fn new(
        spec: GameSpec,
        tokenizer: SubwordModel,
        config: &TrainConfig,
    ) -> Result<Self, TrainError> {
        let mut params = ParameterSet::new(config.seed);
        let ctx = build_context(spec, tokenizer, config, &mut params)?;
        let envs = (0..config.workers)
            .map(|w| Env::new(&ctx, worker_seed(config.seed, w)))
            .collect();
        let adam = Adam::new(
            &params,
            AdamConfig {
                lr: config.learning_rate,
                ..AdamConfig::default()
            },
        );
        Ok(Trainer {
            ctx,
            params,
            adam,
            envs,
            updates: 0,
            env_steps: 0,
            episodes_total: 0,
            recent_scores: Vec::new(),
        })
    }

    /// Loads the game and tokenizer named by `config` and builds a trainer.
    pub fn from_config(config: &TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let spec = load_game(&config.game)?;
        let tokenizer = train_tokenizer(config.tokenizer_size)?;
        Trainer::new(spec, tokenizer, config)
    }

    /// Steps every worker for one unroll. A panicking worker is dropped
    /// from the batch and restarted.
    pub fn run_rollouts(&mut self) -> Result<RolloutBatch, TrainError> {
        let ctx = &self.ctx;
        let params = &self.params;
        let unroll = ctx.config.unroll;
        let results: Vec<Option<Result<Vec<Record>, TrainError>>> = self
            .envs
            .par_iter_mut()
            .map(|env| catch_unwind(AssertUnwindSafe(|| env.rollout(ctx, params, unroll))).ok())
            .collect();
        let mut batch = RolloutBatch::default();
        for (w, r) in results.into_iter().enumerate() {
            match r {
                Some(Ok(records)) => batch.workers.push(records),
                Some(Err(e)) => return Err(e),
                None => {
                    log::warn!("worker {w} panicked; restarting it");
                    batch.degraded_workers += 1;
                    let seed =
                        worker_seed(ctx.config.seed, w).wrapping_add(self.updates as u64 + 1);
                    self.envs[w] = Env::new(ctx, seed);
                }
            }
        }
        if batch.workers.is_empty() {
            return Err(TrainError::AllWorkersFailed(self.envs.len()));
        }
        Ok(batch)
    }

    /// Averages the objective over the batch, clips and applies one Adam step.
    pub fn train_step(&mut self, batch: &RolloutBatch) -> Result<UpdateMetrics, TrainError> {
        let n = batch.len();
        let scale = 1.0 / n.max(1) as f64;
        let ctx = &self.ctx;
        let params = &self.params;
        let per_worker: Vec<Result<(Gradients, LossParts), TrainError>> = batch
            .workers
            .par_iter()
            .map(|records| {
                let mut grads = Gradients::zeros_like(params);
                let mut parts = LossParts::default();
                for r in records {
                    parts.add(&record_gradients(ctx, params, r, scale, &mut grads)?);
                }
                Ok((grads, parts))
            })
            .collect();
        let mut grads = Gradients::zeros_like(&self.params);
        let mut losses = LossParts::default();
        for r in per_worker {
            let (g, p) = r?;
            grads.add_assign(&g);
            losses.add(&p);
        }
        losses.scale(scale);
        let grad_norm = grads.clip_norm(self.ctx.config.clip_norm);
        self.adam.step(&mut self.params, &grads);
        self.updates += 1;
        self.env_steps += n as u64;

        for env in &mut self.envs {
            self.episodes_total += env.finished.len();
            self.recent_scores.append(&mut env.finished);
        }
        let keep = self.recent_scores.len().saturating_sub(SCORE_WINDOW);
        self.recent_scores.drain(..keep);
        let mean_score = if self.recent_scores.is_empty() {
            0.0
        } else {
            self.recent_scores.iter().sum::<i64>() as f64 / self.recent_scores.len() as f64
        };
        let count = n.max(1) as f64;
        let records: Vec<&Record> = batch.records().collect();
        Ok(UpdateMetrics {
            update: self.updates,
            env_steps: self.env_steps,
            episodes: self.episodes_total,
            loss: losses.total,
            actor_loss: losses.actor,
            critic_loss: losses.critic,
            template_loss: losses.template,
            object_loss: losses.object,
            entropy_loss: losses.entropy,
            grad_norm,
            mean_score,
            mean_reward: records.iter().map(|r| r.reward).sum::<f64>() / count,
            mean_valid_actions: records.iter().map(|r| r.valid_count as f64).sum::<f64>() / count,
            mean_mask_size: records.iter().map(|r| r.mask_size as f64).sum::<f64>() / count,
            valid_rate: records.iter().filter(|r| r.executed_valid).count() as f64 / count,
            decoded_objects: records.iter().map(|r| r.decoded_objects as u64).sum(),
            mask_violations: records.iter().map(|r| r.violations as u64).sum(),
            degraded_workers: batch.degraded_workers,
        })
    }

    /// One rollout plus one update.
    pub fn update(&mut self) -> Result<UpdateMetrics, TrainError> {
        let batch = self.run_rollouts()?;
        self.train_step(&batch)
    }

    pub fn evaluate(&self, episodes: usize) -> Result<EvalStats, TrainError> {
        evaluate(&self.ctx, &self.params, episodes, self.ctx.config.seed)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<(), TrainError> {
        numerics::save_checkpoint(&self.params, path)?;
        Ok(())
    }
}

/// Greedy episodes from fresh environments; reports final scores.
pub fn evaluate(
    ctx: &Context,
    params: &ParameterSet,
    episodes: usize,
    seed: u64,
) -> Result<EvalStats, TrainError> {
    if episodes == 0 {
        return Err(TrainError::NoEpisodes);
    }
    let mut scores = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let mut env = Env::new(ctx, worker_seed(seed ^ 0xe7a1, e));
        loop {
            let r = env.act(ctx, params, true)?;
            if r.done {
                scores.push(*env.finished.last().expect("finished episode recorded"));
                break;
            }
        }
    }
    let values: Vec<f64> = scores.iter().map(|&s| s as f64).collect();
    let (mean, std) = mean_std(&values);
    Ok(EvalStats {
        episodes,
        mean,
        std,
        scores,
    })
}
