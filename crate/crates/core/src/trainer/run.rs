//! Training runs backed by an output directory.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    build_context, evaluate, load_game, train_tokenizer, write_csv, Context, EvalStats, MetricsLog,
    TrainConfig, TrainError, Trainer, UpdateMetrics,
};
use crate::engine::GameSpec;
use crate::numerics::{self, ParameterSet};
use crate::oracle::{Oracle, ProbeScope};
use crate::tokenizer::SubwordModel;

pub const CONFIG_FILE: &str = "config.json";
pub const TOKENIZER_FILE: &str = "tokenizer.model";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CSV_FILE: &str = "metrics.csv";
pub const MODEL_FILE: &str = "model.ckpt";

/// Output of [`train_run`].
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub metrics: Vec<UpdateMetrics>,
    pub model: PathBuf,
}

/// Trains for `config.updates` updates, writing the config, tokenizer,
/// per-update metrics, periodic checkpoints and the final model to `out`.
/// `on_update` sees every metrics record as it is produced.
pub fn train_run(
    config: &TrainConfig,
    out: &Path,
    mut on_update: impl FnMut(&Trainer, &UpdateMetrics),
) -> Result<RunSummary, TrainError> {
    config.validate()?;
    fs::create_dir_all(out)?;
    let spec = load_game(&config.game)?;
    let tokenizer = train_tokenizer(config.tokenizer_size)?;
    fs::write(out.join(CONFIG_FILE), config.to_json())?;
    fs::write(out.join(TOKENIZER_FILE), tokenizer.to_model_text())?;

    let mut trainer = Trainer::new(spec, tokenizer, config)?;
    let mut log = MetricsLog::create(&out.join(METRICS_FILE))?;
    let mut metrics = Vec::with_capacity(config.updates);
    for _ in 0..config.updates {
        let m = trainer.update()?;
        log.write(&m)?;
        on_update(&trainer, &m);
        if config.checkpoint_every > 0 && m.update % config.checkpoint_every == 0 {
            trainer.save_checkpoint(&out.join(format!("model-{:06}.ckpt", m.update)))?;
        }
        metrics.push(m);
    }
    log.flush()?;
    write_csv(&out.join(CSV_FILE), &metrics)?;
    let model = out.join(MODEL_FILE);
    trainer.save_checkpoint(&model)?;
    Ok(RunSummary { metrics, model })
}

/// A trained agent restored from disk.
pub struct LoadedRun {
    pub ctx: Context,
    pub params: ParameterSet,
}

impl LoadedRun {
    /// Rebuilds the network from the run directory holding `checkpoint`.
    /// `game` overrides the game recorded in the run config.
    pub fn load(checkpoint: &Path, game: Option<&str>) -> Result<Self, TrainError> {
        let dir = checkpoint.parent().unwrap_or(Path::new("."));
        let mut config = match fs::read_to_string(dir.join(CONFIG_FILE)) {
            Ok(text) => TrainConfig::parse(&text)?,
            Err(_) => TrainConfig::default(),
        };
        if let Some(g) = game {
            config.game = g.to_string();
        }
        let tokenizer = match fs::read_to_string(dir.join(TOKENIZER_FILE)) {
            Ok(text) => SubwordModel::from_model_text(&text)
                .map_err(|e| TrainError::Tokenizer(e.to_string()))?,
            Err(_) => train_tokenizer(config.tokenizer_size)?,
        };
        let spec = load_game(&config.game)?;
        let mut params = ParameterSet::new(config.seed);
        let ctx = build_context(spec, tokenizer, &config, &mut params)?;
        numerics::load_checkpoint(&mut params, checkpoint)?;
        Ok(LoadedRun { ctx, params })
    }

    pub fn evaluate(&self, episodes: usize, seed: u64) -> Result<EvalStats, TrainError> {
        evaluate(&self.ctx, &self.params, episodes, seed)
    }
}

/// Final scores of episodes played by picking uniformly among valid
/// actions for `steps` environment steps. Episodes cut off by the budget
/// are not counted.
pub fn random_valid_scores(spec: &GameSpec, steps: u64, seed: u64) -> Result<Vec<i64>, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut oracle = Oracle::default();
    let mut episode = 0u64;
    let (mut state, _) = spec.reset(seed);
    let mut scores = Vec::new();
    for _ in 0..steps {
        let words = spec.in_scope_words(&state).into_iter().collect();
        let valid = oracle
            .valid_actions(spec, &state, &ProbeScope::Candidates(words))
            .map_err(|e| TrainError::Oracle(e.to_string()))?;
        oracle.clear_cache();
        let action = match valid.actions.choose(&mut rng) {
            Some(a) => a.text.clone(),
            None => "look".to_string(),
        };
        let step = spec.step(&state, &action);
        if step.done {
            scores.push(step.state.score);
            episode += 1;
            state = spec.reset(seed.wrapping_add(episode)).0;
        } else {
            state = step.state;
        }
    }
    Ok(scores)
}
