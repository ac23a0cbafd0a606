use std::io::{self, BufRead};
use std::path::Path;

use kga2c::trainer::{self, train_run, Ablation, EvalStats, LoadedRun, TrainConfig, TrainError};

use crate::usage;

fn print_stats(label: &str, stats: &EvalStats) {
    println!(
        "{label} episodes={} mean={:.3} std={:.3}",
        stats.episodes, stats.mean, stats.std
    );
}

pub fn train(config: &TrainConfig, out: &Path, eval_episodes: usize) -> anyhow::Result<()> {
    let summary = train_run(config, out, |_, m| {
        log::info!(
            "update {} steps {} score {:.2} loss {:.4}",
            m.update,
            m.env_steps,
            m.mean_score,
            m.loss
        );
    })
    .map_err(usage)?;
    let last = summary.metrics.last();
    println!(
        "trained {} updates, {} env steps, mean score {:.2}; model {}",
        summary.metrics.len(),
        last.map_or(0, |m| m.env_steps),
        last.map_or(0.0, |m| m.mean_score),
        summary.model.display()
    );
    if eval_episodes > 0 {
        let run = LoadedRun::load(&summary.model, None)?;
        print_stats("eval", &run.evaluate(eval_episodes, config.seed)?);
    }
    Ok(())
}

pub fn eval(
    checkpoint: &Path,
    game: Option<&str>,
    episodes: usize,
    seed: u64,
) -> anyhow::Result<()> {
    if episodes == 0 {
        return Err(usage(TrainError::NoEpisodes));
    }
    let run = LoadedRun::load(checkpoint, game)?;
    print_stats("eval", &run.evaluate(episodes, seed)?);
    Ok(())
}

pub fn ablate(config: &TrainConfig, out: &Path, eval_episodes: usize) -> anyhow::Result<()> {
    for ablation in Ablation::ALL {
        let c = TrainConfig {
            ablation,
            ..config.clone()
        };
        let dir = out.join(ablation.name());
        log::info!("training {ablation} into {}", dir.display());
        let summary = train_run(&c, &dir, |_, _| {}).map_err(usage)?;
        let score = summary.metrics.last().map_or(0.0, |m| m.mean_score);
        if eval_episodes > 0 {
            let run = LoadedRun::load(&summary.model, None)?;
            print_stats(ablation.name(), &run.evaluate(eval_episodes, c.seed)?);
        } else {
            println!(
                "{ablation} updates={} mean_score={score:.3}",
                summary.metrics.len()
            );
        }
    }
    Ok(())
}

pub fn tokenize(size: usize, out: Option<&Path>, text: &[String]) -> anyhow::Result<()> {
    let model = trainer::train_tokenizer(size).map_err(usage)?;
    if let Some(path) = out {
        std::fs::write(path, model.to_model_text())?;
    }
    let lines: Vec<String> = if text.is_empty() {
        if out.is_some() {
            Vec::new()
        } else {
            io::stdin().lock().lines().collect::<Result<_, _>>()?
        }
    } else {
        vec![text.join(" ")]
    };
    for line in lines {
        let ids = model.encode(&line);
        let pieces: Vec<&str> = ids.iter().map(|&i| model.piece(i).unwrap_or("?")).collect();
        println!("{}\t{:?}", pieces.join(" "), ids);
    }
    Ok(())
}
