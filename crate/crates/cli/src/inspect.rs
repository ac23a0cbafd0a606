use anyhow::Context as _;
use kga2c::agent::TraceEntry;
use kga2c::kg::{GraphFormat, KnowledgeGraph};
use kga2c::numerics::{read_checkpoint, ParameterSet};
use kga2c::trainer::{build_context, load_game, train_tokenizer, Env, LoadedRun, TrainConfig};

use crate::{usage, InspectArgs, UsageError};

pub fn run(args: &InspectArgs) -> anyhow::Result<()> {
    match args.kind.as_str() {
        "graph-dump" => {
            let path = args
                .path
                .as_ref()
                .ok_or_else(|| UsageError("graph-dump needs a triples file".into()))?;
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let graph = KnowledgeGraph::import_triples(&text)?;
            print!("{}", graph.export(GraphFormat::Dot));
        }
        "checkpoint" => {
            let path = args
                .path
                .as_ref()
                .ok_or_else(|| UsageError("checkpoint needs a file".into()))?;
            let bytes =
                std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            let params =
                read_checkpoint(&bytes).with_context(|| format!("parsing {}", path.display()))?;
            println!("{:<32} {:<12} {:>8}", "name", "shape", "params");
            for (_, name, t) in params.iter() {
                println!(
                    "{:<32} {:<12} {:>8}",
                    name,
                    format!("{:?}", t.shape()),
                    t.len()
                );
            }
            println!("{:<32} {:<12} {:>8}", "total", "", params.size());
        }
        "valid-trace" => trace(args)?,
        other => {
            return Err(UsageError(format!(
                "unknown artifact kind {other:?}; expected graph-dump, checkpoint or valid-trace"
            ))
            .into())
        }
    }
    Ok(())
}

fn trace(args: &InspectArgs) -> anyhow::Result<()> {
    let (ctx, params) = match &args.checkpoint {
        Some(path) => {
            let run = LoadedRun::load(path, None)?;
            (run.ctx, run.params)
        }
        None => {
            let config = TrainConfig {
                game: args.game.clone(),
                seed: args.seed,
                ..TrainConfig::default()
            };
            let spec = load_game(&config.game).map_err(usage)?;
            let tokenizer = train_tokenizer(config.tokenizer_size)?;
            let mut params = ParameterSet::new(config.seed);
            let ctx = build_context(spec, tokenizer, &config, &mut params)?;
            (ctx, params)
        }
    };
    let templates: Vec<String> = ctx.spec.templates.iter().map(|t| t.pattern()).collect();
    let words = ctx.spec.vocabulary.words().to_vec();
    let mut env = Env::new(&ctx, args.seed);
    for step in 0..args.steps {
        let r = env.act(&ctx, &params, true)?;
        match &r.distribution {
            Some(d) => print!(
                "{}",
                TraceEntry::new(
                    step as u64,
                    d,
                    &templates,
                    &words,
                    r.mask_size,
                    &r.text,
                    r.executed_valid
                )
                .render()
            ),
            None => println!("step {step}\n  Action: {}", r.text),
        }
        if r.reward != 0.0 {
            println!("  Reward: {}", r.reward);
        }
        if r.done {
            break;
        }
    }
    Ok(())
}
