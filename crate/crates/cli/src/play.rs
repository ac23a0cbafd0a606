use std::io::{self, BufRead, Write};

use anyhow::Context as _;
use kga2c::engine::{restore, snapshot, GameSpec, Observation, SavedState, WorldState};
use kga2c::kg::{self, GraphFormat, KnowledgeGraph};
use kga2c::oracle::{Oracle, ProbeScope};
use kga2c::trainer::load_game;

use crate::{usage, UsageError};

struct Session {
    spec: GameSpec,
    state: WorldState,
    graph: KnowledgeGraph,
    oracle: Oracle,
    steps: u32,
}

impl Session {
    fn observe(&mut self, obs: &Observation) {
        let detected = kg::detect_interactive_objects(obs, &self.state, &self.spec);
        let room = self.spec.rooms[self.state.room].name.clone();
        kg::update_graph(
            &mut self.graph,
            obs,
            &room,
            &detected,
            &self.spec,
            self.steps,
        );
    }

    fn valid(&mut self) -> anyhow::Result<Vec<String>> {
        let words = self.spec.in_scope_words(&self.state).into_iter().collect();
        let set =
            self.oracle
                .valid_actions(&self.spec, &self.state, &ProbeScope::Candidates(words))?;
        Ok(set.actions.into_iter().map(|a| a.text).collect())
    }
}

/// Reads commands from stdin until the game ends, `:quit` or EOF.
pub fn run(game: &str, seed: u64, dump_valid: bool) -> anyhow::Result<()> {
    let spec = load_game(game).map_err(usage)?;
    let (state, obs) = spec.reset(seed);
    let mut s = Session {
        spec,
        state,
        graph: KnowledgeGraph::new(),
        oracle: Oracle::default(),
        steps: 0,
    };
    s.observe(&obs);
    let stdout = io::stdout();
    let mut out = stdout.lock();
    writeln!(out, "{}", obs.desc)?;
    if dump_valid {
        writeln!(out, "valid: {}", s.valid()?.join(" | "))?;
    }

    for line in io::stdin().lock().lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (cmd, arg) = line.split_once(' ').unwrap_or((line, ""));
        match cmd {
            ":quit" => break,
            ":valid" => {
                for a in s.valid()? {
                    writeln!(out, "{a}")?;
                }
            }
            ":graph" => write!(out, "{}", s.graph.export(GraphFormat::Triples))?,
            ":save" => {
                let path = arg.trim();
                if path.is_empty() {
                    return Err(UsageError(":save needs a path".into()).into());
                }
                std::fs::write(path, snapshot(&s.state).to_bytes())
                    .with_context(|| format!("writing {path}"))?;
                writeln!(out, "Saved.")?;
            }
            ":load" => {
                let path = arg.trim();
                let bytes = std::fs::read(path).with_context(|| format!("reading {path}"))?;
                s.state = restore(&SavedState::from_bytes(&bytes)?);
                writeln!(out, "Restored.\n{}", s.spec.render_look(&s.state))?;
            }
            _ if cmd.starts_with(':') => writeln!(out, "unknown meta-command {cmd}")?,
            _ => {
                let step = s.spec.step(&s.state, line);
                s.state = step.state;
                s.steps += 1;
                s.observe(&step.observation);
                writeln!(out, "{}", step.observation.game)?;
                if step.reward != 0 {
                    writeln!(out, "[{:+}] Score: {}", step.reward, s.state.score)?;
                }
                if step.done {
                    break;
                }
                if dump_valid {
                    writeln!(out, "valid: {}", s.valid()?.join(" | "))?;
                }
            }
        }
    }
    writeln!(
        out,
        "Final score: {} / {}",
        s.state.score,
        s.spec.max_score()
    )?;
    Ok(())
}
