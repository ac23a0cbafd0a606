//! Bundled playthrough corpus.
//!
//! One command per line; `# session N game` lines separate playthroughs.

use crate::engine::{games, GameSpec, START_SENTINEL};
use crate::templates::FrequencyTable;

pub const CORPUS: &str = include_str!("../data/corpus.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub game: String,
    pub commands: Vec<String>,
}

pub fn sessions() -> Vec<Session> {
    let mut out: Vec<Session> = Vec::new();
    for line in CORPUS.lines().map(str::trim) {
        if let Some(header) = line.strip_prefix("# session ") {
            if let Some(game) = header.split_whitespace().nth(1) {
                out.push(Session {
                    game: game.to_string(),
                    commands: Vec::new(),
                });
            }
        } else if !line.is_empty() && !line.starts_with('#') {
            if let Some(s) = out.last_mut() {
                s.commands.push(line.to_string());
            }
        }
    }
    out
}

/// Command lines, without comments.
pub fn commands() -> impl Iterator<Item = &'static str> {
    CORPUS
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
}

pub fn frequency_table() -> FrequencyTable {
    FrequencyTable::from_corpus(commands())
}

/// Tokenizer training text: every command plus every engine response
/// seen while replaying the sessions on the bundled games.
pub fn tokenizer_lines() -> Vec<String> {
    let mut lines = vec![START_SENTINEL.to_string()];
    let specs: Vec<(String, GameSpec)> = games::NAMES
        .iter()
        .filter_map(|&n| {
            games::bundled(n)
                .and_then(Result::ok)
                .map(|s| (n.to_string(), s))
        })
        .collect();
    for (_, spec) in &specs {
        let (_, obs) = spec.reset(0);
        lines.extend(obs.desc.lines().map(str::to_string));
        lines.push(obs.inv);
    }
    for session in sessions() {
        let Some((_, spec)) = specs.iter().find(|(n, _)| *n == session.game) else {
            continue;
        };
        let (mut state, _) = spec.reset(0);
        for cmd in &session.commands {
            let step = spec.step(&state, cmd);
            lines.push(cmd.clone());
            lines.extend(step.observation.game.lines().map(str::to_string));
            lines.extend(step.observation.desc.lines().map(str::to_string));
            lines.extend(step.observation.inv.lines().map(str::to_string));
            state = step.state;
        }
    }
    for line in &mut lines {
        *line = line.trim().to_string();
    }
    lines.retain(|l| !l.is_empty());
    lines
}
