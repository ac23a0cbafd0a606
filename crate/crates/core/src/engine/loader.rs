//! Game-definition document loader.
//!
//! Documents are line oriented: a `[section]` header starts a record and
//! `key: value` lines fill it in. `#` starts a comment line. Sections are
//! `[game]`, `[room]`, `[exit]`, `[object]`, `[template]`, `[reward]` and
//! `[victory]`; references are resolved after the whole document is read.

use std::collections::{BTreeMap, HashSet};

use thiserror::Error;

use super::command::is_known_verb;
use super::{
    room_words, Attributes, Condition, Direction, EpisodeLimits, GameSpec, Location, Object,
    RewardRule, Room,
};
use crate::templates::{parse_template, TemplateError, Vocabulary};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LoadError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {message}")]
    Reference { line: usize, message: String },
    #[error("vocabulary is missing `{word}` (used by {context})")]
    Vocabulary { word: String, context: String },
    #[error("line {line}: {source}")]
    Template {
        line: usize,
        #[source]
        source: TemplateError,
    },
}

#[derive(Debug, Default)]
struct Section {
    kind: String,
    line: usize,
    fields: Vec<(String, String, usize)>,
}

impl Section {
    fn get(&self, key: &str) -> Option<(&str, usize)> {
        self.fields
            .iter()
            .rev()
            .find(|(k, _, _)| k == key)
            .map(|(_, v, l)| (v.as_str(), *l))
    }

    fn all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = (&'a str, usize)> + 'a {
        self.fields
            .iter()
            .filter(move |(k, _, _)| k == key)
            .map(|(_, v, l)| (v.as_str(), *l))
    }

    fn require(&self, key: &str) -> Result<(&str, usize), LoadError> {
        self.get(key).ok_or_else(|| LoadError::Parse {
            line: self.line,
            message: format!("[{}] is missing `{key}`", self.kind),
        })
    }
}

fn split_document(text: &str) -> Result<Vec<Section>, LoadError> {
    const KINDS: [&str; 7] = [
        "game", "room", "exit", "object", "template", "reward", "victory",
    ];
    let mut sections: Vec<Section> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('[') {
            let kind = rest.strip_suffix(']').ok_or_else(|| LoadError::Parse {
                line,
                message: format!("malformed section header `{trimmed}`"),
            })?;
            if !KINDS.contains(&kind) {
                return Err(LoadError::Parse {
                    line,
                    message: format!("unknown section `[{kind}]`"),
                });
            }
            sections.push(Section {
                kind: kind.to_string(),
                line,
                fields: Vec::new(),
            });
            continue;
        }
        let Some((key, value)) = trimmed.split_once(':') else {
            return Err(LoadError::Parse {
                line,
                message: format!("expected `key: value`, found `{trimmed}`"),
            });
        };
        let Some(section) = sections.last_mut() else {
            return Err(LoadError::Parse {
                line,
                message: "field outside of any section".into(),
            });
        };
        section
            .fields
            .push((key.trim().to_lowercase(), value.trim().to_string(), line));
    }
    if sections.is_empty() {
        return Err(LoadError::Parse {
            line: 1,
            message: "document has no sections".into(),
        });
    }
    Ok(sections)
}

fn words(value: &str) -> Vec<String> {
    value
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn parse_number<T: std::str::FromStr>(
    value: &str,
    line: usize,
    what: &str,
) -> Result<T, LoadError> {
    value.parse().map_err(|_| LoadError::Parse {
        line,
        message: format!("`{value}` is not a valid {what}"),
    })
}

struct Resolver<'a> {
    rooms: &'a [Room],
    objects: &'a [(String, usize)],
}

impl Resolver<'_> {
    fn room(&self, id: &str, line: usize) -> Result<usize, LoadError> {
        self.rooms
            .iter()
            .position(|r| r.id == id)
            .ok_or_else(|| LoadError::Reference {
                line,
                message: format!("unknown room `{id}`"),
            })
    }

    fn object(&self, id: &str, line: usize) -> Result<usize, LoadError> {
        self.objects
            .iter()
            .position(|(o, _)| o == id)
            .ok_or_else(|| LoadError::Reference {
                line,
                message: format!("unknown object `{id}`"),
            })
    }

    fn location(&self, value: &str, line: usize) -> Result<Location, LoadError> {
        if value == "inventory" {
            return Ok(Location::Inventory);
        }
        if let Some(container) = value.strip_prefix("in:") {
            return Ok(Location::Inside(self.object(container.trim(), line)?));
        }
        Ok(Location::Room(self.room(value, line)?))
    }

    /// Conjunction of clauses joined by `and`, e.g. `inside gem case and at cellar`.
    fn condition(&self, value: &str, line: usize) -> Result<Condition, LoadError> {
        let mut parts = Vec::new();
        for clause in value.split(" and ") {
            let w: Vec<&str> = clause.split_whitespace().collect();
            let c = match w.as_slice() {
                ["carrying", o] => Condition::Carrying(self.object(o, line)?),
                ["inside", o, c] => Condition::Inside(self.object(o, line)?, self.object(c, line)?),
                ["open", o] => Condition::Open(self.object(o, line)?),
                ["unlocked", o] => Condition::Unlocked(self.object(o, line)?),
                ["at", r] => Condition::At(self.room(r, line)?),
                ["visited", r] => Condition::Visited(self.room(r, line)?),
                ["object-in", o, r] => {
                    Condition::ObjectIn(self.object(o, line)?, self.room(r, line)?)
                }
                ["score", n] => Condition::ScoreAtLeast(parse_number(n, line, "score")?),
                _ => {
                    return Err(LoadError::Parse {
                        line,
                        message: format!("unrecognized condition `{clause}`"),
                    })
                }
            };
            parts.push(c);
        }
        Ok(if parts.len() == 1 {
            parts.pop().expect("one clause")
        } else {
            Condition::All(parts)
        })
    }
}

/// Parses and validates a game-definition document.
pub fn load_game(text: &str) -> Result<GameSpec, LoadError> {
    let sections = split_document(text)?;

    let game = sections
        .iter()
        .find(|s| s.kind == "game")
        .ok_or(LoadError::Parse {
            line: 1,
            message: "missing [game] section".into(),
        })?;
    let name = game.require("name")?.0.to_string();
    let gamma = match game.get("gamma") {
        Some((v, line)) => {
            let g: f64 = parse_number(v, line, "discount")?;
            if !(g > 0.0 && g <= 1.0) {
                return Err(LoadError::Parse {
                    line,
                    message: format!("gamma must lie in (0, 1], got {g}"),
                });
            }
            g
        }
        None => 1.0,
    };
    let mut limits = EpisodeLimits::default();
    if let Some((v, line)) = game.get("valid_step_cap") {
        limits.valid_steps = parse_number(v, line, "step cap")?;
    }
    if let Some((v, line)) = game.get("turn_cap") {
        limits.turns = parse_number(v, line, "turn cap")?;
    }
    let vocabulary = Vocabulary::new(game.all("vocabulary").flat_map(|(v, _)| words(v)));

    let mut rooms = Vec::new();
    let mut room_ids = HashSet::new();
    for s in sections.iter().filter(|s| s.kind == "room") {
        let (id, line) = s.require("id")?;
        if !room_ids.insert(id.to_string()) {
            return Err(LoadError::Parse {
                line,
                message: format!("duplicate room `{id}`"),
            });
        }
        rooms.push(Room {
            id: id.to_string(),
            name: s.get("name").map_or(id, |(v, _)| v).to_string(),
            description: s.require("description")?.0.to_string(),
        });
    }
    if rooms.is_empty() {
        return Err(LoadError::Parse {
            line: 1,
            message: "game has no rooms".into(),
        });
    }

    let object_sections: Vec<&Section> = sections.iter().filter(|s| s.kind == "object").collect();
    let mut object_ids: Vec<(String, usize)> = Vec::new();
    for s in &object_sections {
        let (id, line) = s.require("id")?;
        if object_ids.iter().any(|(o, _)| o == id) {
            return Err(LoadError::Parse {
                line,
                message: format!("duplicate object `{id}`"),
            });
        }
        object_ids.push((id.to_string(), line));
    }
    let resolver = Resolver {
        rooms: &rooms,
        objects: &object_ids,
    };

    let (start_id, start_line) = game.require("start")?;
    let start = resolver.room(start_id, start_line)?;

    let mut exits = BTreeMap::new();
    for s in sections.iter().filter(|s| s.kind == "exit") {
        let (from, fl) = s.require("from")?;
        let (dir, dl) = s.require("direction")?;
        let (to, tl) = s.require("to")?;
        let dir = Direction::parse(&dir.to_lowercase()).ok_or_else(|| LoadError::Parse {
            line: dl,
            message: format!("unknown direction `{dir}`"),
        })?;
        exits.insert((resolver.room(from, fl)?, dir), resolver.room(to, tl)?);
    }

    let mut objects = Vec::new();
    for s in &object_sections {
        let id = s.require("id")?.0.to_string();
        let name = s.get("name").map_or(id.as_str(), |(v, _)| v).to_string();
        let nouns = match s.get("nouns") {
            Some((v, _)) => words(v),
            None => room_words(&name).last().cloned().into_iter().collect(),
        };
        let adjectives = s
            .get("adjectives")
            .map(|(v, _)| words(v))
            .unwrap_or_default();
        let (loc, ll) = s.require("location")?;
        let location = resolver.location(loc, ll)?;
        let mut attributes = Attributes::default();
        let mut initially_open = false;
        let mut initially_locked = false;
        if let Some((v, line)) = s.get("attributes") {
            for a in words(v) {
                match a.as_str() {
                    "takeable" => attributes.takeable = true,
                    "openable" => attributes.openable = true,
                    "lockable" => attributes.lockable = true,
                    "readable" => attributes.readable = true,
                    "container" => attributes.container = true,
                    "open" => initially_open = true,
                    "locked" => initially_locked = true,
                    other => {
                        return Err(LoadError::Parse {
                            line,
                            message: format!("unknown attribute `{other}`"),
                        })
                    }
                }
            }
        }
        if attributes.container && !attributes.openable {
            initially_open = true;
        }
        let key = match s.get("key") {
            Some((v, line)) => Some(resolver.object(v, line)?),
            None => None,
        };
        let wander = match s.get("wander") {
            Some((v, line)) => {
                let p: f64 = parse_number(v, line, "probability")?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(LoadError::Parse {
                        line,
                        message: format!("wander probability {p} outside [0, 1]"),
                    });
                }
                p
            }
            None => 0.0,
        };
        objects.push(Object {
            id,
            name,
            nouns,
            adjectives,
            location,
            attributes,
            initially_open,
            initially_locked,
            key,
            description: s.get("description").map(|(v, _)| v.to_string()),
            text: s.get("text").map(|(v, _)| v.to_string()),
            wander,
        });
    }
    for (i, obj) in objects.iter().enumerate() {
        if let Location::Inside(c) = obj.location {
            if !objects[c].attributes.container {
                return Err(LoadError::Reference {
                    line: object_ids[i].1,
                    message: format!(
                        "`{}` is placed inside non-container `{}`",
                        obj.id, objects[c].id
                    ),
                });
            }
        }
    }

    let mut templates = Vec::new();
    let mut template_sources = Vec::new();
    for s in sections.iter().filter(|s| s.kind == "template") {
        for (pattern, line) in s.all("pattern") {
            let t =
                parse_template(pattern).map_err(|source| LoadError::Template { line, source })?;
            if let Some(v) = t.verbs().iter().find(|v| !is_known_verb(v)) {
                return Err(LoadError::Reference {
                    line,
                    message: format!("template verb `{v}` is not understood by the engine"),
                });
            }
            templates.push(t);
            template_sources.push(pattern.to_string());
        }
    }

    let mut rewards = Vec::new();
    let mut reward_ids = HashSet::new();
    for s in sections.iter().filter(|s| s.kind == "reward") {
        let (id, line) = s.require("id")?;
        if !reward_ids.insert(id.to_string()) {
            return Err(LoadError::Parse {
                line,
                message: format!("duplicate reward rule `{id}`"),
            });
        }
        let (points, pl) = s.require("points")?;
        let (when, wl) = s.require("when")?;
        let once = match s.get("once") {
            Some((v, line)) => parse_number(v, line, "boolean")?,
            None => true,
        };
        rewards.push(RewardRule {
            id: id.to_string(),
            points: parse_number(points, pl, "point value")?,
            trigger: resolver.condition(when, wl)?,
            once,
        });
    }

    let victory = match sections.iter().find(|s| s.kind == "victory") {
        Some(s) => {
            let (when, line) = s.require("when")?;
            Some(resolver.condition(when, line)?)
        }
        None => None,
    };

    for t in &templates {
        if let Some(w) = t.words().find(|w| !vocabulary.contains(w)) {
            return Err(LoadError::Vocabulary {
                word: w.to_string(),
                context: format!("template `{}`", t.pattern()),
            });
        }
    }
    for obj in &objects {
        if let Some(w) = obj
            .words()
            .chain(room_words(&obj.name).iter().map(String::as_str))
            .find(|w| !vocabulary.contains(w))
        {
            return Err(LoadError::Vocabulary {
                word: w.to_string(),
                context: format!("object `{}`", obj.id),
            });
        }
    }

    Ok(GameSpec {
        name,
        gamma,
        start,
        rooms,
        exits,
        objects,
        rewards,
        victory,
        vocabulary,
        templates,
        template_sources,
        limits,
    })
}
