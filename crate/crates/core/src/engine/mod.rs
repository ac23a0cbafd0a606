//! Deterministic miniature interactive-fiction engine.
//!
//! A [`GameSpec`] is loaded from a game-definition document and stays
//! immutable. Play is functional: [`GameSpec::step`] takes a borrowed
//! [`WorldState`] and returns the successor, so callers can replay or
//! probe from any state without copying the spec.

mod command;
pub mod games;
mod loader;
mod snapshot;

use std::collections::BTreeMap;
use std::fmt;

use sha2::{Digest, Sha256};

use crate::templates::{canonicalize, ActionSpace, FrequencyTable, Template, Vocabulary};

pub use command::{Outcome, ParseFailure};
pub use loader::{load_game, LoadError};
pub use snapshot::{restore, snapshot, SavedState, SnapshotError};

/// Text of `a_prev` before the first action.
pub const START_SENTINEL: &str = "<start>";

pub type RoomId = usize;
pub type ObjectId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    North,
    South,
    East,
    West,
    Northeast,
    Northwest,
    Southeast,
    Southwest,
    Up,
    Down,
}

impl Direction {
    pub const ALL: [Direction; 10] = [
        Direction::North,
        Direction::South,
        Direction::East,
        Direction::West,
        Direction::Northeast,
        Direction::Northwest,
        Direction::Southeast,
        Direction::Southwest,
        Direction::Up,
        Direction::Down,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Direction::North => "north",
            Direction::South => "south",
            Direction::East => "east",
            Direction::West => "west",
            Direction::Northeast => "northeast",
            Direction::Northwest => "northwest",
            Direction::Southeast => "southeast",
            Direction::Southwest => "southwest",
            Direction::Up => "up",
            Direction::Down => "down",
        }
    }

    /// Accepts full names and the usual one/two-letter abbreviations.
    pub fn parse(word: &str) -> Option<Direction> {
        Some(match word {
            "north" | "n" => Direction::North,
            "south" | "s" => Direction::South,
            "east" | "e" => Direction::East,
            "west" | "w" => Direction::West,
            "northeast" | "ne" => Direction::Northeast,
            "northwest" | "nw" => Direction::Northwest,
            "southeast" | "se" => Direction::Southeast,
            "southwest" | "sw" => Direction::Southwest,
            "up" | "u" => Direction::Up,
            "down" | "d" => Direction::Down,
            _ => return None,
        })
    }

    /// Direction moved by a command such as `north` or `go down`.
    pub fn from_command(text: &str) -> Option<Direction> {
        let words: Vec<String> = text.split_whitespace().map(|w| w.to_lowercase()).collect();
        match words.as_slice() {
            [dir] => Direction::parse(dir),
            [verb, dir] if matches!(verb.as_str(), "go" | "walk" | "run") => Direction::parse(dir),
            _ => None,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Room {
    pub id: String,
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Location {
    Room(RoomId),
    Inside(ObjectId),
    Inventory,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Attributes {
    pub takeable: bool,
    pub openable: bool,
    pub lockable: bool,
    pub readable: bool,
    pub container: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Object {
    pub id: String,
    /// Display name, e.g. "brass key".
    pub name: String,
    pub nouns: Vec<String>,
    pub adjectives: Vec<String>,
    pub location: Location,
    pub attributes: Attributes,
    pub initially_open: bool,
    pub initially_locked: bool,
    pub key: Option<ObjectId>,
    pub description: Option<String>,
    pub text: Option<String>,
    /// Per-turn probability of drifting to an adjacent room.
    pub wander: f64,
}

impl Object {
    pub fn article(&self) -> &'static str {
        match self.name.chars().next() {
            Some(c) if "aeiouAEIOU".contains(c) => "an",
            _ => "a",
        }
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.nouns
            .iter()
            .chain(&self.adjectives)
            .map(String::as_str)
    }
}

/// A state predicate used by reward rules and the victory check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Condition {
    Carrying(ObjectId),
    Inside(ObjectId, ObjectId),
    Open(ObjectId),
    Unlocked(ObjectId),
    At(RoomId),
    Visited(RoomId),
    ObjectIn(ObjectId, RoomId),
    ScoreAtLeast(i64),
    All(Vec<Condition>),
}

impl Condition {
    pub fn holds(&self, state: &WorldState) -> bool {
        match *self {
            Condition::Carrying(o) => state.locations[o] == Location::Inventory,
            Condition::Inside(o, c) => state.locations[o] == Location::Inside(c),
            Condition::Open(o) => state.open[o],
            Condition::Unlocked(o) => !state.locked[o],
            Condition::At(r) => state.room == r,
            Condition::Visited(r) => state.visited[r],
            Condition::ObjectIn(o, r) => state.locations[o] == Location::Room(r),
            Condition::ScoreAtLeast(n) => state.score >= n,
            Condition::All(ref parts) => parts.iter().all(|c| c.holds(state)),
        }
    }
}

/// Points granted when `trigger` goes from false to true across a step.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardRule {
    pub id: String,
    pub points: i64,
    pub trigger: Condition,
    pub once: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeLimits {
    /// Episode ends once this many world-changing steps were taken.
    pub valid_steps: u32,
    /// Absolute bound on steps, valid or not.
    pub turns: u32,
}

impl Default for EpisodeLimits {
    fn default() -> Self {
        EpisodeLimits {
            valid_steps: 100,
            turns: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WordTag {
    Noun,
    Adjective,
}

/// A validated game definition.
#[derive(Debug, Clone)]
pub struct GameSpec {
    pub name: String,
    pub gamma: f64,
    pub start: RoomId,
    pub rooms: Vec<Room>,
    pub exits: BTreeMap<(RoomId, Direction), RoomId>,
    pub objects: Vec<Object>,
    pub rewards: Vec<RewardRule>,
    pub victory: Option<Condition>,
    pub vocabulary: Vocabulary,
    pub templates: Vec<Template>,
    pub template_sources: Vec<String>,
    pub limits: EpisodeLimits,
}

/// Complete mutable game situation.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WorldState {
    pub room: RoomId,
    pub locations: Vec<Location>,
    pub open: Vec<bool>,
    pub locked: Vec<bool>,
    pub visited: Vec<bool>,
    pub score: i64,
    /// Times each reward rule fired, indexed like `GameSpec::rewards`.
    pub rule_hits: Vec<u32>,
    pub turns: u32,
    pub valid_steps: u32,
    pub rng: u64,
}

/// Hash of a world state's canonical serialization, counters excluded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateDigest(pub u64);

impl fmt::Display for StateDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl WorldState {
    /// Canonical bytes of everything except the turn and valid-step counters.
    pub(crate) fn canonical_bytes(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.room as u32).to_le_bytes());
        out.extend_from_slice(&(self.locations.len() as u32).to_le_bytes());
        for loc in &self.locations {
            let (tag, v) = match *loc {
                Location::Room(r) => (0u8, r as u32),
                Location::Inside(o) => (1, o as u32),
                Location::Inventory => (2, 0),
            };
            out.push(tag);
            out.extend_from_slice(&v.to_le_bytes());
        }
        for flags in [&self.open, &self.locked, &self.visited] {
            out.extend_from_slice(&(flags.len() as u32).to_le_bytes());
            out.extend(flags.iter().map(|&b| b as u8));
        }
        out.extend_from_slice(&self.score.to_le_bytes());
        out.extend_from_slice(&(self.rule_hits.len() as u32).to_le_bytes());
        for h in &self.rule_hits {
            out.extend_from_slice(&h.to_le_bytes());
        }
        out.extend_from_slice(&self.rng.to_le_bytes());
    }

    pub fn digest(&self) -> StateDigest {
        let mut bytes = Vec::with_capacity(64 + self.locations.len() * 8);
        self.canonical_bytes(&mut bytes);
        let hash = Sha256::digest(&bytes);
        let mut head = [0u8; 8];
        head.copy_from_slice(&hash[..8]);
        StateDigest(u64::from_le_bytes(head))
    }

    pub fn inventory(&self) -> impl Iterator<Item = ObjectId> + '_ {
        self.locations
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Location::Inventory)
            .map(|(i, _)| i)
    }
}

/// True iff the two digests differ.
pub fn world_changed(before: StateDigest, after: StateDigest) -> bool {
    before != after
}

/// The four text channels plus the running score.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    pub desc: String,
    pub game: String,
    pub inv: String,
    pub prev_action: String,
    pub score: i64,
}

struct Transition {
    state: WorldState,
    response: String,
    reward: i64,
    done: bool,
    outcome: Outcome,
}

#[derive(Debug, Clone)]
pub struct Step {
    pub state: WorldState,
    pub observation: Observation,
    pub reward: i64,
    pub done: bool,
    pub outcome: Outcome,
}

impl GameSpec {
    pub fn room_index(&self, id: &str) -> Option<RoomId> {
        self.rooms.iter().position(|r| r.id == id)
    }

    pub fn object_index(&self, id: &str) -> Option<ObjectId> {
        self.objects.iter().position(|o| o.id == id)
    }

    /// Replaces each template's alias choice by its most frequent alias.
    pub fn canonicalize_templates(&mut self, freq: &FrequencyTable) {
        for t in &mut self.templates {
            *t = canonicalize(t, freq);
        }
    }

    pub fn action_space(&self) -> ActionSpace {
        ActionSpace::new(self.templates.clone(), self.vocabulary.clone())
            .expect("loader checks template words against the vocabulary")
    }

    /// Highest reachable score counting each once-only rule a single time.
    pub fn max_score(&self) -> i64 {
        self.rewards
            .iter()
            .filter(|r| r.points > 0)
            .map(|r| r.points)
            .sum()
    }

    /// Noun/adjective lexicon used for interactive-object tagging.
    pub fn lexicon(&self) -> BTreeMap<String, WordTag> {
        let mut lex = BTreeMap::new();
        for obj in &self.objects {
            for a in &obj.adjectives {
                lex.entry(a.clone()).or_insert(WordTag::Adjective);
            }
        }
        for obj in &self.objects {
            for n in &obj.nouns {
                lex.insert(n.clone(), WordTag::Noun);
            }
        }
        for room in &self.rooms {
            for w in room_words(&room.name) {
                if self.vocabulary.contains(&w) {
                    lex.entry(w).or_insert(WordTag::Noun);
                }
            }
        }
        lex
    }

    pub fn initial_state(&self, seed: u64) -> WorldState {
        let mut visited = vec![false; self.rooms.len()];
        visited[self.start] = true;
        let wanders = self.objects.iter().any(|o| o.wander > 0.0);
        WorldState {
            room: self.start,
            locations: self.objects.iter().map(|o| o.location).collect(),
            open: self.objects.iter().map(|o| o.initially_open).collect(),
            locked: self.objects.iter().map(|o| o.initially_locked).collect(),
            visited,
            score: 0,
            rule_hits: vec![0; self.rewards.len()],
            turns: 0,
            valid_steps: 0,
            rng: if wanders {
                seed ^ 0x9e37_79b9_7f4a_7c15
            } else {
                0
            },
        }
    }

    /// Initial state and first observation.
    pub fn reset(&self, seed: u64) -> (WorldState, Observation) {
        let state = self.initial_state(seed);
        let desc = self.render_look(&state);
        let obs = Observation {
            game: desc.clone(),
            desc,
            inv: self.render_inventory(&state),
            prev_action: START_SENTINEL.to_string(),
            score: 0,
        };
        (state, obs)
    }

    /// Applies one command. Never fails: bad input yields in-fiction text.
    pub fn step(&self, state: &WorldState, action: &str) -> Step {
        let Transition {
            state: next,
            response,
            reward,
            done,
            outcome,
        } = self.transition(state, action);
        let observation = Observation {
            desc: self.render_look(&next),
            game: response,
            inv: self.render_inventory(&next),
            prev_action: action.trim().to_string(),
            score: next.score,
        };
        Step {
            state: next,
            observation,
            reward,
            done,
            outcome,
        }
    }

    /// Successor state of `action`, skipping observation rendering.
    pub fn successor(&self, state: &WorldState, action: &str) -> WorldState {
        self.transition(state, action).state
    }

    fn transition(&self, state: &WorldState, action: &str) -> Transition {
        let before = state.digest();
        let mut next = state.clone();
        let (mut response, outcome) = command::execute(self, &mut next, action);
        if outcome.consumed_turn() {
            self.wander(&mut next);
        }

        let mut reward = 0;
        for (i, rule) in self.rewards.iter().enumerate() {
            if rule.once && next.rule_hits[i] > 0 {
                continue;
            }
            if !rule.trigger.holds(state) && rule.trigger.holds(&next) {
                next.rule_hits[i] += 1;
                reward += rule.points;
            }
        }
        if reward != 0 {
            next.score += reward;
            let noun = if reward.abs() == 1 { "point" } else { "points" };
            let dir = if reward > 0 { "up" } else { "down" };
            response.push_str(&format!(
                "\n[Your score has just gone {dir} by {} {noun}.]",
                reward.abs()
            ));
        }

        next.turns = state.turns.saturating_add(1);
        if world_changed(before, next.digest()) {
            next.valid_steps = state.valid_steps.saturating_add(1);
        }
        let won = self.won(&next);
        if won {
            response.push_str("\nYou have won.");
        }
        let done =
            won || next.valid_steps >= self.limits.valid_steps || next.turns >= self.limits.turns;
        Transition {
            state: next,
            response,
            reward,
            done,
            outcome,
        }
    }

    /// Objects the parser can currently refer to.
    pub fn in_scope(&self, state: &WorldState) -> Vec<ObjectId> {
        command::in_scope(self, state)
    }

    /// Vocabulary ids of the nouns and adjectives of in-scope objects.
    pub fn in_scope_words(&self, state: &WorldState) -> Vec<usize> {
        let mut ids: Vec<usize> = self
            .in_scope(state)
            .into_iter()
            .flat_map(|o| self.objects[o].words())
            .filter_map(|w| self.vocabulary.id(w))
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// True when `state` satisfies the victory predicate.
    pub fn won(&self, state: &WorldState) -> bool {
        self.victory.as_ref().is_some_and(|v| v.holds(state))
    }

    fn wander(&self, state: &mut WorldState) {
        for (i, obj) in self.objects.iter().enumerate() {
            if obj.wander <= 0.0 {
                continue;
            }
            let Location::Room(room) = state.locations[i] else {
                continue;
            };
            let u = next_unit(&mut state.rng);
            if u >= obj.wander {
                continue;
            }
            let targets: Vec<RoomId> = self
                .exits
                .range((room, Direction::North)..=(room, Direction::Down))
                .map(|(_, &to)| to)
                .collect();
            if !targets.is_empty() {
                let pick = (next_unit(&mut state.rng) * targets.len() as f64) as usize;
                state.locations[i] = Location::Room(targets[pick.min(targets.len() - 1)]);
            }
        }
    }

    /// Output of `look`, without consuming a turn.
    pub fn render_look(&self, state: &WorldState) -> String {
        let room = &self.rooms[state.room];
        let mut out = format!("{}\n{}", room.name, room.description);
        for (i, obj) in self.objects.iter().enumerate() {
            if state.locations[i] != Location::Room(state.room) {
                continue;
            }
            out.push_str(&format!("\nThere is {} {} here.", obj.article(), obj.name));
        }
        for i in 0..self.objects.len() {
            if state.locations[i] == Location::Room(state.room) {
                self.describe_contents(state, i, &mut out);
            }
        }
        out
    }

    /// Output of `inventory`, without consuming a turn.
    pub fn render_inventory(&self, state: &WorldState) -> String {
        let held: Vec<ObjectId> = state.inventory().collect();
        if held.is_empty() {
            return "You are empty-handed.".to_string();
        }
        let mut out = String::from("You are carrying:");
        for &i in &held {
            let obj = &self.objects[i];
            out.push_str(&format!("\n  {} {}", obj.article(), obj.name));
        }
        for &i in &held {
            self.describe_contents(state, i, &mut out);
        }
        out
    }

    fn describe_contents(&self, state: &WorldState, container: ObjectId, out: &mut String) {
        let obj = &self.objects[container];
        if !obj.attributes.container || !state.open[container] {
            return;
        }
        let inside = self.contents(state, container);
        if inside.is_empty() {
            return;
        }
        out.push_str(&format!(
            "\nThe {} contains {}.",
            obj.name,
            self.list(&inside)
        ));
        for i in inside {
            self.describe_contents(state, i, out);
        }
    }

    pub(crate) fn contents(&self, state: &WorldState, container: ObjectId) -> Vec<ObjectId> {
        state
            .locations
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Location::Inside(container))
            .map(|(i, _)| i)
            .collect()
    }

    pub(crate) fn list(&self, objects: &[ObjectId]) -> String {
        let names: Vec<String> = objects
            .iter()
            .map(|&i| format!("{} {}", self.objects[i].article(), self.objects[i].name))
            .collect();
        match names.len() {
            0 => String::new(),
            1 => names[0].clone(),
            n => format!("{} and {}", names[..n - 1].join(", "), names[n - 1]),
        }
    }
}

/// Lowercase alphanumeric words of a room or object name.
pub fn room_words(name: &str) -> Vec<String> {
    name.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn next_unit(state: &mut u64) -> f64 {
    // splitmix64
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}
