//! Knowledge-graph belief state.
//!
//! The graph is rebuilt from text alone: objects detected in the
//! observation are linked to the current room, held items to `you`, and
//! movements between rooms become direction edges. A handful of clause
//! patterns over the room description add further triples.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::engine::{Direction, GameSpec, Observation, Outcome, WordTag, WorldState};
use crate::templates::Vocabulary;

pub const YOU: &str = "you";
pub const DEFAULT_MASK_PROBABILITY: f64 = 0.05;

const ARTICLES: [&str; 4] = ["the", "a", "an", "some"];

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

impl Triple {
    pub fn new(subject: &str, relation: &str, object: &str) -> Self {
        Triple {
            subject: subject.to_string(),
            relation: relation.to_string(),
            object: object.to_string(),
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}, {}, {}>", self.subject, self.relation, self.object)
    }
}

/// Which update rule introduced a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Rule {
    Location,
    Inventory,
    Surroundings,
    Navigation,
    Clause,
    Imported,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Provenance {
    pub rule: Rule,
    pub step: u32,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KgError {
    #[error("unknown graph format `{0}` (expected `dot` or `triples`)")]
    UnknownFormat(String),
    #[error("line {line}: expected `subject<TAB>relation<TAB>object`")]
    MalformedTriple { line: usize },
}

/// Set of triples with a distinguished `you` node. Equality compares
/// triples only; provenance is bookkeeping.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    triples: BTreeSet<Triple>,
    provenance: BTreeMap<String, Provenance>,
}

impl PartialEq for KnowledgeGraph {
    fn eq(&self, other: &Self) -> bool {
        self.triples == other.triples
    }
}

impl Eq for KnowledgeGraph {}

impl Default for KnowledgeGraph {
    fn default() -> Self {
        KnowledgeGraph::new()
    }
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        let mut provenance = BTreeMap::new();
        provenance.insert(
            YOU.to_string(),
            Provenance {
                rule: Rule::Location,
                step: 0,
            },
        );
        KnowledgeGraph {
            triples: BTreeSet::new(),
            provenance,
        }
    }

    pub fn triples(&self) -> impl Iterator<Item = &Triple> {
        self.triples.iter()
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn contains(&self, s: &str, r: &str, o: &str) -> bool {
        self.triples.contains(&Triple::new(s, r, o))
    }

    /// All nodes in sorted order; `you` is always present.
    pub fn nodes(&self) -> Vec<&str> {
        let mut set: BTreeSet<&str> = BTreeSet::new();
        set.insert(YOU);
        for t in &self.triples {
            set.insert(&t.subject);
            set.insert(&t.object);
        }
        set.into_iter().collect()
    }

    pub fn provenance(&self, node: &str) -> Option<Provenance> {
        self.provenance.get(node).copied()
    }

    /// Room currently linked by `<you, in, room>`.
    pub fn location(&self) -> Option<&str> {
        self.triples
            .iter()
            .find(|t| t.subject == YOU && t.relation == "in")
            .map(|t| t.object.as_str())
    }

    pub fn insert(&mut self, triple: Triple, rule: Rule, step: u32) -> bool {
        for node in [&triple.subject, &triple.object] {
            self.provenance
                .entry(node.clone())
                .or_insert(Provenance { rule, step });
        }
        self.triples.insert(triple)
    }

    fn remove_where(&mut self, pred: impl Fn(&Triple) -> bool) {
        self.triples.retain(|t| !pred(t));
        let live: BTreeSet<String> = self.nodes().into_iter().map(str::to_string).collect();
        self.provenance.retain(|n, _| live.contains(n));
    }

    pub fn export(&self, format: GraphFormat) -> String {
        match format {
            GraphFormat::Triples => self
                .triples
                .iter()
                .map(|t| format!("{}\t{}\t{}\n", t.subject, t.relation, t.object))
                .collect(),
            GraphFormat::Dot => {
                let mut out = String::from("digraph kg {\n");
                for n in self.nodes() {
                    out.push_str(&format!("  \"{}\";\n", escape(n)));
                }
                for t in &self.triples {
                    out.push_str(&format!(
                        "  \"{}\" -> \"{}\" [label=\"{}\"];\n",
                        escape(&t.subject),
                        escape(&t.object),
                        escape(&t.relation)
                    ));
                }
                out.push_str("}\n");
                out
            }
        }
    }

    /// Parses the tab-separated triples format.
    pub fn import_triples(text: &str) -> Result<Self, KgError> {
        let mut g = KnowledgeGraph::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            let [s, r, o] = parts.as_slice() else {
                return Err(KgError::MalformedTriple { line: i + 1 });
            };
            if s.is_empty() || r.is_empty() || o.is_empty() {
                return Err(KgError::MalformedTriple { line: i + 1 });
            }
            g.insert(Triple::new(s, r, o), Rule::Imported, 0);
        }
        Ok(g)
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphFormat {
    Dot,
    Triples,
}

impl FromStr for GraphFormat {
    type Err = KgError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dot" => Ok(GraphFormat::Dot),
            "triples" => Ok(GraphFormat::Triples),
            other => Err(KgError::UnknownFormat(other.to_string())),
        }
    }
}

/// Lowercase words of `text`, punctuation stripped.
fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Maps a noun phrase to a single node name: lowercase, articles dropped,
/// and the last word found in `vocab` (the last word when none is).
pub fn normalize_entity(phrase: &str, vocab: &Vocabulary) -> Option<String> {
    let ws: Vec<String> = words(phrase)
        .into_iter()
        .filter(|w| !ARTICLES.contains(&w.as_str()))
        .collect();
    ws.iter()
        .rev()
        .find(|w| vocab.contains(w))
        .or_else(|| ws.last())
        .cloned()
}

/// Lexicon-tagged nouns and adjectives from the description and game
/// text that the parser accepts in `examine`.
pub fn detect_interactive_objects(
    obs: &Observation,
    state: &WorldState,
    spec: &GameSpec,
) -> Vec<String> {
    let lexicon = spec.lexicon();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for w in words(&obs.desc).into_iter().chain(words(&obs.game)) {
        if !lexicon.contains_key(&w) || !seen.insert(w.clone()) {
            continue;
        }
        let probe = spec.step(state, &format!("examine {w}"));
        if probe.outcome == Outcome::Success {
            out.push(w);
        }
    }
    out
}

/// Item names listed by an inventory text ("You are carrying:\n  a key").
fn inventory_items(inv: &str) -> Vec<&str> {
    inv.lines()
        .skip(1)
        .filter(|l| l.starts_with("  "))
        .map(str::trim)
        .collect()
}

/// Applies the update rules for one observation.
pub fn update_graph(
    graph: &mut KnowledgeGraph,
    obs: &Observation,
    current_room: &str,
    detected: &[String],
    spec: &GameSpec,
    step: u32,
) {
    let vocab = &spec.vocabulary;
    let lexicon = spec.lexicon();
    let Some(room) = normalize_entity(current_room, vocab) else {
        return;
    };

    let previous = graph.location().map(str::to_string);
    if let (Some(prev), Some(dir)) = (&previous, Direction::from_command(&obs.prev_action)) {
        if *prev != room {
            graph.insert(Triple::new(prev, dir.name(), &room), Rule::Navigation, step);
        }
    }
    if previous.as_deref() != Some(room.as_str()) {
        graph.remove_where(|t| t.subject == YOU && t.relation == "in");
        graph.insert(Triple::new(YOU, "in", &room), Rule::Location, step);
    }

    let held: BTreeSet<String> = inventory_items(&obs.inv)
        .into_iter()
        .filter_map(|item| normalize_entity(item, vocab))
        .collect();
    for item in &held {
        graph.remove_where(|t| t.relation == "has" && t.object == *item);
        graph.insert(Triple::new(YOU, "have", item), Rule::Inventory, step);
    }

    let room_words: BTreeSet<String> = words(current_room).into_iter().collect();
    for w in detected {
        if lexicon.get(w) != Some(&WordTag::Noun) || room_words.contains(w) || held.contains(w) {
            continue;
        }
        graph.insert(Triple::new(&room, "has", w), Rule::Surroundings, step);
        graph.insert(
            Triple::new(YOU, "surrounded_by", w),
            Rule::Surroundings,
            step,
        );
    }

    for t in clause_triples(&obs.desc, &room, vocab) {
        if held.contains(&t.object) && t.relation == "has" {
            continue;
        }
        graph.insert(t, Rule::Clause, step);
    }
}

/// Triples from fixed sentence patterns.
pub fn clause_triples(text: &str, room: &str, vocab: &Vocabulary) -> Vec<Triple> {
    let mut out = Vec::new();
    let norm = |p: &str| normalize_entity(p, vocab);
    for sentence in text
        .split(['.', '\n', '!', '?'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
    {
        let lower = sentence.to_lowercase();
        if let Some(rest) = lower
            .strip_prefix("there is ")
            .or_else(|| lower.strip_prefix("there are "))
        {
            if let Some(thing) = rest.strip_suffix(" here").and_then(norm) {
                out.push(Triple::new(room, "has", &thing));
            }
            continue;
        }
        if let Some((subject, rest)) = lower.split_once(" contains ") {
            if let Some(s) = norm(subject) {
                for item in split_list(rest) {
                    if let Some(o) = norm(item) {
                        out.push(Triple::new(&s, "contains", &o));
                    }
                }
            }
            continue;
        }
        if let Some((subject, place)) = lower.split_once(" is in ") {
            if let (Some(s), Some(o)) = (norm(subject), norm(place)) {
                out.push(Triple::new(&s, "in", &o));
            }
            continue;
        }
        if let Some((subject, complement)) = lower.split_once(" is ") {
            let short = |p: &str| (1..=3).contains(&words(p).len());
            if short(subject) && short(complement) {
                if let (Some(s), Some(o)) = (norm(subject), norm(complement)) {
                    out.push(Triple::new(&s, "is", &o));
                }
            }
        }
    }
    out
}

fn split_list(text: &str) -> Vec<&str> {
    text.split(", ")
        .flat_map(|p| p.split(" and "))
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .collect()
}

/// Object words the decoder may emit.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphMask {
    pub words: BTreeSet<usize>,
    pub p_m: f64,
    pub seed: u64,
}

impl GraphMask {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.words.contains(&id)
    }

    /// Bit vector over the vocabulary.
    pub fn bits(&self, vocab_size: usize) -> Vec<bool> {
        (0..vocab_size).map(|i| self.words.contains(&i)).collect()
    }
}

/// Graph entities found in `vocab`, plus each other word with probability
/// `p_m`. Falls back to `fallback`, then all of `vocab`, if that is empty.
pub fn graph_mask(
    graph: &KnowledgeGraph,
    vocab: &Vocabulary,
    p_m: f64,
    seed: u64,
    fallback: &[usize],
) -> GraphMask {
    let mut words: BTreeSet<usize> = graph.nodes().iter().filter_map(|n| vocab.id(n)).collect();
    if p_m > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for id in 0..vocab.len() {
            if !words.contains(&id) && rng.gen::<f64>() < p_m {
                words.insert(id);
            }
        }
    }
    if words.is_empty() {
        words.extend(fallback.iter().copied().filter(|&i| i < vocab.len()));
    }
    if words.is_empty() {
        words.extend(0..vocab.len());
    }
    GraphMask { words, p_m, seed }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::games;

    fn microzork() -> GameSpec {
        games::bundled("microzork").unwrap().unwrap()
    }

    #[test]
    fn normalization_picks_head_noun_and_is_idempotent() {
        let vocab = Vocabulary::new(["brass", "key", "small", "mailbox"]);
        assert_eq!(
            normalize_entity("a brass key", &vocab).as_deref(),
            Some("key")
        );
        assert_eq!(
            normalize_entity("The Small Mailbox", &vocab).as_deref(),
            Some("mailbox")
        );
        assert_eq!(normalize_entity("old rug", &vocab).as_deref(), Some("rug"));
        for p in ["a brass key", "old rug", "mailbox"] {
            let once = normalize_entity(p, &vocab).unwrap();
            assert_eq!(normalize_entity(&once, &vocab).unwrap(), once);
        }
        assert_eq!(normalize_entity("the", &vocab), None);
    }

    #[test]
    fn clause_rules() {
        let vocab = Vocabulary::new(["chest", "gem", "coin", "case", "glass"]);
        let t = clause_triples(
            "There is a wooden chest here. The wooden chest contains a gem and a coin. The coin is in the case. The case is glass.",
            "shed",
            &vocab,
        );
        assert!(t.contains(&Triple::new("shed", "has", "chest")));
        assert!(t.contains(&Triple::new("chest", "contains", "gem")));
        assert!(t.contains(&Triple::new("chest", "contains", "coin")));
        assert!(t.contains(&Triple::new("coin", "in", "case")));
        assert!(t.contains(&Triple::new("case", "is", "glass")));
    }

    #[test]
    fn detects_start_objects() {
        let spec = microzork();
        let (state, obs) = spec.reset(0);
        let found = detect_interactive_objects(&obs, &state, &spec);
        assert_eq!(found, ["field", "brass", "key", "small", "mailbox"]);
    }

    #[test]
    fn taking_moves_edge_from_room_to_you() {
        let spec = microzork();
        let (state, obs) = spec.reset(0);
        let mut g = KnowledgeGraph::new();
        let det = detect_interactive_objects(&obs, &state, &spec);
        update_graph(&mut g, &obs, "Field", &det, &spec, 0);
        assert!(g.contains("field", "has", "key"));
        assert!(g.contains(YOU, "in", "field"));

        let step = spec.step(&state, "take key");
        let det = detect_interactive_objects(&step.observation, &step.state, &spec);
        update_graph(&mut g, &step.observation, "Field", &det, &spec, 1);
        assert!(g.contains(YOU, "have", "key"));
        assert!(!g.contains("field", "has", "key"));
    }

    #[test]
    fn movement_adds_navigation_edge() {
        let spec = microzork();
        let (state, obs) = spec.reset(0);
        let mut g = KnowledgeGraph::new();
        update_graph(&mut g, &obs, "Field", &[], &spec, 0);
        let step = spec.step(&state, "east");
        update_graph(&mut g, &step.observation, "Shed", &[], &spec, 1);
        assert!(g.contains("field", "east", "shed"));
        assert_eq!(g.location(), Some("shed"));
        assert!(!g.contains(YOU, "in", "field"));
    }

    #[test]
    fn export_formats() {
        let g = KnowledgeGraph::new();
        assert_eq!(g.export(GraphFormat::Dot), "digraph kg {\n  \"you\";\n}\n");
        let mut g = KnowledgeGraph::new();
        g.insert(Triple::new("you", "in", "field"), Rule::Location, 0);
        g.insert(Triple::new("field", "has", "key"), Rule::Surroundings, 0);
        let dot = g.export(GraphFormat::Dot);
        assert_eq!(dot.matches("->").count(), 2);
        let text = g.export(GraphFormat::Triples);
        assert_eq!(text, "field\thas\tkey\nyou\tin\tfield\n");
        assert_eq!(KnowledgeGraph::import_triples(&text).unwrap(), g);
        assert!("svg".parse::<GraphFormat>().is_err());
        assert!(KnowledgeGraph::import_triples("a\tb\n").is_err());
    }

    #[test]
    fn mask_extremes() {
        let vocab = Vocabulary::new(["key", "field", "lamp", "gem"]);
        let mut g = KnowledgeGraph::new();
        g.insert(Triple::new("field", "has", "key"), Rule::Surroundings, 0);
        let m = graph_mask(&g, &vocab, 0.0, 1, &[]);
        assert_eq!(
            m.words,
            BTreeSet::from([vocab.id("key").unwrap(), vocab.id("field").unwrap()])
        );
        let m = graph_mask(&g, &vocab, 1.0, 1, &[]);
        assert_eq!(m.len(), 4);
        let m = graph_mask(&KnowledgeGraph::new(), &vocab, 0.0, 1, &[2]);
        assert_eq!(m.words, BTreeSet::from([2]));
    }
}
