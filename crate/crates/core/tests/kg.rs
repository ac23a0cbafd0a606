use kga2c::engine::{games, load_game, GameSpec, Observation};
use kga2c::kg::{
    detect_interactive_objects, graph_mask, normalize_entity, update_graph, GraphFormat,
    KnowledgeGraph, YOU,
};
use kga2c::templates::Vocabulary;
use proptest::prelude::*;

fn microzork() -> GameSpec {
    games::bundled("microzork").unwrap().unwrap()
}

const HOUSE: &str = "\
[game]
name: house
start: kitchen
vocabulary: examine x down up small mailbox kitchen cellar
[room]
id: kitchen
name: Kitchen
description: A tidy kitchen. Stairs lead down.
[room]
id: cellar
name: Cellar
description: A damp cellar.
[exit]
from: kitchen
direction: down
to: cellar
[object]
id: mailbox
name: small mailbox
nouns: mailbox
adjectives: small
location: kitchen
description: A small mailbox.
[template]
pattern: [examine/x] OBJ
pattern: down
pattern: up
";

/// Runs the update rules over the observations of a command sequence.
fn replay(spec: &GameSpec, commands: &[String]) -> KnowledgeGraph {
    let (mut state, obs) = spec.reset(0);
    let mut g = KnowledgeGraph::new();
    let det = detect_interactive_objects(&obs, &state, spec);
    update_graph(&mut g, &obs, &spec.rooms[state.room].name, &det, spec, 0);
    for (i, c) in commands.iter().enumerate() {
        let s = spec.step(&state, c);
        state = s.state;
        let det = detect_interactive_objects(&s.observation, &state, spec);
        update_graph(
            &mut g,
            &s.observation,
            &spec.rooms[state.room].name,
            &det,
            spec,
            i as u32 + 1,
        );
        if s.done {
            break;
        }
    }
    g
}

fn commands(spec: &GameSpec) -> Vec<String> {
    let space = spec.action_space();
    let mut out = Vec::new();
    for (t, template) in space.templates().iter().enumerate() {
        if template.blanks() == 0 {
            out.push(space.instantiate(t, &[]).unwrap());
        } else if template.blanks() == 1 {
            for w in 0..space.vocabulary().len() {
                out.push(space.instantiate(t, &[w]).unwrap());
            }
        }
    }
    out.extend(games::MICROZORK_WALKTHROUGH.iter().map(|s| s.to_string()));
    out
}

#[test]
fn start_detection_matches_golden_file() {
    let spec = microzork();
    let (state, obs) = spec.reset(0);
    let golden: Vec<String> = include_str!("golden/microzork_start_objects.txt")
        .lines()
        .map(str::to_string)
        .collect();
    assert_eq!(detect_interactive_objects(&obs, &state, &spec), golden);
}

#[test]
fn mailbox_observation() {
    let spec = load_game(HOUSE).unwrap();
    let (state, mut obs) = spec.reset(0);
    obs.desc = "There is a small mailbox here".into();
    obs.game = obs.desc.clone();
    let found = detect_interactive_objects(&obs, &state, &spec);
    assert!(found.contains(&"mailbox".to_string()));
    assert!(found.contains(&"small".to_string()));

    let blank = Observation {
        desc: "Nothing at all.".into(),
        game: "Nothing at all.".into(),
        ..obs
    };
    assert!(detect_interactive_objects(&blank, &state, &spec).is_empty());
}

#[test]
fn going_down_adds_navigation_triple() {
    let spec = load_game(HOUSE).unwrap();
    let g = replay(&spec, &["down".to_string()]);
    assert!(g.contains("kitchen", "down", "cellar"));
    assert!(g.contains(YOU, "in", "cellar"));
    assert!(!g.contains("cellar", "up", "kitchen"));
}

#[test]
fn no_op_leaves_graph_unchanged() {
    let spec = microzork();
    let before = replay(&spec, &["take key".into()]);
    let after = replay(
        &spec,
        &["take key".into(), "west".into(), "frobnicate".into()],
    );
    assert_eq!(before, after);
}

#[test]
fn mask_size_monte_carlo() {
    let words: Vec<String> = (0..50).map(|i| format!("w{i}")).collect();
    let vocab = Vocabulary::new(words.iter().map(String::as_str));
    let mut g = KnowledgeGraph::new();
    for w in &words[..9] {
        g.insert(
            kga2c::kg::Triple::new("w9", "has", w),
            kga2c::kg::Rule::Clause,
            0,
        );
    }
    let seeds = 10_000u64;
    let total: usize = (0..seeds)
        .map(|s| graph_mask(&g, &vocab, 0.05, s, &[]).len())
        .sum();
    let mean = total as f64 / seeds as f64;
    assert!((mean - 12.0).abs() <= 0.2, "mean mask size {mean}");
    assert_eq!(
        graph_mask(&g, &vocab, 0.05, 7, &[]),
        graph_mask(&g, &vocab, 0.05, 7, &[])
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn graph_invariants(picks in prop::collection::vec(any::<usize>(), 0..40)) {
        let spec = microzork();
        let pool = commands(&spec);
        let cmds: Vec<String> = picks.iter().map(|p| pool[p % pool.len()].clone()).collect();
        let g = replay(&spec, &cmds);
        prop_assert_eq!(g.export(GraphFormat::Triples), replay(&spec, &cmds).export(GraphFormat::Triples));
        let nodes = g.nodes();
        prop_assert!(nodes.contains(&YOU));
        for n in &nodes {
            prop_assert!(*n == YOU || g.triples().any(|t| t.subject == *n || t.object == *n));
        }
        prop_assert!(g.triples().filter(|t| t.subject == YOU && t.relation == "in").count() <= 1);
        let text = g.export(GraphFormat::Triples);
        prop_assert_eq!(text.lines().count(), g.len());

        let mask = graph_mask(&g, &spec.vocabulary, 0.0, 0, &[]);
        for &w in &mask.words {
            prop_assert!(nodes.contains(&spec.vocabulary.word(w).unwrap()));
        }
        prop_assert_eq!(graph_mask(&g, &spec.vocabulary, 1.0, 3, &[]).len(), spec.vocabulary.len());
    }

    #[test]
    fn normalization_idempotent(phrase in "(the |a |an )?([a-z]{1,6} ){0,2}[a-z]{1,6}") {
        let vocab = microzork().vocabulary;
        if let Some(once) = normalize_entity(&phrase, &vocab) {
            prop_assert_eq!(normalize_entity(&once, &vocab), Some(once));
        }
    }
}
