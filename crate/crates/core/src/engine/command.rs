//! Command parsing and execution.

use super::{Direction, GameSpec, Location, ObjectId, WorldState};

pub(crate) const UNKNOWN_VERB: &str = "That's not a verb I recognize.";
const NOT_HERE: &str = "You can't see any such thing.";

const ARTICLES: [&str; 3] = ["the", "a", "an"];
const PREPOSITIONS: [&str; 10] = [
    "in", "into", "inside", "on", "onto", "at", "against", "with", "to", "from",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseFailure {
    Empty,
    UnknownVerb,
    UnknownWord,
    NotInScope,
    Ambiguous,
    Incomplete,
}

/// How the parser and world handled a command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// Understood and carried out.
    Success,
    /// Understood, but the world refused ("It seems to be locked.").
    Refused,
    /// Not understood.
    Failed(ParseFailure),
}

impl Outcome {
    pub fn is_parse_failure(self) -> bool {
        matches!(self, Outcome::Failed(_))
    }

    pub(crate) fn consumed_turn(self) -> bool {
        !self.is_parse_failure()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Verb {
    Take,
    Drop,
    Put,
    Open,
    Unlock,
    Close,
    Lock,
    Examine,
    Read,
    Look,
    Inventory,
    Go,
    Wait,
}

fn verb(word: &str) -> Option<Verb> {
    Some(match word {
        "take" | "get" | "carry" | "hold" | "grab" | "pick" => Verb::Take,
        "drop" | "discard" | "throw" => Verb::Drop,
        "put" | "place" | "insert" => Verb::Put,
        "open" => Verb::Open,
        "unlock" => Verb::Unlock,
        "close" | "shut" => Verb::Close,
        "lock" => Verb::Lock,
        "examine" | "x" | "inspect" | "check" | "describe" => Verb::Examine,
        "read" => Verb::Read,
        "look" | "l" => Verb::Look,
        "inventory" | "i" | "inv" => Verb::Inventory,
        "go" | "walk" | "run" => Verb::Go,
        "wait" | "z" => Verb::Wait,
        _ => return None,
    })
}

/// True when the engine understands `word` as a verb or a movement.
pub fn is_known_verb(word: &str) -> bool {
    verb(word).is_some() || Direction::parse(word).is_some()
}

pub fn is_preposition(word: &str) -> bool {
    PREPOSITIONS.contains(&word)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Target {
    Object(ObjectId),
    Room,
}

type Response = (String, Outcome);

fn fail(kind: ParseFailure, text: impl Into<String>) -> Response {
    (text.into(), Outcome::Failed(kind))
}

fn refuse(text: impl Into<String>) -> Response {
    (text.into(), Outcome::Refused)
}

fn ok(text: impl Into<String>) -> Response {
    (text.into(), Outcome::Success)
}

fn tokenize(action: &str) -> Vec<String> {
    action
        .split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .filter(|w| !ARTICLES.contains(&w.as_str()))
        .collect()
}

/// Parses `action` and applies it to `state`.
pub(crate) fn execute(spec: &GameSpec, state: &mut WorldState, action: &str) -> Response {
    let words = tokenize(action);
    let Some(first) = words.first() else {
        return fail(ParseFailure::Empty, "I beg your pardon?");
    };
    if let Some(dir) = Direction::parse(first) {
        if words.len() == 1 {
            return go(spec, state, dir);
        }
        return fail(
            ParseFailure::Incomplete,
            "I only understood you as far as wanting to go somewhere.",
        );
    }
    let Some(v) = verb(first) else {
        return fail(ParseFailure::UnknownVerb, UNKNOWN_VERB);
    };
    let mut rest = &words[1..];
    if first == "pick" && rest.first().is_some_and(|w| w == "up") {
        rest = &rest[1..];
    }

    match v {
        Verb::Look => {
            if rest.first().is_some_and(|w| w == "at") && rest.len() > 1 {
                return with_target(spec, state, &rest[1..], examine);
            }
            if rest.is_empty() {
                return ok(spec.render_look(state));
            }
            fail(
                ParseFailure::Incomplete,
                "I didn't understand that sentence.",
            )
        }
        Verb::Inventory => ok(spec.render_inventory(state)),
        Verb::Wait => ok("Time passes."),
        Verb::Go => match rest {
            [dir] => match Direction::parse(dir) {
                Some(d) => go(spec, state, d),
                None => fail(ParseFailure::UnknownWord, "You can't go that way."),
            },
            [] => fail(ParseFailure::Incomplete, "Where do you want to go?"),
            _ => fail(
                ParseFailure::Incomplete,
                "I didn't understand that sentence.",
            ),
        },
        _ => {
            let split = rest.iter().position(|w| is_preposition(w));
            let (direct, prep, indirect) = match split {
                Some(i) => (&rest[..i], Some(rest[i].as_str()), &rest[i + 1..]),
                None => (rest, None, &rest[rest.len()..]),
            };
            dispatch(spec, state, v, first, direct, prep, indirect)
        }
    }
}

fn dispatch(
    spec: &GameSpec,
    state: &mut WorldState,
    v: Verb,
    verb_word: &str,
    direct: &[String],
    prep: Option<&str>,
    indirect: &[String],
) -> Response {
    if direct.is_empty() {
        return fail(
            ParseFailure::Incomplete,
            format!("What do you want to {verb_word}?"),
        );
    }
    if prep.is_some() && indirect.is_empty() {
        return fail(
            ParseFailure::Incomplete,
            format!(
                "What do you want to {verb_word} it {}?",
                prep.unwrap_or_default()
            ),
        );
    }
    let target = match resolve(spec, state, direct) {
        Ok(t) => t,
        Err(r) => return r,
    };
    let second = if indirect.is_empty() {
        None
    } else {
        match resolve(spec, state, indirect) {
            Ok(t) => Some(t),
            Err(r) => return r,
        }
    };

    match (v, prep, second) {
        (Verb::Take, _, _) => take(spec, state, target),
        (Verb::Drop, None, _) => drop(spec, state, target),
        (Verb::Drop | Verb::Put, Some(p), Some(dest)) if is_placement(p) => {
            put(spec, state, target, dest)
        }
        (Verb::Put, None, _) => fail(
            ParseFailure::Incomplete,
            format!("What do you want to {verb_word} it in?"),
        ),
        (Verb::Open, None, _) => open(spec, state, target),
        (Verb::Open | Verb::Unlock, Some("with"), Some(tool)) => {
            unlock(spec, state, target, tool, v == Verb::Open)
        }
        (Verb::Unlock | Verb::Lock, None, _) => fail(
            ParseFailure::Incomplete,
            format!("What do you want to {verb_word} it with?"),
        ),
        (Verb::Lock, Some("with"), Some(tool)) => lock(spec, state, target, tool),
        (Verb::Close, None, _) => close(spec, state, target),
        (Verb::Examine, None, _) => examine(spec, state, target),
        (Verb::Read, None, _) => read(spec, state, target),
        _ => fail(
            ParseFailure::Incomplete,
            "I didn't understand that sentence.",
        ),
    }
}

fn is_placement(prep: &str) -> bool {
    matches!(
        prep,
        "in" | "into" | "inside" | "on" | "onto" | "at" | "against"
    )
}

fn with_target(
    spec: &GameSpec,
    state: &mut WorldState,
    phrase: &[String],
    f: fn(&GameSpec, &mut WorldState, Target) -> Response,
) -> Response {
    match resolve(spec, state, phrase) {
        Ok(t) => f(spec, state, t),
        Err(r) => r,
    }
}

/// Objects the player can currently refer to: the room's contents, the
/// inventory, and anything inside an open container among those.
pub(crate) fn in_scope(spec: &GameSpec, state: &WorldState) -> Vec<ObjectId> {
    let mut scope: Vec<ObjectId> = state
        .locations
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, Location::Inventory) || **l == Location::Room(state.room))
        .map(|(i, _)| i)
        .collect();
    let mut frontier = scope.clone();
    while let Some(c) = frontier.pop() {
        if !spec.objects[c].attributes.container || !state.open[c] {
            continue;
        }
        for inner in spec.contents(state, c) {
            if !scope.contains(&inner) {
                scope.push(inner);
                frontier.push(inner);
            }
        }
    }
    scope.sort_unstable();
    scope
}

fn resolve(spec: &GameSpec, state: &WorldState, phrase: &[String]) -> Result<Target, Response> {
    if let Some(w) = phrase.iter().find(|w| !spec.vocabulary.contains(w)) {
        return Err(fail(
            ParseFailure::UnknownWord,
            format!("I don't know the word \"{w}\"."),
        ));
    }
    let room_words = super::room_words(&spec.rooms[state.room].name);
    let room_match = phrase.iter().all(|w| room_words.contains(w));

    let matches: Vec<ObjectId> = in_scope(spec, state)
        .into_iter()
        .filter(|&o| {
            let obj = &spec.objects[o];
            phrase.iter().all(|w| obj.words().any(|x| x == w))
        })
        .collect();
    let last = phrase.last().map(String::as_str).unwrap_or_default();
    let matches = if matches.len() > 1 {
        let by_noun: Vec<ObjectId> = matches
            .iter()
            .copied()
            .filter(|&o| spec.objects[o].nouns.iter().any(|n| n == last))
            .collect();
        if by_noun.is_empty() {
            matches
        } else {
            by_noun
        }
    } else {
        matches
    };
    match matches.as_slice() {
        [] if room_match => Ok(Target::Room),
        [] => Err(fail(ParseFailure::NotInScope, NOT_HERE)),
        [o] => Ok(Target::Object(*o)),
        many => {
            let names: Vec<String> = many
                .iter()
                .map(|&o| format!("the {}", spec.objects[o].name))
                .collect();
            Err(fail(
                ParseFailure::Ambiguous,
                format!("Which {last} do you mean, {}?", names.join(" or ")),
            ))
        }
    }
}

fn go(spec: &GameSpec, state: &mut WorldState, dir: Direction) -> Response {
    match spec.exits.get(&(state.room, dir)) {
        Some(&to) => {
            state.room = to;
            state.visited[to] = true;
            ok(spec.render_look(state))
        }
        None => refuse("You can't go that way."),
    }
}

fn name(spec: &GameSpec, o: ObjectId) -> &str {
    &spec.objects[o].name
}

fn take(spec: &GameSpec, state: &mut WorldState, t: Target) -> Response {
    let Target::Object(o) = t else {
        return refuse("That's hardly portable.");
    };
    if state.locations[o] == Location::Inventory {
        return refuse("You already have that.");
    }
    if !spec.objects[o].attributes.takeable {
        return refuse("That's fixed in place.");
    }
    state.locations[o] = Location::Inventory;
    ok("Taken.")
}

fn drop(_spec: &GameSpec, state: &mut WorldState, t: Target) -> Response {
    let Target::Object(o) = t else {
        return refuse("You can't do that.");
    };
    if state.locations[o] != Location::Inventory {
        return refuse("You're not carrying that.");
    }
    state.locations[o] = Location::Room(state.room);
    ok("Dropped.")
}

fn encloses(state: &WorldState, outer: ObjectId, mut inner: ObjectId) -> bool {
    loop {
        if inner == outer {
            return true;
        }
        match state.locations[inner] {
            Location::Inside(c) => inner = c,
            _ => return false,
        }
    }
}

fn put(spec: &GameSpec, state: &mut WorldState, t: Target, dest: Target) -> Response {
    let (Target::Object(o), Target::Object(c)) = (t, dest) else {
        return refuse("You can't do that.");
    };
    if state.locations[o] != Location::Inventory {
        return refuse("You're not carrying that.");
    }
    if !spec.objects[c].attributes.container {
        return refuse("You can't put things in that.");
    }
    if !state.open[c] {
        return refuse(format!("The {} is closed.", name(spec, c)));
    }
    if encloses(state, o, c) {
        return refuse("You can't do that.");
    }
    state.locations[o] = Location::Inside(c);
    ok("Done.")
}

fn reveal(spec: &GameSpec, state: &WorldState, o: ObjectId) -> String {
    let inside = spec.contents(state, o);
    if inside.is_empty() {
        "Opened.".to_string()
    } else {
        format!(
            "Opening the {} reveals {}.",
            name(spec, o),
            spec.list(&inside)
        )
    }
}

fn open(spec: &GameSpec, state: &mut WorldState, t: Target) -> Response {
    let Target::Object(o) = t else {
        return refuse("You can't open that.");
    };
    if !spec.objects[o].attributes.openable {
        return refuse("You can't open that.");
    }
    if state.open[o] {
        return refuse("It's already open.");
    }
    if state.locked[o] {
        return refuse("It seems to be locked.");
    }
    state.open[o] = true;
    ok(reveal(spec, state, o))
}

fn unlock(
    spec: &GameSpec,
    state: &mut WorldState,
    t: Target,
    tool: Target,
    and_open: bool,
) -> Response {
    let (Target::Object(o), Target::Object(k)) = (t, tool) else {
        return refuse("You can't do that.");
    };
    let obj = &spec.objects[o];
    if !obj.attributes.lockable {
        return refuse("That doesn't have a lock.");
    }
    if !state.locked[o] {
        return refuse("It isn't locked.");
    }
    if state.locations[k] != Location::Inventory {
        return refuse(format!("You're not carrying the {}.", name(spec, k)));
    }
    if obj.key != Some(k) {
        return refuse("That doesn't fit the lock.");
    }
    state.locked[o] = false;
    if !and_open {
        return ok("Unlocked.");
    }
    state.open[o] = true;
    let mut text = format!(
        "You unlock the {} with the {} and open it.",
        name(spec, o),
        name(spec, k)
    );
    let inside = spec.contents(state, o);
    if !inside.is_empty() {
        text.push_str(&format!(" Inside is {}.", spec.list(&inside)));
    }
    ok(text)
}

fn lock(spec: &GameSpec, state: &mut WorldState, t: Target, tool: Target) -> Response {
    let (Target::Object(o), Target::Object(k)) = (t, tool) else {
        return refuse("You can't do that.");
    };
    let obj = &spec.objects[o];
    if !obj.attributes.lockable {
        return refuse("That doesn't have a lock.");
    }
    if state.locked[o] {
        return refuse("It's already locked.");
    }
    if state.open[o] {
        return refuse("You'll have to close it first.");
    }
    if state.locations[k] != Location::Inventory {
        return refuse(format!("You're not carrying the {}.", name(spec, k)));
    }
    if obj.key != Some(k) {
        return refuse("That doesn't fit the lock.");
    }
    state.locked[o] = true;
    ok("Locked.")
}

fn close(spec: &GameSpec, state: &mut WorldState, t: Target) -> Response {
    let Target::Object(o) = t else {
        return refuse("You can't close that.");
    };
    if !spec.objects[o].attributes.openable {
        return refuse("You can't close that.");
    }
    if !state.open[o] {
        return refuse("It's already closed.");
    }
    state.open[o] = false;
    ok("Closed.")
}

fn examine(spec: &GameSpec, state: &mut WorldState, t: Target) -> Response {
    match t {
        Target::Room => ok(spec.render_look(state)),
        Target::Object(o) => {
            let obj = &spec.objects[o];
            let mut text = obj
                .description
                .clone()
                .unwrap_or_else(|| format!("You see nothing special about the {}.", obj.name));
            if obj.attributes.openable {
                let status = if state.open[o] { "open" } else { "closed" };
                text.push_str(&format!(" The {} is {status}.", obj.name));
            }
            ok(text)
        }
    }
}

fn read(spec: &GameSpec, _state: &mut WorldState, t: Target) -> Response {
    match t {
        Target::Object(o) if spec.objects[o].attributes.readable => ok(spec.objects[o]
            .text
            .clone()
            .unwrap_or_else(|| "It's blank.".to_string())),
        _ => refuse("There's nothing written on that."),
    }
}
