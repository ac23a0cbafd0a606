//! Game definitions shipped with the crate.

use super::{load_game, GameSpec, LoadError};
use crate::corpus;

pub const MICROZORK: &str = include_str!("../../games/microzork.game");
pub const CORRIDOR: &str = include_str!("../../games/corridor.game");
pub const PANTRY: &str = include_str!("../../games/pantry.game");

/// Names accepted by [`bundled`].
pub const NAMES: [&str; 3] = ["microzork", "corridor", "pantry"];

/// Shortest winning command sequence for microzork.
pub const MICROZORK_WALKTHROUGH: [&str; 6] = [
    "take key",
    "east",
    "open chest with key",
    "take gem",
    "south",
    "put gem in case",
];

pub const CORRIDOR_WALKTHROUGH: [&str; 5] = ["east", "east", "east", "east", "east"];

pub const PANTRY_WALKTHROUGH: [&str; 5] = [
    "north",
    "open jar",
    "take cookie",
    "south",
    "put cookie in basket",
];

/// Source text of a bundled game.
pub fn source(name: &str) -> Option<&'static str> {
    match name {
        "microzork" => Some(MICROZORK),
        "corridor" => Some(CORRIDOR),
        "pantry" => Some(PANTRY),
        _ => None,
    }
}

pub fn walkthrough(name: &str) -> Option<&'static [&'static str]> {
    match name {
        "microzork" => Some(&MICROZORK_WALKTHROUGH),
        "corridor" => Some(&CORRIDOR_WALKTHROUGH),
        "pantry" => Some(&PANTRY_WALKTHROUGH),
        _ => None,
    }
}

/// Loads a bundled game by name, with template aliases canonicalized
/// against the bundled corpus. Returns `None` for unknown names.
pub fn bundled(name: &str) -> Option<Result<GameSpec, LoadError>> {
    source(name).map(load_canonical)
}

/// Loads any game document and canonicalizes it against the bundled corpus.
pub fn load_canonical(text: &str) -> Result<GameSpec, LoadError> {
    let mut spec = load_game(text)?;
    spec.canonicalize_templates(&corpus::frequency_table());
    Ok(spec)
}
