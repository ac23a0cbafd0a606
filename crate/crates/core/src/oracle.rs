//! Valid-action detection.
//!
//! Every template is filled with candidate words and executed from the
//! probed state; the instantiations whose successor digest differs from the
//! probed state's digest are valid. The engine is functional, so probing
//! never touches the caller's state.

use std::collections::{BTreeSet, HashMap, HashSet};

use thiserror::Error;

use crate::engine::{GameSpec, StateDigest, WorldState};

pub const DEFAULT_PROBE_BUDGET: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidAction {
    pub text: String,
    pub template: usize,
    /// Vocabulary ids filling the blanks, in order.
    pub objects: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidSet {
    pub actions: Vec<ValidAction>,
    /// Set when the probe budget ran out before enumeration finished.
    pub truncated: bool,
}

impl ValidSet {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn contains(&self, text: &str) -> bool {
        self.actions.iter().any(|a| a.text == text)
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.actions.iter().map(|a| a.text.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProbeScope {
    /// Fill blanks only with these vocabulary ids.
    Candidates(BTreeSet<usize>),
    FullVocabulary,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("probe budget of {budget} exhausted; {} valid actions found so far", partial.len())]
    BudgetExceeded { budget: usize, partial: ValidSet },
    #[error("`{0}` is not in the vocabulary")]
    OutOfVocabulary(String),
}

/// Probes template instantiations against a game, memoizing outcomes per
/// state digest.
#[derive(Debug, Clone)]
pub struct Oracle {
    budget: usize,
    cache: HashMap<(StateDigest, usize, [usize; 2]), bool>,
    probes: u64,
}

impl Default for Oracle {
    fn default() -> Self {
        Oracle::new(DEFAULT_PROBE_BUDGET)
    }
}

impl Oracle {
    pub fn new(budget: usize) -> Self {
        Oracle {
            budget,
            cache: HashMap::new(),
            probes: 0,
        }
    }

    /// Engine steps executed so far (cache hits excluded).
    pub fn probes(&self) -> u64 {
        self.probes
    }

    pub fn clear_cache(&mut self) {
        self.cache.clear();
    }

    pub fn valid_actions(
        &mut self,
        spec: &GameSpec,
        state: &WorldState,
        scope: &ProbeScope,
    ) -> Result<ValidSet, OracleError> {
        let words: Vec<usize> = match scope {
            ProbeScope::Candidates(set) => set
                .iter()
                .copied()
                .filter(|&w| w < spec.vocabulary.len())
                .collect(),
            ProbeScope::FullVocabulary => (0..spec.vocabulary.len()).collect(),
        };
        let digest = state.digest();
        let mut out = ValidSet::default();
        let mut seen = HashSet::new();
        let mut attempts = 0usize;

        for (t, template) in spec.templates.iter().enumerate() {
            for fill in fillers(template.blanks(), &words) {
                if attempts == self.budget {
                    out.truncated = true;
                    return Err(OracleError::BudgetExceeded {
                        budget: self.budget,
                        partial: out,
                    });
                }
                attempts += 1;
                let key = (
                    digest,
                    t,
                    [
                        fill.first().copied().unwrap_or(usize::MAX),
                        fill.get(1).copied().unwrap_or(usize::MAX),
                    ],
                );
                let text = template.fill(fill.iter().map(|&w| spec.vocabulary.words()[w].as_str()));
                let changed = match self.cache.get(&key) {
                    Some(&c) => c,
                    None => {
                        self.probes += 1;
                        let c = spec.successor(state, &text).digest() != digest;
                        self.cache.insert(key, c);
                        c
                    }
                };
                if changed && seen.insert(text.clone()) {
                    out.actions.push(ValidAction {
                        text,
                        template: t,
                        objects: fill,
                    });
                }
            }
        }
        Ok(out)
    }
}

/// All ordered tuples of `blanks` words drawn from `words`.
fn fillers(blanks: usize, words: &[usize]) -> Vec<Vec<usize>> {
    match blanks {
        0 => vec![Vec::new()],
        1 => words.iter().map(|&w| vec![w]).collect(),
        _ => words
            .iter()
            .flat_map(|&a| words.iter().map(move |&b| vec![a, b]))
            .collect(),
    }
}

/// Template ids appearing in `set`.
pub fn valid_templates(set: &ValidSet) -> BTreeSet<usize> {
    set.actions.iter().map(|a| a.template).collect()
}

/// Vocabulary ids of the mask words.
pub fn valid_objects<S: AsRef<str>>(
    spec: &GameSpec,
    mask: impl IntoIterator<Item = S>,
) -> Result<BTreeSet<usize>, OracleError> {
    mask.into_iter()
        .map(|w| {
            spec.vocabulary
                .id(w.as_ref())
                .ok_or_else(|| OracleError::OutOfVocabulary(w.as_ref().to_string()))
        })
        .collect()
}
