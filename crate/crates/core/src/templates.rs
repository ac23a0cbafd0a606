//! Template action space.
//!
//! A template is a verb phrase with interchangeable aliases, an optional
//! preposition group and up to two object blanks, written in the bracket
//! grammar used by game definitions:
//!
//! ```text
//! [drop/throw/discard/put] OBJ [at/against/on/onto] OBJ
//! ```
//!
//! Aliases are collapsed to a single canonical verb and preposition by
//! picking the spelling players use most often (see [`FrequencyTable`]).

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

/// Placeholder token for an object blank in a template pattern.
pub const BLANK: &str = "OBJ";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("malformed template `{template}`: {reason}")]
    Malformed { template: String, reason: String },
    #[error("template `{0}` has more than two blanks")]
    TooManyBlanks(String),
    #[error("template `{template}` takes {expected} object(s), got {got}")]
    Arity {
        template: String,
        expected: usize,
        got: usize,
    },
    #[error("word `{0}` is not in the vocabulary")]
    OutOfVocabulary(String),
}

/// Ordered game vocabulary. The position of a word is its object class id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary, lowercasing words and dropping repeats while
    /// keeping first-seen order.
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Vocabulary::default();
        for w in words {
            vocab.push(w.as_ref());
        }
        vocab
    }

    fn push(&mut self, word: &str) {
        let word = word.trim().to_lowercase();
        if word.is_empty() || self.index.contains_key(&word) {
            return;
        }
        self.index.insert(word.clone(), self.words.len());
        self.words.push(word);
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

/// Word occurrence counts over a corpus of player commands.
#[derive(Debug, Clone, Default)]
pub struct FrequencyTable {
    counts: HashMap<String, u64>,
}

impl FrequencyTable {
    /// Counts lowercase words over command lines. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn from_corpus<I, S>(lines: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut table = FrequencyTable::default();
        for line in lines {
            let line = line.as_ref().trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            for word in line.split_whitespace() {
                *table.counts.entry(word.to_lowercase()).or_insert(0) += 1;
            }
        }
        table
    }

    pub fn count(&self, word: &str) -> u64 {
        self.counts.get(word).copied().unwrap_or(0)
    }

    pub fn set(&mut self, word: &str, count: u64) {
        self.counts.insert(word.to_lowercase(), count);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Part {
    Blank,
    Preposition,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    verbs: Vec<String>,
    prepositions: Option<Vec<String>>,
    parts: Vec<Part>,
    blanks: usize,
    canonical_verb: usize,
    canonical_preposition: usize,
}

impl Template {
    pub fn verbs(&self) -> &[String] {
        &self.verbs
    }

    pub fn prepositions(&self) -> Option<&[String]> {
        self.prepositions.as_deref()
    }

    pub fn blanks(&self) -> usize {
        self.blanks
    }

    pub fn canonical_verb(&self) -> &str {
        &self.verbs[self.canonical_verb]
    }

    pub fn canonical_preposition(&self) -> Option<&str> {
        self.prepositions
            .as_ref()
            .map(|p| p[self.canonical_preposition].as_str())
    }

    /// Every alias word the template mentions.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.verbs
            .iter()
            .chain(self.prepositions.iter().flatten())
            .map(String::as_str)
    }

    /// Canonical surface pattern, e.g. `put OBJ on OBJ`.
    pub fn pattern(&self) -> String {
        let mut out = vec![self.canonical_verb()];
        for part in &self.parts {
            match part {
                Part::Blank => out.push(BLANK),
                Part::Preposition => out.push(self.canonical_preposition().unwrap_or_default()),
            }
        }
        out.join(" ")
    }

    /// Fills the blanks in order. Object words must belong to `vocab`.
    pub fn instantiate<S: AsRef<str>>(
        &self,
        objects: &[S],
        vocab: &Vocabulary,
    ) -> Result<String, TemplateError> {
        if objects.len() != self.blanks {
            return Err(TemplateError::Arity {
                template: self.pattern(),
                expected: self.blanks,
                got: objects.len(),
            });
        }
        if let Some(bad) = objects.iter().find(|o| !vocab.contains(o.as_ref())) {
            return Err(TemplateError::OutOfVocabulary(bad.as_ref().to_string()));
        }
        Ok(self.fill(objects.iter().map(AsRef::as_ref)))
    }

    /// Substitution without vocabulary or arity checks; missing objects
    /// leave the blank token in place.
    pub fn fill<'a>(&self, mut objects: impl Iterator<Item = &'a str>) -> String {
        let mut out = String::from(self.canonical_verb());
        for part in &self.parts {
            out.push(' ');
            match part {
                Part::Blank => out.push_str(objects.next().unwrap_or(BLANK)),
                Part::Preposition => out.push_str(self.canonical_preposition().unwrap_or_default()),
            }
        }
        out
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.pattern())
    }
}

fn alias_group(token: &str, source: &str) -> Result<Vec<String>, TemplateError> {
    let malformed = |reason: &str| TemplateError::Malformed {
        template: source.to_string(),
        reason: reason.to_string(),
    };
    let inner = match (token.starts_with('['), token.ends_with(']')) {
        (true, true) if token.len() >= 2 => &token[1..token.len() - 1],
        (false, false) => token,
        _ => return Err(malformed("unbalanced brackets")),
    };
    if inner.contains('[') || inner.contains(']') {
        return Err(malformed("nested brackets"));
    }
    let group: Vec<String> = inner.split('/').map(|w| w.trim().to_lowercase()).collect();
    if group.iter().any(|w| w.is_empty()) {
        return Err(malformed("empty alias"));
    }
    Ok(group)
}

/// Parses a template in the bracket grammar. The first token is the verb
/// group; later tokens are `OBJ` blanks or a single preposition group.
pub fn parse_template(s: &str) -> Result<Template, TemplateError> {
    let malformed = |reason: &str| TemplateError::Malformed {
        template: s.to_string(),
        reason: reason.to_string(),
    };
    if s.matches('[').count() != s.matches(']').count() {
        return Err(malformed("unbalanced brackets"));
    }
    let mut tokens = s.split_whitespace();
    let verb_token = tokens.next().ok_or_else(|| malformed("empty template"))?;
    if verb_token == BLANK {
        return Err(malformed("template must start with a verb"));
    }
    let verbs = alias_group(verb_token, s)?;

    let mut parts = Vec::new();
    let mut prepositions = None;
    let mut blanks = 0;
    for token in tokens {
        if token == BLANK {
            blanks += 1;
            parts.push(Part::Blank);
        } else {
            if prepositions.is_some() {
                return Err(malformed("more than one preposition group"));
            }
            prepositions = Some(alias_group(token, s)?);
            parts.push(Part::Preposition);
        }
    }
    if blanks > 2 {
        return Err(TemplateError::TooManyBlanks(s.to_string()));
    }
    Ok(Template {
        verbs,
        prepositions,
        parts,
        blanks,
        canonical_verb: 0,
        canonical_preposition: 0,
    })
}

fn most_frequent(group: &[String], freq: &FrequencyTable) -> usize {
    // strict comparison keeps the lowest index on ties
    let mut best = 0;
    for (i, w) in group.iter().enumerate().skip(1) {
        if freq.count(w) > freq.count(&group[best]) {
            best = i;
        }
    }
    best
}

/// Picks the most frequent verb and preposition alias.
pub fn canonicalize(t: &Template, freq: &FrequencyTable) -> Template {
    let mut out = t.clone();
    out.canonical_verb = most_frequent(&t.verbs, freq);
    if let Some(preps) = &t.prepositions {
        out.canonical_preposition = most_frequent(preps, freq);
    }
    out
}

/// Templates and vocabulary with stable class ids.
#[derive(Debug, Clone)]
pub struct ActionSpace {
    templates: Vec<Template>,
    vocabulary: Vocabulary,
}

impl ActionSpace {
    pub fn new(templates: Vec<Template>, vocabulary: Vocabulary) -> Result<Self, TemplateError> {
        for t in &templates {
            if let Some(w) = t.words().find(|w| !vocabulary.contains(w)) {
                return Err(TemplateError::OutOfVocabulary(w.to_string()));
            }
        }
        Ok(ActionSpace {
            templates,
            vocabulary,
        })
    }

    /// Canonicalizes every template against `freq`.
    pub fn canonical(
        templates: &[Template],
        vocabulary: Vocabulary,
        freq: &FrequencyTable,
    ) -> Result<Self, TemplateError> {
        Self::new(
            templates.iter().map(|t| canonicalize(t, freq)).collect(),
            vocabulary,
        )
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    pub fn template(&self, id: usize) -> &Template {
        &self.templates[id]
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    /// Action text for template `template` filled with object class ids.
    pub fn instantiate(&self, template: usize, objects: &[usize]) -> Result<String, TemplateError> {
        let t = self
            .templates
            .get(template)
            .ok_or_else(|| TemplateError::Malformed {
                template: format!("#{template}"),
                reason: "no such template".into(),
            })?;
        let words = objects
            .iter()
            .map(|&o| {
                self.vocabulary
                    .word(o)
                    .ok_or_else(|| TemplateError::OutOfVocabulary(format!("#{o}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        t.instantiate(&words, &self.vocabulary)
    }
}

/// Number of distinct template instantiations, Σ |V|^blanks.
pub fn action_space_size(space: &ActionSpace) -> u128 {
    space_size(
        space.templates.iter().map(Template::blanks),
        space.vocabulary.len(),
    )
}

/// Same count for a bare list of blank arities.
pub fn space_size(blanks: impl IntoIterator<Item = usize>, vocab_size: usize) -> u128 {
    blanks
        .into_iter()
        .map(|b| (vocab_size as u128).pow(b as u32))
        .sum()
}
