//! Unigram subword tokenizer.
//!
//! Words are prefixed with `▁` and segmented independently. Training seeds
//! a candidate set from frequent substrings, re-estimates piece
//! probabilities with EM over the segmentation lattice and prunes the
//! pieces whose removal costs the least likelihood until the requested
//! size is reached. Single characters are never pruned, so every string
//! over the training alphabet can be segmented.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

pub const WORD_BOUNDARY: char = '\u{2581}';
pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const START: &str = "<start>";
pub const SPECIALS: [&str; 3] = [PAD, UNK, START];
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const START_ID: usize = 2;

pub const DEFAULT_VOCAB_SIZE: usize = 512;
pub const MAX_PIECE_LEN: usize = 8;
const PRUNE_FRACTION: f64 = 0.2;
const EM_ITERATIONS: usize = 3;
const SEED_FACTOR: usize = 8;
/// Penalty below the rarest piece for an out-of-alphabet character.
const UNK_MARGIN: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TokenizerError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("target size {target} is below the minimum of {minimum} (characters plus specials)")]
    TargetTooSmall { target: usize, minimum: usize },
    #[error("only {available} candidate pieces available for target size {target}")]
    TargetTooLarge { target: usize, available: usize },
    #[error("piece id {0} is out of range")]
    UnknownId(usize),
    #[error("model line {line}: {message}")]
    ModelFormat { line: usize, message: String },
}

/// Trained piece inventory. Ids 0..3 are the specials.
#[derive(Debug, Clone, PartialEq)]
pub struct SubwordModel {
    pieces: Vec<String>,
    logp: Vec<f64>,
    index: HashMap<String, usize>,
    unk_logp: f64,
}

/// Result of segmenting one character sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub ids: Vec<usize>,
    pub log_likelihood: f64,
}

/// Losses seen in one pruning round.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneRound {
    pub size_before: usize,
    pub size_after: usize,
    pub min_kept_loss: f64,
    pub max_pruned_loss: f64,
}

impl SubwordModel {
    fn from_parts(pieces: Vec<String>, logp: Vec<f64>) -> Self {
        let index = pieces
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i))
            .collect();
        let floor = logp
            .iter()
            .copied()
            .filter(|l| l.is_finite())
            .fold(0.0_f64, f64::min);
        SubwordModel {
            pieces,
            logp,
            index,
            unk_logp: floor - UNK_MARGIN,
        }
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn piece(&self, id: usize) -> Option<&str> {
        self.pieces.get(id).map(String::as_str)
    }

    pub fn id(&self, piece: &str) -> Option<usize> {
        self.index.get(piece).copied()
    }

    pub fn log_prob(&self, id: usize) -> Option<f64> {
        self.logp.get(id).copied()
    }

    /// Score the segmenter assigns to `<unk>` for an unseen character.
    pub fn unknown_log_prob(&self) -> f64 {
        self.unk_logp
    }

    pub fn pieces(&self) -> impl Iterator<Item = (&str, f64)> {
        self.pieces
            .iter()
            .map(String::as_str)
            .zip(self.logp.iter().copied())
    }

    /// Viterbi segmentation of a raw character sequence (no pre-splitting).
    ///
    /// Ties in likelihood go to fewer pieces, then to the segmentation whose
    /// piece lengths are lexicographically largest (leftmost-longest).
    pub fn segment(&self, text: &str) -> Segmentation {
        let chars: Vec<char> = text.chars().collect();
        let n = chars.len();
        // best[i]: (log-likelihood, piece count, first piece id, first piece length) for chars[i..]
        let mut best: Vec<(f64, usize, usize, usize)> = vec![(0.0, 0, 0, 0); n + 1];
        let mut buf = String::new();
        for i in (0..n).rev() {
            let mut cur: Option<(f64, usize, usize, usize)> = None;
            for len in (1..=MAX_PIECE_LEN.min(n - i)).rev() {
                buf.clear();
                buf.extend(&chars[i..i + len]);
                let (id, lp) = match self.index.get(buf.as_str()) {
                    Some(&id) if id >= SPECIALS.len() => (id, self.logp[id]),
                    _ if len == 1 => (UNK_ID, self.unk_logp),
                    _ => continue,
                };
                let rest = best[i + len];
                let cand = (lp + rest.0, rest.1 + 1, id, len);
                let better = match cur {
                    None => true,
                    Some(c) => cand.0 > c.0 || (cand.0 == c.0 && cand.1 < c.1),
                };
                if better {
                    cur = Some(cand);
                }
            }
            best[i] = cur.expect("single characters always match");
        }
        let mut ids = Vec::new();
        let mut i = 0;
        while i < n {
            ids.push(best[i].2);
            i += best[i].3;
        }
        Segmentation {
            ids,
            log_likelihood: best[0].0,
        }
    }

    /// Piece ids for `text`. The exact string `<start>` maps to its special.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        if text.trim() == START {
            return vec![START_ID];
        }
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            let marked: String = std::iter::once(WORD_BOUNDARY).chain(word.chars()).collect();
            out.extend(self.segment(&marked).ids);
        }
        out
    }

    /// Concatenates pieces and turns word boundaries back into spaces.
    pub fn decode(&self, ids: &[usize]) -> Result<String, TokenizerError> {
        let mut out = String::new();
        for &id in ids {
            let piece = self.pieces.get(id).ok_or(TokenizerError::UnknownId(id))?;
            match id {
                PAD_ID => {}
                UNK_ID => out.push_str(UNK),
                _ => out.push_str(piece),
            }
        }
        let text = out.replace(WORD_BOUNDARY, " ");
        Ok(text.strip_prefix(' ').unwrap_or(&text).to_string())
    }

    /// `piece<TAB>logprob` lines, specials first.
    pub fn to_model_text(&self) -> String {
        let mut out = String::new();
        for (p, lp) in self.pieces() {
            writeln!(out, "{p}\t{lp}").expect("writing to a String");
        }
        out
    }

    pub fn from_model_text(text: &str) -> Result<Self, TokenizerError> {
        let mut pieces = Vec::new();
        let mut logp = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.is_empty() {
                continue;
            }
            let (piece, lp) = line.split_once('\t').ok_or(TokenizerError::ModelFormat {
                line: line_no,
                message: "expected `piece<TAB>logprob`".into(),
            })?;
            let lp: f64 = lp.parse().map_err(|_| TokenizerError::ModelFormat {
                line: line_no,
                message: format!("bad log-probability `{lp}`"),
            })?;
            if !seen.insert(piece.to_string()) {
                return Err(TokenizerError::ModelFormat {
                    line: line_no,
                    message: format!("duplicate piece `{piece}`"),
                });
            }
            pieces.push(piece.to_string());
            logp.push(lp);
        }
        if pieces.len() < SPECIALS.len() || pieces[..SPECIALS.len()] != SPECIALS {
            return Err(TokenizerError::ModelFormat {
                line: 1,
                message: "model must start with <pad>, <unk>, <start>".into(),
            });
        }
        Ok(SubwordModel::from_parts(pieces, logp))
    }
}

/// Trains a model with exactly `target_size` pieces.
pub fn train_unigram<S: AsRef<str>>(
    corpus: &[S],
    target_size: usize,
) -> Result<SubwordModel, TokenizerError> {
    train_unigram_traced(corpus, target_size).map(|(m, _)| m)
}

/// Like [`train_unigram`], also returning per-round pruning statistics.
pub fn train_unigram_traced<S: AsRef<str>>(
    corpus: &[S],
    target_size: usize,
) -> Result<(SubwordModel, Vec<PruneRound>), TokenizerError> {
    let mut words: BTreeMap<Vec<char>, f64> = BTreeMap::new();
    for line in corpus {
        for w in line.as_ref().split_whitespace() {
            let marked: Vec<char> = std::iter::once(WORD_BOUNDARY).chain(w.chars()).collect();
            *words.entry(marked).or_insert(0.0) += 1.0;
        }
    }
    if words.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }
    let words: Vec<(Vec<char>, f64)> = words.into_iter().collect();

    let alphabet: BTreeSet<char> = words.iter().flat_map(|(w, _)| w.iter().copied()).collect();
    let minimum = alphabet.len() + SPECIALS.len();
    if target_size < minimum {
        return Err(TokenizerError::TargetTooSmall {
            target: target_size,
            minimum,
        });
    }

    let mut substrings: BTreeMap<String, f64> = BTreeMap::new();
    for (w, count) in &words {
        for i in 0..w.len() {
            for len in 2..=MAX_PIECE_LEN.min(w.len() - i) {
                let s: String = w[i..i + len].iter().collect();
                *substrings.entry(s).or_insert(0.0) += count;
            }
        }
    }
    let mut ranked: Vec<(String, f64)> = substrings
        .into_iter()
        .map(|(s, c)| {
            let score = c * s.chars().count() as f64;
            (s, score)
        })
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let keep_multi = (target_size - minimum) * SEED_FACTOR;
    ranked.truncate(keep_multi.max(target_size - minimum));
    let available = minimum + ranked.len();
    if available < target_size {
        return Err(TokenizerError::TargetTooLarge {
            target: target_size,
            available,
        });
    }

    let mut vocab = Lattice::new(
        alphabet.iter().map(|c| c.to_string()).collect(),
        ranked
            .iter()
            .map(|(s, score)| (s.clone(), *score))
            .collect(),
    );

    let mut rounds = Vec::new();
    loop {
        for _ in 0..EM_ITERATIONS {
            let counts = vocab.expected_counts(&words);
            vocab.reestimate(&counts);
        }
        let size = SPECIALS.len() + vocab.len();
        if size <= target_size {
            break;
        }
        let prunable = vocab.len() - vocab.chars;
        let step = ((prunable as f64 * PRUNE_FRACTION).ceil() as usize)
            .max(1)
            .min(size - target_size);
        let counts = vocab.expected_counts(&words);
        let mut losses: Vec<(usize, f64)> = (vocab.chars..vocab.len())
            .map(|i| (i, vocab.removal_loss(i, counts[i])))
            .collect();
        losses.sort_by(|a, b| {
            a.1.total_cmp(&b.1)
                .then_with(|| vocab.pieces[a.0].cmp(&vocab.pieces[b.0]))
        });
        let (pruned, kept) = losses.split_at(step);
        rounds.push(PruneRound {
            size_before: size,
            size_after: size - step,
            min_kept_loss: kept.iter().map(|x| x.1).fold(f64::INFINITY, f64::min),
            max_pruned_loss: pruned.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max),
        });
        let drop: BTreeSet<usize> = pruned.iter().map(|x| x.0).collect();
        vocab.remove(&drop);
    }

    let mut pieces: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    let mut logp = vec![f64::NEG_INFINITY; SPECIALS.len()];
    pieces.extend(vocab.pieces.iter().cloned());
    logp.extend(vocab.logp.iter().copied());
    Ok((SubwordModel::from_parts(pieces, logp), rounds))
}

/// Working piece set during training. The first `chars` entries are the
/// single-character pieces.
struct Lattice {
    pieces: Vec<String>,
    logp: Vec<f64>,
    index: HashMap<String, usize>,
    chars: usize,
}

impl Lattice {
    fn new(chars: Vec<String>, multi: Vec<(String, f64)>) -> Self {
        let n_chars = chars.len();
        let mut pieces = chars;
        let mut weights = vec![1.0; n_chars];
        for (s, w) in multi {
            pieces.push(s);
            weights.push(w);
        }
        let total: f64 = weights.iter().sum();
        let logp = weights.iter().map(|w| (w / total).ln()).collect();
        let mut lattice = Lattice {
            pieces,
            logp,
            index: HashMap::new(),
            chars: n_chars,
        };
        lattice.reindex();
        lattice
    }

    fn len(&self) -> usize {
        self.pieces.len()
    }

    fn reindex(&mut self) {
        self.index = self
            .pieces
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i))
            .collect();
    }

    /// Pieces matching `w[i..]`, as (id, length).
    fn matches(&self, w: &[char], i: usize, buf: &mut String) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        buf.clear();
        for len in 1..=MAX_PIECE_LEN.min(w.len() - i) {
            buf.push(w[i + len - 1]);
            if let Some(&id) = self.index.get(buf.as_str()) {
                out.push((id, len));
            }
        }
        out
    }

    /// E-step: posterior piece counts by forward-backward in log space.
    fn expected_counts(&self, words: &[(Vec<char>, f64)]) -> Vec<f64> {
        let mut counts = vec![0.0; self.len()];
        let mut buf = String::new();
        for (w, freq) in words {
            let n = w.len();
            let edges: Vec<Vec<(usize, usize)>> =
                (0..n).map(|i| self.matches(w, i, &mut buf)).collect();
            let mut alpha = vec![f64::NEG_INFINITY; n + 1];
            alpha[0] = 0.0;
            for i in 0..n {
                if alpha[i] == f64::NEG_INFINITY {
                    continue;
                }
                for &(id, len) in &edges[i] {
                    alpha[i + len] = log_add(alpha[i + len], alpha[i] + self.logp[id]);
                }
            }
            let mut beta = vec![f64::NEG_INFINITY; n + 1];
            beta[n] = 0.0;
            for i in (0..n).rev() {
                for &(id, len) in &edges[i] {
                    beta[i] = log_add(beta[i], self.logp[id] + beta[i + len]);
                }
            }
            let z = alpha[n];
            for i in 0..n {
                for &(id, len) in &edges[i] {
                    let post = (alpha[i] + self.logp[id] + beta[i + len] - z).exp();
                    counts[id] += freq * post;
                }
            }
        }
        counts
    }

    /// M-step.
    fn reestimate(&mut self, counts: &[f64]) {
        let floored: Vec<f64> = counts.iter().map(|&c| c.max(1e-9)).collect();
        let total: f64 = floored.iter().sum();
        self.logp = floored.iter().map(|c| (c / total).ln()).collect();
    }

    /// Likelihood lost by segmenting piece `id` with the remaining pieces.
    fn removal_loss(&self, id: usize, count: f64) -> f64 {
        let w: Vec<char> = self.pieces[id].chars().collect();
        let n = w.len();
        let mut best = vec![f64::NEG_INFINITY; n + 1];
        best[n] = 0.0;
        let mut buf = String::new();
        for i in (0..n).rev() {
            for (pid, len) in self.matches(&w, i, &mut buf) {
                if pid == id {
                    continue;
                }
                best[i] = best[i].max(self.logp[pid] + best[i + len]);
            }
        }
        count * (self.logp[id] - best[0])
    }

    fn remove(&mut self, drop: &BTreeSet<usize>) {
        let keep: Vec<usize> = (0..self.len()).filter(|i| !drop.contains(i)).collect();
        self.pieces = keep.iter().map(|&i| self.pieces[i].clone()).collect();
        self.logp = keep.iter().map(|&i| self.logp[i]).collect();
        self.reindex();
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}
