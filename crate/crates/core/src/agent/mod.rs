//! The actor-critic network: observation encoders, graph attention,
//! template and object decoders, critic, and a template Q-learning head.

mod network;
mod seq;
mod tdqn;
mod trace;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::KnowledgeGraph;
use crate::numerics::NumericsError;
use crate::tokenizer::SubwordModel;

pub use network::{Decode, DecodeOutput, Network, StateVars};
pub use seq::{SeqDecoder, SeqOutput, MAX_SEQ_WORDS};
pub use tdqn::{greedy_action, TdqnHeads, TdqnValues};
pub use trace::{top_k, TraceEntry};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AgentError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid agent configuration: {0}")]
    Config(String),
    #[error("object mask is empty")]
    EmptyMask,
    #[error("template {0} is out of range")]
    Template(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GatConfig {
    /// Per-head node feature width.
    pub features: usize,
    pub heads: usize,
    pub slope: f64,
    /// Width of the graph embedding.
    pub output: usize,
}

impl Default for GatConfig {
    fn default() -> Self {
        GatConfig {
            features: 32,
            heads: 4,
            slope: 0.2,
            output: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    /// Subword embedding width, shared by the encoders and graph nodes.
    pub embedding: usize,
    /// Hidden width of each observation GRU.
    pub encoder_hidden: usize,
    /// Width of the observation vector.
    pub observation: usize,
    pub score_width: usize,
    pub decoder_hidden: usize,
    pub critic_hidden: usize,
    pub gat: GatConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            embedding: 32,
            encoder_hidden: 64,
            observation: 64,
            score_width: 16,
            decoder_hidden: 64,
            critic_hidden: 64,
            gat: GatConfig::default(),
        }
    }
}

impl AgentConfig {
    /// All problems with the configuration, empty when valid.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("embedding", self.embedding),
            ("encoder_hidden", self.encoder_hidden),
            ("observation", self.observation),
            ("decoder_hidden", self.decoder_hidden),
            ("critic_hidden", self.critic_hidden),
            ("gat.features", self.gat.features),
            ("gat.heads", self.gat.heads),
            ("gat.output", self.gat.output),
        ] {
            if v == 0 {
                out.push(format!("{name} must be positive"));
            }
        }
        if self.score_width < 2 {
            out.push("score_width must be at least 2".into());
        }
        if !(self.gat.slope.is_finite() && self.gat.slope >= 0.0) {
            out.push("gat.slope must be a non-negative number".into());
        }
        out
    }
}

/// Sign bit followed by the magnitude in binary, most significant bit
/// first. Magnitudes beyond the available bits saturate.
pub fn score_encode(score: i64, width: usize) -> Vec<f64> {
    assert!(width >= 2, "score width must be at least 2");
    let bits = (width - 1).min(63);
    let max = (1u64 << bits) - 1;
    let magnitude = score.unsigned_abs().min(max);
    let mut out = Vec::with_capacity(width);
    out.push(if score < 0 { 1.0 } else { 0.0 });
    out.extend((0..width - 1).rev().map(|b| {
        if b < 64 && (magnitude >> b) & 1 == 1 {
            1.0
        } else {
            0.0
        }
    }));
    out
}

/// Token ids of the four observation channels: description, game
/// response, inventory, previous action.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ChannelTokens(pub [Vec<usize>; 4]);

impl ChannelTokens {
    pub fn encode(obs: &crate::engine::Observation, tok: &SubwordModel) -> Self {
        ChannelTokens([
            tok.encode(&obs.desc),
            tok.encode(&obs.game),
            tok.encode(&obs.inv),
            tok.encode(&obs.prev_action),
        ])
    }
}

/// Final hidden vectors of the four observation GRUs.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState(pub [Vec<f64>; 4]);

impl EncoderState {
    pub fn zeros(hidden: usize) -> Self {
        EncoderState(std::array::from_fn(|_| vec![0.0; hidden]))
    }
}

/// Dense description of a knowledge graph for the attention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    pub nodes: Vec<String>,
    /// Subword ids whose embeddings feed the node features.
    pub pieces: Vec<usize>,
    /// Row-major `nodes × pieces` averaging weights.
    pub weights: Vec<f64>,
    /// Row-major `nodes × nodes`: node `i` attends to `j`.
    pub adjacency: Vec<bool>,
}

impl GraphInput {
    /// Node features average the entity's subword embeddings, plus the
    /// average over incoming edges of each relation's subword average.
    /// Each node attends to itself and its out-neighbours.
    pub fn new(graph: &KnowledgeGraph, tok: &SubwordModel) -> Self {
        let nodes: Vec<String> = graph.nodes().into_iter().map(str::to_string).collect();
        let n = nodes.len();
        let index = |name: &str| nodes.iter().position(|x| x == name);
        let mut pieces: Vec<usize> = Vec::new();
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        let mut push =
            |row: usize, ids: Vec<usize>, scale: f64, entries: &mut Vec<(usize, usize, f64)>| {
                if ids.is_empty() {
                    return;
                }
                let w = scale / ids.len() as f64;
                for id in ids {
                    entries.push((row, pieces.len(), w));
                    pieces.push(id);
                }
            };
        for (i, name) in nodes.iter().enumerate() {
            push(i, tok.encode(name), 1.0, &mut entries);
        }
        let mut incoming: Vec<Vec<&str>> = vec![Vec::new(); n];
        let mut adjacency = vec![false; n * n];
        for i in 0..n {
            adjacency[i * n + i] = true;
        }
        for t in graph.triples() {
            if let (Some(s), Some(o)) = (index(&t.subject), index(&t.object)) {
                adjacency[s * n + o] = true;
                incoming[o].push(&t.relation);
            }
        }
        for (i, rels) in incoming.iter().enumerate() {
            let scale = 1.0 / rels.len().max(1) as f64;
            for r in rels {
                push(i, tok.encode(&r.replace('_', " ")), scale, &mut entries);
            }
        }
        let mut weights = vec![0.0; n * pieces.len()];
        for (row, col, w) in entries {
            weights[row * pieces.len() + col] += w;
        }
        GraphInput {
            nodes,
            pieces,
            weights,
            adjacency,
        }
    }
}

/// Everything the network reads for one decision.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInput {
    pub tokens: ChannelTokens,
    pub carried: EncoderState,
    pub graph: Option<GraphInput>,
    pub score: i64,
}

/// Record of one decoded action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    pub template_logits: Vec<f64>,
    /// Per decoded slot; entries outside the mask hold the mask logit.
    pub object_logits: Vec<Vec<f64>>,
    pub template: usize,
    pub objects: Vec<usize>,
    /// Joint log-probability of the decoded action.
    pub log_prob: f64,
    pub template_entropy: f64,
    pub object_entropies: Vec<f64>,
}

impl ActionDistribution {
    pub fn template_probs(&self) -> Vec<f64> {
        softmax(&self.template_logits)
    }

    pub fn object_probs(&self, slot: usize) -> Vec<f64> {
        softmax(&self.object_logits[slot])
    }

    /// Probability of each decoding step's choice, template first.
    pub fn step_probs(&self) -> Vec<f64> {
        let mut out = vec![self.template_probs()[self.template]];
        for (slot, &o) in self.objects.iter().enumerate() {
            out.push(self.object_probs(slot)[o]);
        }
        out
    }
}

/// Plain softmax that leaves logits at the mask value with probability 0.
pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let live = |x: f64| x > crate::numerics::MASK_LOGIT;
    let max = logits
        .iter()
        .copied()
        .filter(|&x| live(x))
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits
        .iter()
        .map(|&x| if live(x) { (x - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_encoding_examples() {
        assert_eq!(score_encode(0, 8), vec![0.0; 8]);
        assert_eq!(score_encode(5, 8), vec![0., 0., 0., 0., 0., 1., 0., 1.]);
        assert_eq!(score_encode(-3, 8), vec![1., 0., 0., 0., 0., 0., 1., 1.]);
        assert_eq!(score_encode(1000, 4), vec![0., 1., 1., 1.]);
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn default_config_is_valid() {
        assert!(AgentConfig::default().problems().is_empty());
        let bad = AgentConfig {
            embedding: 0,
            score_width: 1,
            ..AgentConfig::default()
        };
        assert_eq!(bad.problems().len(), 2);
    }
}
