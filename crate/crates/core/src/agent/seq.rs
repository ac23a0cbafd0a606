use rand::distributions::{Distribution, WeightedIndex};
use rand_chacha::ChaCha8Rng;

use super::{argmax, softmax, AgentError, Decode};
use crate::numerics::{Gru, Init, Linear, ParamId, ParameterSet, Tape, Var, MASK_LOGIT};

pub const MAX_SEQ_WORDS: usize = 4;

/// Word-by-word decoder over the game vocabulary plus a stop symbol.
#[derive(Debug, Clone)]
pub struct SeqDecoder {
    pub vocabulary: usize,
    init: Linear,
    embedding: ParamId,
    gru: Gru,
    head: Linear,
}

#[derive(Debug, Clone)]
pub struct SeqOutput {
    pub words: Vec<usize>,
    /// Log-probabilities of every emitted symbol, stop included.
    pub log_probs: Vec<Var>,
    /// Emitted symbols, the stop symbol included when decoded.
    pub symbols: Vec<usize>,
    pub log_prob: f64,
    pub entropies: Vec<f64>,
}

impl SeqDecoder {
    pub fn new(
        params: &mut ParameterSet,
        state_dim: usize,
        hidden: usize,
        vocabulary: usize,
    ) -> Result<Self, AgentError> {
        Ok(SeqDecoder {
            vocabulary,
            init: Linear::new(params, "seq.init", state_dim, hidden)?,
            embedding: params.add("seq.embedding", &[vocabulary + 2, hidden], Init::FanIn)?,
            gru: Gru::new(params, "seq.gru", hidden, hidden)?,
            head: Linear::new(params, "seq.head", hidden, vocabulary + 1)?,
        })
    }

    pub fn stop(&self) -> usize {
        self.vocabulary
    }

    /// Decodes up to four words. `Replay` scores the given word sequence.
    pub fn decode(
        &self,
        tape: &mut Tape<'_>,
        state: Var,
        mut mode: Decode<'_>,
    ) -> Result<SeqOutput, AgentError> {
        let stop = self.stop();
        let start = self.vocabulary + 1;
        let h = self.init.forward(tape, state)?;
        let mut h = tape.tanh(h);
        let table = tape.param(self.embedding);
        let mut prev = start;
        let mut out = SeqOutput {
            words: Vec::new(),
            log_probs: Vec::new(),
            symbols: Vec::new(),
            log_prob: 0.0,
            entropies: Vec::new(),
        };
        let no_stop: Vec<bool> = (0..=self.vocabulary).map(|i| i != stop).collect();
        for step in 0..MAX_SEQ_WORDS {
            let x = tape.row(table, prev)?;
            h = self.gru.cell(tape, x, h)?;
            let logits = self.head.forward(tape, h)?;
            let mask = (step == 0).then_some(no_stop.as_slice());
            let log_probs = tape.log_softmax(logits, mask)?;
            let masked: Vec<f64> = tape
                .value(logits)
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    if step == 0 && i == stop {
                        MASK_LOGIT
                    } else {
                        x
                    }
                })
                .collect();
            let probs = softmax(&masked);
            let symbol = match &mut mode {
                Decode::Sample(rng) => sample(&probs, rng),
                Decode::Greedy => argmax(&masked),
                Decode::Replay { objects, .. } => objects.get(step).copied().unwrap_or(stop),
            };
            out.entropies.push(
                -probs
                    .iter()
                    .filter(|&&p| p > 0.0)
                    .map(|&p| p * p.ln())
                    .sum::<f64>(),
            );
            out.log_prob += tape.value(log_probs)[symbol];
            out.log_probs.push(log_probs);
            out.symbols.push(symbol);
            if symbol == stop {
                break;
            }
            out.words.push(symbol);
            prev = symbol;
        }
        Ok(out)
    }
}

fn sample(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    WeightedIndex::new(probs)
        .map(|d| d.sample(rng))
        .unwrap_or_else(|_| argmax(probs))
}
