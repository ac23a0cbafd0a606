use rand::distributions::{Distribution, WeightedIndex};
use rand_chacha::ChaCha8Rng;

use super::{
    argmax, score_encode, softmax, ActionDistribution, AgentConfig, AgentError, GraphInput,
    StepInput,
};
use crate::numerics::{Gru, Init, Linear, ParamId, ParameterSet, Tape, Var};

#[derive(Debug, Clone)]
struct Gat {
    weight: ParamId,
    source: ParamId,
    target: ParamId,
    readout: Linear,
}

/// Parameter handles of the full network.
#[derive(Debug, Clone)]
pub struct Network {
    pub config: AgentConfig,
    pub templates: usize,
    pub vocabulary: usize,
    embedding: ParamId,
    encoders: [Gru; 4],
    observation: Linear,
    gat: Option<Gat>,
    template_gru: Gru,
    template_head: Linear,
    state_projection: Linear,
    template_embedding: ParamId,
    object_embedding: ParamId,
    object_gru: Gru,
    object_head: Linear,
    critic_hidden: Linear,
    critic_out: Linear,
}

/// Tape variables of one state embedding.
#[derive(Debug, Clone, Copy)]
pub struct StateVars {
    pub state: Var,
    pub observation: Var,
    pub graph: Option<Var>,
    pub hidden: [Var; 4],
}

/// How the decoder picks each component.
pub enum Decode<'a> {
    Sample(&'a mut ChaCha8Rng),
    Greedy,
    /// Re-scores a previously decoded action.
    Replay {
        template: usize,
        objects: &'a [usize],
    },
}

/// Tape variables and record of one decoded action.
#[derive(Debug, Clone)]
pub struct DecodeOutput {
    pub template_logits: Var,
    pub template_log_probs: Var,
    pub object_logits: Vec<Var>,
    pub object_log_probs: Vec<Var>,
    pub distribution: ActionDistribution,
}

impl Network {
    /// Registers all parameters. `tokens` is the subword vocabulary size,
    /// `blanks` the number of object slots per template.
    pub fn new(
        params: &mut ParameterSet,
        config: AgentConfig,
        tokens: usize,
        templates: usize,
        vocabulary: usize,
        use_graph_attention: bool,
    ) -> Result<Self, AgentError> {
        let problems = config.problems();
        if !problems.is_empty() {
            return Err(AgentError::Config(problems.join("; ")));
        }
        let c = &config;
        let embedding = params.add("embedding", &[tokens, c.embedding], Init::FanIn)?;
        let names = [
            "encoder.desc",
            "encoder.game",
            "encoder.inv",
            "encoder.action",
        ];
        let mut encoders = Vec::with_capacity(4);
        for name in names {
            encoders.push(Gru::new(params, name, c.embedding, c.encoder_hidden)?);
        }
        let encoders: [Gru; 4] = encoders.try_into().expect("four encoders");
        let observation = Linear::new(params, "observation", 4 * c.encoder_hidden, c.observation)?;
        let gat = if use_graph_attention {
            let g = &c.gat;
            Some(Gat {
                weight: params.add(
                    "gat.weight",
                    &[g.heads * g.features, c.embedding],
                    Init::FanIn,
                )?,
                source: params.add("gat.source", &[g.heads, g.features], Init::FanIn)?,
                target: params.add("gat.target", &[g.heads, g.features], Init::FanIn)?,
                readout: Linear::new(params, "gat.readout", g.heads * g.features, g.output)?,
            })
        } else {
            None
        };
        let state_dim =
            c.observation + c.score_width + if use_graph_attention { c.gat.output } else { 0 };
        let d = c.decoder_hidden;
        Ok(Network {
            config,
            templates,
            vocabulary,
            embedding,
            encoders,
            observation,
            gat,
            template_gru: Gru::new(params, "decoder.template", state_dim, d)?,
            template_head: Linear::new(params, "decoder.template_head", d, templates)?,
            state_projection: Linear::new(params, "decoder.state", state_dim, d)?,
            template_embedding: params.add(
                "decoder.template_embedding",
                &[templates, d],
                Init::FanIn,
            )?,
            object_embedding: params.add(
                "decoder.object_embedding",
                &[vocabulary, d],
                Init::FanIn,
            )?,
            object_gru: Gru::new(params, "decoder.object", d, d)?,
            object_head: Linear::new(params, "decoder.object_head", d, vocabulary)?,
            critic_hidden: Linear::new(params, "critic.hidden", state_dim, c.critic_hidden)?,
            critic_out: Linear::new(params, "critic.out", c.critic_hidden, 1)?,
        })
    }

    pub fn uses_graph_attention(&self) -> bool {
        self.gat.is_some()
    }

    pub fn state_dim(&self) -> usize {
        let c = &self.config;
        c.observation + c.score_width + if self.gat.is_some() { c.gat.output } else { 0 }
    }

    pub fn embedding(&self) -> ParamId {
        self.embedding
    }

    /// Runs each channel through its GRU from the carried hidden state and
    /// combines the final hiddens into the observation vector.
    pub fn encode_observation(
        &self,
        tape: &mut Tape<'_>,
        input: &StepInput,
    ) -> Result<(Var, [Var; 4]), AgentError> {
        let table = tape.param(self.embedding);
        let mut hidden = Vec::with_capacity(4);
        for (c, gru) in self.encoders.iter().enumerate() {
            let h0 = tape.row_vector(&input.carried.0[c]);
            let ids = &input.tokens.0[c];
            let xs = if ids.is_empty() {
                None
            } else {
                Some(tape.gather_rows(table, ids)?)
            };
            hidden.push(gru.sequence(tape, xs, h0)?);
        }
        let joined = tape.concat_cols(&hidden)?;
        let o = self.observation.forward(tape, joined)?;
        Ok((o, hidden.try_into().expect("four channels")))
    }

    /// Multi-head graph attention pooled into one vector.
    pub fn graph_embed(&self, tape: &mut Tape<'_>, graph: &GraphInput) -> Result<Var, AgentError> {
        let gat = self
            .gat
            .as_ref()
            .ok_or_else(|| AgentError::Config("network has no graph attention".into()))?;
        let g = &self.config.gat;
        let n = graph.nodes.len();
        let table = tape.param(self.embedding);
        let x = if graph.pieces.is_empty() {
            tape.zeros(n, self.config.embedding)
        } else {
            let rows = tape.gather_rows(table, &graph.pieces)?;
            let avg = tape.constant(n, graph.pieces.len(), graph.weights.clone())?;
            tape.matmul(avg, rows)?
        };
        let w = tape.param(gat.weight);
        let z_all = tape.matmul_nt(x, w)?;
        let sources = tape.param(gat.source);
        let targets = tape.param(gat.target);
        let mut heads = Vec::with_capacity(g.heads);
        for k in 0..g.heads {
            let z = tape.slice_cols(z_all, k * g.features, g.features)?;
            let p1 = tape.row(sources, k)?;
            let p2 = tape.row(targets, k)?;
            let s = tape.matmul_nt(z, p1)?;
            let t = tape.matmul_nt(p2, z)?;
            let e = tape.outer_add(s, t)?;
            let e = tape.leaky_relu(e, g.slope);
            let alpha = tape.softmax(e, Some(&graph.adjacency))?;
            let agg = tape.matmul(alpha, z)?;
            let agg = tape.sigmoid(agg);
            heads.push(tape.mean_rows(agg));
        }
        let joined = tape.concat_cols(&heads)?;
        let out = gat.readout.forward(tape, joined)?;
        Ok(tape.tanh(out))
    }

    /// `g ⊕ o ⊕ c`, or `o ⊕ c` without graph attention.
    pub fn state(&self, tape: &mut Tape<'_>, input: &StepInput) -> Result<StateVars, AgentError> {
        let (observation, hidden) = self.encode_observation(tape, input)?;
        let score = tape.row_vector(&score_encode(input.score, self.config.score_width));
        let graph = match (&self.gat, &input.graph) {
            (Some(_), Some(g)) => Some(self.graph_embed(tape, g)?),
            (Some(_), None) => {
                return Err(AgentError::Config(
                    "graph attention needs a graph input".into(),
                ))
            }
            _ => None,
        };
        let parts: Vec<Var> = graph.into_iter().chain([observation, score]).collect();
        let state = tape.concat_cols(&parts)?;
        Ok(StateVars {
            state,
            observation,
            graph,
            hidden,
        })
    }

    pub fn critic(&self, tape: &mut Tape<'_>, state: Var) -> Result<Var, AgentError> {
        let h = self.critic_hidden.forward(tape, state)?;
        let h = tape.tanh(h);
        Ok(self.critic_out.forward(tape, h)?)
    }

    /// Decodes a template, then one object per blank. `object_mask` has one
    /// entry per vocabulary word; `blanks[t]` is template `t`'s blank count.
    pub fn decode(
        &self,
        tape: &mut Tape<'_>,
        state: Var,
        blanks: &[usize],
        object_mask: &[bool],
        mut mode: Decode<'_>,
    ) -> Result<DecodeOutput, AgentError> {
        if !object_mask.iter().any(|&b| b) {
            return Err(AgentError::EmptyMask);
        }
        let h0 = tape.zeros(1, self.config.decoder_hidden);
        let h_template = self.template_gru.cell(tape, state, h0)?;
        let template_logits = self.template_head.forward(tape, h_template)?;
        let template_log_probs = tape.log_softmax(template_logits, None)?;
        let t_logits = tape.value(template_logits).to_vec();
        let template = match &mut mode {
            Decode::Sample(rng) => sample(&softmax(&t_logits), rng),
            Decode::Greedy => argmax(&t_logits),
            Decode::Replay { template, .. } => *template,
        };
        let slots = *blanks.get(template).ok_or(AgentError::Template(template))?;

        let query = self.state_projection.forward(tape, state)?;
        let t_table = tape.param(self.template_embedding);
        let o_table = tape.param(self.object_embedding);
        let mut memory = vec![query, tape.row(t_table, template)?];
        let scale = 1.0 / (self.config.decoder_hidden as f64).sqrt();
        let mut h = h_template;
        let mut objects = Vec::with_capacity(slots);
        let mut object_logits = Vec::with_capacity(slots);
        let mut object_log_probs = Vec::with_capacity(slots);
        let mut record_logits = Vec::with_capacity(slots);
        let mut object_entropies = Vec::with_capacity(slots);
        for slot in 0..slots {
            let m = tape.stack_rows(&memory)?;
            let scores = tape.matmul_nt(query, m)?;
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax(scores, None)?;
            let context = tape.matmul(attn, m)?;
            h = self.object_gru.cell(tape, context, h)?;
            let logits = self.object_head.forward(tape, h)?;
            let log_probs = tape.log_softmax(logits, Some(object_mask))?;
            let masked: Vec<f64> = tape
                .value(logits)
                .iter()
                .zip(object_mask)
                .map(|(&x, &keep)| if keep { x } else { crate::numerics::MASK_LOGIT })
                .collect();
            let probs = softmax(&masked);
            let choice = match &mut mode {
                Decode::Sample(rng) => sample(&probs, rng),
                Decode::Greedy => argmax(&masked),
                Decode::Replay { objects, .. } => {
                    *objects.get(slot).ok_or(AgentError::Template(template))?
                }
            };
            object_entropies.push(entropy(&probs));
            objects.push(choice);
            memory.push(tape.row(o_table, choice)?);
            object_logits.push(logits);
            object_log_probs.push(log_probs);
            record_logits.push(masked);
        }

        let t_probs = softmax(&t_logits);
        let mut log_prob = tape.value(template_log_probs)[template];
        for (lp, &o) in object_log_probs.iter().zip(&objects) {
            log_prob += tape.value(*lp)[o];
        }
        Ok(DecodeOutput {
            template_logits,
            template_log_probs,
            object_logits,
            object_log_probs,
            distribution: ActionDistribution {
                template_logits: t_logits,
                object_logits: record_logits,
                template,
                objects,
                log_prob,
                template_entropy: entropy(&t_probs),
                object_entropies,
            },
        })
    }
}

fn sample(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    WeightedIndex::new(probs)
        .map(|d| d.sample(rng))
        .unwrap_or_else(|_| argmax(probs))
}

fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}
