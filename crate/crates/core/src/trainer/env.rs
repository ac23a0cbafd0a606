use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Ablation, TrainConfig, TrainError};
use crate::agent::{
    ActionDistribution, ChannelTokens, Decode, EncoderState, GraphInput, Network, SeqDecoder,
    StepInput,
};
use crate::engine::{GameSpec, Observation, StateDigest, WorldState};
use crate::kg::{self, KnowledgeGraph};
use crate::numerics::{ParameterSet, Tape};
use crate::oracle::{Oracle, ProbeScope, ValidSet};
use crate::tokenizer::SubwordModel;

/// Read-only pieces shared by every worker.
#[derive(Debug, Clone)]
pub struct Context {
    pub spec: Arc<GameSpec>,
    pub tokenizer: Arc<SubwordModel>,
    pub network: Network,
    pub seq: Option<SeqDecoder>,
    pub config: TrainConfig,
    pub blanks: Vec<usize>,
}

impl Context {
    pub fn ablation(&self) -> Ablation {
        self.config.ablation
    }
}

/// What was executed at one step.
#[derive(Debug, Clone, PartialEq)]
pub enum Choice {
    Template {
        template: usize,
        objects: Vec<usize>,
    },
    /// Symbols fed to the sequence decoder, stop included; `target` holds
    /// the sampled valid action's words when one existed.
    Words {
        symbols: Vec<usize>,
        target: Option<Vec<usize>>,
    },
}

/// One environment step as stored for the update.
#[derive(Debug, Clone)]
pub struct Record {
    pub input: StepInput,
    pub mask: Vec<bool>,
    pub template_targets: Vec<f64>,
    pub object_targets: Vec<f64>,
    pub choice: Choice,
    pub text: String,
    pub reward: f64,
    pub done: bool,
    pub value: f64,
    pub next_value: f64,
    pub valid_count: usize,
    pub mask_size: usize,
    pub decoded_objects: usize,
    pub violations: usize,
    pub executed_valid: bool,
    pub distribution: Option<ActionDistribution>,
}

/// Everything prepared from the current observation before acting.
struct Prepared {
    input: StepInput,
    mask: Vec<bool>,
    mask_size: usize,
    valid: ValidSet,
    template_targets: Vec<f64>,
    object_targets: Vec<f64>,
    graph_words: Vec<bool>,
}

/// One game instance with its graph, oracle and encoder state.
#[derive(Debug, Clone)]
pub struct Env {
    pub state: WorldState,
    pub obs: Observation,
    pub graph: KnowledgeGraph,
    pub encoder: EncoderState,
    rng: ChaCha8Rng,
    seed: u64,
    episodes: u64,
    graph_step: u32,
    valid_cache: HashMap<StateDigest, ValidSet>,
    oracle: Oracle,
    /// Final scores of finished episodes, oldest first.
    pub finished: Vec<i64>,
}

impl Env {
    pub fn new(ctx: &Context, seed: u64) -> Self {
        let mut env = Env {
            state: ctx.spec.initial_state(seed),
            obs: ctx.spec.reset(seed).1,
            graph: KnowledgeGraph::new(),
            encoder: EncoderState::zeros(ctx.config.agent.encoder_hidden),
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            episodes: 0,
            graph_step: 0,
            valid_cache: HashMap::new(),
            oracle: Oracle::default(),
            finished: Vec::new(),
        };
        env.reset(ctx);
        env
    }

    fn reset(&mut self, ctx: &Context) {
        let episode_seed = self
            .seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(self.episodes);
        let (state, obs) = ctx.spec.reset(episode_seed);
        self.state = state;
        self.obs = obs;
        self.graph = KnowledgeGraph::new();
        self.graph_step = 0;
        self.encoder = EncoderState::zeros(ctx.config.agent.encoder_hidden);
        self.update_graph(ctx);
    }

    fn update_graph(&mut self, ctx: &Context) {
        if !ctx.ablation().builds_graph() {
            return;
        }
        let spec = &ctx.spec;
        let detected = kg::detect_interactive_objects(&self.obs, &self.state, spec);
        let room = &spec.rooms[self.state.room].name;
        kg::update_graph(
            &mut self.graph,
            &self.obs,
            room,
            &detected,
            spec,
            self.graph_step,
        );
        self.graph_step += 1;
    }

    /// Valid actions of the current state, probing templates with the
    /// in-scope object words.
    pub fn valid_actions(&mut self, ctx: &Context) -> Result<ValidSet, TrainError> {
        let digest = self.state.digest();
        if let Some(v) = self.valid_cache.get(&digest) {
            return Ok(v.clone());
        }
        let words = ctx.spec.in_scope_words(&self.state).into_iter().collect();
        let set = self
            .oracle
            .valid_actions(&ctx.spec, &self.state, &ProbeScope::Candidates(words))
            .map_err(|e| TrainError::Oracle(e.to_string()))?;
        self.oracle.clear_cache();
        self.valid_cache.insert(digest, set.clone());
        Ok(set)
    }

    pub fn step_input(&self, ctx: &Context) -> StepInput {
        StepInput {
            tokens: ChannelTokens::encode(&self.obs, &ctx.tokenizer),
            carried: self.encoder.clone(),
            graph: ctx
                .ablation()
                .graph_attention()
                .then(|| GraphInput::new(&self.graph, &ctx.tokenizer)),
            score: self.state.score,
        }
    }

    fn prepare(&mut self, ctx: &Context) -> Result<Prepared, TrainError> {
        let spec = &ctx.spec;
        let vocab = spec.vocabulary.len();
        let valid = self.valid_actions(ctx)?;
        let mut template_targets = vec![0.0; spec.templates.len()];
        for a in &valid.actions {
            template_targets[a.template] = 1.0;
        }
        let mask_seed = self.rng.gen::<u64>();
        let fallback = spec.in_scope_words(&self.state);
        let (candidates, graph_words) = if ctx.ablation().builds_graph() {
            let m = kg::graph_mask(
                &self.graph,
                &spec.vocabulary,
                ctx.config.mask_probability,
                mask_seed,
                &fallback,
            );
            let mut graph_words = vec![false; vocab];
            for node in self.graph.nodes() {
                if let Some(id) = spec.vocabulary.id(node) {
                    graph_words[id] = true;
                }
            }
            (m.bits(vocab), graph_words)
        } else {
            let mut bits = vec![false; vocab];
            for &w in &fallback {
                bits[w] = true;
            }
            (bits, vec![true; vocab])
        };
        let object_targets = candidates
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect();
        let mask = if ctx.ablation().graph_mask() {
            candidates
        } else {
            vec![true; vocab]
        };
        let mask_size = mask.iter().filter(|&&b| b).count();
        Ok(Prepared {
            input: self.step_input(ctx),
            mask,
            mask_size,
            valid,
            template_targets,
            object_targets,
            graph_words,
        })
    }

    /// Decodes and executes one action.
    pub fn act(
        &mut self,
        ctx: &Context,
        params: &ParameterSet,
        greedy: bool,
    ) -> Result<Record, TrainError> {
        let p = self.prepare(ctx)?;
        let mut tape = Tape::new(params);
        let sv = ctx.network.state(&mut tape, &p.input)?;
        let value_var = ctx.network.critic(&mut tape, sv.state)?;
        let value = tape.value(value_var)[0];
        let new_hidden = EncoderState(std::array::from_fn(|i| tape.value(sv.hidden[i]).to_vec()));

        let (choice, text, distribution, decoded_objects, violations) = match &ctx.seq {
            None => {
                let mode = if greedy {
                    Decode::Greedy
                } else {
                    Decode::Sample(&mut self.rng)
                };
                let out = ctx
                    .network
                    .decode(&mut tape, sv.state, &ctx.blanks, &p.mask, mode)?;
                let d = out.distribution;
                let words = ctx.spec.vocabulary.words();
                let text = ctx.spec.templates[d.template]
                    .fill(d.objects.iter().map(|&o| words[o].as_str()));
                let violations = d.objects.iter().filter(|&&o| !p.graph_words[o]).count();
                let choice = Choice::Template {
                    template: d.template,
                    objects: d.objects.clone(),
                };
                let n = d.objects.len();
                (choice, text, Some(d), n, violations)
            }
            Some(seq) => {
                let mode = if greedy {
                    Decode::Greedy
                } else {
                    Decode::Sample(&mut self.rng)
                };
                let out = seq.decode(&mut tape, sv.state, mode)?;
                let target = if p.valid.is_empty() {
                    None
                } else {
                    let pick = self.rng.gen_range(0..p.valid.len());
                    let text = &p.valid.actions[pick].text;
                    text.split_whitespace()
                        .map(|w| ctx.spec.vocabulary.id(w))
                        .collect::<Option<Vec<usize>>>()
                        .filter(|ws| ws.len() <= crate::agent::MAX_SEQ_WORDS)
                };
                let forced =
                    !greedy && target.is_some() && self.rng.gen::<f64>() < ctx.config.p_valid;
                let words = if forced {
                    target.clone().expect("checked")
                } else {
                    out.words.clone()
                };
                let mut symbols = words.clone();
                if symbols.len() < crate::agent::MAX_SEQ_WORDS {
                    symbols.push(seq.stop());
                }
                let vocab = ctx.spec.vocabulary.words();
                let text = words
                    .iter()
                    .map(|&w| vocab[w].as_str())
                    .collect::<Vec<_>>()
                    .join(" ");
                (Choice::Words { symbols, target }, text, None, 0, 0)
            }
        };

        let executed_valid = p.valid.contains(&text);
        let step = ctx.spec.step(&self.state, &text);
        let reward = step.reward as f64;
        let done = step.done;
        self.state = step.state;
        self.obs = step.observation;
        if done {
            self.finished.push(self.state.score);
            self.episodes += 1;
            self.reset(ctx);
        } else {
            self.encoder = new_hidden;
            self.update_graph(ctx);
        }
        Ok(Record {
            input: p.input,
            mask: p.mask,
            template_targets: p.template_targets,
            object_targets: p.object_targets,
            choice,
            text,
            reward,
            done,
            value,
            next_value: 0.0,
            valid_count: p.valid.len(),
            mask_size: p.mask_size,
            decoded_objects,
            violations,
            executed_valid,
            distribution,
        })
    }

    /// Critic value of the current state.
    pub fn value(&self, ctx: &Context, params: &ParameterSet) -> Result<f64, TrainError> {
        let input = self.step_input(ctx);
        let mut tape = Tape::new(params);
        let sv = ctx.network.state(&mut tape, &input)?;
        let v = ctx.network.critic(&mut tape, sv.state)?;
        Ok(tape.value(v)[0])
    }

    /// Runs `steps` actions and fills in bootstrap values.
    pub fn rollout(
        &mut self,
        ctx: &Context,
        params: &ParameterSet,
        steps: usize,
    ) -> Result<Vec<Record>, TrainError> {
        let mut records = Vec::with_capacity(steps);
        for _ in 0..steps {
            records.push(self.act(ctx, params, false)?);
        }
        let last = self.value(ctx, params)?;
        for i in 0..records.len() {
            records[i].next_value = if i + 1 < records.len() {
                records[i + 1].value
            } else {
                last
            };
        }
        Ok(records)
    }
}
