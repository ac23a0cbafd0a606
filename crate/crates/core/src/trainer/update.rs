use serde::{Deserialize, Serialize};

use super::env::{Choice, Context, Record};
use super::losses::{
    actor_loss, critic_loss, entropy_term, masked_entropy_term, object_loss, q_target,
    template_loss,
};
use super::TrainError;
use crate::agent::Decode;
use crate::numerics::{Gradients, ParameterSet, Tape, Var};

/// Loss components summed over records.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub actor: f64,
    pub critic: f64,
    pub template: f64,
    pub object: f64,
    pub entropy: f64,
}

impl LossParts {
    pub fn add(&mut self, other: &LossParts) {
        self.total += other.total;
        self.actor += other.actor;
        self.critic += other.critic;
        self.template += other.template;
        self.object += other.object;
        self.entropy += other.entropy;
    }

    pub fn scale(&mut self, c: f64) {
        for v in [
            &mut self.total,
            &mut self.actor,
            &mut self.critic,
            &mut self.template,
            &mut self.object,
            &mut self.entropy,
        ] {
            *v *= c;
        }
    }
}

fn weighted(tape: &mut Tape<'_>, acc: Var, term: Var, weight: f64) -> Result<Var, TrainError> {
    if weight == 0.0 {
        return Ok(acc);
    }
    let t = tape.scale(term, weight);
    Ok(tape.add(acc, t)?)
}

/// Builds the full objective for one record and backpropagates it,
/// scaled by `scale`, into `grads`.
pub fn record_gradients(
    ctx: &Context,
    params: &ParameterSet,
    record: &Record,
    scale: f64,
    grads: &mut Gradients,
) -> Result<LossParts, TrainError> {
    let cfg = &ctx.config;
    let supervised = ctx.ablation().supervised();
    let mut tape = Tape::new(params);
    let sv = ctx.network.state(&mut tape, &record.input)?;
    let value = ctx.network.critic(&mut tape, sv.state)?;
    let q = q_target(record.reward, record.next_value, record.done, cfg.gamma);
    let advantage = q - record.value;

    let critic = critic_loss(&mut tape, value, q)?;
    let zero = tape.zeros(1, 1);
    let (actor, template, object, entropy) = match &record.choice {
        Choice::Template { template, objects } => {
            let out = ctx.network.decode(
                &mut tape,
                sv.state,
                &ctx.blanks,
                &record.mask,
                Decode::Replay {
                    template: *template,
                    objects,
                },
            )?;
            let mut picks = vec![(out.template_log_probs, *template)];
            picks.extend(
                out.object_log_probs
                    .iter()
                    .copied()
                    .zip(objects.iter().copied()),
            );
            let actor = actor_loss(&mut tape, &picks, advantage)?;
            let (lt, lo) = if supervised {
                (
                    template_loss(&mut tape, out.template_logits, &record.template_targets)?,
                    object_loss(&mut tape, &out.object_logits, &record.object_targets)?,
                )
            } else {
                (zero, zero)
            };
            let valid_templates: Vec<bool> =
                record.template_targets.iter().map(|&y| y > 0.5).collect();
            let mut ent = if !supervised {
                entropy_term(&mut tape, out.template_logits, None)?
            } else if valid_templates.iter().any(|&b| b) {
                entropy_term(&mut tape, out.template_logits, Some(&valid_templates))?
            } else {
                zero
            };
            for &logits in &out.object_logits {
                let e = masked_entropy_term(&mut tape, logits, &record.mask)?;
                ent = tape.add(ent, e)?;
            }
            (actor, lt, lo, ent)
        }
        Choice::Words { symbols, target } => {
            let seq = ctx
                .seq
                .as_ref()
                .expect("word choices come from the sequence decoder");
            let out = seq.decode(
                &mut tape,
                sv.state,
                Decode::Replay {
                    template: 0,
                    objects: symbols,
                },
            )?;
            let picks: Vec<(Var, usize)> = out
                .log_probs
                .iter()
                .copied()
                .zip(out.symbols.iter().copied())
                .collect();
            let actor = actor_loss(&mut tape, &picks, advantage)?;
            let mut ent = zero;
            for &lp in &out.log_probs {
                let p = tape.exp(lp);
                let plp = tape.mul(p, lp)?;
                let s = tape.sum(plp);
                ent = tape.add(ent, s)?;
            }
            let valid_loss = match target {
                Some(words) if supervised => {
                    let mut symbols = words.clone();
                    if symbols.len() < crate::agent::MAX_SEQ_WORDS {
                        symbols.push(seq.stop());
                    }
                    let teacher = seq.decode(
                        &mut tape,
                        sv.state,
                        Decode::Replay {
                            template: 0,
                            objects: &symbols,
                        },
                    )?;
                    let picks: Vec<(Var, usize)> = teacher
                        .log_probs
                        .iter()
                        .copied()
                        .zip(teacher.symbols.iter().copied())
                        .collect();
                    actor_loss(&mut tape, &picks, 1.0)?
                }
                _ => zero,
            };
            (actor, valid_loss, zero, ent)
        }
    };

    let mut total = actor;
    total = weighted(&mut tape, total, critic, cfg.critic_weight)?;
    total = weighted(&mut tape, total, template, cfg.template_weight)?;
    total = weighted(&mut tape, total, object, cfg.object_weight)?;
    total = weighted(&mut tape, total, entropy, cfg.entropy_weight)?;
    let parts = LossParts {
        total: tape.scalar(total),
        actor: tape.scalar(actor),
        critic: tape.scalar(critic),
        template: tape.scalar(template),
        object: tape.scalar(object),
        entropy: tape.scalar(entropy),
    };
    if !parts.total.is_finite() {
        return Err(TrainError::NonFinite(format!(
            "action `{}`, reward {}, value {}, next value {}, losses {:?}",
            record.text, record.reward, record.value, record.next_value, parts
        )));
    }
    let scaled = tape.scale(total, scale);
    tape.backward(scaled, grads)?;
    Ok(parts)
}
