use super::{argmax, AgentError};
use crate::numerics::{Linear, ParameterSet, Tape, Var};

/// Three linear Q heads over templates and the two object slots.
#[derive(Debug, Clone, Copy)]
pub struct TdqnHeads {
    template: Linear,
    first: Linear,
    second: Linear,
}

#[derive(Debug, Clone, Copy)]
pub struct TdqnValues {
    pub template: Var,
    pub first: Var,
    pub second: Var,
}

impl TdqnHeads {
    pub fn new(
        params: &mut ParameterSet,
        state_dim: usize,
        templates: usize,
        vocabulary: usize,
    ) -> Result<Self, AgentError> {
        Ok(TdqnHeads {
            template: Linear::new(params, "tdqn.template", state_dim, templates)?,
            first: Linear::new(params, "tdqn.first", state_dim, vocabulary)?,
            second: Linear::new(params, "tdqn.second", state_dim, vocabulary)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape<'_>, state: Var) -> Result<TdqnValues, AgentError> {
        Ok(TdqnValues {
            template: self.template.forward(tape, state)?,
            first: self.first.forward(tape, state)?,
            second: self.second.forward(tape, state)?,
        })
    }
}

/// Highest-valued template and objects; ties go to the lowest index.
/// Only as many objects as the template has blanks are returned.
pub fn greedy_action(
    template_q: &[f64],
    first_q: &[f64],
    second_q: &[f64],
    blanks: &[usize],
) -> (usize, Vec<usize>) {
    let t = argmax(template_q);
    let objects = [argmax(first_q), argmax(second_q)];
    (t, objects[..blanks[t].min(2)].to_vec())
}
