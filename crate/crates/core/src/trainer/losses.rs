use crate::numerics::{NumericsError, Tape, Var};

/// `r + γ·V(s')·(1 − done) − V(s)`.
pub fn advantage(reward: f64, value: f64, next_value: f64, done: bool, gamma: f64) -> f64 {
    q_target(reward, next_value, done, gamma) - value
}

/// One-step bootstrapped return.
pub fn q_target(reward: f64, next_value: f64, done: bool, gamma: f64) -> f64 {
    reward + if done { 0.0 } else { gamma * next_value }
}

/// Multi-label binary cross-entropy, averaged over templates.
pub fn template_loss(
    tape: &mut Tape<'_>,
    logits: Var,
    targets: &[f64],
) -> Result<Var, NumericsError> {
    tape.bce_with_logits(logits, targets)
}

/// Per-slot binary cross-entropy against the valid-object targets,
/// averaged over words and summed over slots. Zero without slots.
pub fn object_loss(
    tape: &mut Tape<'_>,
    slot_logits: &[Var],
    targets: &[f64],
) -> Result<Var, NumericsError> {
    let mut total = tape.zeros(1, 1);
    for &logits in slot_logits {
        let l = tape.bce_with_logits(logits, targets)?;
        total = tape.add(total, l)?;
    }
    Ok(total)
}

/// `−(Σ log π)·A` with `A` held constant.
pub fn actor_loss(
    tape: &mut Tape<'_>,
    log_probs: &[(Var, usize)],
    advantage: f64,
) -> Result<Var, NumericsError> {
    let mut total = tape.zeros(1, 1);
    for &(lp, choice) in log_probs {
        let p = tape.pick(lp, choice)?;
        total = tape.add(total, p)?;
    }
    Ok(tape.scale(total, -advantage))
}

/// `½(Q − V)²` with `Q` held constant.
pub fn critic_loss(tape: &mut Tape<'_>, value: Var, target: f64) -> Result<Var, NumericsError> {
    let q = tape.constant(1, 1, vec![target])?;
    let d = tape.sub(q, value)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.scale(sq, 0.5))
}

/// `Σ p log p` of `softmax(logits)`, summed over the entries in `support`
/// without renormalizing.
pub fn entropy_term(
    tape: &mut Tape<'_>,
    logits: Var,
    support: Option<&[bool]>,
) -> Result<Var, NumericsError> {
    let p = tape.softmax(logits, None)?;
    let lp = tape.log_softmax(logits, None)?;
    let plp = tape.mul(p, lp)?;
    let Some(support) = support else {
        return Ok(tape.sum(plp));
    };
    let shape = tape.shape(plp);
    if support.len() != shape.len() {
        return Err(NumericsError::Shape {
            op: "entropy_term",
            left: shape.to_string(),
            right: format!("[1, {}]", support.len()),
        });
    }
    let keep = tape.constant(
        shape.rows,
        shape.cols,
        support.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
    )?;
    let kept = tape.mul(plp, keep)?;
    Ok(tape.sum(kept))
}

/// `Σ p log p` of the distribution renormalized over `mask`.
pub fn masked_entropy_term(
    tape: &mut Tape<'_>,
    logits: Var,
    mask: &[bool],
) -> Result<Var, NumericsError> {
    let p = tape.softmax(logits, Some(mask))?;
    let lp = tape.log_softmax(logits, Some(mask))?;
    let plp = tape.mul(p, lp)?;
    Ok(tape.sum(plp))
}
