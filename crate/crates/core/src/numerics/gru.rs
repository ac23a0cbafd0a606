//! Gated recurrent unit.

use super::tape::{Tape, Var};
use super::tensor::{Init, ParamId, ParameterSet};
use super::NumericsError;

/// GRU with gates ordered reset, update, candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Gru {
    w_ih: ParamId,
    w_hh: ParamId,
    b_ih: ParamId,
    b_hh: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Gru {
    pub fn new(
        params: &mut ParameterSet,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Result<Self, NumericsError> {
        Ok(Gru {
            w_ih: params.add(&format!("{name}.w_ih"), &[3 * hidden, input], Init::FanIn)?,
            w_hh: params.add(&format!("{name}.w_hh"), &[3 * hidden, hidden], Init::FanIn)?,
            b_ih: params.add(&format!("{name}.b_ih"), &[3 * hidden], Init::Zeros)?,
            b_hh: params.add(&format!("{name}.b_hh"), &[3 * hidden], Init::Zeros)?,
            input,
            hidden,
        })
    }

    /// Input projections `x W_ihᵀ + b_ih` for every row of `xs`.
    pub fn project_inputs(&self, tape: &mut Tape<'_>, xs: Var) -> Result<Var, NumericsError> {
        let w = tape.param(self.w_ih);
        let b = tape.param(self.b_ih);
        let gi = tape.matmul_nt(xs, w)?;
        tape.add_row(gi, b)
    }

    /// One step from a precomputed input projection (1 × 3H).
    pub fn step_projected(
        &self,
        tape: &mut Tape<'_>,
        gi: Var,
        h: Var,
    ) -> Result<Var, NumericsError> {
        let hs = self.hidden;
        let w = tape.param(self.w_hh);
        let b = tape.param(self.b_hh);
        let gh = tape.matmul_nt(h, w)?;
        let gh = tape.add_row(gh, b)?;

        let (ir, iz, in_) = (
            tape.slice_cols(gi, 0, hs)?,
            tape.slice_cols(gi, hs, hs)?,
            tape.slice_cols(gi, 2 * hs, hs)?,
        );
        let (hr, hz, hn) = (
            tape.slice_cols(gh, 0, hs)?,
            tape.slice_cols(gh, hs, hs)?,
            tape.slice_cols(gh, 2 * hs, hs)?,
        );
        let r = tape.add(ir, hr)?;
        let r = tape.sigmoid(r);
        let z = tape.add(iz, hz)?;
        let z = tape.sigmoid(z);
        let rn = tape.mul(r, hn)?;
        let n = tape.add(in_, rn)?;
        let n = tape.tanh(n);
        // h' = (1 - z) h + z n = h + z (n - h)
        let diff = tape.sub(n, h)?;
        let zd = tape.mul(z, diff)?;
        tape.add(h, zd)
    }

    /// One step: `x` is 1 × input, `h` is 1 × hidden.
    pub fn cell(&self, tape: &mut Tape<'_>, x: Var, h: Var) -> Result<Var, NumericsError> {
        let gi = self.project_inputs(tape, x)?;
        self.step_projected(tape, gi, h)
    }

    /// Runs over the rows of `xs` (T × input) from `h0`. With `None` or no
    /// rows the initial state is returned unchanged.
    pub fn sequence(
        &self,
        tape: &mut Tape<'_>,
        xs: Option<Var>,
        h0: Var,
    ) -> Result<Var, NumericsError> {
        let Some(xs) = xs else {
            return Ok(h0);
        };
        let steps = tape.shape(xs).rows;
        if steps == 0 {
            return Ok(h0);
        }
        let gi = self.project_inputs(tape, xs)?;
        let mut h = h0;
        for t in 0..steps {
            let row = tape.row(gi, t)?;
            h = self.step_projected(tape, row, h)?;
        }
        Ok(h)
    }
}
