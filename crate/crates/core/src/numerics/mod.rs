//! Minimal reverse-mode automatic differentiation.

mod adam;
mod checkpoint;
mod gradcheck;
mod gru;
mod tape;
mod tensor;

use thiserror::Error;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointError,
    CHECKPOINT_VERSION,
};
pub use gradcheck::{check_gradients, relative_error, GradCheck, GradientError};
pub use gru::Gru;
pub use tape::{Shape, Tape, Var, MASK_LOGIT};
pub use tensor::{Gradients, Init, ParamId, ParameterSet, Tensor};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },
    #[error("tensors have one to three dimensions, got {0}")]
    Rank(usize),
    #[error("shape {shape:?} does not match storage of {len} values")]
    Storage { shape: Vec<usize>, len: usize },
    #[error("{op}: index {index} out of range for length {len}")]
    Index {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("{0} needs at least one input")]
    Empty(&'static str),
    #[error("{0}: mask leaves a row with no entries")]
    EmptyMask(&'static str),
    #[error("backward needs a scalar loss, got shape {0}")]
    NonScalarLoss(String),
    #[error("parameter `{0}` already exists")]
    DuplicateParameter(String),
}

/// Affine map with weights stored `[out, in]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(
        params: &mut ParameterSet,
        name: &str,
        input: usize,
        output: usize,
    ) -> Result<Self, NumericsError> {
        Ok(Linear {
            weight: params.add(&format!("{name}.weight"), &[output, input], Init::FanIn)?,
            bias: params.add(&format!("{name}.bias"), &[output], Init::Zeros)?,
            input,
            output,
        })
    }

    /// `x` is `m × input`; the result is `m × output`.
    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var, NumericsError> {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let y = tape.matmul_nt(x, w)?;
        tape.add_row(y, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let params = ParameterSet::new(0);
        let mut tape = Tape::new(&params);
        let x = tape.row_vector(&[0.3; 4]);
        let s = tape.softmax(x, None).unwrap();
        tape.value(s).iter().for_each(|&p| close(p, 0.25));
    }

    #[test]
    fn masked_softmax_zeroes_masked_entries() {
        let params = ParameterSet::new(0);
        let mut tape = Tape::new(&params);
        let x = tape.row_vector(&[1.0, 5.0, 1.0]);
        let s = tape.softmax(x, Some(&[true, false, true])).unwrap();
        assert_eq!(tape.value(s), &[0.5, 0.0, 0.5]);
        assert!(tape.softmax(x, Some(&[false; 3])).is_err());
    }

    #[test]
    fn leaky_relu_slope() {
        let params = ParameterSet::new(0);
        let mut tape = Tape::new(&params);
        let x = tape.row_vector(&[-1.0, 2.0]);
        let y = tape.leaky_relu(x, 0.2);
        assert_eq!(tape.value(y), &[-0.2, 2.0]);
    }

    #[test]
    fn gradient_of_weighted_sum_is_input() {
        let mut params = ParameterSet::new(0);
        let w = params.add("w", &[3], Init::Constant(0.5)).unwrap();
        let mut tape = Tape::new(&params);
        let wv = tape.param(w);
        let x = tape.row_vector(&[1.0, -2.0, 3.0]);
        let p = tape.mul(wv, x).unwrap();
        let loss = tape.sum(p);
        let mut grads = Gradients::zeros_like(&params);
        tape.backward(loss, &mut grads).unwrap();
        assert_eq!(grads.get(w), &[1.0, -2.0, 3.0]);
        tape.backward(loss, &mut grads).unwrap();
        assert_eq!(grads.get(w), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let params = ParameterSet::new(0);
        let mut tape = Tape::new(&params);
        let x = tape.row_vector(&[1.0, 2.0]);
        let mut grads = Gradients::zeros_like(&params);
        assert!(matches!(
            tape.backward(x, &mut grads),
            Err(NumericsError::NonScalarLoss(_))
        ));
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut params = ParameterSet::new(0);
        let w = params.add("w", &[1], Init::Constant(1.0)).unwrap();
        let mut adam = Adam::new(
            &params,
            AdamConfig {
                lr: 0.1,
                ..AdamConfig::default()
            },
        );
        for _ in 0..200 {
            let mut grads = Gradients::zeros_like(&params);
            grads.get_mut(w)[0] = 2.0 * params.get(w).data()[0];
            adam.step(&mut params, &grads);
        }
        assert!(params.get(w).data()[0].abs() < 1e-2);
        assert_eq!(adam.steps(), 200);
    }

    #[test]
    fn gru_with_zero_weights_halves_state() {
        let mut params = ParameterSet::new(0);
        let gru = Gru::new(&mut params, "g", 2, 3).unwrap();
        params.zero_all();
        let mut tape = Tape::new(&params);
        let x = tape.row_vector(&[1.0, -1.0]);
        let h = tape.row_vector(&[0.4, -0.8, 1.0]);
        let h1 = gru.cell(&mut tape, x, h).unwrap();
        let got = tape.value(h1).to_vec();
        for (g, e) in got.iter().zip([0.2, -0.4, 0.5]) {
            close(*g, e);
        }
        assert_eq!(gru.sequence(&mut tape, None, h).unwrap(), h);
    }

    #[test]
    fn linear_forward_shape() {
        let mut params = ParameterSet::new(7);
        let lin = Linear::new(&mut params, "l", 4, 2).unwrap();
        let mut tape = Tape::new(&params);
        let x = tape.zeros(3, 4);
        let y = lin.forward(&mut tape, x).unwrap();
        assert_eq!(tape.shape(y), Shape::new(3, 2));
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut params = ParameterSet::new(3);
        Gru::new(&mut params, "enc", 4, 5).unwrap();
        let bytes = write_checkpoint(&params);
        let back = read_checkpoint(&bytes).unwrap();
        assert_eq!(back, params);

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            read_checkpoint(&bad),
            Err(CheckpointError::Version { found: 9, .. })
        ));
        assert!(matches!(
            read_checkpoint(b"NOPE"),
            Err(CheckpointError::BadMagic)
        ));
        assert!(matches!(
            read_checkpoint(&bytes[..bytes.len() - 3]),
            Err(CheckpointError::Malformed(_))
        ));
    }

    #[test]
    fn load_checkpoint_checks_layout() {
        let dir = std::env::temp_dir().join(format!("kgck-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("a.ckpt");
        let mut a = ParameterSet::new(1);
        Linear::new(&mut a, "l", 3, 2).unwrap();
        save_checkpoint(&a, &path).unwrap();

        let mut b = ParameterSet::new(2);
        Linear::new(&mut b, "l", 3, 2).unwrap();
        load_checkpoint(&mut b, &path).unwrap();
        assert_eq!(
            a.iter().map(|(_, _, t)| t.clone()).collect::<Vec<_>>(),
            b.iter().map(|(_, _, t)| t.clone()).collect::<Vec<_>>()
        );

        let mut c = ParameterSet::new(2);
        Linear::new(&mut c, "l", 2, 3).unwrap();
        assert!(matches!(
            load_checkpoint(&mut c, &path),
            Err(CheckpointError::Mismatch(_))
        ));
        std::fs::remove_dir_all(&dir).ok();
    }
}
