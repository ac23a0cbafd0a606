//! Finite-difference gradient checking with a fourth-order central stencil.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Gradients, NumericsError, ParamId, ParameterSet, Tape, Var};

/// Worst disagreement found by [`check_gradients`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientError {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative: f64,
}

/// Options for [`check_gradients`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// Largest step; each entry is also probed at steps a factor of ten
    /// smaller, `decades` steps in all, keeping the closest estimate.
    pub eps: f64,
    pub decades: u32,
    /// Denominator floor for the relative error.
    pub floor: f64,
    /// Entries probed per tensor; all entries when `None`.
    pub per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            eps: 1e-4,
            decades: 2,
            floor: 1e-6,
            per_tensor: None,
            seed: 0,
        }
    }
}

pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares tape gradients of the scalar `f` against central differences
/// and returns the entry with the largest relative error.
pub fn check_gradients<F>(
    params: &mut ParameterSet,
    opts: GradCheck,
    f: F,
) -> Result<GradientError, NumericsError>
where
    F: Fn(&mut Tape<'_>) -> Result<Var, NumericsError>,
{
    let mut grads = Gradients::zeros_like(params);
    {
        let mut tape = Tape::new(params);
        let loss = f(&mut tape)?;
        tape.backward(loss, &mut grads)?;
    }
    let eval = |p: &ParameterSet| -> Result<f64, NumericsError> {
        let mut tape = Tape::new(p);
        let loss = f(&mut tape)?;
        Ok(tape.scalar(loss))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst = GradientError {
        param: String::new(),
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
        relative: 0.0,
    };
    let ids: Vec<ParamId> = params.ids().collect();
    for id in ids {
        let len = params.get(id).len();
        let entries: Vec<usize> = match opts.per_tensor {
            Some(k) if k < len => sample(&mut rng, len, k).into_vec(),
            _ => (0..len).collect(),
        };
        for i in entries {
            let orig = params.get(id).data()[i];
            let analytic = grads.get(id)[i];
            let mut best: Option<(f64, f64)> = None;
            for d in 0..opts.decades.max(1) {
                let h = opts.eps / 10f64.powi(d as i32);
                let mut values = [0.0; 4];
                for (slot, offset) in values.iter_mut().zip([2.0 * h, h, -h, -2.0 * h]) {
                    params.get_mut(id).data_mut()[i] = orig + offset;
                    *slot = eval(params)?;
                }
                let [f2, f1, b1, b2] = values;
                let numeric = (8.0 * (f1 - b1) - (f2 - b2)) / (12.0 * h);
                let relative = relative_error(analytic, numeric, opts.floor);
                if best.is_none_or(|(r, _)| relative < r) {
                    best = Some((relative, numeric));
                }
            }
            params.get_mut(id).data_mut()[i] = orig;
            let (relative, numeric) = best.expect("at least one step size");
            if relative >= worst.relative {
                worst = GradientError {
                    param: params.name(id).to_string(),
                    index: i,
                    analytic,
                    numeric,
                    relative,
                };
            }
        }
    }
    Ok(worst)
}
