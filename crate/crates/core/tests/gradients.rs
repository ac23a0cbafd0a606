//! Finite-difference checks of every differentiable tape operation.

use kga2c::numerics::{
    check_gradients, GradCheck, Gru, Init, Linear, NumericsError, ParamId, ParameterSet, Tape, Var,
};

const SEEDS: u64 = 100;
const TOL: f64 = 1e-4;

/// Compares analytic and central-difference gradients for every entry, once per seed.
fn check<B, F>(name: &str, build: B, f: F)
where
    B: Fn(u64) -> ParameterSet,
    F: Fn(&mut Tape<'_>) -> Result<Var, NumericsError>,
{
    for seed in 0..SEEDS {
        let mut params = build(seed);
        let worst = check_gradients(&mut params, GradCheck::default(), &f).unwrap();
        assert!(worst.relative < TOL, "{name} seed {seed}: {worst:?}");
    }
}

fn params_with(shapes: &[(&str, &[usize])], seed: u64) -> (ParameterSet, Vec<ParamId>) {
    let mut p = ParameterSet::new(seed);
    let ids = shapes
        .iter()
        .map(|(n, s)| p.add(n, s, Init::FanIn).unwrap())
        .collect();
    (p, ids)
}

fn weighted_sum(tape: &mut Tape<'_>, v: Var) -> Result<Var, NumericsError> {
    let s = tape.shape(v);
    let w: Vec<f64> = (0..s.len())
        .map(|i| 0.3 + 0.17 * i as f64 - 0.05 * (i * i % 7) as f64)
        .collect();
    let c = tape.constant(s.rows, s.cols, w)?;
    let m = tape.mul(v, c)?;
    Ok(tape.sum(m))
}

#[test]
fn elementwise_ops() {
    let shapes: &[(&str, &[usize])] = &[("a", &[2, 3]), ("b", &[2, 3])];
    let ids = params_with(shapes, 0).1;
    let (a, b) = (ids[0], ids[1]);
    check(
        "add/sub/mul",
        |seed| params_with(shapes, seed).0,
        |t| {
            let (x, y) = (t.param(a), t.param(b));
            let s = t.add(x, y)?;
            let d = t.sub(s, y)?;
            let m = t.mul(d, y)?;
            let m = t.scale(m, 1.7);
            weighted_sum(t, m)
        },
    );
}

#[test]
fn activations() {
    let shapes: &[(&str, &[usize])] = &[("a", &[3, 4])];
    let ids = params_with(shapes, 0).1;
    let a = ids[0];
    check(
        "sigmoid/tanh/exp/leaky",
        |seed| params_with(shapes, seed).0,
        |t| {
            let x = t.param(a);
            let s = t.sigmoid(x);
            let h = t.tanh(x);
            let e = t.exp(x);
            let l = t.leaky_relu(x, 0.2);
            let sh = t.mul(s, h)?;
            let el = t.add(e, l)?;
            let y = t.add(sh, el)?;
            weighted_sum(t, y)
        },
    );
}

#[test]
fn matrix_products_and_broadcasts() {
    let shapes: &[(&str, &[usize])] = &[
        ("a", &[2, 3]),
        ("b", &[3, 4]),
        ("c", &[5, 3]),
        ("r", &[4]),
        ("u", &[1, 2]),
        ("v", &[1, 4]),
    ];
    let ids = params_with(shapes, 0).1;
    check(
        "matmul/matmul_nt/add_row/outer_add",
        |seed| params_with(shapes, seed).0,
        |t| {
            let (a, b, c, r) = (
                t.param(ids[0]),
                t.param(ids[1]),
                t.param(ids[2]),
                t.param(ids[3]),
            );
            let ab = t.matmul(a, b)?;
            let ab = t.add_row(ab, r)?;
            let ac = t.matmul_nt(a, c)?;
            let (u, v) = (t.param(ids[4]), t.param(ids[5]));
            let uu = t.matmul_nt(u, u)?;
            let ut = t.scale(uu, 0.5);
            let col = t.slice_cols(a, 1, 1)?;
            let o = t.outer_add(col, v)?;
            let parts = [
                weighted_sum(t, ab)?,
                weighted_sum(t, ac)?,
                weighted_sum(t, o)?,
                t.sum(ut),
            ];
            let mut acc = parts[0];
            for &x in &parts[1..] {
                acc = t.add(acc, x)?;
            }
            Ok(acc)
        },
    );
}

#[test]
fn softmax_family() {
    let shapes: &[(&str, &[usize])] = &[("a", &[3, 4])];
    let ids = params_with(shapes, 0).1;
    let a = ids[0];
    let mask = [
        true, false, true, true, true, true, false, true, false, true, true, true,
    ];
    check(
        "softmax/log_softmax",
        |seed| params_with(shapes, seed).0,
        |t| {
            let x = t.param(a);
            let s = t.softmax(x, Some(&mask))?;
            let ls = t.log_softmax(x, Some(&mask))?;
            let row_masked = t.log_softmax(x, Some(&mask[..4]))?;
            let row_probs = t.softmax(x, Some(&mask[..4]))?;
            let row_term = t.mul(row_masked, row_probs)?;
            let plain = t.log_softmax(x, None)?;
            let a = weighted_sum(t, s)?;
            let m = t.mul(ls, s)?;
            let b = weighted_sum(t, m)?;
            let c = weighted_sum(t, plain)?;
            let d = weighted_sum(t, row_term)?;
            let ab = t.add(a, b)?;
            let cd = t.add(c, d)?;
            t.add(ab, cd)
        },
    );
}

#[test]
fn shaping_ops() {
    let shapes: &[(&str, &[usize])] = &[("e", &[6, 3]), ("a", &[2, 3]), ("b", &[2, 2])];
    let ids = params_with(shapes, 0).1;
    check(
        "gather/concat/slice/stack/row/mean_rows",
        |seed| params_with(shapes, seed).0,
        |t| {
            let (e, a, b) = (t.param(ids[0]), t.param(ids[1]), t.param(ids[2]));
            let g = t.gather_rows(e, &[4, 1, 4])?;
            let c = t.concat_cols(&[a, b])?;
            let s = t.slice_cols(c, 1, 3)?;
            let r0 = t.row(s, 1)?;
            let st = t.stack_rows(&[r0, r0])?;
            let st = t.concat_cols(&[st, st])?;
            let mr = t.mean_rows(g);
            let x = weighted_sum(t, st)?;
            let y = weighted_sum(t, mr)?;
            let z = t.mean(g);
            let xy = t.add(x, y)?;
            t.add(xy, z)
        },
    );
}

#[test]
fn reductions_and_losses() {
    let shapes: &[(&str, &[usize])] = &[("a", &[1, 5]), ("b", &[1, 5])];
    let ids = params_with(shapes, 0).1;
    check(
        "dot/pick/cross_entropy/bce",
        |seed| params_with(shapes, seed).0,
        |t| {
            let (a, b) = (t.param(ids[0]), t.param(ids[1]));
            let d = t.dot(a, b)?;
            let pk = t.pick(a, 3)?;
            let ce = t.cross_entropy_with_logits(b, 2, Some(&[true, true, true, false, true]))?;
            let bce = t.bce_with_logits(a, &[1.0, 0.0, 1.0, 0.0, 0.5])?;
            let x = t.add(d, pk)?;
            let y = t.add(ce, bce)?;
            t.add(x, y)
        },
    );
}

#[test]
fn gru_sequence_and_linear() {
    let build = |seed| {
        let mut p = ParameterSet::new(seed);
        let gru = Gru::new(&mut p, "gru", 3, 4).unwrap();
        let lin = Linear::new(&mut p, "out", 4, 2).unwrap();
        let emb = p.add("emb", &[5, 3], Init::FanIn).unwrap();
        for id in p.ids().collect::<Vec<_>>() {
            for (i, v) in p.get_mut(id).data_mut().iter_mut().enumerate() {
                *v += 0.01 * ((i % 5) as f64 - 2.0);
            }
        }
        (p, gru, lin, emb)
    };
    let (_, gru, lin, emb) = build(0);
    check(
        "gru+linear",
        |seed| build(seed).0,
        move |t| {
            let e = t.param(emb);
            let xs = t.gather_rows(e, &[0, 3, 2, 3])?;
            let h0 = t.row_vector(&[0.1, -0.2, 0.3, 0.0]);
            let h = gru.sequence(t, Some(xs), h0)?;
            let y = lin.forward(t, h)?;
            let y = t.tanh(y);
            weighted_sum(t, y)
        },
    );
}

#[test]
fn graph_attention_pattern() {
    let shapes: &[(&str, &[usize])] = &[("z", &[4, 3]), ("p1", &[1, 3]), ("p2", &[1, 3])];
    let ids = params_with(shapes, 0).1;
    let adj = [
        true, true, false, false, //
        true, true, true, false, //
        false, true, true, true, //
        false, false, true, true,
    ];
    check(
        "attention",
        |seed| params_with(shapes, seed).0,
        move |t| {
            let (z, p1, p2) = (t.param(ids[0]), t.param(ids[1]), t.param(ids[2]));
            let s = t.matmul_nt(z, p1)?;
            let d = t.matmul_nt(p2, z)?;
            let e = t.outer_add(s, d)?;
            let e = t.leaky_relu(e, 0.2);
            let a = t.softmax(e, Some(&adj))?;
            let h = t.matmul(a, z)?;
            let h = t.sigmoid(h);
            let pooled = t.mean_rows(h);
            weighted_sum(t, pooled)
        },
    );
}
