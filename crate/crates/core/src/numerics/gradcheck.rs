//! Finite-difference gradient verification.
//!
//! Central differences evaluated through the forward pass only, so the
//! check is independent of the reverse-mode path it validates. Used by the
//! unit tests and the acceptance suite.

use crate::numerics::Tensor;

/// Central finite differences of `f` with respect to every entry of every
/// tensor in `xs`, with step `h`. `f` must be deterministic (reseed any
/// internal rng per call).
pub fn central_diff<F>(f: F, xs: &[Tensor], h: f64) -> Vec<Tensor>
where
    F: Fn(&[Tensor]) -> f64,
{
    let mut out = Vec::with_capacity(xs.len());
    let mut work: Vec<Tensor> = xs.to_vec();
    for ti in 0..xs.len() {
        let n = xs[ti].numel();
        let mut grad = vec![0.0; n];
        for k in 0..n {
            let orig = work[ti].data()[k];
            work[ti].data_mut()[k] = orig + h;
            let fp = f(&work);
            work[ti].data_mut()[k] = orig - h;
            let fm = f(&work);
            work[ti].data_mut()[k] = orig;
            grad[k] = (fp - fm) / (2.0 * h);
        }
        out.push(Tensor::new(xs[ti].shape().to_vec(), grad).expect("finite fd grad"));
    }
    out
}

/// Worst relative error between analytic and numeric gradients.
///
/// The denominator is floored at `floor` so near-zero entries compare
/// absolutely instead of dividing by noise.
pub fn max_rel_err(analytic: &Tensor, numeric: &Tensor, floor: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Worst relative error across a list of gradient tensors.
pub fn max_rel_err_all(analytic: &[Tensor], numeric: &[Tensor], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| max_rel_err(a, n, floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Tape, Tensor};
    use crate::rng;
    use rand::Rng;

    /// Every primitive op, checked against central differences on
    /// randomized inputs.
    #[test]
    fn primitives_match_finite_differences() {
        let mut rng = rng::stream(42, "gradcheck");
        type Builder = fn(&mut Tape, &[crate::numerics::Var]) -> crate::numerics::Var;

        // Each case: input shapes + a loss builder over those leaves.
        let cases: Vec<(Vec<Vec<usize>>, Builder)> = vec![
            (vec![vec![2, 3], vec![2, 3]], |t, v| {
                let y = t.add(v[0], v[1]).unwrap();
                t.sum(y).unwrap()
            }),
            (vec![vec![2, 3], vec![2, 3]], |t, v| {
                let y = t.sub(v[0], v[1]).unwrap();
                let sq = t.mul(y, y).unwrap();
                t.sum(sq).unwrap()
            }),
            (vec![vec![2, 3], vec![2, 3]], |t, v| {
                let y = t.mul(v[0], v[1]).unwrap();
                t.sum(y).unwrap()
            }),
            (vec![vec![3, 4], vec![4, 2]], |t, v| {
                let y = t.matmul(v[0], v[1]).unwrap();
                let sq = t.mul(y, y).unwrap();
                t.sum(sq).unwrap()
            }),
            (vec![vec![1, 4]], |t, v| {
                let y = t.broadcast_rows(v[0], 5).unwrap();
                let sq = t.mul(y, y).unwrap();
                t.sum(sq).unwrap()
            }),
            (vec![vec![2, 6]], |t, v| {
                let y = t.reshape(v[0], vec![3, 4]).unwrap();
                let z = t.tanh(y).unwrap();
                t.sum(z).unwrap()
            }),
            (vec![vec![3, 4]], |t, v| {
                let y = t.transpose(v[0]).unwrap();
                let z = t.sigmoid(y).unwrap();
                t.sum(z).unwrap()
            }),
            (vec![vec![4, 3]], |t, v| t.mean(v[0]).unwrap()),
            (vec![vec![5, 3]], |t, v| {
                let y = t.max_pool_rows(v[0]).unwrap();
                let sq = t.mul(y, y).unwrap();
                t.sum(sq).unwrap()
            }),
            (vec![vec![2, 5]], |t, v| {
                let y = t.relu(v[0]).unwrap();
                t.sum(y).unwrap()
            }),
            (vec![vec![2, 5]], |t, v| {
                let y = t.exp(v[0]).unwrap();
                t.sum(y).unwrap()
            }),
            (vec![vec![2, 5]], |t, v| {
                // keep log inputs positive via softplus
                let y = t.softplus(v[0]).unwrap();
                let z = t.log(y).unwrap();
                t.sum(z).unwrap()
            }),
            (vec![vec![4, 2]], |t, v| {
                let y = t.gather_rows(v[0], vec![3, 1, 1, 0]).unwrap();
                let sq = t.mul(y, y).unwrap();
                t.sum(sq).unwrap()
            }),
            (vec![vec![3, 2]], |t, v| {
                let y = t.scatter_rows(v[0], vec![4, 0, 4], 6).unwrap();
                let sq = t.mul(y, y).unwrap();
                t.sum(sq).unwrap()
            }),
            (vec![vec![3, 2], vec![3, 4]], |t, v| {
                let y = t.concat_cols(&[v[0], v[1]]).unwrap();
                let z = t.tanh(y).unwrap();
                let sq = t.mul(z, z).unwrap();
                t.sum(sq).unwrap()
            }),
        ];

        for (ci, (shapes, build)) in cases.iter().enumerate() {
            let xs: Vec<Tensor> = shapes
                .iter()
                .map(|s| {
                    // offset away from relu/max kinks so FD is well posed
                    let mut t = Tensor::randn(s.clone(), &mut rng);
                    for v in t.data_mut() {
                        if v.abs() < 0.05 {
                            *v += 0.1_f64.copysign(*v + 1e-12);
                        }
                    }
                    t.with_grad()
                })
                .collect();

            let eval = |inputs: &[Tensor]| -> f64 {
                let mut tape = Tape::new();
                let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t)).collect();
                let loss = build(&mut tape, &vars);
                tape.value(loss)[0]
            };

            let numeric = central_diff(eval, &xs, 1e-5);

            let mut tape = Tape::new();
            let vars: Vec<_> = xs.iter().map(|t| tape.leaf(t)).collect();
            let loss = build(&mut tape, &vars);
            let grads = tape.backward(loss).unwrap();
            let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();

            let err = max_rel_err_all(&analytic, &numeric, 1e-3);
            assert!(err < 1e-4, "primitive case {ci}: rel err {err}");
        }
    }

    /// Random 3-layer network gradient vs central finite differences.
    #[test]
    fn three_layer_network_matches_finite_differences() {
        let mut rng = rng::stream(7, "net-fd");
        let x = Tensor::randn(vec![4, 3], &mut rng);
        let dims = [(3, 8), (8, 8), (8, 2)];
        let mut params = Vec::new();
        for (i, o) in dims {
            params.push(Tensor::randn(vec![i, o], &mut rng).with_grad());
            params.push(Tensor::randn(vec![1, o], &mut rng).with_grad());
        }

        let eval = |ps: &[Tensor]| -> f64 {
            let mut tape = Tape::new();
            let mut h = tape.leaf(&x);
            for l in 0..3 {
                let w = tape.leaf(&ps[2 * l]);
                let b = tape.leaf(&ps[2 * l + 1]);
                h = tape.linear(h, w, b).unwrap();
                if l < 2 {
                    h = tape.tanh(h).unwrap();
                }
            }
            let sq = tape.mul(h, h).unwrap();
            let loss = tape.mean(sq).unwrap();
            tape.value(loss)[0]
        };

        let numeric = central_diff(eval, &params, 1e-5);

        let mut tape = Tape::new();
        let mut h = tape.leaf(&x);
        let mut vars = Vec::new();
        for l in 0..3 {
            let w = tape.leaf(&params[2 * l]);
            let b = tape.leaf(&params[2 * l + 1]);
            vars.push(w);
            vars.push(b);
            h = tape.linear(h, w, b).unwrap();
            if l < 2 {
                h = tape.tanh(h).unwrap();
            }
        }
        let sq = tape.mul(h, h).unwrap();
        let loss = tape.mean(sq).unwrap();
        let grads = tape.backward(loss).unwrap();
        let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();

        let err = max_rel_err_all(&analytic, &numeric, 1e-3);
        assert!(err < 1e-4, "network rel err {err}");
    }

    #[test]
    fn randomized_composite_graphs_match_fd() {
        // A light property check: random small graphs of safe primitives.
        let mut rng = rng::stream(99, "composite");
        for _ in 0..10 {
            let x = Tensor::randn(vec![3, 3], &mut rng).with_grad();
            let y = Tensor::randn(vec![3, 3], &mut rng).with_grad();
            let pick: u8 = rng.gen_range(0..4);
            let xs = [x, y];
            let eval = |ts: &[Tensor]| -> f64 {
                let mut tape = Tape::new();
                let a = tape.leaf(&ts[0]);
                let b = tape.leaf(&ts[1]);
                let z = match pick {
                    0 => {
                        let m = tape.matmul(a, b).unwrap();
                        tape.tanh(m).unwrap()
                    }
                    1 => {
                        let s = tape.sub(a, b).unwrap();
                        tape.softplus(s).unwrap()
                    }
                    2 => {
                        let m = tape.mul(a, b).unwrap();
                        tape.sigmoid(m).unwrap()
                    }
                    _ => {
                        let c = tape.concat_cols(&[a, b]).unwrap();
                        let p = tape.max_pool_rows(c).unwrap();
                        tape.mul(p, p).unwrap()
                    }
                };
                let l = tape.mean(z).unwrap();
                tape.value(l)[0]
            };
            let numeric = central_diff(eval, &xs, 1e-5);

            let mut tape = Tape::new();
            let a = tape.leaf(&xs[0]);
            let b = tape.leaf(&xs[1]);
            let z = match pick {
                0 => {
                    let m = tape.matmul(a, b).unwrap();
                    tape.tanh(m).unwrap()
                }
                1 => {
                    let s = tape.sub(a, b).unwrap();
                    tape.softplus(s).unwrap()
                }
                2 => {
                    let m = tape.mul(a, b).unwrap();
                    tape.sigmoid(m).unwrap()
                }
                _ => {
                    let c = tape.concat_cols(&[a, b]).unwrap();
                    let p = tape.max_pool_rows(c).unwrap();
                    tape.mul(p, p).unwrap()
                }
            };
            let l = tape.mean(z).unwrap();
            let grads = tape.backward(l).unwrap();
            let analytic = [grads.wrt(a), grads.wrt(b)];
            let err = max_rel_err_all(&analytic, &numeric, 1e-3);
            assert!(err < 1e-4, "composite {pick}: rel err {err}");
        }
    }
}
