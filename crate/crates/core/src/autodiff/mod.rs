//! Minimal reverse-mode automatic differentiation with Adam and a cosine
//! learning-rate schedule.

mod optim;
mod params;
mod tape;
mod tensor;

pub use optim::{Adam, CosineSchedule};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var, BCE_CLAMP};
pub use tensor::{DType, Scalar, Tensor};

use crate::error::Result;

/// Outcome of comparing analytic gradients with finite differences.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Largest elementwise `|a - n| / max(|a|, |n|, floor)`.
    pub max_rel_err: f64,
    /// Input index and element of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Compares the gradient of a scalar function of several f64 inputs with
/// fourth-order central differences (step `h`).
///
/// `floor` keeps the ratio meaningful where both gradients vanish.
pub fn check_gradients(
    inputs: &[Tensor<f64>],
    h: f64,
    floor: f64,
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> Result<GradCheck> {
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.gradients(out)?;

    let mut result = GradCheck {
        max_rel_err: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut work = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).map(|g| g.data().to_vec()).unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        for j in 0..inputs[i].numel() {
            let x0 = inputs[i].data()[j];
            let mut at = |dx: f64| -> Result<f64> {
                work[i].data_mut()[j] = x0 + dx;
                eval(&work)
            };
            let (p1, m1, p2, m2) = (at(h)?, at(-h)?, at(2.0 * h)?, at(-2.0 * h)?);
            work[i].data_mut()[j] = x0;
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
            let a = analytic[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            result.checked += 1;
            if err > result.max_rel_err {
                result.max_rel_err = err;
                result.worst = (i, j);
            }
        }
    }
    Ok(result)
}

/// Like [`check_gradients`] for the parameters of a store.
///
/// At most `per_param` entries of each parameter are probed, spread evenly
/// over the tensor. `worst` reports the parameter index and element.
pub fn check_param_gradients(
    store: &mut ParamStore<f64>,
    h: f64,
    floor: f64,
    per_param: usize,
    f: impl Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
) -> Result<GradCheck> {
    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let out = f(&mut tape, store)?;
        Ok(tape.value(out).item())
    };
    store.zero_grad();
    {
        let mut tape = Tape::new();
        let out = f(&mut tape, store)?;
        tape.backward(out, store)?;
    }
    let mut result = GradCheck {
        max_rel_err: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let ids: Vec<ParamId> = store.ids().collect();
    for (i, &id) in ids.iter().enumerate() {
        let numel = store.value(id).numel();
        let stride = numel.div_ceil(per_param.max(1)).max(1);
        for j in (0..numel).step_by(stride) {
            let x0 = store.value(id).data()[j];
            let mut at = |dx: f64| -> Result<f64> {
                store.value_mut(id).data_mut()[j] = x0 + dx;
                eval(store)
            };
            let (p1, m1, p2, m2) = (at(h)?, at(-h)?, at(2.0 * h)?, at(-2.0 * h)?);
            store.value_mut(id).data_mut()[j] = x0;
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
            let a = store.grad(id).data()[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            result.checked += 1;
            if err > result.max_rel_err {
                result.max_rel_err = err;
                result.worst = (i, j);
            }
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::MASKED_SCORE;
    use crate::gf2::BitMatrix;
    use crate::noise::StreamRng;
    use rand::Rng;

    const TOL: f64 = 1e-6;
    const H: f64 = 1e-3;
    const FLOOR: f64 = 1e-6;

    fn rand_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut StreamRng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
    }

    /// Reduces any tensor to a scalar through fixed random weights so every
    /// output element contributes a distinct gradient.
    fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
        let shape = tape.shape(y).to_vec();
        let mut rng = StreamRng::from_seed(seed);
        let w = rand_tensor(&shape, -1.0, 1.0, &mut rng);
        let w = tape.constant(w);
        let p = tape.mul(y, w)?;
        Ok(tape.sum(p))
    }

    fn check(inputs: &[Tensor<f64>], f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>) {
        let r = check_gradients(inputs, H, FLOOR, f).unwrap();
        assert!(r.max_rel_err <= TOL, "{r:?}");
    }

    #[test]
    fn elementwise_ops() {
        let mut rng = StreamRng::from_seed(1);
        let a = rand_tensor(&[3, 4], -2.0, 2.0, &mut rng);
        let b = rand_tensor(&[3, 4], -2.0, 2.0, &mut rng);
        check(&[a.clone(), b.clone()], |t, v| {
            let y = t.add(v[0], v[1])?;
            project(t, y, 1)
        });
        check(&[a.clone(), b], |t, v| {
            let y = t.mul(v[0], v[1])?;
            project(t, y, 2)
        });
        check(&[a.clone()], |t, v| {
            let y = t.affine(v[0], -1.5, 0.25);
            project(t, y, 3)
        });
        check(&[a.clone()], |t, v| {
            let y = t.sigmoid(v[0]);
            project(t, y, 4)
        });
        check(&[a.clone()], |t, v| {
            let y = t.gelu(v[0]);
            project(t, y, 5)
        });
        check(&[a], |t, v| {
            let s = t.sum(v[0]);
            let m = t.mean(v[0]);
            t.weighted_sum(&[(0.3, s), (2.0, m)])
        });
    }

    #[test]
    fn linear_and_layer_norm() {
        let mut rng = StreamRng::from_seed(2);
        let x = rand_tensor(&[2, 3, 4], -1.0, 1.0, &mut rng);
        let w = rand_tensor(&[4, 5], -1.0, 1.0, &mut rng);
        let b = rand_tensor(&[5], -1.0, 1.0, &mut rng);
        check(&[x.clone(), w.clone(), b], |t, v| {
            let y = t.linear(v[0], v[1], Some(v[2]))?;
            project(t, y, 6)
        });
        check(&[x.clone(), w], |t, v| {
            let y = t.linear(v[0], v[1], None)?;
            project(t, y, 7)
        });
        let g = rand_tensor(&[4], 0.5, 1.5, &mut rng);
        let beta = rand_tensor(&[4], -0.5, 0.5, &mut rng);
        check(&[x, g, beta], |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2])?;
            project(t, y, 8)
        });
    }

    #[test]
    fn attention_building_blocks() {
        let mut rng = StreamRng::from_seed(3);
        let a = rand_tensor(&[2, 3, 4], -1.0, 1.0, &mut rng);
        let b = rand_tensor(&[2, 4, 5], -1.0, 1.0, &mut rng);
        let c = rand_tensor(&[2, 5, 4], -1.0, 1.0, &mut rng);
        check(&[a.clone(), b], |t, v| {
            let y = t.bmm(v[0], v[1], 0.7)?;
            project(t, y, 9)
        });
        check(&[a.clone(), c], |t, v| {
            let y = t.bmm_nt(v[0], v[1], 0.5)?;
            project(t, y, 10)
        });
        let mask: Vec<f64> = (0..12).map(|i| if i % 5 == 1 { MASKED_SCORE } else { 0.0 }).collect();
        check(&[a.clone()], |t, v| {
            let y = t.masked_softmax(v[0], Some(&mask))?;
            project(t, y, 11)
        });
        check(&[a.clone()], |t, v| {
            let y = t.permute(v[0], &[1, 2, 0])?;
            let y = t.reshape(y, &[12, 2])?;
            project(t, y, 12)
        });
        for axis in 0..3 {
            check(&[a.clone()], |t, v| {
                let y = t.mean_axis(v[0], axis)?;
                project(t, y, 13)
            });
        }
        let h = rand_tensor(&[3, 4], -1.0, 1.0, &mut rng);
        let w = rand_tensor(&[4, 2], -1.0, 1.0, &mut rng);
        check(&[h, w], |t, v| {
            let y = t.embed_scale(v[0], v[1])?;
            project(t, y, 14)
        });
        let b2 = rand_tensor(&[2, 3, 2], -1.0, 1.0, &mut rng);
        check(&[a, b2], |t, v| {
            let y = t.concat_last(v[0], v[1])?;
            project(t, y, 15)
        });
    }

    #[test]
    fn products_and_losses() {
        let mut rng = StreamRng::from_seed(4);
        let x = rand_tensor(&[3, 5], 0.2, 1.8, &mut rng);
        check(&[x], |t, v| {
            let y = t.prod_last(v[0])?;
            project(t, y, 16)
        });
        let p = rand_tensor(&[2, 6], 0.1, 0.9, &mut rng);
        let l = BitMatrix::from_dense(&[vec![1, 0, 1, 1, 0, 0], vec![0, 1, 1, 0, 0, 1], vec![0, 0, 0, 0, 0, 0]]);
        check(&[p.clone()], |t, v| {
            let f = t.bipolar_factors(v[0], &l)?;
            let y = t.prod_last(f)?;
            project(t, y, 17)
        });
        let z = rand_tensor(&[2, 6], -3.0, 3.0, &mut rng);
        let targets: Vec<f64> = (0..12).map(|i| (i % 3 == 0) as u8 as f64).collect();
        check(&[z], |t, v| t.bce_with_logits(v[0], &targets));
        check(&[p], |t, v| t.bce_prob(v[0], &targets));
    }

    #[test]
    fn product_gradient_with_zero_factors() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64(&[3, 3], &[0.0, 2.0, 3.0, 0.0, 0.0, 5.0, 1.0, 2.0, 4.0]).unwrap());
        let y = tape.prod_last(x).unwrap();
        let loss = tape.sum(y);
        let g = tape.gradients(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0, 0.0, 0.0, 0.0, 0.0, 0.0, 8.0, 4.0, 2.0]);
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(&[2], &[0.0, 0.0]).unwrap());
        let y = tape.masked_softmax(x, None).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);

        let x = tape.constant(Tensor::from_f64(&[1, 4], &[3.0, -1.0, 0.5, 2.0]).unwrap());
        let mask = [MASKED_SCORE, MASKED_SCORE, 0.0, MASKED_SCORE];
        let y = tape.masked_softmax(x, Some(&mask)).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 1.0, 0.0]);

        let mut rng = StreamRng::from_seed(5);
        let x = tape.constant(rand_tensor(&[4, 3, 6], -5.0, 5.0, &mut rng));
        let mask: Vec<f32> = (0..18).map(|i| if i % 4 == 0 { 0.0 } else { -1e9 }).collect();
        let mut t32 = Tape::<f32>::new();
        let x32 = t32.constant(tape.value(x).cast());
        let y = t32.masked_softmax(x32, Some(&mask)).unwrap();
        for (r, row) in t32.value(y).data().chunks(6).enumerate() {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
            for (j, &p) in row.iter().enumerate() {
                if mask[(r % 3) * 6 + j] != 0.0 {
                    assert_eq!(p, 0.0);
                }
            }
        }
    }

    #[test]
    fn backward_examples() {
        let mut tape = Tape::<f64>::new();
        let w = tape.leaf(Tensor::from_f64(&[3], &[0.3, -1.0, 2.0]).unwrap());
        let loss = tape.sum(w);
        assert_eq!(tape.gradients(loss).unwrap().get(w).unwrap().data(), &[1.0, 1.0, 1.0]);

        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap()).unwrap();
        let mut tape = Tape::new();
        let w = tape.param(&store, id);
        let sq = tape.mul(w, w).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(id).data(), &[2.0, 4.0]);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(id).data(), &[4.0, 8.0]);
        store.zero_grad();
        assert_eq!(store.grad(id).data(), &[0.0, 0.0]);
    }

    #[test]
    fn errors() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::zeros(&[3, 2]));
        assert!(tape.add(a, b).is_err());
        assert!(tape.linear(a, a, None).is_err());
        assert!(tape.gradients(a).is_err());
        let nan = tape.leaf(Tensor::scalar(f64::NAN));
        assert!(matches!(tape.gradients(nan), Err(crate::Error::NumericFailure(_))));
    }

    #[test]
    fn ste_passes_gradients_straight_through() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64(&[4], &[0.2, 0.5, 0.51, 0.9]).unwrap());
        let y = tape.ste_threshold(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 1.0, 1.0]);
        let w = tape.constant(Tensor::from_f64(&[4], &[1.0, 2.0, 3.0, 4.0]).unwrap());
        let p = tape.mul(y, w).unwrap();
        let loss = tape.sum(p);
        assert_eq!(tape.gradients(loss).unwrap().get(x).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
    }
}
