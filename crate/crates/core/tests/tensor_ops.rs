//! Operator examples, closed-form oracles and backward-vs-finite-difference
//! property checks for the tensor engine.

use std::sync::Arc;

use feadapt::tensor::{
    self, depthwise_conv3d, finite_difference_gradient, gelu, layer_norm, matmul, softmax_lastdim,
    Activation, Graph, Tensor, Var,
};
use feadapt::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, data).unwrap()
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

// Central differences over sums of a few hundred terms leave ~1e-9 of
// absolute noise, which swamps entries near 1e-6.
fn fd_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// Builds `f(inputs)`, reduces it to a scalar through fixed random weights,
/// and returns the worst relative error between backward and central
/// differences over every input coordinate.
fn gradcheck<F>(inputs: &[Tensor<f64>], seed: u64, build: F) -> f64
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> feadapt::Result<Var>,
{
    let probe_weights = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let out = build(&mut g, &vars).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random(g.shape(out), &mut rng)
    };
    let loss_of = |ins: &[Tensor<f64>], track: bool| -> (f64, Option<Vec<Tensor<f64>>>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.leaf(t.clone(), track)).collect();
        let out = build(&mut g, &vars).unwrap();
        let w = g.constant(probe_weights.clone());
        let prod = g.mul(out, w).unwrap();
        let loss = g.sum(prod).unwrap();
        let value = g.value(loss).item();
        if !track {
            return (value, None);
        }
        let grads = g.backward(loss).unwrap();
        (
            value,
            Some(
                vars.iter()
                    .zip(ins)
                    .map(|(&v, t)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
                    .collect(),
            ),
        )
    };
    let (_, analytic) = loss_of(inputs, true);
    let analytic = analytic.unwrap();
    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        let numeric = finite_difference_gradient(
            |p| {
                let mut ins = inputs.to_vec();
                ins[i] = p.clone();
                Ok(loss_of(&ins, false).0)
            },
            input,
            1e-5,
        )
        .unwrap();
        for (a, n) in analytic[i].data().iter().zip(numeric.data()) {
            worst = worst.max(fd_err(*a, *n));
        }
    }
    worst
}

#[test]
fn matmul_examples() {
    let eye = t64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
    let a = t64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(matmul(&eye, &a).unwrap(), a);
    let b = t64(&[2, 1], &[5.0, 6.0]);
    assert_eq!(matmul(&a, &b).unwrap().data(), &[17.0, 39.0]);
    let m = t64(&[2, 3], &[0.0; 6]);
    match matmul(&m, &m) {
        Err(Error::Dimension { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("expected dimension error, got {other:?}"),
    }
}

#[test]
fn softmax_examples() {
    let u = softmax_lastdim(&t64(&[3], &[0.0, 0.0, 0.0])).unwrap();
    for &v in u.data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let s = softmax_lastdim(&t64(&[3], &[1000.0, 0.0, 0.0])).unwrap();
    assert!(s.is_finite());
    assert!((s.data()[0] - 1.0).abs() < 1e-12);
    assert!(s.data()[1] < 1e-300);

    // direct-formula oracle: exp / sum(exp) without max subtraction
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&[5], &mut rng);
    let denom: f64 = x.data().iter().map(|v| v.exp()).sum();
    let sm = softmax_lastdim(&x).unwrap();
    for (&v, &p) in x.data().iter().zip(sm.data()) {
        assert!((v.exp() / denom - p).abs() < 1e-12);
    }
}

#[test]
fn layer_norm_examples() {
    let ones = t64(&[4], &[1.0; 4]);
    let zeros = t64(&[4], &[0.0; 4]);
    let c = layer_norm(&t64(&[1, 4], &[3.0; 4]), &ones, &zeros, 1e-5).unwrap();
    assert!(c.data().iter().all(|&v| v == 0.0));

    let beta = t64(&[4], &[0.5, -1.0, 2.0, 0.0]);
    let x = t64(&[2, 4], &[1.0, 7.0, -2.0, 0.3, 5.0, 5.5, 6.0, -9.0]);
    let out = layer_norm(&x, &zeros, &beta, 1e-5).unwrap();
    for row in out.data().chunks(4) {
        assert_eq!(row, beta.data());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random(&[1, 64], &mut rng);
    let ones = Tensor::<f64>::full(&[64], 1.0);
    let zeros = Tensor::<f64>::zeros(&[64]);
    let y = layer_norm(&x, &ones, &zeros, 1e-5).unwrap();
    let mean = y.data().iter().sum::<f64>() / 64.0;
    let var = y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0;
    assert!(mean.abs() < 1e-6);
    assert!((var - 1.0).abs() < 1e-4);

    assert!(matches!(
        layer_norm(&x, &ones, &zeros, 0.0),
        Err(Error::Parameter(_))
    ));
}

#[test]
fn gelu_examples() {
    let g = gelu(&t64(&[3], &[0.0, 10.0, 1.0]));
    assert_eq!(g.data()[0], 0.0);
    assert!((g.data()[1] - 10.0).abs() < 1e-6);
    // Φ(1) = 0.841344746068542948585232545632...
    assert!((g.data()[2] - 0.841_344_746_068_542_9).abs() < 1e-7);
    let g32 = gelu(&Tensor::<f32>::from_f64(&[1], &[1.0]).unwrap());
    assert!((g32.data()[0] as f64 - 0.841_344_746_068_542_9).abs() < 1e-7);
}

/// Integer-lattice dilated convolution by explicit enumeration.
fn lattice_conv(x: &Tensor<f64>, k: &Tensor<f64>, d: [usize; 3]) -> Vec<f64> {
    let [c, t, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [kt, kh, kw] = [k.shape()[1], k.shape()[2], k.shape()[3]];
    let mut y = vec![0.0; x.len()];
    for ch in 0..c {
        for ti in 0..t as isize {
            for hi in 0..h as isize {
                for wi in 0..w as isize {
                    let mut acc = 0.0;
                    for a in 0..kt as isize {
                        for b in 0..kh as isize {
                            for e in 0..kw as isize {
                                let st = ti + (a - kt as isize / 2) * d[0] as isize;
                                let sh = hi + (b - kh as isize / 2) * d[1] as isize;
                                let sw = wi + (e - kw as isize / 2) * d[2] as isize;
                                if st < 0 || sh < 0 || sw < 0 || st >= t as isize || sh >= h as isize || sw >= w as isize {
                                    continue;
                                }
                                let xv = x.data()[((ch * t + st as usize) * h + sh as usize) * w + sw as usize];
                                let kv = k.data()[((ch * kt + a as usize) * kh + b as usize) * kw + e as usize];
                                acc += xv * kv;
                            }
                        }
                    }
                    y[((ch * t + ti as usize) * h + hi as usize) * w + wi as usize] = acc;
                }
            }
        }
    }
    y
}

#[test]
fn conv_matches_lattice_enumeration_and_is_continuous_in_dilation() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = random(&[3, 6, 5, 7], &mut rng);
    let k = random(&[3, 3, 3, 3], &mut rng);
    let oracle = lattice_conv(&x, &k, [2, 2, 2]);
    let exact = depthwise_conv3d(&x, &k, [2.0, 2.0, 2.0]).unwrap();
    let below = depthwise_conv3d(&x, &k, [2.0 - 1e-9, 2.0 - 1e-9, 2.0 - 1e-9]).unwrap();
    let above = depthwise_conv3d(&x, &k, [2.0 + 1e-9, 2.0 + 1e-9, 2.0 + 1e-9]).unwrap();
    for i in 0..oracle.len() {
        assert!((exact.data()[i] - oracle[i]).abs() < 1e-12);
        assert!((below.data()[i] - oracle[i]).abs() < 1e-6);
        assert!((above.data()[i] - oracle[i]).abs() < 1e-6);
    }
    let mixed = depthwise_conv3d(&x, &k, [1.0, 3.0, 2.0]).unwrap();
    let oracle = lattice_conv(&x, &k, [1, 3, 2]);
    for (a, b) in mixed.data().iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn backward_polynomial_rule() {
    let mut g = Graph::new();
    let x = g.leaf(t64(&[2], &[1.0, 2.0]), true);
    let sq = g.mul(x, x).unwrap();
    let loss = g.sum(sq).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn detached_leaf_gets_no_gradient() {
    let mut g = Graph::new();
    let x = g.leaf(t64(&[2], &[1.0, 2.0]), true);
    let c = g.leaf(t64(&[2], &[3.0, 4.0]), false);
    let p = g.mul(x, c).unwrap();
    let loss = g.sum(p).unwrap();
    let grads = g.backward(loss).unwrap();
    assert!(grads.get(c).is_none());
    assert_eq!(grads.get(x).unwrap().data(), &[3.0, 4.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut g = Graph::new();
    let x = g.leaf(t64(&[2], &[1.0, 2.0]), true);
    assert!(matches!(g.backward(x), Err(Error::Usage(_))));
}

#[test]
fn gradients_accumulate_over_reuse() {
    // loss = sum(x) + sum(x) uses x twice
    let mut g = Graph::new();
    let x = g.leaf(t64(&[3], &[1.0, -1.0, 0.5]), true);
    let a = g.sum(x).unwrap();
    let b = g.sum(x).unwrap();
    let loss = g.add(a, b).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[2.0, 2.0, 2.0]);
}

#[test]
fn two_layer_mlp_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inputs = vec![
        random(&[4, 5], &mut rng),
        random(&[5, 6], &mut rng),
        random(&[6], &mut rng),
        random(&[6, 3], &mut rng),
        random(&[3], &mut rng),
    ];
    let err = gradcheck(&inputs, 11, |g, v| {
        let h = g.matmul(v[0], v[1])?;
        let h = g.add_bias(h, v[2])?;
        let h = g.activation(h, Activation::Gelu)?;
        let o = g.matmul(h, v[3])?;
        g.add_bias(o, v[4])
    });
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn cross_entropy_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let logits = random(&[5], &mut rng);
    let mut g = Graph::new();
    let l = g.leaf(logits.clone(), true);
    let loss = g.cross_entropy(l, 2).unwrap();
    let grads = g.backward(loss).unwrap();
    let numeric = finite_difference_gradient(
        |p| {
            let mut g = Graph::new();
            let l = g.leaf(p.clone(), false);
            let loss = g.cross_entropy(l, 2)?;
            Ok(g.value(loss).item())
        },
        &logits,
        1e-6,
    )
    .unwrap();
    for (a, b) in grads.get(l).unwrap().data().iter().zip(numeric.data()) {
        assert!(rel_err(*a, *b) < 1e-6);
    }
}

#[test]
fn non_finite_values_are_errors() {
    let mut g = Graph::new();
    let x = g.leaf(t64(&[1], &[f64::MAX]), false);
    assert!(matches!(g.scale(x, 10.0), Err(Error::NonFinite(_))));
}

#[test]
fn ops_are_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = Tensor::<f32>::new(vec![2, 4, 3, 3], (0..72).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let k = Tensor::<f32>::new(vec![2, 3, 3, 3], (0..54).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let a = depthwise_conv3d(&x, &k, [1.37, 1.0, 2.5]).unwrap();
    let b = depthwise_conv3d(&x, &k, [1.37, 1.0, 2.5]).unwrap();
    assert!(a.bit_eq(&b));
}

fn shape_strategy(max_rank: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..=6, 1..=max_rank)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn matmul_is_associative(m in 1usize..6, k in 1usize..6, n in 1usize..6, p in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&[m, k], &mut rng);
        let b = random(&[k, n], &mut rng);
        let c = random(&[n, p], &mut rng);
        let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        let scale = left.data().iter().map(|v| v.abs()).fold(1.0, f64::max);
        prop_assert!(left.max_abs_diff(&right) / scale < 1e-9);
    }

    #[test]
    fn softmax_rows_are_distributions(shape in shape_strategy(3), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&shape, &mut rng);
        let y = softmax_lastdim(&x).unwrap();
        for row in y.data().chunks(x.last_dim()) {
            let s: f64 = row.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&p| p > 0.0 && (p < 1.0 || row.len() == 1)));
        }
    }

    #[test]
    fn elementwise_ops_match_fd(shape in shape_strategy(4), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&shape, &mut rng);
        let b = random(&shape, &mut rng);
        let err = gradcheck(&[a, b], seed, |g, v| {
            let s = g.add(v[0], v[1])?;
            let m = g.mul(s, v[1])?;
            let ge = g.activation(m, Activation::Gelu)?;
            let sp = g.softplus(ge)?;
            g.affine(sp, 1.5, 1.0)
        });
        prop_assert!(err < 1e-4, "relative error {}", err);
    }

    #[test]
    fn softmax_and_layer_norm_match_fd(shape in shape_strategy(4), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = *shape.last().unwrap();
        let x = random(&shape, &mut rng);
        let gamma = random(&[last], &mut rng);
        let beta = random(&[last], &mut rng);
        let err = gradcheck(std::slice::from_ref(&x), seed, |g, v| g.softmax(v[0]));
        prop_assert!(err < 1e-4, "softmax relative error {}", err);
        // a single-element row has zero variance; its output does not depend on x
        if last > 1 {
            let err = gradcheck(&[x, gamma, beta], seed, |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5));
            prop_assert!(err < 1e-4, "layer norm relative error {}", err);
        }
    }

    #[test]
    fn matmul_bias_and_mean_match_fd(m in 1usize..=6, k in 1usize..=6, n in 1usize..=6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&[m, k], &mut rng);
        let b = random(&[k, n], &mut rng);
        let bias = random(&[n], &mut rng);
        let err = gradcheck(&[a, b, bias], seed, |g, v| {
            let p = g.matmul(v[0], v[1])?;
            let p = g.add_bias(p, v[2])?;
            g.mean_rows(p)
        });
        prop_assert!(err < 1e-4, "relative error {}", err);
    }

    #[test]
    fn attention_matches_fd(groups in 1usize..=3, seq in 1usize..=5, heads in 1usize..=3, dh in 1usize..=3, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = [groups * seq, heads * dh];
        let q = random(&shape, &mut rng);
        let k = random(&shape, &mut rng);
        let v = random(&shape, &mut rng);
        let err = gradcheck(&[q, k, v], seed, |g, x| g.attention(x[0], x[1], x[2], heads, seq));
        prop_assert!(err < 1e-4, "relative error {}", err);
    }

    #[test]
    fn conv_matches_fd(
        c in 1usize..=3, t in 1usize..=6, h in 1usize..=6, w in 1usize..=6,
        frac in prop::array::uniform3(0.1f64..0.9), whole in prop::array::uniform3(0usize..2),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[c, t, h, w], &mut rng);
        let k = random(&[c, 3, 3, 3], &mut rng);
        let d: Vec<f64> = (0..3).map(|i| 1.0 + whole[i] as f64 + frac[i]).collect();
        let d = t64(&[3], &d);
        let err = gradcheck(&[x, k, d], seed, |g, v| g.depthwise_conv3d(v[0], v[1], v[2]));
        prop_assert!(err < 1e-4, "relative error {}", err);
    }

    #[test]
    fn gather_concat_reshape_match_fd(n in 1usize..=6, m in 1usize..=6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&[n], &mut rng);
        let b = random(&[m, 2], &mut rng);
        let total = n + 2 * m;
        // every element twice, reversed
        let index: Arc<[usize]> = (0..total).rev().chain(0..total).collect::<Vec<_>>().into();
        let err = gradcheck(&[a, b], seed, move |g, v| {
            let cat = g.concat(&[v[0], v[1]])?;
            let r = g.reshape(cat, vec![total, 1])?;
            g.gather(r, vec![2, total], index.clone())
        });
        prop_assert!(err < 1e-4, "relative error {}", err);
    }
}

#[test]
fn transposed_kernels_agree_with_plain_matmul() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let a = random(&[3, 4], &mut rng);
    let at = Tensor::new(vec![4, 3], tensor::kernels::transpose(a.data(), 3, 4)).unwrap();
    let b = random(&[3, 2], &mut rng);
    // (aᵀ b) via the rhs-gradient kernel
    let mut out = vec![0.0; 8];
    tensor::kernels::matmul_grad_rhs(a.data(), b.data(), &mut out, 3, 4, 2);
    let direct = matmul(&at, &b).unwrap();
    for (x, y) in out.iter().zip(direct.data()) {
        assert!((x - y).abs() < 1e-12);
    }
}
