use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::{Error, Result};

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Contract the output with fixed random weights so every coordinate gets a
/// generic gradient.
fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.shape(out).to_vec();
    let w = g.constant(rand_tensor(&mut rng, &shape, -1.0, 1.0));
    let p = g.mul(out, w)?;
    g.sum(p)
}

fn assert_grad_ok<F>(name: &str, trials: usize, mut build: F)
where
    F: FnMut(&mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>),
{
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64 * 7919);
    for trial in 0..trials {
        let (inputs, f) = build(&mut rng);
        let report = grad_check_many(|g, v| f(g, v), &inputs, 1e-5).unwrap();
        assert!(
            report.max_rel_error < 1e-6,
            "{name} trial {trial}: {report:?}"
        );
    }
}

#[test]
fn silu_definition() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::new(&[3], vec![0.0, 40.0, -2.0]).unwrap());
    let y = g.silu(x).unwrap();
    let v = g.value(y).data();
    assert_eq!(v[0], 0.0);
    assert!((v[1] - 40.0).abs() < 1e-12);
    assert!((v[2] - (-2.0 / (1.0 + 2f64.exp()))).abs() < 1e-15);
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = Graph::<f64>::new();
    let x = g.constant(rand_tensor(&mut rng, &[4, 7], -20.0, 20.0));
    let y = g.softmax(x).unwrap();
    for row in g.value(y).data().chunks(7) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn depthwise_unit_kernel_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut g = Graph::<f64>::new();
    let xt = rand_tensor(&mut rng, &[2, 6, 5], -1.0, 1.0);
    let x = g.constant(xt.clone());
    let w = g.constant(Tensor::full(&[6, 1, 1], 1.0));
    let attrs = ConvAttrs {
        groups: 6,
        ..ConvAttrs::default()
    };
    let y = g.conv1d(x, w, None, attrs).unwrap();
    assert_eq!(g.value(y), &xt);
}

#[test]
fn linear_map_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let xt = rand_tensor(&mut rng, &[5], -1.0, 1.0);
    let mut g = Graph::<f64>::new();
    let w = g.param(rand_tensor(&mut rng, &[5], -1.0, 1.0));
    let x = g.constant(xt.clone());
    let p = g.mul(w, x).unwrap();
    let loss = g.sum(p).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(w), xt);
}

#[test]
fn square_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::scalar(3.0));
    let y = g.mul(x, x).unwrap();
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).item(), 6.0);
}

#[test]
fn three_op_chain_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
    let w = rand_tensor(&mut rng, &[4, 2], -1.0, 1.0);
    let report = grad_check_many(
        |g, v| {
            let h = g.matmul(v[0], v[1])?;
            let s = g.silu(h)?;
            let p = g.mul(s, s)?;
            g.sum(p)
        },
        &[x, w],
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-7, "{report:?}");
}

#[test]
fn grad_check_of_sum_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_tensor(&mut rng, &[10], -1.0, 1.0);
    let err = grad_check(|g, x| g.sum(x), &x, 1e-5).unwrap();
    assert!(err < 1e-10);
}

#[test]
fn layer_norm_sum_of_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_tensor(&mut rng, &[3, 6], -2.0, 2.0);
    let gamma = rand_tensor(&mut rng, &[6], 0.5, 1.5);
    let beta = rand_tensor(&mut rng, &[6], -0.5, 0.5);
    let err = grad_check(
        |g, x| {
            let ga = g.constant(gamma.clone());
            let be = g.constant(beta.clone());
            let y = g.layer_norm(x, ga, be, 1e-5)?;
            let sq = g.mul(y, y)?;
            g.sum(sq)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn independent_leaf_gets_zero_grad() {
    let mut g = Graph::<f64>::new();
    let a = g.param(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
    let b = g.param(Tensor::new(&[2], vec![3.0, 4.0]).unwrap());
    let loss = g.sum(a).unwrap();
    g.backward(loss).unwrap();
    assert!(g.grad(b).data().iter().all(|&v| v == 0.0));
}

#[test]
fn repeated_backward_accumulates() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut g = Graph::<f64>::new();
    let w = g.param(rand_tensor(&mut rng, &[3, 3], -1.0, 1.0));
    let x = g.constant(rand_tensor(&mut rng, &[2, 3], -1.0, 1.0));
    let h = g.matmul(x, w).unwrap();
    let s = g.silu(h).unwrap();
    let loss = g.sum(s).unwrap();
    g.backward(loss).unwrap();
    let once = g.grad(w);
    g.backward(loss).unwrap();
    let twice = g.grad(w);
    for (a, b) in once.data().iter().zip(twice.data()) {
        assert_eq!(2.0 * a, *b);
    }
    g.zero_grad();
    assert!(g.grad(w).data().iter().all(|&v| v == 0.0));
}

#[test]
fn backward_requires_scalar() {
    let mut g = Graph::<f64>::new();
    let a = g.param(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
    assert!(matches!(g.backward(a), Err(Error::Shape { op: "backward", .. })));
}

#[test]
fn shape_errors_name_the_op() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[4, 2]));
    assert!(matches!(g.matmul(a, b), Err(Error::Shape { op: "matmul", .. })));
    assert!(matches!(g.add(a, b), Err(Error::Shape { op: "add", .. })));
    let x = g.constant(Tensor::zeros(&[1, 6, 4]));
    let w = g.constant(Tensor::zeros(&[4, 2, 1]));
    let attrs = ConvAttrs {
        groups: 4,
        ..ConvAttrs::default()
    };
    assert!(matches!(g.conv1d(x, w, None, attrs), Err(Error::Shape { op: "conv1d", .. })));
}

#[test]
fn checked_mode_reports_non_finite() {
    let mut g = Graph::<f64>::new().checked(true);
    let a = g.constant(Tensor::new(&[1], vec![0.0]).unwrap());
    assert!(matches!(g.log10(a), Err(Error::NonFinite(op)) if op == "log10"));
}

#[test]
fn dropout_eval_is_identity_and_train_is_unbiased() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::full(&[100_000], 1.0));
    assert_eq!(g.dropout(x, 0.3).unwrap(), x);

    let mut g = Graph::<f64>::new().train_mode(11);
    let x = g.constant(Tensor::full(&[100_000], 1.0));
    let y = g.dropout(x, 0.3).unwrap();
    let v = g.value(y).data();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    assert!((mean - 1.0).abs() < 0.01, "{mean}");
    let zeros = v.iter().filter(|&&x| x == 0.0).count() as f64 / v.len() as f64;
    assert!((zeros - 0.3).abs() < 0.01);
}

#[test]
fn f32_matches_f64_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = rand_tensor(&mut rng, &[2, 3, 4], -1.0, 1.0);
    let w = rand_tensor(&mut rng, &[4, 5], -1.0, 1.0);
    let mut g64 = Graph::<f64>::new();
    let (a, b) = (g64.constant(x.clone()), g64.constant(w.clone()));
    let y64 = g64.matmul(a, b).unwrap();
    let mut g32 = Graph::<f32>::new();
    let (a, b) = (g32.constant(x.cast()), g32.constant(w.cast()));
    let y32 = g32.matmul(a, b).unwrap();
    for (p, q) in g64.value(y64).data().iter().zip(g32.value(y32).data()) {
        assert!((p - *q as f64).abs() < 1e-5);
    }
}

// Every primitive against central differences, 100 random draws each.

type Built = (Vec<Tensor<f64>>, Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>);

fn dims(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(1..4)).collect()
}

#[test]
fn primitive_binary_ops() {
    for (name, op) in [("add", 0u8), ("sub", 1), ("mul", 2), ("div", 3)] {
        assert_grad_ok(name, 100, |rng| -> Built {
            let shape = dims(rng, 3);
            // b broadcasts along the leading axes half of the time
            let bshape = if rng.random::<bool>() {
                shape[1..].to_vec()
            } else {
                vec![shape[0], 1, shape[2]]
            };
            let a = rand_tensor(rng, &shape, -1.0, 1.0);
            let b = rand_tensor(rng, &bshape, 0.5, 1.5);
            let seed = rng.random();
            (
                vec![a, b],
                Box::new(move |g, v| {
                    let y = match op {
                        0 => g.add(v[0], v[1])?,
                        1 => g.sub(v[0], v[1])?,
                        2 => g.mul(v[0], v[1])?,
                        _ => g.div(v[0], v[1])?,
                    };
                    project(g, y, seed)
                }),
            )
        });
    }
}

#[test]
fn primitive_unary_ops() {
    assert_grad_ok("unary", 100, |rng| -> Built {
        let shape = dims(rng, 2);
        let x = rand_tensor(rng, &shape, 0.2, 2.0);
        let seed = rng.random();
        (
            vec![x],
            Box::new(move |g, v| {
                let a = g.add_scalar(v[0], 0.5)?;
                let b = g.mul_scalar(a, -1.3)?;
                let c = g.pow(v[0], 1.7)?;
                let d = g.log10(v[0])?;
                let e = g.silu(b)?;
                let f = g.clamp(v[0], -10.0, 10.0)?;
                let s1 = g.add(c, d)?;
                let s2 = g.add(e, f)?;
                let y = g.mul(s1, s2)?;
                project(g, y, seed)
            }),
        )
    });
}

#[test]
fn primitive_matmul() {
    assert_grad_ok("matmul", 100, |rng| -> Built {
        let (n, k, m) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..4));
        let batch = dims(rng, 2);
        let shared = rng.random::<bool>();
        let mut ashape = batch.clone();
        ashape.extend([n, k]);
        let bshape = if shared {
            vec![k, m]
        } else {
            vec![batch[1], k, m]
        };
        let a = rand_tensor(rng, &ashape, -1.0, 1.0);
        let b = rand_tensor(rng, &bshape, -1.0, 1.0);
        let seed = rng.random();
        (
            vec![a, b],
            Box::new(move |g, v| {
                let y = g.matmul(v[0], v[1])?;
                project(g, y, seed)
            }),
        )
    });
}

#[test]
fn primitive_conv1d() {
    assert_grad_ok("conv1d", 100, |rng| -> Built {
        let groups = rng.random_range(1..3);
        let cin = groups * rng.random_range(1..3);
        let cout = groups * rng.random_range(1..3);
        let kernel = rng.random_range(1..4);
        let t = rng.random_range(kernel..kernel + 4);
        let attrs = ConvAttrs {
            stride: rng.random_range(1..3),
            pad_left: rng.random_range(0..3),
            pad_right: rng.random_range(0..2),
            groups,
        };
        let x = rand_tensor(rng, &[2, cin, t], -1.0, 1.0);
        let w = rand_tensor(rng, &[cout, cin / groups, kernel], -1.0, 1.0);
        let b = rand_tensor(rng, &[cout], -1.0, 1.0);
        let seed = rng.random();
        (
            vec![x, w, b],
            Box::new(move |g, v| {
                let y = g.conv1d(v[0], v[1], Some(v[2]), attrs)?;
                project(g, y, seed)
            }),
        )
    });
}

#[test]
fn primitive_conv_transpose1d() {
    assert_grad_ok("conv_transpose1d", 100, |rng| -> Built {
        let groups = rng.random_range(1..3);
        let cin = groups * rng.random_range(1..3);
        let cout_g = rng.random_range(1..3);
        let kernel = rng.random_range(1..5);
        let t = rng.random_range(1..5);
        let stride = rng.random_range(1..3);
        let full = (t - 1) * stride + kernel;
        let pad_left = rng.random_range(0..full.min(3));
        let pad_right = rng.random_range(0..(full - pad_left).min(2));
        let attrs = ConvAttrs {
            stride,
            pad_left,
            pad_right,
            groups,
        };
        let x = rand_tensor(rng, &[2, cin, t], -1.0, 1.0);
        let w = rand_tensor(rng, &[cin, cout_g, kernel], -1.0, 1.0);
        let b = rand_tensor(rng, &[cout_g * groups], -1.0, 1.0);
        let seed = rng.random();
        (
            vec![x, w, b],
            Box::new(move |g, v| {
                let y = g.conv_transpose1d(v[0], v[1], Some(v[2]), attrs)?;
                project(g, y, seed)
            }),
        )
    });
}

#[test]
fn primitive_softmax() {
    assert_grad_ok("softmax", 100, |rng| -> Built {
        let shape = vec![rng.random_range(1..4), rng.random_range(2..6)];
        let x = rand_tensor(rng, &shape, -2.0, 2.0);
        let seed = rng.random();
        (
            vec![x],
            Box::new(move |g, v| {
                let y = g.softmax(v[0])?;
                project(g, y, seed)
            }),
        )
    });
}

#[test]
fn primitive_layer_norm() {
    assert_grad_ok("layer_norm", 100, |rng| -> Built {
        let c = rng.random_range(5..9);
        let rows = rng.random_range(1..4);
        let x = rand_tensor(rng, &[rows, c], -2.0, 2.0);
        let gamma = rand_tensor(rng, &[c], 0.5, 1.5);
        let beta = rand_tensor(rng, &[c], -0.5, 0.5);
        let seed = rng.random();
        (
            vec![x, gamma, beta],
            Box::new(move |g, v| {
                let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
                project(g, y, seed)
            }),
        )
    });
}

#[test]
fn primitive_group_norm() {
    assert_grad_ok("group_norm", 100, |rng| -> Built {
        let groups = rng.random_range(1..4);
        let c = groups * rng.random_range(1..3);
        // tiny groups project most of the gradient away, leaving finite-difference noise
        let t = rng.random_range(5..7);
        let x = rand_tensor(rng, &[2, c, t], -2.0, 2.0);
        let gamma = rand_tensor(rng, &[c], 0.5, 1.5);
        let beta = rand_tensor(rng, &[c], -0.5, 0.5);
        let seed = rng.random();
        (
            vec![x, gamma, beta],
            Box::new(move |g, v| {
                let y = g.group_norm(v[0], groups, v[1], v[2], 1e-5)?;
                project(g, y, seed)
            }),
        )
    });
}

#[test]
fn primitive_shape_ops() {
    assert_grad_ok("shape", 100, |rng| -> Built {
        let shape = vec![2, rng.random_range(2..4), rng.random_range(1..4)];
        let x = rand_tensor(rng, &shape, -1.0, 1.0);
        let y = rand_tensor(rng, &shape, -1.0, 1.0);
        let seed = rng.random();
        (
            vec![x, y],
            Box::new(move |g, v| {
                let c = g.concat(&[v[0], v[1]], 1)?;
                let n1 = shape[1];
                let parts = g.split(c, 1, &[1, 2 * n1 - 1])?;
                let p = g.permute(parts[1], &[2, 0, 1])?;
                let t = g.transpose(p, 0, 2)?;
                let r = g.reshape(t, &[(2 * n1 - 1) * 2 * shape[2]])?;
                let s = g.sum_axis(parts[0], 2)?;
                let m = g.mean_axis(parts[0], 0)?;
                let a = project(g, r, seed)?;
                let b = project(g, s, seed + 1)?;
                let c = project(g, m, seed + 2)?;
                let total = g.mean(c)?;
                let ab = g.add(a, b)?;
                g.add(ab, total)
            }),
        )
    });
}

#[test]
fn primitive_rel_shift_and_overlap_add() {
    assert_grad_ok("rel_shift", 100, |rng| -> Built {
        let t = rng.random_range(1..5);
        let x = rand_tensor(rng, &[2, t, 2 * t - 1], -1.0, 1.0);
        let frames = rand_tensor(rng, &[t, 4], -1.0, 1.0);
        let out_len = rng.random_range(2..(t - 1) * 2 + 6);
        let seed = rng.random();
        (
            vec![x, frames],
            Box::new(move |g, v| {
                let y = g.rel_shift(v[0])?;
                let o = g.overlap_add(v[1], 2, out_len)?;
                let a = project(g, y, seed)?;
                let b = project(g, o, seed + 1)?;
                g.add(a, b)
            }),
        )
    });
}

#[test]
fn dropout_backward_uses_mask() {
    let mut g = Graph::<f64>::new().train_mode(3);
    let x = g.param(Tensor::full(&[1000], 2.0));
    let y = g.dropout(x, 0.5).unwrap();
    let loss = g.sum(y).unwrap();
    g.backward(loss).unwrap();
    let gy = g.grad(x);
    for (gv, yv) in gy.data().iter().zip(g.value(y).data()) {
        assert_eq!(*gv * 2.0, *yv);
    }
}
