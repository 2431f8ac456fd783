//! Gradient checks: every layer kind and every loss is differentiated
//! through the tape and compared against central finite differences over
//! all inputs and parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{central_diff, max_rel_err, DEFAULT_H};
use super::layers::{BatchNorm, Layer, Stack};
use super::{Graph, NodeId, Tensor};

const TOL: f64 = 1e-4;

#[derive(Clone, Copy)]
enum LossKind {
    Mse,
    L1,
    Bce,
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let numel = shape.iter().product();
    let data = (0..numel).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor { shape, data }
}

fn loss_node(g: &mut Graph, out: NodeId, target: NodeId, loss: LossKind) -> NodeId {
    match loss {
        LossKind::Mse => g.mse(out, target).unwrap(),
        LossKind::L1 => g.l1(out, target).unwrap(),
        LossKind::Bce => g.bce(out, target).unwrap(),
    }
}

/// Evaluates the stack loss as a pure function of (input ++ params).
fn eval_theta(
    stack: &Stack,
    in_shape: &[usize],
    target: &Tensor,
    train: bool,
    loss: LossKind,
    theta: &[f64],
) -> f64 {
    let mut st = stack.clone();
    let ni: usize = in_shape.iter().product();
    let input = Tensor::new(in_shape.to_vec(), theta[..ni].to_vec()).unwrap();
    let mut off = ni;
    for p in st.params_mut() {
        let n = p.numel();
        p.data.copy_from_slice(&theta[off..off + n]);
        off += n;
    }
    let mut g = Graph::new();
    let x = g.leaf(&input);
    let (out, _) = st.forward(&mut g, x, train).unwrap();
    let t = g.leaf(target);
    let l = loss_node(&mut g, out, t, loss);
    g.scalar_value(l)
}

/// Runs one seeded configuration: analytic gradients of the loss w.r.t.
/// input and every parameter, against central differences. Returns the
/// maximum relative error.
fn check_stack(
    seed: u64,
    mut stack: Stack,
    in_shape: Vec<usize>,
    train: bool,
    loss: LossKind,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37).wrapping_add(17));
    let input = rand_tensor(&mut rng, in_shape.clone(), -1.0, 1.0);

    // One forward pass to learn the output shape, then draw a target.
    let out_shape = {
        let mut st = stack.clone();
        let mut g = Graph::new();
        let x = g.leaf(&input);
        let (out, _) = st.forward(&mut g, x, train).unwrap();
        g.shape(out).to_vec()
    };
    let target = match loss {
        LossKind::Bce => {
            let numel = out_shape.iter().product();
            let data = (0..numel)
                .map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 })
                .collect();
            Tensor {
                shape: out_shape,
                data,
            }
        }
        _ => rand_tensor(&mut rng, out_shape, -1.0, 1.0),
    };

    // Analytic pass.
    let mut g = Graph::new();
    let x = g.leaf(&input);
    let (out, pids) = stack.forward(&mut g, x, train).unwrap();
    let t = g.leaf(&target);
    let l = loss_node(&mut g, out, t, loss);
    g.backward(l).unwrap();
    let mut analytic = g.grad(x).to_vec();
    for pid in &pids {
        analytic.extend_from_slice(g.grad(*pid));
    }

    // Finite differences over the same flattened coordinates.
    let mut theta = input.data.clone();
    for p in stack.params() {
        theta.extend_from_slice(&p.data);
    }
    let mut f = |v: &[f64]| eval_theta(&stack, &input.shape, &target, train, loss, v);
    let numeric = central_diff(&mut f, &theta, DEFAULT_H);

    max_rel_err(&analytic, &numeric)
}

fn assert_config(name: &str, seed: u64, stack: Stack, in_shape: Vec<usize>, train: bool, loss: LossKind) {
    let err = check_stack(seed, stack, in_shape, train, loss);
    assert!(err < TOL, "{name} seed {seed}: max rel err {err:.3e}");
}

#[test]
fn mlp_relu_mse() {
    for seed in 0..4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stack = Stack::new(vec![
            Layer::linear(&mut rng, 6, 8),
            Layer::Relu,
            Layer::linear(&mut rng, 8, 3),
        ]);
        assert_config("mlp_relu_mse", seed, stack, vec![4, 6], false, LossKind::Mse);
    }
}

#[test]
fn mlp_tanh_l1() {
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let stack = Stack::new(vec![
            Layer::linear(&mut rng, 5, 7),
            Layer::Tanh,
            Layer::linear(&mut rng, 7, 2),
        ]);
        assert_config("mlp_tanh_l1", seed, stack, vec![3, 5], false, LossKind::L1);
    }
}

#[test]
fn mlp_sigmoid_bce() {
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let stack = Stack::new(vec![
            Layer::linear(&mut rng, 4, 6),
            Layer::LeakyRelu(0.2),
            Layer::linear(&mut rng, 6, 1),
            Layer::Sigmoid,
        ]);
        assert_config("mlp_sigmoid_bce", seed, stack, vec![5, 4], false, LossKind::Bce);
    }
}

#[test]
fn conv_stack_mse() {
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let stack = Stack::new(vec![
            Layer::conv2d(&mut rng, 1, 2, 3, 1, 1),
            Layer::LeakyRelu(0.2),
            Layer::conv2d(&mut rng, 2, 1, 3, 2, 1),
            Layer::Flatten,
            Layer::linear(&mut rng, 9, 2),
        ]);
        assert_config("conv_stack_mse", seed, stack, vec![2, 1, 6, 6], false, LossKind::Mse);
    }
}

#[test]
fn deconv_reshape_mse() {
    for seed in 0..2 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let stack = Stack::new(vec![
            Layer::linear(&mut rng, 3, 8),
            Layer::Reshape(vec![2, 2, 2]),
            Layer::deconv2d(&mut rng, 2, 1, 2, 2, 0),
            Layer::Tanh,
        ]);
        assert_config("deconv_reshape_mse", seed, stack, vec![2, 3], false, LossKind::Mse);
    }
}

#[test]
fn upsample_conv_l1() {
    for seed in 0..2 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let stack = Stack::new(vec![
            Layer::conv2d(&mut rng, 1, 2, 3, 1, 1),
            Layer::UpsampleNn(2),
            Layer::conv2d(&mut rng, 2, 1, 3, 1, 1),
        ]);
        assert_config("upsample_conv_l1", seed, stack, vec![1, 1, 4, 4], false, LossKind::L1);
    }
}

#[test]
fn batchnorm1d_train_mse() {
    for seed in 0..2 {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let stack = Stack::new(vec![
            Layer::linear(&mut rng, 4, 6),
            Layer::batchnorm1d(6),
            Layer::Relu,
            Layer::linear(&mut rng, 6, 2),
        ]);
        assert_config("batchnorm1d_train_mse", seed, stack, vec![5, 4], true, LossKind::Mse);
    }
}

#[test]
fn batchnorm2d_train_mse() {
    for seed in 0..2 {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let stack = Stack::new(vec![
            Layer::conv2d(&mut rng, 1, 3, 3, 1, 1),
            Layer::batchnorm2d(3),
            Layer::LeakyRelu(0.2),
            Layer::Flatten,
            Layer::linear(&mut rng, 48, 2),
        ]);
        assert_config("batchnorm2d_train_mse", seed, stack, vec![2, 1, 4, 4], true, LossKind::Mse);
    }
}

#[test]
fn batchnorm_eval_mse() {
    for seed in 0..2 {
        let mut rng = ChaCha8Rng::seed_from_u64(800 + seed);
        let bn = BatchNorm {
            gamma: rand_tensor(&mut rng, vec![6], 0.5, 1.5),
            beta: rand_tensor(&mut rng, vec![6], -0.5, 0.5),
            running_mean: (0..6).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            running_var: (0..6).map(|_| rng.gen_range(0.5..1.5)).collect(),
        };
        let stack = Stack::new(vec![
            Layer::linear(&mut rng, 4, 6),
            Layer::BatchNorm1d(bn),
            Layer::Tanh,
            Layer::linear(&mut rng, 6, 2),
        ]);
        assert_config("batchnorm_eval_mse", seed, stack, vec![3, 4], false, LossKind::Mse);
    }
}

/// Elementwise and reduction ops composed by hand and checked against
/// finite differences.
#[test]
fn elementwise_and_reduction_grads() {
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let x0: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y0: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();

        // Builds the expression and returns (graph, x, y, output).
        let build = |xv: &[f64], yv: &[f64]| -> (Graph, NodeId, NodeId, NodeId) {
            let mut g = Graph::new();
            let x = g.leaf(&Tensor::new(vec![6], xv.to_vec()).unwrap());
            let y = g.leaf(&Tensor::new(vec![6], yv.to_vec()).unwrap());
            let e = g.exp(x);
            let m = g.mul(e, y).unwrap();
            let s = g.scale(m, 0.7);
            let a = g.add_scalar(s, 0.3);
            let d = g.sub(a, x).unwrap();
            let p = g.add(d, y).unwrap();
            let mean = g.mean_all(p);
            let tot = g.sum_all(p);
            let both = g.add(mean, tot).unwrap();
            (g, x, y, both)
        };

        let (mut g, x, y, out) = build(&x0, &y0);
        g.backward(out).unwrap();
        let mut analytic = g.grad(x).to_vec();
        analytic.extend_from_slice(g.grad(y));

        let theta: Vec<f64> = x0.iter().chain(&y0).copied().collect();
        let mut f = |t: &[f64]| {
            let (g, _, _, out) = build(&t[..6], &t[6..]);
            g.scalar_value(out)
        };
        let numeric = central_diff(&mut f, &theta, DEFAULT_H);
        let err = max_rel_err(&analytic, &numeric);
        assert!(err < TOL, "seed {seed}: max rel err {err:.3e}");
    }
}

#[test]
fn matmul_grads() {
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let a0: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b0: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let run = |av: &[f64], bv: &[f64]| -> f64 {
            let mut g = Graph::new();
            let a = g.leaf(&Tensor::new(vec![2, 3], av.to_vec()).unwrap());
            let b = g.leaf(&Tensor::new(vec![3, 4], bv.to_vec()).unwrap());
            let c = g.matmul(a, b).unwrap();
            let s = g.sum_all(c);
            g.scalar_value(s)
        };

        let mut g = Graph::new();
        let a = g.leaf(&Tensor::new(vec![2, 3], a0.clone()).unwrap());
        let b = g.leaf(&Tensor::new(vec![3, 4], b0.clone()).unwrap());
        let c = g.matmul(a, b).unwrap();
        let s = g.sum_all(c);
        g.backward(s).unwrap();
        let mut analytic = g.grad(a).to_vec();
        analytic.extend_from_slice(g.grad(b));

        let theta: Vec<f64> = a0.iter().chain(&b0).copied().collect();
        let mut f = |t: &[f64]| run(&t[..6], &t[6..]);
        let numeric = central_diff(&mut f, &theta, DEFAULT_H);
        let err = max_rel_err(&analytic, &numeric);
        assert!(err < TOL, "seed {seed}: max rel err {err:.3e}");
    }
}

/// x used twice in a diamond: d(x*x + x)/dx = 2x + 1 exactly.
#[test]
fn diamond_accumulates_through_shared_input() {
    let mut g = Graph::new();
    let x = g.leaf(&Tensor::new(vec![3], vec![-1.5, 0.25, 2.0]).unwrap());
    let sq = g.mul(x, x).unwrap();
    let y = g.add(sq, x).unwrap();
    let s = g.sum_all(y);
    g.backward(s).unwrap();
    for (gx, xv) in g.grad(x).iter().zip([-1.5, 0.25, 2.0]) {
        assert!((gx - (2.0 * xv + 1.0)).abs() < 1e-12);
    }
}

/// Gradients accumulate across backward calls until zeroed.
#[test]
fn double_backward_doubles_gradients() {
    let mut g = Graph::new();
    let x = g.leaf(&Tensor::new(vec![2], vec![0.4, -0.9]).unwrap());
    let y = g.mul(x, x).unwrap();
    let s = g.sum_all(y);
    g.backward(s).unwrap();
    let first = g.grad(x).to_vec();
    g.backward(s).unwrap();
    for (a, b) in g.grad(x).iter().zip(&first) {
        assert!((a - 2.0 * b).abs() < 1e-12);
    }
    g.zero_grads();
    assert!(g.grad(x).iter().all(|&v| v == 0.0));
}

/// detach blocks gradient flow entirely.
#[test]
fn detach_blocks_gradients() {
    let mut g = Graph::new();
    let x = g.leaf(&Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
    let d = g.detach(x);
    let y = g.mul(d, d).unwrap();
    let s = g.sum_all(y);
    g.backward(s).unwrap();
    assert!(g.grad(x).iter().all(|&v| v == 0.0));
    assert_eq!(g.value(d), g.value(x));
}

#[test]
fn pad_channels_grads_and_values() {
    for seed in 0..2u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1100 + seed);
        let x0: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w0: Vec<f64> = (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let build = |xv: &[f64], wv: &[f64]| -> (Graph, NodeId, NodeId, NodeId) {
            let mut g = Graph::new();
            let x = g.leaf(&Tensor::new(vec![2, 1, 2, 2], xv.to_vec()).unwrap());
            let w = g.leaf(&Tensor::new(vec![2, 3, 2, 2], wv.to_vec()).unwrap());
            let p = g.pad_channels(x, 3).unwrap();
            let m = g.mul(p, w).unwrap();
            let s = g.sum_all(m);
            (g, x, w, s)
        };

        let (mut g, x, w, out) = build(&x0, &w0);
        // padded channels are zero, original channel intact
        let p = NodeId(
            // pad node is the third node pushed (leaf, leaf, pad)
            2,
        );
        assert_eq!(g.shape(p), &[2, 3, 2, 2]);
        assert_eq!(&g.value(p)[..4], &x0[..4]);
        assert!(g.value(p)[4..12].iter().all(|&v| v == 0.0));

        g.backward(out).unwrap();
        let mut analytic = g.grad(x).to_vec();
        analytic.extend_from_slice(g.grad(w));
        let theta: Vec<f64> = x0.iter().chain(&w0).copied().collect();
        let mut f = |t: &[f64]| {
            let (g, _, _, out) = build(&t[..8], &t[8..]);
            g.scalar_value(out)
        };
        let numeric = central_diff(&mut f, &theta, DEFAULT_H);
        let err = max_rel_err(&analytic, &numeric);
        assert!(err < TOL, "seed {seed}: max rel err {err:.3e}");
    }
}

/// A 1x1 convolution with unit weight is the identity map.
#[test]
fn identity_conv_reproduces_input() {
    let mut g = Graph::new();
    let xv: Vec<f64> = (0..16).map(|i| i as f64 * 0.1).collect();
    let x = g.leaf(&Tensor::new(vec![1, 1, 4, 4], xv.clone()).unwrap());
    let w = g.leaf(&Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap());
    let y = g.conv2d(x, w, 1, 0).unwrap();
    assert_eq!(g.value(y), &xv[..]);
}

/// BCE with a constant saturated prediction stays finite thanks to the
/// clamp, and its gradient is zero in the clamped region.
#[test]
fn bce_clamps_saturated_predictions() {
    let mut g = Graph::new();
    let p = g.leaf(&Tensor::new(vec![2], vec![0.0, 1.0]).unwrap());
    let l = g.bce_const(p, 1.0).unwrap();
    assert!(g.scalar_value(l).is_finite());
    g.backward(l).unwrap();
    assert!(g.grad(p).iter().all(|&v| v == 0.0));
}
