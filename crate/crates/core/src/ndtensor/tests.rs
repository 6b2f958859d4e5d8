use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(shape.to_vec(), data).unwrap()
}

/// Direct nested-loop convolution used as an oracle, NHWC layout.
fn naive_conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: (usize, usize),
    padding: Padding,
) -> Tensor {
    let (n, h, w, cin) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    let (kh, kw, _, cout) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2], kernel.shape()[3]);
    let oh = conv_out_dim(h, kh, stride.0, padding);
    let ow = conv_out_dim(w, kw, stride.1, padding);
    let (pt, pl) = match padding {
        Padding::Valid => (0, 0),
        Padding::Same => (
            ((oh - 1) * stride.0 + kh).saturating_sub(h) / 2,
            ((ow - 1) * stride.1 + kw).saturating_sub(w) / 2,
        ),
    };
    let mut out = Tensor::zeros(&[n, oh, ow, cout]);
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..cout {
                    let mut acc = bias.at(&[co]);
                    for ky in 0..kh {
                        for kx in 0..kw {
                            for ci in 0..cin {
                                let iy = (oy * stride.0 + ky) as isize - pt as isize;
                                let ix = (ox * stride.1 + kx) as isize - pl as isize;
                                if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                                    acc += input.at(&[b, iy as usize, ix as usize, ci])
                                        * kernel.at(&[ky, kx, ci, co]);
                                }
                            }
                        }
                    }
                    out.set(&[b, oy, ox, co], acc);
                }
            }
        }
    }
    out
}

fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k) = (a.shape()[0], a.shape()[1]);
    let m = b.shape()[1];
    let mut out = Tensor::zeros(&[n, m]);
    for i in 0..n {
        for j in 0..m {
            let mut acc = 0.0;
            for kk in 0..k {
                acc += a.at(&[i, kk]) * b.at(&[kk, j]);
            }
            out.set(&[i, j], acc);
        }
    }
    out
}

// ---- conv2d ----

#[test]
fn conv2d_ones_valid() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::ones(&[1, 4, 4, 1]));
    let k = g.constant(Tensor::ones(&[3, 3, 1, 1]));
    let b = g.constant(Tensor::zeros(&[1]));
    let y = g.conv2d(x, k, b, (1, 1), Padding::Valid).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 2, 2, 1]);
    assert!(g.value(y).data().iter().all(|&v| v == 9.0));
}

#[test]
fn conv2d_same_stride2_halves() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::ones(&[1, 64, 64, 1]));
    let k = g.constant(Tensor::ones(&[3, 3, 1, 2]));
    let b = g.constant(Tensor::zeros(&[2]));
    let y = g.conv2d(x, k, b, (2, 2), Padding::Same).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 32, 32, 2]);
}

#[test]
fn conv2d_matches_naive_oracle() {
    let mut r = rng(11);
    for &(stride, padding) in &[((1, 1), Padding::Valid), ((2, 2), Padding::Same), ((2, 1), Padding::Same)] {
        let x = random_tensor(&mut r, &[2, 8, 8, 3]);
        let k = random_tensor(&mut r, &[3, 3, 3, 4]);
        let b = random_tensor(&mut r, &[4]);
        let want = naive_conv2d(&x, &k, &b, stride, padding);
        let mut g = Graph::new();
        let (xi, ki, bi) = (g.constant(x), g.constant(k), g.constant(b));
        let y = g.conv2d(xi, ki, bi, stride, padding).unwrap();
        assert_eq!(g.value(y).shape(), want.shape());
        for (a, b) in g.value(y).data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn conv2d_rejects_oversized_valid_kernel() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::ones(&[1, 2, 2, 1]));
    let k = g.constant(Tensor::ones(&[3, 3, 1, 1]));
    let b = g.constant(Tensor::zeros(&[1]));
    assert!(g.conv2d(x, k, b, (1, 1), Padding::Valid).is_err());
}

// ---- maxpool2d ----

#[test]
fn maxpool_picks_window_max() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_vec(vec![1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let y = g.maxpool2d(x, 2).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 1, 1, 1]);
    assert_eq!(g.value(y).data(), &[4.0]);
}

#[test]
fn maxpool_constant_input() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[1, 4, 4, 2], 0.7));
    let y = g.maxpool2d(x, 2).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.7));
}

#[test]
fn maxpool_gradient_routes_to_argmax() {
    let x = Tensor::from_vec(vec![1, 2, 2, 1], vec![0.1, 0.9, 0.3, 0.2]).unwrap().requiring_grad();
    let mut g = Graph::new();
    let xi = g.leaf(x);
    let p = g.maxpool2d(xi, 2).unwrap();
    let loss = g.sum(p);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(xi).unwrap().data(), &[0.0, 1.0, 0.0, 0.0]);

    // And the same thing numerically, away from ties.
    let point = Tensor::from_vec(vec![1, 2, 2, 1], vec![0.1, 0.9, 0.3, 0.2]).unwrap();
    let err = grad_check(
        |g, x| {
            let p = g.maxpool2d(x, 2)?;
            Ok(g.sum(p))
        },
        &point,
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-8, "err = {err}");
}

// ---- dense ----

#[test]
fn dense_identity_weight_is_identity() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_vec(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let mut eye = Tensor::zeros(&[3, 3]);
    for i in 0..3 {
        eye.set(&[i, i], 1.0);
    }
    let w = g.constant(eye);
    let b = g.constant(Tensor::zeros(&[3]));
    let y = g.dense(x, w, b).unwrap();
    assert_eq!(g.value(y).data(), g.value(x).data());
}

#[test]
fn dense_zero_weight_broadcasts_bias() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::ones(&[3, 2]));
    let w = g.constant(Tensor::zeros(&[2, 4]));
    let b = g.constant(Tensor::from_vec(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let y = g.dense(x, w, b).unwrap();
    for r in 0..3 {
        for c in 0..4 {
            assert_eq!(g.value(y).at(&[r, c]), (c + 1) as f64);
        }
    }
}

#[test]
fn dense_matches_naive_matmul() {
    let mut r = rng(5);
    let x = random_tensor(&mut r, &[4, 6]);
    let w = random_tensor(&mut r, &[6, 3]);
    let want = naive_matmul(&x, &w);
    let mut g = Graph::new();
    let (xi, wi) = (g.constant(x), g.constant(w));
    let b = g.constant(Tensor::zeros(&[3]));
    let y = g.dense(xi, wi, b).unwrap();
    for (a, b) in g.value(y).data().iter().zip(want.data()) {
        assert!((a - b).abs() < 1e-10);
    }
}

// ---- activations ----

#[test]
fn activation_values() {
    assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
    assert_eq!(Activation::LeakyRelu(0.01).apply(-1.0), -0.01);
    assert_eq!(Activation::Relu.apply(-3.0), 0.0);
    assert_eq!(Activation::Tanh.apply(0.0), 0.0);
}

#[test]
fn tanh_gradient_at_zero_is_one() {
    let point = Tensor::from_vec(vec![1], vec![0.0]).unwrap();
    let err = grad_check(
        |g, x| {
            let y = g.tanh(x);
            Ok(g.sum(y))
        },
        &point,
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-8, "err = {err}");
}

// ---- layer norm ----

#[test]
fn layer_norm_constant_row_becomes_shift() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::ones(&[1, 4]));
    let gain = g.constant(Tensor::ones(&[4]));
    let shift = g.constant(Tensor::full(&[4], 0.25));
    let y = g.layer_norm(x, gain, shift, 1e-5).unwrap();
    for &v in g.value(y).data() {
        assert!((v - 0.25).abs() < 1e-12);
    }
}

#[test]
fn layer_norm_two_points() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_vec(vec![1, 2], vec![0.0, 2.0]).unwrap());
    let gain = g.constant(Tensor::ones(&[2]));
    let shift = g.constant(Tensor::zeros(&[2]));
    let y = g.layer_norm(x, gain, shift, 1e-5).unwrap();
    assert!((g.value(y).data()[0] - -1.0).abs() < 1e-4);
    assert!((g.value(y).data()[1] - 1.0).abs() < 1e-4);
}

#[test]
fn layer_norm_standardizes_random_rows() {
    let mut r = rng(9);
    let x = random_tensor(&mut r, &[3, 32]);
    let mut g = Graph::new();
    let xi = g.constant(x);
    let gain = g.constant(Tensor::ones(&[32]));
    let shift = g.constant(Tensor::zeros(&[32]));
    let y = g.layer_norm(xi, gain, shift, 1e-5).unwrap();
    for row in 0..3 {
        let vals: Vec<f64> = (0..32).map(|j| g.value(y).at(&[row, j])).collect();
        let mean = vals.iter().sum::<f64>() / 32.0;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 32.0;
        assert!(mean.abs() <= 1e-6);
        assert!((var - 1.0).abs() <= 1e-4);
    }
}

// ---- batch norm ----

#[test]
fn batch_norm_identical_samples_zero_out() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_vec(vec![2, 3], vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0]).unwrap());
    let gamma = g.constant(Tensor::ones(&[3]));
    let beta = g.constant(Tensor::zeros(&[3]));
    let mut stats = BatchNormStats::new(3);
    let y = g.batch_norm(x, gamma, beta, &mut stats, NormMode::Train, 0.9, 1e-5).unwrap();
    assert!(g.value(y).data().iter().all(|v| v.abs() < 1e-9));
}

#[test]
fn batch_norm_infer_with_unit_stats_is_identity() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_vec(vec![2, 2], vec![0.5, -0.25, 1.0, 0.75]).unwrap());
    let gamma = g.constant(Tensor::ones(&[2]));
    let beta = g.constant(Tensor::zeros(&[2]));
    let mut stats = BatchNormStats::new(2);
    let y = g.batch_norm(x, gamma, beta, &mut stats, NormMode::Infer, 0.9, 1e-5).unwrap();
    for (a, b) in g.value(y).data().iter().zip(g.value(x).data()) {
        assert!((a - b).abs() < 1e-4);
    }
}

#[test]
fn batch_norm_train_standardizes_channels() {
    let mut r = rng(21);
    let x = random_tensor(&mut r, &[8, 4, 4, 3]);
    let mut g = Graph::new();
    let xi = g.constant(x);
    let gamma = g.constant(Tensor::ones(&[3]));
    let beta = g.constant(Tensor::zeros(&[3]));
    let mut stats = BatchNormStats::new(3);
    let y = g.batch_norm(xi, gamma, beta, &mut stats, NormMode::Train, 0.9, 1e-5).unwrap();
    let out = g.value(y);
    for c in 0..3 {
        let vals: Vec<f64> = out.data().iter().enumerate().filter(|(i, _)| i % 3 == c).map(|(_, v)| *v).collect();
        let m = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / m;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
        assert!(mean.abs() < 1e-10);
        assert!((var - 1.0).abs() < 1e-3);
    }
}

#[test]
fn batch_norm_rejects_single_sample_in_train() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::ones(&[1, 3]));
    let gamma = g.constant(Tensor::ones(&[3]));
    let beta = g.constant(Tensor::zeros(&[3]));
    let mut stats = BatchNormStats::new(3);
    let err = g.batch_norm(x, gamma, beta, &mut stats, NormMode::Train, 0.9, 1e-5);
    assert!(matches!(err, Err(TensorError::BatchTooSmall(1))));
}

// ---- dropout ----

#[test]
fn dropout_rate_zero_is_identity() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::ones(&[4]));
    let mut r = rng(0);
    let y = g.dropout(x, 0.0, NormMode::Train, &mut r).unwrap();
    assert_eq!(x, y);
}

#[test]
fn dropout_infer_is_identity() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::ones(&[4]));
    let mut r = rng(0);
    let y = g.dropout(x, 0.9, NormMode::Infer, &mut r).unwrap();
    assert_eq!(x, y);
}

#[test]
fn dropout_survivor_statistics() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::ones(&[100_000]));
    let mut r = rng(42);
    let y = g.dropout(x, 0.5, NormMode::Train, &mut r).unwrap();
    let out = g.value(y).data();
    let survivors = out.iter().filter(|&&v| v != 0.0).count() as f64 / out.len() as f64;
    assert!((survivors - 0.5).abs() < 0.01 * 0.5 / 0.5, "survivor fraction {survivors}");
    assert!((survivors - 0.5).abs() < 0.01);
    let mean = out.iter().sum::<f64>() / out.len() as f64;
    assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
}

// ---- backward ----

#[test]
fn backward_of_weighted_sum_is_the_input() {
    let x = Tensor::from_vec(vec![3], vec![2.0, -1.0, 0.5]).unwrap();
    let w = Tensor::from_vec(vec![3], vec![1.0, 1.0, 1.0]).unwrap().requiring_grad();
    let mut g = Graph::new();
    let xi = g.constant(x.clone());
    let wi = g.leaf(w);
    let prod = g.mul(wi, xi).unwrap();
    let loss = g.sum(prod);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(wi).unwrap().data(), x.data());
    // The constant never gets a gradient.
    assert!(g.grad(xi).is_none());
}

#[test]
fn unused_parameter_keeps_zero_grad() {
    let used = Parameter::new("used", Tensor::ones(&[2]));
    let unused = Parameter::new("unused", Tensor::ones(&[2]));
    let mut g = Graph::new();
    let ui = g.param(&used);
    let _ni = g.param(&unused);
    let loss = g.sum(ui);
    g.backward(loss).unwrap();
    let mut group = vec![used, unused];
    group.accumulate_grads(&g);
    assert_eq!(group[0].grad.data(), &[1.0, 1.0]);
    assert_eq!(group[1].grad.data(), &[0.0, 0.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::ones(&[2]).requiring_grad());
    assert!(matches!(g.backward(x), Err(TensorError::NonScalarLoss(_))));
}

#[test]
fn composite_conv_pool_dense_matches_finite_differences() {
    let mut r = rng(33);
    let kernel = random_tensor(&mut r, &[3, 3, 2, 4]);
    let dense_w = random_tensor(&mut r, &[4 * 2 * 2, 3]);
    let input = random_tensor(&mut r, &[1, 8, 8, 2]);
    let build = |g: &mut Graph, x: NodeId| -> Result<NodeId, TensorError> {
        let k = g.constant(kernel.clone());
        let kb = g.constant(Tensor::zeros(&[4]));
        let c = g.conv2d(x, k, kb, (2, 2), Padding::Same)?;
        let a = g.activation(c, Activation::LeakyRelu(0.01));
        let p = g.maxpool2d(a, 2)?;
        let flat = g.reshape(p, vec![1, 4 * 2 * 2])?;
        let w = g.constant(dense_w.clone());
        let b = g.constant(Tensor::zeros(&[3]));
        let d = g.dense(flat, w, b)?;
        let t = g.tanh(d);
        Ok(g.sum(t))
    };
    let err = grad_check(build, &input, 1e-5).unwrap();
    assert!(err <= 1e-4, "composite gradient error {err}");
}

// ---- grad_check itself ----

#[test]
fn grad_check_sum_of_squares() {
    let mut r = rng(1);
    let point = random_tensor(&mut r, &[10]);
    let err = grad_check(
        |g, x| {
            let sq = g.mul(x, x)?;
            Ok(g.sum(sq))
        },
        &point,
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-6, "err = {err}");
}

#[test]
fn grad_check_dense_layer() {
    let mut r = rng(2);
    let w = random_tensor(&mut r, &[5, 4]);
    let b = random_tensor(&mut r, &[4]);
    let point = random_tensor(&mut r, &[2, 5]);
    let err = grad_check(
        |g, x| {
            let wi = g.constant(w.clone());
            let bi = g.constant(b.clone());
            let y = g.dense(x, wi, bi)?;
            Ok(g.sum(y))
        },
        &point,
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-6, "err = {err}");
}

#[test]
fn grad_check_layer_norm() {
    let mut r = rng(3);
    let point = random_tensor(&mut r, &[2, 8]);
    let err = grad_check(
        |g, x| {
            let gain = g.constant(Tensor::ones(&[8]));
            let shift = g.constant(Tensor::zeros(&[8]));
            let y = g.layer_norm(x, gain, shift, 1e-5)?;
            let sq = g.mul(y, y)?;
            Ok(g.sum(sq))
        },
        &point,
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-4, "err = {err}");
}

// ---- misc ops used by the models ----

#[test]
fn logsumexp_of_two_zeros_is_ln2() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[2]));
    let y = g.logsumexp_last(x).unwrap();
    assert!((g.value(y).to_scalar().unwrap() - 2.0f64.ln()).abs() < 1e-12);
}

#[test]
fn concat_and_slice_round_trip() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let b = g.constant(Tensor::from_vec(vec![2, 1], vec![5.0, 6.0]).unwrap());
    let cat = g.concat_last(&[a, b]).unwrap();
    assert_eq!(g.value(cat).shape(), &[2, 3]);
    assert_eq!(g.value(cat).data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
    let back = g.slice_cols(cat, 0, 2).unwrap();
    assert_eq!(g.value(back).data(), &[1.0, 2.0, 3.0, 4.0]);
    let rows = g.slice_rows(cat, 1, 1).unwrap();
    assert_eq!(g.value(rows).data(), &[3.0, 4.0, 6.0]);
}

#[test]
fn gather_rows_repeats_and_accumulates_grad() {
    let x = Tensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap().requiring_grad();
    let mut g = Graph::new();
    let xi = g.leaf(x);
    let picked = g.gather_rows(xi, vec![0, 0, 1]).unwrap();
    assert_eq!(g.value(picked).shape(), &[3, 2]);
    let loss = g.sum(picked);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(xi).unwrap().data(), &[2.0, 2.0, 1.0, 1.0]);
}

#[test]
fn upsample_then_sum_gradient_counts_block() {
    let x = Tensor::from_vec(vec![1, 1, 1, 1], vec![3.0]).unwrap().requiring_grad();
    let mut g = Graph::new();
    let xi = g.leaf(x);
    let up = g.upsample2d(xi, 2).unwrap();
    assert_eq!(g.value(up).shape(), &[1, 2, 2, 1]);
    let loss = g.sum(up);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(xi).unwrap().data(), &[4.0]);
}

#[test]
fn forward_is_deterministic_under_a_seed() {
    let run = || {
        let mut r = rng(77);
        let x = random_tensor(&mut r, &[2, 6, 6, 2]);
        let k = random_tensor(&mut r, &[3, 3, 2, 3]);
        let mut g = Graph::new();
        let xi = g.constant(x);
        let ki = g.constant(k);
        let b = g.constant(Tensor::zeros(&[3]));
        let c = g.conv2d(xi, ki, b, (1, 1), Padding::Same).unwrap();
        let d = g.dropout(c, 0.3, NormMode::Train, &mut r).unwrap();
        g.value(d).data().to_vec()
    };
    assert_eq!(run(), run());
}
