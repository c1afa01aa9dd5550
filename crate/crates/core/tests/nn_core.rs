mod common;

use common::{grad_check, random_param, random_vec, rng};
use convtts::nn::ops::{self, TimeMask};
use convtts::nn::{
    BatchNorm1d, Conv1d, Embedding, GatedResidualBlock, GatedStack, Linear, Module, PlainResidualBlock, Shape,
    Tensor,
};
use convtts::Error;

/// Direct sliding-window convolution with zero padding.
fn conv_oracle(x: &Tensor, w: &[f32], bias: &[f32], out_ch: usize, k: usize, dil: usize, causal: bool) -> Vec<f32> {
    let s = x.shape();
    let reach = (k - 1) * dil;
    let left = if causal { reach } else { reach / 2 } as isize;
    let mut y = vec![0.0f32; s.batch * out_ch * s.time];
    for b in 0..s.batch {
        for o in 0..out_ch {
            for t in 0..s.time {
                let mut acc = bias[o] as f64;
                for i in 0..s.channels {
                    for kk in 0..k {
                        let src = t as isize + (kk * dil) as isize - left;
                        if src >= 0 && (src as usize) < s.time {
                            acc += w[(o * s.channels + i) * k + kk] as f64 * x.at(b, i, src as usize) as f64;
                        }
                    }
                }
                y[(b * out_ch + o) * s.time + t] = acc as f32;
            }
        }
    }
    y
}

fn conv_from(w: Vec<f32>, b: Vec<f32>, out: usize, inp: usize, k: usize, dil: usize, causal: bool) -> Conv1d {
    Conv1d::from_parts(
        Tensor::parameter(Shape::new(out, inp, k), w),
        Tensor::parameter(Shape::new(1, out, 1), b),
        dil,
        causal,
    )
}

#[test]
fn conv_identity_kernel() {
    let conv = conv_from(vec![1.0], vec![0.0], 1, 1, 1, 1, false);
    let x = Tensor::new(Shape::new(2, 1, 5), vec![1.0, -2.0, 3.5, 0.0, 9.0, 4.0, 4.0, -1.0, 0.25, 7.0]);
    assert_eq!(conv.forward(&x).unwrap().to_vec(), x.to_vec());
}

#[test]
fn causal_impulse_response_starts_at_impulse() {
    let mut r = rng(1);
    let conv = conv_from(random_vec(&mut r, 3, 1.0), vec![0.0], 1, 1, 3, 2, true);
    let mut x = vec![0.0; 12];
    x[5] = 1.0;
    let y = conv.forward(&Tensor::new(Shape::new(1, 1, 12), x)).unwrap().to_vec();
    assert!(y[..5].iter().all(|&v| v == 0.0));
    assert!(y[5] != 0.0);
}

#[test]
fn dilated_sum_matches_sliding_window() {
    let conv = conv_from(vec![1.0; 3], vec![0.0], 1, 1, 3, 3, false);
    let input = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
    let y = conv.forward(&Tensor::new(Shape::new(1, 1, 7), input.clone())).unwrap().to_vec();
    let get = |i: isize| if (0..7).contains(&i) { input[i as usize] } else { 0.0 };
    let want: Vec<f32> = (0..7isize).map(|t| get(t - 3) + get(t) + get(t + 3)).collect();
    assert_eq!(y, want);
    assert_eq!(want, vec![5.0, 7.0, 9.0, 12.0, 7.0, 9.0, 11.0]);
}

#[test]
fn conv_matches_oracle_on_random_geometries() {
    let mut r = rng(2);
    for &(b, cin, cout, t, k, d, causal) in &[
        (2, 3, 4, 9, 3, 1, false),
        (3, 2, 5, 17, 3, 4, true),
        (1, 4, 2, 6, 5, 2, false),
        (2, 5, 3, 3, 3, 9, true),
        (2, 2, 2, 8, 2, 3, false),
    ] {
        let w = random_vec(&mut r, cout * cin * k, 1.0);
        let bias = random_vec(&mut r, cout, 1.0);
        let conv = conv_from(w.clone(), bias.clone(), cout, cin, k, d, causal);
        let x = Tensor::new(Shape::new(b, cin, t), random_vec(&mut r, b * cin * t, 1.0));
        let y = conv.forward(&x).unwrap().to_vec();
        let want = conv_oracle(&x, &w, &bias, cout, k, d, causal);
        for (a, e) in y.iter().zip(&want) {
            assert!((a - e).abs() < 1e-5, "{a} vs {e}");
        }
    }
}

#[test]
fn conv_rejects_bad_inputs() {
    let conv = conv_from(vec![1.0; 6], vec![0.0], 1, 2, 3, 1, false);
    let x = Tensor::zeros(Shape::new(1, 3, 4));
    assert!(matches!(conv.forward(&x), Err(Error::Shape(_))));
    let bad = conv_from(vec![f32::NAN; 6], vec![0.0], 1, 2, 3, 1, false);
    assert!(matches!(bad.forward(&Tensor::zeros(Shape::new(1, 2, 4))), Err(Error::NonFinite(_))));
}

#[test]
fn gated_block_with_zero_weights_is_identity() {
    let mut r = rng(3);
    let block = GatedResidualBlock::new(&mut r, 4, 8, 3, 2, true).unwrap();
    for (_, t) in block.parameters() {
        t.data_mut().fill(0.0);
    }
    let x = Tensor::new(Shape::new(2, 4, 7), random_vec(&mut r, 56, 2.0));
    let (res, skip) = block.forward(&x, None).unwrap();
    assert_eq!(res.to_vec(), x.to_vec());
    assert!(skip.data().iter().all(|&v| v == 0.0));
}

#[test]
fn gated_block_tanh_zero_annihilates_gate() {
    // filter and gate pre-activations both 0: tanh(0) * sigmoid(0) = 0.
    let conv = conv_from(vec![0.0; 2], vec![0.0, 0.0], 2, 1, 1, 1, true);
    let proj = conv_from(vec![0.8], vec![0.0], 1, 1, 1, 1, false);
    let block = GatedResidualBlock::from_parts(conv, proj).unwrap();
    let x = Tensor::new(Shape::new(1, 1, 1), vec![0.3]);
    let (res, skip) = block.forward(&x, None).unwrap();
    assert_eq!(skip.to_vec(), vec![0.0]);
    assert_eq!(res.to_vec(), vec![0.3]);
}

#[test]
fn gated_block_rejects_odd_gate() {
    let mut r = rng(4);
    assert!(GatedResidualBlock::new(&mut r, 4, 7, 3, 1, false).is_err());
}

#[test]
fn gated_block_matches_compositional_oracle() {
    let mut r = rng(5);
    let (res_ch, gate_ch, k, d) = (3, 6, 3, 2);
    let block = GatedResidualBlock::new(&mut r, res_ch, gate_ch, k, d, false).unwrap();
    let x = Tensor::new(Shape::new(2, res_ch, 10), random_vec(&mut r, 60, 1.0));
    let (res, skip) = block.forward(&x, None).unwrap();

    let h = conv_oracle(&x, &block.conv.weight.to_vec(), &block.conv.bias.to_vec(), gate_ch, k, d, false);
    let half = gate_ch / 2;
    let hs = Shape::new(2, gate_ch, 10);
    let mut z = vec![0.0f32; 2 * half * 10];
    for b in 0..2 {
        for c in 0..half {
            for t in 0..10 {
                let f = h[hs.index(b, c, t)] as f64;
                let g = h[hs.index(b, c + half, t)] as f64;
                z[(b * half + c) * 10 + t] = (f.tanh() / (1.0 + (-g).exp())) as f32;
            }
        }
    }
    let zt = Tensor::new(Shape::new(2, half, 10), z);
    let proj = conv_oracle(
        &zt,
        &block.projection.weight.to_vec(),
        &block.projection.bias.to_vec(),
        res_ch,
        1,
        1,
        false,
    );
    for (i, (s, p)) in skip.data().iter().zip(&proj).enumerate() {
        assert!((s - p).abs() < 1e-6);
        assert!((res.data()[i] - (x.data()[i] + p)).abs() < 1e-6);
    }
}

#[test]
fn batch_norm_fixed_point() {
    // Exactly zero-mean, unit-variance channels.
    let row = [1.0f32, -1.0, 1.0, -1.0, 2.0f32.sqrt(), -(2.0f32.sqrt()), 0.0, 0.0];
    let mut data = Vec::new();
    for _ in 0..2 {
        data.extend_from_slice(&row);
    }
    let x = Tensor::new(Shape::new(1, 2, 8), data);
    let bn = BatchNorm1d::new(2);
    let y = bn.forward(&x, None, true).unwrap();
    for (a, b) in y.data().iter().zip(x.data().iter()) {
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn batch_norm_constant_channel_yields_shift() {
    let x = Tensor::full(Shape::new(2, 1, 5), 3.7);
    let bn = BatchNorm1d::new(1);
    bn.beta.data_mut()[0] = 0.25;
    let y = bn.forward(&x, None, true).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.25));
}

#[test]
fn batch_norm_moments_oracle() {
    let mut r = rng(6);
    let x = Tensor::new(Shape::new(2, 3, 8), random_vec(&mut r, 48, 3.0).iter().map(|v| v + 1.5).collect());
    let y = BatchNorm1d::new(3).forward(&x, None, true).unwrap();
    for c in 0..3 {
        let vals: Vec<f64> = (0..2).flat_map(|b| (0..8).map(move |t| (b, t))).map(|(b, t)| y.at(b, c, t) as f64).collect();
        let mean = vals.iter().sum::<f64>() / 16.0;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-6, "mean {mean}");
        assert!((var - 1.0).abs() < 1e-4, "var {var}");
    }
}

#[test]
fn batch_norm_train_needs_two_frames() {
    let bn = BatchNorm1d::new(1);
    assert!(bn.forward(&Tensor::zeros(Shape::new(1, 1, 1)), None, true).is_err());
}

#[test]
fn batch_norm_eval_is_deterministic_affine() {
    let mut r = rng(7);
    let bn = BatchNorm1d::new(2);
    for _ in 0..3 {
        let x = Tensor::new(Shape::new(2, 2, 6), random_vec(&mut r, 24, 2.0));
        bn.forward(&x, None, true).unwrap();
    }
    let x = Tensor::new(Shape::new(1, 2, 6), random_vec(&mut r, 12, 2.0));
    let a = bn.forward(&x, None, false).unwrap().to_vec();
    let b = bn.forward(&x, None, false).unwrap().to_vec();
    assert_eq!(a, b);
    let (rm, rv) = (bn.running_mean.to_vec(), bn.running_var.to_vec());
    for c in 0..2 {
        for t in 0..6 {
            let want = (x.at(0, c, t) - rm[c]) / (rv[c] + 1e-5).sqrt();
            assert!((a[c * 6 + t] - want).abs() < 1e-6);
        }
    }
}

#[test]
fn linear_identity_and_oracle() {
    let mut r = rng(8);
    let lin = Linear::new(&mut r, 3, 3);
    lin.weight.data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    lin.bias.data_mut().fill(0.0);
    let x = Tensor::new(Shape::new(2, 3, 4), random_vec(&mut r, 24, 1.0));
    assert_eq!(lin.forward(&x).unwrap().to_vec(), x.to_vec());

    let lin = Linear::new(&mut r, 4, 5);
    let x = Tensor::new(Shape::new(2, 4, 3), random_vec(&mut r, 24, 1.0));
    let y = lin.forward(&x).unwrap();
    let (w, b) = (lin.weight.to_vec(), lin.bias.to_vec());
    for bi in 0..2 {
        for t in 0..3 {
            for o in 0..5 {
                let want: f64 = b[o] as f64 + (0..4).map(|i| w[o * 4 + i] as f64 * x.at(bi, i, t) as f64).sum::<f64>();
                assert!((y.at(bi, o, t) as f64 - want).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn embedding_lookup_and_range() {
    let mut r = rng(9);
    let emb = Embedding::new(&mut r, 3, 3, 1.0);
    emb.table.data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    let y = emb.forward(&[2, 0], 1, 2).unwrap();
    // (1, dim, len): column n is the row of ids[n]
    assert_eq!(y.to_vec(), vec![0.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
    assert!(matches!(emb.forward(&[3], 1, 1), Err(Error::InvalidArgument(_))));
}

#[test]
fn linear_function_gradient_is_input() {
    let x = vec![0.5, -1.25, 3.0, 2.0];
    let w = Tensor::parameter(Shape::new(1, 1, 4), vec![0.1, 0.2, 0.3, 0.4]);
    let xt = Tensor::new(Shape::new(1, 1, 4), x.clone());
    let loss = ops::weighted_sum(&ops::mul(&w, &xt), &[1.0; 4]);
    loss.backward().unwrap();
    assert_eq!(w.grad().unwrap(), x);
}

#[test]
fn unused_parameter_gets_zero_gradient() {
    let a = Tensor::parameter(Shape::new(1, 1, 2), vec![1.0, 2.0]);
    let unused = Tensor::parameter(Shape::new(1, 1, 2), vec![3.0, 4.0]);
    let loss = ops::weighted_sum(&ops::tanh(&a), &[1.0, 1.0]);
    loss.backward().unwrap();
    assert!(a.grad().is_some());
    assert!(unused.grad().unwrap_or(vec![0.0; 2]).iter().all(|&g| g == 0.0));
}

#[test]
fn backward_errors() {
    let a = Tensor::parameter(Shape::new(1, 1, 2), vec![1.0, 2.0]);
    let y = ops::tanh(&a);
    assert!(matches!(y.backward(), Err(Error::Autograd(_))));
    let loss = ops::weighted_sum(&y, &[1.0, 1.0]);
    loss.backward().unwrap();
    assert!(matches!(loss.backward(), Err(Error::Autograd(_))));
    // re-recording works
    let loss = ops::weighted_sum(&ops::tanh(&a), &[1.0, 1.0]);
    loss.backward().unwrap();
}

#[test]
fn mae_of_sigmoid_conv_matches_finite_differences() {
    let mut r = rng(10);
    let w = random_param(&mut r, Shape::new(1, 1, 3), 0.8);
    let b = random_param(&mut r, Shape::new(1, 1, 1), 0.3);
    let x = Tensor::new(Shape::new(1, 1, 12), random_vec(&mut r, 12, 1.0));
    // Targets sit 0.05 off the initial outputs: far from the |.| kink for a
    // step of 1e-3, and close enough that the f32 loss keeps its precision.
    let y0 = ops::sigmoid(&ops::conv1d(&x, &w, &b, 2, false).unwrap()).to_vec();
    let target: Vec<f32> = y0.iter().enumerate().map(|(i, v)| if i % 2 == 0 { v - 0.05 } else { v + 0.05 }).collect();
    let weights = vec![1.0 / 12.0; 12];
    let err = grad_check(
        &[w.clone(), b.clone()],
        || ops::l1_loss(&ops::sigmoid(&ops::conv1d(&x, &w, &b, 2, false).unwrap()), &target, &weights),
        1e-3,
    );
    assert!(err < 1e-3, "relative error {err}");
}

#[test]
fn causal_stack_ignores_future_frames() {
    let mut r = rng(11);
    let stack = GatedStack::new(&mut r, 4, 8, 3, &[1, 3, 9, 27, 1, 3], true).unwrap();
    let base = random_vec(&mut r, 4 * 40, 1.0);
    let y0 = stack.forward(&Tensor::new(Shape::new(1, 4, 40), base.clone()), None).unwrap();
    for t in [0usize, 13, 39] {
        let mut p = base.clone();
        for c in 0..4 {
            p[c * 40 + t] += 0.7;
        }
        let y1 = stack.forward(&Tensor::new(Shape::new(1, 4, 40), p), None).unwrap();
        for c in 0..4 {
            for s in 0..t {
                assert_eq!(y0.at(0, c, s), y1.at(0, c, s), "frame {s} changed by perturbing {t}");
            }
        }
    }
}

/// Support of d(out_t)/d(in_s) over s, measured by back-propagation.
fn gradient_support(stack: &GatedStack, channels: usize, time: usize, t: usize) -> Vec<usize> {
    let x = Tensor::parameter(Shape::new(1, channels, time), vec![0.3; channels * time]);
    let y = stack.forward(&x, None).unwrap();
    let mut w = vec![0.0; channels * time];
    for c in 0..channels {
        w[c * time + t] = 1.0;
    }
    ops::weighted_sum(&y, &w).backward().unwrap();
    let g = x.grad().unwrap();
    (0..time).filter(|&s| (0..channels).any(|c| g[c * time + s] != 0.0)).collect()
}

#[test]
fn measured_receptive_field_matches_dilation_sum() {
    let mut r = rng(12);
    let dil = [1, 3, 9, 27, 1, 3, 9, 27, 1, 1, 1, 1, 1, 1];
    let stack = GatedStack::new(&mut r, 2, 4, 3, &dil, true).unwrap();
    let analytic = 1 + dil.iter().map(|d| 2 * d).sum::<usize>();
    assert_eq!(stack.receptive_field(), analytic);
    let time = analytic + 20;
    let t = time - 1;
    let support = gradient_support(&stack, 2, time, t);
    assert_eq!(support.len(), analytic);
    assert_eq!(*support.first().unwrap(), t + 1 - analytic);
    assert_eq!(*support.last().unwrap(), t);
}

#[test]
fn layer_gradients_match_finite_differences() {
    let mut r = rng(13);
    for causal in [false, true] {
        let conv = Conv1d::new(&mut r, 3, 4, 3, 2, causal);
        let x = random_param(&mut r, Shape::new(2, 3, 8), 1.0);
        let proj = random_vec(&mut r, 2 * 4 * 8, 1.0);
        let mut params = conv.parameters().into_iter().map(|(_, t)| t).collect::<Vec<_>>();
        params.push(x.clone());
        let err = grad_check(&params, || ops::weighted_sum(&conv.forward(&x).unwrap(), &proj), 1e-3);
        assert!(err < 1e-3, "conv causal={causal}: {err}");
    }

    let block = GatedResidualBlock::new(&mut r, 4, 8, 3, 3, true).unwrap();
    let x = random_param(&mut r, Shape::new(2, 4, 8), 1.0);
    let (p1, p2) = (random_vec(&mut r, 64, 1.0), random_vec(&mut r, 64, 1.0));
    let mut params: Vec<Tensor> = block.parameters().into_iter().map(|(_, t)| t).collect();
    params.push(x.clone());
    let err = grad_check(
        &params,
        || {
            let (res, skip) = block.forward(&x, None).unwrap();
            ops::add(&ops::weighted_sum(&res, &p1), &ops::weighted_sum(&skip, &p2))
        },
        1e-3,
    );
    assert!(err < 1e-3, "gated block: {err}");

    let block = PlainResidualBlock::new(&mut r, 4, 3, 2);
    block.norm.gamma.data_mut().copy_from_slice(&random_vec(&mut r, 4, 1.0));
    let x = random_param(&mut r, Shape::new(2, 4, 8), 1.0);
    let mask = TimeMask::from_lengths(&[8, 6], 8);
    let proj = random_vec(&mut r, 64, 1.0);
    let mut params: Vec<Tensor> = block.parameters().into_iter().map(|(_, t)| t).collect();
    params.push(x.clone());
    let err = grad_check(
        &params,
        || ops::weighted_sum(&block.forward(&x, Some(&mask), true).unwrap(), &proj),
        1e-3,
    );
    assert!(err < 1e-3, "plain block (train): {err}");
    let err = grad_check(
        &params,
        || ops::weighted_sum(&block.forward(&x, None, false).unwrap(), &proj),
        1e-3,
    );
    assert!(err < 1e-3, "plain block (eval): {err}");

    let emb = Embedding::new(&mut r, 5, 3, 1.0);
    let lin = Linear::new(&mut r, 3, 2);
    let proj = random_vec(&mut r, 2 * 2 * 4, 1.0);
    let ids = [1, 4, 4, 0, 2, 3, 1, 1];
    let params = vec![emb.table.clone(), lin.weight.clone(), lin.bias.clone()];
    let err = grad_check(
        &params,
        || ops::weighted_sum(&ops::relu(&lin.forward(&emb.forward(&ids, 2, 4).unwrap()).unwrap()), &proj),
        1e-3,
    );
    assert!(err < 1e-3, "embedding+linear: {err}");
}

#[test]
fn masked_softmax_attention_gradients() {
    let mut r = rng(14);
    let keys = random_param(&mut r, Shape::new(2, 4, 5), 1.0);
    let queries = random_param(&mut r, Shape::new(2, 4, 7), 1.0);
    let values = random_param(&mut r, Shape::new(2, 3, 5), 1.0);
    let mut allowed = vec![true; 2 * 5 * 7];
    for t in 0..7 {
        allowed[(5 + 4) * 7 + t] = false; // item 1, phoneme 4 padded
    }
    let allowed = std::rc::Rc::new(allowed);
    let proj = random_vec(&mut r, 2 * 3 * 7, 1.0);
    let err = grad_check(
        &[keys.clone(), queries.clone(), values.clone()],
        || {
            let logits = ops::matmul(&keys, true, &queries, false).unwrap();
            let a = ops::softmax_channels(&ops::scale(&logits, 0.5), Some(allowed.clone()));
            ops::weighted_sum(&ops::matmul(&values, false, &a, false).unwrap(), &proj)
        },
        1e-3,
    );
    assert!(err < 1e-3, "attention: {err}");
    let a = ops::softmax_channels(&ops::matmul(&keys, true, &queries, false).unwrap(), Some(allowed));
    for t in 0..7 {
        assert_eq!(a.at(1, 4, t), 0.0);
        let col: f32 = (0..5).map(|n| a.at(1, n, t)).sum();
        assert!((col - 1.0).abs() < 1e-6);
    }
}

#[test]
fn loss_gradients_match_finite_differences() {
    let mut r = rng(15);
    let p = random_param(&mut r, Shape::new(2, 3, 4), 2.0);
    let target = random_vec(&mut r, 24, 2.0);
    let w = vec![1.0 / 24.0; 24];
    let err = grad_check(&[p.clone()], || ops::huber_loss(&p, &target, &w, 1.0), 1e-3);
    assert!(err < 1e-3, "huber: {err}");
    let err = grad_check(&[p.clone()], || ops::l1_loss(&p, &target, &w), 1e-3);
    assert!(err < 1e-3, "mae: {err}");
}

#[test]
fn huber_piecewise_values() {
    assert_eq!(ops::huber(0.5, 1.0), 0.125);
    assert_eq!(ops::huber(2.0, 1.0), 1.5);
    assert_eq!(ops::huber(-2.0, 1.0), 1.5);
}

#[test]
fn no_grad_records_nothing() {
    let a = Tensor::parameter(Shape::new(1, 1, 2), vec![1.0, 2.0]);
    let y = convtts::nn::no_grad(|| ops::tanh(&a));
    assert!(!y.requires_grad());
}

#[test]
fn inference_block_matches_recorded_composition() {
    let mut r = rng(16);
    for (batch, time, dil) in [(1usize, 9usize, 1usize), (3, 300, 4), (2, 611, 8)] {
        let block = PlainResidualBlock::new(&mut r, 6, 3, dil);
        block.norm.gamma.data_mut().copy_from_slice(&random_vec(&mut r, 6, 1.0));
        block.norm.beta.data_mut().copy_from_slice(&random_vec(&mut r, 6, 1.0));
        block.norm.running_mean.data_mut().copy_from_slice(&random_vec(&mut r, 6, 0.3));
        block.norm.running_var.data_mut().iter_mut().for_each(|v| *v = 1.5);
        let x = Tensor::new(Shape::new(batch, 6, time), random_vec(&mut r, batch * 6 * time, 1.0));
        let lengths: Vec<usize> = (0..batch).map(|b| time - 7 * b).collect();
        let mask = TimeMask::from_lengths(&lengths, time);
        for m in [None, Some(&mask)] {
            let recorded = block.forward(&x, m, false).unwrap();
            assert!(!recorded.is_leaf());
            let fused = convtts::nn::no_grad(|| block.forward(&x, m, false)).unwrap();
            assert_eq!(recorded.to_vec(), fused.to_vec());
        }
    }
}
