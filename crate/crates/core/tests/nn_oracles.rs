mod common;

use carddeck::nn::{
    checkpoint, Layer, LrSchedule, Mask, Network, Precision, Sgd, SgdRun, WeightLearner,
};
use carddeck::Tensor;
use common::{conv, dense, rng, tensor};

/// Straightforward f64 re-implementation of the forward pass, one sample at a time.
#[derive(Clone)]
enum Op {
    Dense {
        w: Vec<f64>,
        b: Vec<f64>,
        o: usize,
        i: usize,
    },
    Conv {
        w: Vec<f64>,
        b: Vec<f64>,
        o: usize,
        i: usize,
        k: usize,
        s: usize,
        p: usize,
    },
    Relu,
    Pool,
}

fn to_ops(net: &Network) -> Vec<Op> {
    net.layers()
        .iter()
        .filter_map(|l| match l {
            Layer::Dense(p) => Some(Op::Dense {
                w: p.effective_weight().iter().map(|&v| v as f64).collect(),
                b: p.bias
                    .as_ref()
                    .unwrap()
                    .data()
                    .iter()
                    .map(|&v| v as f64)
                    .collect(),
                o: p.weight.shape()[0],
                i: p.weight.shape()[1],
            }),
            Layer::Conv2d {
                params: p,
                stride,
                padding,
            } => Some(Op::Conv {
                w: p.effective_weight().iter().map(|&v| v as f64).collect(),
                b: p.bias
                    .as_ref()
                    .unwrap()
                    .data()
                    .iter()
                    .map(|&v| v as f64)
                    .collect(),
                o: p.weight.shape()[0],
                i: p.weight.shape()[1],
                k: p.weight.shape()[2],
                s: *stride,
                p: *padding,
            }),
            Layer::Relu => Some(Op::Relu),
            Layer::GlobalAvgPool => Some(Op::Pool),
            Layer::SoftmaxOutput => None,
        })
        .collect()
}

fn oracle_forward(ops: &[Op], x: &[f64], mut shape: Vec<usize>) -> Vec<f64> {
    let mut x = x.to_vec();
    for op in ops {
        match op {
            Op::Dense { w, b, o, i } => {
                assert_eq!(x.len(), *i);
                x = (0..*o)
                    .map(|r| b[r] + (0..*i).map(|c| w[r * i + c] * x[c]).sum::<f64>())
                    .collect();
                shape = vec![*o];
            }
            Op::Conv {
                w,
                b,
                o,
                i,
                k,
                s,
                p,
            } => {
                let (h, wd) = (shape[1], shape[2]);
                let oh = (h + 2 * p - k) / s + 1;
                let ow = (wd + 2 * p - k) / s + 1;
                let mut out = vec![0.0; o * oh * ow];
                for oc in 0..*o {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let mut acc = b[oc];
                            for ic in 0..*i {
                                for ky in 0..*k {
                                    for kx in 0..*k {
                                        let iy = (y * s + ky) as i64 - *p as i64;
                                        let ix = (xx * s + kx) as i64 - *p as i64;
                                        if iy < 0 || ix < 0 || iy >= h as i64 || ix >= wd as i64 {
                                            continue;
                                        }
                                        acc += w[((oc * i + ic) * k + ky) * k + kx]
                                            * x[(ic * h + iy as usize) * wd + ix as usize];
                                    }
                                }
                            }
                            out[(oc * oh + y) * ow + xx] = acc;
                        }
                    }
                }
                x = out;
                shape = vec![*o, oh, ow];
            }
            Op::Relu => x.iter_mut().for_each(|v| *v = v.max(0.0)),
            Op::Pool => {
                let (c, hw) = (shape[0], shape[1] * shape[2]);
                x = (0..c)
                    .map(|ch| x[ch * hw..(ch + 1) * hw].iter().sum::<f64>() / hw as f64)
                    .collect();
                shape = vec![c];
            }
        }
    }
    x
}

fn oracle_loss(ops: &[Op], batch: &Tensor, labels: &[usize], shape: &[usize]) -> f64 {
    let mut total = 0.0;
    for (n, &l) in labels.iter().enumerate() {
        let x: Vec<f64> = batch.row(n).iter().map(|&v| v as f64).collect();
        let z = oracle_forward(ops, &x, shape.to_vec());
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - z[l];
    }
    total / labels.len() as f64
}

fn conv_net(seed: u64) -> Network {
    let mut r = rng(seed);
    Network::new(
        vec![2, 6, 5],
        vec![
            conv(2, 3, 3, 1, 1, &mut r),
            Layer::Relu,
            conv(3, 2, 3, 2, 0, &mut r),
            Layer::Relu,
            Layer::GlobalAvgPool,
            dense(2, 3, &mut r),
            Layer::SoftmaxOutput,
        ],
    )
    .unwrap()
}

fn mlp_net(seed: u64) -> Network {
    let mut r = rng(seed);
    Network::new(
        vec![7],
        vec![
            dense(7, 5, &mut r),
            Layer::Relu,
            dense(5, 4, &mut r),
            Layer::SoftmaxOutput,
        ],
    )
    .unwrap()
}

fn assert_forward_matches(net: &Network, seed: u64) {
    let mut r = rng(seed);
    let mut shape = vec![4];
    shape.extend_from_slice(net.input_shape());
    let batch = tensor(&mut r, shape);
    let logits = net.forward(&batch).unwrap();
    let ops = to_ops(net);
    for n in 0..4 {
        let x: Vec<f64> = batch.row(n).iter().map(|&v| v as f64).collect();
        let want = oracle_forward(&ops, &x, net.input_shape().to_vec());
        for (a, b) in logits.row(n).iter().zip(&want) {
            assert!(
                (*a as f64 - b).abs() <= 1e-5 * (1.0 + b.abs()),
                "{a} vs {b}"
            );
        }
    }
}

#[test]
fn forward_matches_naive_matmul_and_conv() {
    for seed in 0..5 {
        assert_forward_matches(&mlp_net(seed), seed + 100);
        assert_forward_matches(&conv_net(seed), seed + 200);
    }
}

#[test]
fn masked_forward_uses_zeroed_weights() {
    let mut net = conv_net(3);
    for (_, p) in net.prunable_mut() {
        let keep = (0..p.len()).map(|i| i % 3 != 0).collect();
        p.set_mask(Mask::from_keep(keep)).unwrap();
    }
    assert_forward_matches(&net, 9);
}

/// Central differences of the f64 oracle loss against the analytic gradient.
fn gradient_check(mut net: Network, seed: u64) {
    let mut r = rng(seed);
    let mut shape = vec![5];
    shape.extend_from_slice(net.input_shape());
    let batch = tensor(&mut r, shape);
    let classes = net.num_classes();
    let labels: Vec<usize> = (0..5).map(|n| n % classes).collect();
    let (_, grads) = net.loss_and_grads(&batch, &labels).unwrap();
    let input_shape = net.input_shape().to_vec();
    let h = 1e-6;
    let idxs: Vec<usize> = net.prunable().map(|(i, _)| i).collect();
    let base_ops = to_ops(&net);
    // Position of each prunable layer within the oracle op list.
    let op_pos: Vec<usize> = base_ops
        .iter()
        .enumerate()
        .filter(|(_, o)| matches!(o, Op::Dense { .. } | Op::Conv { .. }))
        .map(|(k, _)| k)
        .collect();
    for (slot, &idx) in idxs.iter().enumerate() {
        let g = grads[idx].as_ref().unwrap();
        let n_w = g.weight.len();
        let n_b = g.bias.as_ref().map_or(0, |b| b.len());
        for k in 0..n_w + n_b {
            let loss_at = |delta: f64| {
                let mut ops = base_ops.clone();
                match &mut ops[op_pos[slot]] {
                    Op::Dense { w, b, .. } | Op::Conv { w, b, .. } => {
                        if k < n_w {
                            w[k] += delta;
                        } else {
                            b[k - n_w] += delta;
                        }
                    }
                    _ => unreachable!(),
                }
                oracle_loss(&ops, &batch, &labels, &input_shape)
            };
            let numeric = (loss_at(h) - loss_at(-h)) / (2.0 * h);
            let analytic = if k < n_w {
                g.weight[k]
            } else {
                g.bias.as_ref().unwrap()[k - n_w]
            } as f64;
            assert!(
                (numeric - analytic).abs() <= 2e-4 + 1e-3 * numeric.abs(),
                "layer {idx} param {k}: numeric {numeric} analytic {analytic}"
            );
        }
    }
    // Keep the network alive through the closure borrows above.
    net.layers_mut();
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..3 {
        gradient_check(mlp_net(seed), 10 + seed);
        gradient_check(conv_net(seed), 20 + seed);
    }
}

#[test]
fn sgd_step_follows_momentum_formula() {
    let mut opt = Sgd::new(0.9, 0.01).unwrap();
    let mut w = vec![1.0f32, -2.0, 0.5];
    let g = [0.1f32, 0.2, -0.3];
    let mask = Mask::from_keep(vec![true, false, true]);
    let mut v = [0.0f32; 3];
    let mut want = w.clone();
    for _ in 0..3 {
        opt.step_slot(0, &mut w, &g, 0.1, Some(&mask));
        for i in [0, 2] {
            v[i] = 0.9 * v[i] + (g[i] + 0.01 * want[i]);
            want[i] -= 0.1 * v[i];
        }
    }
    assert_eq!(w, want);
    assert_eq!(w[1], -2.0);
    assert_eq!(opt.velocity(0).unwrap()[1], 0.0);
}

#[test]
fn checkpoint_roundtrip_is_exact() {
    let mut net = conv_net(4);
    for (k, (_, p)) in net.prunable_mut().enumerate() {
        let keep = (0..p.len()).map(|i| (i + k) % 2 == 0).collect();
        p.set_mask(Mask::from_keep(keep)).unwrap();
        p.scores = Some(Tensor::new(p.weight.shape().to_vec(), vec![0.25; p.len()]).unwrap());
    }
    let (_, p) = net.prunable_mut().next().unwrap();
    let alpha = 0.123456789012345_f64;
    let a = alpha as f32;
    p.weight
        .data_mut()
        .iter_mut()
        .enumerate()
        .for_each(|(i, w)| *w = if i % 2 == 0 { a } else { -a });
    p.precision = Precision::Binary1 { alpha };
    let bytes = checkpoint::encode(&net);
    let back = checkpoint::decode(&bytes).unwrap();
    assert_eq!(back, net);
    assert_eq!(checkpoint::encode(&back), bytes);
    assert!(checkpoint::decode(&bytes[..bytes.len() - 3]).is_err());
}

#[test]
fn training_ranges_replay_exactly() {
    let (data, _) = common::toy_data(200, 4, 6, 1);
    let net = common::toy_mlp(&data, &[8], 2);
    let lr = LrSchedule::step160(0.05, 3.0);
    let run = SgdRun::new(&data, &lr, 16, 5).unwrap();
    let total = 3 * run.iterations_per_epoch();
    let fresh = || WeightLearner {
        net: net.clone(),
        opt: Sgd::new(0.9, 1e-4).unwrap(),
    };
    let mut whole = fresh();
    let log = run.run(&mut whole, 0..total, |_, _| Ok(())).unwrap();
    let mut split = fresh();
    let mut a = run.run(&mut split, 0..17, |_, _| Ok(())).unwrap();
    a.extend(run.run(&mut split, 17..total, |_, _| Ok(())).unwrap());
    assert_eq!(a, log);
    assert_eq!(split.net, whole.net);
    assert_eq!(log.lrs[0], 0.05);
    assert!((log.lrs[total - 1] - 0.0005).abs() < 1e-15);
}
