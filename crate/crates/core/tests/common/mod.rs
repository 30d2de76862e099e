#![allow(dead_code)]

use aev_core::data::{generate_synthetic, DataSplit, LabeledDataset, Split, SyntheticSpec};
use aev_core::nn::{train, Dense, GradientHead, Layer, Network, NetworkBuilder};
use aev_core::schemes::base_train_config;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-3;
pub const FD_TOL: f64 = 1e-3;
/// Gradients below this magnitude are compared on an absolute scale.
pub const FD_FLOOR: f64 = 1e-3;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FD_FLOOR)
}

/// Small random network: an MLP or a conv / pool stack, depending on the seed.
pub fn random_net(seed: u64) -> Network<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = rng.random_range(2..=4);
    if seed.is_multiple_of(2) {
        let input = rng.random_range(2..=7);
        let mut b = NetworkBuilder::new(&[input]);
        for _ in 0..rng.random_range(1..=2) {
            b = b.dense(rng.random_range(3..=7)).relu();
        }
        b.dense(classes).build(seed).unwrap()
    } else {
        let channels = rng.random_range(1..=2);
        let side = rng.random_range(7..=9);
        let kernel = rng.random_range(2..=3);
        let stride = rng.random_range(1..=2);
        let mut b = NetworkBuilder::new(&[channels, side, side])
            .conv2d(rng.random_range(2..=3), (kernel, kernel), stride)
            .relu();
        let after = (side - kernel) / stride + 1;
        if after >= 4 {
            b = b.max_pool(2, 2);
        }
        b.flatten()
            .dense(rng.random_range(3..=6))
            .relu()
            .dense(classes)
            .build(seed)
            .unwrap()
    }
}

pub fn random_points(net: &Network<f64>, batch: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    (0..batch * net.input_len())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect()
}

/// ReLU on/off states and max-pool winners for a batch; equal patterns mean the
/// network is linear between the two inputs up to the softmax.
pub fn activation_pattern(net: &Network<f64>, points: &[f64], batch: usize) -> Vec<u32> {
    let mut pattern = Vec::new();
    for (i, layer) in net.layers().iter().enumerate() {
        let input = net.forward_range(0, i, points, batch).unwrap();
        match layer {
            Layer::Relu => pattern.extend(input.iter().map(|&v| (v > 0.0) as u32)),
            Layer::MaxPool2d(p) => {
                let shape = net.shape_at(i);
                let (c, h, w) = (shape[0], shape[1], shape[2]);
                let oh = (h - p.size) / p.stride + 1;
                let ow = (w - p.size) / p.stride + 1;
                for b in 0..batch {
                    let x = &input[b * c * h * w..(b + 1) * c * h * w];
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut best = (f64::NEG_INFINITY, 0u32);
                                for ky in 0..p.size {
                                    for kx in 0..p.size {
                                        let idx = ch * h * w
                                            + (oy * p.stride + ky) * w
                                            + ox * p.stride
                                            + kx;
                                        if x[idx] > best.0 {
                                            best = (x[idx], idx as u32);
                                        }
                                    }
                                }
                                pattern.push(best.1);
                            }
                        }
                    }
                }
            }
            _ => {}
        }
    }
    pattern
}

#[derive(Debug, Default)]
pub struct FdStats {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel: f64,
}

/// Compares the analytic input gradient to central differences at every
/// coordinate whose perturbation leaves the activation pattern unchanged.
pub fn fd_input_check(net: &Network<f64>, x: &[f64], target: usize, head: GradientHead) -> FdStats {
    let analytic = net.input_gradients(x, 1, target, head).unwrap();
    let base = activation_pattern(net, x, 1);
    let mut stats = FdStats::default();
    for j in 0..x.len() {
        let mut plus = x.to_vec();
        plus[j] += FD_STEP;
        let mut minus = x.to_vec();
        minus[j] -= FD_STEP;
        if activation_pattern(net, &plus, 1) != base || activation_pattern(net, &minus, 1) != base {
            stats.skipped += 1;
            continue;
        }
        let fp = net.class_scores(&plus, 1, target, head).unwrap()[0];
        let fm = net.class_scores(&minus, 1, target, head).unwrap()[0];
        let numeric = (fp - fm) / (2.0 * FD_STEP);
        stats.max_rel = stats.max_rel.max(rel_err(analytic[j], numeric));
        stats.checked += 1;
    }
    stats
}

fn with_param(net: &Network<f64>, layer: usize, index: usize, delta: f64) -> Network<f64> {
    let mut layers = net.layers().to_vec();
    match &mut layers[layer] {
        Layer::Dense(d) => {
            let n = d.weights.len();
            if index < n {
                d.weights[index] += delta;
            } else {
                d.bias[index - n] += delta;
            }
        }
        Layer::Conv2d(c) => {
            let n = c.weights.len();
            if index < n {
                c.weights[index] += delta;
            } else {
                c.bias[index - n] += delta;
            }
        }
        _ => unreachable!("layer {layer} has no parameters"),
    }
    Network::new(net.input_shape().to_vec(), layers).unwrap()
}

/// Central-difference check of the cross-entropy gradient for every parameter.
pub fn fd_param_check(net: &Network<f64>, points: &[f64], labels: &[usize]) -> FdStats {
    let batch = labels.len();
    let (_, grads) = net.loss_gradients(points, labels, batch).unwrap();
    let base = activation_pattern(net, points, batch);
    let mut stats = FdStats::default();
    for (i, layer) in net.layers().iter().enumerate() {
        let Some(g) = grads.layer(i) else {
            assert!(!layer.is_parameterized(), "layer {i} is missing gradients");
            continue;
        };
        assert_eq!(g.len(), layer.parameter_count());
        for (j, &analytic) in g.iter().enumerate() {
            let plus = with_param(net, i, j, FD_STEP);
            let minus = with_param(net, i, j, -FD_STEP);
            if activation_pattern(&plus, points, batch) != base
                || activation_pattern(&minus, points, batch) != base
            {
                stats.skipped += 1;
                continue;
            }
            let lp = plus.loss_gradients(points, labels, batch).unwrap().0;
            let lm = minus.loss_gradients(points, labels, batch).unwrap().0;
            let numeric = (lp - lm) / (2.0 * FD_STEP);
            stats.max_rel = stats.max_rel.max(rel_err(analytic, numeric));
            stats.checked += 1;
        }
    }
    stats
}

/// `f(x) = w . x + b` as a one-class-per-row dense network.
pub fn linear_net(w: &[f64], classes: usize) -> Network<f64> {
    let mut weights = Vec::new();
    for c in 0..classes {
        weights.extend(w.iter().map(|v| v * (c + 1) as f64));
    }
    let d = Dense::new(w.len(), classes, weights, vec![0.0; classes]).unwrap();
    Network::new(vec![w.len()], vec![Layer::Dense(d)]).unwrap()
}

pub fn dataset(
    shape: &[usize],
    features: Vec<f64>,
    labels: Vec<usize>,
    classes: usize,
) -> LabeledDataset<f64> {
    LabeledDataset::new(shape.to_vec(), features, labels, classes, Split::Train).unwrap()
}

/// Planted-evidence data and an MLP trained on it with the base schedule.
pub fn planted_model(seed: u64) -> (DataSplit<f32>, Network<f32>) {
    let data = generate_synthetic::<f32>(&SyntheticSpec::planted(seed)).unwrap();
    let net = Network::mlp(data.train.sample_shape(), &[64], data.train.classes(), seed).unwrap();
    let mut cfg = base_train_config();
    cfg.seed = seed;
    let (net, _) = train(&net, &data.train, &cfg).unwrap();
    (data, net)
}
