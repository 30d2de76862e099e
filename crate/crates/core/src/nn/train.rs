use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::network::{softmax, Network, ParamGrads};
use crate::rng::{stream, tag};
use crate::scalar::Scalar;
use crate::tensor::argmax;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd { lr: f64, momentum: f64 },
    Adam { lr: f64 },
}

impl Optimizer {
    pub fn lr(&self) -> f64 {
        match self {
            Optimizer::Sgd { lr, .. } | Optimizer::Adam { lr } => *lr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    /// Linear warmup over `warmup_epochs`, then cosine decay to zero.
    Cosine {
        warmup_epochs: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainScope {
    Full,
    HeadOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub optimizer: Optimizer,
    pub schedule: Schedule,
    pub batch_size: usize,
    pub seed: u64,
    pub scope: TrainScope,
}

impl TrainConfig {
    /// Plain SGD with momentum, constant rate, full scope.
    pub fn sgd(epochs: usize, lr: f64, batch_size: usize, seed: u64) -> Self {
        TrainConfig {
            epochs,
            optimizer: Optimizer::Sgd { lr, momentum: 0.9 },
            schedule: Schedule::Constant,
            batch_size,
            seed,
            scope: TrainScope::Full,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.optimizer.lr();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::config(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if let Optimizer::Sgd { momentum, .. } = self.optimizer {
            if !(0.0..1.0).contains(&momentum) {
                return Err(Error::config(format!(
                    "momentum must be in [0, 1), got {momentum}"
                )));
            }
        }
        if let Schedule::Cosine { warmup_epochs } = self.schedule {
            if self.epochs > 0 && warmup_epochs >= self.epochs {
                return Err(Error::config(format!(
                    "warmup epochs ({warmup_epochs}) must be below epochs ({})",
                    self.epochs
                )));
            }
        }
        Ok(())
    }

    fn lr_at(&self, step: usize, total_steps: usize, steps_per_epoch: usize) -> f64 {
        let base = self.optimizer.lr();
        match self.schedule {
            Schedule::Constant => base,
            Schedule::Cosine { warmup_epochs } => {
                let warmup = warmup_epochs * steps_per_epoch;
                if step < warmup {
                    base * (step + 1) as f64 / warmup as f64
                } else {
                    let span = (total_steps - warmup).max(1) as f64;
                    let progress = (step - warmup) as f64 / span;
                    0.5 * base * (1.0 + (std::f64::consts::PI * progress).cos())
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Work performed by one training run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateCounters {
    pub optimizer_steps: u64,
    /// Per-sample gradient contributions (samples x epochs).
    pub sample_gradients: u64,
    /// Scalar parameter updates (trainable parameters x optimizer steps).
    pub parameter_updates: u64,
}

impl UpdateCounters {
    pub fn add(&mut self, other: &UpdateCounters) {
        self.optimizer_steps += other.optimizer_steps;
        self.sample_gradients += other.sample_gradients;
        self.parameter_updates += other.parameter_updates;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochStats>,
    pub counters: UpdateCounters,
}

enum OptimizerState {
    Sgd {
        velocity: Vec<Vec<f64>>,
    },
    Adam {
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
        t: i32,
    },
}

/// Trains all parameters. `cfg.scope` must be `Full`.
pub fn train<T: Scalar>(
    net: &Network<T>,
    data: &LabeledDataset<T>,
    cfg: &TrainConfig,
) -> Result<(Network<T>, TrainReport)> {
    if cfg.scope != TrainScope::Full {
        return Err(Error::config(
            "train requires full scope; use fine_tune for head-only updates",
        ));
    }
    run(net, data, cfg)
}

/// Continues training an already trained network; with `HeadOnly` scope every
/// parameter outside the classification head is left untouched.
pub fn fine_tune<T: Scalar>(
    net: &Network<T>,
    data: &LabeledDataset<T>,
    cfg: &TrainConfig,
) -> Result<(Network<T>, TrainReport)> {
    run(net, data, cfg)
}

fn run<T: Scalar>(
    net: &Network<T>,
    data: &LabeledDataset<T>,
    cfg: &TrainConfig,
) -> Result<(Network<T>, TrainReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.sample_shape() != net.input_shape() {
        return Err(Error::ShapeMismatch {
            layer: 0,
            expected: net.input_shape().to_vec(),
            actual: data.sample_shape().to_vec(),
        });
    }
    if data.classes() > net.classes() {
        return Err(Error::config(format!(
            "dataset has {} classes, network only {}",
            data.classes(),
            net.classes()
        )));
    }

    let mut net = net.clone();
    let start = match cfg.scope {
        TrainScope::Full => 0,
        TrainScope::HeadOnly => net.head_index(),
    };
    // Frozen layers are deterministic, so their outputs are computed once.
    let inputs: Vec<T> = if start == 0 {
        data.features().to_vec()
    } else {
        net.forward_range(0, start, data.features(), data.len())?
    };
    let feature_len: usize = net.shape_at(start).iter().product();
    let trainable: usize = net.layers()[start..]
        .iter()
        .map(|l| l.parameter_count())
        .sum();

    let n = data.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut state = init_state(&net, start, &cfg.optimizer);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..n).collect();
    let mut batch_buf: Vec<T> = Vec::with_capacity(cfg.batch_size * feature_len);
    let mut step = 0usize;
    let classes = net.classes();

    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut stream(cfg.seed, &[tag::SHUFFLE, epoch as u64]));
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let b = chunk.len();
            batch_buf.clear();
            for &i in chunk {
                batch_buf.extend_from_slice(&inputs[i * feature_len..(i + 1) * feature_len]);
            }
            let trace = net.forward_trace(start, &batch_buf, b)?;
            let logits = trace.logits();
            let mut upstream = vec![0.0; b * classes];
            for (r, &i) in chunk.iter().enumerate() {
                let row: Vec<f64> = logits[r * classes..(r + 1) * classes]
                    .iter()
                    .map(|v| v.widen())
                    .collect();
                let label = data.label(i);
                let p = softmax(&row);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                loss_sum += lse - row[label];
                if argmax(&row) == label {
                    correct += 1;
                }
                for k in 0..classes {
                    let indicator = if k == label { 1.0 } else { 0.0 };
                    upstream[r * classes + k] = (p[k] - indicator) / b as f64;
                }
            }
            let (grads, _) = net.backward(&trace, upstream, Some(start), false)?;
            let grads = grads.expect("parameter gradients requested");
            let lr = cfg.lr_at(step, total_steps, steps_per_epoch);
            apply_update(
                &mut net,
                start,
                &grads,
                &mut state,
                &cfg.optimizer,
                lr,
                epoch,
            )?;
            step += 1;
            report.counters.optimizer_steps += 1;
            report.counters.sample_gradients += b as u64;
            report.counters.parameter_updates += trainable as u64;
        }
        let loss = loss_sum / n as f64;
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        report.history.push(EpochStats {
            epoch,
            loss,
            accuracy: correct as f64 / n as f64,
        });
    }
    Ok((net, report))
}

fn init_state<T: Scalar>(net: &Network<T>, start: usize, opt: &Optimizer) -> OptimizerState {
    let zeros: Vec<Vec<f64>> = net
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            if i >= start {
                vec![0.0; l.parameter_count()]
            } else {
                Vec::new()
            }
        })
        .collect();
    match opt {
        Optimizer::Sgd { .. } => OptimizerState::Sgd { velocity: zeros },
        Optimizer::Adam { .. } => OptimizerState::Adam {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        },
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn apply_update<T: Scalar>(
    net: &mut Network<T>,
    start: usize,
    grads: &ParamGrads,
    state: &mut OptimizerState,
    opt: &Optimizer,
    lr: f64,
    epoch: usize,
) -> Result<()> {
    if let OptimizerState::Adam { t, .. } = state {
        *t += 1;
    }
    for (i, layer) in net.layers_mut().iter_mut().enumerate().skip(start) {
        let Some(g) = grads.layer(i) else { continue };
        let Some((weights, bias)) = layer.parameters_mut() else {
            continue;
        };
        let params = weights.iter_mut().chain(bias.iter_mut());
        match state {
            OptimizerState::Sgd { velocity } => {
                let Optimizer::Sgd { momentum, .. } = *opt else {
                    unreachable!()
                };
                for ((p, &gv), vel) in params.zip(g).zip(velocity[i].iter_mut()) {
                    *vel = momentum * *vel + gv;
                    *p = T::narrow(p.widen() - lr * *vel);
                }
            }
            OptimizerState::Adam { m, v, t } => {
                let c1 = 1.0 - ADAM_BETA1.powi(*t);
                let c2 = 1.0 - ADAM_BETA2.powi(*t);
                for (((p, &gv), mi), vi) in params.zip(g).zip(m[i].iter_mut()).zip(v[i].iter_mut())
                {
                    *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gv;
                    *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gv * gv;
                    let update = (*mi / c1) / ((*vi / c2).sqrt() + ADAM_EPS);
                    *p = T::narrow(p.widen() - lr * update);
                }
            }
        }
        if let Some((w, b)) = layer.parameters() {
            if w.iter().chain(b).any(|p| !p.is_finite()) {
                return Err(Error::Divergence { epoch });
            }
        }
    }
    Ok(())
}

/// Argmax class for every sample.
pub fn predictions<T: Scalar>(net: &Network<T>, data: &LabeledDataset<T>) -> Result<Vec<usize>> {
    const CHUNK: usize = 256;
    let n = data.sample_len();
    let classes = net.classes();
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.features().chunks(CHUNK * n) {
        let batch = chunk.len() / n;
        let logits = net.forward_batch(chunk, batch)?;
        out.extend((0..batch).map(|r| argmax(&logits[r * classes..(r + 1) * classes])));
    }
    Ok(out)
}

/// Fraction of samples whose argmax logit equals the label.
pub fn accuracy<T: Scalar>(net: &Network<T>, data: &LabeledDataset<T>) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    const CHUNK: usize = 256;
    let n = data.sample_len();
    let classes = net.classes();
    let mut correct = 0usize;
    for (c, chunk) in data.features().chunks(CHUNK * n).enumerate() {
        let batch = chunk.len() / n;
        let logits = net.forward_batch(chunk, batch)?;
        for r in 0..batch {
            if argmax(&logits[r * classes..(r + 1) * classes]) == data.label(c * CHUNK + r) {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;

    fn separable(n: usize, seed: u64) -> LabeledDataset<f64> {
        use rand::Rng;
        let mut rng = stream(seed, &[99]);
        let w = [[1.0, -0.5, 0.3], [-0.7, 0.9, 0.1], [0.2, 0.4, -1.0]];
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let scores: Vec<f64> = w
                .iter()
                .map(|r| r.iter().zip(&x).map(|(a, b)| a * b).sum())
                .collect();
            labels.push(argmax(&scores));
            features.extend(x);
        }
        LabeledDataset::new(vec![3], features, labels, 3, Split::Train).unwrap()
    }

    #[test]
    fn cosine_schedule_warms_up_then_decays() {
        let cfg = TrainConfig {
            epochs: 4,
            optimizer: Optimizer::Sgd {
                lr: 1.0,
                momentum: 0.0,
            },
            schedule: Schedule::Cosine { warmup_epochs: 1 },
            batch_size: 1,
            seed: 0,
            scope: TrainScope::Full,
        };
        assert!((cfg.lr_at(0, 8, 2) - 0.5).abs() < 1e-12);
        assert!((cfg.lr_at(1, 8, 2) - 1.0).abs() < 1e-12);
        assert!((cfg.lr_at(2, 8, 2) - 1.0).abs() < 1e-12);
        assert!(cfg.lr_at(7, 8, 2) < 0.1);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = TrainConfig::sgd(3, 0.1, 8, 0);
        cfg.optimizer = Optimizer::Sgd {
            lr: 0.0,
            momentum: 0.0,
        };
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::sgd(3, 0.1, 8, 0);
        cfg.schedule = Schedule::Cosine { warmup_epochs: 3 };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn linearly_separable_data_is_fit_within_30_epochs() {
        let data = separable(300, 1);
        let net = Network::<f64>::mlp(&[3], &[], 3, 4).unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            optimizer: Optimizer::Adam { lr: 0.05 },
            schedule: Schedule::Constant,
            batch_size: 16,
            seed: 2,
            scope: TrainScope::Full,
        };
        let (trained, report) = train(&net, &data, &cfg).unwrap();
        assert_eq!(report.history.len(), 30);
        assert!(
            accuracy(&trained, &data).unwrap() >= 0.99,
            "{:?}",
            report.history.last()
        );
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let data = LabeledDataset::<f64>::new(vec![3], vec![], vec![], 3, Split::Train).unwrap();
        let net = Network::<f64>::mlp(&[3], &[], 3, 4).unwrap();
        assert!(matches!(
            train(&net, &data, &TrainConfig::sgd(1, 0.1, 4, 0)),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn divergence_reports_epoch() {
        let data = separable(64, 3);
        let net = Network::<f64>::mlp(&[3], &[8], 3, 4).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            optimizer: Optimizer::Sgd {
                lr: 1e300,
                momentum: 0.0,
            },
            schedule: Schedule::Constant,
            batch_size: 8,
            seed: 0,
            scope: TrainScope::Full,
        };
        match train(&net, &data, &cfg) {
            Err(Error::Divergence { epoch }) => assert_eq!(epoch, 0),
            Err(Error::NonFinite { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn head_only_with_zero_epochs_is_identity() {
        let data = separable(32, 5);
        let net = Network::<f64>::mlp(&[3], &[4], 3, 1).unwrap().cast::<f32>();
        let cfg = TrainConfig {
            epochs: 0,
            scope: TrainScope::HeadOnly,
            ..TrainConfig::sgd(1, 0.1, 8, 0)
        };
        let (tuned, report) = fine_tune(&net, &data.cast(), &cfg).unwrap();
        assert_eq!(tuned, net);
        assert_eq!(report.counters, UpdateCounters::default());
    }
}
