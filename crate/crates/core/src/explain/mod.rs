//! Gradient attributions: vanilla gradients, SmoothGrad, integrated gradients,
//! gradient x input, expected gradients, SmoothGrad on the IG path, and a
//! random control.

mod dump;

pub use dump::{
    decode_attributions, encode_attributions, load_attributions, save_attributions,
    AttributionRecord,
};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{GradientHead, Network};
use crate::rng::{derive_seed, stream, tag};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Gradient queries issued per batched network call.
const QUERY_CHUNK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplainerKind {
    Vg,
    Sg,
    Ig,
    Gxi,
    Eg,
    Sig,
    Random,
}

impl ExplainerKind {
    pub const ALL: [ExplainerKind; 7] = [
        ExplainerKind::Vg,
        ExplainerKind::Sg,
        ExplainerKind::Ig,
        ExplainerKind::Gxi,
        ExplainerKind::Eg,
        ExplainerKind::Sig,
        ExplainerKind::Random,
    ];

    pub fn id(self) -> &'static str {
        match self {
            ExplainerKind::Vg => "vg",
            ExplainerKind::Sg => "sg",
            ExplainerKind::Ig => "ig",
            ExplainerKind::Gxi => "gxi",
            ExplainerKind::Eg => "eg",
            ExplainerKind::Sig => "sig",
            ExplainerKind::Random => "random",
        }
    }

    fn uses_baseline(self) -> bool {
        matches!(
            self,
            ExplainerKind::Ig | ExplainerKind::Gxi | ExplainerKind::Sig | ExplainerKind::Eg
        )
    }
}

impl fmt::Display for ExplainerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for ExplainerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExplainerKind::ALL
            .into_iter()
            .find(|k| k.id().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Unknown {
                kind: "explainer",
                name: s.to_string(),
            })
    }
}

/// Reference input `x̊` modelling feature absence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Baseline {
    Constant(f64),
    DatasetMean,
    /// Draws from a pool of training samples (expected gradients only).
    TrainingSamples,
}

/// Which path points enter the integrated-gradients Riemann sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathRule {
    /// `s = 0..=k` (k + 1 points), divided by `k`.
    #[default]
    Inclusive,
    /// `s = 1..=k` (k points), divided by `k`.
    RightEndpoint,
}

/// How expected gradients spends its budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EgSampling {
    /// `k` baseline draws, one uniformly random path point each.
    #[default]
    Uniform,
    /// `k` baseline draws, each with a full `k`-step path.
    Nested,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainerConfig {
    pub kind: ExplainerKind,
    pub k: usize,
    pub sigma: f64,
    pub baseline: Baseline,
    pub seed: u64,
    #[serde(default)]
    pub head: GradientHead,
    #[serde(default)]
    pub path_rule: PathRule,
    #[serde(default)]
    pub eg_sampling: EgSampling,
}

impl ExplainerConfig {
    /// Defaults: `k = 32`, `sigma = 0.15`, zero baseline (training samples for
    /// EG), probability head.
    pub fn new(kind: ExplainerKind) -> Self {
        ExplainerConfig {
            kind,
            k: 32,
            sigma: 0.15,
            baseline: if kind == ExplainerKind::Eg {
                Baseline::TrainingSamples
            } else {
                Baseline::Constant(0.0)
            },
            seed: 0,
            head: GradientHead::Probability,
            path_rule: PathRule::Inclusive,
            eg_sampling: EgSampling::Uniform,
        }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_head(mut self, head: GradientHead) -> Self {
        self.head = head;
        self
    }

    pub fn with_baseline(mut self, baseline: Baseline) -> Self {
        self.baseline = baseline;
        self
    }

    pub fn with_path_rule(mut self, rule: PathRule) -> Self {
        self.path_rule = rule;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("k must be at least 1"));
        }
        match self.kind {
            ExplainerKind::Sg | ExplainerKind::Sig
                if !(self.sigma > 0.0 && self.sigma.is_finite()) =>
            {
                return Err(Error::config(format!(
                    "{} needs sigma > 0, got {}",
                    self.kind, self.sigma
                )));
            }
            ExplainerKind::Ig | ExplainerKind::Gxi | ExplainerKind::Sig
                if self.baseline == Baseline::TrainingSamples =>
            {
                return Err(Error::config(format!(
                    "{} needs a constant or dataset-mean baseline",
                    self.kind
                )));
            }
            _ => {}
        }
        if let Baseline::Constant(v) = self.baseline {
            if !v.is_finite() {
                return Err(Error::config("baseline constant must be finite"));
            }
        }
        Ok(())
    }

    /// Gradient queries spent on one explicand.
    pub fn query_budget(&self) -> u64 {
        let k = self.k as u64;
        let path = match self.path_rule {
            PathRule::Inclusive => k + 1,
            PathRule::RightEndpoint => k,
        };
        match self.kind {
            ExplainerKind::Vg | ExplainerKind::Gxi => 1,
            ExplainerKind::Sg => k,
            ExplainerKind::Ig | ExplainerKind::Sig => path,
            ExplainerKind::Eg => match self.eg_sampling {
                EgSampling::Uniform => k,
                EgSampling::Nested => k * path,
            },
            ExplainerKind::Random => 0,
        }
    }

    /// Replacement value implied by the baseline, when it is a constant.
    pub fn baseline_constant(&self) -> Option<f64> {
        match (self.kind.uses_baseline(), self.baseline) {
            (true, Baseline::Constant(v)) => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMeta {
    pub kind: ExplainerKind,
    pub k: Option<usize>,
    pub sigma: Option<f64>,
    pub baseline: Option<Baseline>,
    pub seed: Option<u64>,
    pub head: GradientHead,
    /// Gradient queries actually issued.
    pub queries: u64,
}

/// Signed per-feature scores for one (input, target) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap<T> {
    pub values: Tensor<T>,
    pub target: usize,
    pub explainer_id: String,
    pub meta: AttributionMeta,
}

/// An explainer bound to optional reference data (for dataset-mean baselines
/// and expected-gradients pools).
#[derive(Debug, Clone)]
pub struct Explainer<'a, T> {
    cfg: ExplainerConfig,
    means: Option<Vec<T>>,
    pool: Option<&'a LabeledDataset<T>>,
}

impl<'a, T: Scalar> Explainer<'a, T> {
    pub fn new(cfg: ExplainerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Explainer {
            cfg,
            means: None,
            pool: None,
        })
    }

    /// Uses `data` for the dataset-mean baseline and as the EG baseline pool.
    pub fn with_reference(mut self, data: &'a LabeledDataset<T>) -> Self {
        self.means = Some(data.feature_means().into_iter().map(T::narrow).collect());
        self.pool = Some(data);
        self
    }

    pub fn config(&self) -> &ExplainerConfig {
        &self.cfg
    }

    /// Explains `x` for class `target`. Random draws come from a stream keyed
    /// by the config seed and `sample_id`.
    pub fn explain(
        &self,
        net: &Network<T>,
        x: &Tensor<T>,
        target: usize,
        sample_id: u64,
    ) -> Result<AttributionMap<T>> {
        if self.cfg.kind != ExplainerKind::Random {
            if x.shape() != net.input_shape() {
                return Err(Error::ShapeMismatch {
                    layer: 0,
                    expected: net.input_shape().to_vec(),
                    actual: x.shape().to_vec(),
                });
            }
            if target >= net.classes() {
                return Err(Error::Precondition(format!(
                    "target class {target} out of range for {} classes",
                    net.classes()
                )));
            }
        }
        let seed = derive_seed(self.cfg.seed, &[tag::EXPLAIN, sample_id]);
        let cfg = &self.cfg;
        let (values, queries) = match cfg.kind {
            ExplainerKind::Vg => (gradients(net, x.data(), 1, target, cfg.head)?, 1),
            ExplainerKind::Sg => self.smooth_grad(net, x, target, seed)?,
            ExplainerKind::Ig => self.integrated(net, x, target, &self.baseline(x)?, None)?,
            ExplainerKind::Sig => {
                self.integrated(net, x, target, &self.baseline(x)?, Some(seed))?
            }
            ExplainerKind::Gxi => {
                let g = gradients(net, x.data(), 1, target, cfg.head)?;
                (
                    x.data()
                        .iter()
                        .zip(g)
                        .map(|(xi, gi)| xi.widen() * gi)
                        .collect(),
                    1,
                )
            }
            ExplainerKind::Eg => self.expected(net, x, target, seed)?,
            ExplainerKind::Random => (random_scores(x.len(), seed), 0),
        };
        let values = Tensor::new(
            x.shape().to_vec(),
            values.into_iter().map(T::narrow).collect(),
        )
        .map_err(|_| Error::NonFinite {
            layer: net.layers().len(),
        })?;
        let kind = cfg.kind;
        let meta = AttributionMeta {
            kind,
            k: matches!(
                kind,
                ExplainerKind::Sg | ExplainerKind::Ig | ExplainerKind::Eg | ExplainerKind::Sig
            )
            .then_some(cfg.k),
            sigma: matches!(kind, ExplainerKind::Sg | ExplainerKind::Sig).then_some(cfg.sigma),
            baseline: kind.uses_baseline().then_some(cfg.baseline),
            seed: matches!(
                kind,
                ExplainerKind::Sg | ExplainerKind::Eg | ExplainerKind::Sig | ExplainerKind::Random
            )
            .then_some(seed),
            head: cfg.head,
            queries,
        };
        Ok(AttributionMap {
            values,
            target,
            explainer_id: kind.id().to_string(),
            meta,
        })
    }

    fn baseline(&self, x: &Tensor<T>) -> Result<Vec<f64>> {
        match self.cfg.baseline {
            Baseline::Constant(v) => Ok(vec![v; x.len()]),
            Baseline::DatasetMean => {
                let means = self.means.as_ref().ok_or_else(|| {
                    Error::Precondition("dataset-mean baseline needs reference data".into())
                })?;
                if means.len() != x.len() {
                    return Err(Error::ShapeMismatch {
                        layer: 0,
                        expected: vec![x.len()],
                        actual: vec![means.len()],
                    });
                }
                Ok(means.iter().map(|v| v.widen()).collect())
            }
            Baseline::TrainingSamples => Err(Error::Precondition(
                "training-sample baselines are only defined for expected gradients".into(),
            )),
        }
    }

    fn smooth_grad(
        &self,
        net: &Network<T>,
        x: &Tensor<T>,
        target: usize,
        seed: u64,
    ) -> Result<(Vec<f64>, u64)> {
        let k = self.cfg.k;
        let sigma = self.cfg.sigma;
        let mut rng = stream(seed, &[]);
        let base = x.to_f64();
        let mut acc = vec![0.0; x.len()];
        let mut remaining = k;
        while remaining > 0 {
            let b = remaining.min(QUERY_CHUNK);
            let mut points = Vec::with_capacity(b * x.len());
            for _ in 0..b {
                points.extend(base.iter().map(|&v| {
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    T::narrow(v + sigma * eps)
                }));
            }
            accumulate(
                &mut acc,
                &gradients(net, &points, b, target, self.cfg.head)?,
            );
            remaining -= b;
        }
        Ok((acc.into_iter().map(|a| a / k as f64).collect(), k as u64))
    }

    /// Integrated gradients; with `noise_seed`, Gaussian noise is added to every path point.
    fn integrated(
        &self,
        net: &Network<T>,
        x: &Tensor<T>,
        target: usize,
        baseline: &[f64],
        noise_seed: Option<u64>,
    ) -> Result<(Vec<f64>, u64)> {
        let input = x.to_f64();
        let diff: Vec<f64> = input.iter().zip(baseline).map(|(a, b)| a - b).collect();
        let k = self.cfg.k;
        let steps: Vec<usize> = match self.cfg.path_rule {
            PathRule::Inclusive => (0..=k).collect(),
            PathRule::RightEndpoint => (1..=k).collect(),
        };
        let mut rng = noise_seed.map(|s| stream(s, &[]));
        let sigma = self.cfg.sigma;
        let mut acc = vec![0.0; x.len()];
        for chunk in steps.chunks(QUERY_CHUNK) {
            let mut points = Vec::with_capacity(chunk.len() * x.len());
            for &s in chunk {
                let t = s as f64 / k as f64;
                points.extend(baseline.iter().zip(&diff).map(|(b, d)| {
                    let noise = match rng.as_mut() {
                        Some(r) => sigma * Distribution::<f64>::sample(&StandardNormal, r),
                        None => 0.0,
                    };
                    T::narrow(b + t * d + noise)
                }));
            }
            accumulate(
                &mut acc,
                &gradients(net, &points, chunk.len(), target, self.cfg.head)?,
            );
        }
        let values = acc
            .iter()
            .zip(&diff)
            .map(|(g, d)| d * g / k as f64)
            .collect();
        Ok((values, steps.len() as u64))
    }

    fn expected(
        &self,
        net: &Network<T>,
        x: &Tensor<T>,
        target: usize,
        seed: u64,
    ) -> Result<(Vec<f64>, u64)> {
        let pool = self.pool.ok_or_else(|| {
            Error::Precondition("expected gradients needs a baseline pool".into())
        })?;
        if pool.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if pool.sample_len() != x.len() {
            return Err(Error::ShapeMismatch {
                layer: 0,
                expected: vec![x.len()],
                actual: pool.sample_shape().to_vec(),
            });
        }
        let k = self.cfg.k;
        let input = x.to_f64();
        let mut rng = stream(seed, &[]);
        let mut acc = vec![0.0; x.len()];
        let mut queries = 0u64;
        match self.cfg.eg_sampling {
            EgSampling::Uniform => {
                let mut remaining = k;
                while remaining > 0 {
                    let b = remaining.min(QUERY_CHUNK);
                    let mut points = Vec::with_capacity(b * x.len());
                    let mut diffs = Vec::with_capacity(b * x.len());
                    for _ in 0..b {
                        let base = pool.input(rng.random_range(0..pool.len()));
                        let t: f64 = rng.random();
                        for (xi, bi) in input.iter().zip(base) {
                            let d = xi - bi.widen();
                            diffs.push(d);
                            points.push(T::narrow(bi.widen() + t * d));
                        }
                    }
                    let g = gradients(net, &points, b, target, self.cfg.head)?;
                    for (row_g, row_d) in g.chunks(x.len()).zip(diffs.chunks(x.len())) {
                        for ((a, gi), di) in acc.iter_mut().zip(row_g).zip(row_d) {
                            *a += gi * di;
                        }
                    }
                    queries += b as u64;
                    remaining -= b;
                }
                Ok((acc.into_iter().map(|a| a / k as f64).collect(), queries))
            }
            EgSampling::Nested => {
                for _ in 0..k {
                    let base: Vec<f64> = pool
                        .input(rng.random_range(0..pool.len()))
                        .iter()
                        .map(|v| v.widen())
                        .collect();
                    let (v, q) = self.integrated(net, x, target, &base, None)?;
                    accumulate(&mut acc, &v);
                    queries += q;
                }
                Ok((acc.into_iter().map(|a| a / k as f64).collect(), queries))
            }
        }
    }
}

/// Per-point input gradients for a batch, in f64.
fn gradients<T: Scalar>(
    net: &Network<T>,
    points: &[T],
    batch: usize,
    target: usize,
    head: GradientHead,
) -> Result<Vec<f64>> {
    net.input_gradients(points, batch, target, head)
}

/// Adds every row of `rows` (row length `acc.len()`) into `acc`.
fn accumulate(acc: &mut [f64], rows: &[f64]) {
    for row in rows.chunks(acc.len()) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
}

pub fn explain_vg<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
    y: usize,
    cfg: &ExplainerConfig,
) -> Result<AttributionMap<T>> {
    with_kind(cfg, ExplainerKind::Vg)?.explain(net, x, y, 0)
}

pub fn explain_sg<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
    y: usize,
    cfg: &ExplainerConfig,
) -> Result<AttributionMap<T>> {
    with_kind(cfg, ExplainerKind::Sg)?.explain(net, x, y, 0)
}

pub fn explain_ig<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
    y: usize,
    cfg: &ExplainerConfig,
) -> Result<AttributionMap<T>> {
    with_kind(cfg, ExplainerKind::Ig)?.explain(net, x, y, 0)
}

pub fn explain_gxi<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
    y: usize,
    cfg: &ExplainerConfig,
) -> Result<AttributionMap<T>> {
    with_kind(cfg, ExplainerKind::Gxi)?.explain(net, x, y, 0)
}

pub fn explain_eg<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
    y: usize,
    cfg: &ExplainerConfig,
    baseline_pool: &LabeledDataset<T>,
) -> Result<AttributionMap<T>> {
    with_kind(cfg, ExplainerKind::Eg)?
        .with_reference(baseline_pool)
        .explain(net, x, y, 0)
}

pub fn explain_sig<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
    y: usize,
    cfg: &ExplainerConfig,
) -> Result<AttributionMap<T>> {
    with_kind(cfg, ExplainerKind::Sig)?.explain(net, x, y, 0)
}

/// Seeded i.i.d. uniform scores in (-1, 1), independent of any model.
pub fn explain_random<T: Scalar>(x: &Tensor<T>, y: usize, seed: u64) -> AttributionMap<T> {
    let stream_seed = derive_seed(seed, &[tag::EXPLAIN, 0]);
    let values = random_scores(x.len(), stream_seed)
        .into_iter()
        .map(T::narrow)
        .collect();
    AttributionMap {
        values: Tensor::new(x.shape().to_vec(), values).expect("finite uniform draws"),
        target: y,
        explainer_id: ExplainerKind::Random.id().to_string(),
        meta: AttributionMeta {
            kind: ExplainerKind::Random,
            k: None,
            sigma: None,
            baseline: None,
            seed: Some(stream_seed),
            head: GradientHead::default(),
            queries: 0,
        },
    }
}

fn random_scores(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, &[]);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn with_kind<'a, T: Scalar>(
    cfg: &ExplainerConfig,
    kind: ExplainerKind,
) -> Result<Explainer<'a, T>> {
    Explainer::new(ExplainerConfig {
        kind,
        ..cfg.clone()
    })
}
