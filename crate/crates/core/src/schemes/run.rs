use std::collections::{HashMap, HashSet};

use sha2::{Digest, Sha256};

use crate::data::{DataSplit, LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::explain::{Explainer, ExplainerConfig, ExplainerKind};
use crate::manipulate::{
    apply_plan_with, rank_units, ManipulationPlan, OcclusionOrder, Replacement,
};
use crate::nn::{accuracy, encode_network, fine_tune, predictions, train, Network, UpdateCounters};
use crate::rng::{derive_seed, tag};
use crate::scalar::Scalar;
use crate::schemes::config::{SchemeConfig, TargetRule, UpdateProtocol};
use crate::schemes::result::{EvalResult, Provenance};

/// Offset separating test sample ids from train sample ids in seed derivation.
pub const TEST_ID_OFFSET: u64 = 1 << 40;

/// Minimum margin over chance a model must reach on clean test data.
pub const TRAINED_MARGIN: f64 = 0.05;

pub fn sample_id(split: Split, index: usize) -> u64 {
    match split {
        Split::Train => index as u64,
        Split::Test => TEST_ID_OFFSET | index as u64,
    }
}

/// SHA-256 of the serialized network.
pub fn network_hash<T: Scalar>(net: &Network<T>) -> String {
    hex::encode(Sha256::digest(encode_network(net)))
}

type CacheKey = (String, Split, usize, usize);

/// Attribution values keyed by (model, explainer config, split, index, target),
/// shared between schemes that explain the same model.
#[derive(Debug, Default)]
pub struct AttributionCache<T> {
    /// Attribution values and the gradient queries spent on them.
    entries: HashMap<CacheKey, (Vec<T>, u64)>,
    pub hits: u64,
    pub misses: u64,
}

impl<T: Scalar> AttributionCache<T> {
    pub fn new() -> Self {
        AttributionCache {
            entries: HashMap::new(),
            hits: 0,
            misses: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

struct Ranker<'a, 'c, T> {
    net: &'a Network<T>,
    explainer: &'a Explainer<'a, T>,
    key: String,
    cache: &'c mut AttributionCache<T>,
    /// Explanations this run has charged for, so totals don't depend on the cache.
    charged: HashSet<CacheKey>,
    queries: u64,
}

impl<T: Scalar> Ranker<'_, '_, T> {
    fn rankings(
        &mut self,
        data: &LabeledDataset<T>,
        indices: &[usize],
        targets: &[usize],
        order: OcclusionOrder,
    ) -> Result<Vec<(u64, Vec<usize>)>> {
        let shape = data.sample_shape().to_vec();
        let split = data.split();
        let mut out = Vec::with_capacity(indices.len());
        for &i in indices {
            let id = sample_id(split, i);
            if let OcclusionOrder::Random { .. } = order {
                out.push((id, rank_units::<T>(&[], &shape, order, id)));
                continue;
            }
            let key = (self.key.clone(), split, i, targets[i]);
            if !self.cache.entries.contains_key(&key) {
                let map = self
                    .explainer
                    .explain(self.net, &data.tensor(i), targets[i], id)?;
                self.cache.misses += 1;
                self.cache
                    .entries
                    .insert(key.clone(), (map.values.data().to_vec(), map.meta.queries));
            } else {
                self.cache.hits += 1;
            }
            let (values, queries) = &self.cache.entries[&key];
            if self.charged.insert(key.clone()) {
                self.queries += queries;
            }
            out.push((id, rank_units(values, &shape, order, id)));
        }
        Ok(out)
    }
}

fn targets<T: Scalar>(
    net: &Network<T>,
    data: &LabeledDataset<T>,
    rule: TargetRule,
) -> Result<Vec<usize>> {
    match rule {
        TargetRule::Predicted => predictions(net, data),
        TargetRule::Label => Ok(data.labels().to_vec()),
    }
}

fn manipulated<T: Scalar>(
    data: &LabeledDataset<T>,
    rankings: &[(u64, Vec<usize>)],
    ratio: f64,
    order: OcclusionOrder,
    replacement: Replacement,
    fill: &[f64],
) -> Result<LabeledDataset<T>> {
    let refs: Vec<(u64, &[usize])> = rankings.iter().map(|(id, r)| (*id, r.as_slice())).collect();
    let plan =
        ManipulationPlan::from_rankings(&refs, data.sample_shape(), ratio, order, replacement)?;
    apply_plan_with(data, &plan, fill)
}

/// Runs one evaluation scheme for one explainer against a trained model.
pub fn run_scheme<T: Scalar>(
    net: &Network<T>,
    data: &DataSplit<T>,
    explainer: &ExplainerConfig,
    scheme: &SchemeConfig,
) -> Result<EvalResult> {
    run_scheme_cached(net, data, explainer, scheme, &mut AttributionCache::new())
}

pub fn run_scheme_cached<T: Scalar>(
    net: &Network<T>,
    data: &DataSplit<T>,
    explainer_cfg: &ExplainerConfig,
    scheme: &SchemeConfig,
    cache: &mut AttributionCache<T>,
) -> Result<EvalResult> {
    scheme.validate()?;
    let explainer = Explainer::new(explainer_cfg.clone())?.with_reference(&data.train);
    if data.train.sample_shape() != net.input_shape()
        || data.test.sample_shape() != net.input_shape()
    {
        return Err(Error::ShapeMismatch {
            layer: 0,
            expected: net.input_shape().to_vec(),
            actual: data.train.sample_shape().to_vec(),
        });
    }
    if data.train.is_empty() || data.test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let base_accuracy = accuracy(net, &data.test)?;
    let chance = 1.0 / net.classes() as f64;
    if base_accuracy <= chance + TRAINED_MARGIN {
        return Err(Error::Precondition(format!(
            "model looks untrained: test accuracy {base_accuracy:.4} vs chance {chance:.4}"
        )));
    }

    let checkpoint_hash = network_hash(net);
    let mut ranker = Ranker {
        net,
        explainer: &explainer,
        key: format!(
            "{checkpoint_hash}:{}",
            serde_json::to_string(explainer_cfg)?
        ),
        cache,
        charged: HashSet::new(),
        queries: 0,
    };
    let train_targets = targets(net, &data.train, scheme.target)?;
    let test_targets = targets(net, &data.test, scheme.target)?;
    let replacement = scheme.replacement.unwrap_or_else(|| {
        explainer_cfg
            .baseline_constant()
            .map(Replacement::Constant)
            .unwrap_or(Replacement::PerFeatureMean)
    });
    let fill = replacement.resolve(&data.train);
    let all_test: Vec<usize> = (0..data.test.len()).collect();

    let mut accuracy_grid = vec![Vec::with_capacity(scheme.repetitions); scheme.ratios.len()];
    let mut rep_seeds = Vec::with_capacity(scheme.repetitions);
    let mut counters = UpdateCounters::default();
    let mut updates = 0u64;
    for rep in 0..scheme.repetitions {
        let rep_seed = derive_seed(scheme.seed, &[tag::REPETITION, rep as u64]);
        rep_seeds.push(rep_seed);
        let order = if explainer_cfg.kind == ExplainerKind::Random {
            OcclusionOrder::Random {
                seed: derive_seed(rep_seed, &[tag::OCCLUDE]),
            }
        } else {
            scheme.order
        };
        let subset_idx = data
            .train
            .stratified_indices(scheme.train_fraction, rep_seed);
        let subset = data.train.subset(&subset_idx);
        let train_rank = if scheme.explain_splits.train {
            Some(ranker.rankings(&data.train, &subset_idx, &train_targets, order)?)
        } else {
            None
        };
        let test_rank = if scheme.explain_splits.test {
            Some(ranker.rankings(&data.test, &all_test, &test_targets, order)?)
        } else {
            None
        };
        let mut cfg = scheme.finetune_cfg.clone();
        cfg.seed = derive_seed(rep_seed, &[tag::SHUFFLE, scheme.finetune_cfg.seed]);

        for (ri, &ratio) in scheme.ratios.iter().enumerate() {
            let train_m = match &train_rank {
                Some(r) => manipulated(&subset, r, ratio, order, replacement, &fill)?,
                None => subset.clone(),
            };
            let test_m = match &test_rank {
                Some(r) => manipulated(&data.test, r, ratio, order, replacement, &fill)?,
                None => data.test.clone(),
            };
            let updated = if cfg.epochs == 0 {
                match scheme.update {
                    UpdateProtocol::RetrainFull => {
                        net.reinitialized(derive_seed(rep_seed, &[tag::INIT]))?
                    }
                    _ => net.clone(),
                }
            } else {
                let (model, report) = match scheme.update {
                    UpdateProtocol::RetrainFull => train(
                        &net.reinitialized(derive_seed(rep_seed, &[tag::INIT]))?,
                        &train_m,
                        &cfg,
                    )?,
                    UpdateProtocol::FinetuneFull | UpdateProtocol::FinetuneHead => {
                        fine_tune(net, &train_m, &cfg)?
                    }
                };
                counters.add(&report.counters);
                updates += 1;
                model
            };
            accuracy_grid[ri].push(accuracy(&updated, &test_m)?);
        }
    }

    Ok(EvalResult {
        scheme: scheme.name.clone(),
        explainer: explainer_cfg.kind.id().to_string(),
        order: scheme.order,
        update: scheme.update,
        ratios: scheme.ratios.clone(),
        accuracy: accuracy_grid,
        base_accuracy,
        counters,
        updates,
        gradient_queries: ranker.queries,
        provenance: Provenance {
            scheme_seed: scheme.seed,
            repetition_seeds: rep_seeds,
            explainer_seed: explainer_cfg.seed,
            checkpoint_hash,
            dataset_hash: data.content_hash(),
        },
    })
}
