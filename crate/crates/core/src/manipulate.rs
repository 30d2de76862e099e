//! Occlusion plans: rank features by attribution, occlude a ratio-sized prefix
//! of the ranking, and write replacement values into dataset copies.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::explain::AttributionMap;
use crate::rng::{stream, tag};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OcclusionOrder {
    /// Signed scores, descending.
    HighestFirst,
    /// Signed scores, ascending.
    LowestFirst,
    /// Magnitudes, descending.
    RelevantFirst,
    /// Magnitudes, ascending.
    IrrelevantFirst,
    /// Seeded per-sample permutation, ignoring scores.
    Random { seed: u64 },
}

impl OcclusionOrder {
    pub fn id(&self) -> &'static str {
        match self {
            OcclusionOrder::HighestFirst => "highest_first",
            OcclusionOrder::LowestFirst => "lowest_first",
            OcclusionOrder::RelevantFirst => "relevant_first",
            OcclusionOrder::IrrelevantFirst => "irrelevant_first",
            OcclusionOrder::Random { .. } => "random",
        }
    }

    fn uses_magnitude(&self) -> bool {
        matches!(
            self,
            OcclusionOrder::RelevantFirst | OcclusionOrder::IrrelevantFirst
        )
    }
}

impl fmt::Display for OcclusionOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for OcclusionOrder {
    type Err = Error;

    /// Parses `highest_first`, ..., or `random:<seed>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Ok(match s {
            "highest_first" => OcclusionOrder::HighestFirst,
            "lowest_first" => OcclusionOrder::LowestFirst,
            "relevant_first" => OcclusionOrder::RelevantFirst,
            "irrelevant_first" => OcclusionOrder::IrrelevantFirst,
            _ => match s.strip_prefix("random:").map(str::parse) {
                Some(Ok(seed)) => OcclusionOrder::Random { seed },
                _ => {
                    return Err(Error::Unknown {
                        kind: "occlusion order",
                        name: s.to_string(),
                    })
                }
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Replacement {
    Constant(f64),
    PerFeatureMean,
    PerChannelMean,
}

impl Replacement {
    /// Fill value for every feature of a sample, derived from `reference`.
    pub fn resolve<T: Scalar>(&self, reference: &LabeledDataset<T>) -> Vec<f64> {
        let n = reference.sample_len();
        match *self {
            Replacement::Constant(v) => vec![v; n],
            Replacement::PerFeatureMean => reference.feature_means(),
            Replacement::PerChannelMean => {
                let means = reference.feature_means();
                let (units, channels) = occlusion_units(reference.sample_shape());
                let mut out = vec![0.0; n];
                for c in 0..channels {
                    let span = &means[c * units..(c + 1) * units];
                    let m = span.iter().sum::<f64>() / units as f64;
                    out[c * units..(c + 1) * units].fill(m);
                }
                out
            }
        }
    }
}

/// Number of rankable units and channels per unit. Multi-channel images
/// (`[C, H, W]` with `C > 1`) are occluded per pixel; everything else per scalar.
pub fn occlusion_units(shape: &[usize]) -> (usize, usize) {
    match shape {
        [c, h, w] if *c > 1 => (h * w, *c),
        _ => (shape.iter().product(), 1),
    }
}

/// Ranks the occlusion units of one attribution map; ties keep ascending index.
pub fn rank_units<T: Scalar>(
    values: &[T],
    shape: &[usize],
    order: OcclusionOrder,
    sample_id: u64,
) -> Vec<usize> {
    let (units, channels) = occlusion_units(shape);
    let mut perm: Vec<usize> = (0..units).collect();
    if let OcclusionOrder::Random { seed } = order {
        perm.shuffle(&mut stream(seed, &[tag::OCCLUDE, sample_id]));
        return perm;
    }
    let magnitude = order.uses_magnitude();
    let keys: Vec<f64> = (0..units)
        .map(|u| {
            (0..channels)
                .map(|c| {
                    let v = values[c * units + u].widen();
                    if magnitude {
                        v.abs()
                    } else {
                        v
                    }
                })
                .sum()
        })
        .collect();
    let descending = matches!(
        order,
        OcclusionOrder::HighestFirst | OcclusionOrder::RelevantFirst
    );
    perm.sort_by(|&a, &b| {
        let ord = keys[a].total_cmp(&keys[b]);
        let ord = if descending { ord.reverse() } else { ord };
        if ord == Ordering::Equal {
            a.cmp(&b)
        } else {
            ord
        }
    });
    perm
}

pub fn rank_features<T: Scalar>(attr: &AttributionMap<T>, order: OcclusionOrder) -> Vec<usize> {
    rank_units(attr.values.data(), attr.values.shape(), order, 0)
}

/// `floor(ratio * units)`, robust to representation error in `ratio`.
pub fn occlusion_count(ratio: f64, units: usize) -> usize {
    let exact = ratio * units as f64;
    let rounded = exact.round();
    let count = if (exact - rounded).abs() < 1e-9 {
        rounded
    } else {
        exact.floor()
    };
    (count as usize).min(units)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub sample_id: u64,
    /// Sorted occluded unit indices.
    pub occluded_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManipulationPlan {
    pub ratio: f64,
    pub order: OcclusionOrder,
    pub replacement: Replacement,
    pub sample_shape: Vec<usize>,
    pub entries: Vec<PlanEntry>,
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::ParameterRange(format!(
            "ratio must be in [0, 1], got {ratio}"
        )));
    }
    Ok(())
}

impl ManipulationPlan {
    /// Occludes the first `floor(ratio * units)` entries of each ranking.
    pub fn from_rankings(
        rankings: &[(u64, &[usize])],
        sample_shape: &[usize],
        ratio: f64,
        order: OcclusionOrder,
        replacement: Replacement,
    ) -> Result<Self> {
        check_ratio(ratio)?;
        let (units, _) = occlusion_units(sample_shape);
        let count = occlusion_count(ratio, units);
        let entries = rankings
            .iter()
            .map(|(id, ranking)| {
                if ranking.len() != units {
                    return Err(Error::ShapeMismatch {
                        layer: 0,
                        expected: vec![units],
                        actual: vec![ranking.len()],
                    });
                }
                let mut occluded = ranking[..count].to_vec();
                occluded.sort_unstable();
                Ok(PlanEntry {
                    sample_id: *id,
                    occluded_indices: occluded,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ManipulationPlan {
            ratio,
            order,
            replacement,
            sample_shape: sample_shape.to_vec(),
            entries,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Builds a plan from per-sample attribution maps; sample ids are positions.
pub fn build_plan<T: Scalar>(
    attrs: &[AttributionMap<T>],
    ratio: f64,
    order: OcclusionOrder,
    replacement: Replacement,
) -> Result<ManipulationPlan> {
    check_ratio(ratio)?;
    let Some(first) = attrs.first() else {
        return Err(Error::EmptyDataset);
    };
    let shape = first.values.shape().to_vec();
    let mut rankings = Vec::with_capacity(attrs.len());
    for (i, a) in attrs.iter().enumerate() {
        if a.values.shape() != shape.as_slice() {
            return Err(Error::ShapeMismatch {
                layer: 0,
                expected: shape.clone(),
                actual: a.values.shape().to_vec(),
            });
        }
        rankings.push(rank_units(a.values.data(), &shape, order, i as u64));
    }
    let refs: Vec<(u64, &[usize])> = rankings
        .iter()
        .enumerate()
        .map(|(i, r)| (i as u64, r.as_slice()))
        .collect();
    ManipulationPlan::from_rankings(&refs, &shape, ratio, order, replacement)
}

/// Applies `plan` with fill values resolved from `data` itself.
pub fn apply_plan<T: Scalar>(
    data: &LabeledDataset<T>,
    plan: &ManipulationPlan,
) -> Result<LabeledDataset<T>> {
    let fill = plan.replacement.resolve(data);
    apply_plan_with(data, plan, &fill)
}

/// Applies `plan` (entry `i` to sample `i`) using explicit per-feature fill values.
pub fn apply_plan_with<T: Scalar>(
    data: &LabeledDataset<T>,
    plan: &ManipulationPlan,
    fill: &[f64],
) -> Result<LabeledDataset<T>> {
    if plan.sample_shape != data.sample_shape() {
        return Err(Error::ShapeMismatch {
            layer: 0,
            expected: data.sample_shape().to_vec(),
            actual: plan.sample_shape.clone(),
        });
    }
    if plan.entries.len() != data.len() {
        return Err(Error::Precondition(format!(
            "plan covers {} samples, dataset has {}",
            plan.entries.len(),
            data.len()
        )));
    }
    let n = data.sample_len();
    if fill.len() != n {
        return Err(Error::ShapeMismatch {
            layer: 0,
            expected: vec![n],
            actual: vec![fill.len()],
        });
    }
    let (units, channels) = occlusion_units(data.sample_shape());
    let fill: Vec<T> = fill.iter().map(|&v| T::narrow(v)).collect();
    let mut features = data.features().to_vec();
    for (i, entry) in plan.entries.iter().enumerate() {
        let sample = &mut features[i * n..(i + 1) * n];
        for &u in &entry.occluded_indices {
            if u >= units {
                return Err(Error::Precondition(format!(
                    "occluded index {u} out of range for {units} units (sample {})",
                    entry.sample_id
                )));
            }
            for c in 0..channels {
                sample[c * units + u] = fill[c * units + u];
            }
        }
    }
    LabeledDataset::new(
        data.sample_shape().to_vec(),
        features,
        data.labels().to_vec(),
        data.classes(),
        data.split(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;

    const XI: [f64; 3] = [0.5, -0.9, 0.1];

    #[test]
    fn orders_on_a_small_map() {
        assert_eq!(
            rank_units(&XI, &[3], OcclusionOrder::HighestFirst, 0),
            vec![0, 2, 1]
        );
        assert_eq!(
            rank_units(&XI, &[3], OcclusionOrder::RelevantFirst, 0),
            vec![1, 0, 2]
        );
        assert_eq!(
            rank_units(&XI, &[3], OcclusionOrder::LowestFirst, 0),
            vec![1, 2, 0]
        );
        assert_eq!(
            rank_units(&XI, &[3], OcclusionOrder::IrrelevantFirst, 0),
            vec![2, 0, 1]
        );
    }

    #[test]
    fn ties_break_by_index() {
        let v = [1.0, 1.0, 0.0, 1.0];
        assert_eq!(
            rank_units(&v, &[4], OcclusionOrder::HighestFirst, 0),
            vec![0, 1, 3, 2]
        );
        assert_eq!(
            rank_units(&v, &[4], OcclusionOrder::LowestFirst, 0),
            vec![2, 0, 1, 3]
        );
    }

    #[test]
    fn two_thirds_highest_first() {
        let r = rank_units(&XI, &[3], OcclusionOrder::HighestFirst, 0);
        let plan = ManipulationPlan::from_rankings(
            &[(0, &r)],
            &[3],
            2.0 / 3.0,
            OcclusionOrder::HighestFirst,
            Replacement::Constant(0.0),
        )
        .unwrap();
        assert_eq!(plan.entries[0].occluded_indices, vec![0, 2]);
    }

    #[test]
    fn floor_count_is_robust() {
        assert_eq!(occlusion_count(0.9, 784), 705);
        assert_eq!(occlusion_count(0.3, 10), 3);
        assert_eq!(occlusion_count(0.7, 10), 7);
        assert_eq!(occlusion_count(1.0, 5), 5);
    }

    #[test]
    fn apply_constant_and_mean() {
        let data = LabeledDataset::<f64>::new(
            vec![3],
            vec![1.0, 2.0, 3.0, 1.0, 5.0, 3.0],
            vec![0, 1],
            2,
            Split::Train,
        )
        .unwrap();
        let entries = vec![
            PlanEntry {
                sample_id: 0,
                occluded_indices: vec![0, 2],
            },
            PlanEntry {
                sample_id: 1,
                occluded_indices: vec![0],
            },
        ];
        let mut plan = ManipulationPlan {
            ratio: 2.0 / 3.0,
            order: OcclusionOrder::HighestFirst,
            replacement: Replacement::Constant(0.0),
            sample_shape: vec![3],
            entries,
        };
        let out = apply_plan(&data, &plan).unwrap();
        assert_eq!(&out.features()[..3], &[0.0, 2.0, 0.0]);
        assert_eq!(out.labels(), data.labels());
        plan.replacement = Replacement::PerFeatureMean;
        let out = apply_plan(&data, &plan).unwrap();
        assert_eq!(out.features()[0], 1.0);
        assert_eq!(out.features()[2], 3.0);
    }

    #[test]
    fn multichannel_pixels_are_occluded_together() {
        // 2 channels, 1x2 pixels; pixel 1 has the larger summed magnitude
        let v = [0.1, -0.5, 0.2, 0.6];
        assert_eq!(
            rank_units(&v, &[2, 1, 2], OcclusionOrder::RelevantFirst, 0),
            vec![1, 0]
        );
        // signed sum: pixel 0 = 0.3, pixel 1 = 0.1
        assert_eq!(
            rank_units(&v, &[2, 1, 2], OcclusionOrder::HighestFirst, 0),
            vec![0, 1]
        );
    }

    #[test]
    fn plan_json_roundtrip() {
        let r = rank_units(&XI, &[3], OcclusionOrder::Random { seed: 4 }, 9);
        let plan = ManipulationPlan::from_rankings(
            &[(9, &r)],
            &[3],
            0.5,
            OcclusionOrder::Random { seed: 4 },
            Replacement::PerChannelMean,
        )
        .unwrap();
        assert_eq!(
            ManipulationPlan::from_json(&plan.to_json().unwrap()).unwrap(),
            plan
        );
    }
}
