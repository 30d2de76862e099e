use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{DataSplit, LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::nn::{Dense, Layer, Network};
use crate::rng::{stream, tag};
use crate::scalar::Scalar;
use crate::theory::SharedFeatureDistribution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Exclusive primary block per class plus one block shared by two classes.
    PlantedEvidence,
    /// Gaussian clusters around seeded class means.
    Blobs,
    /// Two features, label `1` iff `|x1 - x2|` exceeds a balancing threshold.
    CancellationPair,
}

/// Secondary evidence shared by two classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharedBlock {
    /// `(y, y*)`.
    pub classes: (usize, usize),
    /// Cell index in the block tiling of the grid.
    pub block: usize,
    /// Activation probability for class `y`.
    pub p_on: f64,
    /// Activation probability for class `y*`; defaults to `p_on`.
    #[serde(default)]
    pub p_on_partner: Option<f64>,
}

impl SharedBlock {
    pub fn partner_p_on(&self) -> f64 {
        self.p_on_partner.unwrap_or(self.p_on)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Side length of the square feature grid.
    pub grid: usize,
    /// Side length of the square evidence blocks.
    pub block: usize,
    /// Primary block cell per class; evenly spread when absent.
    #[serde(default)]
    pub primary_blocks: Option<Vec<usize>>,
    #[serde(default)]
    pub shared: Option<SharedBlock>,
    pub noise_std: f64,
    pub seed: u64,
}

const CANCELLATION_THRESHOLD: f64 = 1.0 - std::f64::consts::FRAC_1_SQRT_2;

impl SyntheticSpec {
    /// 16x16 grid, 5 classes, 2x2 blocks, one shared block between classes 0 and 1.
    pub fn planted(seed: u64) -> Self {
        SyntheticSpec {
            kind: SyntheticKind::PlantedEvidence,
            classes: 5,
            train_per_class: 400,
            test_per_class: 100,
            grid: 16,
            block: 2,
            primary_blocks: None,
            shared: Some(SharedBlock {
                classes: (0, 1),
                block: 0,
                p_on: 0.9,
                p_on_partner: None,
            }),
            noise_std: 0.1,
            seed,
        }
        .with_default_shared_cell()
    }

    pub fn blobs(classes: usize, grid: usize, seed: u64) -> Self {
        SyntheticSpec {
            kind: SyntheticKind::Blobs,
            classes,
            train_per_class: 200,
            test_per_class: 50,
            grid,
            block: 1,
            primary_blocks: None,
            shared: None,
            noise_std: 0.1,
            seed,
        }
    }

    pub fn cancellation_pair(seed: u64) -> Self {
        SyntheticSpec {
            kind: SyntheticKind::CancellationPair,
            classes: 2,
            train_per_class: 500,
            test_per_class: 200,
            grid: 1,
            block: 1,
            primary_blocks: None,
            shared: None,
            noise_std: 0.0,
            seed,
        }
    }

    fn with_default_shared_cell(mut self) -> Self {
        let cells = self.cells_per_side().pow(2);
        let step = cells / (self.classes + 1);
        if let Some(s) = self.shared.as_mut() {
            s.block = cells - step / 2 - 1;
        }
        self
    }

    fn cells_per_side(&self) -> usize {
        self.grid / self.block.max(1)
    }

    pub fn sample_shape(&self) -> Vec<usize> {
        match self.kind {
            SyntheticKind::CancellationPair => vec![2],
            _ => vec![1, self.grid, self.grid],
        }
    }

    pub fn primary_cells(&self) -> Vec<usize> {
        if let Some(cells) = &self.primary_blocks {
            return cells.clone();
        }
        let cells = self.cells_per_side().pow(2);
        let step = (cells / (self.classes + 1)).max(1);
        (0..self.classes).map(|c| step / 2 + c * step).collect()
    }

    /// Flat feature indices covered by a block cell.
    pub fn cell_indices(&self, cell: usize) -> Vec<usize> {
        let per_side = self.cells_per_side();
        let (row, col) = (cell / per_side, cell % per_side);
        let mut out = Vec::with_capacity(self.block * self.block);
        for r in 0..self.block {
            for c in 0..self.block {
                out.push((row * self.block + r) * self.grid + col * self.block + c);
            }
        }
        out
    }

    pub fn primary_indices(&self, class: usize) -> Vec<usize> {
        self.cell_indices(self.primary_cells()[class])
    }

    pub fn shared_indices(&self) -> Option<Vec<usize>> {
        self.shared.map(|s| self.cell_indices(s.block))
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::config("synthetic data needs at least 2 classes"));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::config("samples per class must be positive"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config(format!(
                "noise std must be non-negative, got {}",
                self.noise_std
            )));
        }
        match self.kind {
            SyntheticKind::CancellationPair => {
                if self.classes != 2 {
                    return Err(Error::config(
                        "cancellation pair data has exactly 2 classes",
                    ));
                }
            }
            SyntheticKind::Blobs => {
                if self.grid == 0 {
                    return Err(Error::config("grid must be positive"));
                }
            }
            SyntheticKind::PlantedEvidence => self.validate_blocks()?,
        }
        Ok(())
    }

    fn validate_blocks(&self) -> Result<()> {
        if self.block == 0 || self.grid == 0 || !self.grid.is_multiple_of(self.block) {
            return Err(Error::config(format!(
                "block size {} must divide grid {}",
                self.block, self.grid
            )));
        }
        let cells = self.cells_per_side().pow(2);
        let primary = self.primary_cells();
        if primary.len() != self.classes {
            return Err(Error::config(format!(
                "{} primary blocks for {} classes",
                primary.len(),
                self.classes
            )));
        }
        let mut used = vec![false; cells];
        for &cell in &primary {
            if cell >= cells {
                return Err(Error::config(format!(
                    "block cell {cell} outside the {cells}-cell grid"
                )));
            }
            if used[cell] {
                return Err(Error::config(format!(
                    "primary blocks overlap at cell {cell}"
                )));
            }
            used[cell] = true;
        }
        if let Some(s) = &self.shared {
            if s.block >= cells {
                return Err(Error::config(format!(
                    "shared cell {} outside the grid",
                    s.block
                )));
            }
            if used[s.block] {
                return Err(Error::config(format!(
                    "shared block overlaps a primary block at cell {}",
                    s.block
                )));
            }
            let (a, b) = s.classes;
            if a == b || a >= self.classes || b >= self.classes {
                return Err(Error::config(format!(
                    "invalid sharing classes {:?}",
                    s.classes
                )));
            }
            for p in [s.p_on, s.partner_p_on()] {
                if !(p > 0.0 && p < 1.0) && p != 1.0 {
                    return Err(Error::config(format!(
                        "activation probability must be in (0, 1], got {p}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// The binary (y, S2) distribution induced by the shared block:
    /// `gamma = 1/C`, `p = (p_on + p_on') / C`, `alpha = p_on / (p_on + p_on')`.
    pub fn shared_distribution(&self) -> Result<SharedFeatureDistribution> {
        let s = self
            .shared
            .ok_or_else(|| Error::config("spec has no shared block"))?;
        let c = self.classes as f64;
        let total = s.p_on + s.partner_p_on();
        SharedFeatureDistribution::new(1.0 / c, total / c, s.p_on / total, self.classes)
    }
}

/// Generates balanced train and test splits; deterministic under `spec.seed`.
pub fn generate_synthetic<T: Scalar>(spec: &SyntheticSpec) -> Result<DataSplit<T>> {
    spec.validate()?;
    let train = generate_split(spec, Split::Train, spec.train_per_class)?;
    let test = generate_split(spec, Split::Test, spec.test_per_class)?;
    Ok(DataSplit { train, test })
}

fn generate_split<T: Scalar>(
    spec: &SyntheticSpec,
    split: Split,
    per_class: usize,
) -> Result<LabeledDataset<T>> {
    let split_tag = match split {
        Split::Train => 0,
        Split::Test => 1,
    };
    let mut rng = stream(spec.seed, &[tag::SYNTHETIC, split_tag]);
    let shape = spec.sample_shape();
    let len: usize = shape.iter().product();
    let n = per_class * spec.classes;
    let mut features: Vec<f64> = Vec::with_capacity(n * len);
    let mut labels = Vec::with_capacity(n);
    let noise = Normal::new(0.0, spec.noise_std.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::config(e.to_string()))?;
    let draw_noise = |rng: &mut rand_chacha::ChaCha8Rng| {
        if spec.noise_std > 0.0 {
            noise.sample(rng)
        } else {
            0.0
        }
    };

    match spec.kind {
        SyntheticKind::PlantedEvidence => {
            let primary: Vec<Vec<usize>> =
                (0..spec.classes).map(|c| spec.primary_indices(c)).collect();
            let shared = spec.shared_indices();
            for i in 0..n {
                let class = i % spec.classes;
                let mut x: Vec<f64> = (0..len)
                    .map(|_| draw_noise(&mut rng).clamp(0.0, 1.0))
                    .collect();
                for &j in &primary[class] {
                    x[j] = 1.0;
                }
                if let (Some(s), Some(idx)) = (spec.shared, shared.as_ref()) {
                    let p_on = if class == s.classes.0 {
                        s.p_on
                    } else if class == s.classes.1 {
                        s.partner_p_on()
                    } else {
                        0.0
                    };
                    if p_on > 0.0 && rng.random::<f64>() < p_on {
                        for &j in idx {
                            x[j] = 1.0;
                        }
                    }
                }
                features.extend(x);
                labels.push(class);
            }
        }
        SyntheticKind::Blobs => {
            let mut means_rng = stream(spec.seed, &[tag::SYNTHETIC, 2]);
            let means: Vec<Vec<f64>> = (0..spec.classes)
                .map(|_| (0..len).map(|_| means_rng.random_range(0.2..0.8)).collect())
                .collect();
            for i in 0..n {
                let class = i % spec.classes;
                features.extend(
                    means[class]
                        .iter()
                        .map(|m| (m + draw_noise(&mut rng)).clamp(0.0, 1.0)),
                );
                labels.push(class);
            }
        }
        SyntheticKind::CancellationPair => {
            let mut counts = [0usize; 2];
            while counts[0] + counts[1] < n {
                let x1: f64 = rng.random();
                let x2: f64 = rng.random();
                let class = usize::from((x1 - x2).abs() > CANCELLATION_THRESHOLD);
                if counts[class] == per_class {
                    continue;
                }
                counts[class] += 1;
                features.extend([x1, x2]);
                labels.push(class);
            }
        }
    }
    LabeledDataset::new(
        shape,
        features.into_iter().map(T::narrow).collect(),
        labels,
        spec.classes,
        split,
    )
}

/// Fixed two-input network whose class-0 logit is a piecewise-linear
/// interpolation of `(x1 - x2)^2` on `[-2, 2]` with knots every `0.25`; the
/// class-1 logit is constant zero.
pub fn cancellation_network<T: Scalar>() -> Network<T> {
    const STEP: f64 = 0.25;
    const KNOTS: usize = 8;
    let hidden = 2 * KNOTS;
    let mut w1 = Vec::with_capacity(hidden * 2);
    let mut b1 = Vec::with_capacity(hidden);
    for sign in [1.0, -1.0] {
        for k in 0..KNOTS {
            // unit = relu(sign * (x1 - x2) - t_k)
            w1.extend([sign, -sign]);
            b1.push(-(k as f64) * STEP);
        }
    }
    // slope of t^2 interpolation increases by 2*STEP at each knot (first segment slope STEP)
    let mut w2 = vec![0.0; 2 * hidden];
    for half in 0..2 {
        for k in 0..KNOTS {
            w2[half * KNOTS + k] = if k == 0 { STEP } else { 2.0 * STEP };
        }
    }
    let narrow = |v: Vec<f64>| v.into_iter().map(T::narrow).collect::<Vec<T>>();
    let first = Dense::new(2, hidden, narrow(w1), narrow(b1)).expect("consistent sizes");
    let head = Dense::new(hidden, 2, narrow(w2), vec![T::zero(); 2]).expect("consistent sizes");
    Network::new(
        vec![2],
        vec![Layer::Dense(first), Layer::Relu, Layer::Dense(head)],
    )
    .expect("valid network")
}
