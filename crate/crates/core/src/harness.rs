//! Reproducible runs: dataset sources, run manifests and the train / explain /
//! evaluate drivers behind the command-line tool.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::binio::{read_file, write_file};
use crate::data::{generate_synthetic, load_mnist, DataSplit, Split, SyntheticSpec};
use crate::error::{Error, Result};
use crate::explain::{encode_attributions, AttributionRecord, Explainer, ExplainerConfig};
use crate::nn::{
    encode_network, load_network, predictions, train, Network, TrainConfig, TrainReport,
};
use crate::scalar::Scalar;
use crate::schemes::{
    compare_report, network_hash, run_scheme_cached, sample_id, write_curves_csv,
    write_results_csv, AttributionCache, EvalResult, SchemeConfig, TargetRule,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "model.aevnet";
pub const RESULTS_FILE: &str = "results.csv";
pub const CURVES_FILE: &str = "curves.csv";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic { spec: SyntheticSpec },
    Mnist { dir: PathBuf },
}

impl DatasetSource {
    /// Parses `synthetic:planted`, `synthetic:blobs`, `synthetic:cancellation`
    /// or `mnist:<dir>`; `seed` seeds synthetic generators.
    pub fn parse(s: &str, seed: u64) -> Result<Self> {
        let unknown = || Error::Unknown {
            kind: "dataset",
            name: s.to_string(),
        };
        let (family, arg) = s.split_once(':').ok_or_else(unknown)?;
        Ok(match (family, arg) {
            ("synthetic", "planted") => DatasetSource::Synthetic {
                spec: SyntheticSpec::planted(seed),
            },
            ("synthetic", "blobs") => DatasetSource::Synthetic {
                spec: SyntheticSpec::blobs(5, 16, seed),
            },
            ("synthetic", "cancellation") => DatasetSource::Synthetic {
                spec: SyntheticSpec::cancellation_pair(seed),
            },
            ("mnist", dir) if !dir.is_empty() => DatasetSource::Mnist { dir: dir.into() },
            _ => return Err(unknown()),
        })
    }

    pub fn load<T: Scalar>(&self) -> Result<DataSplit<T>> {
        match self {
            DatasetSource::Synthetic { spec } => generate_synthetic(spec),
            DatasetSource::Mnist { dir } => load_mnist(dir),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Mlp { hidden: Vec<usize> },
    SmallCnn { hidden: usize },
}

impl ModelSpec {
    pub fn build<T: Scalar>(
        &self,
        input_shape: &[usize],
        classes: usize,
        seed: u64,
    ) -> Result<Network<T>> {
        match self {
            ModelSpec::Mlp { hidden } => Network::mlp(input_shape, hidden, classes, seed),
            ModelSpec::SmallCnn { hidden } => {
                Network::small_cnn(input_shape, *hidden, classes, seed)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(Error::Unknown {
                kind: "precision",
                name: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainJob {
    pub dataset: DatasetSource,
    pub model: ModelSpec,
    pub init_seed: u64,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainJob {
    pub dataset: DatasetSource,
    pub explainer: ExplainerConfig,
    pub split: Split,
    /// Explain only the first `limit` samples of the split.
    pub limit: Option<usize>,
    pub target: TargetRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateJob {
    pub dataset: DatasetSource,
    pub explainers: Vec<ExplainerConfig>,
    pub schemes: Vec<SchemeConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum RunSpec {
    Train(TrainJob),
    Explain(ExplainJob),
    Evaluate(EvaluateJob),
}

impl RunSpec {
    fn dataset(&self) -> &DatasetSource {
        match self {
            RunSpec::Train(j) => &j.dataset,
            RunSpec::Explain(j) => &j.dataset,
            RunSpec::Evaluate(j) => &j.dataset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    /// Relative to the run directory.
    pub path: String,
    pub sha256: String,
}

/// Everything needed to re-execute a run and check its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub tool_version: String,
    pub precision: Precision,
    pub run: RunSpec,
    pub dataset_hash: String,
    /// Hash of the model the run consumed or produced.
    pub checkpoint_hash: Option<String>,
    pub outputs: Vec<OutputFile>,
}

impl RunManifest {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(path: &Path, text: &str) -> Result<Self> {
        let m: RunManifest = serde_json::from_str(text)?;
        if m.format_version != MANIFEST_VERSION {
            return Err(Error::Format {
                path: path.to_path_buf(),
                offset: 0,
                message: format!(
                    "manifest version {} is not supported (expected {MANIFEST_VERSION})",
                    m.format_version
                ),
            });
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = String::from_utf8_lossy(&bytes);
        Self::from_json(path, &text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_json()?.as_bytes())
    }

    pub fn output(&self, path: &str) -> Option<&OutputFile> {
        self.outputs.iter().find(|o| o.path == path)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Fails with a hash mismatch unless `actual == expected`.
pub fn check_hash(what: &str, expected: &str, actual: &str) -> Result<()> {
    if expected != actual {
        return Err(Error::HashMismatch {
            expected: format!("{what} {expected}"),
            actual: actual.to_string(),
        });
    }
    Ok(())
}

struct Outputs<'a> {
    dir: &'a Path,
    files: Vec<OutputFile>,
}

impl<'a> Outputs<'a> {
    fn new(dir: &'a Path) -> Self {
        Outputs {
            dir,
            files: Vec::new(),
        }
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        write_file(&self.dir.join(rel), bytes)?;
        self.files.push(OutputFile {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    fn finish(
        self,
        precision: Precision,
        run: RunSpec,
        dataset_hash: String,
        checkpoint_hash: Option<String>,
    ) -> Result<RunManifest> {
        let manifest = RunManifest {
            format_version: MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            precision,
            run,
            dataset_hash,
            checkpoint_hash,
            outputs: self.files,
        };
        manifest.save(&self.dir.join(MANIFEST_FILE))?;
        Ok(manifest)
    }
}

pub fn precision_of<T: Scalar>() -> Precision {
    if std::mem::size_of::<T>() == 4 {
        Precision::F32
    } else {
        Precision::F64
    }
}

/// Trains a fresh model and writes the checkpoint, training history and manifest.
pub fn run_train<T: Scalar>(
    job: &TrainJob,
    out: &Path,
) -> Result<(Network<T>, TrainReport, RunManifest)> {
    let data = job.dataset.load::<T>()?;
    let net = job.model.build::<T>(
        data.train.sample_shape(),
        data.train.classes(),
        job.init_seed,
    )?;
    let (net, report) = train(&net, &data.train, &job.train)?;
    let mut outputs = Outputs::new(out);
    let checkpoint = encode_network(&net);
    outputs.write(CHECKPOINT_FILE, &checkpoint)?;
    outputs.write(
        "history.json",
        serde_json::to_string_pretty(&report)?.as_bytes(),
    )?;
    let manifest = outputs.finish(
        precision_of::<T>(),
        RunSpec::Train(job.clone()),
        data.content_hash(),
        Some(sha256_hex(&checkpoint)),
    )?;
    Ok((net, report, manifest))
}

/// Loads a checkpoint; when a manifest sits next to it, its dataset hash must
/// match `dataset_hash`.
pub fn load_checkpoint<T: Scalar>(path: &Path, dataset_hash: &str) -> Result<Network<T>> {
    let net = load_network(path)?;
    if let Some(dir) = path.parent() {
        let manifest_path = dir.join(MANIFEST_FILE);
        if manifest_path.exists() {
            let m = RunManifest::load(&manifest_path)?;
            if let Some(expected) = &m.checkpoint_hash {
                check_hash("checkpoint", expected, &network_hash(&net))?;
            }
            check_hash("dataset", &m.dataset_hash, dataset_hash)?;
        }
    }
    Ok(net)
}

/// Explains a split and writes an attribution dump plus manifest.
pub fn run_explain<T: Scalar>(
    job: &ExplainJob,
    net: &Network<T>,
    out: &Path,
) -> Result<RunManifest> {
    let data = job.dataset.load::<T>()?;
    let set = match job.split {
        Split::Train => &data.train,
        Split::Test => &data.test,
    };
    let count = job.limit.map_or(set.len(), |l| l.min(set.len()));
    let targets = match job.target {
        TargetRule::Predicted => predictions(net, set)?,
        TargetRule::Label => set.labels().to_vec(),
    };
    let explainer = Explainer::new(job.explainer.clone())?.with_reference(&data.train);
    let mut records = Vec::with_capacity(count);
    for (i, &target) in targets.iter().enumerate().take(count) {
        let id = sample_id(job.split, i);
        let map = explainer.explain(net, &set.tensor(i), target, id)?;
        records.push(AttributionRecord::from_map(id, &map));
    }
    let mut outputs = Outputs::new(out);
    outputs.write("attributions.aevatt", &encode_attributions(&records))?;
    outputs.write(CHECKPOINT_FILE, &encode_network(net))?;
    outputs.finish(
        precision_of::<T>(),
        RunSpec::Explain(job.clone()),
        data.content_hash(),
        Some(network_hash(net)),
    )
}

fn file_stem(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Runs every (scheme, explainer) pair against `net` and writes results,
/// curves, per-run JSON, the comparison report and the manifest.
pub fn run_evaluate<T: Scalar>(
    job: &EvaluateJob,
    net: &Network<T>,
    out: &Path,
) -> Result<(Vec<EvalResult>, RunManifest)> {
    if job.explainers.is_empty() || job.schemes.is_empty() {
        return Err(Error::config(
            "evaluation needs at least one explainer and one scheme",
        ));
    }
    let data = job.dataset.load::<T>()?;
    let mut cache = AttributionCache::new();
    let mut results = Vec::new();
    for scheme in &job.schemes {
        for explainer in &job.explainers {
            results.push(run_scheme_cached(
                net, &data, explainer, scheme, &mut cache,
            )?);
        }
    }
    let mut outputs = Outputs::new(out);
    outputs.write(CHECKPOINT_FILE, &encode_network(net))?;
    let mut csv = Vec::new();
    write_results_csv(&results, &mut csv).map_err(|e| Error::io(out.join(RESULTS_FILE), e))?;
    outputs.write(RESULTS_FILE, &csv)?;
    let curves: Vec<_> = results.iter().map(EvalResult::curve).collect();
    let mut csv = Vec::new();
    write_curves_csv(&curves, &mut csv).map_err(|e| Error::io(out.join(CURVES_FILE), e))?;
    outputs.write(CURVES_FILE, &csv)?;
    for r in &results {
        let rel = format!(
            "runs/{}__{}.json",
            file_stem(&r.scheme),
            file_stem(&r.explainer)
        );
        outputs.write(&rel, r.to_json()?.as_bytes())?;
    }
    let report = compare_report(&results)?;
    outputs.write("report.csv", report.to_csv().as_bytes())?;
    outputs.write("report.md", report.to_markdown().as_bytes())?;
    let manifest = outputs.finish(
        precision_of::<T>(),
        RunSpec::Evaluate(job.clone()),
        data.content_hash(),
        Some(network_hash(net)),
    )?;
    Ok((results, manifest))
}

fn replay_typed<T: Scalar>(
    original: &RunManifest,
    source_dir: &Path,
    out: &Path,
) -> Result<RunManifest> {
    let data_hash = original.run.dataset().load::<T>()?.content_hash();
    check_hash("dataset", &original.dataset_hash, &data_hash)?;
    let load_model = || -> Result<Network<T>> {
        let net = load_network::<T>(&source_dir.join(CHECKPOINT_FILE))?;
        if let Some(expected) = &original.checkpoint_hash {
            check_hash("checkpoint", expected, &network_hash(&net))?;
        }
        Ok(net)
    };
    match &original.run {
        RunSpec::Train(job) => run_train::<T>(job, out).map(|(_, _, m)| m),
        RunSpec::Explain(job) => run_explain(job, &load_model()?, out),
        RunSpec::Evaluate(job) => run_evaluate(job, &load_model()?, out).map(|(_, m)| m),
    }
}

/// Re-executes the run described by `manifest_path` into `out` and checks
/// that every recorded output is reproduced byte for byte.
pub fn replay(manifest_path: &Path, out: &Path) -> Result<RunManifest> {
    let original = RunManifest::load(manifest_path)?;
    let source_dir = manifest_path.parent().unwrap_or(Path::new("."));
    let replayed = match original.precision {
        Precision::F32 => replay_typed::<f32>(&original, source_dir, out)?,
        Precision::F64 => replay_typed::<f64>(&original, source_dir, out)?,
    };
    for file in &original.outputs {
        let actual = replayed
            .output(&file.path)
            .map_or("<missing>", |o| o.sha256.as_str());
        check_hash(&file.path, &file.sha256, actual)?;
    }
    Ok(replayed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_sources_parse() {
        assert!(matches!(
            DatasetSource::parse("synthetic:planted", 3).unwrap(),
            DatasetSource::Synthetic { .. }
        ));
        assert_eq!(
            DatasetSource::parse("mnist:data/x", 0).unwrap(),
            DatasetSource::Mnist {
                dir: "data/x".into()
            }
        );
        assert!(DatasetSource::parse("cifar:x", 0).is_err());
        assert!(DatasetSource::parse("planted", 0).is_err());
    }

    #[test]
    fn manifest_version_checked() {
        let m = RunManifest {
            format_version: MANIFEST_VERSION + 1,
            tool_version: "0".into(),
            precision: Precision::F32,
            run: RunSpec::Evaluate(EvaluateJob {
                dataset: DatasetSource::Mnist { dir: "x".into() },
                explainers: vec![],
                schemes: vec![],
            }),
            dataset_hash: String::new(),
            checkpoint_hash: None,
            outputs: vec![],
        };
        let err = RunManifest::from_json(Path::new("m"), &m.to_json().unwrap()).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }
}
