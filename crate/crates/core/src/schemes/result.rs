use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{read_file, write_file};
use crate::error::{Error, Result};
use crate::manipulate::OcclusionOrder;
use crate::nn::UpdateCounters;
use crate::schemes::config::UpdateProtocol;

const GRID_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub scheme_seed: u64,
    pub repetition_seeds: Vec<u64>,
    pub explainer_seed: u64,
    pub checkpoint_hash: String,
    pub dataset_hash: String,
}

/// Accuracies of one (scheme, explainer) run, indexed `[ratio][repetition]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub scheme: String,
    pub explainer: String,
    pub order: OcclusionOrder,
    pub update: UpdateProtocol,
    pub ratios: Vec<f64>,
    pub accuracy: Vec<Vec<f64>>,
    /// Accuracy of the explained model on the clean test split.
    pub base_accuracy: f64,
    /// Summed over every model update of the run.
    pub counters: UpdateCounters,
    pub updates: u64,
    /// Gradient queries spent on attributions computed during the run.
    pub gradient_queries: u64,
    pub provenance: Provenance,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
pub fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// `sqrt((s1^2 + s2^2) / 2)`.
pub fn pooled_std(s1: f64, s2: f64) -> f64 {
    ((s1 * s1 + s2 * s2) / 2.0).sqrt()
}

impl EvalResult {
    pub fn repetitions(&self) -> usize {
        self.accuracy.first().map_or(0, Vec::len)
    }

    pub fn mean(&self, ratio_index: usize) -> f64 {
        mean(&self.accuracy[ratio_index])
    }

    pub fn std(&self, ratio_index: usize) -> f64 {
        sample_std(&self.accuracy[ratio_index])
    }

    pub fn ratio_index(&self, ratio: f64) -> Option<usize> {
        self.ratios.iter().position(|r| (r - ratio).abs() < 1e-9)
    }

    pub fn curve(&self) -> DegradationCurve {
        DegradationCurve {
            scheme: self.scheme.clone(),
            explainer: self.explainer.clone(),
            ratios: self.ratios.clone(),
            mean: (0..self.ratios.len()).map(|i| self.mean(i)).collect(),
            std: (0..self.ratios.len()).map(|i| self.std(i)).collect(),
        }
    }

    pub fn is_keep(&self) -> bool {
        matches!(
            self.order,
            OcclusionOrder::LowestFirst | OcclusionOrder::IrrelevantFirst
        )
    }

    pub fn is_remove(&self) -> bool {
        matches!(
            self.order,
            OcclusionOrder::HighestFirst | OcclusionOrder::RelevantFirst
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = std::str::from_utf8(&bytes).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            offset: e.valid_up_to() as u64,
            message: "not UTF-8".into(),
        })?;
        Self::from_json(text)
    }
}

pub const RESULTS_HEADER: &str = "scheme,explainer,ratio,repetition,accuracy,seed";
pub const CURVES_HEADER: &str = "scheme,explainer,ratio,mean,std";

pub fn write_results_csv<W: Write>(results: &[EvalResult], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{RESULTS_HEADER}")?;
    for r in results {
        for (i, ratio) in r.ratios.iter().enumerate() {
            for (rep, acc) in r.accuracy[i].iter().enumerate() {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    r.scheme, r.explainer, ratio, rep, acc, r.provenance.repetition_seeds[rep]
                )?;
            }
        }
    }
    Ok(())
}

/// Mean accuracy per ratio for one (scheme, explainer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationCurve {
    pub scheme: String,
    pub explainer: String,
    pub ratios: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn write_curves_csv<W: Write>(curves: &[DegradationCurve], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CURVES_HEADER}")?;
    for c in curves {
        for i in 0..c.ratios.len() {
            writeln!(
                out,
                "{},{},{},{},{}",
                c.scheme, c.explainer, c.ratios[i], c.mean[i], c.std[i]
            )?;
        }
    }
    Ok(())
}

/// Parses a curve CSV; rows of one (scheme, explainer) pair are grouped in file order.
pub fn read_curves_csv(path: &Path, text: &str) -> Result<Vec<DegradationCurve>> {
    let mut curves: Vec<DegradationCurve> = Vec::new();
    let mut offset = 0u64;
    for (line_no, line) in text.lines().enumerate() {
        let here = offset;
        offset += line.len() as u64 + 1;
        if line_no == 0 {
            if line.trim() != CURVES_HEADER {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    offset: 0,
                    message: format!("expected header `{CURVES_HEADER}`"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Format {
            path: path.to_path_buf(),
            offset: here,
            message,
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(bad(format!("expected 5 fields, got {}", fields.len())));
        }
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| bad(format!("`{s}`: {e}")))
        };
        let (ratio, m, s) = (num(fields[2])?, num(fields[3])?, num(fields[4])?);
        let (scheme, explainer) = (fields[0].to_string(), fields[1].to_string());
        match curves
            .iter_mut()
            .find(|c| c.scheme == scheme && c.explainer == explainer)
        {
            Some(c) => {
                c.ratios.push(ratio);
                c.mean.push(m);
                c.std.push(s);
            }
            None => curves.push(DegradationCurve {
                scheme,
                explainer,
                ratios: vec![ratio],
                mean: vec![m],
                std: vec![s],
            }),
        }
    }
    Ok(curves)
}

fn same_grid(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| (x - y).abs() <= GRID_TOLERANCE)
}

fn trapezoid(ratios: &[f64], values: &[f64]) -> f64 {
    ratios
        .windows(2)
        .zip(values.windows(2))
        .map(|(r, v)| (r[1] - r[0]) * (v[0] + v[1]) / 2.0)
        .sum()
}

/// Trapezoidal area of `keep - remove` over the shared ratio grid.
pub fn delta_acc(keep: &DegradationCurve, remove: &DegradationCurve) -> Result<f64> {
    if !same_grid(&keep.ratios, &remove.ratios) {
        return Err(Error::Precondition(format!(
            "ratio grids differ: {:?} vs {:?}",
            keep.ratios, remove.ratios
        )));
    }
    let diff: Vec<f64> = keep
        .mean
        .iter()
        .zip(&remove.mean)
        .map(|(k, r)| k - r)
        .collect();
    Ok(trapezoid(&keep.ratios, &diff))
}

/// Paired per-repetition areas between a keep run and a remove run.
pub fn delta_acc_per_repetition(keep: &EvalResult, remove: &EvalResult) -> Result<Vec<f64>> {
    if !same_grid(&keep.ratios, &remove.ratios) {
        return Err(Error::Precondition("ratio grids differ".into()));
    }
    if keep.repetitions() != remove.repetitions() {
        return Err(Error::Precondition(format!(
            "repetition counts differ: {} vs {}",
            keep.repetitions(),
            remove.repetitions()
        )));
    }
    Ok((0..keep.repetitions())
        .map(|rep| {
            let diff: Vec<f64> = (0..keep.ratios.len())
                .map(|i| keep.accuracy[i][rep] - remove.accuracy[i][rep])
                .collect();
            trapezoid(&keep.ratios, &diff)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub explainer: String,
    pub keep_scheme: Option<String>,
    pub remove_scheme: Option<String>,
    pub keep_area: Option<f64>,
    pub remove_area: Option<f64>,
    pub delta_acc: Option<f64>,
    /// Sample std of the paired per-repetition areas.
    pub delta_acc_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub ratios: Vec<f64>,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn row(&self, explainer: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.explainer == explainer)
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("rank,explainer,keep_scheme,remove_scheme,keep_area,remove_area,delta_acc,delta_acc_std\n");
        for (i, r) in self.rows.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                i + 1,
                r.explainer,
                r.keep_scheme.as_deref().unwrap_or(""),
                r.remove_scheme.as_deref().unwrap_or(""),
                opt(&r.keep_area),
                opt(&r.remove_area),
                opt(&r.delta_acc),
                opt(&r.delta_acc_std),
            ));
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let fmt = |v: &Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        let mut out = String::from(
            "| rank | explainer | keep | remove | ΔAcc | std |\n|---|---|---|---|---|---|\n",
        );
        for (i, r) in self.rows.iter().enumerate() {
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} |\n",
                i + 1,
                r.explainer,
                fmt(&r.keep_area),
                fmt(&r.remove_area),
                fmt(&r.delta_acc),
                fmt(&r.delta_acc_std),
            ));
        }
        out
    }
}

fn order_rows(rows: &mut [ReportRow]) {
    rows.sort_by(|a, b| match (a.delta_acc, b.delta_acc) {
        (Some(x), Some(y)) => y.total_cmp(&x).then_with(|| a.explainer.cmp(&b.explainer)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.explainer.cmp(&b.explainer),
    });
}

/// One row per explainer, ranked by ΔAcc (descending) when both a keep and a
/// remove run are present.
pub fn compare_report(results: &[EvalResult]) -> Result<Report> {
    let Some(first) = results.first() else {
        return Ok(Report {
            ratios: Vec::new(),
            rows: Vec::new(),
        });
    };
    if let Some(bad) = results
        .iter()
        .find(|r| !same_grid(&r.ratios, &first.ratios))
    {
        return Err(Error::Precondition(format!(
            "inconsistent ratio grids: {} / {} uses {:?}, expected {:?}",
            bad.scheme, bad.explainer, bad.ratios, first.ratios
        )));
    }
    let mut by_explainer: BTreeMap<&str, (Option<&EvalResult>, Option<&EvalResult>)> =
        BTreeMap::new();
    for r in results {
        let slot = by_explainer.entry(&r.explainer).or_default();
        let target = if r.is_remove() {
            &mut slot.1
        } else {
            &mut slot.0
        };
        if target.is_some() {
            return Err(Error::Precondition(format!(
                "more than one {} run for explainer {}",
                if r.is_remove() { "remove" } else { "keep" },
                r.explainer
            )));
        }
        *target = Some(r);
    }
    let mut rows = Vec::new();
    for (explainer, (keep, remove)) in by_explainer {
        let area = |r: &EvalResult| trapezoid(&r.ratios, &r.curve().mean);
        let (delta, delta_std) = match (keep, remove) {
            (Some(k), Some(r)) => (
                Some(delta_acc(&k.curve(), &r.curve())?),
                Some(sample_std(&delta_acc_per_repetition(k, r)?)),
            ),
            _ => (None, None),
        };
        rows.push(ReportRow {
            explainer: explainer.to_string(),
            keep_scheme: keep.map(|r| r.scheme.clone()),
            remove_scheme: remove.map(|r| r.scheme.clone()),
            keep_area: keep.map(area),
            remove_area: remove.map(area),
            delta_acc: delta,
            delta_acc_std: delta_std,
        });
    }
    order_rows(&mut rows);
    Ok(Report {
        ratios: first.ratios.clone(),
        rows,
    })
}

/// ΔAcc report from persisted keep and remove curves, matched by explainer.
pub fn curve_report(keep: &[DegradationCurve], remove: &[DegradationCurve]) -> Result<Report> {
    let mut rows = Vec::new();
    let mut ratios = Vec::new();
    let mut explainers: Vec<&str> = keep
        .iter()
        .chain(remove)
        .map(|c| c.explainer.as_str())
        .collect();
    explainers.sort_unstable();
    explainers.dedup();
    for e in explainers {
        let k = keep.iter().find(|c| c.explainer == e);
        let r = remove.iter().find(|c| c.explainer == e);
        if let Some(c) = k.or(r) {
            if ratios.is_empty() {
                ratios = c.ratios.clone();
            }
        }
        let delta = match (k, r) {
            (Some(k), Some(r)) => Some(delta_acc(k, r)?),
            _ => None,
        };
        rows.push(ReportRow {
            explainer: e.to_string(),
            keep_scheme: k.map(|c| c.scheme.clone()),
            remove_scheme: r.map(|c| c.scheme.clone()),
            keep_area: k.map(|c| trapezoid(&c.ratios, &c.mean)),
            remove_area: r.map(|c| trapezoid(&c.ratios, &c.mean)),
            delta_acc: delta,
            delta_acc_std: None,
        });
    }
    order_rows(&mut rows);
    Ok(Report { ratios, rows })
}
