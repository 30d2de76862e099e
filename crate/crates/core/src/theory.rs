//! Exact oracles for the two sign-issue results: residual mutual information
//! after highest-first occlusion of shared evidence, and the weak positive
//! contributor condition at the softmax level.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::softmax;
use crate::rng::{stream, tag};

const TABLE_TOLERANCE: f64 = 1e-12;

/// Binary label `y` with a shared binary feature group `S2`.
///
/// `gamma = P(y=1)`, `p = P(S2=1)`, `alpha = P(y=1 | S2=1)`; `classes` is the
/// logarithm base.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharedFeatureDistribution {
    pub gamma: f64,
    pub p: f64,
    pub alpha: f64,
    pub classes: usize,
}

impl SharedFeatureDistribution {
    pub fn new(gamma: f64, p: f64, alpha: f64, classes: usize) -> Result<Self> {
        let d = SharedFeatureDistribution {
            gamma,
            p,
            alpha,
            classes,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let SharedFeatureDistribution {
            gamma,
            p,
            alpha,
            classes,
        } = *self;
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::ParameterRange(format!(
                "gamma must be in (0, 1), got {gamma}"
            )));
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::ParameterRange(format!(
                "p must be in (0, 1), got {p}"
            )));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::ParameterRange(format!(
                "alpha must be in [0, 1], got {alpha}"
            )));
        }
        if classes < 2 {
            return Err(Error::ParameterRange(format!(
                "need at least 2 classes, got {classes}"
            )));
        }
        if gamma - alpha * p < -TABLE_TOLERANCE {
            return Err(Error::ParameterRange(format!(
                "gamma - alpha*p = {} is negative",
                gamma - alpha * p
            )));
        }
        if 1.0 - gamma - p + alpha * p < -TABLE_TOLERANCE {
            return Err(Error::ParameterRange(format!(
                "1 - gamma - p + alpha*p = {} is negative",
                1.0 - gamma - p + alpha * p
            )));
        }
        Ok(())
    }

    /// `delta = p - alpha*p = P(y=0, S2=1)`, the mass removed by occlusion.
    pub fn delta(&self) -> f64 {
        self.p - self.alpha * self.p
    }
}

/// `P(y=a, S2=b)` in the order (1,1), (1,0), (0,1), (0,0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointTable(pub [f64; 4]);

impl JointTable {
    pub fn new(entries: [f64; 4]) -> Result<Self> {
        if entries.iter().any(|&v| v.is_nan() || v < 0.0) {
            return Err(Error::ParameterRange(format!(
                "negative table entry in {entries:?}"
            )));
        }
        let total: f64 = entries.iter().sum();
        if (total - 1.0).abs() > TABLE_TOLERANCE {
            return Err(Error::ParameterRange(format!("table sums to {total}")));
        }
        Ok(JointTable(entries))
    }

    pub fn entries(&self) -> [f64; 4] {
        self.0
    }

    /// `P(y=a, S2=b)`.
    pub fn get(&self, y: bool, s2: bool) -> f64 {
        match (y, s2) {
            (true, true) => self.0[0],
            (true, false) => self.0[1],
            (false, true) => self.0[2],
            (false, false) => self.0[3],
        }
    }

    pub fn p_y(&self) -> f64 {
        self.0[0] + self.0[1]
    }

    pub fn p_s2(&self) -> f64 {
        self.0[0] + self.0[2]
    }
}

pub fn joint_table(d: &SharedFeatureDistribution, manipulated: bool) -> Result<JointTable> {
    d.validate()?;
    let SharedFeatureDistribution {
        gamma, p, alpha, ..
    } = *d;
    let ap = alpha * p;
    let entries = if manipulated {
        [ap, gamma - ap, 0.0, 1.0 - gamma]
    } else {
        [ap, gamma - ap, p - ap, 1.0 - gamma - p + ap]
    };
    // Clamp rounding residue at the feasibility boundary.
    JointTable::new(entries.map(|v| v.max(0.0)))
}

fn plogp(p: f64, base_ln: f64) -> f64 {
    if p > 0.0 {
        p * p.ln() / base_ln
    } else {
        0.0
    }
}

/// `H(y)` in base `classes`.
pub fn label_entropy(t: &JointTable, classes: usize) -> f64 {
    let b = (classes as f64).ln();
    let py = t.p_y();
    -(plogp(py, b) + plogp(1.0 - py, b))
}

/// `H(y | S2)` in base `classes`.
pub fn conditional_entropy(t: &JointTable, classes: usize) -> f64 {
    let b = (classes as f64).ln();
    let mut h = 0.0;
    for s2 in [true, false] {
        let ps = t.get(true, s2) + t.get(false, s2);
        if ps <= 0.0 {
            continue;
        }
        for y in [true, false] {
            h -= ps * plogp(t.get(y, s2) / ps, b);
        }
    }
    h
}

/// `I(S2; y) = H(y) - H(y | S2)` in base `classes`; never negative.
pub fn mutual_info(t: &JointTable, classes: usize) -> f64 {
    (label_entropy(t, classes) - conditional_entropy(t, classes)).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Report {
    pub i: f64,
    pub i_tilde: f64,
    /// `H(y|S2) - H~(y|S2)`, equal to `I~ - I`.
    pub gap_exact: f64,
    /// First-order approximation of the gap contributed by the removed mass.
    pub gap_taylor: f64,
    pub holds: bool,
}

pub fn theorem1_check(d: &SharedFeatureDistribution) -> Result<Theorem1Report> {
    d.validate()?;
    if d.p <= d.gamma {
        return Err(Error::Precondition(format!(
            "shared evidence must be more frequent than the class (p > gamma), got p={} gamma={}",
            d.p, d.gamma
        )));
    }
    let original = joint_table(d, false)?;
    let manipulated = joint_table(d, true)?;
    let c = d.classes;
    let i = mutual_info(&original, c);
    let i_tilde = mutual_info(&manipulated, c);
    let gap_exact = conditional_entropy(&original, c) - conditional_entropy(&manipulated, c);
    let gap_taylor = -d.delta() * ((1.0 - d.p) / (1.0 - d.gamma)).ln() / (c as f64).ln();
    Ok(Theorem1Report {
        i,
        i_tilde,
        gap_exact,
        gap_taylor,
        holds: i_tilde > i,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub distribution: SharedFeatureDistribution,
    pub report: Theorem1Report,
}

/// Evaluates every combination with `p > gamma` and a non-negative joint table.
pub fn theorem1_sweep(
    gammas: &[f64],
    ps: &[f64],
    alphas: &[f64],
    classes: &[usize],
) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for &c in classes {
        for &gamma in gammas {
            for &p in ps.iter().filter(|&&p| p > gamma) {
                for &alpha in alphas {
                    let Ok(d) = SharedFeatureDistribution::new(gamma, p, alpha, c) else {
                        continue;
                    };
                    if let Ok(report) = theorem1_check(&d) {
                        rows.push(SweepRow {
                            distribution: d,
                            report,
                        });
                    }
                }
            }
        }
    }
    rows
}

/// Inclusive grid `start, start+step, ..., stop`, rounded to suppress accumulation drift.
pub fn grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if step.is_nan() || step <= 0.0 || stop < start {
        return Err(Error::config(format!("bad grid {start}:{stop}:{step}")));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count)
        .map(|i| round12(start + i as f64 * step))
        .collect())
}

fn round12(v: f64) -> f64 {
    (v * 1e12).round() / 1e12
}

/// The sweep grid used for the residual-information oracle: gamma 0.05..0.45,
/// p from gamma+0.05 to 0.9, alpha 0.1..0.9.
pub fn standard_sweep(classes: &[usize]) -> Vec<SweepRow> {
    let gammas: Vec<f64> = (1..=9).map(|i| i as f64 / 20.0).collect();
    let ps: Vec<f64> = (2..=18).map(|i| i as f64 / 20.0).collect();
    let alphas: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
    theorem1_sweep(&gammas, &ps, &alphas, classes)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "gamma,p,alpha,C,I,I_tilde,gap_exact,gap_taylor,holds")?;
    for r in rows {
        let d = &r.distribution;
        let t = &r.report;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            d.gamma, d.p, d.alpha, d.classes, t.i, t.i_tilde, t.gap_exact, t.gap_taylor, t.holds
        )?;
    }
    Ok(())
}

/// Logits without feature `i` and the per-class logit attribution of `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitAttribution {
    pub context_logits: Vec<f64>,
    pub xi: Vec<f64>,
    pub target: usize,
}

impl LogitAttribution {
    pub fn new(context_logits: Vec<f64>, xi: Vec<f64>, target: usize) -> Result<Self> {
        if context_logits.len() < 2 || context_logits.len() != xi.len() {
            return Err(Error::ParameterRange(format!(
                "need matching vectors of length >= 2, got {} and {}",
                context_logits.len(),
                xi.len()
            )));
        }
        if target >= xi.len() {
            return Err(Error::ParameterRange(format!(
                "target {target} out of range"
            )));
        }
        if context_logits.iter().chain(&xi).any(|v| !v.is_finite()) {
            return Err(Error::ParameterRange(
                "non-finite logit or attribution".into(),
            ));
        }
        Ok(LogitAttribution {
            context_logits,
            xi,
            target,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WpcReport {
    pub is_positive: bool,
    pub is_weak: bool,
    /// `sum_{c != y} f_c / (1 - f_y) * exp(xi_c)` over the context softmax.
    pub expectation: f64,
}

pub fn wpc_condition(a: &LogitAttribution) -> WpcReport {
    let y = a.target;
    // Conditional weights f_c / (1 - f_y) are the softmax over the other classes.
    let others: Vec<f64> = (0..a.xi.len())
        .filter(|&c| c != y)
        .map(|c| a.context_logits[c])
        .collect();
    let weights = softmax(&others);
    let expectation: f64 = (0..a.xi.len())
        .filter(|&c| c != y)
        .zip(&weights)
        .map(|(c, w)| w * a.xi[c].exp())
        .sum();
    WpcReport {
        is_positive: a.xi[y] > 0.0,
        is_weak: a.xi[y].exp() < expectation,
        expectation,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Negative,
    Zero,
    Positive,
}

impl Sign {
    pub fn of(v: f64) -> Sign {
        if v > 0.0 {
            Sign::Positive
        } else if v < 0.0 {
            Sign::Negative
        } else {
            Sign::Zero
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Report {
    pub f_with: f64,
    pub f_without: f64,
    pub attribution_sign: Sign,
    /// A weak positive contributor must lower the target probability.
    pub consistent: bool,
}

pub fn theorem2_check(a: &LogitAttribution) -> Theorem2Report {
    let y = a.target;
    let f_without = softmax(&a.context_logits)[y];
    let with: Vec<f64> = a
        .context_logits
        .iter()
        .zip(&a.xi)
        .map(|(c, x)| c + x)
        .collect();
    let f_with = softmax(&with)[y];
    let attribution_sign = Sign::of(f_with - f_without);
    let wpc = wpc_condition(a);
    let is_wpc = wpc.is_positive && wpc.is_weak;
    Theorem2Report {
        f_with,
        f_without,
        attribution_sign,
        consistent: !is_wpc || attribution_sign == Sign::Negative,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzReport {
    pub instances: u64,
    pub draws: u64,
    pub violations: u64,
}

/// Draws `instances` weak positive contributors (C in 2..=10, context logits in
/// [-5, 5], attributions in [-3, 3], rejection sampled) and counts those whose
/// softmax attribution is not negative.
pub fn wpc_fuzz(instances: u64, seed: u64) -> FuzzReport {
    let mut rng = stream(seed, &[tag::FUZZ]);
    let mut report = FuzzReport {
        instances: 0,
        draws: 0,
        violations: 0,
    };
    while report.instances < instances {
        report.draws += 1;
        let c = rng.random_range(2..=10usize);
        let context: Vec<f64> = (0..c).map(|_| rng.random_range(-5.0..=5.0)).collect();
        let xi: Vec<f64> = (0..c).map(|_| rng.random_range(-3.0..=3.0)).collect();
        let target = rng.random_range(0..c);
        let a = LogitAttribution {
            context_logits: context,
            xi,
            target,
        };
        let wpc = wpc_condition(&a);
        if !(wpc.is_positive && wpc.is_weak) {
            continue;
        }
        report.instances += 1;
        let t2 = theorem2_check(&a);
        if t2.attribution_sign != Sign::Negative {
            report.violations += 1;
        }
    }
    report
}
