//! Labels, substitution matrices and finite-support multi-type branching laws.
//!
//! A law assigns to each label `j` a finite list of offspring configurations
//! `s` (counts of children per label) with probabilities. Laws used by the
//! rest of the crate must give every vertex at least one child, so that the
//! sampled trees never die out.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-label probabilities must sum to one within this tolerance.
pub const NORMALIZATION_TOL: f64 = 1e-12;
/// Defects above [`NORMALIZATION_TOL`] but below this are renormalized.
pub const RENORMALIZE_TOL: f64 = 1e-9;

/// Positive integer matrix generating a tree of finite cone type: a vertex of
/// label `j` has `M[j][k]` children of label `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "MatrixJson", into = "MatrixJson")]
pub struct SubstitutionMatrix {
    rows: Vec<Vec<u32>>,
}

#[derive(Serialize, Deserialize)]
struct MatrixJson {
    #[serde(rename = "M")]
    m: Vec<Vec<u32>>,
}

impl TryFrom<MatrixJson> for SubstitutionMatrix {
    type Error = Error;
    fn try_from(value: MatrixJson) -> Result<Self> {
        SubstitutionMatrix::new(value.m)
    }
}

impl From<SubstitutionMatrix> for MatrixJson {
    fn from(value: SubstitutionMatrix) -> Self {
        MatrixJson { m: value.rows }
    }
}

impl SubstitutionMatrix {
    pub fn new(rows: Vec<Vec<u32>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidMatrix("empty matrix".into()));
        }
        for (j, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidMatrix(format!(
                    "row {j} has {} entries, expected {n}",
                    row.len()
                )));
            }
            if let Some(k) = row.iter().position(|&m| m == 0) {
                return Err(Error::InvalidMatrix(format!("entry ({j},{k}) is zero")));
            }
        }
        if n == 1 && rows[0][0] < 2 {
            return Err(Error::InvalidMatrix(
                "a single-label matrix must have entry at least 2".into(),
            ));
        }
        Ok(Self { rows })
    }

    /// The `[[k]]` matrix of the rooted `k`-ary tree.
    pub fn regular(k: u32) -> Result<Self> {
        Self::new(vec![vec![k]])
    }

    /// Parses either `{"M": [[...]]}` or a bare `[[...]]`.
    pub fn from_json_str(s: &str) -> Result<Self> {
        match serde_json::from_str::<SubstitutionMatrix>(s) {
            Ok(m) => Ok(m),
            Err(_) => Self::new(serde_json::from_str::<Vec<Vec<u32>>>(s)?),
        }
    }

    pub fn labels(&self) -> usize {
        self.rows.len()
    }

    pub fn entry(&self, j: usize, k: usize) -> u32 {
        self.rows[j][k]
    }

    pub fn row(&self, j: usize) -> &[u32] {
        &self.rows[j]
    }

    pub fn rows(&self) -> &[Vec<u32>] {
        &self.rows
    }

    /// Number of children of a label-`j` vertex.
    pub fn row_sum(&self, j: usize) -> u32 {
        self.rows[j].iter().sum()
    }

    /// Vertex degree of a non-root label-`j` vertex, `1 + sum_k M[j][k]`.
    pub fn degree(&self, j: usize) -> u32 {
        1 + self.row_sum(j)
    }

    pub fn max_row_sum(&self) -> u32 {
        (0..self.labels())
            .map(|j| self.row_sum(j))
            .max()
            .unwrap_or(0)
    }

    pub fn config(&self, j: usize) -> OffspringConfig {
        OffspringConfig(self.rows[j].clone())
    }

    /// Whether relabeling by `perm` leaves the matrix unchanged.
    pub fn is_invariant_under(&self, perm: &[usize]) -> bool {
        let n = self.labels();
        perm.len() == n
            && (0..n).all(|j| (0..n).all(|k| self.rows[perm[j]][perm[k]] == self.rows[j][k]))
    }
}

/// Number of children of each label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OffspringConfig(pub Vec<u32>);

impl OffspringConfig {
    pub fn norm(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn counts(&self) -> &[u32] {
        &self.0
    }

    pub fn zeros(labels: usize) -> Self {
        Self(vec![0; labels])
    }
}

impl fmt::Display for OffspringConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedConfig {
    pub config: OffspringConfig,
    pub prob: f64,
}

/// Unvalidated JSON form of a branching law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub labels: usize,
    pub offspring: Vec<Vec<WeightedConfig>>,
}

/// A validated finite-support multi-type branching law.
///
/// Each label's support is merged, stripped of zero-probability entries and
/// sorted, so two laws with the same distribution compare equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProcessSpec", into = "ProcessSpec")]
pub struct BranchingProcess {
    offspring: Vec<Vec<(OffspringConfig, f64)>>,
}

impl TryFrom<ProcessSpec> for BranchingProcess {
    type Error = Error;

    fn try_from(spec: ProcessSpec) -> Result<Self> {
        let report = validate_process(&spec);
        if !report.is_valid() {
            return Err(Error::InvalidProcess(report.errors.join("; ")));
        }
        let offspring = spec
            .offspring
            .iter()
            .zip(&report.per_label)
            .map(|(entries, lr)| {
                if lr.normalization_defect.abs() > NORMALIZATION_TOL {
                    log::warn!(
                        "label {}: renormalizing probabilities (defect {:e})",
                        lr.label,
                        lr.normalization_defect
                    );
                }
                let total = 1.0 + lr.normalization_defect;
                let mut merged: HashMap<OffspringConfig, f64> = HashMap::new();
                for e in entries.iter().filter(|e| e.prob > 0.0) {
                    *merged.entry(e.config.clone()).or_insert(0.0) += e.prob / total;
                }
                let mut support: Vec<_> = merged.into_iter().collect();
                support.sort_by(|a, b| a.0.cmp(&b.0));
                support
            })
            .collect();
        Ok(Self { offspring })
    }
}

impl From<BranchingProcess> for ProcessSpec {
    fn from(b: BranchingProcess) -> Self {
        ProcessSpec {
            labels: b.labels(),
            offspring: b
                .offspring
                .into_iter()
                .map(|support| {
                    support
                        .into_iter()
                        .map(|(config, prob)| WeightedConfig { config, prob })
                        .collect()
                })
                .collect(),
        }
    }
}

impl BranchingProcess {
    pub fn from_spec(spec: ProcessSpec) -> Result<Self> {
        Self::try_from(spec)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn labels(&self) -> usize {
        self.offspring.len()
    }

    /// Support of label `j` in canonical order.
    pub fn support(&self, j: usize) -> &[(OffspringConfig, f64)] {
        &self.offspring[j]
    }

    pub fn prob(&self, j: usize, s: &OffspringConfig) -> f64 {
        self.offspring[j]
            .iter()
            .find(|(c, _)| c == s)
            .map_or(0.0, |(_, p)| *p)
    }

    /// Largest number of children any vertex can have.
    pub fn max_branching(&self) -> u32 {
        self.offspring
            .iter()
            .flatten()
            .map(|(c, _)| c.norm())
            .max()
            .unwrap_or(0)
    }

    /// Expected number of label-`k` children of a label-`j` vertex.
    pub fn mean_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.labels();
        (0..n)
            .map(|j| {
                (0..n)
                    .map(|k| {
                        self.offspring[j]
                            .iter()
                            .map(|(c, p)| p * c.0[k] as f64)
                            .sum()
                    })
                    .collect()
            })
            .collect()
    }

    /// Picks the configuration whose cumulative probability first exceeds `u`.
    pub fn config_for_uniform(&self, j: usize, u: f64) -> &OffspringConfig {
        let support = &self.offspring[j];
        let mut acc = 0.0;
        for (c, p) in support {
            acc += p;
            if u < acc {
                return c;
            }
        }
        &support[support.len() - 1].0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelReport {
    pub label: usize,
    /// `sum of probabilities - 1`.
    pub normalization_defect: f64,
    /// Configurations with no children (and positive probability).
    pub no_child_configs: usize,
    pub no_child_mass: f64,
    pub support_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub labels: usize,
    pub per_label: Vec<LabelReport>,
    pub errors: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn satisfies_forward_condition(&self) -> bool {
        self.per_label.iter().all(|l| l.no_child_configs == 0)
    }
}

/// Checks normalization, the at-least-one-child condition and shape of a law.
pub fn validate_process(spec: &ProcessSpec) -> ValidationReport {
    let mut errors = Vec::new();
    if spec.labels == 0 {
        errors.push("no labels".to_string());
    }
    if spec.offspring.len() != spec.labels {
        errors.push(format!(
            "{} offspring lists for {} labels",
            spec.offspring.len(),
            spec.labels
        ));
    }
    let mut per_label = Vec::with_capacity(spec.offspring.len());
    for (j, entries) in spec.offspring.iter().enumerate() {
        let mut sum = 0.0;
        let mut no_child_configs = 0;
        let mut no_child_mass = 0.0;
        let mut seen = std::collections::HashSet::new();
        for e in entries {
            if e.config.0.len() != spec.labels {
                errors.push(format!(
                    "label {j}: config {} has {} entries, expected {}",
                    e.config,
                    e.config.0.len(),
                    spec.labels
                ));
            }
            if !e.prob.is_finite() || e.prob < 0.0 || e.prob > 1.0 {
                errors.push(format!("label {j}: probability {} outside [0,1]", e.prob));
                continue;
            }
            if e.prob == 0.0 {
                continue;
            }
            sum += e.prob;
            seen.insert(e.config.clone());
            if e.config.norm() == 0 {
                no_child_configs += 1;
                no_child_mass += e.prob;
            }
        }
        let defect = sum - 1.0;
        if seen.is_empty() {
            errors.push(format!("label {j}: empty support"));
        } else if defect.abs() > RENORMALIZE_TOL {
            errors.push(format!("label {j}: probabilities sum to {sum}"));
        }
        if no_child_configs > 0 {
            errors.push(format!(
                "label {j}: {no_child_configs} childless configuration(s) with mass {no_child_mass}"
            ));
        }
        per_label.push(LabelReport {
            label: j,
            normalization_defect: defect,
            no_child_configs,
            no_child_mass,
            support_size: seen.len(),
        });
    }
    ValidationReport {
        labels: spec.labels,
        per_label,
        errors,
    }
}

/// The law under which every label-`j` vertex has exactly `M[j][k]` children
/// of label `k`.
pub fn deterministic_process(m: &SubstitutionMatrix) -> BranchingProcess {
    BranchingProcess {
        offspring: (0..m.labels()).map(|j| vec![(m.config(j), 1.0)]).collect(),
    }
}

fn check_exponent(p: f64) -> Result<()> {
    if !(p.is_finite() && p >= 1.0) {
        return Err(Error::InvalidArgument(format!("exponent {p} must be >= 1")));
    }
    Ok(())
}

/// `max_j sum_s |P1_j(s) - P2_j(s)| * |s|^p` over the union of supports.
pub fn dp_distance(b1: &BranchingProcess, b2: &BranchingProcess, p: f64) -> Result<f64> {
    check_exponent(p)?;
    if b1.labels() != b2.labels() {
        return Err(Error::AlphabetMismatch(b1.labels(), b2.labels()));
    }
    let mut worst = 0.0f64;
    for j in 0..b1.labels() {
        let mut diff: HashMap<&OffspringConfig, f64> = HashMap::new();
        for (c, q) in b1.support(j) {
            *diff.entry(c).or_insert(0.0) += q;
        }
        for (c, q) in b2.support(j) {
            *diff.entry(c).or_insert(0.0) -= q;
        }
        let mut terms: Vec<(&OffspringConfig, f64)> = diff.into_iter().collect();
        terms.sort_by(|a, b| a.0.cmp(b.0));
        let total: f64 = terms
            .iter()
            .map(|(c, d)| d.abs() * (c.norm() as f64).powf(p))
            .sum();
        worst = worst.max(total);
    }
    Ok(worst)
}

/// `sum_s P_j(s) |s|^p` for each label.
pub fn moment_p(b: &BranchingProcess, p: f64) -> Result<Vec<f64>> {
    check_exponent(p)?;
    Ok((0..b.labels())
        .map(|j| {
            b.support(j)
                .iter()
                .map(|(c, q)| q * (c.norm() as f64).powf(p))
                .sum()
        })
        .collect())
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Single-label percolation on the rooted `k`-ary tree: one child is always
/// kept, each of the other `k - 1` survives independently with `p_keep`.
pub fn percolation_process(k: u32, p_keep: f64) -> Result<BranchingProcess> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("K = {k} must be >= 2")));
    }
    if !(p_keep > 0.0 && p_keep <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "keep probability {p_keep} outside (0,1]"
        )));
    }
    let trials = k - 1;
    let offspring = (0..=trials)
        .map(|m| WeightedConfig {
            config: OffspringConfig(vec![1 + m]),
            prob: binomial(trials, m)
                * p_keep.powi(m as i32)
                * (1.0 - p_keep).powi((trials - m) as i32),
        })
        .collect();
    BranchingProcess::from_spec(ProcessSpec {
        labels: 1,
        offspring: vec![offspring],
    })
}

/// Upper bound on the critical keep probability of regular-tree percolation,
/// `(1 - x)^(1/(K-1))` with `x = 2^-32 K^-22 / (2K-1)!`, or
/// `x = 2^-33 K^-22` for the two-permutation variant.
///
/// The bound is within `1e-17` of one, so it is carried as its distance to
/// one (`deficit`), kept in log form to survive underflow for large `K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PkBound {
    pub k: u32,
    pub improved: bool,
    /// `ln x`.
    pub ln_x: f64,
    /// `ln(1 - bound)`.
    pub ln_deficit: f64,
}

impl PkBound {
    /// `1 - bound`, accurate to double relative precision while representable.
    pub fn deficit(&self) -> f64 {
        self.ln_deficit.exp()
    }

    /// The bound rounded to `f64`; equals `1.0` for every `K >= 2`.
    pub fn value(&self) -> f64 {
        1.0 - self.deficit()
    }
}

impl fmt::Display for PkBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.deficit() > 0.0 {
            write!(f, "1 - {:.16e}", self.deficit())
        } else {
            write!(f, "1 - exp({:.16e})", self.ln_deficit)
        }
    }
}

pub fn ln_factorial(n: u32) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

pub fn percolation_pk_bound(k: u32, improved: bool) -> Result<PkBound> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("K = {k} must be >= 2")));
    }
    let ln2 = std::f64::consts::LN_2;
    let lnk = (k as f64).ln();
    let ln_x = if improved {
        -33.0 * ln2 - 22.0 * lnk
    } else {
        -32.0 * ln2 - 22.0 * lnk - ln_factorial(2 * k - 1)
    };
    let root = (k - 1) as f64;
    let x = ln_x.exp();
    let ln_deficit = if x > 0.0 {
        // 1 - (1-x)^(1/root)
        (-((-x).ln_1p() / root).exp_m1()).ln()
    } else {
        ln_x - root.ln()
    };
    Ok(PkBound {
        k,
        improved,
        ln_x,
        ln_deficit,
    })
}
