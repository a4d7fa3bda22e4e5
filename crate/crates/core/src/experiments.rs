//! Monte-Carlo experiments on sampled trees.
//!
//! Every sample draws its tree from a seed derived from the master seed, the
//! root label and the sample index. Samples are evaluated in parallel,
//! collected in index order and summed pairwise, so results do not depend on
//! the number of worker threads.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cone_green::{
    detect_bands, linear_grid, solve_green, GreenVector, Interval, SolverConfig,
};
use crate::cone_green::{DEFAULT_DENSITY_THRESHOLD, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::estimates::{band_interior_green, perron_left_vector, stochastic_p};
use crate::halfplane::{gamma_raw, UpperHalfPoint};
use crate::model::{
    deterministic_process, dp_distance, percolation_pk_bound, percolation_process,
    BranchingProcess, PkBound, SubstitutionMatrix,
};
use crate::random_green::{
    full_green_with_boundary, truncated_green_recursion, Boundary, BoundaryRule, NEAR_AXIS_ETA,
};
use crate::tree::sample_tree;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

fn default_p() -> f64 {
    2.0
}
fn default_samples() -> usize {
    10_000
}
fn default_depth() -> usize {
    12
}
fn default_boundary() -> BoundaryRule {
    BoundaryRule::Deterministic
}
fn default_etas() -> Vec<f64> {
    vec![1e-3]
}
fn default_flag_fraction() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub process: BranchingProcess,
    pub matrix: SubstitutionMatrix,
    /// Energy window; defaults to the middle 60% of the first detected band.
    #[serde(default)]
    pub window: Option<[f64; 2]>,
    /// Energies to evaluate; defaults to the window midpoint.
    #[serde(default)]
    pub energies: Option<Vec<f64>>,
    #[serde(default = "default_etas")]
    pub etas: Vec<f64>,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_boundary")]
    pub boundary: BoundaryRule,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Largest tolerated fraction of flagged energies before a run counts as
    /// a numerical failure.
    #[serde(default = "default_flag_fraction")]
    pub max_flagged_fraction: f64,
}

impl ExperimentConfig {
    pub fn new(process: BranchingProcess, matrix: SubstitutionMatrix) -> Self {
        Self {
            process,
            matrix,
            window: None,
            energies: None,
            etas: default_etas(),
            p: default_p(),
            samples: default_samples(),
            depth: default_depth(),
            boundary: default_boundary(),
            seed: 0,
            output_dir: None,
            max_flagged_fraction: default_flag_fraction(),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "p = {} must exceed 1",
                self.p
            )));
        }
        if self.depth < 2 {
            return Err(Error::InvalidArgument(format!(
                "depth {} must be at least 2",
                self.depth
            )));
        }
        if self.samples == 0 {
            return Err(Error::InvalidArgument("samples must be positive".into()));
        }
        if self.process.labels() != self.matrix.labels() {
            return Err(Error::AlphabetMismatch(
                self.process.labels(),
                self.matrix.labels(),
            ));
        }
        if self.etas.is_empty() || self.etas.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::InvalidArgument("etas must be positive".into()));
        }
        if let Some([lo, hi]) = self.window {
            if !(lo < hi) {
                return Err(Error::InvalidArgument("window must satisfy lo < hi".into()));
            }
            if let Some(es) = &self.energies {
                if es.iter().any(|&e| e < lo || e > hi) {
                    return Err(Error::InvalidArgument(
                        "energies must lie inside the window".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// `d_p` distance of the configured law to the cone law.
    pub fn distance_to_cone(&self) -> Result<f64> {
        dp_distance(&self.process, &deterministic_process(&self.matrix), self.p)
    }

    /// The configured window, or the middle 60% of the first detected band.
    pub fn resolved_window(&self) -> Result<Interval> {
        if let Some([lo, hi]) = self.window {
            return Ok(Interval { lo, hi });
        }
        let reach = 2.0 * (self.matrix.max_row_sum() as f64 + 1.0);
        let grid = linear_grid(-0.5, reach, 0.01)?;
        let report = detect_bands(
            &self.matrix,
            &grid,
            2f64.powi(-20),
            DEFAULT_DENSITY_THRESHOLD,
            &SolverConfig::default(),
        )?;
        let band = report
            .intervals
            .iter()
            .copied()
            .max_by(|a, b| a.width().total_cmp(&b.width()))
            .ok_or_else(|| Error::InvalidArgument("no spectral band detected".into()))?;
        Ok(band.shrink(0.6))
    }

    pub fn resolved_energies(&self) -> Result<Vec<f64>> {
        match &self.energies {
            Some(e) => Ok(e.clone()),
            None => {
                let w = self.resolved_window()?;
                Ok(vec![0.5 * (w.lo + w.hi)])
            }
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Seed of sample `index` rooted at `label`.
pub fn sample_seed(master: u64, label: usize, index: u64) -> u64 {
    let mut x = master ^ ((label as u64) << 40) ^ index.wrapping_mul(0xd134_2543_de82_ef95);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Pairwise summation in slice order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 16 {
        return values.iter().sum();
    }
    let (a, b) = values.split_at(values.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub count: usize,
    pub mean: f64,
    pub std_err: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub median: f64,
    /// Mean after dropping the lowest and highest 10%.
    pub trimmed_mean: f64,
    pub max: f64,
}

impl SampleStats {
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                count: 0,
                mean: f64::NAN,
                std_err: f64::NAN,
                ci_low: f64::NAN,
                ci_high: f64::NAN,
                median: f64::NAN,
                trimmed_mean: f64::NAN,
                max: f64::NAN,
            };
        }
        let mean = pairwise_sum(values) / n as f64;
        let squares: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        let var = if n > 1 {
            pairwise_sum(&squares) / (n - 1) as f64
        } else {
            0.0
        };
        let std_err = (var / n as f64).sqrt();
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        let cut = n / 10;
        let kept = &sorted[cut..n - cut];
        Self {
            count: n,
            mean,
            std_err,
            ci_low: mean - Z95 * std_err,
            ci_high: mean + Z95 * std_err,
            median,
            trimmed_mean: pairwise_sum(kept) / kept.len() as f64,
            max: sorted[n - 1],
        }
    }

    pub fn overlaps(&self, other: &SampleStats) -> bool {
        self.ci_low <= other.ci_high && other.ci_low <= self.ci_high
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloVector {
    pub z: Complex64,
    pub p: f64,
    pub per_label: Vec<SampleStats>,
}

impl MonteCarloVector {
    pub fn means(&self) -> Vec<f64> {
        self.per_label.iter().map(|s| s.mean).collect()
    }

    pub fn std_errs(&self) -> Vec<f64> {
        self.per_label.iter().map(|s| s.std_err).collect()
    }
}

/// Cone values at `z`; near the axis the energy must be band-interior.
pub fn cone_green_at(m: &SubstitutionMatrix, z: Complex64) -> Result<GreenVector> {
    let point = UpperHalfPoint::try_from(z)?;
    if z.im <= NEAR_AXIS_ETA {
        band_interior_green(m, point)
    } else {
        solve_green(m, point, DEFAULT_TOL, DEFAULT_MAX_ITER)
    }
}

fn boundary_for<'a>(
    rule: BoundaryRule,
    m: &'a SubstitutionMatrix,
    green: &'a GreenVector,
) -> Boundary<'a> {
    match rule {
        BoundaryRule::FiniteExact => Boundary::FiniteExact,
        BoundaryRule::Deterministic => Boundary::Deterministic { m, green },
        BoundaryRule::ConstantI => Boundary::ConstantI,
    }
}

/// `gamma(Gamma_root, Gamma_j)^p` for every sample rooted at `j`.
pub fn egamma_samples(cfg: &ExperimentConfig, green: &GreenVector, j: usize) -> Result<Vec<f64>> {
    let boundary = boundary_for(cfg.boundary, &cfg.matrix, green);
    (0..cfg.samples as u64)
        .into_par_iter()
        .map(|i| {
            let tree = sample_tree(&cfg.process, j, cfg.depth, sample_seed(cfg.seed, j, i))?;
            let field = truncated_green_recursion(&tree, green.z, &boundary)?;
            Ok(gamma_raw(field.root(), green.get(j)).powf(cfg.p))
        })
        .collect()
}

/// Monte-Carlo estimate of `E gamma(Gamma_{o(j)}, Gamma_j)^p` for every label.
pub fn estimate_egamma(cfg: &ExperimentConfig, z: Complex64) -> Result<MonteCarloVector> {
    cfg.validate()?;
    let green = cone_green_at(&cfg.matrix, z)?;
    egamma_with(cfg, &green)
}

fn egamma_with(cfg: &ExperimentConfig, green: &GreenVector) -> Result<MonteCarloVector> {
    let per_label = (0..cfg.matrix.labels())
        .map(|j| egamma_samples(cfg, green, j).map(|v| SampleStats::from_samples(&v)))
        .collect::<Result<_>>()?;
    Ok(MonteCarloVector {
        z: green.z,
        p: cfg.p,
        per_label,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    /// Half-width of the 95% interval, including a floating-point allowance.
    pub half_width: f64,
}

impl Estimate {
    pub fn nonnegative_within_ci(&self) -> bool {
        self.value + self.half_width >= 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveConstant {
    pub epsilon: f64,
    /// Smallest `C_j >= 0` with `E gamma <= (1 - epsilon) P E gamma + C`.
    pub c_needed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorInequalityReport {
    pub egamma: MonteCarloVector,
    pub stochastic: Vec<Vec<f64>>,
    pub perron: Vec<f64>,
    pub p_egamma: Vec<f64>,
    /// `(P E gamma)_j - (E gamma)_j` per label.
    pub slack: Vec<Estimate>,
    /// `<u, P E gamma - E gamma>`.
    pub projected_slack: Estimate,
    pub additive: Vec<AdditiveConstant>,
    pub distance_to_cone: f64,
}

/// `E gamma` against `P E gamma` at one spectral parameter.
pub fn verify_vector_inequality(
    cfg: &ExperimentConfig,
    z: Complex64,
) -> Result<VectorInequalityReport> {
    cfg.validate()?;
    let green = cone_green_at(&cfg.matrix, z)?;
    let egamma = egamma_with(cfg, &green)?;
    vector_report(cfg, &green, egamma)
}

fn vector_report(
    cfg: &ExperimentConfig,
    green: &GreenVector,
    egamma: MonteCarloVector,
) -> Result<VectorInequalityReport> {
    let p = stochastic_p(&cfg.matrix, green);
    let u = perron_left_vector(&p)?;
    let n = p.len();
    let e = egamma.means();
    let se = egamma.std_errs();
    let round = |terms: f64| 64.0 * f64::EPSILON * terms;
    let p_egamma: Vec<f64> = (0..n)
        .map(|j| (0..n).map(|k| p[j][k] * e[k]).sum())
        .collect();
    let slack = (0..n)
        .map(|j| {
            let coeff = |k: usize| p[j][k] - if j == k { 1.0 } else { 0.0 };
            let var: f64 = (0..n).map(|k| (coeff(k) * se[k]).powi(2)).sum();
            Estimate {
                value: p_egamma[j] - e[j],
                half_width: Z95 * var.sqrt() + round(p_egamma[j].abs() + e[j].abs()),
            }
        })
        .collect();
    // <u, P E - E> = sum_k ((P^T u)_k - u_k) E_k
    let weights: Vec<f64> = (0..n)
        .map(|k| (0..n).map(|j| u[j] * p[j][k]).sum::<f64>() - u[k])
        .collect();
    let projected_value: f64 = (0..n).map(|k| weights[k] * e[k]).sum();
    let projected_var: f64 = (0..n).map(|k| (weights[k] * se[k]).powi(2)).sum();
    let magnitude: f64 = (0..n).map(|k| u[k] * e[k].abs()).sum();
    let projected_slack = Estimate {
        value: projected_value,
        half_width: Z95 * projected_var.sqrt() + round(magnitude),
    };
    let additive = [0.01, 0.05, 0.1]
        .iter()
        .map(|&eps| AdditiveConstant {
            epsilon: eps,
            c_needed: (0..n)
                .map(|j| (e[j] - (1.0 - eps) * p_egamma[j]).max(0.0))
                .collect(),
        })
        .collect();
    Ok(VectorInequalityReport {
        egamma,
        stochastic: p,
        perron: u,
        p_egamma,
        slack,
        projected_slack,
        additive,
        distance_to_cone: cfg.distance_to_cone()?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub energy: f64,
    pub eta: f64,
    pub label: usize,
    pub sphere: usize,
    /// Sphere average of `gamma(G_x, Gamma_{a(x)})^p`.
    pub gamma: SampleStats,
    /// Sphere average of `|G_x|^p`.
    pub modulus: SampleStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentScan {
    pub rows: Vec<MomentRow>,
    /// Energies outside the band interior, left out of the scan.
    pub skipped: Vec<f64>,
}

/// Sphere averages of full Green functions against the cone values, for
/// every energy, `eta` and sphere `0..depth`.
pub fn sphere_moment_scan(cfg: &ExperimentConfig) -> Result<MomentScan> {
    cfg.validate()?;
    let energies = cfg.resolved_energies()?;
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let spheres = cfg.depth;
    for &energy in &energies {
        if !crate::estimates::is_band_interior(&cfg.matrix, energy)? {
            skipped.push(energy);
            continue;
        }
        for &eta in &cfg.etas {
            let green = cone_green_at(&cfg.matrix, Complex64::new(energy, eta))?;
            let boundary = match cfg.boundary {
                BoundaryRule::ConstantI => Boundary::Deterministic {
                    m: &cfg.matrix,
                    green: &green,
                },
                rule => boundary_for(rule, &cfg.matrix, &green),
            };
            for j in 0..cfg.matrix.labels() {
                let per_sample: Vec<(Vec<f64>, Vec<f64>)> = (0..cfg.samples as u64)
                    .into_par_iter()
                    .map(|i| {
                        let tree =
                            sample_tree(&cfg.process, j, cfg.depth, sample_seed(cfg.seed, j, i))?;
                        let field = full_green_with_boundary(&tree, green.z, &boundary)?;
                        let full = field.full.as_ref().expect("two-pass fills full values");
                        let mut gsum = vec![0.0; spheres];
                        let mut msum = vec![0.0; spheres];
                        let mut count = vec![0usize; spheres];
                        for x in &tree.nodes {
                            if x.depth < spheres {
                                gsum[x.depth] +=
                                    gamma_raw(full[x.id], green.get(x.label)).powf(cfg.p);
                                msum[x.depth] += full[x.id].norm().powf(cfg.p);
                                count[x.depth] += 1;
                            }
                        }
                        let avg = |s: Vec<f64>| {
                            s.iter().zip(&count).map(|(v, &c)| v / c as f64).collect()
                        };
                        Ok((avg(gsum), avg(msum)))
                    })
                    .collect::<Result<_>>()?;
                for n in 0..spheres {
                    let g: Vec<f64> = per_sample.iter().map(|s| s.0[n]).collect();
                    let md: Vec<f64> = per_sample.iter().map(|s| s.1[n]).collect();
                    rows.push(MomentRow {
                        energy,
                        eta,
                        label: j,
                        sphere: n,
                        gamma: SampleStats::from_samples(&g),
                        modulus: SampleStats::from_samples(&md),
                    });
                }
            }
        }
    }
    let total = energies.len().max(1) as f64;
    if skipped.len() as f64 / total > cfg.max_flagged_fraction {
        return Err(Error::FlaggedWindow(skipped[0]));
    }
    Ok(MomentScan { rows, skipped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercolationRow {
    pub p_keep: f64,
    pub energy: f64,
    pub eta: f64,
    pub distance_to_cone: f64,
    pub egamma: SampleStats,
    pub slack: Estimate,
    pub projected_slack: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercolationReport {
    pub k: u32,
    pub p: f64,
    pub rows: Vec<PercolationRow>,
    pub bound: PkBound,
    pub improved_bound: PkBound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercolationSetup {
    pub k: u32,
    pub p_keep: Vec<f64>,
    /// Energies; defaults to the Laplacian midband `K + 1`.
    pub energies: Option<Vec<f64>>,
    pub etas: Vec<f64>,
    pub p: f64,
    pub samples: usize,
    pub depth: usize,
    pub seed: u64,
}

/// Keep-probability sweep of single-label percolation on the `K`-regular
/// cone tree.
pub fn percolation_study(setup: &PercolationSetup) -> Result<PercolationReport> {
    let m = SubstitutionMatrix::regular(setup.k)?;
    let energies = setup
        .energies
        .clone()
        .unwrap_or_else(|| vec![setup.k as f64 + 1.0]);
    let mut rows = Vec::new();
    for &q in &setup.p_keep {
        let mut cfg = ExperimentConfig::new(percolation_process(setup.k, q)?, m.clone());
        cfg.p = setup.p;
        cfg.samples = setup.samples;
        cfg.depth = setup.depth;
        cfg.seed = setup.seed;
        cfg.etas = setup.etas.clone();
        let distance = cfg.distance_to_cone()?;
        for &energy in &energies {
            for &eta in &setup.etas {
                let report = verify_vector_inequality(&cfg, Complex64::new(energy, eta))?;
                rows.push(PercolationRow {
                    p_keep: q,
                    energy,
                    eta,
                    distance_to_cone: distance,
                    egamma: report.egamma.per_label[0],
                    slack: report.slack[0],
                    projected_slack: report.projected_slack,
                });
            }
        }
    }
    Ok(PercolationReport {
        k: setup.k,
        p: setup.p,
        rows,
        bound: percolation_pk_bound(setup.k, false)?,
        improved_bound: percolation_pk_bound(setup.k, true)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    /// Seconds since the Unix epoch; not part of the hash.
    pub timestamp: u64,
}

impl Provenance {
    pub fn new<C: Serialize>(config: &C, seed: u64) -> Result<Self> {
        let json = serde_json::to_vec(config)?;
        Ok(Self {
            config_hash: hex::encode(Sha256::digest(&json)),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        })
    }
}

#[derive(Debug, Clone, Serialize)]
struct Envelope<'a, C: Serialize, R: Serialize> {
    provenance: &'a Provenance,
    config: &'a C,
    result: &'a R,
}

/// Writes `{provenance, config, result}` as pretty JSON to `dir/name.json`.
pub fn write_json_report<C: Serialize, R: Serialize>(
    dir: &Path,
    name: &str,
    provenance: &Provenance,
    config: &C,
    result: &R,
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{name}.json"));
    let text = serde_json::to_string_pretty(&Envelope {
        provenance,
        config,
        result,
    })?;
    std::fs::write(&path, text + "\n")?;
    Ok(path)
}

/// Writes rows as CSV to `dir/name.csv` with provenance columns appended.
pub fn write_csv_report(
    dir: &Path,
    name: &str,
    provenance: &Provenance,
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{name}.csv"));
    let mut w = csv::Writer::from_path(&path)?;
    let mut full_header: Vec<&str> = header.to_vec();
    full_header.extend(["config_hash", "seed", "version"]);
    w.write_record(&full_header)?;
    let seed = provenance.seed.to_string();
    for row in rows {
        let mut record = row.clone();
        record.extend([
            provenance.config_hash.clone(),
            seed.clone(),
            provenance.version.clone(),
        ]);
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(path)
}

pub fn egamma_rows(v: &MonteCarloVector) -> Vec<Vec<String>> {
    v.per_label
        .iter()
        .enumerate()
        .map(|(j, s)| {
            vec![
                v.z.re.to_string(),
                v.z.im.to_string(),
                j.to_string(),
                s.mean.to_string(),
                s.std_err.to_string(),
                s.ci_low.to_string(),
                s.ci_high.to_string(),
                s.median.to_string(),
                s.trimmed_mean.to_string(),
                s.count.to_string(),
            ]
        })
        .collect()
}

pub const EGAMMA_HEADER: [&str; 10] = [
    "E",
    "eta",
    "label",
    "mean",
    "std_err",
    "ci_low",
    "ci_high",
    "median",
    "trimmed_mean",
    "count",
];

pub fn moment_rows(scan: &MomentScan) -> Vec<Vec<String>> {
    scan.rows
        .iter()
        .map(|r| {
            vec![
                r.energy.to_string(),
                r.eta.to_string(),
                r.label.to_string(),
                r.sphere.to_string(),
                r.gamma.mean.to_string(),
                r.gamma.std_err.to_string(),
                r.modulus.mean.to_string(),
                r.modulus.std_err.to_string(),
            ]
        })
        .collect()
}

pub const MOMENT_HEADER: [&str; 8] = [
    "E",
    "eta",
    "label",
    "sphere",
    "gamma_mean",
    "gamma_std_err",
    "modulus_mean",
    "modulus_std_err",
];

pub fn percolation_rows(report: &PercolationReport) -> Vec<Vec<String>> {
    report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.p_keep.to_string(),
                r.energy.to_string(),
                r.eta.to_string(),
                r.distance_to_cone.to_string(),
                r.egamma.mean.to_string(),
                r.egamma.ci_low.to_string(),
                r.egamma.ci_high.to_string(),
                r.slack.value.to_string(),
                r.slack.half_width.to_string(),
                report.bound.to_string(),
                report.improved_bound.to_string(),
            ]
        })
        .collect()
}

pub const PERCOLATION_HEADER: [&str; 11] = [
    "p_keep",
    "E",
    "eta",
    "dp_distance",
    "egamma_mean",
    "egamma_ci_low",
    "egamma_ci_high",
    "slack",
    "slack_half_width",
    "pk_bound",
    "pk_bound_improved",
];
