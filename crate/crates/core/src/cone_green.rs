//! Green functions of trees of finite cone type.
//!
//! The truncated Green functions `G_j` of the cone tree generated by `M` solve
//! the finite system `-1/G_j = z - deg(j) + sum_k M[j][k] G_k`. This module
//! solves that system in the upper half-plane, follows solutions down to the
//! real axis and reads off the absolutely continuous bands.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::halfplane::{gamma_raw, mobius_raw, UpperHalfPoint};
use crate::model::SubstitutionMatrix;

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 10_000;
pub const DEFAULT_DENSITY_THRESHOLD: f64 = 1e-6;
/// Difference quotients `|dG/deta|` above this on the last continuation stage
/// mark a square-root type singularity (band edge or exceptional point).
pub const DEFAULT_SLOPE_LIMIT: f64 = 100.0;

const NEWTON_STEPS: usize = 100;

/// Truncated Green functions of the cone tree at one spectral parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreenVector {
    pub z: Complex64,
    pub values: Vec<Complex64>,
    pub residual: f64,
}

impl GreenVector {
    pub fn labels(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, j: usize) -> Complex64 {
        self.values[j]
    }

    pub fn point(&self, j: usize) -> UpperHalfPoint {
        UpperHalfPoint::try_from(self.values[j]).expect("green values lie in the upper half-plane")
    }

    pub fn min_im(&self) -> f64 {
        self.values
            .iter()
            .map(|g| g.im)
            .fold(f64::INFINITY, f64::min)
    }
}

fn local_sum(m: &SubstitutionMatrix, j: usize, values: &[Complex64]) -> Complex64 {
    m.row(j)
        .iter()
        .zip(values)
        .map(|(&mjk, g)| g * mjk as f64)
        .sum()
}

/// `max_j |G_j + 1/(z - deg(j) + sum_k M[j][k] G_k)|`.
pub fn fixed_point_residual(m: &SubstitutionMatrix, z: Complex64, values: &[Complex64]) -> f64 {
    (0..m.labels())
        .map(|j| {
            let w = z - m.degree(j) as f64 + local_sum(m, j, values);
            (values[j] + 1.0 / w).norm()
        })
        .fold(0.0, f64::max)
}

fn apply_map(m: &SubstitutionMatrix, z: Complex64, values: &[Complex64]) -> Vec<Complex64> {
    (0..m.labels())
        .map(|j| mobius_raw(z, m.degree(j) as f64, local_sum(m, j, values)))
        .collect()
}

fn in_upper(values: &[Complex64]) -> bool {
    values
        .iter()
        .all(|g| g.im > 0.0 && g.re.is_finite() && g.im.is_finite())
}

/// One application of the recursion map to every label.
pub fn herglotz_map(m: &SubstitutionMatrix, z: UpperHalfPoint, g: &GreenVector) -> GreenVector {
    let values = apply_map(m, z.value(), &g.values);
    let residual = fixed_point_residual(m, z.value(), &values);
    GreenVector {
        z: z.value(),
        values,
        residual,
    }
}

/// Newton's method on `G_j w_j(G) + 1 = 0`, where `w_j` is the local
/// denominator. Steps leaving the upper half-plane are halved.
fn newton(
    m: &SubstitutionMatrix,
    z: Complex64,
    start: &[Complex64],
    tol: f64,
) -> Option<(Vec<Complex64>, f64, usize)> {
    let n = m.labels();
    let mut g = start.to_vec();
    let mut res = fixed_point_residual(m, z, &g);
    for step in 0..NEWTON_STEPS {
        if res <= tol {
            return Some((g, res, step));
        }
        let w: Vec<Complex64> = (0..n)
            .map(|j| z - m.degree(j) as f64 + local_sum(m, j, &g))
            .collect();
        let f = DVector::from_iterator(n, (0..n).map(|j| -(g[j] * w[j] + 1.0)));
        let jac = DMatrix::from_fn(n, n, |j, l| {
            let diag = if j == l {
                w[j]
            } else {
                Complex64::new(0.0, 0.0)
            };
            diag + g[j] * m.entry(j, l) as f64
        });
        let delta = jac.lu().solve(&f)?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<Complex64> =
                g.iter().zip(delta.iter()).map(|(a, d)| a + d * t).collect();
            if in_upper(&trial) {
                let r = fixed_point_residual(m, z, &trial);
                if r.is_finite() && (r < res || t == 1.0) {
                    g = trial;
                    res = r;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            return None;
        }
    }
    (res <= tol).then_some((g, res, NEWTON_STEPS))
}

fn damped_fixed_point(
    m: &SubstitutionMatrix,
    z: Complex64,
    start: Vec<Complex64>,
    tol: f64,
    iterations: usize,
) -> (Vec<Complex64>, f64) {
    let mut g = start;
    let mut res = fixed_point_residual(m, z, &g);
    let mut damping = 1.0;
    for _ in 0..iterations {
        if res <= tol {
            break;
        }
        let image = apply_map(m, z, &g);
        let next: Vec<Complex64> = g
            .iter()
            .zip(&image)
            .map(|(a, b)| a + (b - a) * damping)
            .collect();
        let r = fixed_point_residual(m, z, &next);
        if r > res {
            damping = 0.5;
        }
        g = next;
        res = r;
    }
    (g, res)
}

/// Solves the cone-tree system at `z` in the upper half-plane.
///
/// Damped fixed-point iteration from `G = i`; when it stalls, Newton takes
/// over from the last iterate, and as a last resort the solution is followed
/// in `Im z` from `Im z = 1` down to the requested value.
pub fn solve_green(
    m: &SubstitutionMatrix,
    z: UpperHalfPoint,
    tol: f64,
    max_iter: usize,
) -> Result<GreenVector> {
    let zc = z.value();
    let start = vec![Complex64::new(0.0, 1.0); m.labels()];
    let warmup = max_iter.min(200);
    let (g, res) = damped_fixed_point(m, zc, start, tol, warmup);
    let done = |values: Vec<Complex64>, residual: f64| GreenVector {
        z: zc,
        values,
        residual,
    };
    if res <= tol {
        return Ok(done(g, res));
    }
    if let Some((g2, r2, _)) = newton(m, zc, &g, tol) {
        return Ok(done(g2, r2));
    }
    let (g3, r3) = damped_fixed_point(m, zc, g, tol, max_iter - warmup);
    if r3 <= tol {
        return Ok(done(g3, r3));
    }
    if z.im() < 1.0 {
        if let Some(v) = descend(m, z.re(), 1.0, z.im(), tol, max_iter) {
            return Ok(v);
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: r3,
    })
}

/// Follows the solution from `Im z = from` to `Im z = to` in halving steps.
fn descend(
    m: &SubstitutionMatrix,
    e: f64,
    from: f64,
    to: f64,
    tol: f64,
    max_iter: usize,
) -> Option<GreenVector> {
    let z0 = Complex64::new(e, from);
    let (mut g, r) = damped_fixed_point(
        m,
        z0,
        vec![Complex64::new(0.0, 1.0); m.labels()],
        tol,
        max_iter,
    );
    if r > tol {
        g = newton(m, z0, &g, tol)?.0;
    }
    let mut eta = from;
    loop {
        eta = (eta * 0.5).max(to);
        let z = Complex64::new(e, eta);
        let (next, res, _) = newton(m, z, &g, tol)?;
        g = next;
        if eta <= to {
            return Some(GreenVector {
                z,
                values: g,
                residual: res,
            });
        }
    }
}

/// `eta_k = 2^-k` while above `eta_min`, then `eta_min` itself.
pub fn default_schedule(eta_min: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut eta = 1.0;
    while eta > eta_min * (1.0 + 1e-12) {
        out.push(eta);
        eta *= 0.5;
    }
    out.push(eta_min);
    out
}

/// The default schedule `2^-k`, `k = 0..=20`.
pub fn standard_schedule() -> Vec<f64> {
    (0..=20).map(|k| 0.5f64.powi(k)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub slope_limit: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            slope_limit: DEFAULT_SLOPE_LIMIT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Flag {
    /// A continuation stage failed to converge.
    NonConvergence { eta: f64 },
    /// The last continuation step moved faster than an analytic boundary
    /// value allows.
    Slope { slope: f64 },
    /// Consecutive stages are far apart in the `gamma` sense.
    GammaJump { eta: f64, gamma: f64 },
    /// Adjacent energies are separated by a jump that survives refinement.
    Discontinuity { gamma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationStage {
    pub eta: f64,
    pub values: Vec<Complex64>,
    pub residual: f64,
    /// Largest `gamma` distance per label to the previous stage.
    pub gamma_jump: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Continuation {
    pub energy: f64,
    /// The last converged stage.
    pub green: GreenVector,
    pub trace: Vec<ContinuationStage>,
    pub flag: Option<Flag>,
    /// Linear extrapolation of `Im G_j` to `eta = 0` from the last two stages.
    pub boundary_im: Vec<f64>,
}

impl Continuation {
    pub fn is_flagged(&self) -> bool {
        self.flag.is_some()
    }
}

/// Warm-started solves along a strictly decreasing schedule of `Im z`.
pub fn continue_to_axis(
    m: &SubstitutionMatrix,
    energy: f64,
    schedule: &[f64],
    cfg: &SolverConfig,
) -> Result<Continuation> {
    if schedule.is_empty() {
        return Err(Error::InvalidSchedule("empty".into()));
    }
    if schedule.iter().any(|&e| !(e > 0.0 && e.is_finite()))
        || schedule.windows(2).any(|w| w[1] >= w[0])
    {
        return Err(Error::InvalidSchedule(
            "must be positive and strictly decreasing".into(),
        ));
    }
    let first = solve_green(
        m,
        UpperHalfPoint::new(energy, schedule[0])?,
        cfg.tol,
        cfg.max_iter,
    )?;
    let mut trace = vec![ContinuationStage {
        eta: schedule[0],
        values: first.values.clone(),
        residual: first.residual,
        gamma_jump: 0.0,
    }];
    let mut green = first;
    let mut flag = None;
    for (idx, &eta) in schedule.iter().enumerate().skip(1) {
        let z = Complex64::new(energy, eta);
        let solved = match newton(m, z, &green.values, cfg.tol) {
            Some((values, residual, _)) => Some(GreenVector {
                z,
                values,
                residual,
            }),
            None => solve_green(m, UpperHalfPoint::try_from(z)?, cfg.tol, cfg.max_iter).ok(),
        };
        let Some(next) = solved else {
            flag = Some(Flag::NonConvergence { eta });
            break;
        };
        let jump = green
            .values
            .iter()
            .zip(&next.values)
            .map(|(a, b)| gamma_raw(*a, *b))
            .fold(0.0, f64::max);
        let ratio = schedule[idx - 1] / eta;
        let expected = (ratio + 1.0 / ratio - 2.0).max(1.0);
        if flag.is_none() && jump > 10.0 * expected {
            flag = Some(Flag::GammaJump { eta, gamma: jump });
        }
        trace.push(ContinuationStage {
            eta,
            values: next.values.clone(),
            residual: next.residual,
            gamma_jump: jump,
        });
        green = next;
    }

    let n = trace.len();
    let boundary_im = if n >= 2 {
        let (a, b) = (&trace[n - 2], &trace[n - 1]);
        let slope = a
            .values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
            / (a.eta - b.eta);
        if flag.is_none() && slope > cfg.slope_limit {
            flag = Some(Flag::Slope { slope });
        }
        a.values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| y.im - b.eta * (x.im - y.im) / (a.eta - b.eta))
            .collect()
    } else {
        trace[0].values.iter().map(|g| g.im).collect()
    };

    Ok(Continuation {
        energy,
        green,
        trace,
        flag,
        boundary_im,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, e: f64) -> bool {
        self.lo <= e && e <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// The middle `fraction` of the interval.
    pub fn shrink(&self, fraction: f64) -> Interval {
        let mid = 0.5 * (self.lo + self.hi);
        let half = 0.5 * self.width() * fraction;
        Interval {
            lo: mid - half,
            hi: mid + half,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedPoint {
    pub energy: f64,
    pub flag: Flag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandReport {
    /// Energies where every label has positive boundary density.
    pub intervals: Vec<Interval>,
    pub per_label: Vec<Vec<Interval>>,
    pub flagged: Vec<FlaggedPoint>,
    pub grid_step: f64,
    pub eta_min: f64,
    pub density_threshold: f64,
}

impl BandReport {
    pub fn contains(&self, e: f64) -> bool {
        self.intervals.iter().any(|i| i.contains(e))
    }

    pub fn is_flagged(&self, e: f64) -> bool {
        self.flagged.iter().any(|f| f.energy == e)
    }
}

/// Parses `start:stop:step` into an inclusive grid.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::InvalidArgument(format!("grid '{spec}' is not start:stop:step"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad())?;
    linear_grid(nums[0], nums[1], nums[2])
}

/// `start, start + step, ...` up to and including `stop` (within rounding).
pub fn linear_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(stop >= start) || !start.is_finite() || !stop.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "grid {start}:{stop}:{step} is empty or unordered"
        )));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| start + i as f64 * step).collect())
}

fn max_gamma(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| gamma_raw(*x, *y))
        .fold(0.0, f64::max)
}

/// Splits `[a, b]` repeatedly towards the larger half-jump. A continuous
/// boundary value loses its jump under refinement; a discontinuity keeps it.
fn survives_refinement(
    m: &SubstitutionMatrix,
    schedule: &[f64],
    cfg: &SolverConfig,
    (mut a, mut ga): (f64, Vec<Complex64>),
    (mut b, mut gb): (f64, Vec<Complex64>),
) -> Result<Option<(f64, f64)>> {
    let initial = max_gamma(&ga, &gb);
    let mut jump = initial;
    for _ in 0..6 {
        let mid = 0.5 * (a + b);
        let c = continue_to_axis(m, mid, schedule, cfg)?;
        if c.is_flagged() {
            return Ok(Some((mid, jump)));
        }
        let gm = c.green.values;
        let left = max_gamma(&ga, &gm);
        let right = max_gamma(&gm, &gb);
        if left >= right {
            b = mid;
            gb = gm;
            jump = left;
        } else {
            a = mid;
            ga = gm;
            jump = right;
        }
    }
    Ok((jump > 0.5 * initial).then_some((0.5 * (a + b), jump)))
}

/// Band detection on a sorted energy grid.
///
/// A grid point belongs to a band when the boundary value of `Im G_j`
/// (extrapolated to the axis) exceeds `density_threshold` for every label and
/// the point is not flagged. Flags come from the continuation itself and from
/// jumps between in-band neighbours that exceed ten times the median jump and
/// survive six bisections.
pub fn detect_bands(
    m: &SubstitutionMatrix,
    grid: &[f64],
    eta_min: f64,
    density_threshold: f64,
    cfg: &SolverConfig,
) -> Result<BandReport> {
    let grid_step = if grid.len() >= 2 {
        grid[1] - grid[0]
    } else {
        0.0
    };
    if grid.is_empty() {
        return Ok(BandReport {
            intervals: vec![],
            per_label: vec![vec![]; m.labels()],
            flagged: vec![],
            grid_step,
            eta_min,
            density_threshold,
        });
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "energy grid must be increasing".into(),
        ));
    }
    let schedule = default_schedule(eta_min);
    let points: Vec<Continuation> = grid
        .par_iter()
        .map(|&e| continue_to_axis(m, e, &schedule, cfg))
        .collect::<Result<_>>()?;

    let labels = m.labels();
    let in_label =
        |c: &Continuation, j: usize| c.boundary_im[j] > density_threshold && !c.is_flagged();
    let mut flags: Vec<Option<Flag>> = points.iter().map(|c| c.flag.clone()).collect();

    let in_band: Vec<bool> = points
        .iter()
        .map(|c| (0..labels).all(|j| in_label(c, j)))
        .collect();
    let mut jumps: Vec<(usize, f64)> = (1..points.len())
        .filter(|&i| in_band[i - 1] && in_band[i])
        .map(|i| {
            (
                i,
                max_gamma(&points[i - 1].green.values, &points[i].green.values),
            )
        })
        .collect();
    if !jumps.is_empty() {
        let mut sorted: Vec<f64> = jumps.iter().map(|j| j.1).collect();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        jumps.retain(|&(_, g)| g > 10.0 * median);
        let suspects: Vec<(usize, Option<(f64, f64)>)> = jumps
            .par_iter()
            .map(|&(i, _)| {
                let left = (grid[i - 1], points[i - 1].green.values.clone());
                let right = (grid[i], points[i].green.values.clone());
                survives_refinement(m, &schedule, cfg, left, right).map(|r| (i, r))
            })
            .collect::<Result<_>>()?;
        for (i, hit) in suspects {
            if let Some((at, gamma)) = hit {
                let idx = if (at - grid[i - 1]).abs() <= (grid[i] - at).abs() {
                    i - 1
                } else {
                    i
                };
                if flags[idx].is_none() {
                    flags[idx] = Some(Flag::Discontinuity { gamma });
                }
            }
        }
    }

    let runs = |member: &dyn Fn(usize) -> bool| -> Vec<Interval> {
        let mut out = Vec::new();
        let mut start: Option<usize> = None;
        for i in 0..=grid.len() {
            let inside = i < grid.len() && member(i) && flags[i].is_none();
            match (inside, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    out.push(Interval {
                        lo: grid[s],
                        hi: grid[i - 1],
                    });
                    start = None;
                }
                _ => {}
            }
        }
        out
    };
    let intervals = runs(&|i| in_band[i]);
    let per_label = (0..labels)
        .map(|j| runs(&|i| points[i].boundary_im[j] > density_threshold))
        .collect();
    let flagged = flags
        .into_iter()
        .zip(grid)
        .filter_map(|(f, &e)| f.map(|flag| FlaggedPoint { energy: e, flag }))
        .collect();
    Ok(BandReport {
        intervals,
        per_label,
        flagged,
        grid_step,
        eta_min,
        density_threshold,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityPoint {
    pub energy: f64,
    pub eta: f64,
    pub green: Vec<Complex64>,
    /// `Im G_j / pi`, NaN at flagged energies.
    pub density: Vec<f64>,
    pub flagged: bool,
}

/// `Im G_j(E + i eta_min) / pi` along the grid.
pub fn spectral_density(
    m: &SubstitutionMatrix,
    grid: &[f64],
    eta_min: f64,
    cfg: &SolverConfig,
) -> Result<Vec<DensityPoint>> {
    let schedule = default_schedule(eta_min);
    grid.par_iter()
        .map(|&e| {
            let c = continue_to_axis(m, e, &schedule, cfg)?;
            let flagged = c.is_flagged();
            let density = c
                .green
                .values
                .iter()
                .map(|g| {
                    if flagged {
                        f64::NAN
                    } else {
                        g.im / std::f64::consts::PI
                    }
                })
                .collect();
            Ok(DensityPoint {
                energy: e,
                eta: c.green.z.im,
                green: c.green.values,
                density,
                flagged,
            })
        })
        .collect()
}

/// Writes `E,eta,label,re_gamma,im_gamma,density,flagged` rows.
pub fn write_density_csv<W: std::io::Write>(points: &[DensityPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "E", "eta", "label", "re_gamma", "im_gamma", "density", "flagged",
    ])?;
    for p in points {
        for (j, g) in p.green.iter().enumerate() {
            w.write_record(&[
                p.energy.to_string(),
                p.eta.to_string(),
                j.to_string(),
                g.re.to_string(),
                g.im.to_string(),
                p.density[j].to_string(),
                p.flagged.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
