//! Expansion and contraction estimates around the cone tree.
//!
//! The two-sphere set `S(T_j)` of the cone tree is laid out as
//! `S_o \ {o'}` followed by `S_{o'}`, each in label order, where `o'` is the
//! first label-`j` child of the root. Assignments `g` are plain slices in that
//! layout.

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cone_green::{
    continue_to_axis, default_schedule, standard_schedule, GreenVector, SolverConfig,
    DEFAULT_DENSITY_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::halfplane::{gamma_raw, UpperHalfPoint};
use crate::model::SubstitutionMatrix;

/// `gamma` values below this count as "at the cone value".
pub const DEGENERACY_TOL: f64 = 1e-14;
pub const PERMUTATION_CAP: usize = 10_000;
pub const PERRON_MAX_STEPS: usize = 100_000;

/// `q_y = Im g_y / sum_u Im g_u`.
pub fn weights_q(g: &[Complex64]) -> Result<Vec<f64>> {
    if g.is_empty() {
        return Err(Error::InvalidArgument("empty forward set".into()));
    }
    let total: f64 = g.iter().map(|v| v.im).sum();
    Ok(g.iter().map(|v| v.im / total).collect())
}

/// `(Q_{x,y}, cos alpha_{x,y})`, both zero when either value sits at its cone
/// value.
pub fn q_and_cos_alpha(
    gx: Complex64,
    gy: Complex64,
    cone_x: Complex64,
    cone_y: Complex64,
) -> (f64, f64) {
    let gamma_x = gamma_raw(gx, cone_x);
    let gamma_y = gamma_raw(gy, cone_y);
    if gamma_x < DEGENERACY_TOL || gamma_y < DEGENERACY_TOL {
        return (0.0, 0.0);
    }
    let geometric = (gx.im * gy.im * cone_x.im * cone_y.im * gamma_x * gamma_y).sqrt();
    let arithmetic = 0.5 * (gx.im * cone_y.im * gamma_y + gy.im * cone_x.im * gamma_x);
    let q = (geometric / arithmetic).min(1.0);
    let w = (gx - cone_x) * (gy - cone_y).conj();
    let cos = (w.re / w.norm()).clamp(-1.0, 1.0);
    (q, cos)
}

/// `sum_y q_y Q_{x,y} cos alpha_{x,y}` for every `x` of one forward set.
pub fn spade_sums(g: &[Complex64], cone: &[Complex64]) -> Result<Vec<f64>> {
    let q = weights_q(g)?;
    Ok((0..g.len())
        .map(|x| {
            (0..g.len())
                .map(|y| {
                    let (qq, cos) = q_and_cos_alpha(g[x], g[y], cone[x], cone[y]);
                    q[y] * qq * cos
                })
                .sum()
        })
        .collect())
}

fn mobius(z: Complex64, degree: f64, sum: Complex64) -> Complex64 {
    -1.0 / (z - degree + sum)
}

/// `-1/(z - deg(j) + sum g)` over the children of `o'`.
pub fn g_oprime(m: &SubstitutionMatrix, z: Complex64, j: usize, second: &[Complex64]) -> Complex64 {
    mobius(z, m.degree(j) as f64, second.iter().sum())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SphereLayout {
    pub root_label: usize,
    /// Labels of `S_o \ {o'}`.
    pub first: Vec<usize>,
    /// Labels of `S_{o'}`.
    pub second: Vec<usize>,
}

impl SphereLayout {
    pub fn new(m: &SubstitutionMatrix, j: usize) -> Self {
        let mut first = Vec::new();
        let mut second = Vec::new();
        for k in 0..m.labels() {
            let count = m.entry(j, k) as usize;
            first.extend(std::iter::repeat_n(k, count - usize::from(k == j)));
            second.extend(std::iter::repeat_n(k, count));
        }
        Self {
            root_label: j,
            first,
            second,
        }
    }

    pub fn len(&self) -> usize {
        self.first.len() + self.second.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> Vec<usize> {
        self.first.iter().chain(&self.second).copied().collect()
    }

    pub fn in_second(&self, idx: usize) -> bool {
        idx >= self.first.len()
    }
}

/// Label-class weights over `S(T_j)`.
pub fn p_weights(m: &SubstitutionMatrix, green: &GreenVector, j: usize) -> Vec<f64> {
    let layout = SphereLayout::new(m, j);
    let d = norm_denominator(m, green, j);
    let first = layout.first.iter().map(|&k| green.get(k).im / d);
    let root_im = green.get(j).im;
    let second = layout
        .second
        .iter()
        .map(|&k| root_im * green.get(k).im / (d * d));
    first.chain(second).collect()
}

fn norm_denominator(m: &SubstitutionMatrix, green: &GreenVector, j: usize) -> f64 {
    m.row(j)
        .iter()
        .enumerate()
        .map(|(k, &c)| c as f64 * green.get(k).im)
        .sum()
}

/// `P[j][k]`: total `p_{j,x}` mass on label `k`.
pub fn stochastic_p(m: &SubstitutionMatrix, green: &GreenVector) -> Vec<Vec<f64>> {
    (0..m.labels())
        .map(|j| {
            let layout = SphereLayout::new(m, j);
            let mut row = vec![0.0; m.labels()];
            for (label, w) in layout.labels().into_iter().zip(p_weights(m, green, j)) {
                row[label] += w;
            }
            row
        })
        .collect()
}

/// Everything about `S(T_j)` that depends on `z` but not on `g`.
#[derive(Debug, Clone)]
pub struct SphereContext {
    pub m: SubstitutionMatrix,
    pub z: Complex64,
    pub j: usize,
    pub green: Vec<Complex64>,
    pub layout: SphereLayout,
    pub p: Vec<f64>,
    /// `Gamma_{a(x)}` per layout position.
    cone: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contraction {
    pub g_oprime: Complex64,
    /// `c_x` per layout position.
    pub c: Vec<f64>,
    /// The factor `sum_{y in S_o} q_y Q_{o',y} cos alpha_{o',y}` shared by the
    /// second sphere.
    pub c_oprime: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoStepCheck {
    /// `gamma(root, Gamma_j)` after two recursion steps.
    pub lhs: f64,
    /// `sum_x p_x c_x gamma_x`.
    pub rhs: f64,
    /// The same with `|c_{o'}|` in place of the signed factor.
    pub rhs_abs: f64,
    pub c_oprime: f64,
}

impl SphereContext {
    pub fn new(m: &SubstitutionMatrix, green: &GreenVector, j: usize) -> Result<Self> {
        if green.labels() != m.labels() {
            return Err(Error::AlphabetMismatch(green.labels(), m.labels()));
        }
        if j >= m.labels() {
            return Err(Error::InvalidArgument(format!("label {j} out of range")));
        }
        let layout = SphereLayout::new(m, j);
        let cone = layout.labels().iter().map(|&k| green.get(k)).collect();
        Ok(Self {
            m: m.clone(),
            z: green.z,
            j,
            green: green.values.clone(),
            p: p_weights(m, green, j),
            layout,
            cone,
        })
    }

    pub fn cone_values(&self) -> &[Complex64] {
        &self.cone
    }

    pub fn gammas(&self, g: &[Complex64]) -> Vec<f64> {
        g.iter()
            .zip(&self.cone)
            .map(|(a, b)| gamma_raw(*a, *b))
            .collect()
    }

    fn split<'a>(&self, g: &'a [Complex64]) -> (&'a [Complex64], &'a [Complex64]) {
        g.split_at(self.layout.first.len())
    }

    pub fn g_oprime(&self, g: &[Complex64]) -> Complex64 {
        g_oprime(&self.m, self.z, self.j, self.split(g).1)
    }

    /// Root value after recursing through `o'` and the root.
    pub fn root_value(&self, g: &[Complex64]) -> Complex64 {
        let (first, _) = self.split(g);
        let sum: Complex64 = first.iter().sum::<Complex64>() + self.g_oprime(g);
        mobius(self.z, self.m.degree(self.j) as f64, sum)
    }

    /// Contraction quantities. On `S_o \ {o'}` they are the one-step sums
    /// over `S_o`; on `S_{o'}` they are the one-step sum over `S_{o'}` times
    /// the one-step sum of `o'` over `S_o`, which is how the one-step bounds
    /// compose.
    pub fn contraction_c(&self, g: &[Complex64]) -> Contraction {
        let (first, second) = self.split(g);
        let go = self.g_oprime(g);
        let root_cone = self.green[self.j];
        let mut so: Vec<Complex64> = first.to_vec();
        so.push(go);
        let mut so_cone: Vec<Complex64> = self.cone[..first.len()].to_vec();
        so_cone.push(root_cone);
        let outer = spade_sums(&so, &so_cone).expect("S_o contains o'");
        let inner = spade_sums(second, &self.cone[first.len()..]).expect("S_o' is not empty");
        let c_oprime = outer[first.len()];
        let c = outer[..first.len()]
            .iter()
            .copied()
            .chain(inner.iter().map(|c| c * c_oprime))
            .collect();
        Contraction {
            g_oprime: go,
            c,
            c_oprime,
        }
    }

    pub fn two_step(&self, g: &[Complex64]) -> TwoStepCheck {
        let lhs = gamma_raw(self.root_value(g), self.green[self.j]);
        let contraction = self.contraction_c(g);
        let gammas = self.gammas(g);
        let scale = contraction.c_oprime.abs() / contraction.c_oprime;
        let mut rhs = 0.0;
        let mut rhs_abs = 0.0;
        for (idx, ((&p, &c), &gm)) in self.p.iter().zip(&contraction.c).zip(&gammas).enumerate() {
            rhs += p * c * gm;
            let c_abs = if self.layout.in_second(idx) && contraction.c_oprime != 0.0 {
                c * scale
            } else {
                c
            };
            rhs_abs += p * c_abs * gm;
        }
        TwoStepCheck {
            lhs,
            rhs,
            rhs_abs,
            c_oprime: contraction.c_oprime,
        }
    }

    /// Averaged contraction coefficient over the permutations in `perms`.
    pub fn kappa(&self, perms: &PermutationSet, g: &[Complex64], p: f64) -> KappaValue {
        let mut numerator = 0.0;
        let mut denominator = 0.0;
        let mut permuted = vec![Complex64::new(0.0, 0.0); g.len()];
        for pi in &perms.perms {
            for (x, &px) in pi.iter().enumerate() {
                permuted[x] = g[px];
            }
            let c = self.contraction_c(&permuted).c;
            let gammas = self.gammas(&permuted);
            let mut inner = 0.0;
            for x in 0..g.len() {
                inner += self.p[x] * c[x] * gammas[x];
                denominator += self.p[x] * gammas[x].powf(p);
            }
            numerator += inner.abs().powf(p);
        }
        if denominator > 0.0 {
            KappaValue {
                value: numerator / denominator,
                degenerate: false,
            }
        } else {
            KappaValue {
                value: 0.0,
                degenerate: true,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaValue {
    pub value: f64,
    /// Every component sits at its cone value.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PermMode {
    /// All of `Pi`, or a uniform sample of it above the enumeration cap.
    Full,
    /// The identity and one transposition across the two spheres.
    RegularPair,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationSet {
    /// Each entry maps a layout position `x` to `pi(x)`.
    pub perms: Vec<Vec<usize>>,
    /// `perms` is a random sample rather than all of `Pi`.
    pub sampled: bool,
}

/// `|Pi|`: product of factorials of the label class sizes.
pub fn permutation_count(layout: &SphereLayout) -> f64 {
    label_classes(layout)
        .iter()
        .map(|class| (1..=class.len()).map(|i| i as f64).product::<f64>())
        .product()
}

fn label_classes(layout: &SphereLayout) -> Vec<Vec<usize>> {
    let labels = layout.labels();
    let max = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut classes = vec![Vec::new(); max];
    for (idx, &l) in labels.iter().enumerate() {
        classes[l].push(idx);
    }
    classes.retain(|c| !c.is_empty());
    classes
}

fn permutations_of(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations_of(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// Label-preserving bijections of `S(T_j)`.
pub fn label_invariant_permutations(
    layout: &SphereLayout,
    mode: PermMode,
    seed: u64,
) -> Result<PermutationSet> {
    let n = layout.len();
    let identity: Vec<usize> = (0..n).collect();
    let classes = label_classes(layout);
    match mode {
        PermMode::RegularPair => {
            let nf = layout.first.len();
            let pair = (0..nf).find_map(|a| {
                (nf..n)
                    .find(|&b| layout.second[b - nf] == layout.first[a])
                    .map(|b| (a, b))
            });
            let (a, b) = pair.ok_or_else(|| {
                Error::InvalidArgument("no label shared by the two spheres".into())
            })?;
            let mut swap = identity.clone();
            swap.swap(a, b);
            Ok(PermutationSet {
                perms: vec![identity, swap],
                sampled: false,
            })
        }
        PermMode::Full if permutation_count(layout) <= PERMUTATION_CAP as f64 => {
            let mut perms = vec![identity];
            for class in &classes {
                let options = permutations_of(class);
                let mut next = Vec::with_capacity(perms.len() * options.len());
                for base in &perms {
                    for image in &options {
                        let mut p = base.clone();
                        for (&from, &to) in class.iter().zip(image) {
                            p[from] = to;
                        }
                        next.push(p);
                    }
                }
                perms = next;
            }
            Ok(PermutationSet {
                perms,
                sampled: false,
            })
        }
        PermMode::Full => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut perms = vec![identity.clone()];
            while perms.len() < PERMUTATION_CAP {
                let mut p = identity.clone();
                for class in &classes {
                    let mut image = class.clone();
                    image.shuffle(&mut rng);
                    for (&from, &to) in class.iter().zip(&image) {
                        p[from] = to;
                    }
                }
                perms.push(p);
            }
            Ok(PermutationSet {
                perms,
                sampled: true,
            })
        }
    }
}

/// Positive left eigenvector of a row-stochastic matrix, `||u||_1 = 1`, by
/// power iteration on `(P + I) / 2`.
pub fn perron_left_vector(p: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = p.len();
    if n == 0 || p.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidArgument(
            "P must be square and non-empty".into(),
        ));
    }
    let apply = |u: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|k| (0..n).map(|j| u[j] * p[j][k]).sum())
            .collect()
    };
    let residual = |u: &[f64]| -> f64 {
        apply(u)
            .iter()
            .zip(u)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    };
    let mut u = vec![1.0 / n as f64; n];
    for _ in 0..PERRON_MAX_STEPS {
        if residual(&u) <= 1e-14 {
            break;
        }
        let pu = apply(&u);
        let mut next: Vec<f64> = u.iter().zip(&pu).map(|(a, b)| 0.5 * (a + b)).collect();
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        u = next;
    }
    if residual(&u) > 1e-10 || u.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::PerronNoConvergence(PERRON_MAX_STEPS));
    }
    Ok(u)
}

/// `(|Gamma_k| + 1) / Im Gamma_l` maximised over labels.
pub fn r_ratio(green: &[Complex64]) -> f64 {
    let top = green.iter().map(|g| g.norm() + 1.0).fold(0.0, f64::max);
    let bottom = green.iter().map(|g| g.im).fold(f64::INFINITY, f64::min);
    top / bottom
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowConstants {
    pub lo: f64,
    pub hi: f64,
    pub eta_max: f64,
    pub p: f64,
    pub r: f64,
    pub c1: f64,
    pub c2: f64,
    /// `ln c2`, finite even when `c2` overflows.
    pub ln_c2: f64,
    pub energies: Vec<f64>,
    pub etas: Vec<f64>,
}

/// `r`, `c1 = 4 r^3 max_k (sum_j M[k][j])^2` and `c2 = 2^p c1^(2p)` over the
/// grid `I x {eta_max 2^-k}` down to `eta_min`.
pub fn window_constants(
    m: &SubstitutionMatrix,
    lo: f64,
    hi: f64,
    eta_max: f64,
    eta_min: f64,
    p: f64,
    points: usize,
) -> Result<WindowConstants> {
    if !(lo <= hi) || !(eta_max >= eta_min) || !(eta_min > 0.0) || points == 0 {
        return Err(Error::InvalidArgument("empty window".into()));
    }
    let energies: Vec<f64> = if points == 1 {
        vec![lo]
    } else {
        (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .collect()
    };
    let schedule: Vec<f64> = default_schedule(eta_min / eta_max)
        .into_iter()
        .map(|e| e * eta_max)
        .collect();
    let cfg = SolverConfig::default();
    let ratios: Vec<f64> = energies
        .par_iter()
        .map(|&e| {
            if !is_band_interior(m, e)? {
                return Err(Error::FlaggedWindow(e));
            }
            let c = continue_to_axis(m, e, &schedule, &cfg)?;
            if c.is_flagged() {
                return Err(Error::FlaggedWindow(e));
            }
            Ok(c.trace
                .iter()
                .map(|s| r_ratio(&s.values))
                .fold(0.0, f64::max))
        })
        .collect::<Result<_>>()?;
    let r = ratios.into_iter().fold(1.0, f64::max);
    let row = m.max_row_sum() as f64;
    let c1 = 4.0 * r.powi(3) * row * row;
    let ln_c2 = p * std::f64::consts::LN_2 + 2.0 * p * c1.ln();
    Ok(WindowConstants {
        lo,
        hi,
        eta_max,
        p,
        r,
        c1,
        c2: ln_c2.exp(),
        ln_c2,
        energies,
        etas: schedule,
    })
}

/// Weights `Im Gamma_{a(x)} / sum_k M[v][k] Im Gamma_k` of a forward set.
fn one_step_weights(
    m: &SubstitutionMatrix,
    green: &[Complex64],
    v_label: usize,
    labels: &[usize],
) -> Vec<f64> {
    let d: f64 = m
        .row(v_label)
        .iter()
        .enumerate()
        .map(|(k, &c)| c as f64 * green[k].im)
        .sum();
    labels.iter().map(|&k| green[k].im / d).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inequality {
    pub lhs: f64,
    pub rhs: f64,
}

impl Inequality {
    pub fn holds(&self, slack: f64) -> bool {
        self.lhs <= self.rhs + slack * self.rhs.abs().max(1.0)
    }
}

/// One recursion step at a vertex of label `v_label` whose children carry
/// `labels` and values `g`, against the weighted sum with the signed
/// one-step sums (when the configuration matches the cone row) or with `c1`.
pub fn one_step(
    m: &SubstitutionMatrix,
    green: &GreenVector,
    v_label: usize,
    labels: &[usize],
    g: &[Complex64],
    c1: Option<f64>,
) -> Result<Inequality> {
    if labels.len() != g.len() || g.is_empty() {
        return Err(Error::InvalidArgument(
            "labels and values must match and be non-empty".into(),
        ));
    }
    let cone: Vec<Complex64> = labels.iter().map(|&k| green.get(k)).collect();
    let value = mobius(green.z, (g.len() + 1) as f64, g.iter().sum());
    let lhs = gamma_raw(value, green.get(v_label));
    let w = one_step_weights(m, &green.values, v_label, labels);
    let gammas: Vec<f64> = g
        .iter()
        .zip(&cone)
        .map(|(a, b)| gamma_raw(*a, *b))
        .collect();
    let rhs = match c1 {
        None => {
            let sums = spade_sums(g, &cone)?;
            (0..g.len()).map(|x| w[x] * sums[x] * gammas[x]).sum()
        }
        Some(c1) => c1 * ((0..g.len()).map(|x| w[x] * gammas[x]).sum::<f64>() + g.len() as f64),
    };
    Ok(Inequality { lhs, rhs })
}

/// The `p`-th moment version of the two-step bound for an arbitrary
/// two-sphere class, evaluated pointwise:
/// `gamma_o^p <= c2 (sum_x p_x (N/M)^(p-1) gamma_x^p + (|S_o| + |S_o'|)^p)`.
///
/// `first` lists `S_o` without `o'`; `second` is `S_{o'}` and is `None` when
/// the root has no child of its own label.
pub fn two_step_moment(
    m: &SubstitutionMatrix,
    green: &GreenVector,
    j: usize,
    first: (&[usize], &[Complex64]),
    second: Option<(&[usize], &[Complex64])>,
    p: f64,
    c2: f64,
) -> Result<Inequality> {
    let z = green.z;
    let labels = m.labels();
    let count = |ls: &[usize]| {
        let mut c = vec![0usize; labels];
        ls.iter().for_each(|&k| c[k] += 1);
        c
    };
    let d = norm_denominator(m, green, j);
    let mut root_sum: Complex64 = first.1.iter().sum();
    let mut size_o = first.0.len();
    let mut n_o = count(first.0);
    let mut terms = 0.0;
    let mut size_second = 0;
    if let Some((ls, gs)) = second {
        if ls.is_empty() {
            return Err(Error::InvalidArgument("o' needs children".into()));
        }
        let go = mobius(z, (gs.len() + 1) as f64, gs.iter().sum());
        root_sum += go;
        size_o += 1;
        n_o[j] += 1;
        size_second = ls.len();
        let n_second = count(ls);
        for (&k, g) in ls.iter().zip(gs) {
            let px = green.get(j).im * green.get(k).im / (d * d);
            let ratio = n_second[k] as f64 / m.entry(j, k) as f64;
            terms += px * ratio.powf(p - 1.0) * gamma_raw(*g, green.get(k)).powf(p);
        }
    }
    if size_o == 0 {
        return Err(Error::InvalidArgument("root needs children".into()));
    }
    for (&k, g) in first.0.iter().zip(first.1) {
        let px = green.get(k).im / d;
        let ratio = n_o[k] as f64 / m.entry(j, k) as f64;
        terms += px * ratio.powf(p - 1.0) * gamma_raw(*g, green.get(k)).powf(p);
    }
    let root = mobius(z, (size_o + 1) as f64, root_sum);
    let lhs = gamma_raw(root, green.get(j)).powf(p);
    let rhs = c2 * (terms + ((size_o + size_second) as f64).powf(p));
    Ok(Inequality { lhs, rhs })
}

/// Probe families for the supremum of `kappa`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeFamily {
    Gaussian,
    Cauchy,
    NearAxis,
    Coherent,
    Ray,
}

pub const PROBE_FAMILIES: [ProbeFamily; 5] = [
    ProbeFamily::Gaussian,
    ProbeFamily::Cauchy,
    ProbeFamily::NearAxis,
    ProbeFamily::Coherent,
    ProbeFamily::Ray,
];

fn lift(w: Complex64, floor: f64) -> Complex64 {
    Complex64::new(w.re, w.im.abs().max(floor))
}

/// One random assignment around the cone values `cone`.
pub fn draw_probe(family: ProbeFamily, cone: &[Complex64], rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let scale = 10f64.powf(rng.random_range(-3.0..3.0));
    match family {
        ProbeFamily::Gaussian => cone
            .iter()
            .map(|c| {
                let d = Complex64::new(normal.sample(rng), normal.sample(rng)) * scale;
                lift(c + d, 1e-12)
            })
            .collect(),
        ProbeFamily::Cauchy => {
            let cauchy = Cauchy::new(0.0, scale).expect("positive scale");
            cone.iter()
                .map(|c| {
                    lift(
                        Complex64::new(c.re + cauchy.sample(rng), cauchy.sample(rng)),
                        1e-12,
                    )
                })
                .collect()
        }
        ProbeFamily::NearAxis => cone
            .iter()
            .map(|c| {
                let im = 10f64.powf(rng.random_range(-8.0..0.0));
                Complex64::new(c.re + scale * normal.sample(rng), im)
            })
            .collect(),
        ProbeFamily::Coherent => {
            let dir = Complex64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU));
            cone.iter()
                .map(|c| {
                    let jitter = 1.0 + 0.1 * normal.sample(rng);
                    lift(c + dir * scale * jitter, 1e-12)
                })
                .collect()
        }
        ProbeFamily::Ray => {
            let mut g = cone.to_vec();
            let t = 10f64.powf(rng.random_range(-3.0..6.0));
            let dir = Complex64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::PI));
            let pick = rng.random_range(0..g.len());
            g[pick] = lift(g[pick] + dir * t, 1e-12);
            if rng.random_bool(0.5) {
                let other = rng.random_range(0..g.len());
                g[other] = lift(
                    g[other] + dir.conj() * t * rng.random_range(0.0..1.0),
                    1e-12,
                );
            }
            g
        }
    }
}

/// Stream seed of probe `index` for label `j`.
pub fn probe_seed(master: u64, j: usize, index: u64) -> u64 {
    master
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add((j as u64) << 48)
        .wrapping_add(index)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaSample {
    pub label: usize,
    pub seed: u64,
    pub family: ProbeFamily,
    pub kappa: f64,
    pub max_gamma_component: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta0Estimate {
    pub z: Complex64,
    pub p: f64,
    pub samples_per_label: usize,
    pub sup_kappa: f64,
    pub margin: f64,
    pub argmax: Option<KappaSample>,
    pub permutations_sampled: bool,
    pub degenerate_samples: usize,
}

fn probe_kappa(
    ctx: &SphereContext,
    perms: &PermutationSet,
    p: f64,
    seed: u64,
    index: u64,
) -> (KappaSample, bool) {
    let stream = probe_seed(seed, ctx.j, index);
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let family = PROBE_FAMILIES[(index % PROBE_FAMILIES.len() as u64) as usize];
    let g = draw_probe(family, ctx.cone_values(), &mut rng);
    let k = ctx.kappa(perms, &g, p);
    let max_gamma = ctx.gammas(&g).into_iter().fold(0.0, f64::max);
    (
        KappaSample {
            label: ctx.j,
            seed: stream,
            family,
            kappa: k.value,
            max_gamma_component: max_gamma,
        },
        k.degenerate,
    )
}

/// Sampled `kappa` values for every label at boundary values `green`.
pub fn kappa_cloud(
    m: &SubstitutionMatrix,
    green: &GreenVector,
    p: f64,
    samples: usize,
    seed: u64,
    mode: PermMode,
) -> Result<(Vec<KappaSample>, usize, bool)> {
    if !(p > 1.0) {
        return Err(Error::InvalidArgument(format!("p = {p} must exceed 1")));
    }
    let mut all = Vec::with_capacity(samples * m.labels());
    let mut degenerate = 0;
    let mut sampled = false;
    for j in 0..m.labels() {
        let ctx = SphereContext::new(m, green, j)?;
        let perms = label_invariant_permutations(&ctx.layout, mode, seed ^ j as u64)?;
        sampled |= perms.sampled;
        let cloud: Vec<(KappaSample, bool)> = (0..samples as u64)
            .into_par_iter()
            .map(|i| probe_kappa(&ctx, &perms, p, seed, i))
            .collect();
        degenerate += cloud.iter().filter(|c| c.1).count();
        all.extend(cloud.into_iter().map(|c| c.0));
    }
    Ok((all, degenerate, sampled))
}

/// Unflagged energy whose boundary density exceeds the default threshold for
/// every label.
pub fn is_band_interior(m: &SubstitutionMatrix, e: f64) -> Result<bool> {
    let c = continue_to_axis(m, e, &standard_schedule(), &SolverConfig::default())?;
    Ok(!c.is_flagged() && c.boundary_im.iter().all(|&v| v > DEFAULT_DENSITY_THRESHOLD))
}

/// Solves for the values at `z`, refusing energies outside the band interior.
pub fn band_interior_green(m: &SubstitutionMatrix, z: UpperHalfPoint) -> Result<GreenVector> {
    if !is_band_interior(m, z.re())? {
        return Err(Error::FlaggedWindow(z.re()));
    }
    let c = continue_to_axis(
        m,
        z.re(),
        &default_schedule(z.im()),
        &SolverConfig::default(),
    )?;
    if c.is_flagged() || (c.green.z.im - z.im()).abs() > 0.0 {
        return Err(Error::FlaggedWindow(z.re()));
    }
    Ok(c.green)
}

/// Monte-Carlo supremum of `kappa` over the probe mixture. Fails when the
/// sampled supremum reaches `1 - 1e-9`.
pub fn estimate_delta0(
    m: &SubstitutionMatrix,
    z: UpperHalfPoint,
    p: f64,
    samples: usize,
    seed: u64,
    mode: PermMode,
) -> Result<Delta0Estimate> {
    let green = band_interior_green(m, z)?;
    let (cloud, degenerate, sampled) = kappa_cloud(m, &green, p, samples, seed, mode)?;
    let argmax = cloud
        .iter()
        .copied()
        .reduce(|a, b| if b.kappa > a.kappa { b } else { a });
    let sup = argmax.map_or(0.0, |a| a.kappa);
    if sup >= 1.0 - 1e-9 {
        return Err(Error::ContractionViolated {
            kappa: sup,
            sample: argmax.map_or(0, |a| a.seed),
        });
    }
    Ok(Delta0Estimate {
        z: green.z,
        p,
        samples_per_label: samples,
        sup_kappa: sup,
        margin: 1.0 - sup,
        argmax,
        permutations_sampled: sampled,
        degenerate_samples: degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub z: Complex64,
    pub green: Vec<Complex64>,
    pub p: f64,
    pub stochastic: Vec<Vec<f64>>,
    pub perron: Vec<f64>,
    pub perron_residual: f64,
    pub kappa_samples: Vec<KappaSample>,
    pub sup_kappa: f64,
    pub margin: f64,
    pub permutations_sampled: bool,
    pub constants: Option<WindowConstants>,
}

pub fn contraction_report(
    m: &SubstitutionMatrix,
    green: &GreenVector,
    p: f64,
    samples: usize,
    seed: u64,
    mode: PermMode,
    constants: Option<WindowConstants>,
) -> Result<ContractionReport> {
    let stochastic = stochastic_p(m, green);
    let perron = perron_left_vector(&stochastic)?;
    let perron_residual = (0..perron.len())
        .map(|k| {
            let pu: f64 = (0..perron.len())
                .map(|j| perron[j] * stochastic[j][k])
                .sum();
            (pu - perron[k]).abs()
        })
        .fold(0.0, f64::max);
    let (kappa_samples, _, sampled) = kappa_cloud(m, green, p, samples, seed, mode)?;
    let sup_kappa = kappa_samples.iter().map(|s| s.kappa).fold(0.0, f64::max);
    Ok(ContractionReport {
        z: green.z,
        green: green.values.clone(),
        p,
        stochastic,
        perron,
        perron_residual,
        kappa_samples,
        sup_kappa,
        margin: 1.0 - sup_kappa,
        permutations_sampled: sampled,
        constants,
    })
}

/// Writes `seed,kappa,max_gamma_component` rows.
pub fn write_kappa_csv<W: std::io::Write>(samples: &[KappaSample], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["seed", "kappa", "max_gamma_component"])?;
    for s in samples {
        w.write_record(&[
            s.seed.to_string(),
            s.kappa.to_string(),
            s.max_gamma_component.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
