//! Green functions on sampled trees.
//!
//! `truncated_green_recursion` runs the forward-subtree recursion with
//! effective degree `|S_x| + 1` at every vertex, which is the true degree for
//! inner vertices and the rank-one boundary term at the root.
//! `full_green_two_pass` adds a downward pass for the diagonal of the full
//! resolvent, and `dense_resolvent_oracle` inverts the matrix outright.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cone_green::GreenVector;
use crate::error::{Error, Result};
use crate::halfplane::gamma_raw;
use crate::model::SubstitutionMatrix;
use crate::tree::SampledTree;

/// Largest tree the dense oracle accepts.
pub const ORACLE_NODE_CAP: usize = 4096;
/// Below this `Im z` only the deterministic boundary is accepted.
pub const NEAR_AXIS_ETA: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryRule {
    FiniteExact,
    Deterministic,
    ConstantI,
}

impl std::str::FromStr for BoundaryRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "finite-exact" => Ok(Self::FiniteExact),
            "deterministic" => Ok(Self::Deterministic),
            "constant-i" => Ok(Self::ConstantI),
            other => Err(Error::BoundaryRule(other.to_string())),
        }
    }
}

/// What sits below the depth cutoff.
#[derive(Debug, Clone, Copy)]
pub enum Boundary<'a> {
    /// The tree ends at the cutoff.
    FiniteExact,
    /// The cone tree of `m` continues below every cutoff vertex.
    Deterministic {
        m: &'a SubstitutionMatrix,
        green: &'a GreenVector,
    },
    /// Cutoff vertices carry the value `i`.
    ConstantI,
}

impl Boundary<'_> {
    pub fn rule(&self) -> BoundaryRule {
        match self {
            Boundary::FiniteExact => BoundaryRule::FiniteExact,
            Boundary::Deterministic { .. } => BoundaryRule::Deterministic,
            Boundary::ConstantI => BoundaryRule::ConstantI,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreenField {
    pub z: Complex64,
    pub boundary: BoundaryRule,
    /// Truncated Green function per node.
    pub truncated: Vec<Complex64>,
    /// Diagonal of the full resolvent per node.
    pub full: Option<Vec<Complex64>>,
}

impl GreenField {
    pub fn root(&self) -> Complex64 {
        self.truncated[0]
    }
}

fn check_z(z: Complex64, boundary: &Boundary) -> Result<()> {
    if !(z.im >= 0.0) || !z.re.is_finite() || !z.im.is_finite() {
        return Err(Error::NotInUpperHalfPlane { re: z.re, im: z.im });
    }
    if let Boundary::Deterministic { m, green } = boundary {
        if (green.z - z).norm() > 1e-12 * z.norm().max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "boundary values were solved at {} but z = {z}",
                green.z
            )));
        }
        if green.labels() != m.labels() {
            return Err(Error::AlphabetMismatch(green.labels(), m.labels()));
        }
    }
    if z.im <= NEAR_AXIS_ETA {
        let interior = match boundary {
            Boundary::Deterministic { green, .. } => {
                green.min_im() > crate::cone_green::DEFAULT_DENSITY_THRESHOLD
            }
            _ => false,
        };
        if !interior {
            return Err(Error::BoundaryRule(format!(
                "Im z = {} needs the deterministic boundary at a band-interior energy",
                z.im
            )));
        }
    }
    Ok(())
}

/// Forward-subtree Green functions of every vertex.
///
/// With the deterministic boundary, a vertex whose configuration equals the
/// cone row of its label and whose children all carry their cone values gets
/// the cone value itself, so unperturbed subtrees reproduce it exactly.
pub fn truncated_green_recursion(
    tree: &SampledTree,
    z: Complex64,
    boundary: &Boundary,
) -> Result<GreenField> {
    check_z(z, boundary)?;
    if let Boundary::Deterministic { m, .. } = boundary {
        if m.labels() != tree.labels {
            return Err(Error::AlphabetMismatch(m.labels(), tree.labels));
        }
    }
    let n = tree.len();
    let mut values = vec![Complex64::new(0.0, 0.0); n];
    let mut exact = vec![false; n];
    let mut counts = vec![0u32; tree.labels];
    for x in tree.nodes.iter().rev() {
        let value = if x.cutoff {
            match boundary {
                Boundary::FiniteExact => -1.0 / (z - 1.0),
                Boundary::Deterministic { green, .. } => {
                    exact[x.id] = true;
                    green.get(x.label)
                }
                Boundary::ConstantI => Complex64::new(0.0, 1.0),
            }
        } else {
            let mut sum = Complex64::new(0.0, 0.0);
            for &c in &x.children {
                sum += values[c];
            }
            let snapped = match boundary {
                Boundary::Deterministic { m, green } => {
                    counts.iter_mut().for_each(|c| *c = 0);
                    let mut all_exact = true;
                    for &c in &x.children {
                        counts[tree.nodes[c].label] += 1;
                        all_exact &= exact[c];
                    }
                    (all_exact && counts == m.row(x.label)).then(|| green.get(x.label))
                }
                _ => None,
            };
            match snapped {
                Some(v) => {
                    exact[x.id] = true;
                    v
                }
                None => -1.0 / (z - (x.children.len() + 1) as f64 + sum),
            }
        };
        if !(value.re.is_finite() && value.im.is_finite()) {
            return Err(Error::DegenerateDenominator);
        }
        values[x.id] = value;
    }
    Ok(GreenField {
        z,
        boundary: boundary.rule(),
        truncated: values,
        full: None,
    })
}

/// Full diagonal Green functions of the finite tree with its own degrees.
pub fn full_green_two_pass(tree: &SampledTree, z: Complex64) -> Result<GreenField> {
    full_green_with_boundary(tree, z, &Boundary::FiniteExact)
}

/// Two-pass full Green functions. With the deterministic boundary every
/// cutoff vertex keeps its cone-tree degree and the self-energy of its cone.
pub fn full_green_with_boundary(
    tree: &SampledTree,
    z: Complex64,
    boundary: &Boundary,
) -> Result<GreenField> {
    if matches!(boundary, Boundary::ConstantI) {
        return Err(Error::BoundaryRule(
            "constant-i has no full Green function".into(),
        ));
    }
    let mut field = truncated_green_recursion(tree, z, boundary)?;
    let w = &field.truncated;
    let n = tree.len();
    let mut child_sum = vec![Complex64::new(0.0, 0.0); n];
    let mut local_degree = vec![0.0; n];
    for x in &tree.nodes {
        if x.cutoff {
            match boundary {
                Boundary::Deterministic { m, green } => {
                    local_degree[x.id] = (tree.degree(x.id) as u32 + m.row_sum(x.label)) as f64;
                    child_sum[x.id] = m
                        .row(x.label)
                        .iter()
                        .enumerate()
                        .map(|(k, &c)| green.get(k) * c as f64)
                        .sum();
                }
                _ => local_degree[x.id] = tree.degree(x.id) as f64,
            }
        } else {
            local_degree[x.id] = tree.degree(x.id) as f64;
            child_sum[x.id] = x.children.iter().map(|&c| w[c]).sum();
        }
    }
    // parent-side branch values, computed top-down
    let mut upper = vec![Complex64::new(0.0, 0.0); n];
    let mut full = vec![Complex64::new(0.0, 0.0); n];
    for x in &tree.nodes {
        let id = x.id;
        let g = 1.0 / (local_degree[id] - z - upper[id] - child_sum[id]);
        if !(g.re.is_finite() && g.im.is_finite()) {
            return Err(Error::DegenerateDenominator);
        }
        full[id] = g;
        if !x.cutoff {
            for &c in &x.children {
                upper[c] = 1.0 / (local_degree[id] - z - upper[id] - (child_sum[id] - w[c]));
            }
        }
    }
    field.full = Some(full);
    Ok(field)
}

#[derive(Debug, Clone, Copy)]
pub struct OracleOptions<'a> {
    /// Adds one to the root diagonal.
    pub beta_at_root: bool,
    /// Cone continuation below the cutoff, as in [`Boundary::Deterministic`].
    pub cone: Option<(&'a SubstitutionMatrix, &'a GreenVector)>,
}

/// Dense matrix `L + B - z` of the oracle.
fn dense_system(
    tree: &SampledTree,
    z: Complex64,
    options: OracleOptions,
) -> Result<DMatrix<Complex64>> {
    let n = tree.len();
    if n > ORACLE_NODE_CAP {
        return Err(Error::OracleTooLarge {
            nodes: n,
            cap: ORACLE_NODE_CAP,
        });
    }
    let mut a = DMatrix::<Complex64>::zeros(n, n);
    for x in &tree.nodes {
        let mut diag = Complex64::new(tree.degree(x.id) as f64, 0.0) - z;
        if x.cutoff {
            if let Some((m, green)) = options.cone {
                diag += m.row_sum(x.label) as f64;
                for (k, &c) in m.row(x.label).iter().enumerate() {
                    diag -= green.get(k) * c as f64;
                }
            }
        }
        a[(x.id, x.id)] = diag;
        if let Some(p) = x.parent {
            a[(x.id, p)] = Complex64::new(-1.0, 0.0);
            a[(p, x.id)] = Complex64::new(-1.0, 0.0);
        }
    }
    if options.beta_at_root {
        a[(0, 0)] += 1.0;
    }
    Ok(a)
}

/// Diagonal of `(L + B - z)^{-1}` by dense LU, where `L` is the Laplacian of
/// the finite tree and `B` the optional boundary terms.
pub fn dense_resolvent_oracle(
    tree: &SampledTree,
    z: Complex64,
    options: OracleOptions,
) -> Result<Vec<Complex64>> {
    let a = dense_system(tree, z, options)?;
    let lu = a.lu();
    let inverse = lu
        .try_inverse()
        .ok_or(Error::SingularSystem { re: z.re, im: z.im })?;
    let diag: Vec<Complex64> = (0..tree.len()).map(|i| inverse[(i, i)]).collect();
    if diag.iter().any(|d| !(d.re.is_finite() && d.im.is_finite())) {
        return Err(Error::SingularSystem { re: z.re, im: z.im });
    }
    Ok(diag)
}

/// Root entry of `(L + B - z)^{-1}`, solving for one column only.
pub fn dense_root_value(
    tree: &SampledTree,
    z: Complex64,
    options: OracleOptions,
) -> Result<Complex64> {
    let a = dense_system(tree, z, options)?;
    let mut e0 = DVector::<Complex64>::zeros(tree.len());
    e0[0] = Complex64::new(1.0, 0.0);
    let v = a
        .lu()
        .solve(&e0)
        .ok_or(Error::SingularSystem { re: z.re, im: z.im })?;
    if !(v[0].re.is_finite() && v[0].im.is_finite()) {
        return Err(Error::SingularSystem { re: z.re, im: z.im });
    }
    Ok(v[0])
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    pub nodes: usize,
    /// Largest relative error of the truncated values over all vertices.
    pub truncated: f64,
    /// Largest relative error of the full values over all vertices.
    pub full: f64,
}

impl OracleComparison {
    pub fn worst(&self) -> f64 {
        self.truncated.max(self.full)
    }
}

/// Recursions against dense solves at every vertex. Each truncated value is
/// checked against the forward subtree of its vertex with the boundary term.
pub fn oracle_check(
    tree: &SampledTree,
    z: Complex64,
    boundary: &Boundary,
) -> Result<OracleComparison> {
    let cone = match boundary {
        Boundary::FiniteExact => None,
        Boundary::Deterministic { m, green } => Some((*m, *green)),
        Boundary::ConstantI => {
            return Err(Error::BoundaryRule(
                "constant-i has no dense counterpart".into(),
            ))
        }
    };
    let field = full_green_with_boundary(tree, z, boundary)?;
    let rel = |a: Complex64, b: Complex64| (a - b).norm() / b.norm();
    let full = dense_resolvent_oracle(
        tree,
        z,
        OracleOptions {
            beta_at_root: false,
            cone,
        },
    )?;
    let field_full = field.full.as_ref().expect("two-pass fills full values");
    let full_err = field_full
        .iter()
        .zip(&full)
        .map(|(&a, &b)| rel(a, b))
        .fold(0.0, f64::max);
    let mut truncated_err = 0.0f64;
    for x in &tree.nodes {
        let sub = tree.subtree(x.id);
        let exact = dense_root_value(
            &sub,
            z,
            OracleOptions {
                beta_at_root: true,
                cone,
            },
        )?;
        truncated_err = truncated_err.max(rel(field.truncated[x.id], exact));
    }
    Ok(OracleComparison {
        nodes: tree.len(),
        truncated: truncated_err,
        full: full_err,
    })
}

/// `gamma(value_x, Gamma_{a(x)})` per node, on the full Green functions when
/// `use_full` is set and present.
pub fn gamma_to_deterministic(
    tree: &SampledTree,
    field: &GreenField,
    green: &GreenVector,
    use_full: bool,
) -> Result<Vec<f64>> {
    if (field.z - green.z).norm() > 1e-12 * field.z.norm().max(1.0) {
        return Err(Error::InvalidArgument(
            "field and cone values use different z".into(),
        ));
    }
    let values = match (use_full, &field.full) {
        (true, Some(full)) => full,
        (true, None) => {
            return Err(Error::InvalidArgument(
                "field carries no full Green functions".into(),
            ))
        }
        (false, _) => &field.truncated,
    };
    Ok(tree
        .nodes
        .iter()
        .map(|x| gamma_raw(values[x.id], green.get(x.label)))
        .collect())
}

/// Largest violation of the Herglotz and `1/Im z` bounds, and of the
/// recursion at inner vertices (zero when everything holds).
pub fn field_defects(tree: &SampledTree, field: &GreenField) -> FieldDefects {
    let eta = field.z.im;
    let mut d = FieldDefects::default();
    let mut check = |v: Complex64| {
        if !(v.im > 0.0) {
            d.non_herglotz += 1;
        }
        if eta > 0.0 {
            d.bound_excess = d.bound_excess.max(v.norm() * eta - 1.0);
        }
    };
    field.truncated.iter().copied().for_each(&mut check);
    if let Some(full) = &field.full {
        full.iter().copied().for_each(&mut check);
    }
    for x in tree.nodes.iter().filter(|x| !x.cutoff) {
        let sum: Complex64 = x.children.iter().map(|&c| field.truncated[c]).sum();
        let w = field.z - (x.children.len() + 1) as f64 + sum;
        let r = (field.truncated[x.id] + 1.0 / w).norm();
        d.max_residual = d
            .max_residual
            .max(r / field.truncated[x.id].norm().max(1e-300));
    }
    d
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FieldDefects {
    pub non_herglotz: usize,
    /// `max |v| Im z - 1`, non-positive when the bound holds.
    pub bound_excess: f64,
    /// Largest relative recursion residual at inner vertices.
    pub max_residual: f64,
}
