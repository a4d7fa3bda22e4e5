//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use conetree::cone_green::{detect_bands, linear_grid, SolverConfig, DEFAULT_DENSITY_THRESHOLD};
use conetree::model::{OffspringConfig, ProcessSpec, WeightedConfig};
use conetree::random_green::GreenField;
use conetree::tree::{child_config, SampledTree};
use conetree::{BranchingProcess, SubstitutionMatrix};
use num_complex::Complex64;

pub fn matrix(rows: &[&[u32]]) -> SubstitutionMatrix {
    SubstitutionMatrix::new(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
}

/// The cone law with probability `1 - eps`; the rest is spread over the row
/// with one extra own-label child and the row with one child removed.
pub fn perturbed_law(m: &SubstitutionMatrix, eps: f64) -> BranchingProcess {
    let n = m.labels();
    let offspring = (0..n)
        .map(|j| {
            let row = m.row(j).to_vec();
            let mut alts = Vec::new();
            let mut more = row.clone();
            more[j] += 1;
            alts.push(more);
            if m.row_sum(j) >= 2 {
                for k in 0..n {
                    if row[k] >= 1 {
                        let mut fewer = row.clone();
                        fewer[k] -= 1;
                        alts.push(fewer);
                    }
                }
            }
            let share = eps / alts.len() as f64;
            let mut entries = vec![WeightedConfig {
                config: OffspringConfig(row),
                prob: 1.0 - eps,
            }];
            entries.extend(alts.into_iter().map(|c| WeightedConfig {
                config: OffspringConfig(c),
                prob: share,
            }));
            entries
        })
        .collect();
    BranchingProcess::from_spec(ProcessSpec {
        labels: n,
        offspring,
    })
    .unwrap()
}

/// Middle `fraction` of the widest detected band.
pub fn band_window(m: &SubstitutionMatrix, fraction: f64) -> (f64, f64) {
    let reach = 2.0 * (m.max_row_sum() as f64 + 1.0);
    let grid = linear_grid(-0.5, reach, 0.01).unwrap();
    let report = detect_bands(
        m,
        &grid,
        0.5f64.powi(20),
        DEFAULT_DENSITY_THRESHOLD,
        &SolverConfig::default(),
    )
    .unwrap();
    let band = report
        .intervals
        .iter()
        .copied()
        .max_by(|a, b| a.width().total_cmp(&b.width()))
        .unwrap()
        .shrink(fraction);
    (band.lo, band.hi)
}

pub fn rel(a: Complex64, b: Complex64) -> f64 {
    (a - b).norm() / b.norm()
}

/// Herglotz root of `K g^2 + (z - K - 1) g + 1 = 0`.
pub fn regular_root(k: u32, z: Complex64) -> Complex64 {
    let kf = k as f64;
    let b = z - kf - 1.0;
    let disc = (b * b - 4.0 * kf).sqrt();
    let r1 = (-b + disc) / (2.0 * kf);
    let r2 = (-b - disc) / (2.0 * kf);
    if r1.im > r2.im {
        r1
    } else {
        r2
    }
}

/// Two-sphere data at vertex `x`: labels and values of `S_x \ {x'}` and of
/// `S_{x'}`, where `x'` is the first child carrying `x`'s label.
pub struct TwoSphere {
    pub label: usize,
    pub first_labels: Vec<usize>,
    pub first: Vec<Complex64>,
    pub second: Option<(Vec<usize>, Vec<Complex64>)>,
    /// Both spheres match the cone rows.
    pub matching: bool,
}

pub fn two_sphere_at(
    tree: &SampledTree,
    field: &GreenField,
    m: &SubstitutionMatrix,
    x: usize,
) -> Option<TwoSphere> {
    let node = &tree.nodes[x];
    if node.cutoff {
        return None;
    }
    let j = node.label;
    let oprime = node
        .children
        .iter()
        .copied()
        .find(|&c| tree.nodes[c].label == j);
    if let Some(o) = oprime {
        if tree.nodes[o].cutoff {
            return None;
        }
    }
    let first_ids: Vec<usize> = node
        .children
        .iter()
        .copied()
        .filter(|&c| Some(c) != oprime)
        .collect();
    let row = OffspringConfig(m.row(j).to_vec());
    let second = oprime.map(|o| {
        let ids = &tree.nodes[o].children;
        (
            ids.iter().map(|&c| tree.nodes[c].label).collect::<Vec<_>>(),
            ids.iter().map(|&c| field.truncated[c]).collect::<Vec<_>>(),
        )
    });
    let matching =
        child_config(tree, x) == row && oprime.is_some_and(|o| child_config(tree, o) == row);
    Some(TwoSphere {
        label: j,
        first_labels: first_ids.iter().map(|&c| tree.nodes[c].label).collect(),
        first: first_ids.iter().map(|&c| field.truncated[c]).collect(),
        second,
        matching,
    })
}
