use conetree::model::{OffspringConfig, ProcessSpec, WeightedConfig};
use conetree::tree::{child_config, sample_tree};
use conetree::BranchingProcess;
use proptest::prelude::*;

/// Label 0 has children (1,1) or (0,2) with equal odds; label 1 has one
/// label-0 child.
fn two_label_law() -> BranchingProcess {
    let entry = |c: Vec<u32>, prob| WeightedConfig {
        config: OffspringConfig(c),
        prob,
    };
    BranchingProcess::from_spec(ProcessSpec {
        labels: 2,
        offspring: vec![
            vec![entry(vec![1, 1], 0.5), entry(vec![0, 2], 0.5)],
            vec![entry(vec![1, 0], 1.0)],
        ],
    })
    .unwrap()
}

fn mean_and_error(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
#[allow(clippy::needless_range_loop)]
fn sphere_sizes_follow_the_mean_matrix() {
    let b = two_label_law();
    let mean = [[0.5, 1.5], [1.0, 0.0]];
    let depth = 6;
    // expected label counts on each sphere from the root label 0
    let mut expected = vec![[1.0, 0.0]];
    for n in 0..depth {
        let v = expected[n];
        expected.push([
            v[0] * mean[0][0] + v[1] * mean[1][0],
            v[0] * mean[0][1] + v[1] * mean[1][1],
        ]);
    }
    let trees: Vec<_> = (0..3000)
        .map(|s| sample_tree(&b, 0, depth, s).unwrap())
        .collect();
    for n in 1..=depth {
        for label in 0..2 {
            let counts: Vec<f64> = trees
                .iter()
                .map(|t| {
                    t.sphere(n)
                        .unwrap()
                        .iter()
                        .filter(|&&x| t.nodes[x].label == label)
                        .count() as f64
                })
                .collect();
            let (m, err) = mean_and_error(&counts);
            assert!(
                (m - expected[n][label]).abs() <= 3.0 * err.max(1e-12),
                "sphere {n} label {label}: {m} vs {} (se {err})",
                expected[n][label]
            );
        }
    }
}

#[test]
fn offspring_frequencies() {
    let b = two_label_law();
    let trees: Vec<_> = (0..4000)
        .map(|s| sample_tree(&b, 0, 1, s).unwrap())
        .collect();
    let hits = trees
        .iter()
        .filter(|t| child_config(t, 0) == OffspringConfig(vec![1, 1]))
        .count() as f64;
    let sigma = (4000.0f64 * 0.25).sqrt();
    assert!((hits - 2000.0).abs() <= 3.0 * sigma, "{hits}");
}

proptest! {
    #[test]
    fn trees_are_reproducible_and_well_formed(seed in any::<u64>(), depth in 0usize..7, root in 0usize..2) {
        let b = two_label_law();
        let t = sample_tree(&b, root, depth, seed).unwrap();
        prop_assert_eq!(&t, &sample_tree(&b, root, depth, seed).unwrap());
        prop_assert!(t.is_well_formed());
        prop_assert!(t.satisfies_forward_condition());
        for x in &t.nodes {
            prop_assert_eq!(x.cutoff, x.depth == depth);
            if !x.cutoff {
                prop_assert!(b.prob(x.label, &child_config(&t, x.id)) > 0.0);
            }
            for &c in &x.children {
                prop_assert!(c > x.id);
                prop_assert_eq!(t.nodes[c].depth, x.depth + 1);
            }
        }
        let total: usize = (0..=depth).map(|n| t.sphere(n).unwrap().len()).sum();
        prop_assert_eq!(total, t.len());
    }

    #[test]
    fn deeper_samples_extend_shallower_ones(seed in any::<u64>(), depth in 1usize..6) {
        let b = two_label_law();
        let shallow = sample_tree(&b, 0, depth, seed).unwrap();
        let deep = sample_tree(&b, 0, depth + 1, seed).unwrap();
        for x in shallow.nodes.iter().filter(|x| !x.cutoff) {
            prop_assert_eq!(child_config(&shallow, x.id), child_config(&deep, x.id));
        }
    }
}
