use conetree::model::{
    deterministic_process, dp_distance, moment_p, percolation_process, OffspringConfig,
    ProcessSpec, WeightedConfig,
};
use conetree::{BranchingProcess, SubstitutionMatrix};
use proptest::prelude::*;

/// Two-label law from raw weights over a fixed pool of configurations.
fn law(weights: &[f64]) -> BranchingProcess {
    let pool = [vec![1, 0], vec![0, 1], vec![2, 1], vec![1, 3], vec![0, 4]];
    let total: f64 = weights.iter().sum();
    let label = |shift: usize| {
        pool.iter()
            .enumerate()
            .map(|(i, c)| WeightedConfig {
                config: OffspringConfig(c.clone()),
                prob: weights[(i + shift) % weights.len()] / total,
            })
            .collect::<Vec<_>>()
    };
    BranchingProcess::from_spec(ProcessSpec {
        labels: 2,
        offspring: vec![label(0), label(2)],
    })
    .unwrap()
}

fn weights() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.01..1.0f64, 5)
}

proptest! {
    #[test]
    fn dp_is_a_metric(a in weights(), b in weights(), c in weights(), p in 1.0..4.0f64) {
        let (x, y, w) = (law(&a), law(&b), law(&c));
        prop_assert_eq!(dp_distance(&x, &x, p).unwrap(), 0.0);
        let xy = dp_distance(&x, &y, p).unwrap();
        prop_assert!((xy - dp_distance(&y, &x, p).unwrap()).abs() <= 1e-12 * xy.max(1.0));
        let through = dp_distance(&x, &w, p).unwrap() + dp_distance(&w, &y, p).unwrap();
        prop_assert!(xy <= through * (1.0 + 1e-12));
    }

    #[test]
    fn dp_grows_with_the_exponent(a in weights(), b in weights(), p in 1.0..3.0f64) {
        let (x, y) = (law(&a), law(&b));
        // every configuration in the pool has at least one child
        prop_assert!(dp_distance(&x, &y, p).unwrap() <= dp_distance(&x, &y, p + 1.0).unwrap() * (1.0 + 1e-12));
    }

    #[test]
    fn percolation_moments(k in 2u32..8, q in 0.01..1.0f64, p in 1.0..3.0f64) {
        let b = percolation_process(k, q).unwrap();
        // 1 + Binomial(k - 1, q) children
        let mut expected = 0.0;
        let mut coef = 1.0;
        for m in 0..k {
            expected += coef * q.powi(m as i32) * (1.0 - q).powi((k - 1 - m) as i32) * ((1 + m) as f64).powf(p);
            coef *= (k - 1 - m) as f64 / (m + 1) as f64;
        }
        let got = moment_p(&b, p).unwrap()[0];
        prop_assert!((got - expected).abs() <= 1e-12 * expected);
        let cone = deterministic_process(&SubstitutionMatrix::regular(k).unwrap());
        prop_assert!(dp_distance(&b, &cone, p).unwrap() <= 2.0 * (k as f64).powf(p));
    }
}

#[test]
fn cone_law_moments_are_row_sums() {
    let m = SubstitutionMatrix::new(vec![vec![1, 2], vec![3, 1]]).unwrap();
    let b = deterministic_process(&m);
    assert_eq!(moment_p(&b, 2.0).unwrap(), vec![9.0, 16.0]);
    assert_eq!(dp_distance(&b, &b, 1.0).unwrap(), 0.0);
}

#[test]
fn percolation_distance_closed_form() {
    // the cone law sits on the full configuration; the others count with
    // their own mass
    let (k, q, p) = (3u32, 0.8, 1.5);
    let b = percolation_process(k, q).unwrap();
    let cone = deterministic_process(&SubstitutionMatrix::regular(k).unwrap());
    let full = q.powi(2);
    let others = 2.0 * q * (1.0 - q) * 2f64.powf(p) + (1.0 - q).powi(2);
    let expected = (1.0 - full) * 3f64.powf(p) + others;
    assert!((dp_distance(&b, &cone, p).unwrap() - expected).abs() <= 1e-12);
}

#[test]
fn rejects_malformed_laws() {
    let spec = |probs: [f64; 2], configs: [Vec<u32>; 2]| ProcessSpec {
        labels: 1,
        offspring: vec![configs
            .into_iter()
            .zip(probs)
            .map(|(c, prob)| WeightedConfig {
                config: OffspringConfig(c),
                prob,
            })
            .collect()],
    };
    assert!(BranchingProcess::from_spec(spec([0.5, 0.4], [vec![1], vec![2]])).is_err());
    assert!(BranchingProcess::from_spec(spec([0.5, 0.5], [vec![0], vec![2]])).is_err());
    assert!(BranchingProcess::from_spec(spec([0.5, 0.5], [vec![1, 0], vec![2]])).is_err());
    assert!(BranchingProcess::from_spec(spec([1.5, -0.5], [vec![1], vec![2]])).is_err());
    // tiny defects are renormalized
    let b = BranchingProcess::from_spec(spec([0.5, 0.5 + 1e-11], [vec![1], vec![2]])).unwrap();
    let total: f64 = b.support(0).iter().map(|(_, q)| q).sum();
    assert!((total - 1.0).abs() <= 1e-15);
}
