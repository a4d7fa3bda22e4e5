mod common;

use common::matrix;
use conetree::cone_green::{solve_green, DEFAULT_MAX_ITER, DEFAULT_TOL};
use conetree::experiments::{
    egamma_rows, estimate_egamma, sphere_moment_scan, write_csv_report, write_json_report,
    ExperimentConfig, Provenance, SampleStats, EGAMMA_HEADER,
};
use conetree::halfplane::gamma_raw;
use conetree::model::{deterministic_process, percolation_process};
use conetree::random_green::BoundaryRule;
use num_complex::Complex64;

/// Exact law of the truncated root value for percolation on the binary tree
/// with cone values at the cutoff, by enumerating every configuration.
fn root_value_law(q: f64, depth: usize, z: Complex64, cone: Complex64) -> Vec<(Complex64, f64)> {
    let mut level = vec![(cone, 1.0)];
    for _ in 0..depth {
        let mut next = Vec::new();
        for &(v, pv) in &level {
            next.push((-1.0 / (z - 2.0 + v), (1.0 - q) * pv));
            for &(w, pw) in &level {
                next.push((-1.0 / (z - 3.0 + v + w), q * pv * pw));
            }
        }
        level = next;
    }
    level
}

#[test]
fn confidence_intervals_cover_the_exact_mean() {
    let (q, depth, p) = (0.8, 4, 2.0);
    let z = Complex64::new(2.5, 0.05);
    let m = matrix(&[&[2]]);
    let cone = solve_green(&m, z.try_into().unwrap(), DEFAULT_TOL, DEFAULT_MAX_ITER)
        .unwrap()
        .get(0);
    let law = root_value_law(q, depth, z, cone);
    let total: f64 = law.iter().map(|(_, w)| w).sum();
    assert!((total - 1.0).abs() < 1e-12);
    let exact: f64 = law
        .iter()
        .map(|&(v, w)| w * gamma_raw(v, cone).powf(p))
        .sum();

    let mut covered = 0;
    for seed in 0..20 {
        let mut cfg = ExperimentConfig::new(percolation_process(2, q).unwrap(), m.clone());
        cfg.samples = 2000;
        cfg.depth = depth;
        cfg.p = p;
        cfg.seed = seed;
        let s = estimate_egamma(&cfg, z).unwrap().per_label[0];
        if s.ci_low <= exact && exact <= s.ci_high {
            covered += 1;
        }
    }
    assert!(covered >= 17, "{covered} of 20 intervals cover {exact}");
}

/// Full Green functions on the infinite binary cone tree, sphere by sphere.
fn binary_cone_spheres(z: Complex64, cone: Complex64, spheres: usize) -> Vec<Complex64> {
    let mut out = vec![1.0 / (2.0 - z - 2.0 * cone)];
    // the branch through the parent, with the current vertex removed
    let mut up = 1.0 / (2.0 - z - cone);
    for _ in 1..spheres {
        out.push(1.0 / (3.0 - z - 2.0 * cone - up));
        up = 1.0 / (3.0 - z - cone - up);
    }
    out
}

#[test]
fn cone_tree_moment_scan_matches_closed_form() {
    let m = matrix(&[&[2]]);
    let mut cfg = ExperimentConfig::new(deterministic_process(&m), m.clone());
    cfg.p = 1.5;
    cfg.samples = 3;
    cfg.depth = 8;
    cfg.energies = Some(vec![3.0]);
    cfg.etas = vec![1.0];
    cfg.boundary = BoundaryRule::Deterministic;
    let scan = sphere_moment_scan(&cfg).unwrap();
    let z = Complex64::new(3.0, 1.0);
    let cone = Complex64::new(0.0, 0.5);
    let expected = binary_cone_spheres(z, cone, cfg.depth);
    for row in &scan.rows {
        let want = gamma_raw(expected[row.sphere], cone).powf(1.5);
        assert!(
            (row.gamma.mean - want).abs() <= 1e-12,
            "sphere {}: {} vs {want}",
            row.sphere,
            row.gamma.mean
        );
        assert_eq!(row.gamma.std_err, 0.0);
    }
    // the root misses one neighbour; deep vertices see the whole tree
    assert!((scan.rows[0].gamma.mean - 0.25f64.powf(1.5)).abs() < 1e-12);
    assert!((scan.rows[cfg.depth - 1].gamma.mean - 0.05f64.powf(1.5)).abs() < 1e-6);
}

#[test]
fn estimates_depend_only_on_the_seed() {
    let mut cfg = ExperimentConfig::new(percolation_process(3, 0.7).unwrap(), matrix(&[&[3]]));
    cfg.samples = 300;
    cfg.depth = 6;
    let z = Complex64::new(4.0, 0.01);
    let a = estimate_egamma(&cfg, z).unwrap();
    assert_eq!(a, estimate_egamma(&cfg, z).unwrap());
    cfg.seed += 1;
    assert_ne!(a, estimate_egamma(&cfg, z).unwrap());
}

#[test]
fn sample_stats_on_known_values() {
    let s = SampleStats::from_samples(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
    assert_eq!(s.mean, 5.5);
    assert_eq!(s.median, 5.5);
    assert_eq!(s.max, 10.0);
    assert_eq!(s.trimmed_mean, 5.5);
    // sample variance 55/6
    assert!((s.std_err - (55.0f64 / 60.0).sqrt()).abs() < 1e-15);
    assert!(s.ci_low < 5.5 && s.ci_high > 5.5);
}

#[test]
fn config_round_trips_through_json() {
    let mut cfg = ExperimentConfig::new(percolation_process(2, 0.9).unwrap(), matrix(&[&[2]]));
    cfg.energies = Some(vec![2.0, 3.0]);
    let json = serde_json::to_string(&cfg).unwrap();
    let back = ExperimentConfig::from_json_str(&json).unwrap();
    assert_eq!(back.hash(), cfg.hash());
    assert!(ExperimentConfig::from_json_str(&json.replace("\"p\":2.0", "\"p\":1.0")).is_err());
    assert!(ExperimentConfig::from_json_str(&json.replace("\"depth\"", "\"deep\"")).is_err());
}

#[test]
fn reports_carry_provenance() {
    let mut cfg = ExperimentConfig::new(percolation_process(2, 0.9).unwrap(), matrix(&[&[2]]));
    cfg.samples = 50;
    cfg.depth = 4;
    let result = estimate_egamma(&cfg, Complex64::new(3.0, 0.1)).unwrap();
    let prov = Provenance::new(&cfg, cfg.seed).unwrap();
    assert_eq!(prov.config_hash, cfg.hash());
    let dir = tempfile::tempdir().unwrap();
    let json = write_json_report(dir.path(), "egamma", &prov, &cfg, &result).unwrap();
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(v["provenance"]["config_hash"], cfg.hash());
    assert_eq!(v["config"]["samples"], 50);
    assert_eq!(v["result"]["per_label"][0]["count"], 50);

    let csv = write_csv_report(
        dir.path(),
        "egamma",
        &prov,
        &EGAMMA_HEADER,
        &egamma_rows(&result),
    )
    .unwrap();
    let mut reader = csv::Reader::from_path(csv).unwrap();
    let header = reader.headers().unwrap().clone();
    assert_eq!(header.len(), EGAMMA_HEADER.len() + 3);
    assert_eq!(&header[header.len() - 3], "config_hash");
    let rows: Vec<_> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 1);
    assert_eq!(&rows[0][header.len() - 3], cfg.hash().as_str());
}
