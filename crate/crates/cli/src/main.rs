#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde_json::json;

use conetree::cone_green::{
    detect_bands, parse_grid, solve_green, spectral_density, write_density_csv, SolverConfig,
    DEFAULT_DENSITY_THRESHOLD, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use conetree::estimates::{
    band_interior_green, contraction_report, window_constants, write_kappa_csv, PermMode,
};
use conetree::experiments::{
    cone_green_at, egamma_rows, estimate_egamma, percolation_rows, percolation_study,
    sphere_moment_scan, verify_vector_inequality, write_csv_report, write_json_report,
    ExperimentConfig, PercolationSetup, Provenance, EGAMMA_HEADER, MOMENT_HEADER,
    PERCOLATION_HEADER,
};
use conetree::model::{percolation_pk_bound, percolation_process};
use conetree::random_green::{oracle_check, Boundary, BoundaryRule};
use conetree::tree::sample_tree;
use conetree::{BranchingProcess, SubstitutionMatrix};

#[derive(Debug, Parser)]
#[command(
    name = "conetree",
    version,
    about = "Green functions and contraction diagnostics for random trees"
)]
struct Cli {
    /// Worker threads; defaults to all cores. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Detect spectral bands of the cone tree.
    Bands(BandsArgs),
    /// Cone Green functions on an energy grid.
    Green(GreenArgs),
    /// Sample one tree and dump it as JSON.
    SampleTree(SampleTreeArgs),
    /// Compare the recursions with dense resolvent solves.
    OracleCheck(OracleArgs),
    /// Monte-Carlo estimate of the gamma moment vector.
    Egamma(ExperimentArgs),
    /// Vector inequality check with Perron projection.
    VectorCheck(ExperimentArgs),
    /// Sphere-averaged moments across the eta schedule.
    Moments(ExperimentArgs),
    /// Sampled contraction coefficients and margin.
    Kappa(KappaArgs),
    /// Regular-tree percolation study.
    Percolation(PercolationArgs),
    /// Window constants r, c1, c2.
    Constants(ConstantsArgs),
}

#[derive(Debug, Args)]
struct MatrixSource {
    /// Substitution matrix as JSON rows, e.g. '[[2]]'.
    #[arg(long)]
    matrix: Option<String>,
    /// Experiment config file; its matrix is used when --matrix is absent.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BandsArgs {
    #[command(flatten)]
    source: MatrixSource,
    /// Energy grid start:stop:step.
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
    #[arg(long, default_value_t = 0.5f64.powi(20))]
    eta_min: f64,
    #[arg(long, default_value_t = DEFAULT_DENSITY_THRESHOLD)]
    threshold: f64,
    /// Largest tolerated fraction of flagged grid points.
    #[arg(long, default_value_t = 0.1)]
    max_flagged: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GreenArgs {
    #[command(flatten)]
    source: MatrixSource,
    #[arg(long, allow_hyphen_values = true)]
    grid: String,
    #[arg(long, default_value_t = 1e-3)]
    eta: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SampleTreeArgs {
    /// Experiment config supplying the branching law.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Branching law as JSON, instead of a config file.
    #[arg(long)]
    process: Option<String>,
    #[arg(long, default_value_t = 0)]
    root: usize,
    #[arg(long, default_value_t = 4)]
    depth: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OracleArgs {
    /// Experiment config supplying law and matrix; built-in mixed laws otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    trees: usize,
    #[arg(long, default_value_t = 6)]
    depth: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.05)]
    eta: f64,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    boundary: Option<BoundaryRule>,
    /// Output directory; overrides the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Full,
    RegularPair,
}

#[derive(Debug, Args)]
struct KappaArgs {
    #[command(flatten)]
    source: MatrixSource,
    #[arg(long)]
    energy: f64,
    #[arg(long, default_value_t = 1e-3)]
    eta: f64,
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "full")]
    mode: Mode,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PercolationArgs {
    #[arg(long = "K")]
    k: u32,
    /// Print the critical keep-probability bounds and stop.
    #[arg(long)]
    bound_only: bool,
    /// Keep probabilities, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.9, 0.95, 0.99, 0.999])]
    q: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    energies: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1e-3])]
    eta: Vec<f64>,
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 12)]
    depth: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ConstantsArgs {
    #[command(flatten)]
    source: MatrixSource,
    /// Energy window lo:hi.
    #[arg(long, allow_hyphen_values = true)]
    window: String,
    #[arg(long, default_value_t = 1.0)]
    eta_max: f64,
    #[arg(long, default_value_t = 1e-3)]
    eta_min: f64,
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    #[arg(long, default_value_t = 21)]
    points: usize,
}

/// Exit status 1 for bad input, 2 for numerical failure.
#[derive(Debug)]
enum Failure {
    Config(anyhow::Error),
    Numerical(anyhow::Error),
}

impl From<conetree::Error> for Failure {
    fn from(e: conetree::Error) -> Self {
        use conetree::Error as E;
        match e {
            E::InvalidMatrix(_)
            | E::InvalidProcess(_)
            | E::AlphabetMismatch(..)
            | E::InvalidSchedule(_)
            | E::BoundaryRule(_)
            | E::InvalidArgument(_)
            | E::Io(_)
            | E::Json(_)
            | E::Csv(_) => Failure::Config(e.into()),
            _ => Failure::Numerical(e.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast::<conetree::Error>() {
            Ok(inner) => inner.into(),
            Err(e) => Failure::Config(e),
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("numerical failure: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Outcome {
    match command {
        Command::Bands(a) => bands(a),
        Command::Green(a) => green(a),
        Command::SampleTree(a) => sample(a),
        Command::OracleCheck(a) => oracle(a),
        Command::Egamma(a) => egamma(a),
        Command::VectorCheck(a) => vector_check(a),
        Command::Moments(a) => moments(a),
        Command::Kappa(a) => kappa(a),
        Command::Percolation(a) => percolation(a),
        Command::Constants(a) => constants(a),
    }
}

fn read_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    ExperimentConfig::from_json_str(&text)
        .with_context(|| format!("config {}", path.display()))
        .map_err(Failure::from)
}

fn resolve_matrix(source: &MatrixSource) -> Result<SubstitutionMatrix, Failure> {
    match (&source.matrix, &source.config) {
        (Some(text), _) => {
            let rows: Vec<Vec<u32>> = serde_json::from_str(text)
                .map_err(|e| Failure::Config(anyhow!("--matrix: {e}")))?;
            Ok(SubstitutionMatrix::new(rows)?)
        }
        (None, Some(path)) => Ok(read_config(path)?.matrix),
        (None, None) => Err(Failure::Config(anyhow!("pass --matrix or --config"))),
    }
}

fn parse_pair(text: &str) -> Result<(f64, f64), Failure> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || Failure::Config(anyhow!("expected lo:hi, got {text:?}"));
    if parts.len() != 2 {
        return Err(bad());
    }
    let lo = parts[0].trim().parse().map_err(|_| bad())?;
    let hi = parts[1].trim().parse().map_err(|_| bad())?;
    Ok((lo, hi))
}

fn write_text(out: &Option<PathBuf>, name: &str, text: &str) -> Result<(), Failure> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(conetree::Error::from)?;
            std::fs::write(dir.join(name), text).map_err(conetree::Error::from)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn bands(a: BandsArgs) -> Outcome {
    let m = resolve_matrix(&a.source)?;
    let reach = 2.0 * (m.max_row_sum() as f64 + 1.0);
    let grid_spec = a
        .grid
        .clone()
        .unwrap_or_else(|| format!("-1:{}:0.01", reach + 1.0));
    let grid = parse_grid(&grid_spec)?;
    let cfg = SolverConfig::default();
    let report = detect_bands(&m, &grid, a.eta_min, a.threshold, &cfg)?;
    for i in &report.intervals {
        println!("band [{:.6}, {:.6}]", i.lo, i.hi);
    }
    for f in &report.flagged {
        println!("flagged {:.6} {:?}", f.energy, f.flag);
    }
    if let Some(dir) = &a.out {
        let resolved = json!({
            "matrix": m, "grid": grid_spec, "eta_min": a.eta_min, "threshold": a.threshold,
        });
        let provenance = Provenance::new(&resolved, 0)?;
        write_json_report(dir, "bands", &provenance, &resolved, &report)?;
        let density = spectral_density(&m, &grid, a.eta_min, &cfg)?;
        let file = std::fs::File::create(dir.join("density.csv")).map_err(conetree::Error::from)?;
        write_density_csv(&density, file)?;
    }
    let fraction = report.flagged.len() as f64 / grid.len().max(1) as f64;
    if fraction > a.max_flagged {
        return Err(Failure::Numerical(anyhow!(
            "{:.1}% of grid points flagged (limit {:.1}%)",
            100.0 * fraction,
            100.0 * a.max_flagged
        )));
    }
    Ok(())
}

fn green(a: GreenArgs) -> Outcome {
    let m = resolve_matrix(&a.source)?;
    let grid = parse_grid(&a.grid)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["E", "eta", "label", "re_gamma", "im_gamma", "residual"])
        .map_err(conetree::Error::from)?;
    for e in grid {
        let z = Complex64::new(e, a.eta).try_into()?;
        let g = solve_green(&m, z, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
        for (j, v) in g.values.iter().enumerate() {
            w.write_record(&[
                e.to_string(),
                a.eta.to_string(),
                j.to_string(),
                v.re.to_string(),
                v.im.to_string(),
                g.residual.to_string(),
            ])
            .map_err(conetree::Error::from)?;
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Failure::Config(anyhow!("{e}")))?;
    write_text(&a.out, "green.csv", &String::from_utf8_lossy(&bytes))
}

fn sample(a: SampleTreeArgs) -> Outcome {
    let law: BranchingProcess = match (&a.process, &a.config) {
        (Some(text), _) => BranchingProcess::from_json_str(text)?,
        (None, Some(path)) => read_config(path)?.process,
        (None, None) => return Err(Failure::Config(anyhow!("pass --process or --config"))),
    };
    let tree = sample_tree(&law, a.root, a.depth, a.seed)?;
    write_text(&a.out, "tree.json", &(tree.to_json()? + "\n"))
}

fn builtin_laws() -> Vec<(BranchingProcess, SubstitutionMatrix)> {
    let two_label = BranchingProcess::from_json_str(
        r#"{"labels": 2, "offspring": [
            [{"config": [1, 1], "prob": 0.7}, {"config": [0, 1], "prob": 0.2}, {"config": [2, 1], "prob": 0.1}],
            [{"config": [2, 1], "prob": 0.6}, {"config": [1, 0], "prob": 0.4}]]}"#,
    )
    .expect("built-in law is valid");
    let m2 = SubstitutionMatrix::new(vec![vec![1, 1], vec![2, 1]]).expect("valid matrix");
    vec![
        (
            percolation_process(2, 0.7).expect("valid"),
            SubstitutionMatrix::regular(2).expect("valid"),
        ),
        (
            percolation_process(3, 0.4).expect("valid"),
            SubstitutionMatrix::regular(3).expect("valid"),
        ),
        (two_label, m2),
    ]
}

fn oracle(a: OracleArgs) -> Outcome {
    let laws = match &a.config {
        Some(path) => {
            let cfg = read_config(path)?;
            vec![(cfg.process, cfg.matrix)]
        }
        None => builtin_laws(),
    };
    let mut worst = 0.0f64;
    for i in 0..a.trees {
        let (law, m) = &laws[i % laws.len()];
        let root = i % law.labels();
        let tree = sample_tree(law, root, a.depth, a.seed.wrapping_add(i as u64))?;
        let energy = m.max_row_sum() as f64 + 1.0 - 1.5 + 3.0 * (i as f64 / a.trees.max(1) as f64);
        let z = Complex64::new(energy, a.eta);
        let green = cone_green_at(m, z)?;
        let finite = oracle_check(&tree, z, &Boundary::FiniteExact)?;
        let coned = oracle_check(&tree, z, &Boundary::Deterministic { m, green: &green })?;
        let err = finite.worst().max(coned.worst());
        log::info!(
            "tree {i}: {} nodes, max relative error {err:.3e}",
            tree.len()
        );
        worst = worst.max(err);
    }
    println!(
        "trees {} depth {} max relative error {:.3e}",
        a.trees, a.depth, worst
    );
    if worst > a.tol {
        return Err(Failure::Numerical(anyhow!(
            "oracle mismatch {worst:.3e} exceeds {:.1e}",
            a.tol
        )));
    }
    Ok(())
}

fn load_experiment(a: &ExperimentArgs) -> Result<(ExperimentConfig, Option<PathBuf>), Failure> {
    let mut cfg = read_config(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.samples {
        cfg.samples = n;
    }
    if let Some(d) = a.depth {
        cfg.depth = d;
    }
    if let Some(p) = a.p {
        cfg.p = p;
    }
    if let Some(b) = a.boundary {
        cfg.boundary = b;
    }
    if a.out.is_some() {
        cfg.output_dir = a.out.clone();
    }
    cfg.validate()?;
    // where results land is not part of the experiment's identity
    let out = cfg.output_dir.take();
    Ok((cfg, out))
}

fn grid_points(cfg: &ExperimentConfig) -> Result<Vec<Complex64>, Failure> {
    let energies = cfg.resolved_energies()?;
    Ok(energies
        .iter()
        .flat_map(|&e| cfg.etas.iter().map(move |&eta| Complex64::new(e, eta)))
        .collect())
}

fn egamma(a: ExperimentArgs) -> Outcome {
    let (cfg, out) = load_experiment(&a)?;
    let mut results = Vec::new();
    let mut rows = Vec::new();
    for z in grid_points(&cfg)? {
        let v = estimate_egamma(&cfg, z)?;
        for s in v.per_label.iter() {
            println!(
                "E={} eta={} mean={:.6e} ci=[{:.6e}, {:.6e}]",
                z.re, z.im, s.mean, s.ci_low, s.ci_high
            );
        }
        rows.extend(egamma_rows(&v));
        results.push(v);
    }
    if let Some(dir) = out {
        let provenance = Provenance::new(&cfg, cfg.seed)?;
        write_json_report(&dir, "egamma", &provenance, &cfg, &results)?;
        write_csv_report(&dir, "egamma", &provenance, &EGAMMA_HEADER, &rows)?;
    }
    Ok(())
}

fn vector_check(a: ExperimentArgs) -> Outcome {
    let (cfg, out) = load_experiment(&a)?;
    let mut reports = Vec::new();
    for z in grid_points(&cfg)? {
        let r = verify_vector_inequality(&cfg, z)?;
        println!(
            "E={} eta={} projected slack {:.3e} +- {:.3e} ({})",
            z.re,
            z.im,
            r.projected_slack.value,
            r.projected_slack.half_width,
            if r.projected_slack.nonnegative_within_ci() {
                "ok"
            } else {
                "negative"
            }
        );
        reports.push(r);
    }
    if let Some(dir) = out {
        let provenance = Provenance::new(&cfg, cfg.seed)?;
        write_json_report(&dir, "vector_check", &provenance, &cfg, &reports)?;
    }
    Ok(())
}

fn moments(a: ExperimentArgs) -> Outcome {
    let (cfg, out) = load_experiment(&a)?;
    let scan = sphere_moment_scan(&cfg)?;
    for r in &scan.rows {
        println!(
            "E={} eta={} label={} n={} gamma={:.6e} modulus={:.6e}",
            r.energy, r.eta, r.label, r.sphere, r.gamma.mean, r.modulus.mean
        );
    }
    if let Some(dir) = out {
        let provenance = Provenance::new(&cfg, cfg.seed)?;
        write_json_report(&dir, "moments", &provenance, &cfg, &scan)?;
        write_csv_report(
            &dir,
            "moments",
            &provenance,
            &MOMENT_HEADER,
            &conetree::experiments::moment_rows(&scan),
        )?;
    }
    Ok(())
}

fn kappa(a: KappaArgs) -> Outcome {
    let m = resolve_matrix(&a.source)?;
    let green = band_interior_green(&m, Complex64::new(a.energy, a.eta).try_into()?)?;
    let mode = match a.mode {
        Mode::Full => PermMode::Full,
        Mode::RegularPair => PermMode::RegularPair,
    };
    let report = contraction_report(&m, &green, a.p, a.samples, a.seed, mode, None)?;
    println!(
        "sampled sup kappa {:.6} margin {:.6}",
        report.sup_kappa, report.margin
    );
    if let Some(dir) = &a.out {
        let resolved = json!({
            "matrix": m, "energy": a.energy, "eta": a.eta, "p": a.p,
            "samples": a.samples, "seed": a.seed, "mode": mode,
        });
        let provenance = Provenance::new(&resolved, a.seed)?;
        write_json_report(dir, "kappa", &provenance, &resolved, &report)?;
        let file = std::fs::File::create(dir.join("kappa.csv")).map_err(conetree::Error::from)?;
        write_kappa_csv(&report.kappa_samples, file)?;
    }
    if !(report.margin > 0.0) {
        return Err(Failure::Numerical(anyhow!(
            "sampled kappa reached {}",
            report.sup_kappa
        )));
    }
    Ok(())
}

fn percolation(a: PercolationArgs) -> Outcome {
    let plain = percolation_pk_bound(a.k, false)?;
    let improved = percolation_pk_bound(a.k, true)?;
    println!("K={} bound {plain}", a.k);
    println!("K={} improved bound {improved}", a.k);
    if a.bound_only {
        return Ok(());
    }
    let setup = PercolationSetup {
        k: a.k,
        p_keep: a.q.clone(),
        energies: a.energies.clone(),
        etas: a.eta.clone(),
        p: a.p,
        samples: a.samples,
        depth: a.depth,
        seed: a.seed,
    };
    let report = percolation_study(&setup)?;
    for r in &report.rows {
        println!(
            "q={} E={} eta={} dp={:.4e} egamma={:.6e} ci=[{:.6e}, {:.6e}]",
            r.p_keep,
            r.energy,
            r.eta,
            r.distance_to_cone,
            r.egamma.mean,
            r.egamma.ci_low,
            r.egamma.ci_high
        );
    }
    if let Some(dir) = &a.out {
        let provenance = Provenance::new(&setup, a.seed)?;
        write_json_report(dir, "percolation", &provenance, &setup, &report)?;
        write_csv_report(
            dir,
            "percolation",
            &provenance,
            &PERCOLATION_HEADER,
            &percolation_rows(&report),
        )?;
    }
    Ok(())
}

fn constants(a: ConstantsArgs) -> Outcome {
    let m = resolve_matrix(&a.source)?;
    let (lo, hi) = parse_pair(&a.window)?;
    let c = window_constants(&m, lo, hi, a.eta_max, a.eta_min, a.p, a.points)?;
    println!("r {:.6e}", c.r);
    println!("c1 {:.6e}", c.c1);
    println!("c2 {:.6e} (ln c2 = {:.6})", c.c2, c.ln_c2);
    Ok(())
}
