//! Command-line front end: fit, test, simulate, screen, gen.
//!
//! Exit codes: 0 success, 2 usage errors, 3 data errors. Every command is
//! deterministic given --seed and writes a manifest next to its outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use monodecomp::curves::{eval_curve, gp_sample, KernelSpec, NamedCurve};
use monodecomp::decomposition::predict;
use monodecomp::sim::{
    experiment_table_tsv, run_fit_experiment, size_power_tsv, Baseline, Diagnostics,
    FitExperimentConfig, SizePowerRow, Strategy, Truth,
};
use monodecomp::testing::{
    bh_adjust, hypergeom_enrich, wild_bootstrap_test, EnrichInput, Hypothesis, Multiplier,
    TestConfig, Tuner,
};
use monodecomp::tuning::{tune_mdcs, tune_mdss, CvGrid, CvSurface, MdcsStrategy, MdssStrategy};

#[derive(Parser)]
#[command(name = "monodecomp", version, about = "Monotone decomposition of univariate regression functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// RNG seed; identical seeds give byte-identical outputs
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for inner parallel loops (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Clone)]
struct GridArgs {
    /// Comma-separated mu grid values
    #[arg(long)]
    mu_grid: Option<String>,
    /// Comma-separated lambda grid values
    #[arg(long)]
    lambda_grid: Option<String>,
    /// Comma-separated J grid values
    #[arg(long)]
    j_grid: Option<String>,
    /// Comma-separated shrinkage-factor grid values
    #[arg(long)]
    k_grid: Option<String>,
    /// CV folds (n for leave-one-out)
    #[arg(long)]
    folds: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a monotone decomposition to a CSV of (x, y) points
    Fit {
        /// Input CSV with columns x,y
        input: PathBuf,
        /// Fitting method
        #[arg(long, value_parser = ["mdcs", "mdss"], default_value = "mdcs")]
        method: String,
        /// Tuning strategy: joint, fix-first, or shrinkage (mdss only)
        #[arg(long, value_parser = ["joint", "fix-first", "shrinkage"], default_value = "joint")]
        strategy: String,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Wild-bootstrap test of monotonicity on a CSV of (x, y) points
    Test {
        /// Input CSV with columns x,y
        input: PathBuf,
        #[arg(long, value_parser = ["increasing", "decreasing", "monotone"], default_value = "increasing")]
        hypothesis: String,
        /// Bootstrap replicates
        #[arg(long, default_value_t = 100)]
        r: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, value_parser = ["mdcs", "mdss"], default_value = "mdcs")]
        method: String,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run a Monte-Carlo experiment described by a JSON spec file
    Simulate {
        /// Experiment spec (JSON)
        spec: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Screen a matrix of series for non-monotone behavior
    Screen {
        /// CSV matrix: first column pseudotime, remaining columns series
        input: PathBuf,
        /// Optional annotation CSV with columns series,term for enrichment
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 100)]
        r: usize,
        #[arg(long, value_parser = ["mdcs", "mdss"], default_value = "mdcs")]
        method: String,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Generate synthetic data from a named curve or GP kernel
    Gen {
        /// Named curve label, e.g. x3, sigmoid, bowman-0.45, m2
        #[arg(long, conflicts_with = "kernel")]
        curve: Option<String>,
        /// Kernel label, e.g. SE-1, Mat32-0.1, RQ-0.1-0.5
        #[arg(long)]
        kernel: Option<String>,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        #[command(flatten)]
        common: CommonArgs,
    },
}

enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    fn usage<T: ToString>(m: T) -> Self {
        CliError::Usage(m.to_string())
    }

    fn data<T: ToString>(m: T) -> Self {
        CliError::Data(m.to_string())
    }
}

#[derive(Serialize)]
struct ManifestInput {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    version: String,
    seed: u64,
    config: serde_json::Value,
    inputs: Vec<ManifestInput>,
    outputs: Vec<String>,
    notes: Vec<String>,
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    let mut h = Sha256::new();
    h.update(&bytes);
    let digest = h.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn write_out(dir: &Path, name: &str, contents: &str) -> Result<String, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?;
    Ok(name.to_string())
}

fn write_manifest(dir: &Path, name: &str, manifest: &RunManifest) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    write_out(dir, name, &json)?;
    Ok(())
}

fn setup_threads(common: &CommonArgs) -> Result<(), CliError> {
    if let Some(t) = common.threads {
        if t == 0 {
            return Err(CliError::usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn parse_list_f64(s: &str, flag: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| CliError::usage(format!("bad value '{v}' in {flag}"))))
        .collect()
}

fn parse_list_usize(s: &str, flag: &str) -> Result<Vec<usize>, CliError> {
    s.split(',')
        .map(|v| v.trim().parse::<usize>().map_err(|_| CliError::usage(format!("bad value '{v}' in {flag}"))))
        .collect()
}

fn build_grid(args: &GridArgs, n: usize) -> Result<CvGrid, CliError> {
    let mut grid = CvGrid::default_for(n);
    if let Some(s) = &args.mu_grid {
        grid.mu_values = parse_list_f64(s, "--mu-grid")?;
    }
    if let Some(s) = &args.lambda_grid {
        grid.lambda_values = parse_list_f64(s, "--lambda-grid")?;
    }
    if let Some(s) = &args.j_grid {
        grid.j_values = parse_list_usize(s, "--j-grid")?;
    }
    if let Some(s) = &args.k_grid {
        grid.k_values = parse_list_f64(s, "--k-grid")?;
    }
    if let Some(f) = args.folds {
        grid.folds = f;
    }
    Ok(grid)
}

fn grid_echo(grid: &CvGrid) -> serde_json::Value {
    serde_json::json!({
        "mu": grid.mu_values,
        "lambda": grid.lambda_values,
        "j": grid.j_values,
        "k": grid.k_values,
        "folds": grid.folds,
    })
}

/// Read a two-column CSV with a header naming x and y. NaN or non-numeric
/// rows are rejected with their row number.
fn read_xy_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::data(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| CliError::data(e))?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let xi = find("x").ok_or_else(|| CliError::data("input CSV is missing column 'x'"))?;
    let yi = find("y").ok_or_else(|| CliError::data("input CSV is missing column 'y'"))?;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::data(format!("row {}: {e}", row + 2)))?;
        let parse = |i: usize, col: &str| -> Result<f64, CliError> {
            let raw = record
                .get(i)
                .ok_or_else(|| CliError::data(format!("row {}: missing column '{col}'", row + 2)))?;
            let v: f64 = raw
                .trim()
                .parse()
                .map_err(|_| CliError::data(format!("row {}: '{raw}' in column '{col}' is not a number", row + 2)))?;
            if !v.is_finite() {
                return Err(CliError::data(format!("row {}: non-finite value in column '{col}'", row + 2)));
            }
            Ok(v)
        };
        x.push(parse(xi, "x")?);
        y.push(parse(yi, "y")?);
    }
    if x.len() < 4 {
        return Err(CliError::data(format!("need at least 4 data rows, found {}", x.len())));
    }
    Ok((x, y))
}

fn curve_tsv(fit: &monodecomp::decomposition::DecompositionFit, lo: f64, hi: f64) -> Result<String, CliError> {
    let grid: Vec<f64> = (0..500).map(|i| lo + (hi - lo) * i as f64 / 499.0).collect();
    let (f, fu, fd) = predict(fit, &grid).map_err(|e| CliError::data(e))?;
    let mut out = String::from("t\tf\tf_up\tf_down\n");
    for (i, &t) in grid.iter().enumerate() {
        out.push_str(&format!("{t}\t{}\t{}\t{}\n", f[i], fu[i], fd[i]));
    }
    Ok(out)
}

fn cmd_fit(
    input: &Path,
    method: &str,
    strategy: &str,
    grid_args: &GridArgs,
    common: &CommonArgs,
) -> Result<(), CliError> {
    setup_threads(common)?;
    let (x, y) = read_xy_csv(input)?;
    let grid = build_grid(grid_args, x.len())?;
    let (surface, fit): (CvSurface, _) = match method {
        "mdcs" => {
            let strat = match strategy {
                "joint" => MdcsStrategy::JointJMu,
                "fix-first" => MdcsStrategy::FixJThenMu,
                _ => return Err(CliError::usage("strategy 'shrinkage' applies only to --method mdss")),
            };
            tune_mdcs(&x, &y, &grid, strat, common.seed).map_err(|e| CliError::data(e))?
        }
        _ => {
            let strat = match strategy {
                "joint" => MdssStrategy::JointLambdaMu,
                "fix-first" => MdssStrategy::FixLambdaThenMu,
                _ => MdssStrategy::ShrinkageFactor,
            };
            tune_mdss(&x, &y, &grid, strat, common.seed).map_err(|e| CliError::data(e))?
        }
    };
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut outputs = Vec::new();
    let doc = fit.document();
    outputs.push(write_out(&common.out_dir, "fit.json", &serde_json::to_string_pretty(&doc).unwrap())?);
    outputs.push(write_out(&common.out_dir, "curve.tsv", &curve_tsv(&fit, lo, hi)?)?);
    outputs.push(write_out(&common.out_dir, "cv_surface.tsv", &surface.to_tsv())?);
    let manifest = RunManifest {
        command: "fit".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: common.seed,
        config: serde_json::json!({
            "input": input.display().to_string(),
            "method": method,
            "strategy": strategy,
            "grid": grid_echo(&grid),
            "chosen": {"mu": fit.mu, "lambda": fit.lambda, "j": fit.basis_size()},
        }),
        inputs: vec![ManifestInput { path: input.display().to_string(), sha256: sha256_file(input)? }],
        outputs,
        notes: vec![],
    };
    write_manifest(&common.out_dir, "fit_manifest.json", &manifest)
}

fn parse_hypothesis(s: &str) -> Hypothesis {
    match s {
        "decreasing" => Hypothesis::DecreasingNull,
        "monotone" => Hypothesis::MonotoneNull,
        _ => Hypothesis::IncreasingNull,
    }
}

/// Small CV grid used where the full default would dominate the runtime
/// (per-series screening, bootstrap tuning).
fn screening_grid(args: &GridArgs, n: usize) -> Result<CvGrid, CliError> {
    let mut grid = build_grid(args, n)?;
    if args.mu_grid.is_none() {
        grid.mu_values = vec![1e-4, 1e-2, 1.0, 1e2];
    }
    if args.j_grid.is_none() {
        grid.j_values = vec![4, 6, 8, 10];
    }
    if args.lambda_grid.is_none() {
        grid.lambda_values = vec![1e-6, 1e-4, 1e-2, 1.0];
    }
    if args.folds.is_none() {
        grid.folds = 5.min(n);
    }
    Ok(grid)
}

fn tuner_for(method: &str, grid: CvGrid) -> Tuner {
    if method == "mdss" {
        Tuner::CvMdss { grid, strategy: MdssStrategy::JointLambdaMu }
    } else {
        Tuner::CvMdcs { grid, strategy: MdcsStrategy::JointJMu }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_test(
    input: &Path,
    hypothesis: &str,
    r: usize,
    alpha: f64,
    method: &str,
    grid_args: &GridArgs,
    common: &CommonArgs,
) -> Result<(), CliError> {
    if r == 0 {
        return Err(CliError::usage("--r must be at least 1"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CliError::usage("--alpha must lie in (0, 1)"));
    }
    setup_threads(common)?;
    let (x, y) = read_xy_csv(input)?;
    let grid = screening_grid(grid_args, x.len())?;
    let cfg = TestConfig {
        tuner: tuner_for(method, grid.clone()),
        r,
        alpha,
        hypothesis: parse_hypothesis(hypothesis),
        multiplier: Multiplier::Normal,
    };
    let result = wild_bootstrap_test(&x, &y, &cfg, common.seed).map_err(|e| CliError::data(e))?;
    let mut outputs = Vec::new();
    outputs.push(write_out(&common.out_dir, "test.json", &serde_json::to_string_pretty(&result).unwrap())?);
    let mut tsv = String::from("r\tdelta\n");
    for (i, d) in result.bootstrap.iter().enumerate() {
        tsv.push_str(&format!("{}\t{}\n", i + 1, if d.is_finite() { d.to_string() } else { "inf".into() }));
    }
    outputs.push(write_out(&common.out_dir, "bootstrap.tsv", &tsv)?);
    let manifest = RunManifest {
        command: "test".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: common.seed,
        config: serde_json::json!({
            "input": input.display().to_string(),
            "hypothesis": hypothesis,
            "R": r,
            "alpha": alpha,
            "method": method,
            "grid": grid_echo(&grid),
        }),
        inputs: vec![ManifestInput { path: input.display().to_string(), sha256: sha256_file(input)? }],
        outputs,
        notes: vec![],
    };
    write_manifest(&common.out_dir, "test_manifest.json", &manifest)
}

#[derive(Deserialize)]
struct GridSpec {
    mu: Option<Vec<f64>>,
    lambda: Option<Vec<f64>>,
    j: Option<Vec<usize>>,
    k: Option<Vec<f64>>,
    folds: Option<usize>,
}

#[derive(Deserialize)]
struct SimulateSpec {
    /// Either fitting-comparison ("fit") or size/power ("test")
    #[serde(default = "default_mode")]
    mode: String,
    curves: Vec<String>,
    sigmas: Vec<f64>,
    n: usize,
    reps: usize,
    #[serde(default = "default_ngrid")]
    n_grid: usize,
    #[serde(default = "default_baseline")]
    baseline: String,
    #[serde(default = "default_strategy")]
    strategy: String,
    /// Test mode only
    #[serde(default = "default_r")]
    r: usize,
    #[serde(default = "default_alpha")]
    alpha: f64,
    #[serde(default = "default_hyp")]
    hypothesis: String,
    grid: Option<GridSpec>,
}

fn default_mode() -> String {
    "fit".into()
}
fn default_ngrid() -> usize {
    100
}
fn default_baseline() -> String {
    "cubic".into()
}
fn default_strategy() -> String {
    "joint".into()
}
fn default_r() -> usize {
    100
}
fn default_alpha() -> f64 {
    0.05
}
fn default_hyp() -> String {
    "increasing".into()
}

fn spec_grid(spec: &SimulateSpec) -> CvGrid {
    let mut grid = CvGrid {
        mu_values: vec![1e-4, 1e-2, 1.0, 1e2],
        j_values: vec![4, 6, 8, 10],
        lambda_values: vec![1e-6, 1e-4, 1e-2, 1.0],
        k_values: (1..=10).map(|i| i as f64 * 0.1).collect(),
        folds: 10.min(spec.n),
    };
    if let Some(g) = &spec.grid {
        if let Some(v) = &g.mu {
            grid.mu_values = v.clone();
        }
        if let Some(v) = &g.lambda {
            grid.lambda_values = v.clone();
        }
        if let Some(v) = &g.j {
            grid.j_values = v.clone();
        }
        if let Some(v) = &g.k {
            grid.k_values = v.clone();
        }
        if let Some(f) = g.folds {
            grid.folds = f;
        }
    }
    grid
}

fn cmd_simulate(spec_path: &Path, common: &CommonArgs) -> Result<(), CliError> {
    setup_threads(common)?;
    let text = fs::read_to_string(spec_path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", spec_path.display())))?;
    let spec: SimulateSpec =
        serde_json::from_str(&text).map_err(|e| CliError::data(format!("bad spec JSON: {e}")))?;
    let truths: Vec<Truth> = spec
        .curves
        .iter()
        .map(|label| Truth::parse(label).map_err(CliError::data))
        .collect::<Result<_, _>>()?;
    let grid = spec_grid(&spec);
    let mut outputs = Vec::new();
    match spec.mode.as_str() {
        "test" => {
            let tuner = tuner_for(if spec.baseline == "smoothing" { "mdss" } else { "mdcs" }, grid.clone());
            let rows: Vec<SizePowerRow> = monodecomp::sim::run_size_power_experiment(
                &truths,
                &spec.sigmas,
                &[spec.n],
                spec.reps,
                spec.r,
                spec.alpha,
                parse_hypothesis(&spec.hypothesis),
                &tuner,
                common.seed,
            )
            .map_err(|e| CliError::data(e))?;
            outputs.push(write_out(&common.out_dir, "table.tsv", &size_power_tsv(&rows))?);
            outputs.push(write_out(
                &common.out_dir,
                "diagnostics.json",
                &serde_json::to_string_pretty(&rows).unwrap(),
            )?);
        }
        "fit" => {
            let (baseline, strategy) = match (spec.baseline.as_str(), spec.strategy.as_str()) {
                ("cubic", "joint") => (Baseline::CubicSpline, Strategy::Mdcs(MdcsStrategy::JointJMu)),
                ("cubic", "fix-first") => (Baseline::CubicSpline, Strategy::Mdcs(MdcsStrategy::FixJThenMu)),
                ("smoothing", "joint") => (Baseline::SmoothingSpline, Strategy::Mdss(MdssStrategy::JointLambdaMu)),
                ("smoothing", "fix-first") => {
                    (Baseline::SmoothingSpline, Strategy::Mdss(MdssStrategy::FixLambdaThenMu))
                }
                ("smoothing", "shrinkage") => {
                    (Baseline::SmoothingSpline, Strategy::Mdss(MdssStrategy::ShrinkageFactor))
                }
                (b, s) => return Err(CliError::data(format!("unsupported baseline/strategy pair '{b}'/'{s}'"))),
            };
            let mut rows = Vec::new();
            let mut diags: Vec<(String, f64, Diagnostics)> = Vec::new();
            for (ci, truth) in truths.iter().enumerate() {
                for (si, &sigma) in spec.sigmas.iter().enumerate() {
                    let cfg = FitExperimentConfig {
                        truth: truth.clone(),
                        sigma,
                        n: spec.n,
                        reps: spec.reps,
                        n_grid: spec.n_grid,
                        baseline,
                        strategy,
                        grid: grid.clone(),
                        master_seed: common
                            .seed
                            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                            .wrapping_add((ci * 101 + si) as u64),
                    };
                    let (row, diag) = run_fit_experiment(&cfg).map_err(|e| CliError::data(e))?;
                    diags.push((row.label.clone(), sigma, diag));
                    rows.push(row);
                }
            }
            outputs.push(write_out(&common.out_dir, "table.tsv", &experiment_table_tsv(&rows))?);
            let diag_json: Vec<serde_json::Value> = diags
                .iter()
                .map(|(label, sigma, d)| serde_json::json!({"curve": label, "sigma": sigma, "diagnostics": d}))
                .collect();
            outputs.push(write_out(
                &common.out_dir,
                "diagnostics.json",
                &serde_json::to_string_pretty(&diag_json).unwrap(),
            )?);
        }
        m => return Err(CliError::data(format!("unknown mode '{m}' (use 'fit' or 'test')"))),
    }
    let manifest = RunManifest {
        command: "simulate".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: common.seed,
        config: serde_json::from_str(&text).unwrap_or(serde_json::Value::Null),
        inputs: vec![ManifestInput { path: spec_path.display().to_string(), sha256: sha256_file(spec_path)? }],
        outputs,
        notes: vec![],
    };
    write_manifest(&common.out_dir, "simulate_manifest.json", &manifest)
}

fn read_matrix_csv(path: &Path) -> Result<(Vec<f64>, Vec<String>, Vec<Vec<f64>>), CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::data(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| CliError::data(e))?.clone();
    if headers.len() < 2 {
        return Err(CliError::data("matrix CSV needs a pseudotime column plus at least one series"));
    }
    let names: Vec<String> = headers.iter().skip(1).map(|s| s.to_string()).collect();
    let mut time = Vec::new();
    let mut series = vec![Vec::new(); names.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::data(format!("row {}: {e}", row + 2)))?;
        for (i, raw) in record.iter().enumerate() {
            let v: f64 = raw
                .trim()
                .parse()
                .map_err(|_| CliError::data(format!("row {}: '{raw}' is not a number", row + 2)))?;
            if !v.is_finite() {
                return Err(CliError::data(format!("row {}: non-finite value", row + 2)));
            }
            if i == 0 {
                time.push(v);
            } else {
                series[i - 1].push(v);
            }
        }
        if record.len() != headers.len() {
            return Err(CliError::data(format!("row {}: expected {} fields", row + 2, headers.len())));
        }
    }
    if time.len() < 4 {
        return Err(CliError::data(format!("need at least 4 data rows, found {}", time.len())));
    }
    Ok((time, names, series))
}

fn read_annotations(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::data(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| CliError::data(e))?.clone();
    let si = headers
        .iter()
        .position(|h| h == "series")
        .ok_or_else(|| CliError::data("annotation CSV is missing column 'series'"))?;
    let ti = headers
        .iter()
        .position(|h| h == "term")
        .ok_or_else(|| CliError::data("annotation CSV is missing column 'term'"))?;
    let mut pairs = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::data(format!("row {}: {e}", row + 2)))?;
        let s = record.get(si).ok_or_else(|| CliError::data(format!("row {}: missing series", row + 2)))?;
        let t = record.get(ti).ok_or_else(|| CliError::data(format!("row {}: missing term", row + 2)))?;
        pairs.push((s.to_string(), t.to_string()));
    }
    Ok(pairs)
}

#[allow(clippy::too_many_arguments)]
fn cmd_screen(
    input: &Path,
    annotations: Option<&Path>,
    alpha: f64,
    r: usize,
    method: &str,
    grid_args: &GridArgs,
    common: &CommonArgs,
) -> Result<(), CliError> {
    if r == 0 {
        return Err(CliError::usage("--r must be at least 1"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CliError::usage("--alpha must lie in (0, 1)"));
    }
    setup_threads(common)?;
    let (time, names, series) = read_matrix_csv(input)?;
    let grid = screening_grid(grid_args, time.len())?;
    let mut notes = Vec::new();
    let mut pvals = Vec::new();
    let mut stats = Vec::new();
    for (i, s) in series.iter().enumerate() {
        let cfg = TestConfig {
            tuner: tuner_for(method, grid.clone()),
            r,
            alpha,
            hypothesis: Hypothesis::MonotoneNull,
            multiplier: Multiplier::Normal,
        };
        let seed = common.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64 + 1);
        let res = wild_bootstrap_test(&time, s, &cfg, seed)
            .map_err(|e| CliError::data(format!("series '{}': {e}", names[i])))?;
        pvals.push(res.p_value);
        stats.push(res.statistic);
    }
    let (rejected, cutoff) = bh_adjust(&pvals, alpha).map_err(|e| CliError::data(e))?;
    let mut tsv = String::from("series\tstatistic\tp_value\treject_bh\n");
    for i in 0..names.len() {
        tsv.push_str(&format!("{}\t{}\t{}\t{}\n", names[i], stats[i], pvals[i], rejected[i]));
    }
    let mut outputs = Vec::new();
    outputs.push(write_out(&common.out_dir, "screen.tsv", &tsv)?);
    let mut inputs = vec![ManifestInput { path: input.display().to_string(), sha256: sha256_file(input)? }];

    if let Some(ann_path) = annotations {
        let pairs = read_annotations(ann_path)?;
        inputs.push(ManifestInput { path: ann_path.display().to_string(), sha256: sha256_file(ann_path)? });
        if pairs.is_empty() {
            notes.push("annotation file is empty; enrichment skipped".to_string());
        } else {
            let mut terms: Vec<String> = pairs.iter().map(|(_, t)| t.clone()).collect();
            terms.sort();
            terms.dedup();
            let total = names.len();
            let hits_set: Vec<&String> =
                names.iter().zip(&rejected).filter(|(_, &rej)| rej).map(|(n, _)| n).collect();
            let mut rows = Vec::new();
            let mut term_ps = Vec::new();
            for term in &terms {
                let annotated: Vec<&String> =
                    pairs.iter().filter(|(_, t)| t == term).map(|(s, _)| s).collect();
                let m = names.iter().filter(|n| annotated.contains(n)).count();
                let k = hits_set.iter().filter(|n| annotated.contains(n)).count();
                let e = EnrichInput { reference: total, analyzed: hits_set.len(), annotated: m, hits: k };
                let p = hypergeom_enrich(&e).map_err(|err| CliError::data(err))?;
                term_ps.push(p);
                rows.push((term.clone(), total, hits_set.len(), m, k, p));
            }
            let (term_rej, _) = bh_adjust(&term_ps, alpha).map_err(|e| CliError::data(e))?;
            let mut etsv = String::from("term\tN\tn\tM\tk\tp_value\treject_bh\n");
            for (i, (term, nn, n, m, k, p)) in rows.iter().enumerate() {
                etsv.push_str(&format!("{term}\t{nn}\t{n}\t{m}\t{k}\t{p}\t{}\n", term_rej[i]));
            }
            outputs.push(write_out(&common.out_dir, "enrichment.tsv", &etsv)?);
        }
    }
    let manifest = RunManifest {
        command: "screen".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: common.seed,
        config: serde_json::json!({
            "input": input.display().to_string(),
            "annotations": annotations.map(|p| p.display().to_string()),
            "alpha": alpha,
            "R": r,
            "method": method,
            "grid": grid_echo(&grid),
            "bh_cutoff": cutoff,
        }),
        inputs,
        outputs,
        notes,
    };
    write_manifest(&common.out_dir, "screen_manifest.json", &manifest)
}

fn cmd_gen(
    curve: Option<&str>,
    kernel: Option<&str>,
    n: usize,
    sigma: f64,
    common: &CommonArgs,
) -> Result<(), CliError> {
    if n < 2 {
        return Err(CliError::usage("--n must be at least 2"));
    }
    if sigma < 0.0 {
        return Err(CliError::usage("--sigma must be nonnegative"));
    }
    setup_threads(common)?;
    let truth = match (curve, kernel) {
        (Some(label), None) => Truth::Named(NamedCurve::parse(label).map_err(|e| CliError::data(e))?),
        (None, Some(label)) => Truth::Gp(KernelSpec::parse(label).map_err(|e| CliError::data(e))?),
        (None, None) => return Err(CliError::usage("one of --curve or --kernel is required")),
        _ => return Err(CliError::usage("--curve and --kernel are mutually exclusive")),
    };
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    let (lo, hi) = truth.domain();
    let mut rng = ChaCha8Rng::seed_from_u64(common.seed);
    let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    x.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let truth_vals = match &truth {
        Truth::Named(c) => eval_curve(c, &x).map_err(|e| CliError::data(e))?,
        Truth::Gp(k) => gp_sample(k, &x, common.seed.wrapping_add(1)).map_err(|e| CliError::data(e))?,
    };
    let mut csv_text = String::from("x,y,truth\n");
    for (i, &xi) in x.iter().enumerate() {
        let noise: f64 = rng.sample(StandardNormal);
        let yi = truth_vals[i] + sigma * noise;
        csv_text.push_str(&format!("{xi},{yi},{}\n", truth_vals[i]));
    }
    let outputs = vec![write_out(&common.out_dir, "data.csv", &csv_text)?];
    let manifest = RunManifest {
        command: "gen".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: common.seed,
        config: serde_json::json!({
            "curve": curve,
            "kernel": kernel,
            "n": n,
            "sigma": sigma,
        }),
        inputs: vec![],
        outputs,
        notes: vec![],
    };
    write_manifest(&common.out_dir, "gen_manifest.json", &manifest)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Fit { input, method, strategy, grid, common } => cmd_fit(input, method, strategy, grid, common),
        Command::Test { input, hypothesis, r, alpha, method, grid, common } => {
            cmd_test(input, hypothesis, *r, *alpha, method, grid, common)
        }
        Command::Simulate { spec, common } => cmd_simulate(spec, common),
        Command::Screen { input, annotations, alpha, r, method, grid, common } => {
            cmd_screen(input, annotations.as_deref(), *alpha, *r, method, grid, common)
        }
        Command::Gen { curve, kernel, n, sigma, common } => {
            cmd_gen(curve.as_deref(), kernel.as_deref(), *n, *sigma, common)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("usage error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Data(m)) => {
            eprintln!("data error: {m}");
            ExitCode::from(3)
        }
    }
}
