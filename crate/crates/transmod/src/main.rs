use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use transmod::core_model::CoreModel;
use transmod::dataset::CensoredSample;
use transmod::empirical::{conditional_moments, gamma_check, FSpec};
use transmod::estimate::{one_step, z_estimate, EstimateError, EstimateOpts};
use transmod::fredholm::{build_system, solve_phi};
use transmod::io::{read_records, write_records, FitDocument};
use transmod::score::{
    nuisance_orthogonality_check, score, sigma_matrices, GFn, ScoreContext, ScoreOpts,
};
use transmod::simulate::{simulate_sample, Gamma0, SimConfig};
use transmod::step::StepFunction;

#[derive(Parser)]
#[command(name = "transmod", about = "Transformation-model estimation for censored data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a censored sample and write it as CSV plus metadata JSON.
    Simulate(CommonArgs),
    /// Z-estimate θ from a data CSV.
    Fit(CommonArgs),
    /// One-step correction of a preliminary θ estimate.
    Onestep(CommonArgs),
    /// Dump the Fredholm measures, κ(t) and the information bound.
    Bound(CommonArgs),
    /// Score, covariance and orthogonality diagnostics at a fixed θ.
    Diagnose(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Input data CSV (fit, onestep, diagnose).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output path; sibling files derive from it.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for Monte-Carlo style passes.
    #[arg(long)]
    jobs: Option<usize>,
    /// Overrides the solver tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Overrides the maximum number of Newton iterations.
    #[arg(long)]
    max_iter: Option<usize>,
}

struct CliError {
    code: u8,
    msg: String,
}

impl CliError {
    fn config(msg: impl Into<String>) -> Self {
        Self {
            code: 2,
            msg: msg.into(),
        }
    }
    fn numeric(msg: impl Into<String>) -> Self {
        Self {
            code: 3,
            msg: msg.into(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a, false),
        Command::Onestep(a) => cmd_fit(a, true),
        Command::Bound(a) => cmd_bound(a),
        Command::Diagnose(a) => cmd_diagnose(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}

fn setup_jobs(args: &CommonArgs) -> Result<(), CliError> {
    if let Some(jobs) = args.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::config(format!("--jobs: {e}")))?;
    }
    Ok(())
}

fn load_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::config(format!("serialization: {e}")))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn load_sample(args: &CommonArgs) -> Result<CensoredSample, CliError> {
    let data = args
        .data
        .as_ref()
        .ok_or_else(|| CliError::config("--data is required for this command"))?;
    let records = read_records(data).map_err(|e| CliError::config(e.to_string()))?;
    CensoredSample::from_records(records).map_err(|e| CliError::config(e.to_string()))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}{suffix}"))
}

fn cmd_simulate(args: &CommonArgs) -> Result<(), CliError> {
    setup_jobs(args)?;
    let mut cfg: SimConfig = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(|e| CliError::config(e.to_string()))?;
    let records = simulate_sample(&cfg).map_err(|e| CliError::config(e.to_string()))?;
    write_records(&args.out, &records).map_err(|e| CliError::config(e.to_string()))?;
    let censored = records.iter().filter(|r| r.delta == 0).count();
    let meta = json!({
        "n": cfg.n,
        "seed": cfg.seed,
        "censored": censored,
        "config": serde_json::to_value(&cfg).map_err(|e| CliError::config(e.to_string()))?,
    });
    write_json(&sibling(&args.out, ".meta.json"), &meta)
}

#[derive(Deserialize)]
struct FitConfig {
    model: CoreModel,
    #[serde(default)]
    theta_init: Option<Vec<f64>>,
    #[serde(default)]
    theta0_hat: Option<Vec<f64>>,
    #[serde(default)]
    tol: Option<f64>,
    #[serde(default)]
    max_iter: Option<usize>,
    #[serde(default)]
    trust_radius: Option<f64>,
}

fn cmd_fit(args: &CommonArgs, onestep: bool) -> Result<(), CliError> {
    setup_jobs(args)?;
    let cfg: FitConfig = load_config(&args.config)?;
    cfg.model
        .validate()
        .map_err(|e| CliError::config(e.to_string()))?;
    let config_echo: serde_json::Value = load_config(&args.config)?;
    let sample = load_sample(args)?;

    let mut opts = EstimateOpts::default();
    if let Some(t) = cfg.tol.or(args.tol) {
        opts.tol = t;
    }
    if let Some(m) = cfg.max_iter.or(args.max_iter) {
        opts.max_iter = m;
    }
    if let Some(r) = cfg.trust_radius {
        opts.trust_radius = r;
    }

    let d = cfg.model.dim_theta;
    let result = if onestep {
        let theta0 = cfg
            .theta0_hat
            .ok_or_else(|| CliError::config("onestep requires theta0_hat in the config"))?;
        if theta0.len() != d {
            return Err(CliError::config(format!(
                "theta0_hat has length {}, expected {d}",
                theta0.len()
            )));
        }
        one_step(&sample, &cfg.model, &theta0, &opts)
    } else {
        let init = cfg.theta_init.unwrap_or_else(|| vec![0.0; d]);
        if init.len() != d {
            return Err(CliError::config(format!(
                "theta_init has length {}, expected {d}",
                init.len()
            )));
        }
        z_estimate(&sample, &cfg.model, &init, &opts)
    };

    match result {
        Ok(fit) => {
            let doc = FitDocument::from_fit(&fit, Some(config_echo), args.seed);
            write_json(&args.out, &doc)
        }
        Err(err) => {
            // failure diagnostics still get written before exiting nonzero
            let doc = json!({
                "error": err.to_string(),
                "converged": false,
            });
            write_json(&args.out, &doc)?;
            let code = match &err {
                EstimateError::Score(_) => 3,
                EstimateError::MaxIter { .. } => 3,
                EstimateError::TrustRegionEscape { .. } => 3,
                EstimateError::StalledLineSearch(_) => 3,
            };
            Err(CliError {
                code,
                msg: err.to_string(),
            })
        }
    }
}

#[derive(Deserialize)]
struct BoundConfig {
    #[serde(flatten)]
    sim: SimConfig,
}

fn cmd_bound(args: &CommonArgs) -> Result<(), CliError> {
    setup_jobs(args)?;
    let cfg: BoundConfig = load_config(&args.config)?;
    let mut sim = cfg.sim;
    if let Some(seed) = args.seed {
        sim.seed = seed;
    }
    sim.validate().map_err(|e| CliError::config(e.to_string()))?;
    let records = simulate_sample(&sim).map_err(|e| CliError::config(e.to_string()))?;
    let sample =
        CensoredSample::from_records(records).map_err(|e| CliError::config(e.to_string()))?;

    let gamma: Vec<f64> = sample
        .event_times
        .iter()
        .map(|&t| sim.gamma0.forward(t))
        .collect();
    let fx = conditional_moments(&sample, &sim.model, &gamma, &sim.theta0, &FSpec::LDot)
        .map_err(|e| CliError::numeric(e.to_string()))?;
    let system = build_system(&fx).map_err(|e| CliError::numeric(e.to_string()))?;
    let sol = solve_phi(&system, &fx).map_err(|e| CliError::numeric(e.to_string()))?;
    let gc = gamma_check(&sample, &sim.model, &gamma, &sim.theta0)
        .map_err(|e| CliError::numeric(e.to_string()))?;
    let grid = sample.event_times.clone();
    let ctx = ScoreContext {
        theta: sim.theta0.clone(),
        gamma: StepFunction::new(grid.clone(), gamma, 0.0).expect("grid length"),
        gamma_check: StepFunction::new(grid, gc, 0.0).expect("grid length"),
        functionals: fx,
        system,
        phi: sol,
        fspec: FSpec::LDot,
    };
    let (_, _, sigma0) = sigma_matrices(&ctx);

    // measure dump
    let fx = &ctx.functionals;
    let sys = &ctx.system;
    let kappa_curve = sys.kappa_curve();
    let mut csv = String::from("t,dN,C,B,c,b,kappa,psi1_from0,psi0_to_end\n");
    let (mut cc, mut cb) = (0.0, 0.0);
    for k in 0..fx.m() {
        cc += fx.dc[k];
        cb += fx.db[k];
        let _ = writeln!(
            csv,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            fx.grid[k],
            fx.dn[k],
            cc,
            cb,
            sys.c[k],
            sys.b[k],
            kappa_curve[k],
            sys.psi1_from0[k],
            sys.psi0_to_end[k],
        );
    }
    std::fs::write(sibling(&args.out, ".measures.csv"), csv)
        .map_err(|e| CliError::config(e.to_string()))?;

    let d = sim.model.dim_theta;
    let sigma0_rows: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| sigma0[(i, j)]).collect())
        .collect();
    let bound: Option<Vec<Vec<f64>>> = sigma0.clone().lu().try_inverse().and_then(|inv| {
        if inv.iter().all(|v| v.is_finite()) && sigma0[(0, 0)] > 1e-12 {
            Some(
                (0..d)
                    .map(|i| (0..d).map(|j| inv[(i, j)]).collect())
                    .collect(),
            )
        } else {
            None
        }
    });
    let doc = json!({
        "kappa": sys.kappa,
        "sigma0": sigma0_rows,
        "information_bound": bound,
        "n": sim.n,
        "seed": sim.seed,
    });
    write_json(&args.out, &doc)
}

#[derive(Deserialize)]
struct DiagnoseConfig {
    model: CoreModel,
    theta: Vec<f64>,
    /// True transformation for the orthogonality report; omitted means the
    /// report is skipped.
    #[serde(default)]
    gamma0: Option<Gamma0>,
}

fn cmd_diagnose(args: &CommonArgs) -> Result<(), CliError> {
    setup_jobs(args)?;
    let cfg: DiagnoseConfig = load_config(&args.config)?;
    cfg.model
        .validate()
        .map_err(|e| CliError::config(e.to_string()))?;
    if cfg.theta.len() != cfg.model.dim_theta {
        return Err(CliError::config(format!(
            "theta has length {}, expected {}",
            cfg.theta.len(),
            cfg.model.dim_theta
        )));
    }
    let sample = load_sample(args)?;
    let (ctx, out) = score(&sample, &cfg.model, &cfg.theta, &ScoreOpts::default())
        .map_err(|e| CliError::numeric(e.to_string()))?;

    let df = ctx.functionals.df;
    let rows = |m: &nalgebra::DMatrix<f64>| -> Vec<Vec<f64>> {
        (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
            .collect()
    };
    let orthogonality = match &cfg.gamma0 {
        Some(g0) => {
            let median = median_event_time(&sample);
            let gs: Vec<(String, GFn)> = vec![
                ("const".into(), Arc::new(|_| 1.0)),
                (
                    "indicator_below_median".into(),
                    Arc::new(move |t| if t <= median { 1.0 } else { 0.0 }),
                ),
            ];
            let g0 = g0.clone();
            let report = nuisance_orthogonality_check(
                &sample,
                &cfg.model,
                &cfg.theta,
                &move |t| g0.forward(t),
                &gs,
                &FSpec::LDot,
            )
            .map_err(|e| CliError::numeric(e.to_string()))?;
            Some(report)
        }
        None => None,
    };

    let doc = json!({
        "theta": cfg.theta,
        "u": out.u,
        "score_norm": out.u.iter().map(|x| x.abs()).fold(0.0_f64, f64::max),
        "sigma1": rows(&out.sigma1),
        "sigma2": rows(&out.sigma2),
        "sigma0": rows(&out.sigma0),
        "v": rows(&out.v),
        "v_condition": out.v_condition,
        "fredholm_residual": ctx.phi.residual,
        "kappa": ctx.system.kappa,
        "f_dim": df,
        "orthogonality": orthogonality,
    });
    write_json(&args.out, &doc)
}

fn median_event_time(sample: &CensoredSample) -> f64 {
    let times = &sample.event_times;
    times[times.len() / 2]
}
