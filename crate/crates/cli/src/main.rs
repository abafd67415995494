use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dspgd::experiment::{
    cmd_generate, cmd_refsolve, cmd_run, cmd_sweep_eps, cmd_sweep_eta, cmd_verify, ExperimentConfig,
    ProblemSource, ReferenceKind,
};
use dspgd::format::fmt_float;
use dspgd::{Error, GenSpec};

#[derive(Parser, Debug)]
#[command(name = "dspgd", version, about = "Dual space preconditioned gradient descent experiments")]
struct Cli {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Treat step sizes above the admissible bound as errors.
    #[arg(long, global = true)]
    strict_eta: bool,
    /// Generator seed (overrides `[problem].seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sweeps (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic instance file.
    Generate {
        /// Number of samples.
        #[arg(long)]
        n: Option<usize>,
        /// Input dimension.
        #[arg(long)]
        d: Option<usize>,
        /// Output dimension.
        #[arg(long)]
        k: Option<usize>,
        /// Label noise standard deviation.
        #[arg(long)]
        noise: Option<f64>,
        /// Destination file (default: <out>/instance.txt).
        path: Option<PathBuf>,
    },
    /// Run DSPGD once and record the trajectory.
    Run,
    /// Sweep the smoothing parameter eps.
    SweepEps,
    /// Sweep the step size eta, with an isotropic control.
    SweepEta,
    /// Run the identity and bound checks.
    Verify,
    /// Solve the minimum-distance interpolation references.
    Refsolve {
        /// Comma-separated subset of l1,l2,linf.
        #[arg(long, value_delimiter = ',')]
        norm: Vec<String>,
    },
}

enum Failure {
    Usage(String),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_)
            | Error::InvalidParameter(_)
            | Error::InvalidDimensions(_)
            | Error::StepSizeViolation { .. }
            | Error::Format(_)
            | Error::Unsupported(_) => Failure::Usage(e.to_string()),
            other => Failure::Check(other.to_string()),
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if cli.strict_eta {
        cfg.run.strict_eta = true;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> &Path {
    &cfg.output_dir
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let mut cfg = load_config(cli)?;
    match &cli.command {
        Command::Generate { n, d, k, noise, path } => {
            let mut spec = match &cfg.problem {
                ProblemSource::Generate(g) => *g,
                ProblemSource::File { .. } => GenSpec::new(5, 20, 1, cli.seed.unwrap_or(1)),
            };
            spec.n = n.unwrap_or(spec.n);
            spec.d = d.unwrap_or(spec.d);
            spec.k = k.unwrap_or(spec.k);
            spec.noise = noise.unwrap_or(spec.noise);
            let target = path.clone().unwrap_or_else(|| out_dir(&cfg).join("instance.txt"));
            let p = cmd_generate(&spec, &target)?;
            println!(
                "wrote {} (n={} d={} k={} seed={}, checksum {})",
                target.display(),
                p.n(),
                p.d(),
                p.k(),
                spec.seed,
                dspgd::format::instance_checksum(&p)
            );
        }
        Command::Run => {
            let m = cmd_run(&cfg, out_dir(&cfg))?;
            let r = &m.runs[0];
            println!(
                "{} eps={} eta={}: {} iterations, converged={}, final loss {:.3e}, ||XW-Y|| {:.3e}",
                r.preconditioner, r.eps, r.eta, r.iters, r.converged, r.final_loss, r.interpolation_residual
            );
            for (name, v) in [("l1", r.dist_l1), ("l2", r.dist_l2), ("linf", r.dist_linf), ("gd", r.dist_gd)] {
                if let Some(v) = v {
                    println!("  distance to {name} reference: {}", fmt_float(v));
                }
            }
            if !r.converged {
                return Err(Failure::Check("run did not converge".into()));
            }
        }
        Command::SweepEps => {
            let m = cmd_sweep_eps(&cfg, out_dir(&cfg), cli.jobs)?;
            report_sweep(&m.runs, out_dir(&cfg), "sweep_eps.csv");
        }
        Command::SweepEta => {
            let m = cmd_sweep_eta(&cfg, out_dir(&cfg), cli.jobs)?;
            report_sweep(&m.runs, out_dir(&cfg), "sweep_eta.csv");
        }
        Command::Verify => {
            let (m, ok) = cmd_verify(&cfg, out_dir(&cfg))?;
            for c in &m.checks {
                let status = match (c.holds, c.gating) {
                    (true, _) => "PASS",
                    (false, true) => "FAIL",
                    (false, false) => "NOTE",
                };
                println!("{status} {}: {}", c.check, c.detail);
            }
            let failed = m.checks.iter().filter(|c| !c.holds && c.gating).count();
            println!("{} checks, {failed} failed; wrote {}", m.checks.len(), out_dir(&cfg).join("verify.csv").display());
            if !ok {
                return Err(Failure::Check(format!("{failed} checks failed")));
            }
        }
        Command::Refsolve { norm } => {
            if !norm.is_empty() {
                cfg.references = norm
                    .iter()
                    .map(|s| s.parse::<ReferenceKind>())
                    .collect::<Result<_, _>>()?;
            }
            let (_, sols) = cmd_refsolve(&cfg, out_dir(&cfg))?;
            for s in &sols {
                println!("{}: objective {}", s.p_norm.name(), fmt_float(s.objective));
            }
            println!("wrote {}", out_dir(&cfg).join("references.json").display());
        }
    }
    Ok(())
}

fn report_sweep(runs: &[dspgd::experiment::RunSummary], out: &Path, csv: &str) {
    for r in runs {
        println!(
            "{}: {} iterations, converged={}, dist_l2={}",
            r.label,
            r.iters,
            r.converged,
            r.dist_l2.map_or("nan".into(), |v| format!("{v:.6e}"))
        );
    }
    println!("wrote {}", out.join(csv).display());
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
