//! Experiment configuration, parameter sweeps and the verification suite.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bregman::{adjusted_bregman_div, lemma3_gap, telescoped_residual, three_point_residual, Convention};
use crate::error::{Error, Result};
use crate::format::{
    fmt_float, instance_checksum, read_instance, sweep_csv_string, write_instance, SweepRow,
};
use crate::linalg::{gaussian, inner};
use crate::loss::{dual_at_gradient, loss_gradient, loss_value, SeparableLoss};
use crate::optimizer::{
    auxiliary_series, dspgd_run, fixed_point_check, gd_run, step_consistency, step_identity_reports,
    RunConfig, Trajectory,
};
use crate::plot::sweep_svg;
use crate::precond::{Preconditioner, PreconditionerKind};
use crate::problem::{generate, interpolation_residual, GenSpec, ProblemInstance};
use crate::reference::{min_l2_solution, min_lp_solution, Certificate, PNorm, ReferenceSolution};
use crate::verify::{
    check_gradient_decay, check_lemma5_contraction, check_proximity_bounds, check_rate_envelope,
    contraction_factor, descent_lemma_check, factor_grid_argmin, hessian_sandwich_check, optimal_eta,
    BoundConstants, BoundReport, ProximityConfig,
};
use crate::Mat;

pub const DEFAULT_EPS_GRID: [f64; 7] = [0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0];
pub const DEFAULT_ETA_GRID: [f64; 5] = [0.005, 0.01, 0.02, 0.05, 0.1];
pub const DEFAULT_ETA_REF: f64 = 0.005;

/// Interpolation residual above which a sweep row is marked non-converged.
pub const ROW_RESIDUAL_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProblemSource {
    Generate(GenSpec),
    File { path: PathBuf },
}

impl Default for ProblemSource {
    fn default() -> Self {
        ProblemSource::Generate(GenSpec::new(5, 20, 1, 1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrecondConfig {
    pub name: PreconditionerKind,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_eps() -> f64 {
    0.5
}

impl Default for PrecondConfig {
    fn default() -> Self {
        PrecondConfig {
            name: PreconditionerKind::AdamLike,
            eps: default_eps(),
        }
    }
}

impl PrecondConfig {
    pub fn build(&self) -> Result<Preconditioner> {
        Preconditioner::new(self.name, self.eps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossName {
    #[default]
    Squared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    #[serde(default)]
    pub kind: LossName,
}

impl LossConfig {
    pub fn build(&self) -> SeparableLoss {
        match self.kind {
            LossName::Squared => SeparableLoss::squared(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Eps,
    Eta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParam,
    pub values: Vec<f64>,
    /// Reference step size whose limit is `W_ref` (step-size sweeps).
    #[serde(default)]
    pub eta_ref: Option<f64>,
    /// Isotropic preconditioner for the step-size control sweep; defaults
    /// to normalized GD at the configured eps.
    #[serde(default)]
    pub control: Option<PreconditionerKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    L1,
    L2,
    Linf,
    Gd,
}

impl FromStr for ReferenceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(ReferenceKind::L1),
            "l2" => Ok(ReferenceKind::L2),
            "linf" => Ok(ReferenceKind::Linf),
            "gd" => Ok(ReferenceKind::Gd),
            _ => Err(Error::Config(format!("unknown reference {s:?} (expected l1, l2, linf or gd)"))),
        }
    }
}

fn default_references() -> Vec<ReferenceKind> {
    vec![ReferenceKind::L1, ReferenceKind::L2, ReferenceKind::Linf, ReferenceKind::Gd]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub problem: ProblemSource,
    #[serde(default)]
    pub preconditioner: PrecondConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default = "default_references")]
    pub references: Vec<ReferenceKind>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            problem: ProblemSource::default(),
            preconditioner: PrecondConfig::default(),
            loss: LossConfig::default(),
            run: RunConfig::default(),
            sweep: None,
            references: default_references(),
            output_dir: default_output_dir(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        // instance paths are relative to the config file
        if let ProblemSource::File { path: p } = &mut cfg.problem {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| Error::Config(e.to_string());
        match &self.problem {
            ProblemSource::Generate(g) => g.validate().map_err(cfg_err)?,
            ProblemSource::File { path } => {
                if !path.exists() {
                    return Err(Error::Config(format!("instance file {} does not exist", path.display())));
                }
            }
        }
        self.preconditioner.build().map_err(cfg_err)?;
        self.run.validate().map_err(cfg_err)?;
        if let Some(s) = &self.sweep {
            validate_grid(&s.values)?;
            if let Some(e) = s.eta_ref {
                if !(e > 0.0 && e.is_finite()) {
                    return Err(Error::Config(format!("eta_ref must be positive, got {e}")));
                }
            }
        }
        Ok(())
    }

    /// Overrides the generator seed; no effect for file-backed instances.
    pub fn with_seed(mut self, seed: u64) -> Self {
        if let ProblemSource::Generate(g) = &mut self.problem {
            g.seed = seed;
        }
        self
    }

    pub fn build_problem(&self) -> Result<ProblemInstance> {
        match &self.problem {
            ProblemSource::Generate(g) => generate(g),
            ProblemSource::File { path } => read_instance(path),
        }
    }

    pub fn wants(&self, r: ReferenceKind) -> bool {
        self.references.contains(&r)
    }
}

pub fn validate_grid(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Config("sweep values must not be empty".into()));
    }
    if values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::Config("sweep values must be positive".into()));
    }
    if values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("sweep values must be strictly increasing".into()));
    }
    Ok(())
}

/// Interpolating references that do not depend on the step size.
#[derive(Debug, Clone, Default)]
pub struct ReferenceSet {
    pub l1: Option<Mat>,
    pub l2: Option<Mat>,
    pub linf: Option<Mat>,
}

impl ReferenceSet {
    pub fn compute(p: &ProblemInstance, kinds: &[ReferenceKind]) -> Result<Self> {
        let mut out = ReferenceSet::default();
        if kinds.contains(&ReferenceKind::L2) {
            out.l2 = Some(min_l2_solution(p)?.w_star);
        }
        if kinds.contains(&ReferenceKind::L1) {
            out.l1 = Some(min_lp_solution(p, PNorm::L1)?.w_star);
        }
        if kinds.contains(&ReferenceKind::Linf) {
            if p.k() == 1 {
                out.linf = Some(min_lp_solution(p, PNorm::Linf)?.w_star);
            } else {
                log::warn!("linf reference needs k = 1; skipped for k = {}", p.k());
            }
        }
        Ok(out)
    }

    fn dist(r: &Option<Mat>, w: &Mat) -> f64 {
        r.as_ref().map_or(f64::NAN, |r| (w - r).norm())
    }
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn row_from_run(
    p: &ProblemInstance,
    loss: &SeparableLoss,
    param: &str,
    value: f64,
    run: Result<Trajectory>,
    refs: &ReferenceSet,
    gd: Option<&Mat>,
) -> Result<(SweepRow, Option<Mat>)> {
    match run {
        Ok(t) => {
            let w = &t.final_w;
            let converged = t.converged && interpolation_residual(p, w)? <= ROW_RESIDUAL_TOL;
            let row = SweepRow {
                param: param.into(),
                value,
                dist_l1: ReferenceSet::dist(&refs.l1, w),
                dist_l2: ReferenceSet::dist(&refs.l2, w),
                dist_linf: ReferenceSet::dist(&refs.linf, w),
                dist_gd: gd.map_or(f64::NAN, |g| (w - g).norm()),
                iters: t.iters_used,
                final_loss: loss_value(p, loss, w)?,
                converged,
                reference: None,
            };
            Ok((row, Some(t.final_w)))
        }
        Err(Error::Divergence { iteration, reason }) => {
            log::warn!("{param} = {value}: diverged at iteration {iteration} ({reason})");
            let row = SweepRow {
                param: param.into(),
                value,
                dist_l1: f64::NAN,
                dist_l2: f64::NAN,
                dist_linf: f64::NAN,
                dist_gd: f64::NAN,
                iters: iteration,
                final_loss: f64::NAN,
                converged: false,
                reference: None,
            };
            Ok((row, None))
        }
        Err(e) => Err(e),
    }
}

fn sweep_run_config(run: &RunConfig, p: &ProblemInstance) -> RunConfig {
    // only the limit point is needed
    RunConfig {
        record_every: run.record_every.max(RunConfig::default_record_every(p)).max(1000),
        ..run.clone()
    }
}

/// DSPGD limit versus references across smoothing parameters, at fixed
/// `run.eta`.
pub fn eps_sweep(
    p: &ProblemInstance,
    loss: &SeparableLoss,
    kind: PreconditionerKind,
    eps_values: &[f64],
    run: &RunConfig,
    kinds: &[ReferenceKind],
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    validate_grid(eps_values)?;
    let refs = ReferenceSet::compute(p, kinds)?;
    let rc = sweep_run_config(run, p);
    let gd = if kinds.contains(&ReferenceKind::Gd) {
        Some(gd_run(p, loss, &rc)?.final_w)
    } else {
        None
    };
    let rows: Vec<Result<SweepRow>> = with_pool(jobs, || {
        eps_values
            .par_iter()
            .map(|&eps| {
                let k = Preconditioner::new(kind, eps)?;
                let run = dspgd_run(p, loss, &k, &rc);
                Ok(row_from_run(p, loss, "eps", eps, run, &refs, gd.as_ref())?.0)
            })
            .collect()
    })?;
    rows.into_iter().collect()
}

/// DSPGD limit across step sizes. The run at `eta_ref` fixes `W_ref`; each
/// row stores `||W_inf(eta) - W_ref||` and `||W_ref||`, and the GD baseline
/// is rerun at every step size.
pub fn eta_sweep(
    p: &ProblemInstance,
    loss: &SeparableLoss,
    k: &Preconditioner,
    eta_values: &[f64],
    eta_ref: f64,
    run: &RunConfig,
    kinds: &[ReferenceKind],
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    validate_grid(eta_values)?;
    let refs = ReferenceSet::compute(p, kinds)?;
    let rc = sweep_run_config(run, p);
    let reference = dspgd_run(p, loss, k, &RunConfig { eta: eta_ref, ..rc.clone() })?;
    if !reference.converged {
        return Err(Error::NotConverged {
            iterations: reference.iters_used,
        });
    }
    let w_ref = reference.final_w;
    let ref_norm = w_ref.norm();
    let want_gd = kinds.contains(&ReferenceKind::Gd);
    let rows: Vec<Result<SweepRow>> = with_pool(jobs, || {
        eta_values
            .par_iter()
            .map(|&eta| {
                let cfg = RunConfig { eta, ..rc.clone() };
                let gd = if want_gd {
                    match gd_run(p, loss, &cfg) {
                        Ok(t) if t.converged => Some(t.final_w),
                        Ok(_) | Err(Error::Divergence { .. }) => None,
                        Err(e) => return Err(e),
                    }
                } else {
                    None
                };
                let (mut row, w) = row_from_run(p, loss, "eta", eta, dspgd_run(p, loss, k, &cfg), &refs, gd.as_ref())?;
                let d = w.map_or(f64::NAN, |w| (&w - &w_ref).norm());
                row.reference = Some((d, ref_norm));
                Ok(row)
            })
            .collect()
    })?;
    rows.into_iter().collect()
}

/// Outcome of one named check in the verification suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub check: String,
    pub holds: bool,
    pub worst_margin: f64,
    pub detail: String,
    /// Informational checks are reported but do not decide the exit status.
    #[serde(default = "gating_default")]
    pub gating: bool,
}

fn gating_default() -> bool {
    true
}

impl CheckResult {
    fn tolerance(check: &str, worst: f64, tol: f64, detail: impl Into<String>) -> Self {
        CheckResult {
            check: check.into(),
            holds: worst <= tol,
            worst_margin: tol - worst,
            detail: detail.into(),
            gating: true,
        }
    }

    fn from_report(check: &str, r: &BoundReport) -> Self {
        let mut detail = r.summary();
        if !r.variants.is_empty() {
            let v: Vec<String> = r
                .variants
                .iter()
                .map(|v| format!("{}={}", v.name, if v.holds { "ok" } else { "fails" }))
                .collect();
            detail.push_str(&format!("; variants {}", v.join(" ")));
        }
        if let Some(n) = &r.note {
            detail.push_str(&format!("; {n}"));
        }
        CheckResult {
            check: check.into(),
            holds: r.holds,
            worst_margin: r.worst_margin,
            detail,
            gating: true,
        }
    }

    fn informational(mut self) -> Self {
        self.gating = false;
        self.detail.push_str("; informational");
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOutcome {
    pub checks: Vec<CheckResult>,
}

impl VerifyOutcome {
    pub fn all_hold(&self) -> bool {
        self.checks.iter().all(|c| c.holds || !c.gating)
    }

    pub fn csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["check", "holds", "gating", "worst_margin", "detail"])?;
        for c in &self.checks {
            w.write_record([c.check.as_str(), &c.holds.to_string(), &c.gating.to_string(), &fmt_float(c.worst_margin), &c.detail])?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Format(e.to_string()))?)
            .map_err(|e| Error::Format(e.to_string()))
    }
}

const SUITE_SEED: u64 = 0x5eed;
const SUITE_SAMPLES: usize = 200;

/// Runs the identity and bound checks for one instance and preconditioner.
pub fn verify_suite(
    p: &ProblemInstance,
    loss: &SeparableLoss,
    k: &Preconditioner,
    run: &RunConfig,
) -> Result<VerifyOutcome> {
    let mut checks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(SUITE_SEED);
    let (d, kk) = (p.d(), p.k());
    let spectrum = p.spectrum();
    let eta_max = k.eta_max(p.n(), &spectrum);
    let l2 = min_l2_solution(p)?;
    let interp = l2.w_star.clone();

    // one-step identity along a short run, several probes
    let short_cfg = RunConfig {
        max_iters: run.max_iters.min(200),
        record_every: 1,
        ..run.clone()
    };
    let short = dspgd_run(p, loss, k, &short_cfg)?;
    let mut probes = vec![gaussian(&mut rng, d, kk), interp.clone(), p.w0().clone()];
    if let Some(w) = p.w_true() {
        probes.push(w.clone());
    }
    let (mut worst_std, mut worst_first) = (0.0_f64, 0.0_f64);
    for probe in &probes {
        for r in step_identity_reports(&short, p, loss, k, probe)? {
            worst_std = worst_std.max(r.standard.rel_residual);
            worst_first = worst_first.max(r.first_argument.rel_residual);
        }
    }
    let conv = if worst_std <= worst_first { Convention::Standard } else { Convention::FirstArgument };
    checks.push(CheckResult::tolerance(
        "fundamental_identity",
        worst_std,
        1e-9,
        format!(
            "{} steps x {} probes; standard-order worst {worst_std:.3e}, first-argument-order worst {worst_first:.3e}; vanishing order {conv:?}",
            short.iters_used,
            probes.len()
        ),
    ));
    let ws: Vec<Mat> = short.consecutive_iterates()?.into_iter().cloned().collect();
    let tele = telescoped_residual(p, loss, k, &interp, &ws, run.eta)?;
    checks.push(CheckResult::tolerance(
        "telescoped_identity",
        tele.rel_residual,
        1e-8,
        format!("lhs {:.6e}, rhs {:.6e}", tele.lhs, tele.rhs),
    ));

    let (mut worst3, mut worst_fy, mut min_div) = (0.0_f64, 0.0_f64, f64::INFINITY);
    for _ in 0..SUITE_SAMPLES {
        let (a, b, c) = (gaussian(&mut rng, d, kk), gaussian(&mut rng, d, kk), gaussian(&mut rng, d, kk));
        worst3 = worst3.max(three_point_residual(p, loss, &a, &b, &c)?.rel_residual);
        let g = loss_gradient(p, loss, &b)?;
        let lb = loss_value(p, loss, &b)?;
        let fy = (dual_at_gradient(p, loss, &b)? + lb - inner(&b, &g)).abs() / (1.0 + lb.abs());
        worst_fy = worst_fy.max(fy);
        min_div = min_div.min(adjusted_bregman_div(p, loss, &a, &b)?);
    }
    checks.push(CheckResult::tolerance("three_point_identity", worst3, 1e-10, format!("{SUITE_SAMPLES} random triples")));
    checks.push(CheckResult::tolerance("fenchel_young", worst_fy, 1e-9, format!("{SUITE_SAMPLES} random points")));
    checks.push(CheckResult::tolerance(
        "adjusted_divergence_nonnegative",
        -min_div,
        1e-12,
        format!("smallest value {min_div:.6e}"),
    ));

    let mut min_gap = f64::INFINITY;
    for _ in 0..100 {
        let (a, b) = (gaussian(&mut rng, d, kk), gaussian(&mut rng, d, kk));
        min_gap = min_gap.min(lemma3_gap(p, loss, k, &a, &b, 0.5 * eta_max)?);
    }
    checks.push(CheckResult::tolerance(
        "lemma3_gap",
        -min_gap,
        1e-12,
        format!("100 pairs at eta = eta_max/2 = {:.6e}; smallest gap {min_gap:.6e}", 0.5 * eta_max),
    ));

    // full run at the configured step
    let full_cfg = RunConfig {
        record_every: 1,
        ..run.clone()
    };
    let traj = dspgd_run(p, loss, k, &full_cfg)?;
    let gd = gd_run(p, loss, &full_cfg)?;
    let residual = if traj.converged { fixed_point_check(&traj, p)? } else { f64::INFINITY };
    checks.push(CheckResult::tolerance(
        "convergence",
        residual,
        10.0 * run.tol_interp,
        format!("{} iterations, converged = {}, ||XW - Y|| = {residual:.3e}", traj.iters_used, traj.converged),
    ));
    checks.push(CheckResult::tolerance(
        "step_consistency",
        step_consistency(&traj, p, loss, k)?,
        1e-14,
        "recorded transitions recomputed from stored weights",
    ));
    let aux = auxiliary_series(&traj, p, loss, k)?;
    let aux_worst = aux
        .gap
        .iter()
        .zip(&aux.bound)
        .map(|(g, b)| g - b)
        .fold(f64::NEG_INFINITY, f64::max);
    checks.push(CheckResult {
        check: "auxiliary_iterate_bound".into(),
        holds: aux.bound_holds(),
        worst_margin: -aux_worst,
        detail: "||W^_i - W_i|| <= eta (L_K + 1) ||grad L(W_{i-1})||".into(),
        gating: true,
    });
    let k_final = *traj.k_value_series.last().expect("nonempty");
    let k_sum = *traj.k_partial_sums().last().expect("nonempty");
    checks.push(CheckResult::tolerance(
        "k_value_decay",
        k_final,
        1e-10,
        format!("final K(grad L) = {k_final:.3e}, partial sum {k_sum:.6e}"),
    ));
    let mut worst_run_identity = 0.0_f64;
    for r in step_identity_reports(&traj, p, loss, k, &interp)? {
        worst_run_identity = worst_run_identity.max(r.standard.rel_residual);
    }
    checks.push(CheckResult::tolerance(
        "fundamental_identity_full_run",
        worst_run_identity,
        1e-9,
        format!("{} steps, interpolating probe", traj.iters_used),
    ));
    let gd_bias = (&gd.final_w - &interp).norm() / (1.0 + interp.norm());
    checks.push(CheckResult::tolerance("gd_limit_is_min_l2", gd_bias, 1e-6, format!("{} GD iterations", gd.iters_used)));

    if k.kind() == PreconditionerKind::Quadratic {
        let same = traj.iterates == gd.iterates;
        checks.push(CheckResult {
            check: "dspgd_equals_gd".into(),
            holds: same,
            worst_margin: if same { 0.0 } else { -(&traj.final_w - &gd.final_w).norm() },
            detail: "the quadratic reference makes DSPGD plain gradient descent".into(),
            gating: true,
        });
    }

    let constants = BoundConstants::new(p, loss, k)?;
    if k.is_isotropic() {
        let bias = (&traj.final_w - &interp).norm() / (1.0 + interp.norm());
        checks.push(CheckResult::tolerance("implicit_bias_min_l2", bias, 1e-6, "isotropic preconditioner"));
        let opt = optimal_eta(&constants);
        let (best, h) = factor_grid_argmin(&constants, 2.0 * opt.eta_star, 1000);
        checks.push(CheckResult::tolerance(
            "optimal_eta_grid_argmin",
            (best - opt.eta_star).abs(),
            h,
            format!("eta* = {:.6e}, grid argmin {best:.6e}", opt.eta_star),
        ));
        let gap = (contraction_factor(&constants, opt.eta_star) - opt.contraction).abs();
        checks.push(CheckResult::tolerance("optimal_eta_contraction", gap, 1e-12, format!("contraction {:.12}", opt.contraction)));
        let star_cfg = RunConfig {
            eta: opt.eta_star,
            record_every: 100,
            ..run.clone()
        };
        let star = dspgd_run(p, loss, k, &star_cfg)?;
        checks.push(CheckResult::from_report("rate_envelope", &check_rate_envelope(&star, &constants)?));
    }

    if traj.converged && gd.converged {
        let eta = run.eta;
        let rule = ProximityConfig::with_rule_alpha(eta, constants)?;
        let cert = ProximityConfig::with_certified_alpha(eta, constants)?;
        let prox = check_proximity_bounds(&traj, &gd, &rule, p, loss)?;
        checks.push(CheckResult::from_report("proximity_a", &prox.bound_a));
        checks.push(CheckResult::from_report("proximity_b", &prox.bound_b));
        let prox_c = check_proximity_bounds(&traj, &gd, &cert, p, loss)?;
        checks.push(CheckResult::from_report("proximity_a_certified_alpha", &prox_c.bound_a));
        checks.push(CheckResult::from_report("proximity_b_certified_alpha", &prox_c.bound_b));
        let decay = check_gradient_decay(&traj, &gd, &cert, p, loss)?;
        checks.push(CheckResult::from_report("gradient_decay_dspgd", &decay.dspgd));
        checks.push(CheckResult::from_report("gradient_decay_gd", &decay.gd));
        let l5 = check_lemma5_contraction(&traj, p, loss, k, &interp, cert.alpha)?;
        checks.push(CheckResult::from_report("lemma5_contraction", &l5.contraction));
        checks.push(CheckResult::from_report("lemma5_stated_hypothesis", &l5.stated_hypothesis).informational());
        checks.push(CheckResult::from_report("lemma5_used_hypothesis", &l5.used_hypothesis).informational());
    }

    checks.push(CheckResult::from_report("descent_lemma", &descent_lemma_check(p, loss, 100, SUITE_SEED)?));
    checks.push(CheckResult::from_report("hessian_sandwich", &hessian_sandwich_check(p, loss, 100, SUITE_SEED)?));

    let kkt = interpolation_residual(p, &l2.w_star)?;
    checks.push(CheckResult::tolerance("min_l2_kkt", kkt, 1e-10, "||X W* - Y||"));
    if p.k() == 1 {
        let l1 = min_lp_solution(p, PNorm::L1)?;
        let linf = min_lp_solution(p, PNorm::Linf)?;
        let sep = [(&l1.w_star, &l2.w_star), (&l1.w_star, &linf.w_star), (&l2.w_star, &linf.w_star)]
            .iter()
            .map(|(a, b)| (*a - *b).norm())
            .fold(f64::INFINITY, f64::min);
        checks.push(CheckResult {
            check: "references_distinct".into(),
            holds: sep > 1e-6,
            worst_margin: sep - 1e-6,
            detail: format!("smallest pairwise distance {sep:.6e}"),
            gating: true,
        });
    }
    Ok(VerifyOutcome { checks })
}

/// Per-run summary recorded in manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub preconditioner: String,
    pub eps: f64,
    pub eta: f64,
    pub iters: usize,
    pub converged: bool,
    pub final_loss: f64,
    pub interpolation_residual: f64,
    pub dist_l1: Option<f64>,
    pub dist_l2: Option<f64>,
    pub dist_linf: Option<f64>,
    pub dist_gd: Option<f64>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl RunSummary {
    fn from_row(label: &str, preconditioner: &str, eps: f64, eta: f64, r: &SweepRow) -> Self {
        RunSummary {
            label: label.into(),
            preconditioner: preconditioner.into(),
            eps,
            eta,
            iters: r.iters,
            converged: r.converged,
            final_loss: r.final_loss,
            interpolation_residual: f64::NAN,
            dist_l1: finite(r.dist_l1),
            dist_l2: finite(r.dist_l2),
            dist_linf: finite(r.dist_linf),
            dist_gd: finite(r.dist_gd),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config: ExperimentConfig,
    pub instance_checksum: String,
    pub runs: Vec<RunSummary>,
    pub checks: Vec<CheckResult>,
    pub outputs: Vec<OutputFile>,
    pub created_unix: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

impl RunManifest {
    fn new(command: &str, cfg: &ExperimentConfig, p: &ProblemInstance) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: cfg.clone(),
            instance_checksum: instance_checksum(p),
            runs: Vec::new(),
            checks: Vec::new(),
            outputs: Vec::new(),
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }
}

/// Collects output files and writes them from one place.
struct OutputWriter {
    dir: PathBuf,
    files: Vec<OutputFile>,
}

impl OutputWriter {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(OutputWriter {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        std::fs::write(self.dir.join(name), bytes)?;
        self.files.push(OutputFile {
            path: name.into(),
            sha256: crate::format::bytes_checksum(bytes),
        });
        Ok(())
    }

    fn finish(self, mut manifest: RunManifest) -> Result<RunManifest> {
        manifest.outputs = self.files;
        let json = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(self.dir.join("manifest.json"), json + "\n")?;
        Ok(manifest)
    }
}

/// Writes an instance generated from `spec`.
pub fn cmd_generate(spec: &GenSpec, out_path: &Path) -> Result<ProblemInstance> {
    let p = generate(spec)?;
    if let Some(dir) = out_path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    write_instance(&p, out_path)?;
    Ok(p)
}

/// Single DSPGD run; writes `trajectory.csv` and the manifest.
pub fn cmd_run(cfg: &ExperimentConfig, out: &Path) -> Result<RunManifest> {
    let p = cfg.build_problem()?;
    let loss = cfg.loss.build();
    let k = cfg.preconditioner.build()?;
    let traj = dspgd_run(&p, &loss, &k, &cfg.run)?;
    let refs = ReferenceSet::compute(&p, &cfg.references)?;
    let gd = if cfg.wants(ReferenceKind::Gd) {
        Some(gd_run(&p, &loss, &cfg.run)?.final_w)
    } else {
        None
    };
    let w = &traj.final_w;
    let mut summary = RunSummary {
        label: "run".into(),
        preconditioner: k.name().into(),
        eps: k.eps(),
        eta: cfg.run.eta,
        iters: traj.iters_used,
        converged: traj.converged,
        final_loss: traj.final_loss(),
        interpolation_residual: interpolation_residual(&p, w)?,
        dist_l1: None,
        dist_l2: None,
        dist_linf: None,
        dist_gd: None,
    };
    summary.dist_l1 = refs.l1.as_ref().map(|r| (w - r).norm());
    summary.dist_l2 = refs.l2.as_ref().map(|r| (w - r).norm());
    summary.dist_linf = refs.linf.as_ref().map(|r| (w - r).norm());
    summary.dist_gd = gd.as_ref().map(|r| (w - r).norm());

    let mut csv = String::from("iter,loss,grad_norm,k_value\n");
    for i in 0..traj.loss_series.len() {
        csv.push_str(&format!(
            "{i},{},{},{}\n",
            fmt_float(traj.loss_series[i]),
            fmt_float(traj.grad_norm_series[i]),
            fmt_float(traj.k_value_series[i])
        ));
    }
    let mut wtr = OutputWriter::new(out)?;
    wtr.write("trajectory.csv", csv.as_bytes())?;
    let mut m = RunManifest::new("run", cfg, &p);
    m.runs.push(summary);
    wtr.finish(m)
}

fn sweep_values(cfg: &ExperimentConfig, param: SweepParam, default: &[f64]) -> Vec<f64> {
    match &cfg.sweep {
        Some(s) if s.parameter == param => s.values.clone(),
        _ => default.to_vec(),
    }
}

pub fn cmd_sweep_eps(cfg: &ExperimentConfig, out: &Path, jobs: usize) -> Result<RunManifest> {
    let p = cfg.build_problem()?;
    let loss = cfg.loss.build();
    let values = sweep_values(cfg, SweepParam::Eps, &DEFAULT_EPS_GRID);
    let kind = cfg.preconditioner.name;
    let rows = eps_sweep(&p, &loss, kind, &values, &cfg.run, &cfg.references, jobs)?;
    let mut wtr = OutputWriter::new(out)?;
    let csv = sweep_csv_string(&rows)?;
    wtr.write("sweep_eps.csv", csv.as_bytes())?;
    let title = format!("{kind}, eta = {}: distance of the limit to each reference", cfg.run.eta);
    wtr.write("sweep_eps.svg", sweep_svg(&rows, &title).as_bytes())?;
    let mut m = RunManifest::new("sweep-eps", cfg, &p);
    m.runs = rows
        .iter()
        .map(|r| RunSummary::from_row(&format!("eps={}", r.value), kind.name(), r.value, cfg.run.eta, r))
        .collect();
    wtr.finish(m)
}

pub fn cmd_sweep_eta(cfg: &ExperimentConfig, out: &Path, jobs: usize) -> Result<RunManifest> {
    let p = cfg.build_problem()?;
    let loss = cfg.loss.build();
    let values = sweep_values(cfg, SweepParam::Eta, &DEFAULT_ETA_GRID);
    let eta_ref = cfg.sweep.as_ref().and_then(|s| s.eta_ref).unwrap_or(DEFAULT_ETA_REF);
    let k = cfg.preconditioner.build()?;
    let control_kind = cfg
        .sweep
        .as_ref()
        .and_then(|s| s.control)
        .unwrap_or(PreconditionerKind::NormalizedGd);
    let control = Preconditioner::new(control_kind, cfg.preconditioner.eps)?;
    if !control.is_isotropic() {
        return Err(Error::Config(format!("control preconditioner {control_kind} is not isotropic")));
    }
    let rows = eta_sweep(&p, &loss, &k, &values, eta_ref, &cfg.run, &cfg.references, jobs)?;
    let control_rows = eta_sweep(&p, &loss, &control, &values, eta_ref, &cfg.run, &cfg.references, jobs)?;

    let mut wtr = OutputWriter::new(out)?;
    wtr.write("sweep_eta.csv", sweep_csv_string(&rows)?.as_bytes())?;
    let title = format!("{}, eps = {}: limit versus step size", k.name(), k.eps());
    wtr.write("sweep_eta.svg", sweep_svg(&rows, &title).as_bytes())?;
    wtr.write("sweep_eta_control.csv", sweep_csv_string(&control_rows)?.as_bytes())?;
    let title = format!("{} control, eps = {}: limit versus step size", control.name(), control.eps());
    wtr.write("sweep_eta_control.svg", sweep_svg(&control_rows, &title).as_bytes())?;
    let mut m = RunManifest::new("sweep-eta", cfg, &p);
    for (name, eps, set) in [(k.name(), k.eps(), &rows), (control.name(), control.eps(), &control_rows)] {
        m.runs.extend(
            set.iter()
                .map(|r| RunSummary::from_row(&format!("{name} eta={}", r.value), name, eps, r.value, r)),
        );
    }
    wtr.finish(m)
}

pub fn cmd_verify(cfg: &ExperimentConfig, out: &Path) -> Result<(RunManifest, bool)> {
    let p = cfg.build_problem()?;
    let loss = cfg.loss.build();
    let k = cfg.preconditioner.build()?;
    let outcome = verify_suite(&p, &loss, &k, &cfg.run)?;
    let mut wtr = OutputWriter::new(out)?;
    wtr.write("verify.csv", outcome.csv()?.as_bytes())?;
    let ok = outcome.all_hold();
    let mut m = RunManifest::new("verify", cfg, &p);
    m.checks = outcome.checks;
    Ok((wtr.finish(m)?, ok))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRecord {
    pub norm: String,
    pub objective: f64,
    pub interpolation_residual: f64,
    /// Rows of `W*`.
    pub w_star: Vec<Vec<f64>>,
    /// Rows of the multiplier `Lambda` (l2 only).
    pub multiplier: Option<Vec<Vec<f64>>>,
    /// Simplex iterations per column (LP norms only).
    pub lp_iterations: Option<Vec<usize>>,
}

pub fn matrix_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

/// Solves the requested references (l1, l2, linf) and writes
/// `references.json` plus the manifest.
pub fn cmd_refsolve(cfg: &ExperimentConfig, out: &Path) -> Result<(RunManifest, Vec<ReferenceSolution>)> {
    let p = cfg.build_problem()?;
    let mut sols = Vec::new();
    for (kind, norm) in [
        (ReferenceKind::L1, PNorm::L1),
        (ReferenceKind::L2, PNorm::L2),
        (ReferenceKind::Linf, PNorm::Linf),
    ] {
        if cfg.wants(kind) {
            sols.push(match norm {
                PNorm::L2 => min_l2_solution(&p)?,
                _ => min_lp_solution(&p, norm)?,
            });
        }
    }
    let mut records = Vec::new();
    for s in &sols {
        let (multiplier, lp_iterations) = match &s.certificate {
            Certificate::Multiplier(l) => (Some(matrix_rows(l)), None),
            Certificate::Lp(v) => (None, Some(v.iter().map(|x| x.iterations).collect())),
        };
        records.push(ReferenceRecord {
            norm: s.p_norm.name().into(),
            objective: s.objective,
            interpolation_residual: interpolation_residual(&p, &s.w_star)?,
            w_star: matrix_rows(&s.w_star),
            multiplier,
            lp_iterations,
        });
    }
    let mut wtr = OutputWriter::new(out)?;
    wtr.write("references.json", (serde_json::to_string_pretty(&records)? + "\n").as_bytes())?;
    let m = wtr.finish(RunManifest::new("refsolve", cfg, &p))?;
    Ok((m, sols))
}
