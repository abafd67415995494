//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p dspgd --test acceptance -- --nocapture` (the
//! target has its own `main`, so output is always shown). Criteria listed in
//! `KNOWN_RED` are evaluated with their full tolerance and reported as FAIL;
//! they do not change the exit status. Any other failure exits nonzero.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use dspgd::bregman::{lemma3_gap, three_point_residual};
use dspgd::experiment::{
    cmd_sweep_eps, cmd_sweep_eta, cmd_verify, eps_sweep, eta_sweep, verify_suite, ExperimentConfig, ReferenceKind,
    DEFAULT_EPS_GRID, DEFAULT_ETA_GRID,
};
use dspgd::loss::{dual_at_gradient, loss_gradient, loss_value};
use dspgd::optimizer::{dspgd_run, gd_run, step_identity_reports};
use dspgd::precond::{make_adam_like, make_grad_clip, make_normalized_gd, make_quadratic};
use dspgd::reference::{lp_solve, min_l2_solution, vertex_enumeration_oracle, Certificate, LinearProgram};
use dspgd::verify::{
    check_proximity_bounds, check_rate_envelope, contraction_factor, factor_grid_argmin, optimal_eta, BoundConstants,
    ProximityConfig,
};
use dspgd::problem::generate;
use dspgd::{GenSpec, Mat, Preconditioner, ProblemInstance, RunConfig, SeparableLoss};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const KNOWN_RED: &[&str] = &["11b"];

struct Line {
    id: &'static str,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn line(id: &'static str, title: &'static str, pass: bool, detail: impl Into<String>) -> Line {
    Line {
        id,
        title,
        pass,
        detail: detail.into(),
    }
}

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn instance(seed: u64, k: usize) -> ProblemInstance {
    generate(&GenSpec::new(5, 20, k, seed)).expect("instance")
}

fn seed1() -> ProblemInstance {
    instance(1, 1)
}

fn seed2() -> ProblemInstance {
    instance(2, 3)
}

fn half_eta_max(p: &ProblemInstance, k: &Preconditioner) -> f64 {
    0.5 * k.eta_max(p.n(), &p.spectrum())
}

fn four_preconditioners() -> Vec<Preconditioner> {
    vec![
        make_normalized_gd(1.0).unwrap(),
        make_grad_clip(1.0).unwrap(),
        make_adam_like(0.5).unwrap(),
        make_quadratic(),
    ]
}

fn isotropic_preconditioners() -> Vec<Preconditioner> {
    vec![make_normalized_gd(1.0).unwrap(), make_grad_clip(1.0).unwrap()]
}

/// Minimum-distance interpolator from the pseudo-inverse, independent of the
/// library's reference module.
fn pinv_min_l2(p: &ProblemInstance) -> Mat {
    let x = p.x();
    let gram = x * x.transpose();
    let r = p.y() - x * p.w0();
    let z = gram.try_inverse().expect("invertible gram") * r;
    p.w0() + x.transpose() * z
}

/// Conjugate of the squared loss at `X^T Lambda`: `Tr(Y^T Lambda) + (n/2)||Lambda||^2`.
fn squared_conjugate_at_gradient(p: &ProblemInstance, b: &Mat) -> f64 {
    let n = p.n() as f64;
    let lambda = (p.x() * b - p.y()) / n;
    p.y().dot(&lambda) + 0.5 * n * lambda.norm_squared()
}

fn criterion1() -> Line {
    let start = Instant::now();
    let p = seed2();
    let loss = SeparableLoss::squared();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let probes = [gaussian(&mut rng, 20, 3), pinv_min_l2(&p), gaussian(&mut rng, 20, 3)];
    let (mut worst, mut steps) = (0.0_f64, usize::MAX);
    for k in four_preconditioners() {
        let cfg = RunConfig {
            eta: half_eta_max(&p, &k),
            max_iters: 120,
            tol_grad_k: 1e-300,
            tol_interp: 1e-300,
            record_every: 1,
            ..RunConfig::default()
        };
        let traj = dspgd_run(&p, &loss, &k, &cfg).unwrap();
        steps = steps.min(traj.iters_used);
        for probe in &probes {
            for r in step_identity_reports(&traj, &p, &loss, &k, probe).unwrap() {
                worst = worst.max(r.standard.rel_residual);
            }
        }
    }
    let t = start.elapsed();
    line(
        "1",
        "fundamental identity",
        worst <= 1e-9 && steps >= 100 && t < Duration::from_secs(5),
        format!("worst relative residual {worst:.3e} (tol 1e-9), {steps} steps per preconditioner, {t:.2?} (limit 5 s)"),
    )
}

fn criterion2() -> Line {
    let start = Instant::now();
    let p = seed2();
    let loss = SeparableLoss::squared();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let (a, b, c) = (gaussian(&mut rng, 20, 3), gaussian(&mut rng, 20, 3), gaussian(&mut rng, 20, 3));
        worst = worst.max(three_point_residual(&p, &loss, &a, &b, &c).unwrap().rel_residual);
    }
    let t = start.elapsed();
    line(
        "2",
        "three-point identity",
        worst <= 1e-10 && t < Duration::from_secs(2),
        format!("1000 triples, worst relative residual {worst:.3e} (tol 1e-10), {t:.2?} (limit 2 s)"),
    )
}

fn criterion3() -> Line {
    let p = seed2();
    let loss = SeparableLoss::squared();
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let (mut worst, mut worst_oracle) = (0.0_f64, 0.0_f64);
    for _ in 0..1000 {
        let b = gaussian(&mut rng, 20, 3);
        let lb = loss_value(&p, &loss, &b).unwrap();
        let tr = b.dot(&loss_gradient(&p, &loss, &b).unwrap());
        let lib = dual_at_gradient(&p, &loss, &b).unwrap();
        let oracle = squared_conjugate_at_gradient(&p, &b);
        worst = worst.max((lib + lb - tr).abs() / (1.0 + lb.abs()));
        worst_oracle = worst_oracle.max((lib - oracle).abs() / (1.0 + lb.abs()));
    }
    line(
        "3",
        "Fenchel-Young equality",
        worst <= 1e-9 && worst_oracle <= 1e-9,
        format!("1000 points, worst {worst:.3e}, closed-form conjugate mismatch {worst_oracle:.3e} (tol 1e-9)"),
    )
}

fn criterion4() -> Line {
    let p = seed2();
    let loss = SeparableLoss::squared();
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut min_gap = f64::INFINITY;
    for k in four_preconditioners() {
        let eta = half_eta_max(&p, &k);
        for _ in 0..100 {
            let (a, b) = (gaussian(&mut rng, 20, 3), gaussian(&mut rng, 20, 3));
            min_gap = min_gap.min(lemma3_gap(&p, &loss, &k, &a, &b, eta).unwrap());
        }
    }
    line(
        "4",
        "step gap nonnegative",
        min_gap >= -1e-12,
        format!("100 pairs x 4 preconditioners at eta_max/2, smallest gap {min_gap:.3e} (tol -1e-12)"),
    )
}

struct IsotropicRun {
    label: String,
    rel_residual: f64,
    bias: f64,
    gd_gap: f64,
    converged: bool,
}

fn isotropic_runs() -> Vec<IsotropicRun> {
    let loss = SeparableLoss::squared();
    let mut out = Vec::new();
    for (name, p) in [("seed-1", seed1()), ("seed-2", seed2())] {
        let w_star = pinv_min_l2(&p);
        for k in isotropic_preconditioners() {
            let cfg = RunConfig {
                eta: half_eta_max(&p, &k),
                max_iters: 1_000_000,
                record_every: 1000,
                ..RunConfig::default()
            };
            let traj = dspgd_run(&p, &loss, &k, &cfg).unwrap();
            let gd = gd_run(&p, &loss, &cfg).unwrap();
            let w = &traj.final_w;
            out.push(IsotropicRun {
                label: format!("{name}/{}", k.name()),
                rel_residual: (p.x() * w - p.y()).norm() / p.y().norm(),
                bias: (w - &w_star).norm() / (1.0 + w_star.norm()),
                gd_gap: (w - &gd.final_w).norm(),
                converged: traj.converged && gd.converged,
            });
        }
    }
    out
}

fn criterion5(runs: &[IsotropicRun]) -> Line {
    let worst = runs.iter().map(|r| r.rel_residual).fold(0.0, f64::max);
    let pass = runs.iter().all(|r| r.converged && r.rel_residual <= 1e-8);
    let detail: Vec<String> = runs.iter().map(|r| format!("{} {:.1e}", r.label, r.rel_residual)).collect();
    line(
        "5",
        "convergence to interpolation",
        pass,
        format!("||XW-Y||/||Y|| worst {worst:.3e} (tol 1e-8): {}", detail.join(", ")),
    )
}

fn criterion6(runs: &[IsotropicRun]) -> Line {
    let bias = runs.iter().map(|r| r.bias).fold(0.0, f64::max);
    let gap = runs.iter().map(|r| r.gd_gap).fold(0.0, f64::max);
    line(
        "6",
        "implicit bias of isotropic K",
        bias <= 1e-6 && gap <= 1e-6,
        format!("worst distance to min-l2 {bias:.3e} relative (tol 1e-6), to GD limit {gap:.3e} (tol 1e-6)"),
    )
}

fn criterion7() -> Line {
    let loss = SeparableLoss::squared();
    let (mut pass, mut detail) = (true, Vec::new());
    for (name, p) in [("seed-1", seed1()), ("seed-2", seed2())] {
        for k in isotropic_preconditioners() {
            let c = BoundConstants::new(&p, &loss, &k).unwrap();
            let opt = optimal_eta(&c);
            // independent closed forms
            let smooth = c.m_upper * c.sigma1 / c.n;
            let strong = c.mu * c.sigman / c.n;
            let factor = |eta: f64| 1.0 + eta * eta * c.l_k * c.l_k * smooth * smooth - eta * c.m_k * strong;
            let ratio = (c.m_k / c.l_k) * (c.mu / c.m_upper) * (c.sigman / c.sigma1);
            let closed_form = 1.0 - 0.25 * ratio * ratio;
            let closed_form_gap = (contraction_factor(&c, opt.eta_star) - closed_form).abs();
            let closed_form_gap_oracle = (factor(opt.eta_star) - closed_form).abs();
            let points = 1000;
            let hi = 2.0 * opt.eta_star;
            let h = hi / points as f64;
            let grid_best = (1..=points)
                .map(|j| j as f64 * h)
                .min_by(|a, b| factor(*a).total_cmp(&factor(*b)))
                .unwrap();
            let (lib_best, _) = factor_grid_argmin(&c, hi, points);
            let grid_ok = (grid_best - opt.eta_star).abs() <= h && (lib_best - opt.eta_star).abs() <= h;
            let cfg = RunConfig {
                eta: opt.eta_star,
                max_iters: 10_000_000,
                record_every: 10,
                ..RunConfig::default()
            };
            let traj = dspgd_run(&p, &loss, &k, &cfg).unwrap();
            let env = check_rate_envelope(&traj, &c).unwrap();
            let ok = env.holds && closed_form_gap <= 1e-12 && closed_form_gap_oracle <= 1e-12 && grid_ok;
            pass &= ok;
            detail.push(format!(
                "{name}/{}: eta* {:.3e}, {} steps, envelope {}, closed-form gap {:.1e}, grid {}",
                k.name(),
                opt.eta_star,
                traj.iters_used,
                if env.holds { "holds" } else { "violated" },
                closed_form_gap.max(closed_form_gap_oracle),
                if grid_ok { "ok" } else { "off" }
            ));
        }
    }
    line("7", "rate envelope at eta*", pass, format!("{} (tol 1e-12, one grid cell of 1e3)", detail.join("; ")))
}

fn criterion8() -> Line {
    let p = seed1();
    let loss = SeparableLoss::squared();
    let eta = 0.005;
    let cfg = RunConfig {
        eta,
        record_every: 1,
        ..RunConfig::default()
    };
    let gd = gd_run(&p, &loss, &cfg).unwrap();
    let adam = make_adam_like(0.5).unwrap();
    let traj = dspgd_run(&p, &loss, &adam, &cfg).unwrap();
    let c = BoundConstants::new(&p, &loss, &adam).unwrap();
    let pcfg = ProximityConfig::with_rule_alpha(eta, c).unwrap();
    let alpha_oracle = 0.99 * (1.0 / eta).min(1.0 / (c.n * c.m_k));
    let rep = check_proximity_bounds(&traj, &gd, &pcfg, &p, &loss).unwrap();

    let quad = make_quadratic();
    let qtraj = dspgd_run(&p, &loss, &quad, &cfg).unwrap();
    let qc = BoundConstants::new(&p, &loss, &quad).unwrap();
    let qrep = check_proximity_bounds(&qtraj, &gd, &ProximityConfig::with_rule_alpha(eta, qc).unwrap(), &p, &loss).unwrap();
    let control_lhs = (&qtraj.final_w - &gd.final_w).norm();
    let alpha_ok = (pcfg.alpha - alpha_oracle).abs() <= 1e-15 * alpha_oracle;
    line(
        "8",
        "proximity bounds",
        rep.bound_a.holds && rep.bound_b.holds && alpha_ok && control_lhs == 0.0 && qrep.bound_b.holds,
        format!(
            "alpha {:.6e}; bound A margin {:.3e}, bound B margin {:.3e}; quadratic control ||W_GD - W_inf|| = {control_lhs:e}",
            pcfg.alpha, rep.bound_a.worst_margin, rep.bound_b.worst_margin
        ),
    )
}

fn criterion9() -> Line {
    let cfg = ExperimentConfig::default();
    let p = cfg.build_problem().unwrap();
    let loss = cfg.loss.build();
    let mut configs: Vec<(String, Preconditioner, RunConfig)> =
        vec![("default".into(), cfg.preconditioner.build().unwrap(), cfg.run.clone())];
    let p2 = seed2();
    for k in isotropic_preconditioners() {
        configs.push((format!("seed-2/{}", k.name()), k, RunConfig::new(half_eta_max(&p2, &k))));
    }
    let (mut pass, mut detail) = (true, Vec::new());
    for (label, k, run) in configs {
        let inst = if label == "default" { &p } else { &p2 };
        let out = verify_suite(inst, &loss, &k, &run).unwrap();
        let failed: Vec<&str> = out.checks.iter().filter(|c| !c.holds && c.gating).map(|c| c.check.as_str()).collect();
        let notes: Vec<&str> = out.checks.iter().filter(|c| !c.holds && !c.gating).map(|c| c.check.as_str()).collect();
        pass &= failed.is_empty();
        let mut s = format!("{label}: {}/{} hold", out.checks.len() - failed.len() - notes.len(), out.checks.len());
        if !failed.is_empty() {
            s.push_str(&format!(", failed {}", failed.join(" ")));
        }
        if !notes.is_empty() {
            s.push_str(&format!(", informational {}", notes.join(" ")));
        }
        detail.push(s);
    }
    line("9", "bound reports", pass, detail.join("; "))
}

fn random_lp(rng: &mut ChaCha8Rng) -> LinearProgram {
    let nv = rng.random_range(2..=6);
    let m = rng.random_range(1..=3.min(nv - 1));
    let a = Mat::from_fn(m, nv, |_, _| rng.random_range(-3.0..3.0));
    let x0: Vec<f64> = (0..nv).map(|_| rng.random_range(0.0..2.0)).collect();
    let b: Vec<f64> = (0..m).map(|i| (0..nv).map(|j| a[(i, j)] * x0[j]).sum()).collect();
    let cost: Vec<f64> = (0..nv).map(|_| rng.random_range(0.1..3.0)).collect();
    LinearProgram::new(cost, a, b).unwrap()
}

fn criterion10() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(110);
    let mut worst_lp = 0.0_f64;
    for _ in 0..50 {
        let lp = random_lp(&mut rng);
        let got = lp_solve(&lp).unwrap().objective;
        let want = vertex_enumeration_oracle(&lp).unwrap();
        worst_lp = worst_lp.max((got - want).abs());
    }
    let mut worst_kkt = 0.0_f64;
    for seed in 0..20 {
        let p = generate(&GenSpec::new(5, 20, 1 + (seed as usize % 3), 1000 + seed)).unwrap();
        let sol = min_l2_solution(&p).unwrap();
        let Certificate::Multiplier(lambda) = &sol.certificate else {
            return line("10", "LP and min-l2 references", false, "min-l2 solution without a multiplier");
        };
        let stationarity = (&sol.w_star - p.w0() + p.x().transpose() * lambda).norm();
        let feasibility = (p.x() * &sol.w_star - p.y()).norm();
        worst_kkt = worst_kkt.max(stationarity).max(feasibility);
    }
    line(
        "10",
        "LP and min-l2 references",
        worst_lp <= 1e-8 && worst_kkt <= 1e-10,
        format!("50 LPs worst objective gap {worst_lp:.3e} (tol 1e-8); 20 instances worst KKT residual {worst_kkt:.3e} (tol 1e-10)"),
    )
}

fn criterion11() -> (Line, Line) {
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    let p = cfg.build_problem().unwrap();
    let loss = cfg.loss.build();
    let run = RunConfig::new(0.005);
    let rows = eps_sweep(&p, &loss, cfg.preconditioner.build().unwrap().kind(), &DEFAULT_EPS_GRID, &run, &cfg.references, 0)
        .unwrap();
    let t = start.elapsed();
    let first = rows.iter().find(|r| r.value == 0.1).unwrap();
    let last = rows.iter().find(|r| r.value == 10.0).unwrap();
    let converged = rows.iter().all(|r| r.converged);
    let a = line(
        "11a",
        "eps sweep trend",
        converged && last.dist_l2 < first.dist_l2 && t < Duration::from_secs(120),
        format!(
            "dist_l2 {:.6e} at eps=10 vs {:.6e} at eps=0.1, {t:.2?} (limit 120 s)",
            last.dist_l2, first.dist_l2
        ),
    );
    let b = line(
        "11b",
        "eps sweep reaches GD",
        last.dist_gd <= 1e-3,
        format!("dist_gd {:.6e} at eps=10 (tol 1e-3); eps * dist_gd = {:.3}", last.dist_gd, 10.0 * last.dist_gd),
    );
    (a, b)
}

fn criterion12() -> Line {
    let cfg = ExperimentConfig::default();
    let p = cfg.build_problem().unwrap();
    let loss = cfg.loss.build();
    let run = RunConfig::default();
    let adam = make_adam_like(0.5).unwrap();
    let rows = eta_sweep(&p, &loss, &adam, &DEFAULT_ETA_GRID, 0.005, &run, &[ReferenceKind::L2], 0).unwrap();
    let rel = |r: &dspgd::format::SweepRow| r.reference.map_or(f64::NAN, |(d, n)| d / n);
    let max_rel = rows.iter().map(rel).fold(0.0, f64::max);
    let control = make_normalized_gd(0.5).unwrap();
    let crow = eta_sweep(&p, &loss, &control, &DEFAULT_ETA_GRID, 0.005, &run, &[ReferenceKind::L2], 0).unwrap();
    let control_max = crow.iter().map(rel).fold(0.0, f64::max);
    let finite = rows.iter().chain(&crow).all(|r| rel(r).is_finite());
    line(
        "12",
        "step-size dependence",
        finite && max_rel > 1e-3 && control_max <= 1e-6,
        format!("adam-like max relative shift {max_rel:.3e} (> 1e-3); isotropic control max {control_max:.3e} (tol 1e-6)"),
    )
}

fn criterion13() -> Line {
    let cfg = ExperimentConfig::default();
    let dirs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for (j, dir) in dirs.iter().enumerate() {
        cmd_verify(&cfg, dir.path()).unwrap();
        // different worker counts on the two passes
        cmd_sweep_eps(&cfg, dir.path(), j + 1).unwrap();
        cmd_sweep_eta(&cfg, dir.path(), j + 1).unwrap();
    }
    let files = ["verify.csv", "sweep_eps.csv", "sweep_eta.csv", "sweep_eta_control.csv"];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(dirs[0].path().join(f)).unwrap() != std::fs::read(dirs[1].path().join(f)).unwrap())
        .collect();
    line(
        "13",
        "determinism",
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} identical across two invocations", files.join(", "))
        } else {
            format!("differing: {}", differing.join(", "))
        },
    )
}

fn main() -> ExitCode {
    // libtest flags such as --nocapture are accepted and ignored
    let start = Instant::now();
    let runs = isotropic_runs();
    let (c11a, c11b) = criterion11();
    let lines = vec![
        criterion1(),
        criterion2(),
        criterion3(),
        criterion4(),
        criterion5(&runs),
        criterion6(&runs),
        criterion7(),
        criterion8(),
        criterion9(),
        criterion10(),
        c11a,
        c11b,
        criterion12(),
        criterion13(),
    ];
    let mut unexpected = 0;
    for l in &lines {
        let status = if l.pass { "PASS" } else { "FAIL" };
        let known = if !l.pass && KNOWN_RED.contains(&l.id) { " [known]" } else { "" };
        println!("{status} {:>3} {}: {}{known}", l.id, l.title, l.detail);
        if !l.pass && known.is_empty() {
            unexpected += 1;
        }
    }
    let failed = lines.iter().filter(|l| !l.pass).count();
    println!(
        "acceptance: {} criteria, {} passed, {failed} failed ({unexpected} unexpected), {:.1?}",
        lines.len(),
        lines.len() - failed,
        start.elapsed()
    );
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
