//! Numeric checks of the convergence-rate, proximity and auxiliary bounds.
//!
//! Every check returns a [`BoundReport`] holding per-step margins
//! `bound - observed`. Where the literature states several versions of a
//! constant, each is evaluated as a variant and the primary bound is the
//! weakest (largest) of them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bregman::{adjusted_bregman_div, bregman_div_standard};
use crate::error::{Error, Result};
use crate::linalg::{gaussian, inner};
use crate::loss::{loss_gradient, loss_value, min_loss, SeparableLoss};
use crate::optimizer::Trajectory;
use crate::precond::Preconditioner;
use crate::problem::ProblemInstance;
use crate::Mat;

/// Relative slack under which a margin still counts as holding.
pub const HOLD_TOL: f64 = 1e-9;

/// Recorded steps dropped from the tail of rate checks.
pub const NOISE_FLOOR_STEPS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub step: usize,
    pub observed: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantMargin {
    pub name: String,
    pub worst_margin: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub bound_name: String,
    pub steps: Vec<usize>,
    pub per_step_margin: Vec<f64>,
    pub worst_margin: f64,
    pub holds: bool,
    pub first_violation: Option<Violation>,
    pub variants: Vec<VariantMargin>,
    pub note: Option<String>,
}

fn tolerated(observed: f64, bound: f64) -> bool {
    bound - observed >= -HOLD_TOL * (1.0 + bound.abs().max(observed.abs()))
}

impl BoundReport {
    /// Compares `observed[j] <= bound[j]` at `steps[j]`.
    pub fn evaluate(name: &str, steps: Vec<usize>, observed: &[f64], bound: &[f64]) -> Self {
        assert_eq!(observed.len(), bound.len());
        assert_eq!(steps.len(), bound.len());
        let per_step_margin: Vec<f64> = bound.iter().zip(observed).map(|(b, o)| b - o).collect();
        let worst_margin = per_step_margin.iter().copied().fold(f64::INFINITY, f64::min);
        let first_violation = (0..bound.len())
            .find(|&j| !tolerated(observed[j], bound[j]) || bound[j].is_nan() || observed[j].is_nan())
            .map(|j| Violation {
                step: steps[j],
                observed: observed[j],
                bound: bound[j],
            });
        BoundReport {
            bound_name: name.to_string(),
            steps,
            per_step_margin,
            worst_margin,
            holds: first_violation.is_none(),
            first_violation,
            variants: Vec::new(),
            note: None,
        }
    }

    /// Weakest of several bounds: the primary bound at each step is the
    /// largest variant, and each variant's own margins are reported.
    pub fn weakest(
        name: &str,
        steps: Vec<usize>,
        observed: &[f64],
        variants: &[(&str, Vec<f64>)],
    ) -> Self {
        let bound: Vec<f64> = (0..observed.len())
            .map(|j| variants.iter().map(|(_, b)| b[j]).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let mut report = Self::evaluate(name, steps.clone(), observed, &bound);
        for (vname, vb) in variants {
            let r = Self::evaluate(vname, steps.clone(), observed, vb);
            report.variants.push(VariantMargin {
                name: vname.to_string(),
                worst_margin: r.worst_margin,
                holds: r.holds,
            });
        }
        report
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    /// One-line summary, naming the first violation if any.
    pub fn summary(&self) -> String {
        match &self.first_violation {
            None => format!("{}: holds (worst margin {:.3e})", self.bound_name, self.worst_margin),
            Some(v) => format!(
                "{}: violated at step {} (observed {:.6e} > bound {:.6e})",
                self.bound_name, v.step, v.observed, v.bound
            ),
        }
    }
}

/// Constants entering the rate and proximity bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub n: f64,
    pub mu: f64,
    pub m_upper: f64,
    pub l_k: f64,
    pub m_k: f64,
    pub sigma1: f64,
    pub sigman: f64,
    pub isotropic: bool,
}

impl BoundConstants {
    /// `m_K` is taken on the ball whose radius is the size of `grad L(W0)`.
    pub fn new(p: &ProblemInstance, loss: &SeparableLoss, k: &Preconditioner) -> Result<Self> {
        let g0 = loss_gradient(p, loss, p.w0())?;
        let s = p.spectrum();
        Ok(BoundConstants {
            n: p.n() as f64,
            mu: loss.mu(),
            m_upper: loss.m_upper(),
            l_k: k.lipschitz(),
            m_k: k.strong_convexity_on_ball(k.ball_radius(&g0)),
            sigma1: s.sigma1_gram,
            sigman: s.sigman_gram,
            isotropic: k.is_isotropic(),
        })
    }

    /// Smoothness of `L` on the span, `M sigma_1 / n`.
    pub fn smoothness(&self) -> f64 {
        self.m_upper * self.sigma1 / self.n
    }

    /// Strong convexity of `L` on the span, `mu sigma_n / n`.
    pub fn strong_convexity(&self) -> f64 {
        self.mu * self.sigman / self.n
    }
}

/// `1 + eta^2 L_K^2 M^2 sigma_1^2 / n^2 - eta m_K mu sigma_n / n`.
pub fn contraction_factor(c: &BoundConstants, eta: f64) -> f64 {
    1.0 + eta * eta * c.l_k * c.l_k * c.smoothness() * c.smoothness() - eta * c.m_k * c.strong_convexity()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalEta {
    /// Minimizer of [`contraction_factor`].
    pub eta_star: f64,
    /// `1 - (m_K^2 / 4 L_K^2)(mu^2 / M^2)(sigma_n^2 / sigma_1^2)`.
    pub contraction: f64,
    /// `n (m_K / L_K^2)(mu / M^2)(sigma_n / sigma_1^2)`, twice the minimizer.
    pub displayed_eta: f64,
    /// Factor at `displayed_eta`; equal to one.
    pub displayed_contraction: f64,
}

/// Minimizer of the quadratic contraction factor, `b / 2a` for
/// `1 + a eta^2 - b eta`.
pub fn optimal_eta(c: &BoundConstants) -> OptimalEta {
    let displayed_eta = c.n * (c.m_k / (c.l_k * c.l_k)) * (c.mu / (c.m_upper * c.m_upper)) * (c.sigman / (c.sigma1 * c.sigma1));
    let eta_star = 0.5 * displayed_eta;
    let ratio = (c.m_k / c.l_k) * (c.mu / c.m_upper) * (c.sigman / c.sigma1);
    OptimalEta {
        eta_star,
        contraction: 1.0 - 0.25 * ratio * ratio,
        displayed_eta,
        displayed_contraction: contraction_factor(c, displayed_eta),
    }
}

/// Grid point in `(0, hi]` with the smallest contraction factor, and the
/// grid spacing.
pub fn factor_grid_argmin(c: &BoundConstants, hi: f64, points: usize) -> (f64, f64) {
    let h = hi / points as f64;
    let best = (1..=points)
        .map(|j| j as f64 * h)
        .min_by(|a, b| contraction_factor(c, *a).total_cmp(&contraction_factor(c, *b)))
        .expect("at least one grid point");
    (best, h)
}

fn rate_steps(traj: &Trajectory) -> &[(usize, Mat)] {
    let keep = traj.iterates.len().saturating_sub(NOISE_FLOOR_STEPS);
    &traj.iterates[..keep]
}

/// `||W_i - W_inf||^2 <= ||W_0 - W_inf||^2 rho^i` with `rho` from
/// [`contraction_factor`] and `W_inf` the final iterate.
pub fn check_rate_envelope(traj: &Trajectory, c: &BoundConstants) -> Result<BoundReport> {
    if !c.isotropic {
        return Err(Error::Precondition("rate envelope needs an isotropic preconditioner".into()));
    }
    if !traj.converged {
        return Err(Error::NotConverged {
            iterations: traj.iters_used,
        });
    }
    let rho = contraction_factor(c, traj.eta);
    let w_inf = &traj.final_w;
    let d0 = (&traj.iterates[0].1 - w_inf).norm_squared();
    let recorded = rate_steps(traj);
    let steps: Vec<usize> = recorded.iter().map(|(i, _)| *i).collect();
    let observed: Vec<f64> = recorded.iter().map(|(_, w)| (w - w_inf).norm_squared()).collect();
    let bound: Vec<f64> = steps.iter().map(|&i| d0 * rho.powi(i as i32)).collect();
    let report = BoundReport::evaluate("rate_envelope", steps, &observed, &bound);
    Ok(if rho >= 1.0 {
        report.with_note(format!("contraction factor {rho} >= 1; bound is vacuous"))
    } else {
        report
    })
}

/// Step size, the `alpha` with `K - alpha L*` convex on the span, and the
/// constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProximityConfig {
    pub alpha: f64,
    pub eta: f64,
    pub constants: BoundConstants,
}

impl ProximityConfig {
    pub fn new(alpha: f64, eta: f64, constants: BoundConstants) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
        }
        if alpha * eta >= 1.0 {
            return Err(Error::InvalidParameter(format!("alpha * eta = {} must be below 1", alpha * eta)));
        }
        let rule = (1.0 / eta).min(1.0 / (constants.n * constants.m_k));
        if alpha >= rule {
            return Err(Error::InvalidParameter(format!(
                "alpha = {alpha} must be below min(1/eta, 1/(n m_K)) = {rule}"
            )));
        }
        Ok(ProximityConfig { alpha, eta, constants })
    }

    /// `0.99 min(1/eta, 1/(n m_K))`.
    pub fn rule_alpha(c: &BoundConstants, eta: f64) -> f64 {
        0.99 * (1.0 / eta).min(1.0 / (c.n * c.m_k))
    }

    /// `alpha` certified by curvature for the squared loss: on the span
    /// `L*` has curvature at most `n / (mu sigma_n)` and `K` at least `m_K`,
    /// so `K - alpha L*` is convex for `alpha <= m_K mu sigma_n / n`.
    /// Capped by [`Self::rule_alpha`].
    pub fn certified_alpha(c: &BoundConstants, eta: f64) -> f64 {
        (0.99 * c.m_k * c.strong_convexity()).min(Self::rule_alpha(c, eta))
    }

    pub fn with_rule_alpha(eta: f64, c: BoundConstants) -> Result<Self> {
        Self::new(Self::rule_alpha(&c, eta), eta, c)
    }

    pub fn with_certified_alpha(eta: f64, c: BoundConstants) -> Result<Self> {
        Self::new(Self::certified_alpha(&c, eta), eta, c)
    }

    fn alpha_term(&self) -> f64 {
        1.0 - (1.0 - self.alpha * self.eta).sqrt()
    }

    fn gd_term(&self) -> f64 {
        1.0 - (1.0 - self.eta * self.constants.strong_convexity() / 2.0).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProximityReport {
    /// `||W0 - W_inf||` against the bound in terms of `||W0 - W_GD||`.
    pub bound_a: BoundReport,
    /// `||W_GD - W_inf||`.
    pub bound_b: BoundReport,
}

fn check_pair(dspgd: &Trajectory, gd: &Trajectory, p: &ProblemInstance, eta: f64) -> Result<()> {
    for t in [dspgd, gd] {
        if !t.converged {
            return Err(Error::NotConverged { iterations: t.iters_used });
        }
        if t.eta != eta {
            return Err(Error::Precondition(format!("run used eta {} but the check expects {eta}", t.eta)));
        }
        if &t.iterates[0].1 != p.w0() {
            return Err(Error::Precondition("runs must start from the instance's W0".into()));
        }
    }
    Ok(())
}

pub fn check_proximity_bounds(
    dspgd: &Trajectory,
    gd: &Trajectory,
    pcfg: &ProximityConfig,
    p: &ProblemInstance,
    loss: &SeparableLoss,
) -> Result<ProximityReport> {
    check_pair(dspgd, gd, p, pcfg.eta)?;
    let c = &pcfg.constants;
    let w0 = p.w0();
    let (w_inf, w_gd) = (&dspgd.final_w, &gd.final_w);
    let lip = c.smoothness();
    let d_gd = (w0 - w_gd).norm();
    let l0 = loss_value(p, loss, w0)?;

    let a_bound = d_gd * (1.0 + 2f64.sqrt() * lip / pcfg.gd_term() + lip / pcfg.alpha_term());
    let bound_a = BoundReport::evaluate("proximity_a", vec![0], &[(w0 - w_inf).norm()], &[a_bound]);

    let root = (2.0 * lip * l0).sqrt();
    let b_main = root * (1.0 / (pcfg.eta * c.mu * c.sigman) + (c.l_k + 2.0) / pcfg.alpha_term());
    let b_alt = lip * d_gd * (2f64.sqrt() / pcfg.gd_term() + 1.0 / pcfg.alpha_term());
    let observed_b = (w_gd - w_inf).norm();
    let mut bound_b = BoundReport::evaluate("proximity_b", vec![0], &[observed_b], &[b_main]);
    let alt = BoundReport::evaluate("proximity_b_alternative", vec![0], &[observed_b], &[b_alt]);
    bound_b.variants = vec![
        VariantMargin {
            name: "proximity_b".into(),
            worst_margin: bound_b.worst_margin,
            holds: bound_b.holds,
        },
        VariantMargin {
            name: alt.bound_name,
            worst_margin: alt.worst_margin,
            holds: alt.holds,
        },
    ];
    Ok(ProximityReport { bound_a, bound_b })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientDecayReport {
    pub dspgd: BoundReport,
    pub gd: BoundReport,
}

/// Per-iteration gradient-norm bounds for the DSPGD run (rate `(1 - alpha
/// eta)^{i/2}`) and the GD run (weakest of the stated GD rates).
pub fn check_gradient_decay(
    dspgd: &Trajectory,
    gd: &Trajectory,
    pcfg: &ProximityConfig,
    p: &ProblemInstance,
    loss: &SeparableLoss,
) -> Result<GradientDecayReport> {
    check_pair(dspgd, gd, p, pcfg.eta)?;
    let c = &pcfg.constants;
    let eta = pcfg.eta;
    let lip = c.smoothness();
    let d_gd = (p.w0() - &gd.final_w).norm();
    let l0 = loss_value(p, loss, p.w0())?;
    let root = (2.0 * lip * l0).sqrt();

    let steps: Vec<usize> = (0..dspgd.grad_norm_series.len()).collect();
    let q = (1.0 - pcfg.alpha * eta).sqrt();
    let by_distance: Vec<f64> = steps.iter().map(|&i| lip * d_gd * q.powi(i as i32)).collect();
    let by_loss: Vec<f64> = steps.iter().map(|&i| root * q.powi(i as i32)).collect();
    let dspgd_report = BoundReport::weakest(
        "gradient_decay_dspgd",
        steps,
        &dspgd.grad_norm_series,
        &[("distance_form", by_distance), ("loss_form", by_loss)],
    );

    let steps: Vec<usize> = (0..gd.grad_norm_series.len()).collect();
    let mut variants: Vec<(&str, Vec<f64>)> = Vec::new();
    let mut skipped = Vec::new();
    let candidates: [(&str, f64, f64, f64); 3] = [
        // squared form, compared after taking the square root
        ("squared_half_rate", 1.0 - eta * c.strong_convexity() / 2.0, 2f64.sqrt() * lip * d_gd, 0.5),
        ("normalized_rate", 1.0 - eta * c.strong_convexity(), root, 1.0),
        ("unnormalized_rate", 1.0 - eta * c.mu * c.sigman, root, 1.0),
    ];
    for (name, base, scale, power) in candidates {
        if (0.0..1.0).contains(&base) {
            let b = base.powf(power);
            variants.push((name, steps.iter().map(|&i| scale * b.powi(i as i32)).collect()));
        } else {
            skipped.push(name);
        }
    }
    if variants.is_empty() {
        return Err(Error::Precondition("no GD rate variant has a base in [0, 1)".into()));
    }
    let mut gd_report = BoundReport::weakest("gradient_decay_gd", steps, &gd.grad_norm_series, &variants);
    if !skipped.is_empty() {
        gd_report = gd_report.with_note(format!("variants with base outside [0,1) skipped: {}", skipped.join(", ")));
    }
    Ok(GradientDecayReport {
        dspgd: dspgd_report,
        gd: gd_report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    /// `D~(W, W_i) <= (1 - alpha eta) D~(W, W_{i-1})`.
    pub contraction: BoundReport,
    /// `alpha D~(W_i, W_{i-1}) <= D_K(G_i, G_{i-1})`, as stated.
    pub stated_hypothesis: BoundReport,
    /// `alpha D~(W, W_{i-1}) <= D_K(G, G_{i-1})`, the inequality the
    /// contraction argument actually consumes.
    pub used_hypothesis: BoundReport,
}

/// Per-step contraction of the adjusted divergence to an interpolating probe.
pub fn check_lemma5_contraction(
    traj: &Trajectory,
    p: &ProblemInstance,
    loss: &SeparableLoss,
    k: &Preconditioner,
    probe: &Mat,
    alpha: f64,
) -> Result<ContractionReport> {
    let ws = traj.consecutive_iterates()?;
    let eta = traj.eta;
    let g = loss_gradient(p, loss, probe)?;
    let mut steps = Vec::new();
    let (mut obs_c, mut bnd_c) = (Vec::new(), Vec::new());
    let (mut obs_s, mut bnd_s) = (Vec::new(), Vec::new());
    let (mut obs_u, mut bnd_u) = (Vec::new(), Vec::new());
    let mut d_prev = adjusted_bregman_div(p, loss, probe, ws[0])?;
    for (i, pair) in ws.windows(2).enumerate() {
        let (prev, next) = (pair[0], pair[1]);
        let d_next = adjusted_bregman_div(p, loss, probe, next)?;
        let g_prev = loss_gradient(p, loss, prev)?;
        let g_next = loss_gradient(p, loss, next)?;
        steps.push(i + 1);
        obs_c.push(d_next);
        bnd_c.push((1.0 - alpha * eta) * d_prev);
        obs_s.push(alpha * adjusted_bregman_div(p, loss, next, prev)?);
        bnd_s.push(bregman_div_standard(k, &g_next, &g_prev)?);
        obs_u.push(alpha * d_prev);
        bnd_u.push(bregman_div_standard(k, &g, &g_prev)?);
        d_prev = d_next;
    }
    Ok(ContractionReport {
        contraction: BoundReport::evaluate("lemma5_contraction", steps.clone(), &obs_c, &bnd_c),
        stated_hypothesis: BoundReport::evaluate("lemma5_stated_hypothesis", steps.clone(), &obs_s, &bnd_s),
        used_hypothesis: BoundReport::evaluate("lemma5_used_hypothesis", steps, &obs_u, &bnd_u),
    })
}

/// `||grad L(W)||^2 <= 2 (M sigma_1 / n)(L(W) - min L)` at random `W`.
pub fn descent_lemma_check(p: &ProblemInstance, loss: &SeparableLoss, samples: usize, seed: u64) -> Result<BoundReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lip = loss.m_upper() * p.spectrum().sigma1_gram / p.n() as f64;
    let floor = min_loss(p, loss)?;
    let (mut obs, mut bnd) = (Vec::with_capacity(samples), Vec::with_capacity(samples));
    for _ in 0..samples {
        let w = gaussian(&mut rng, p.d(), p.k());
        obs.push(loss_gradient(p, loss, &w)?.norm_squared());
        bnd.push(2.0 * lip * (loss_value(p, loss, &w)? - floor));
    }
    Ok(BoundReport::evaluate("descent_lemma", (0..samples).collect(), &obs, &bnd))
}

/// Secant curvature `<V, grad L(W+V) - grad L(W)> / ||V||^2` along random
/// span directions `V`, checked against `[mu sigma_n / n, M sigma_1 / n]`.
/// The margin at each sample is the distance to the nearer end.
pub fn hessian_sandwich_check(p: &ProblemInstance, loss: &SeparableLoss, samples: usize, seed: u64) -> Result<BoundReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = p.spectrum();
    let n = p.n() as f64;
    let (lo, hi) = (loss.mu() * s.sigman_gram / n, loss.m_upper() * s.sigma1_gram / n);
    let (mut obs, mut bnd) = (Vec::with_capacity(samples), Vec::with_capacity(samples));
    for _ in 0..samples {
        let w = gaussian(&mut rng, p.d(), p.k());
        let v = p.x().transpose() * gaussian(&mut rng, p.n(), p.k());
        let dg = loss_gradient(p, loss, &(&w + &v))? - loss_gradient(p, loss, &w)?;
        let curv = inner(&v, &dg) / v.norm_squared();
        // margin = min(curv - lo, hi - curv), encoded as observed <= bound
        let (o, b) = if curv - lo < hi - curv { (lo, curv) } else { (curv, hi) };
        obs.push(o);
        bnd.push(b);
    }
    Ok(BoundReport::evaluate("hessian_sandwich", (0..samples).collect(), &obs, &bnd))
}

/// Least-squares slope of `ln series[i]` over `i` in `range`, returned as a
/// per-step factor.
pub fn geometric_rate(series: &[f64], range: std::ops::Range<usize>) -> f64 {
    let pts: Vec<(f64, f64)> = range
        .filter(|&i| series[i] > 0.0)
        .map(|i| (i as f64, series[i].ln()))
        .collect();
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / m, sy / m);
    let (num, den) = pts
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + (x - mx) * (y - my), b + (x - mx) * (x - mx)));
    (num / den).exp()
}
