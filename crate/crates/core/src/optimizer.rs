//! The DSPGD iteration `W_i = W_{i-1} - eta grad K(grad L(W_{i-1}))` and the
//! plain gradient descent baseline.

use serde::{Deserialize, Serialize};

use crate::bregman::{fundamental_identity_residual, FundamentalReport};
use crate::error::{Error, Result};
use crate::linalg::all_finite;
use crate::loss::{loss_gradient, loss_value, SeparableLoss};
use crate::precond::{make_quadratic, Preconditioner};
use crate::problem::{interpolation_residual, ProblemInstance};
use crate::Mat;

/// Loss level treated as divergence.
pub const LOSS_EXPLOSION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub eta: f64,
    pub max_iters: usize,
    /// Stop once `||grad K(grad L(W))||_F` is below this...
    pub tol_grad_k: f64,
    /// ...and `||XW - Y||_F` is below this.
    pub tol_interp: f64,
    pub record_every: usize,
    pub strict_eta: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            eta: 0.005,
            max_iters: 1_000_000,
            tol_grad_k: 1e-9,
            tol_interp: 1e-10,
            record_every: 1,
            strict_eta: false,
        }
    }
}

impl RunConfig {
    pub fn new(eta: f64) -> Self {
        RunConfig {
            eta,
            ..Default::default()
        }
    }

    /// Default recording stride for an instance: every step unless
    /// `n d k > 1e5`.
    pub fn default_record_every(p: &ProblemInstance) -> usize {
        if p.n() * p.d() * p.k() > 100_000 {
            10
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidParameter(format!("eta must be positive, got {}", self.eta)));
        }
        if self.max_iters == 0 || self.record_every == 0 {
            return Err(Error::InvalidParameter("max_iters and record_every must be at least 1".into()));
        }
        if !(self.tol_grad_k > 0.0 && self.tol_interp > 0.0) {
            return Err(Error::InvalidParameter("tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Diagnostics of one run. The scalar series have one entry per iteration
/// `0..=iters_used`; weights are kept at multiples of `record_every` and at
/// the final iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub preconditioner: String,
    pub eta: f64,
    pub record_every: usize,
    pub iterates: Vec<(usize, Mat)>,
    pub loss_series: Vec<f64>,
    pub grad_norm_series: Vec<f64>,
    pub k_value_series: Vec<f64>,
    pub final_w: Mat,
    pub converged: bool,
    pub iters_used: usize,
}

impl Trajectory {
    /// Recorded weights, requiring that every step was kept.
    pub fn consecutive_iterates(&self) -> Result<Vec<&Mat>> {
        if self.record_every != 1 {
            return Err(Error::SparseRecording {
                record_every: self.record_every,
            });
        }
        Ok(self.iterates.iter().map(|(_, w)| w).collect())
    }

    pub fn final_loss(&self) -> f64 {
        *self.loss_series.last().expect("series is never empty")
    }

    /// Running sums of `K(grad L(W_i))`.
    pub fn k_partial_sums(&self) -> Vec<f64> {
        self.k_value_series
            .iter()
            .scan(0.0, |acc, v| {
                *acc += v;
                Some(*acc)
            })
            .collect()
    }
}

/// Runs DSPGD from the instance's `W0`.
pub fn dspgd_run(
    p: &ProblemInstance,
    loss: &SeparableLoss,
    k: &Preconditioner,
    cfg: &RunConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    let eta_max = k.eta_max(p.n(), &p.spectrum());
    if cfg.eta > eta_max {
        if cfg.strict_eta {
            return Err(Error::StepSizeViolation {
                eta: cfg.eta,
                eta_max,
            });
        }
        log::warn!(
            "{}: eta = {} exceeds the admissible bound {eta_max:.6e}",
            k.name(),
            cfg.eta
        );
    }

    let eta = cfg.eta;
    let mut w = p.w0().clone();
    let mut traj = Trajectory {
        preconditioner: k.name().to_string(),
        eta,
        record_every: cfg.record_every,
        iterates: Vec::new(),
        loss_series: Vec::new(),
        grad_norm_series: Vec::new(),
        k_value_series: Vec::new(),
        final_w: w.clone(),
        converged: false,
        iters_used: 0,
    };
    let mut i = 0;
    loop {
        let g = loss_gradient(p, loss, &w)?;
        let f = loss_value(p, loss, &w)?;
        if !f.is_finite() || !all_finite(&g) || f > LOSS_EXPLOSION {
            return Err(Error::Divergence {
                iteration: i,
                reason: format!("loss {f:e}"),
            });
        }
        let dir = k.grad(&g);
        traj.loss_series.push(f);
        traj.grad_norm_series.push(g.norm());
        traj.k_value_series.push(k.value(&g));
        let done = dir.norm() <= cfg.tol_grad_k && interpolation_residual(p, &w)? <= cfg.tol_interp;
        if done || i == cfg.max_iters {
            traj.iterates.push((i, w.clone()));
            traj.converged = done;
            traj.iters_used = i;
            traj.final_w = w;
            return Ok(traj);
        }
        if i % cfg.record_every == 0 {
            traj.iterates.push((i, w.clone()));
        }
        w = &w - dir * eta;
        i += 1;
    }
}

/// Plain gradient descent, i.e. DSPGD with `K = ||.||^2 / 2`.
pub fn gd_run(p: &ProblemInstance, loss: &SeparableLoss, cfg: &RunConfig) -> Result<Trajectory> {
    let mut traj = dspgd_run(p, loss, &make_quadratic(), cfg)?;
    traj.preconditioner = "gd".into();
    Ok(traj)
}

/// `W^_i = W_{i-1} - eta grad L(W_{i-1})` along a DSPGD trajectory, with the
/// distance to the actual iterate and its bound `eta (L_K + 1) ||grad L(W_{i-1})||`.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliarySeries {
    pub w_hat: Vec<Mat>,
    pub gap: Vec<f64>,
    pub bound: Vec<f64>,
}

impl AuxiliarySeries {
    pub fn bound_holds(&self) -> bool {
        self.gap
            .iter()
            .zip(&self.bound)
            .all(|(g, b)| *g <= b * (1.0 + 1e-12) + 1e-15)
    }
}

pub fn auxiliary_series(
    traj: &Trajectory,
    p: &ProblemInstance,
    loss: &SeparableLoss,
    k: &Preconditioner,
) -> Result<AuxiliarySeries> {
    let ws = traj.consecutive_iterates()?;
    let eta = traj.eta;
    let mut out = AuxiliarySeries {
        w_hat: Vec::with_capacity(ws.len().saturating_sub(1)),
        gap: Vec::new(),
        bound: Vec::new(),
    };
    for pair in ws.windows(2) {
        let g = loss_gradient(p, loss, pair[0])?;
        let w_hat = pair[0] - &g * eta;
        out.gap.push((&w_hat - pair[1]).norm());
        out.bound.push(eta * (k.lipschitz() + 1.0) * g.norm());
        out.w_hat.push(w_hat);
    }
    Ok(out)
}

/// `||X final_w - Y||_F` of a converged run.
pub fn fixed_point_check(traj: &Trajectory, p: &ProblemInstance) -> Result<f64> {
    if !traj.converged {
        return Err(Error::NotConverged {
            iterations: traj.iters_used,
        });
    }
    interpolation_residual(p, &traj.final_w)
}

/// Largest `||W_i - W_{i-1} + eta grad K(grad L(W_{i-1}))|| / (1 + ||W_{i-1}||)`
/// over the recorded steps, recomputed from the stored weights.
pub fn step_consistency(
    traj: &Trajectory,
    p: &ProblemInstance,
    loss: &SeparableLoss,
    k: &Preconditioner,
) -> Result<f64> {
    let ws = traj.consecutive_iterates()?;
    let mut worst: f64 = 0.0;
    for pair in ws.windows(2) {
        let dir = k.grad(&loss_gradient(p, loss, pair[0])?);
        let r = (pair[1] - pair[0] + dir * traj.eta).norm() / (1.0 + pair[0].norm());
        worst = worst.max(r);
    }
    Ok(worst)
}

/// One-step identity reports for every recorded transition, against a fixed
/// probe.
pub fn step_identity_reports(
    traj: &Trajectory,
    p: &ProblemInstance,
    loss: &SeparableLoss,
    k: &Preconditioner,
    probe: &Mat,
) -> Result<Vec<FundamentalReport>> {
    let ws = traj.consecutive_iterates()?;
    ws.windows(2)
        .map(|pair| fundamental_identity_residual(p, loss, k, probe, pair[0], pair[1], traj.eta))
        .collect()
}
