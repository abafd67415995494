//! Interpolating reference solutions `argmin ||W - W0||_p s.t. XW = Y` for
//! `p` in {1, 2, inf}.

pub mod lp;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::ProblemInstance;
use crate::Mat;

pub use lp::{lp_solve, vertex_enumeration_oracle, LinearProgram, LpSolution};

/// Condition number of `X X^T` above which gram solves are refused.
pub const MAX_GRAM_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PNorm {
    L1,
    L2,
    Linf,
}

impl PNorm {
    pub fn name(self) -> &'static str {
        match self {
            PNorm::L1 => "L1",
            PNorm::L2 => "L2",
            PNorm::Linf => "Linf",
        }
    }

    /// Entrywise norm of a matrix.
    pub fn norm(self, m: &Mat) -> f64 {
        match self {
            PNorm::L1 => m.iter().map(|v| v.abs()).sum(),
            PNorm::L2 => m.norm(),
            PNorm::Linf => crate::linalg::max_abs(m),
        }
    }
}

impl fmt::Display for PNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L1" | "l1" | "1" => Ok(PNorm::L1),
            "L2" | "l2" | "2" => Ok(PNorm::L2),
            "Linf" | "linf" | "inf" => Ok(PNorm::Linf),
            _ => Err(Error::Config(format!("unknown norm `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Certificate {
    /// KKT multiplier `Lambda` with `W* - W0 = -X^T Lambda`.
    Multiplier(Mat),
    /// Optimal bases and dual values, one per solved LP (one per output
    /// column for column-wise L1).
    Lp(Vec<LpSolution>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    pub w_star: Mat,
    pub p_norm: PNorm,
    pub objective: f64,
    pub certificate: Certificate,
}

impl ReferenceSolution {
    fn checked(p: &ProblemInstance, w_star: Mat, p_norm: PNorm, certificate: Certificate) -> Result<Self> {
        let resid = (p.x() * &w_star - p.y()).norm();
        if resid > 1e-8 * (1.0 + p.y().norm()) {
            return Err(Error::Precondition(format!(
                "{p_norm} reference does not interpolate (residual {resid:e})"
            )));
        }
        let objective = p_norm.norm(&(&w_star - p.w0()));
        Ok(ReferenceSolution {
            w_star,
            p_norm,
            objective,
            certificate,
        })
    }
}

/// Solves `X X^T Z = rhs` by Cholesky, refusing ill-conditioned grams.
pub fn gram_solve(p: &ProblemInstance, rhs: &Mat) -> Result<Mat> {
    let cond = p.spectrum().condition();
    if cond > MAX_GRAM_CONDITION {
        return Err(Error::IllConditioned { condition: cond });
    }
    let gram = p.x() * p.x().transpose();
    let chol = gram
        .cholesky()
        .ok_or(Error::IllConditioned { condition: f64::INFINITY })?;
    Ok(chol.solve(rhs))
}

/// `W* = W0 - X^T Lambda`, `Lambda = (X X^T)^{-1} (X W0 - Y)`.
pub fn min_l2_solution(p: &ProblemInstance) -> Result<ReferenceSolution> {
    let lambda = gram_solve(p, &(p.x() * p.w0() - p.y()))?;
    let w_star = p.w0() - p.x().transpose() * &lambda;
    ReferenceSolution::checked(p, w_star, PNorm::L2, Certificate::Multiplier(lambda))
}

/// Minimum l1 or linf distance interpolator via the simplex solver.
///
/// L1 splits `w - w0 = u - v` with `u, v >= 0` and minimizes `sum(u + v)`;
/// with several outputs it decomposes column by column. Linf minimizes `t`
/// subject to `|w_j - w0_j| <= t` and only supports `k = 1`.
pub fn min_lp_solution(p: &ProblemInstance, p_norm: PNorm) -> Result<ReferenceSolution> {
    let (d, k) = (p.d(), p.k());
    match p_norm {
        PNorm::L2 => min_l2_solution(p),
        PNorm::L1 => {
            let mut w_star = Mat::zeros(d, k);
            let mut sols = Vec::with_capacity(k);
            for j in 0..k {
                let (lp, _) = l1_program(p, j);
                let sol = lp_solve(&lp)?;
                for i in 0..d {
                    w_star[(i, j)] = p.w0()[(i, j)] + sol.x[i] - sol.x[d + i];
                }
                sols.push(sol);
            }
            ReferenceSolution::checked(p, w_star, PNorm::L1, Certificate::Lp(sols))
        }
        PNorm::Linf => {
            if k != 1 {
                return Err(Error::Unsupported(
                    "Linf reference is only defined for single-output problems".into(),
                ));
            }
            let lp = linf_program(p);
            let sol = lp_solve(&lp)?;
            let mut w_star = p.w0().clone();
            for i in 0..d {
                w_star[(i, 0)] += sol.x[i] - sol.x[d + i];
            }
            ReferenceSolution::checked(p, w_star, PNorm::Linf, Certificate::Lp(vec![sol]))
        }
    }
}

/// `X u - X v = y_j - X w0_j`, variables `[u; v]`.
fn l1_program(p: &ProblemInstance, j: usize) -> (LinearProgram, usize) {
    let (n, d) = (p.n(), p.d());
    let rhs = p.y().column(j) - p.x() * p.w0().column(j);
    let mut a = Mat::zeros(n, 2 * d);
    for r in 0..n {
        for c in 0..d {
            a[(r, c)] = p.x()[(r, c)];
            a[(r, d + c)] = -p.x()[(r, c)];
        }
    }
    let lp = LinearProgram::new(vec![1.0; 2 * d], a, rhs.iter().cloned().collect()).expect("consistent shapes");
    (lp, 2 * d)
}

/// Variables `[u (d); v (d); t; s+ (d); s- (d)]`:
/// `X(u - v) = y - X w0`, `u - v - t + s+ = 0`, `-u + v - t + s- = 0`.
fn linf_program(p: &ProblemInstance) -> LinearProgram {
    let (n, d) = (p.n(), p.d());
    let nv = 4 * d + 1;
    let t = 2 * d;
    let mut a = Mat::zeros(n + 2 * d, nv);
    let mut b = vec![0.0; n + 2 * d];
    let rhs = p.y().column(0) - p.x() * p.w0().column(0);
    for r in 0..n {
        for c in 0..d {
            a[(r, c)] = p.x()[(r, c)];
            a[(r, d + c)] = -p.x()[(r, c)];
        }
        b[r] = rhs[r];
    }
    for j in 0..d {
        let up = n + j;
        a[(up, j)] = 1.0;
        a[(up, d + j)] = -1.0;
        a[(up, t)] = -1.0;
        a[(up, t + 1 + j)] = 1.0;
        let lo = n + d + j;
        a[(lo, j)] = -1.0;
        a[(lo, d + j)] = 1.0;
        a[(lo, t)] = -1.0;
        a[(lo, t + 1 + d + j)] = 1.0;
    }
    let mut cost = vec![0.0; nv];
    cost[t] = 1.0;
    LinearProgram::new(cost, a, b).expect("consistent shapes")
}
