//! Dual reference functions `K` whose gradient acts as the preconditioner.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gaussian, max_abs};
use crate::problem::SpectralInfo;
use crate::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreconditionerKind {
    NormalizedGd,
    GradClip,
    AdamLike,
    Quadratic,
}

impl PreconditionerKind {
    pub const ALL: [PreconditionerKind; 4] = [
        PreconditionerKind::NormalizedGd,
        PreconditionerKind::GradClip,
        PreconditionerKind::AdamLike,
        PreconditionerKind::Quadratic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PreconditionerKind::NormalizedGd => "normalized_gd",
            PreconditionerKind::GradClip => "grad_clip",
            PreconditionerKind::AdamLike => "adam_like",
            PreconditionerKind::Quadratic => "quadratic",
        }
    }
}

impl fmt::Display for PreconditionerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PreconditionerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PreconditionerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown preconditioner `{s}`")))
    }
}

/// A convex, differentiable `K` with `K >= 0` and `K(0) = 0`.
///
/// | kind | `K(Z)` | `grad K(Z)` |
/// |---|---|---|
/// | normalized GD | `h(||Z||)`, `h(t) = t - eps log((eps + t)/eps)` | `Z / (eps + ||Z||)` |
/// | gradient clipping | `||Z||^2/2` inside the eps-ball, `eps ||Z|| - eps^2/2` outside | `min(eps/||Z||, 1) Z` |
/// | Adam-like | `sum |z| - eps log((eps + |z|)/eps)` | `z / (eps + |z|)` entrywise |
/// | quadratic | `||Z||^2 / 2` | `Z` |
///
/// The logarithmic forms carry the additive constant `eps log eps` so that
/// `K(0) = 0`; gradients and Bregman divergences are unaffected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preconditioner {
    kind: PreconditionerKind,
    eps: f64,
}

impl Preconditioner {
    pub fn new(kind: PreconditionerKind, eps: f64) -> Result<Self> {
        match kind {
            PreconditionerKind::Quadratic => Ok(make_quadratic()),
            _ if eps > 0.0 && eps.is_finite() => Ok(Preconditioner { kind, eps }),
            _ => Err(Error::InvalidParameter(format!(
                "{kind} needs a positive finite eps, got {eps}"
            ))),
        }
    }

    pub fn kind(&self) -> PreconditionerKind {
        self.kind
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    /// Smoothing parameter; reported as 1 for the quadratic reference.
    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn is_isotropic(&self) -> bool {
        !matches!(self.kind, PreconditionerKind::AdamLike)
    }

    pub fn value(&self, z: &Mat) -> f64 {
        let eps = self.eps;
        match self.kind {
            PreconditionerKind::NormalizedGd => radial_log(z.norm(), eps),
            PreconditionerKind::AdamLike => z.iter().map(|v| radial_log(v.abs(), eps)).sum(),
            PreconditionerKind::GradClip => {
                let t = z.norm();
                if t <= eps {
                    0.5 * t * t
                } else {
                    eps * t - 0.5 * eps * eps
                }
            }
            PreconditionerKind::Quadratic => 0.5 * z.norm_squared(),
        }
    }

    pub fn grad(&self, z: &Mat) -> Mat {
        let eps = self.eps;
        match self.kind {
            PreconditionerKind::NormalizedGd => z / (eps + z.norm()),
            PreconditionerKind::AdamLike => z.map(|v| v / (eps + v.abs())),
            PreconditionerKind::GradClip => {
                let t = z.norm();
                if t <= eps {
                    z.clone()
                } else {
                    z * (eps / t)
                }
            }
            PreconditionerKind::Quadratic => z.clone(),
        }
    }

    /// `h'(t)` for isotropic `K = h(||.||_F)`; `None` for the Adam-like form.
    pub fn radial_derivative(&self, t: f64) -> Option<f64> {
        let eps = self.eps;
        match self.kind {
            PreconditionerKind::NormalizedGd => Some(t / (eps + t)),
            PreconditionerKind::GradClip => Some(t.min(eps)),
            PreconditionerKind::Quadratic => Some(t),
            PreconditionerKind::AdamLike => None,
        }
    }

    /// Lipschitz constant `L_K` of `grad K`.
    pub fn lipschitz(&self) -> f64 {
        match self.kind {
            PreconditionerKind::NormalizedGd | PreconditionerKind::AdamLike => 1.0 / self.eps,
            PreconditionerKind::GradClip | PreconditionerKind::Quadratic => 1.0,
        }
    }

    /// Strong convexity modulus `m_K` on the ball of the given radius.
    ///
    /// The radius is measured in the Frobenius norm for isotropic kinds and
    /// in the max-entry norm for the Adam-like kind (see [`Self::ball_radius`]).
    /// For clipping outside the eps-ball this is the secant modulus `eps / r`
    /// (the factor multiplying `Z` in `grad K(Z)`).
    pub fn strong_convexity_on_ball(&self, radius: f64) -> f64 {
        let eps = self.eps;
        let r = radius.max(0.0);
        match self.kind {
            PreconditionerKind::NormalizedGd | PreconditionerKind::AdamLike => {
                eps / ((eps + r) * (eps + r))
            }
            PreconditionerKind::GradClip => {
                if r <= eps {
                    1.0
                } else {
                    eps / r
                }
            }
            PreconditionerKind::Quadratic => 1.0,
        }
    }

    /// Radius of the ball containing the gradient `g0` in the norm that
    /// [`Self::strong_convexity_on_ball`] expects.
    pub fn ball_radius(&self, g0: &Mat) -> f64 {
        match self.kind {
            PreconditionerKind::AdamLike => max_abs(g0),
            _ => g0.norm(),
        }
    }

    /// Largest step for which `L* - eta K` stays convex on the span for the
    /// squared loss: `eta <= n / (L_K sigma_1(X X^T))`.
    pub fn eta_max(&self, n: usize, spectrum: &SpectralInfo) -> f64 {
        n as f64 / (self.lipschitz() * spectrum.sigma1_gram)
    }
}

fn radial_log(t: f64, eps: f64) -> f64 {
    // t - eps ln((eps + t)/eps), written with ln_1p for accuracy near 0
    t - eps * (t / eps).ln_1p()
}

pub fn make_normalized_gd(eps: f64) -> Result<Preconditioner> {
    Preconditioner::new(PreconditionerKind::NormalizedGd, eps)
}

pub fn make_grad_clip(eps: f64) -> Result<Preconditioner> {
    Preconditioner::new(PreconditionerKind::GradClip, eps)
}

pub fn make_adam_like(eps: f64) -> Result<Preconditioner> {
    Preconditioner::new(PreconditionerKind::AdamLike, eps)
}

pub fn make_quadratic() -> Preconditioner {
    Preconditioner {
        kind: PreconditionerKind::Quadratic,
        eps: 1.0,
    }
}

/// Worst observed `||grad K(A) - grad K(B)|| / ||A - B||` over random pairs
/// of `rows x cols` matrices in the ball of the given radius. Half of the
/// pairs are independent points, half are close pairs probing the local
/// slope.
pub fn check_lipschitz(
    k: &Preconditioner,
    rows: usize,
    cols: usize,
    samples: usize,
    radius: f64,
    seed: u64,
) -> Result<f64> {
    if samples < 2 {
        return Err(Error::InvalidParameter("need at least 2 samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let point = |rng: &mut ChaCha8Rng| {
        let dir = gaussian(rng, rows, cols);
        let r = radius * rng.random::<f64>();
        &dir * (r / dir.norm().max(f64::MIN_POSITIVE))
    };
    let mut worst = 0.0_f64;
    for s in 0..samples {
        let a = point(&mut rng);
        let b = if s % 2 == 0 {
            point(&mut rng)
        } else {
            let dir = gaussian(&mut rng, rows, cols);
            &a + dir * (1e-3 * radius / (rows * cols) as f64)
        };
        let gap = (&a - &b).norm();
        if gap > 0.0 {
            worst = worst.max((k.grad(&a) - k.grad(&b)).norm() / gap);
        }
    }
    Ok(worst)
}
