//! Bregman divergences and residual checks for the identities relating the
//! adjusted divergence to the DSPGD step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::inner;
use crate::loss::{dual_at_gradient, loss_gradient, loss_value, SeparableLoss};
use crate::precond::Preconditioner;
use crate::problem::ProblemInstance;
use crate::Mat;

/// A differentiable scalar functional on matrices.
pub trait Differentiable {
    fn value(&self, z: &Mat) -> Result<f64>;
    fn gradient(&self, z: &Mat) -> Result<Mat>;
}

impl Differentiable for Preconditioner {
    fn value(&self, z: &Mat) -> Result<f64> {
        Ok(Preconditioner::value(self, z))
    }
    fn gradient(&self, z: &Mat) -> Result<Mat> {
        Ok(self.grad(z))
    }
}

/// `f(Z) = ||Z||_F^2 / 2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct HalfSquaredNorm;

impl Differentiable for HalfSquaredNorm {
    fn value(&self, z: &Mat) -> Result<f64> {
        Ok(0.5 * z.norm_squared())
    }
    fn gradient(&self, z: &Mat) -> Result<Mat> {
        Ok(z.clone())
    }
}

/// The training loss `W -> L(W)` of an instance.
#[derive(Debug, Clone, Copy)]
pub struct LossFunctional<'a> {
    pub problem: &'a ProblemInstance,
    pub loss: &'a SeparableLoss,
}

impl Differentiable for LossFunctional<'_> {
    fn value(&self, z: &Mat) -> Result<f64> {
        loss_value(self.problem, self.loss, z)
    }
    fn gradient(&self, z: &Mat) -> Result<Mat> {
        loss_gradient(self.problem, self.loss, z)
    }
}

/// Argument order of the linear term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// `f(A) - f(B) - <grad f(A), A - B>`: gradient at the first argument.
    FirstArgument,
    /// `f(A) - f(B) - <grad f(B), A - B>`: the usual convention, nonnegative
    /// for convex `f`.
    Standard,
}

fn same_shape(op: &'static str, a: &Mat, b: &Mat) -> Result<()> {
    crate::error::check_shape(op, b, a.nrows(), a.ncols())
}

/// Bregman divergence with the gradient taken at the first argument,
/// `f(a) - f(b) - Tr(grad f(a)^T (a - b))`. Equals `-D(b, a)` in the
/// standard convention, hence nonpositive for convex `f`.
pub fn bregman_div<F: Differentiable + ?Sized>(f: &F, a: &Mat, b: &Mat) -> Result<f64> {
    bregman_div_with(f, a, b, Convention::FirstArgument)
}

pub fn bregman_div_with<F: Differentiable + ?Sized>(
    f: &F,
    a: &Mat,
    b: &Mat,
    convention: Convention,
) -> Result<f64> {
    same_shape("bregman_div", a, b)?;
    let g = match convention {
        Convention::FirstArgument => f.gradient(a)?,
        Convention::Standard => f.gradient(b)?,
    };
    Ok(f.value(a)? - f.value(b)? - inner(&g, &(a - b)))
}

/// Standard-convention divergence `D_f(a, b) = f(a) - f(b) - <grad f(b), a - b>`.
pub fn bregman_div_standard<F: Differentiable + ?Sized>(f: &F, a: &Mat, b: &Mat) -> Result<f64> {
    bregman_div_with(f, a, b, Convention::Standard)
}

/// `L*(grad L(a)) - L*(grad L(b)) - Tr(b^T (grad L(a) - grad L(b)))`.
pub fn adjusted_bregman_div(
    p: &ProblemInstance,
    loss: &SeparableLoss,
    a: &Mat,
    b: &Mat,
) -> Result<f64> {
    let ga = loss_gradient(p, loss, a)?;
    let gb = loss_gradient(p, loss, b)?;
    let da = dual_at_gradient(p, loss, a)?;
    let db = dual_at_gradient(p, loss, b)?;
    Ok(da - db - inner(b, &(ga - gb)))
}

/// Two sides of an identity and their disagreement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub lhs: f64,
    pub rhs: f64,
    pub abs_residual: f64,
    pub rel_residual: f64,
}

impl IdentityReport {
    pub fn new(lhs: f64, rhs: f64) -> Self {
        let abs_residual = (lhs - rhs).abs();
        IdentityReport {
            lhs,
            rhs,
            abs_residual,
            rel_residual: abs_residual / (1.0 + lhs.abs().max(rhs.abs())),
        }
    }

    pub fn within(&self, rel_tol: f64) -> bool {
        self.rel_residual <= rel_tol
    }
}

/// `D~(C,A) + D~(A,B) - D~(C,B) = Tr((B-A)^T (grad L(C) - grad L(A)))`.
pub fn three_point_residual(
    p: &ProblemInstance,
    loss: &SeparableLoss,
    a: &Mat,
    b: &Mat,
    c: &Mat,
) -> Result<IdentityReport> {
    let lhs = adjusted_bregman_div(p, loss, c, a)? + adjusted_bregman_div(p, loss, a, b)?
        - adjusted_bregman_div(p, loss, c, b)?;
    let gc = loss_gradient(p, loss, c)?;
    let ga = loss_gradient(p, loss, a)?;
    let rhs = inner(&(b - a), &(gc - ga));
    Ok(IdentityReport::new(lhs, rhs))
}

/// Residual of the one-step identity under both argument orders of `D_K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FundamentalReport {
    pub standard: IdentityReport,
    pub first_argument: IdentityReport,
}

impl FundamentalReport {
    /// The report under the convention with the smaller residual.
    pub fn best(&self) -> (Convention, IdentityReport) {
        if self.standard.rel_residual <= self.first_argument.rel_residual {
            (Convention::Standard, self.standard)
        } else {
            (Convention::FirstArgument, self.first_argument)
        }
    }

    /// Conventions whose residual is within `rel_tol`.
    pub fn vanishing(&self, rel_tol: f64) -> Vec<Convention> {
        let mut v = Vec::new();
        if self.standard.within(rel_tol) {
            v.push(Convention::Standard);
        }
        if self.first_argument.within(rel_tol) {
            v.push(Convention::FirstArgument);
        }
        v
    }
}

/// Tolerance used to confirm that `w_next` is the DSPGD step from `w_prev`.
pub const STEP_CONSISTENCY_TOL: f64 = 1e-12;

fn check_step(
    p: &ProblemInstance,
    loss: &SeparableLoss,
    k: &Preconditioner,
    w_prev: &Mat,
    w_next: &Mat,
    eta: f64,
) -> Result<()> {
    let expected = w_prev - k.grad(&loss_gradient(p, loss, w_prev)?) * eta;
    let gap = (w_next - &expected).norm();
    if gap > STEP_CONSISTENCY_TOL * (1.0 + w_prev.norm()) {
        return Err(Error::Precondition(format!(
            "w_next is not a DSPGD step from w_prev (gap {gap:e})"
        )));
    }
    Ok(())
}

/// Checks
///
/// `D~(W,W_{i-1}) = D~(W,W_i) + eta K(G_i) - eta K(G) + D~(W_i,W_{i-1})
///                  - eta D_K(G_i,G_{i-1}) + eta D_K(G,G_{i-1})`
///
/// with `G = grad L(W)`, every term evaluated independently.
pub fn fundamental_identity_residual(
    p: &ProblemInstance,
    loss: &SeparableLoss,
    k: &Preconditioner,
    w: &Mat,
    w_prev: &Mat,
    w_next: &Mat,
    eta: f64,
) -> Result<FundamentalReport> {
    p.check_weights("fundamental_identity_residual", w)?;
    p.check_weights("fundamental_identity_residual", w_prev)?;
    p.check_weights("fundamental_identity_residual", w_next)?;
    check_step(p, loss, k, w_prev, w_next, eta)?;

    let lhs = adjusted_bregman_div(p, loss, w, w_prev)?;
    let g = loss_gradient(p, loss, w)?;
    let g_next = loss_gradient(p, loss, w_next)?;
    let g_prev = loss_gradient(p, loss, w_prev)?;
    let common = adjusted_bregman_div(p, loss, w, w_next)? + eta * k.value(&g_next) - eta * k.value(&g)
        + adjusted_bregman_div(p, loss, w_next, w_prev)?;
    let rhs_for = |c: Convention| -> Result<f64> {
        Ok(common - eta * bregman_div_with(k, &g_next, &g_prev, c)?
            + eta * bregman_div_with(k, &g, &g_prev, c)?)
    };
    Ok(FundamentalReport {
        standard: IdentityReport::new(lhs, rhs_for(Convention::Standard)?),
        first_argument: IdentityReport::new(lhs, rhs_for(Convention::FirstArgument)?),
    })
}

/// `D~(a,b) - eta D_K(grad L(a), grad L(b))` with the standard `D_K`;
/// nonnegative whenever `L* - eta K` is convex on the span.
pub fn lemma3_gap(
    p: &ProblemInstance,
    loss: &SeparableLoss,
    k: &Preconditioner,
    a: &Mat,
    b: &Mat,
    eta: f64,
) -> Result<f64> {
    let ga = loss_gradient(p, loss, a)?;
    let gb = loss_gradient(p, loss, b)?;
    Ok(adjusted_bregman_div(p, loss, a, b)? - eta * bregman_div_standard(k, &ga, &gb)?)
}

/// Sums the one-step identity over consecutive iterates: the left side is
/// `D~(W, W_0) - D~(W, W_t)`, the right side the sum of the remaining
/// per-step terms (standard `D_K`).
pub fn telescoped_residual(
    p: &ProblemInstance,
    loss: &SeparableLoss,
    k: &Preconditioner,
    probe: &Mat,
    iterates: &[Mat],
    eta: f64,
) -> Result<IdentityReport> {
    let (Some(first), Some(last)) = (iterates.first(), iterates.last()) else {
        return Err(Error::Precondition("no iterates".into()));
    };
    let lhs = adjusted_bregman_div(p, loss, probe, first)? - adjusted_bregman_div(p, loss, probe, last)?;
    let g = loss_gradient(p, loss, probe)?;
    let k_probe = k.value(&g);
    let mut rhs = 0.0;
    for pair in iterates.windows(2) {
        let (prev, next) = (&pair[0], &pair[1]);
        check_step(p, loss, k, prev, next, eta)?;
        let g_prev = loss_gradient(p, loss, prev)?;
        let g_next = loss_gradient(p, loss, next)?;
        rhs += eta * k.value(&g_next) - eta * k_probe + adjusted_bregman_div(p, loss, next, prev)?
            - eta * bregman_div_standard(k, &g_next, &g_prev)?
            + eta * bregman_div_standard(k, &g, &g_prev)?;
    }
    Ok(IdentityReport::new(lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gaussian;
    use crate::precond::{make_adam_like, make_grad_clip, make_normalized_gd, make_quadratic};
    use crate::problem::{generate, GenSpec};
    use crate::reference::min_l2_solution;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m(rows: usize, vals: &[f64]) -> Mat {
        Mat::from_row_slice(rows, vals.len() / rows, vals)
    }

    fn toy() -> ProblemInstance {
        ProblemInstance::new(m(1, &[1.0, 0.0]), m(1, &[1.0]), Mat::zeros(2, 1)).unwrap()
    }

    #[test]
    fn bregman_equal_arguments_vanish() {
        let a = m(2, &[1.0, -2.0]);
        assert_eq!(bregman_div(&HalfSquaredNorm, &a, &a).unwrap(), 0.0);
        assert_eq!(bregman_div(&make_normalized_gd(1.0).unwrap(), &a, &a).unwrap(), 0.0);
    }

    #[test]
    fn half_squared_norm_first_argument_convention() {
        // expansion: 1/2 - 0 - 1*(1 - 0) = -1/2
        let v = bregman_div(&HalfSquaredNorm, &m(1, &[1.0]), &m(1, &[0.0])).unwrap();
        assert_eq!(v, -0.5);
        let s = bregman_div_standard(&HalfSquaredNorm, &m(1, &[1.0]), &m(1, &[0.0])).unwrap();
        assert_eq!(s, 0.5);
    }

    #[test]
    fn clip_quadratic_branch_matches_half_squared_norm() {
        let k = make_grad_clip(10.0).unwrap();
        let (a, b) = (m(2, &[1.0, 2.0]), m(2, &[-0.5, 0.25]));
        let lhs = bregman_div(&k, &a, &b).unwrap();
        let rhs = bregman_div(&HalfSquaredNorm, &a, &b).unwrap();
        assert!((lhs - rhs).abs() < 1e-15);
    }

    #[test]
    fn adjusted_divergence_toy_value() {
        let p = toy();
        let loss = SeparableLoss::squared();
        let a = Mat::zeros(2, 1);
        let b = m(2, &[1.0, 0.0]);
        // L*(grad L(a)) = -1 + 1/2, L*(grad L(b)) = 0, linear term -(1 * -1)
        assert!((adjusted_bregman_div(&p, &loss, &a, &b).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(adjusted_bregman_div(&p, &loss, &a, &a).unwrap(), 0.0);
    }

    #[test]
    fn adjusted_divergence_is_nonnegative_and_matches_squared_form() {
        // For the squared loss D~(a,b) = ||X(a-b)||^2 / (2n), computed here
        // directly as an independent oracle.
        let p = generate(&GenSpec::new(5, 20, 2, 4)).unwrap();
        let loss = SeparableLoss::squared();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let a = gaussian(&mut rng, 20, 2);
            let b = gaussian(&mut rng, 20, 2);
            let v = adjusted_bregman_div(&p, &loss, &a, &b).unwrap();
            let oracle = (p.x() * (&a - &b)).norm_squared() / 10.0;
            assert!(v >= 0.0);
            assert!((v - oracle).abs() <= 1e-10 * (1.0 + oracle));
        }
    }

    #[test]
    fn three_point_examples() {
        let p = generate(&GenSpec::new(5, 20, 1, 3)).unwrap();
        let loss = SeparableLoss::squared();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = gaussian(&mut rng, 20, 1);
        let b = gaussian(&mut rng, 20, 1);
        let c = gaussian(&mut rng, 20, 1);
        assert!(three_point_residual(&p, &loss, &a, &b, &c).unwrap().rel_residual <= 1e-10);
        let same = three_point_residual(&p, &loss, &a, &a, &a).unwrap();
        assert_eq!((same.lhs, same.rhs), (0.0, 0.0));
        let ca = three_point_residual(&p, &loss, &a, &b, &a).unwrap();
        assert_eq!(ca.rhs, 0.0);
        assert!(ca.abs_residual < 1e-12);
    }

    #[test]
    fn fundamental_identity_closes_in_standard_convention() {
        let p = generate(&GenSpec::new(5, 20, 3, 2)).unwrap();
        let loss = SeparableLoss::squared();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let interp = min_l2_solution(&p).unwrap().w_star;
        let ks = [
            make_normalized_gd(1.0).unwrap(),
            make_grad_clip(1.0).unwrap(),
            make_adam_like(0.5).unwrap(),
            make_quadratic(),
        ];
        for k in &ks {
            let eta = 0.5 * k.eta_max(p.n(), &p.spectrum());
            let w_prev = gaussian(&mut rng, 20, 3);
            let w_next = &w_prev - k.grad(&loss_gradient(&p, &loss, &w_prev).unwrap()) * eta;
            for probe in [gaussian(&mut rng, 20, 3), interp.clone(), w_prev.clone()] {
                let r = fundamental_identity_residual(&p, &loss, k, &probe, &w_prev, &w_next, eta).unwrap();
                assert!(r.standard.rel_residual <= 1e-9, "{} {:?}", k.name(), r);
                assert_eq!(r.best().0, Convention::Standard);
            }
        }
    }

    #[test]
    fn fundamental_identity_rejects_non_steps() {
        let p = generate(&GenSpec::new(5, 20, 1, 1)).unwrap();
        let loss = SeparableLoss::squared();
        let k = make_quadratic();
        let w = p.w0().clone();
        let err = fundamental_identity_residual(&p, &loss, &k, &w, &w, &(&w * 2.0), 0.1);
        assert!(matches!(err, Err(Error::Precondition(_))));
    }

    #[test]
    fn step_gap_quadratic_threshold() {
        // L* - eta/2 ||X^T Lambda||^2 is convex iff n I >= eta X X^T.
        let p = generate(&GenSpec::new(5, 20, 1, 6)).unwrap();
        let loss = SeparableLoss::squared();
        let k = make_quadratic();
        let s = p.spectrum();
        let eta = 5.0 / s.sigma1_gram;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let a = gaussian(&mut rng, 20, 1);
            let b = gaussian(&mut rng, 20, 1);
            assert!(lemma3_gap(&p, &loss, &k, &a, &b, eta).unwrap() >= -1e-12);
        }
        // beyond the threshold some direction turns negative: the top
        // eigenvector of the gram, lifted through X^T.
        let eig = nalgebra::SymmetricEigen::new(p.x() * p.x().transpose());
        let top = eig.eigenvalues.imax();
        let lam = Mat::from_column_slice(5, 1, eig.eigenvectors.column(top).as_slice());
        let a = p.x().transpose() * gram_inverse_apply(&p, &lam);
        let gap = lemma3_gap(&p, &loss, &k, &a, &Mat::zeros(20, 1), 2.0 * eta).unwrap();
        assert!(gap < 0.0);
        assert_eq!(lemma3_gap(&p, &loss, &k, &a, &a, eta).unwrap(), 0.0);
    }

    fn gram_inverse_apply(p: &ProblemInstance, v: &Mat) -> Mat {
        crate::reference::gram_solve(p, v).unwrap()
    }

    #[test]
    fn telescoped_sum_matches_endpoint_difference() {
        let p = generate(&GenSpec::new(5, 20, 1, 1)).unwrap();
        let loss = SeparableLoss::squared();
        let k = make_normalized_gd(1.0).unwrap();
        let eta = 0.5 * k.eta_max(p.n(), &p.spectrum());
        let mut iterates = vec![p.w0().clone()];
        for _ in 0..50 {
            let w = iterates.last().unwrap();
            let next = w - k.grad(&loss_gradient(&p, &loss, w).unwrap()) * eta;
            iterates.push(next);
        }
        let probe = min_l2_solution(&p).unwrap().w_star;
        let r = telescoped_residual(&p, &loss, &k, &probe, &iterates, eta).unwrap();
        assert!(r.rel_residual <= 1e-8, "{r:?}");
    }
}
