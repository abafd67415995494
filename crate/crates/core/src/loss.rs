//! Separable convex losses `L(W) = (1/n) sum_ij l(x_i^T W^(j) - Y_ij)`,
//! their gradients and the Fenchel dual restricted to the span subspace
//! `S = { X^T Lambda }`.

use std::fmt;
use std::sync::Arc;

use crate::error::{check_shape, Error, Result};
use crate::problem::ProblemInstance;
use crate::{reference, Mat};

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Squared,
    Custom,
}

/// Entrywise convex loss with strong convexity constant `mu` and gradient
/// Lipschitz constant `m_upper`. The same scalar function is applied to every
/// entry of the residual.
#[derive(Clone)]
pub struct SeparableLoss {
    kind: LossKind,
    name: String,
    value: ScalarFn,
    deriv: ScalarFn,
    mu: f64,
    m_upper: f64,
}

impl fmt::Debug for SeparableLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SeparableLoss")
            .field("kind", &self.kind)
            .field("name", &self.name)
            .field("mu", &self.mu)
            .field("m_upper", &self.m_upper)
            .finish()
    }
}

impl SeparableLoss {
    /// `l(z) = z^2 / 2`, `mu = M = 1`.
    pub fn squared() -> Self {
        SeparableLoss {
            kind: LossKind::Squared,
            name: "squared".into(),
            value: Arc::new(|z| 0.5 * z * z),
            deriv: Arc::new(|z| z),
            mu: 1.0,
            m_upper: 1.0,
        }
    }

    /// A user-supplied loss. Convexity and monotonicity of the derivative are
    /// spot-checked on a grid over `[-10, 10]`; the dual is evaluated by an
    /// inner numeric solve.
    pub fn custom<V, D>(name: &str, value: V, deriv: D, mu: f64, m_upper: f64) -> Result<Self>
    where
        V: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if !(mu > 0.0 && m_upper >= mu && m_upper.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < mu <= M < inf, got mu={mu}, M={m_upper}"
            )));
        }
        let loss = SeparableLoss {
            kind: LossKind::Custom,
            name: name.to_string(),
            value: Arc::new(value),
            deriv: Arc::new(deriv),
            mu,
            m_upper,
        };
        loss.spot_check()?;
        Ok(loss)
    }

    fn spot_check(&self) -> Result<()> {
        let grid: Vec<f64> = (0..=400).map(|i| -10.0 + 0.05 * i as f64).collect();
        for w in grid.windows(3) {
            let (a, b, c) = (w[0], w[1], w[2]);
            let (da, db) = ((self.deriv)(a), (self.deriv)(b));
            if db < da - 1e-12 * (1.0 + da.abs()) {
                return Err(Error::InvalidParameter(format!(
                    "loss derivative decreases between {a} and {b}"
                )));
            }
            let mid = (self.value)(b);
            let chord = 0.5 * ((self.value)(a) + (self.value)(c));
            if mid > chord + 1e-12 * (1.0 + chord.abs()) {
                return Err(Error::InvalidParameter(format!("loss is not convex near {b}")));
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }
    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn mu(&self) -> f64 {
        self.mu
    }
    pub fn m_upper(&self) -> f64 {
        self.m_upper
    }
    pub fn entry_value(&self, z: f64) -> f64 {
        (self.value)(z)
    }
    pub fn entry_deriv(&self, z: f64) -> f64 {
        (self.deriv)(z)
    }
}

/// Element `X^T lambda` of the span subspace, stored by its coefficients
/// `lambda` (n x k). The representation is unique since `X` has full row
/// rank.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanElement {
    pub lambda: Mat,
}

impl SpanElement {
    pub fn new(lambda: Mat) -> Self {
        SpanElement { lambda }
    }

    pub fn to_matrix(&self, p: &ProblemInstance) -> Mat {
        p.x().transpose() * &self.lambda
    }

    /// Least-squares coefficients of `g` on the span, with the Frobenius
    /// distance from `g` to the span.
    pub fn project(p: &ProblemInstance, g: &Mat) -> Result<(SpanElement, f64)> {
        p.check_weights("SpanElement::project", g)?;
        let lambda = reference::gram_solve(p, &(p.x() * g))?;
        let elem = SpanElement { lambda };
        let dist = (g - elem.to_matrix(p)).norm();
        Ok((elem, dist))
    }
}

/// `XW - Y`.
pub fn residual(p: &ProblemInstance, w: &Mat) -> Result<Mat> {
    p.check_weights("residual", w)?;
    Ok(p.x() * w - p.y())
}

pub fn loss_value(p: &ProblemInstance, loss: &SeparableLoss, w: &Mat) -> Result<f64> {
    let r = residual(p, w)?;
    Ok(r.iter().map(|&z| loss.entry_value(z)).sum::<f64>() / p.n() as f64)
}

/// `Lambda_ij = l'(x_i^T W^(j) - Y_ij) / n`, so that `grad L(W) = X^T Lambda`.
pub fn residual_coefficients(p: &ProblemInstance, loss: &SeparableLoss, w: &Mat) -> Result<Mat> {
    let n = p.n() as f64;
    Ok(residual(p, w)?.map(|z| loss.entry_deriv(z) / n))
}

pub fn loss_gradient(p: &ProblemInstance, loss: &SeparableLoss, w: &Mat) -> Result<Mat> {
    Ok(p.x().transpose() * residual_coefficients(p, loss, w)?)
}

/// Smallest achievable loss; attained at any interpolator, evaluated at the
/// minimum-l2 one.
pub fn min_loss(p: &ProblemInstance, loss: &SeparableLoss) -> Result<f64> {
    let w = reference::min_l2_solution(p)?.w_star;
    loss_value(p, loss, &w)
}

pub const INNER_MAX_ITERS: usize = 1_000_000;
pub const INNER_TOL: f64 = 1e-10;

/// Fenchel dual `L*(X^T Lambda) = sup_W Tr(W^T X^T Lambda) - L(W)`.
///
/// For the squared loss the supremum is attained where `XW - Y = n Lambda`,
/// giving `Tr(Y^T Lambda) + (n/2) ||Lambda||^2`. Other losses use gradient
/// ascent over `W0 + S` with step `n / (M sigma_1)`.
pub fn dual_value(p: &ProblemInstance, loss: &SeparableLoss, g: &SpanElement) -> Result<f64> {
    check_shape("dual_value", &g.lambda, p.n(), p.k())?;
    match loss.kind() {
        LossKind::Squared => {
            let lin: f64 = p.y().iter().zip(g.lambda.iter()).map(|(a, b)| a * b).sum();
            Ok(lin + 0.5 * p.n() as f64 * g.lambda.norm_squared())
        }
        LossKind::Custom => dual_value_numeric(p, loss, g),
    }
}

/// Inner-solve route to the dual; usable for any loss, including the squared
/// loss as a cross-check of the closed form.
pub fn dual_value_numeric(p: &ProblemInstance, loss: &SeparableLoss, g: &SpanElement) -> Result<f64> {
    check_shape("dual_value_numeric", &g.lambda, p.n(), p.k())?;
    let target = g.to_matrix(p);
    let step = p.n() as f64 / (loss.m_upper() * p.spectrum().sigma1_gram);
    let mut w = p.w0().clone();
    let mut gnorm = f64::INFINITY;
    for _ in 0..INNER_MAX_ITERS {
        let ascent = &target - loss_gradient(p, loss, &w)?;
        gnorm = ascent.norm();
        if !gnorm.is_finite() {
            break;
        }
        if gnorm <= INNER_TOL {
            let lin = crate::linalg::inner(&w, &target);
            return Ok(lin - loss_value(p, loss, &w)?);
        }
        w += ascent * step;
    }
    Err(Error::InnerSolve {
        grad_norm: gnorm,
        iterations: INNER_MAX_ITERS,
    })
}

/// `L*(grad L(W))`, using the residual coefficients as the span coordinates.
pub fn dual_at_gradient(p: &ProblemInstance, loss: &SeparableLoss, w: &Mat) -> Result<f64> {
    let lambda = residual_coefficients(p, loss, w)?;
    dual_value(p, loss, &SpanElement::new(lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian, inner};
    use crate::problem::{generate, GenSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> ProblemInstance {
        let x = Mat::from_row_slice(1, 2, &[1.0, 0.0]);
        ProblemInstance::new(x, Mat::from_element(1, 1, 1.0), Mat::zeros(2, 1)).unwrap()
    }

    /// `z^2/2 + log cosh z`: second derivative `1 + sech^2 z` in `[1, 2]`.
    fn logcosh_plus_quadratic() -> SeparableLoss {
        SeparableLoss::custom(
            "quad_logcosh",
            |z: f64| 0.5 * z * z + z.cosh().ln(),
            |z: f64| z + z.tanh(),
            1.0,
            2.0,
        )
        .unwrap()
    }

    #[test]
    fn squared_loss_examples() {
        let p = toy();
        let sq = SeparableLoss::squared();
        assert_eq!(loss_value(&p, &sq, &Mat::zeros(2, 1)).unwrap(), 0.5);
        let w = Mat::from_column_slice(2, 1, &[1.0, 0.0]);
        assert_eq!(loss_value(&p, &sq, &w).unwrap(), 0.0);
        let g = loss_gradient(&p, &sq, &Mat::zeros(2, 1)).unwrap();
        assert_eq!(g, Mat::from_column_slice(2, 1, &[-1.0, 0.0]));
        assert_eq!(loss_gradient(&p, &sq, &w).unwrap(), Mat::zeros(2, 1));
        assert!(loss_value(&p, &sq, &Mat::zeros(3, 1)).is_err());
    }

    #[test]
    fn two_sample_residual_sum() {
        // residual [[1],[1]]: direct summation gives (1/2)(1/2 + 1/2) = 0.5
        let x = Mat::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let p = ProblemInstance::new(x, Mat::zeros(2, 1), Mat::zeros(3, 1)).unwrap();
        let w = Mat::from_column_slice(3, 1, &[1.0, 1.0, 7.0]);
        let sq = SeparableLoss::squared();
        let r = residual(&p, &w).unwrap();
        let direct: f64 = r.iter().map(|z| 0.5 * z * z).sum::<f64>() / 2.0;
        assert_eq!(direct, 0.5);
        assert_eq!(loss_value(&p, &sq, &w).unwrap(), direct);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let p = generate(&GenSpec::new(5, 20, 1, 11)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = gaussian(&mut rng, 20, 1);
        for loss in [SeparableLoss::squared(), logcosh_plus_quadratic()] {
            let g = loss_gradient(&p, &loss, &w).unwrap();
            let h = 1e-6;
            for j in 0..20 {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[(j, 0)] += h;
                wm[(j, 0)] -= h;
                let fd = (loss_value(&p, &loss, &wp).unwrap() - loss_value(&p, &loss, &wm).unwrap())
                    / (2.0 * h);
                assert!(
                    (fd - g[(j, 0)]).abs() <= 1e-6 * (1.0 + g[(j, 0)].abs()),
                    "{}: coord {j}: fd {fd} vs {}",
                    loss.name(),
                    g[(j, 0)]
                );
            }
        }
    }

    #[test]
    fn coefficients_examples_and_factorization() {
        let x = Mat::from_row_slice(1, 2, &[1.0, 0.0]);
        let p = ProblemInstance::new(x, Mat::from_element(1, 1, -2.0), Mat::zeros(2, 1)).unwrap();
        let sq = SeparableLoss::squared();
        let lam = residual_coefficients(&p, &sq, &Mat::zeros(2, 1)).unwrap();
        assert_eq!(lam, Mat::from_element(1, 1, 2.0));

        let p = generate(&GenSpec::new(5, 20, 3, 4)).unwrap();
        let w = p.w_true().unwrap().clone();
        assert_eq!(residual_coefficients(&p, &sq, &w).unwrap(), Mat::zeros(5, 3));
        let w = p.w0().clone();
        let lam = residual_coefficients(&p, &sq, &w).unwrap();
        let g = loss_gradient(&p, &sq, &w).unwrap();
        assert!((p.x().transpose() * lam - g).norm() <= 1e-12);
    }

    #[test]
    fn dual_closed_form_examples() {
        let p = toy();
        let sq = SeparableLoss::squared();
        assert_eq!(dual_value(&p, &sq, &SpanElement::new(Mat::zeros(1, 1))).unwrap(), 0.0);
        let lam = SpanElement::new(Mat::from_element(1, 1, 2.0));
        assert_eq!(dual_value(&p, &sq, &lam).unwrap(), 4.0);
    }

    #[test]
    fn dual_toy_matches_grid_maximization() {
        // sup over w1 of 2 w1 - (w1 - 1)^2 / 2 (w2 does not enter), scanned on a grid
        let best = (0..=200_000)
            .map(|i| -10.0 + 1e-4 * i as f64)
            .map(|w1| 2.0 * w1 - 0.5 * (w1 - 1.0) * (w1 - 1.0))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((best - 4.0).abs() < 1e-8);
        let p = toy();
        let lam = SpanElement::new(Mat::from_element(1, 1, 2.0));
        let closed = dual_value(&p, &SeparableLoss::squared(), &lam).unwrap();
        let numeric = dual_value_numeric(&p, &SeparableLoss::squared(), &lam).unwrap();
        assert!((closed - best).abs() < 1e-8);
        assert!((numeric - best).abs() < 1e-8);
    }

    #[test]
    fn dual_closed_form_matches_inner_solve() {
        let p = generate(&GenSpec::new(3, 10, 2, 9)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let sq = SeparableLoss::squared();
        for _ in 0..5 {
            let lam = SpanElement::new(gaussian(&mut rng, 3, 2));
            let closed = dual_value(&p, &sq, &lam).unwrap();
            let numeric = dual_value_numeric(&p, &sq, &lam).unwrap();
            assert!((closed - numeric).abs() <= 1e-8 * (1.0 + closed.abs()), "{closed} {numeric}");
        }
    }

    #[test]
    fn custom_dual_satisfies_fenchel_young() {
        let p = generate(&GenSpec::new(3, 10, 1, 12)).unwrap();
        let loss = logcosh_plus_quadratic();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..3 {
            let b = gaussian(&mut rng, 10, 1);
            let g = loss_gradient(&p, &loss, &b).unwrap();
            let dual = dual_at_gradient(&p, &loss, &b).unwrap();
            let lhs = dual + loss_value(&p, &loss, &b).unwrap();
            let rhs = inner(&b, &g);
            assert!((lhs - rhs).abs() <= 1e-8 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn fenchel_young_equality_squared() {
        let p = generate(&GenSpec::new(5, 20, 3, 14)).unwrap();
        let sq = SeparableLoss::squared();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..200 {
            let b = gaussian(&mut rng, 20, 3) * 3.0;
            let g = loss_gradient(&p, &sq, &b).unwrap();
            let l = loss_value(&p, &sq, &b).unwrap();
            let gap = dual_at_gradient(&p, &sq, &b).unwrap() + l - inner(&b, &g);
            assert!(gap.abs() <= 1e-9 * (1.0 + l.abs()), "gap {gap}");
        }
    }

    #[test]
    fn gradient_map_restricted_to_span_is_sandwiched() {
        let p = generate(&GenSpec::new(5, 20, 2, 16)).unwrap();
        let sq = SeparableLoss::squared();
        let s = p.spectrum();
        let n = p.n() as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let w = gaussian(&mut rng, 20, 2);
        let g0 = loss_gradient(&p, &sq, &w).unwrap();
        for _ in 0..100 {
            let dir = p.x().transpose() * gaussian(&mut rng, 5, 2);
            let g1 = loss_gradient(&p, &sq, &(&w + &dir)).unwrap();
            let ratio = (g1 - &g0).norm() / dir.norm();
            assert!(ratio >= s.sigman_gram / n * (1.0 - 1e-10));
            assert!(ratio <= s.sigma1_gram / n * (1.0 + 1e-10));
        }
    }

    #[test]
    fn descent_lemma_on_random_weights() {
        let p = generate(&GenSpec::new(5, 20, 1, 1)).unwrap();
        let sq = SeparableLoss::squared();
        let smooth = p.spectrum().sigma1_gram / p.n() as f64;
        let min = min_loss(&p, &sq).unwrap();
        assert!(min.abs() < 1e-20);
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        for _ in 0..100 {
            let w = gaussian(&mut rng, 20, 1) * 2.0;
            let g = loss_gradient(&p, &sq, &w).unwrap();
            let l = loss_value(&p, &sq, &w).unwrap();
            assert!(g.norm_squared() <= 2.0 * smooth * (l - min) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn span_projection_recovers_coefficients() {
        let p = generate(&GenSpec::new(4, 9, 2, 19)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let lam = gaussian(&mut rng, 4, 2);
        let g = p.x().transpose() * &lam;
        let (elem, dist) = SpanElement::project(&p, &g).unwrap();
        assert!(dist < 1e-10);
        assert!((elem.lambda - lam).norm() < 1e-10);
    }

    #[test]
    fn rejects_nonconvex_or_bad_constants() {
        assert!(SeparableLoss::custom("neg", |z: f64| -z * z, |z: f64| -2.0 * z, 1.0, 1.0).is_err());
        assert!(SeparableLoss::custom("c", |z: f64| z * z, |z: f64| 2.0 * z, 0.0, 1.0).is_err());
        assert!(SeparableLoss::custom("c", |z: f64| z * z, |z: f64| 2.0 * z, 2.0, 1.0).is_err());
    }
}
