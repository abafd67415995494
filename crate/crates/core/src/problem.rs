//! Problem data: the data matrix, labels and initialization of an
//! overparameterized linear model, plus synthetic instance generation.

use nalgebra::SymmetricEigen;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_shape, Error, Result};
use crate::linalg::gaussian;
use crate::Mat;

/// Relative floor on `sigma_n / sigma_1` of the gram matrix below which `X`
/// is treated as rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Extreme eigenvalues of the gram matrix `X X^T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralInfo {
    pub sigma1_gram: f64,
    pub sigman_gram: f64,
}

impl SpectralInfo {
    pub fn condition(&self) -> f64 {
        self.sigma1_gram / self.sigman_gram
    }
}

/// Parameters of the synthetic planted-model generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub seed: u64,
    #[serde(default)]
    pub noise: f64,
}

impl GenSpec {
    pub fn new(n: usize, d: usize, k: usize, seed: u64) -> Self {
        GenSpec {
            n,
            d,
            k,
            seed,
            noise: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_dims(self.n, self.d, self.k)?;
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise must be finite and nonnegative, got {}",
                self.noise
            )));
        }
        Ok(())
    }
}

fn validate_dims(n: usize, d: usize, k: usize) -> Result<()> {
    if n == 0 || k == 0 {
        return Err(Error::InvalidDimensions(format!(
            "need n >= 1 and k >= 1, got n={n}, k={k}"
        )));
    }
    if d <= n {
        return Err(Error::InvalidDimensions(format!(
            "overparameterized regime requires d > n, got n={n}, d={d}"
        )));
    }
    Ok(())
}

/// Data `X` (n x d), labels `Y` (n x k) and initialization `W0` (d x k).
///
/// Construction validates shapes, `d > n`, and full row rank of `X`. The
/// instance is immutable afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    x: Mat,
    y: Mat,
    w0: Mat,
    w_true: Option<Mat>,
    gen: Option<GenSpec>,
    spectrum: SpectralInfo,
}

impl ProblemInstance {
    pub fn new(x: Mat, y: Mat, w0: Mat) -> Result<Self> {
        let (n, d) = x.shape();
        let k = y.ncols();
        validate_dims(n, d, k)?;
        check_shape("ProblemInstance::new (labels)", &y, n, k)?;
        check_shape("ProblemInstance::new (initialization)", &w0, d, k)?;
        if !x.iter().chain(y.iter()).chain(w0.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite problem data".into()));
        }
        let spectrum = spectrum_of(&x)?;
        Ok(ProblemInstance {
            x,
            y,
            w0,
            w_true: None,
            gen: None,
            spectrum,
        })
    }

    /// Attaches planted weights and generator metadata, as stored in
    /// instance files.
    pub fn with_planted(mut self, w_true: Mat, gen: GenSpec) -> Result<Self> {
        check_shape("ProblemInstance::with_planted", &w_true, self.d(), self.k())?;
        if gen.n != self.n() || gen.d != self.d() || gen.k != self.k() {
            return Err(Error::InvalidDimensions(
                "generator metadata does not match instance dimensions".into(),
            ));
        }
        self.w_true = Some(w_true);
        self.gen = Some(gen);
        Ok(self)
    }

    /// Same data with a different initialization.
    pub fn with_init(&self, w0: Mat) -> Result<Self> {
        check_shape("ProblemInstance::with_init", &w0, self.d(), self.k())?;
        let mut p = self.clone();
        p.w0 = w0;
        Ok(p)
    }

    pub fn x(&self) -> &Mat {
        &self.x
    }
    pub fn y(&self) -> &Mat {
        &self.y
    }
    pub fn w0(&self) -> &Mat {
        &self.w0
    }
    pub fn w_true(&self) -> Option<&Mat> {
        self.w_true.as_ref()
    }
    pub fn gen_spec(&self) -> Option<&GenSpec> {
        self.gen.as_ref()
    }
    pub fn n(&self) -> usize {
        self.x.nrows()
    }
    pub fn d(&self) -> usize {
        self.x.ncols()
    }
    pub fn k(&self) -> usize {
        self.y.ncols()
    }

    /// Cached extreme eigenvalues of `X X^T`.
    pub fn spectrum(&self) -> SpectralInfo {
        self.spectrum
    }

    pub fn check_weights(&self, op: &'static str, w: &Mat) -> Result<()> {
        check_shape(op, w, self.d(), self.k())
    }
}

fn spectrum_of(x: &Mat) -> Result<SpectralInfo> {
    let gram = x * x.transpose();
    let eig = SymmetricEigen::new(gram);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in eig.eigenvalues.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !(hi.is_finite() && lo.is_finite()) || hi <= 0.0 {
        return Err(Error::RankDeficient { ratio: 0.0 });
    }
    let ratio = lo / hi;
    if ratio < RANK_TOLERANCE {
        return Err(Error::RankDeficient { ratio });
    }
    Ok(SpectralInfo {
        sigma1_gram: hi,
        sigman_gram: lo,
    })
}

/// Largest and smallest eigenvalues of `X X^T` from a symmetric
/// eigen-decomposition.
pub fn gram_spectrum(p: &ProblemInstance) -> Result<SpectralInfo> {
    spectrum_of(p.x())
}

/// `||XW - Y||_F`.
pub fn interpolation_residual(p: &ProblemInstance, w: &Mat) -> Result<f64> {
    p.check_weights("interpolation_residual", w)?;
    Ok((p.x() * w - p.y()).norm())
}

/// Planted Gaussian model: `X`, `W_true` standard normal,
/// `Y = X W_true + noise * E`, `W0 = 0.1 * N(0, 1)`.
///
/// Draws happen in the fixed order X, W_true, E, W0 from a ChaCha8 stream
/// seeded with `spec.seed`, so the output is a pure function of `spec`.
pub fn generate(spec: &GenSpec) -> Result<ProblemInstance> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let x = gaussian(&mut rng, spec.n, spec.d);
    let w_true = gaussian(&mut rng, spec.d, spec.k);
    let e = gaussian(&mut rng, spec.n, spec.k);
    let w0 = gaussian(&mut rng, spec.d, spec.k) * 0.1;
    let mut y = &x * &w_true;
    if spec.noise > 0.0 {
        y += e * spec.noise;
    }
    ProblemInstance::new(x, y, w0)?.with_planted(w_true, *spec)
}
