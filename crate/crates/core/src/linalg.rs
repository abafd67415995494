use crate::Mat;

/// `Tr(A^T B)`, the Frobenius inner product.
pub(crate) fn inner(a: &Mat, b: &Mat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub(crate) fn max_abs(a: &Mat) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

pub(crate) fn all_finite(a: &Mat) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Row-major standard normal matrix drawn from `rng`.
pub(crate) fn gaussian<R: rand::Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Mat {
    use rand_distr::{Distribution, StandardNormal};
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Mat::from_row_slice(rows, cols, &data)
}
