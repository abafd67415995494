//! Dense two-phase primal simplex with Bland's rule, plus a brute-force
//! vertex enumeration oracle for tiny programs.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::Mat;

pub const ITERATION_CAP: usize = 100_000;
pub const ORACLE_MAX_VARS: usize = 10;

const PIVOT_TOL: f64 = 1e-10;

/// `min c^T x  s.t.  A x = b, x >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub cost: Vec<f64>,
    pub a_eq: Mat,
    pub b_eq: Vec<f64>,
}

impl LinearProgram {
    pub fn new(cost: Vec<f64>, a_eq: Mat, b_eq: Vec<f64>) -> Result<Self> {
        if a_eq.ncols() != cost.len() || a_eq.nrows() != b_eq.len() {
            return Err(Error::ShapeMismatch {
                op: "LinearProgram::new",
                expected: format!("{}x{}", b_eq.len(), cost.len()),
                found: format!("{}x{}", a_eq.nrows(), a_eq.ncols()),
            });
        }
        Ok(LinearProgram { cost, a_eq, b_eq })
    }

    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.b_eq.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Basic variable per surviving constraint row.
    pub basis: Vec<usize>,
    /// Equality multipliers `y` with `A_B^T y = c_B`; zero on rows dropped
    /// as redundant.
    pub duals: Vec<f64>,
    pub iterations: usize,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    obj: Vec<f64>,
    basis: Vec<usize>,
    width: usize,
    iterations: usize,
}

impl Tableau {
    fn rhs(&self) -> usize {
        self.width - 1
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let p = self.rows[r][j];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i != r {
                let f = row[j];
                if f != 0.0 {
                    for (v, pv) in row.iter_mut().zip(&pivot_row) {
                        *v -= f * pv;
                    }
                }
            }
        }
        let f = self.obj[j];
        if f != 0.0 {
            for (v, pv) in self.obj.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
        }
        self.basis[r] = j;
    }

    /// Roundoff in a reduced cost grows with the entries of its column.
    fn column_scale(&self, j: usize) -> f64 {
        1.0 + self.rows.iter().map(|r| r[j].abs()).fold(0.0, f64::max)
    }

    /// Bland's rule: lowest-index improving column enters; ratio ties go to
    /// the lowest-index basic variable.
    fn optimize(&mut self, allowed: usize) -> Result<()> {
        let rhs = self.rhs();
        loop {
            let Some(j) = (0..allowed).find(|&j| self.obj[j] < -PIVOT_TOL * self.column_scale(j)) else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for (r, row) in self.rows.iter().enumerate() {
                if row[j] > PIVOT_TOL {
                    let ratio = row[rhs] / row[j];
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((lr, lratio)) => {
                            let tie = (ratio - lratio).abs() <= 1e-12 * (1.0 + lratio.abs());
                            if (tie && self.basis[r] < self.basis[lr]) || (!tie && ratio < lratio) {
                                Some((r, ratio))
                            } else {
                                Some((lr, lratio))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else {
                return Err(Error::Unbounded);
            };
            if self.iterations >= ITERATION_CAP {
                return Err(Error::IterationCap { cap: ITERATION_CAP });
            }
            self.iterations += 1;
            self.pivot(r, j);
        }
    }
}

/// Solves the program with phase 1 on artificial variables followed by
/// phase 2 on the original costs.
pub fn lp_solve(lp: &LinearProgram) -> Result<LpSolution> {
    let (m, nv) = (lp.num_constraints(), lp.num_vars());
    let width = nv + m + 1;
    let sign: Vec<f64> = lp.b_eq.iter().map(|&b| if b < 0.0 { -1.0 } else { 1.0 }).collect();
    let mut rows = Vec::with_capacity(m);
    for r in 0..m {
        let mut row = vec![0.0; width];
        for (j, v) in row.iter_mut().take(nv).enumerate() {
            *v = sign[r] * lp.a_eq[(r, j)];
        }
        row[nv + r] = 1.0;
        row[width - 1] = sign[r] * lp.b_eq[r];
        rows.push(row);
    }
    let mut obj = vec![0.0; width];
    for row in &rows {
        for j in 0..nv {
            obj[j] -= row[j];
        }
        obj[width - 1] -= row[width - 1];
    }
    let mut tab = Tableau {
        rows,
        obj,
        basis: (nv..nv + m).collect(),
        width,
        iterations: 0,
    };
    tab.optimize(nv + m)?;

    let b_scale = 1.0 + lp.b_eq.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let infeasibility = -tab.obj[width - 1];
    if infeasibility > 1e-9 * b_scale {
        return Err(Error::Infeasible);
    }

    // Pivot remaining artificials out of the basis; rows where that is
    // impossible are linear combinations of the others.
    let mut keep: Vec<usize> = Vec::with_capacity(m);
    let mut r = 0;
    let mut origin: Vec<usize> = (0..m).collect();
    while r < tab.rows.len() {
        if tab.basis[r] >= nv {
            if let Some(j) = (0..nv).find(|&j| tab.rows[r][j].abs() > 1e-9) {
                tab.pivot(r, j);
            } else {
                tab.rows.remove(r);
                tab.basis.remove(r);
                origin.remove(r);
                continue;
            }
        }
        keep.push(origin[r]);
        r += 1;
    }

    // Phase 2 reduced costs.
    let rhs = width - 1;
    let mut obj = vec![0.0; width];
    obj[..nv].copy_from_slice(&lp.cost);
    for (row, &b) in tab.rows.iter().zip(&tab.basis) {
        let cb = lp.cost[b];
        if cb != 0.0 {
            for j in 0..nv {
                obj[j] -= cb * row[j];
            }
            obj[rhs] -= cb * row[rhs];
        }
    }
    tab.obj = obj;
    tab.optimize(nv)?;

    let mut x = vec![0.0; nv];
    for (row, &b) in tab.rows.iter().zip(&tab.basis) {
        x[b] = row[rhs].max(0.0);
    }
    let objective = x.iter().zip(&lp.cost).map(|(a, c)| a * c).sum();

    let mut duals = vec![0.0; m];
    let nb = tab.basis.len();
    if nb > 0 {
        let bmat = Mat::from_fn(nb, nb, |i, k| sign[keep[i]] * lp.a_eq[(keep[i], tab.basis[k])]);
        let cb = DVector::from_iterator(nb, tab.basis.iter().map(|&b| lp.cost[b]));
        if let Some(y) = bmat.transpose().lu().solve(&cb) {
            for (i, &row) in keep.iter().enumerate() {
                duals[row] = sign[row] * y[i];
            }
        }
    }

    Ok(LpSolution {
        x,
        objective,
        basis: tab.basis,
        duals,
        iterations: tab.iterations,
    })
}

/// Best objective over all basic feasible solutions, found by enumerating
/// every choice of basis columns. Exponential; intended as a test oracle.
/// Assumes the program is bounded below.
pub fn vertex_enumeration_oracle(lp: &LinearProgram) -> Result<f64> {
    let nv = lp.num_vars();
    if nv > ORACLE_MAX_VARS {
        return Err(Error::SizeCap {
            max: ORACLE_MAX_VARS,
            got: nv,
        });
    }
    let b = DVector::from_column_slice(&lp.b_eq);
    let b_scale = 1.0 + b.amax();
    let rows = independent_rows(&lp.a_eq);
    let rank = rows.len();
    let feasible = |x: &DVector<f64>| {
        x.iter().all(|&v| v >= -1e-9) && (&lp.a_eq * x - &b).amax() <= 1e-8 * b_scale
    };

    let mut best: Option<f64> = None;
    let mut consider = |x: DVector<f64>| {
        if feasible(&x) {
            let obj: f64 = x.iter().zip(&lp.cost).map(|(a, c)| a * c).sum();
            best = Some(best.map_or(obj, |cur: f64| cur.min(obj)));
        }
    };
    if rank == 0 {
        consider(DVector::zeros(nv));
    } else {
        for cols in combinations(nv, rank) {
            let bmat = Mat::from_fn(rank, rank, |i, k| lp.a_eq[(rows[i], cols[k])]);
            let rhs = DVector::from_iterator(rank, rows.iter().map(|&r| lp.b_eq[r]));
            let lu = bmat.lu();
            if lu.determinant().abs() < 1e-12 {
                continue;
            }
            if let Some(xb) = lu.solve(&rhs) {
                let mut x = DVector::zeros(nv);
                for (k, &c) in cols.iter().enumerate() {
                    x[c] = xb[k];
                }
                consider(x);
            }
        }
    }
    best.ok_or(Error::Infeasible)
}

fn independent_rows(a: &Mat) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut rows = Vec::new();
    for r in 0..a.nrows() {
        let mut v: DVector<f64> = a.row(r).transpose();
        let scale = v.norm();
        for q in &basis {
            let proj = q.dot(&v);
            v -= q * proj;
        }
        if v.norm() > 1e-10 * (1.0 + scale) {
            let nrm = v.norm();
            basis.push(v / nrm);
            rows.push(r);
        }
    }
    rows
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}
