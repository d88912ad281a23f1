//! Small dense linear algebra: Cholesky and partially pivoted LU with solves,
//! explicit inverses, and the matrix ∞-norm.
//!
//! The systems here are modest (a few hundred rows: reduced fixed-effect
//! blocks, Schur complements, parameter Hessians), so plain row-major
//! factorizations are fast enough and keep the crate free of a BLAS/LAPACK
//! link. Factorizations report singularity instead of panicking; callers
//! decide whether that means "increase damping" or a hard error.

use ndarray::{Array1, Array2, ArrayView2};

/// ∞-norm: maximum absolute row sum.
pub fn inf_norm(a: ArrayView2<f64>) -> f64 {
    let mut worst = 0.0f64;
    for row in a.rows() {
        let s: f64 = row.iter().map(|v| v.abs()).sum();
        if s > worst {
            worst = s;
        }
    }
    worst
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub struct Cholesky {
    l: Array2<f64>,
    n: usize,
}

impl Cholesky {
    /// Factor `a = L L'`. Returns `None` when a pivot is not strictly
    /// positive (matrix not numerically SPD).
    pub fn new(a: &Array2<f64>) -> Option<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "Cholesky needs a square matrix");
        let mut l = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if d <= 0.0 || !d.is_finite() {
                return None;
            }
            let dj = d.sqrt();
            l[(j, j)] = dj;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / dj;
            }
        }
        Some(Self { l, n })
    }

    /// Solve `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        debug_assert_eq!(b.len(), n);
        // Forward: L y = b.
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[(i, k)] * b[k];
            }
            b[i] = s / self.l[(i, i)];
        }
        // Backward: L' x = y.
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * b[k];
            }
            b[i] = s / self.l[(i, i)];
        }
    }

    pub fn solve(&self, b: &Array1<f64>) -> Array1<f64> {
        let mut out = b.to_vec();
        self.solve_in_place(&mut out);
        Array1::from_vec(out)
    }
}

/// LU factorization with partial pivoting.
pub struct Lu {
    lu: Array2<f64>,
    piv: Vec<usize>,
    n: usize,
}

impl Lu {
    /// Factor `P a = L U`. Returns `None` when a pivot collapses relative to
    /// the matrix scale (numerically singular).
    pub fn new(a: &Array2<f64>) -> Option<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "LU needs a square matrix");
        let mut lu = a.clone();
        let mut piv: Vec<usize> = (0..n).collect();
        let scale = lu.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        for k in 0..n {
            let mut p = k;
            let mut best = lu[(k, k)].abs();
            for i in (k + 1)..n {
                let v = lu[(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !best.is_finite() || best <= 1e-14 * scale {
                return None;
            }
            if p != k {
                piv.swap(p, k);
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = tmp;
                }
            }
            let pivot = lu[(k, k)];
            for i in (k + 1)..n {
                let f = lu[(i, k)] / pivot;
                lu[(i, k)] = f;
                if f != 0.0 {
                    for j in (k + 1)..n {
                        lu[(i, j)] -= f * lu[(k, j)];
                    }
                }
            }
        }
        Some(Self { lu, piv, n })
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        debug_assert_eq!(b.len(), n);
        let mut x: Vec<f64> = self.piv.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= self.lu[(i, k)] * x[k];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.lu[(i, k)] * x[k];
            }
            x[i] = s / self.lu[(i, i)];
        }
        x
    }

    /// Explicit inverse, column by column.
    pub fn inverse(&self) -> Array2<f64> {
        let n = self.n;
        let mut inv = Array2::<f64>::zeros((n, n));
        let mut e = vec![0.0f64; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.solve(&e);
            e[j] = 0.0;
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv
    }
}

/// Solve a symmetric system, preferring Cholesky on `-a` when `a` is negative
/// definite (the usual case for log-likelihood Hessians) and falling back to
/// pivoted LU otherwise. Returns `None` only if both routes fail.
pub fn solve_sym_neg_def(a: &Array2<f64>, b: &[f64]) -> Option<Vec<f64>> {
    let neg = a.mapv(|v| -v);
    if let Some(ch) = Cholesky::new(&neg) {
        let mut x = b.to_vec();
        ch.solve_in_place(&mut x);
        for v in &mut x {
            *v = -*v;
        }
        return Some(x);
    }
    Lu::new(a).map(|lu| lu.solve(b))
}
