//! Null-space reduction of the identification constraints and a structured
//! solver for the damped Newton step over the fixed effects.
//!
//! Every supported identification pins at most the last α and/or the last γ,
//! so the reduced Hessian Z'HZ keeps the arrow shape of the unconstrained
//! fixed-effect Hessian:
//!
//! ```text
//!   Z'HZ = [ diag(d_a)  C̃ ] + Σ_k c_k·v_k v_k'
//!          [ C̃'  diag(d_g) ]
//! ```
//!
//! with a dense cross block C̃ and at most four symmetric rank-1 terms, each
//! supported entirely on one side. The damped Newton system (λI − Z'HZ)δ = g̃
//! is solved by eliminating the larger side: its diagonal-plus-low-rank block
//! inverts in linear time by Sherman-Morrison-Woodbury, leaving a dense Schur
//! complement on the smaller side, factored by Cholesky. A factorization
//! failure tells the caller to raise λ.

use crate::linalg::{Cholesky, Lu};
use crate::model::Identification;
use ndarray::{Array1, Array2};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Side {
    A,
    G,
}

/// Sizes and maps for one identification on an N×T panel.
#[derive(Debug, Clone)]
pub(crate) struct Reduction {
    pub id: Identification,
    pub n: usize,
    pub t: usize,
    /// Free α-coordinates.
    pub n_a: usize,
    /// Free γ-coordinates.
    pub n_g: usize,
}

impl Reduction {
    pub fn new(id: Identification, n: usize, t: usize) -> Self {
        let (n_a, n_g) = match id {
            Identification::NoneNeeded => (n, t),
            Identification::SumZeroBoth | Identification::MeanHalf => {
                (n.saturating_sub(1), t.saturating_sub(1))
            }
            Identification::SumEqual => (n, t.saturating_sub(1)),
        };
        Self { id, n, t, n_a, n_g }
    }

    pub fn dim(&self) -> usize {
        self.n_a + self.n_g
    }

    /// Feasible starting point closest to the origin, in free coordinates.
    pub fn cold_start(&self) -> Array1<f64> {
        match self.id {
            Identification::MeanHalf => Array1::from_elem(self.dim(), 0.5),
            _ => Array1::zeros(self.dim()),
        }
    }

    /// Free coordinates read off a full (α, γ) point. Inverse of
    /// [`Reduction::recover`] whenever the point is feasible.
    pub fn extract(&self, alpha: &Array1<f64>, gamma: &Array1<f64>) -> Array1<f64> {
        let mut psi = Array1::zeros(self.dim());
        psi.slice_mut(ndarray::s![..self.n_a])
            .assign(&alpha.slice(ndarray::s![..self.n_a]));
        psi.slice_mut(ndarray::s![self.n_a..])
            .assign(&gamma.slice(ndarray::s![..self.n_g]));
        psi
    }

    /// Expand free coordinates to a full (α, γ) point on the constraint.
    pub fn recover(&self, psi: &Array1<f64>, alpha: &mut Array1<f64>, gamma: &mut Array1<f64>) {
        let (pa, pg) = psi.view().split_at(ndarray::Axis(0), self.n_a);
        for i in 0..self.n_a {
            alpha[i] = pa[i];
        }
        for t in 0..self.n_g {
            gamma[t] = pg[t];
        }
        match self.id {
            Identification::NoneNeeded => {}
            Identification::SumZeroBoth => {
                alpha[self.n - 1] = -pa.sum();
                gamma[self.t - 1] = -pg.sum();
            }
            Identification::MeanHalf => {
                alpha[self.n - 1] = self.n as f64 / 2.0 - pa.sum();
                gamma[self.t - 1] = self.t as f64 / 2.0 - pg.sum();
            }
            Identification::SumEqual => {
                gamma[self.t - 1] = pa.sum() - pg.sum();
            }
        }
    }

    /// Z'g: the gradient in free coordinates.
    pub fn reduce_grad(&self, ga: &Array1<f64>, gg: &Array1<f64>, out: &mut Array1<f64>) {
        match self.id {
            Identification::NoneNeeded => {
                for i in 0..self.n_a {
                    out[i] = ga[i];
                }
                for t in 0..self.n_g {
                    out[self.n_a + t] = gg[t];
                }
            }
            Identification::SumZeroBoth | Identification::MeanHalf => {
                let la = ga[self.n - 1];
                let lg = gg[self.t - 1];
                for i in 0..self.n_a {
                    out[i] = ga[i] - la;
                }
                for t in 0..self.n_g {
                    out[self.n_a + t] = gg[t] - lg;
                }
            }
            Identification::SumEqual => {
                let lg = gg[self.t - 1];
                for i in 0..self.n_a {
                    out[i] = ga[i] + lg;
                }
                for t in 0..self.n_g {
                    out[self.n_a + t] = gg[t] - lg;
                }
            }
        }
    }

    /// Dense null-space basis Z, column j = ∂φ/∂ψ_j. Affine offsets cancel in
    /// the recover differences, so this works for every identification.
    pub fn dense_basis(&self) -> Array2<f64> {
        let full = self.n + self.t;
        let mut z = Array2::zeros((full, self.dim()));
        let mut a0 = Array1::zeros(self.n);
        let mut g0 = Array1::zeros(self.t);
        self.recover(&self.cold_start(), &mut a0, &mut g0);
        for j in 0..self.dim() {
            let mut psi = self.cold_start();
            psi[j] += 1.0;
            let mut a = Array1::zeros(self.n);
            let mut g = Array1::zeros(self.t);
            self.recover(&psi, &mut a, &mut g);
            for i in 0..self.n {
                z[(i, j)] = a[i] - a0[i];
            }
            for s in 0..self.t {
                z[(self.n + s, j)] = g[s] - g0[s];
            }
        }
        z
    }

    /// Z'HZ from the unconstrained arrow pieces: αα diagonal `da` (len N),
    /// γγ diagonal `dg` (len T), αγ cross block `c` (N×T).
    pub fn reduce_hessian(
        &self,
        da: &Array1<f64>,
        dg: &Array1<f64>,
        c: &Array2<f64>,
    ) -> ReducedHessian {
        match self.id {
            Identification::NoneNeeded => ReducedHessian {
                diag_a: da.clone(),
                diag_g: dg.clone(),
                cross: c.clone(),
                lowrank: Vec::new(),
            },
            Identification::SumZeroBoth | Identification::MeanHalf => {
                let (ln, lt) = (self.n - 1, self.t - 1);
                let mut cross = Array2::zeros((self.n_a, self.n_g));
                for i in 0..self.n_a {
                    for t in 0..self.n_g {
                        cross[(i, t)] = c[(i, t)] - c[(ln, t)] - c[(i, lt)] + c[(ln, lt)];
                    }
                }
                ReducedHessian {
                    diag_a: da.slice(ndarray::s![..self.n_a]).to_owned(),
                    diag_g: dg.slice(ndarray::s![..self.n_g]).to_owned(),
                    cross,
                    lowrank: vec![
                        (da[ln], Side::A, Array1::ones(self.n_a)),
                        (dg[lt], Side::G, Array1::ones(self.n_g)),
                    ],
                }
            }
            Identification::SumEqual => {
                // γ_T = Σα − Σγ_free couples the α block to itself through
                // the pinned period: Z'HZ restricted to α gains
                // u·1' + 1·u' + dg_T·1·1' with u_i = C[i, T−1], which is the
                // rank-3 combination w w' + (dg_T − 1)·1 1' − u u', w = 1 + u.
                let lt = self.t - 1;
                let dg_last = dg[lt];
                let u = c.column(lt).to_owned();
                let w = &u + 1.0;
                let mut cross = Array2::zeros((self.n_a, self.n_g));
                for i in 0..self.n_a {
                    for t in 0..self.n_g {
                        cross[(i, t)] = c[(i, t)] - u[i] - dg_last;
                    }
                }
                ReducedHessian {
                    diag_a: da.clone(),
                    diag_g: dg.slice(ndarray::s![..self.n_g]).to_owned(),
                    cross,
                    lowrank: vec![
                        (1.0, Side::A, w),
                        (dg_last - 1.0, Side::A, Array1::ones(self.n_a)),
                        (-1.0, Side::A, u),
                        (dg_last, Side::G, Array1::ones(self.n_g)),
                    ],
                }
            }
        }
    }
}

/// Constraint-reduced fixed-effect Hessian in arrow-plus-low-rank form.
pub(crate) struct ReducedHessian {
    pub diag_a: Array1<f64>,
    pub diag_g: Array1<f64>,
    /// n_a × n_g.
    pub cross: Array2<f64>,
    /// Symmetric rank-1 terms c·v v', each supported on a single side.
    pub lowrank: Vec<(f64, Side, Array1<f64>)>,
}

impl ReducedHessian {
    /// Assemble the dense matrix (test oracles and small lenient solves).
    pub fn dense(&self) -> Array2<f64> {
        let (p, q) = (self.diag_a.len(), self.diag_g.len());
        let mut h = Array2::zeros((p + q, p + q));
        for i in 0..p {
            h[(i, i)] = self.diag_a[i];
        }
        for t in 0..q {
            h[(p + t, p + t)] = self.diag_g[t];
        }
        for i in 0..p {
            for t in 0..q {
                h[(i, p + t)] = self.cross[(i, t)];
                h[(p + t, i)] = self.cross[(i, t)];
            }
        }
        for (c, side, v) in &self.lowrank {
            let off = match side {
                Side::A => 0,
                Side::G => p,
            };
            for (j, &vj) in v.iter().enumerate() {
                for (k, &vk) in v.iter().enumerate() {
                    h[(off + j, off + k)] += c * vj * vk;
                }
            }
        }
        h
    }

    /// Solve H̃ X = RHS by a dense LU factorization. For contexts that need
    /// the exact (undamped) solve and tolerate O(dim³): profiled θ-Hessians
    /// and the trace-form corrector, both at test or panel scale.
    pub fn solve_dense(&self, rhs: &Array2<f64>) -> Option<Array2<f64>> {
        let lu = Lu::new(&self.dense())?;
        let mut out = Array2::zeros(rhs.dim());
        for (j, col) in rhs.columns().into_iter().enumerate() {
            let sol = lu.solve(col.as_standard_layout().as_slice().unwrap());
            for (i, v) in sol.into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        Some(out)
    }
}

/// Factorization of M = λI − H̃ for the damped Newton step; exists only when
/// the Schur pipeline certifies positive pivots, otherwise the caller raises λ.
pub(crate) struct ArrowFactor {
    /// Larger side was the α block.
    elim_a: bool,
    n_a: usize,
    /// Eliminated-side inverse diagonal.
    d_e_inv: Array1<f64>,
    /// Eliminated-side low-rank vectors scaled by 1/d_e (dim_e × m).
    dinv_v: Array2<f64>,
    /// Raw low-rank vectors on the eliminated side (dim_e × m).
    v: Array2<f64>,
    /// LU of the m×m Woodbury core.
    k_lu: Option<Lu>,
    /// M_es = −C̃ oriented eliminated × small.
    b: Array2<f64>,
    /// M_ee⁻¹ M_es (dim_e × dim_s).
    x: Array2<f64>,
    /// Cholesky of the small-side Schur complement.
    s_chol: Cholesky,
}

impl ArrowFactor {
    pub fn new(h: &ReducedHessian, lambda: f64) -> Option<Self> {
        let (p, q) = (h.diag_a.len(), h.diag_g.len());
        let elim_a = p >= q;
        let (dim_e, dim_s) = if elim_a { (p, q) } else { (q, p) };

        let diag_of = |side_a: bool| -> &Array1<f64> {
            if side_a {
                &h.diag_a
            } else {
                &h.diag_g
            }
        };
        let d_e: Array1<f64> = diag_of(elim_a).mapv(|d| lambda - d);
        let d_s: Array1<f64> = diag_of(!elim_a).mapv(|d| lambda - d);
        if d_e.iter().chain(d_s.iter()).any(|&v| !(v > 0.0)) {
            return None;
        }
        let d_e_inv = d_e.mapv(f64::recip);

        // Low-rank terms, negated because M = λI − H̃, split by side.
        let e_side = if elim_a { Side::A } else { Side::G };
        let terms_e: Vec<(f64, &Array1<f64>)> = h
            .lowrank
            .iter()
            .filter(|(c, s, _)| *s == e_side && *c != 0.0)
            .map(|(c, _, v)| (-c, v))
            .collect();
        let m = terms_e.len();
        let mut v = Array2::zeros((dim_e, m));
        let mut dinv_v = Array2::zeros((dim_e, m));
        for (k, (_, vk)) in terms_e.iter().enumerate() {
            for j in 0..dim_e {
                v[(j, k)] = vk[j];
                dinv_v[(j, k)] = vk[j] * d_e_inv[j];
            }
        }
        let k_lu = if m > 0 {
            let mut km = dinv_v.t().dot(&v);
            for (k, (c, _)) in terms_e.iter().enumerate() {
                km[(k, k)] += c.recip();
            }
            Some(Lu::new(&km)?)
        } else {
            None
        };

        // M_es = −C̃ oriented so rows run over the eliminated side.
        let b: Array2<f64> = if elim_a {
            h.cross.mapv(|v| -v)
        } else {
            h.cross.t().mapv(|v| -v)
        };

        // X = M_ee⁻¹ B via Woodbury on the diagonal.
        let mut x = &b * &d_e_inv.view().insert_axis(ndarray::Axis(1));
        if let Some(klu) = &k_lu {
            let vt_x = v.t().dot(&x);
            let mut corr = Array2::zeros(vt_x.dim());
            for (j, col) in vt_x.columns().into_iter().enumerate() {
                let sol = klu.solve(col.as_standard_layout().as_slice().unwrap());
                for (i, val) in sol.into_iter().enumerate() {
                    corr[(i, j)] = val;
                }
            }
            x -= &dinv_v.dot(&corr);
        }

        // Dense Schur complement on the small side, own low-rank included.
        let mut s = Array2::from_diag(&d_s);
        for (c, side, vk) in &h.lowrank {
            if *side != e_side && *c != 0.0 {
                for j in 0..dim_s {
                    for k in 0..dim_s {
                        s[(j, k)] -= c * vk[j] * vk[k];
                    }
                }
            }
        }
        s -= &b.t().dot(&x);
        let s_chol = Cholesky::new(&s)?;

        Some(Self { elim_a, n_a: p, d_e_inv, dinv_v, v, k_lu, b, x, s_chol })
    }

    fn ee_solve(&self, r: &Array1<f64>) -> Array1<f64> {
        let mut y = r * &self.d_e_inv;
        if let Some(klu) = &self.k_lu {
            let vt_y = self.v.t().dot(&y);
            let sol = klu.solve(vt_y.as_slice().unwrap());
            y -= &self.dinv_v.dot(&Array1::from_vec(sol));
        }
        y
    }

    /// Solve (λI − H̃)·x = r, coordinates ordered [α-block; γ-block].
    pub fn solve(&self, r: &Array1<f64>) -> Array1<f64> {
        let (ra, rg) = r.view().split_at(ndarray::Axis(0), self.n_a);
        let (r_e, r_s) = if self.elim_a {
            (ra.to_owned(), rg.to_owned())
        } else {
            (rg.to_owned(), ra.to_owned())
        };
        let y_e = self.ee_solve(&r_e);
        let rhs_s = &r_s - &self.b.t().dot(&y_e);
        let x_s = self.s_chol.solve(&rhs_s);
        let x_e = &y_e - &self.x.dot(&x_s);
        let mut out = Array1::zeros(r.len());
        let (dst_e, dst_s) = if self.elim_a {
            (0, self.n_a)
        } else {
            (self.n_a, 0)
        };
        for (j, &val) in x_e.iter().enumerate() {
            out[dst_e + j] = val;
        }
        for (j, &val) in x_s.iter().enumerate() {
            out[dst_s + j] = val;
        }
        out
    }
}
