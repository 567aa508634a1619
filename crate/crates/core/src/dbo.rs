//! DBO state `V ≈ UΣYᵀ` and its decompressed evolution equations.

use ndarray::{s, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::linalg::{
    identity_defect, scale_rows, singular_values_small, truncated_svd_weighted, weighted_frobenius, weighted_inner, Lu,
    Matrix, QuadratureWeights, Vector, RANK_TOL,
};
use crate::models::LinearModel;

/// Rows reconstructed at once by [`total_error`] and [`trajectory_gap`].
pub const DEFAULT_BLOCK_ROWS: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct DboState {
    pub u: Matrix,
    pub sigma: Matrix,
    pub y: Matrix,
    pub t: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DboDerivative {
    pub du: Matrix,
    pub dsigma: Matrix,
    pub dy: Matrix,
}

impl DboDerivative {
    pub fn zeros(n: usize, s: usize, r: usize) -> Self {
        Self {
            du: Matrix::zeros((n, r)),
            dsigma: Matrix::zeros((r, r)),
            dy: Matrix::zeros((s, r)),
        }
    }
}

impl DboState {
    pub fn rank(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    pub fn s(&self) -> usize {
        self.y.nrows()
    }

    /// `UΣYᵀ` in full. Only for small problems and tests.
    pub fn reconstruct(&self) -> Matrix {
        self.u.dot(&self.sigma).dot(&self.y.t())
    }

    /// `U(rows,:)ΣYᵀ`.
    pub fn reconstruct_rows(&self, rows: &[usize]) -> Matrix {
        self.u.select(Axis(0), rows).dot(&self.sigma.dot(&self.y.t()))
    }

    /// `UΣY(cols,:)ᵀ`.
    pub fn reconstruct_columns(&self, cols: &[usize]) -> Matrix {
        self.u.dot(&self.sigma).dot(&self.y.select(Axis(0), cols).t())
    }

    /// `self + a·d` at time `t`.
    pub fn advanced(&self, d: &DboDerivative, a: f64, t: f64) -> Self {
        let mut out = self.clone();
        out.u.scaled_add(a, &d.du);
        out.sigma.scaled_add(a, &d.dsigma);
        out.y.scaled_add(a, &d.dy);
        out.t = t;
        out
    }

    fn check(&self, w: &QuadratureWeights) -> Result<()> {
        let r = self.rank();
        if self.sigma.ncols() != r || self.u.ncols() != r || self.y.ncols() != r {
            return Err(Error::dims(
                "DBO state",
                format!("rank {r} factors"),
                format!(
                    "U {:?}, Sigma {:?}, Y {:?}",
                    self.u.dim(),
                    self.sigma.dim(),
                    self.y.dim()
                ),
            ));
        }
        if self.n() != w.n() || self.s() != w.s() {
            return Err(Error::dims(
                "DBO state",
                format!("n={}, s={}", w.n(), w.s()),
                format!("n={}, s={}", self.n(), self.s()),
            ));
        }
        Ok(())
    }
}

/// Weighted rank-`r` truncated SVD of the sampled initial condition. Returns
/// the state and the weighted-Frobenius truncation residual.
pub fn init_from_samples(v0: ArrayView2<f64>, r: usize, w: &QuadratureWeights) -> Result<(DboState, f64)> {
    let svd = truncated_svd_weighted(v0, w, r)?;
    let state = DboState {
        u: svd.u,
        sigma: Matrix::from_diag(&svd.sigma),
        y: svd.y,
        t: 0.0,
    };
    let residual = total_error(&state, v0, w)?;
    Ok((state, residual))
}

/// LU of Σ after checking `σ_min/σ_max`.
pub fn factor_sigma(sigma: ArrayView2<f64>) -> Result<Lu> {
    let sv = singular_values_small(sigma)?;
    let r = sv.len();
    let (max, min) = (sv[0], sv[r - 1]);
    let ratio = if max > 0.0 { min / max } else { 0.0 };
    if !(ratio >= RANK_TOL) {
        return Err(Error::SingularSigma { rank: r, ratio });
    }
    Lu::factor(sigma, "Sigma")
}

/// Decompressed right-hand side from the full `n x s` matrix `F`.
pub fn dbo_rhs_decompressed(state: &DboState, f: ArrayView2<f64>, w: &QuadratureWeights) -> Result<DboDerivative> {
    state.check(w)?;
    if f.dim() != (state.n(), state.s()) {
        return Err(Error::dims(
            "dbo_rhs_decompressed",
            format!("F {}x{}", state.n(), state.s()),
            format!("{}x{}", f.nrows(), f.ncols()),
        ));
    }
    let lu = factor_sigma(state.sigma.view())?;
    let fwy = f.dot(&scale_rows(state.y.view(), w.wxi().view()));
    let ftwu = f.t().dot(&scale_rows(state.u.view(), w.wx().view()));
    let dsigma = weighted_inner(state.u.view(), fwy.view(), w.wx().view())?;
    Ok(assemble(state, &lu, dsigma, fwy, ftwu, w))
}

/// Right-hand side for `F = A·Bᵀ` (`A`: `n x k`, `B`: `s x k`) without forming `F`.
pub fn project_factored_rhs(
    state: &DboState,
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    w: &QuadratureWeights,
) -> Result<DboDerivative> {
    state.check(w)?;
    if a.nrows() != state.n() || b.nrows() != state.s() || a.ncols() != b.ncols() {
        return Err(Error::dims(
            "project_factored_rhs",
            format!("A {}xk, B {}xk", state.n(), state.s()),
            format!("A {:?}, B {:?}", a.dim(), b.dim()),
        ));
    }
    let lu = factor_sigma(state.sigma.view())?;
    // F W_ξ Y = A (Bᵀ W_ξ Y),  Fᵀ W_x U = B (Aᵀ W_x U)
    let btwy = weighted_inner(b, state.y.view(), w.wxi().view())?;
    let atwu = weighted_inner(a, state.u.view(), w.wx().view())?;
    let utwa = atwu.t().to_owned();
    let dsigma = utwa.dot(&btwy);
    let fwy = a.dot(&btwy);
    let ftwu = b.dot(&atwu);
    Ok(assemble(state, &lu, dsigma, fwy, ftwu, w))
}

fn assemble(
    state: &DboState,
    lu: &Lu,
    dsigma: Matrix,
    fwy: Matrix,
    ftwu: Matrix,
    w: &QuadratureWeights,
) -> DboDerivative {
    let gu = project_out(state.u.view(), fwy, w.wx().view());
    let gy = project_out(state.y.view(), ftwu, w.wxi().view());
    // dU = G_U Σ⁻¹  ⇔  Σᵀ dUᵀ = G_Uᵀ;  dY = G_Y Σ⁻ᵀ  ⇔  Σ dYᵀ = G_Yᵀ
    let du = lu.solve_transposed(gu.t()).t().to_owned();
    let dy = lu.solve(gy.t()).t().to_owned();
    DboDerivative { du, dsigma, dy }
}

/// `(I − Q Qᵀ W) X` as two skinny products.
fn project_out(q: ArrayView2<f64>, mut x: Matrix, w: ArrayView1<f64>) -> Matrix {
    let coef = q.t().dot(&scale_rows(x.view(), w));
    x -= &q.dot(&coef);
    x
}

/// `L_r = Uᵀ W_x L U`.
pub fn reduced_linear_matrix<M: LinearModel + ?Sized>(
    model: &M,
    u: ArrayView2<f64>,
    w: ArrayView1<f64>,
) -> Result<Matrix> {
    let lu = model.apply_linear(u);
    weighted_inner(u, lu.view(), w)
}

/// Weighted Frobenius distance between `UΣYᵀ` and `V_fom`, reconstructed in
/// blocks of [`DEFAULT_BLOCK_ROWS`] rows.
pub fn total_error(state: &DboState, v_fom: ArrayView2<f64>, w: &QuadratureWeights) -> Result<f64> {
    total_error_blocked(state, v_fom, w, DEFAULT_BLOCK_ROWS)
}

pub fn total_error_blocked(
    state: &DboState,
    v_fom: ArrayView2<f64>,
    w: &QuadratureWeights,
    block: usize,
) -> Result<f64> {
    state.check(w)?;
    if v_fom.dim() != (state.n(), state.s()) {
        return Err(Error::dims(
            "total_error",
            format!("{}x{}", state.n(), state.s()),
            format!("{}x{}", v_fom.nrows(), v_fom.ncols()),
        ));
    }
    let sy = state.sigma.dot(&state.y.t());
    let block = block.max(1);
    let mut acc = 0.0;
    let mut start = 0;
    while start < state.n() {
        let end = (start + block).min(state.n());
        let mut diff = state.u.slice(s![start..end, ..]).dot(&sy);
        diff -= &v_fom.slice(s![start..end, ..]);
        acc += crate::linalg::weighted_sq_sum(diff.view(), w.wx().slice(s![start..end]), w.wxi().view());
        start = end;
    }
    Ok(acc.sqrt())
}

/// Weighted Frobenius distance between two low-rank reconstructions.
pub fn trajectory_gap(a: &DboState, b: &DboState, w: &QuadratureWeights) -> Result<f64> {
    a.check(w)?;
    b.check(w)?;
    let sya = a.sigma.dot(&a.y.t());
    let syb = b.sigma.dot(&b.y.t());
    let mut acc = 0.0;
    let mut start = 0;
    while start < a.n() {
        let end = (start + DEFAULT_BLOCK_ROWS).min(a.n());
        let mut diff = a.u.slice(s![start..end, ..]).dot(&sya);
        diff -= &b.u.slice(s![start..end, ..]).dot(&syb);
        acc += crate::linalg::weighted_sq_sum(diff.view(), w.wx().slice(s![start..end]), w.wxi().view());
        start = end;
    }
    Ok(acc.sqrt())
}

/// Singular values of Σ, descending.
pub fn singular_values(state: &DboState) -> Vector {
    singular_values_small(state.sigma.view()).unwrap_or_else(|_| Vector::from_elem(state.rank(), f64::NAN))
}

/// `(‖UᵀW_xU − I‖_max, ‖YᵀW_ξY − I‖_max)`.
pub fn orthonormality_defect(state: &DboState, w: &QuadratureWeights) -> (f64, f64) {
    let gu = weighted_inner(state.u.view(), state.u.view(), w.wx().view());
    let gy = weighted_inner(state.y.view(), state.y.view(), w.wxi().view());
    match (gu, gy) {
        (Ok(gu), Ok(gy)) => (identity_defect(gu.view()), identity_defect(gy.view())),
        _ => (f64::INFINITY, f64::INFINITY),
    }
}

/// Weighted Frobenius norm of the full ensemble.
pub fn ensemble_norm(v: ArrayView2<f64>, w: &QuadratureWeights) -> Result<f64> {
    weighted_frobenius(v, w)
}
