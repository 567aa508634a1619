//! On-the-fly CUR approximation `F̂ = U_F Z_Fᵀ` of the DBO right-hand side.
//!
//! Only `p` columns and `p` rows (plus stencil neighbours) of `F` are ever
//! evaluated; the compressed evolution equations then act on the factors.

use ndarray::{s, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dbo::{project_factored_rhs, DboDerivative, DboState};
use crate::error::{Error, Result};
use crate::integrate::{DboRhs, Mode, StepInfo};
use crate::linalg::{
    gram_rank, leading_sign, reorthonormalize, spectral_norm, svd_small, sym_eig, weighted_inner, Lu, Matrix,
    QuadratureWeights, Vector,
};
use crate::models::Model;
use crate::sampling::{ldeim_select, selection_eta, Sampler};

#[derive(Clone, Debug, PartialEq)]
pub struct LowRankRhs {
    /// `n x k`, orthonormal under `W_x`.
    pub uf: Matrix,
    /// `s x k`.
    pub zf: Matrix,
    /// Sampled columns (Monte Carlo samples).
    pub q: Vec<usize>,
    /// Sampled rows (grid indices).
    pub prow: Vec<usize>,
    /// Eigenvalues of `C_F`, descending.
    pub lambda_f: Vector,
}

impl LowRankRhs {
    fn empty(n: usize, s: usize, q: Vec<usize>) -> Self {
        Self {
            uf: Matrix::zeros((n, 0)),
            zf: Matrix::zeros((s, 0)),
            q,
            prow: Vec::new(),
            lambda_f: Vector::zeros(0),
        }
    }

    /// Rank of the approximation (may be below `q.len()` if `F(:,q)` was rank deficient).
    pub fn rank(&self) -> usize {
        self.uf.ncols()
    }

    /// `F̂(rows, cols)`.
    pub fn block(&self, rows: &[usize], cols: &[usize]) -> Matrix {
        self.uf.select(Axis(0), rows).dot(&self.zf.select(Axis(0), cols).t())
    }

    /// Dense `F̂`; diagnostics only.
    pub fn assemble(&self) -> Matrix {
        self.uf.dot(&self.zf.t())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankController {
    pub p: usize,
    pub eps_l: f64,
    pub eps_u: f64,
    pub p_min: usize,
    pub p_max: usize,
}

impl RankController {
    pub fn fixed(p: usize) -> Self {
        Self {
            p,
            eps_l: f64::MIN_POSITIVE,
            eps_u: 1.0,
            p_min: p,
            p_max: p,
        }
    }

    pub fn adaptive(p: usize, eps_l: f64, eps_u: f64, p_min: usize, p_max: usize) -> Result<Self> {
        let c = Self {
            p,
            eps_l,
            eps_u,
            p_min,
            p_max,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if !(self.eps_l > 0.0 && self.eps_l < self.eps_u) {
            errors.push(format!(
                "eps_l ({}) must be positive and below eps_u ({})",
                self.eps_l, self.eps_u
            ));
        }
        if self.p_min < 1 || self.p_min > self.p || self.p > self.p_max {
            errors.push(format!(
                "p_min ({}) <= p ({}) <= p_max ({}) with p_min >= 1 is violated",
                self.p_min, self.p, self.p_max
            ));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }

    pub fn is_adaptive(&self) -> bool {
        self.p_min < self.p_max
    }
}

/// Column-selection state carried between accepted steps.
#[derive(Clone, Debug, Default)]
pub struct RhsBasisCarry {
    /// `Z_F` of the previous accepted step; `None` before the first step.
    pub zf_prev: Option<Matrix>,
    /// Column indices fixed by a rank addition, used once.
    pub plan: Option<Vec<usize>>,
    yf: Option<Matrix>,
}

impl RhsBasisCarry {
    pub fn from_zf(zf: Matrix, wxi: ArrayView1<f64>) -> Result<Self> {
        let (yf, _) = weighted_left_modes(zf.view(), wxi, "compute_YF", false)?;
        Ok(Self {
            zf_prev: Some(zf),
            plan: None,
            yf: Some(yf),
        })
    }

    /// Basis the next column selection runs on: `Y_F` when available, else `Y`.
    fn column_basis<'a>(&'a self, state: &'a DboState) -> ArrayView2<'a, f64> {
        match &self.yf {
            Some(yf) if yf.ncols() > 0 => yf.view(),
            _ => state.y.view(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankDecision {
    pub p: usize,
    /// `p + 1` L-DEIM column indices after an addition.
    pub plan: Option<Vec<usize>>,
}

/// Weighted left singular vectors of a tall matrix through its `k x k`
/// correlation matrix, refined by one Rayleigh–Ritz pass. With `strict`,
/// numerical rank below `k` is an error; otherwise the basis is truncated.
fn weighted_left_modes(
    x: ArrayView2<f64>,
    w: ArrayView1<f64>,
    what: &'static str,
    strict: bool,
) -> Result<(Matrix, Vector)> {
    let (m, k) = x.dim();
    if w.len() != m {
        return Err(Error::dims(what, format!("weights of length {m}"), w.len().to_string()));
    }
    if k == 0 {
        return Ok((Matrix::zeros((m, 0)), Vector::zeros(0)));
    }
    let c = weighted_inner(x, x, w)?;
    let eig = sym_eig(c.view())?;
    let rank = gram_rank(&eig.values);
    if strict && rank < k {
        return Err(Error::RankDeficient {
            what,
            requested: k,
            achievable: rank,
        });
    }
    if rank == 0 {
        return Ok((Matrix::zeros((m, 0)), Vector::zeros(0)));
    }
    let b = x.dot(&eig.vectors.slice(s![.., ..rank]));
    let (q, t) = reorthonormalize(b.view(), w).map_err(|_| Error::RankDeficient {
        what,
        requested: k,
        achievable: rank,
    })?;
    let svd = svd_small(t.view())?;
    let mut basis = q.dot(&svd.u);
    for mut col in basis.columns_mut() {
        if leading_sign(col.view()) < 0.0 {
            col.mapv_inplace(|v| -v);
        }
    }
    Ok((basis, svd.sigma))
}

/// `Y_F` and the singular values `Σ_Z` of `F̂ = U_F Z_Fᵀ` from `Z_F`.
pub fn compute_yf(zf: ArrayView2<f64>, wxi: ArrayView1<f64>) -> Result<(Matrix, Vector)> {
    weighted_left_modes(zf, wxi, "compute_YF", true)
}

/// `U_F` (weighted-orthonormal basis of `F(:,q)`) and `Λ_F`.
pub fn compute_uf(fq: ArrayView2<f64>, wx: ArrayView1<f64>) -> Result<(Matrix, Vector)> {
    let (uf, sv) = weighted_left_modes(fq, wx, "compute_UF", true)?;
    Ok((uf, sv.mapv(|x| x * x)))
}

/// `Z_F` from the sampled rows: `Z_Fᵀ = U_F(prow,:)⁻¹ F(prow,:)`.
pub fn compute_zf(fp: ArrayView2<f64>, uf: ArrayView2<f64>, prow: &[usize]) -> Result<Matrix> {
    let k = uf.ncols();
    if prow.len() != k || fp.nrows() != k {
        return Err(Error::dims(
            "compute_ZF",
            format!("{k} sampled rows"),
            format!("prow {}, F(prow,:) {}", prow.len(), fp.nrows()),
        ));
    }
    let lu = Lu::factor(uf.select(Axis(0), prow).view(), "U_F(prow,:)")?;
    Ok(lu.solve(fp).t().to_owned())
}

/// `ε = σ_p² / Σ σ_i²`.
pub fn error_indicator(sigma: ArrayView1<f64>) -> Result<f64> {
    let total: f64 = sigma.iter().map(|x| x * x).sum();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument(
            "error_indicator: all singular values are zero".into(),
        ));
    }
    let last = sigma[sigma.len() - 1];
    Ok(last * last / total)
}

/// Buffer-interval rank update: at most one step up or down.
pub fn adapt_rank(controller: &RankController, eps: f64, yf: ArrayView2<f64>) -> Result<RankDecision> {
    let p = controller.p;
    if eps > controller.eps_u && p < controller.p_max && p < yf.nrows() {
        let target = p + 1;
        let plan = if yf.ncols() > 0 && yf.ncols() <= target {
            Some(ldeim_select(yf, target)?.indices)
        } else {
            None
        };
        Ok(RankDecision { p: target, plan })
    } else if eps < controller.eps_l && p > controller.p_min {
        Ok(RankDecision { p: p - 1, plan: None })
    } else {
        Ok(RankDecision { p, plan: None })
    }
}

/// `p` column indices from a basis of width `k`: the sampler on the leading
/// `p` columns when `k >= p`, L-DEIM extension otherwise.
pub fn select_columns(basis: ArrayView2<f64>, p: usize, sampler: Sampler) -> Result<Vec<usize>> {
    let k = basis.ncols();
    if p > basis.nrows() {
        return Err(Error::InvalidArgument(format!(
            "cannot select {p} columns out of {}",
            basis.nrows()
        )));
    }
    if k >= p {
        Ok(sampler.select(basis.slice(s![.., ..p]))?.indices)
    } else {
        Ok(ldeim_select(basis, p)?.indices)
    }
}

/// Steps 3–9 of the sparse pipeline for fixed column indices `q`. With
/// `rows` given, row selection is skipped.
pub fn build_lowrank<M: Model + ?Sized>(
    state: &DboState,
    model: &M,
    q: &[usize],
    sampler: Sampler,
    w: &QuadratureWeights,
    all_samples: &[usize],
) -> Result<LowRankRhs> {
    let vq = state.reconstruct_columns(q);
    let fq = model.rhs_columns(state.t, vq.view(), q)?;
    drop(vq);
    let (uf, sv) = weighted_left_modes(fq.view(), w.wx().view(), "compute_UF", false)?;
    drop(fq);
    if uf.ncols() == 0 {
        return Ok(LowRankRhs::empty(state.n(), state.s(), q.to_vec()));
    }
    let prow = sampler.select(uf.view())?.indices;
    let adjacency = model.adjacency(&prow);
    let rows: Vec<usize> = prow.iter().chain(&adjacency).copied().collect();
    let vsub = state.reconstruct_rows(&rows);
    let fp = model.rhs_rows(state.t, &prow, vsub.view(), all_samples)?;
    drop(vsub);
    let zf = compute_zf(fp.view(), uf.view(), &prow)?;
    Ok(LowRankRhs {
        uf,
        zf,
        q: q.to_vec(),
        prow,
        lambda_f: sv.mapv(|x| x * x),
    })
}

/// One full pass of the sparse algorithm: columns from the carry (or `Y`),
/// the low-rank RHS, and the compressed derivative.
pub fn sparse_rhs<M: Model + ?Sized>(
    state: &DboState,
    model: &M,
    carry: &RhsBasisCarry,
    controller: &RankController,
    sampler: Sampler,
    w: &QuadratureWeights,
) -> Result<(DboDerivative, LowRankRhs)> {
    let q = match &carry.plan {
        Some(plan) => plan.clone(),
        None => select_columns(carry.column_basis(state), controller.p, sampler)?,
    };
    let samples: Vec<usize> = (0..state.s()).collect();
    let lr = build_lowrank(state, model, &q, sampler, w, &samples)?;
    let d = project_factored_rhs(state, lr.uf.view(), lr.zf.view(), w)?;
    Ok((d, lr))
}

/// Exactness and error-bound diagnostics against a dense `F`.
#[derive(Clone, Debug, PartialEq)]
pub struct CurDiagnostics {
    /// `‖F − F̂‖₂`.
    pub err2: f64,
    /// `(η_p + η_q) σ_{k+1}`.
    pub bound: f64,
    pub sigma_next: f64,
    pub eta_p: f64,
    pub eta_q: f64,
    /// `max |F̂(prow,q) − F(prow,q)| / ‖F‖_max`.
    pub cur_exactness: f64,
}

impl CurDiagnostics {
    pub fn bound_holds(&self) -> bool {
        self.err2 <= self.bound
    }
}

fn euclidean_basis(x: ArrayView2<f64>) -> Result<Matrix> {
    let ones = Vector::ones(x.nrows());
    Ok(weighted_left_modes(x, ones.view(), "cur_diagnostics", false)?.0)
}

/// Dense singular values, descending, via one-sided Jacobi.
fn dense_singular_values(f: ArrayView2<f64>) -> Result<Vector> {
    if f.nrows() >= f.ncols() {
        Ok(svd_small(f)?.sigma)
    } else {
        Ok(svd_small(f.t())?.sigma)
    }
}

pub fn cur_diagnostics(lr: &LowRankRhs, f: ArrayView2<f64>, w: &QuadratureWeights) -> Result<CurDiagnostics> {
    if f.dim() != (w.n(), w.s()) || lr.uf.nrows() != w.n() || lr.zf.nrows() != w.s() {
        return Err(Error::dims(
            "cur_diagnostics",
            format!("{}x{}", w.n(), w.s()),
            format!("{}x{}", f.nrows(), f.ncols()),
        ));
    }
    let k = lr.rank();
    let fmax = f.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = &f - &lr.assemble();
    let err2 = spectral_norm(diff.view())?;
    let sv = dense_singular_values(f)?;
    let sigma_next = if k < sv.len() { sv[k] } else { 0.0 };

    let (eta_p, eta_q, cur_exactness) = if k == 0 {
        (1.0, 1.0, 0.0)
    } else {
        let eta_p = selection_eta(euclidean_basis(lr.uf.view())?.view(), &lr.prow);
        let zb = euclidean_basis(lr.zf.view())?;
        let eta_q = if lr.q.len() == k && zb.ncols() == k {
            selection_eta(zb.view(), &lr.q)
        } else {
            f64::INFINITY
        };
        let sampled = lr.block(&lr.prow, &lr.q);
        let exact = f.select(Axis(0), &lr.prow).select(Axis(1), &lr.q);
        let gap = (&sampled - &exact).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        (eta_p, eta_q, if fmax > 0.0 { gap / fmax } else { gap })
    };
    let bound = if sigma_next == 0.0 && err2 == 0.0 {
        0.0
    } else {
        (eta_p + eta_q) * sigma_next
    };
    Ok(CurDiagnostics {
        err2,
        bound,
        sigma_next,
        eta_p,
        eta_q,
        cur_exactness,
    })
}

/// S-TDB right-hand side provider for [`crate::integrate::rk4_dbo`].
pub struct SparseRhs<'a, M: Model + ?Sized> {
    model: &'a M,
    w: &'a QuadratureWeights,
    sampler: Sampler,
    controller: RankController,
    carry: RhsBasisCarry,
    stage_reuse: bool,
    samples: Vec<usize>,
    step_q: Vec<usize>,
    stage1: Option<LowRankRhs>,
    last: Option<LowRankRhs>,
}

impl<'a, M: Model + ?Sized> SparseRhs<'a, M> {
    /// Bootstraps `Z_F` from the initial state with `Y` seeding the column selection.
    pub fn new(
        model: &'a M,
        w: &'a QuadratureWeights,
        sampler: Sampler,
        controller: RankController,
        stage_reuse: bool,
        state: &DboState,
    ) -> Result<Self> {
        controller.validate()?;
        if controller.p_max > w.n().min(w.s()) {
            return Err(Error::Config(vec![format!(
                "p_max ({}) exceeds min(n, s) = {}",
                controller.p_max,
                w.n().min(w.s())
            )]));
        }
        let samples: Vec<usize> = (0..w.s()).collect();
        let q = select_columns(state.y.view(), controller.p, sampler)?;
        let lr = build_lowrank(state, model, &q, sampler, w, &samples)?;
        let carry = RhsBasisCarry::from_zf(lr.zf.clone(), w.wxi().view())?;
        Ok(Self {
            model,
            w,
            sampler,
            controller,
            carry,
            stage_reuse,
            samples,
            step_q: q,
            stage1: None,
            last: Some(lr),
        })
    }

    pub fn p(&self) -> usize {
        self.controller.p
    }

    pub fn controller(&self) -> &RankController {
        &self.controller
    }

    /// Stage-1 low-rank RHS of the last accepted step (the bootstrap before any step).
    pub fn last_lowrank(&self) -> Option<&LowRankRhs> {
        self.last.as_ref()
    }
}

impl<M: Model + ?Sized> DboRhs for SparseRhs<'_, M> {
    fn mode(&self) -> Mode {
        Mode::Stdb
    }

    fn weights(&self) -> &QuadratureWeights {
        self.w
    }

    fn stage(&mut self, state: &DboState, stage: usize) -> Result<DboDerivative> {
        if stage == 0 {
            self.step_q = match self.carry.plan.take() {
                Some(plan) => plan,
                None => select_columns(self.carry.column_basis(state), self.controller.p, self.sampler)?,
            };
        }
        let lr = match (&self.stage1, self.stage_reuse && stage > 0) {
            (Some(lr), true) => lr.clone(),
            _ => build_lowrank(state, self.model, &self.step_q, self.sampler, self.w, &self.samples)?,
        };
        let d = project_factored_rhs(state, lr.uf.view(), lr.zf.view(), self.w)?;
        if stage == 0 {
            self.stage1 = Some(lr);
        }
        Ok(d)
    }

    fn end_step(&mut self, _state: &DboState) -> Result<StepInfo> {
        let lr = self
            .stage1
            .take()
            .ok_or_else(|| Error::InvalidArgument("end_step called before any stage".into()))?;
        let (yf, sigma_z) = weighted_left_modes(lr.zf.view(), self.w.wxi().view(), "compute_YF", false)?;
        let eps = if sigma_z.is_empty() {
            0.0
        } else {
            error_indicator(sigma_z.view())?
        };
        let decision = adapt_rank(&self.controller, eps, yf.view())?;
        let p_used = self.controller.p;
        self.controller.p = decision.p;
        self.carry = RhsBasisCarry {
            zf_prev: Some(lr.zf.clone()),
            plan: decision.plan,
            yf: Some(yf),
        };
        let info = StepInfo {
            p: Some(p_used),
            eps: Some(eps),
            rows: lr.prow.clone(),
            cols: lr.q.clone(),
        };
        self.last = Some(lr);
        Ok(info)
    }
}
