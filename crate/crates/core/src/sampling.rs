//! Interpolation index selection: DEIM, Q-DEIM and L-DEIM.
//!
//! The selectors work on raw basis entries; weighting only enters upstream
//! when the bases themselves are built. Every argmax breaks ties toward the
//! lowest index so selections are deterministic.

use ndarray::{s, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{pivoted_qr, sym_eig, Lu, Matrix, GRAM_RANK_TOL};

/// Which greedy selector to run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    #[default]
    Deim,
    Qdeim,
}

impl Sampler {
    pub fn select(self, psi: ArrayView2<f64>) -> Result<SelectionResult> {
        match self {
            Sampler::Deim => deim_select(psi),
            Sampler::Qdeim => qdeim_select(psi),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// Distinct indices in selection order.
    pub indices: Vec<usize>,
    /// `‖Ψ(indices, :)⁻¹‖₂` over the leading `indices.len()` basis columns
    /// (infinite if that block is singular).
    pub eta: f64,
}

fn argmax_abs(x: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = 0;
    let mut best_val = -1.0;
    for (i, v) in x.enumerate() {
        if v.abs() > best_val {
            best_val = v.abs();
            best = i;
        }
    }
    (best, best_val)
}

fn check_shape(psi: ArrayView2<f64>, what: &'static str) -> Result<()> {
    let (m, p) = psi.dim();
    if p == 0 || p > m {
        return Err(Error::dims(what, "basis with 1 <= p <= m columns", format!("{m}x{p}")));
    }
    Ok(())
}

/// Runs the DEIM recurrence, returning the selected indices and the deflated
/// basis `[ψ₁, r₂, …, r_p]` (each column replaced by its interpolation residual).
fn deim_core(psi: ArrayView2<f64>) -> Result<(Vec<usize>, Matrix)> {
    let (m, p) = psi.dim();
    let mut deflated = psi.to_owned();
    let (first, peak) = argmax_abs(psi.column(0).iter().cloned());
    if peak == 0.0 {
        return Err(Error::SingularSystem { what: "deim_select" });
    }
    let mut idx = vec![first];
    for l in 1..p {
        let block = psi.select(Axis(0), &idx);
        let lu = Lu::factor(block.slice(s![.., ..l]), "deim_select")?;
        let rhs = block.column(l).to_owned();
        let c = lu.solve_vec(rhs.view());
        let residual = &psi.column(l) - &psi.slice(s![.., ..l]).dot(&c);
        let (next, peak) = argmax_abs(residual.iter().cloned());
        if peak == 0.0 || idx.contains(&next) {
            return Err(Error::SingularSystem { what: "deim_select" });
        }
        deflated.column_mut(l).assign(&residual);
        idx.push(next);
        debug_assert!(idx.len() <= m);
    }
    Ok((idx, deflated))
}

/// Greedy DEIM: each new index sits at the peak of the interpolation residual
/// of the next basis vector against the ones already chosen.
pub fn deim_select(psi: ArrayView2<f64>) -> Result<SelectionResult> {
    check_shape(psi, "deim_select")?;
    let (indices, _) = deim_core(psi)?;
    let eta = selection_eta(psi, &indices);
    Ok(SelectionResult { indices, eta })
}

/// Q-DEIM: the first `p` column pivots of a pivoted QR of `Ψᵀ`.
pub fn qdeim_select(psi: ArrayView2<f64>) -> Result<SelectionResult> {
    check_shape(psi, "qdeim_select")?;
    let p = psi.ncols();
    let qr = pivoted_qr(psi.t())?;
    let indices = qr.pivot[..p].to_vec();
    let eta = selection_eta(psi, &indices);
    Ok(SelectionResult { indices, eta })
}

/// L-DEIM: DEIM for the first `p` indices, then the `target - p` remaining
/// rows with the largest norms of the deflated basis.
pub fn ldeim_select(psi: ArrayView2<f64>, target: usize) -> Result<SelectionResult> {
    check_shape(psi, "ldeim_select")?;
    let (m, p) = psi.dim();
    if target < p || target > m {
        return Err(Error::InvalidArgument(format!(
            "ldeim_select: target {target} outside {p}..={m}"
        )));
    }
    let (mut indices, deflated) = deim_core(psi)?;
    if target > p {
        let scores: Vec<f64> = deflated.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
        let mut order: Vec<usize> = (0..m).filter(|i| !indices.contains(i)).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        indices.extend(order.into_iter().take(target - p));
    }
    let eta = selection_eta(psi, &indices[..p]);
    Ok(SelectionResult { indices, eta })
}

/// `‖Ψ(indices, :)⁻¹‖₂` from the smallest eigenvalue of the Gram matrix of
/// the square selected block. Returns `f64::INFINITY` when the block is
/// singular (or not square).
pub fn selection_eta(psi: ArrayView2<f64>, indices: &[usize]) -> f64 {
    let p = psi.ncols();
    if indices.len() != p || indices.iter().any(|&i| i >= psi.nrows()) {
        return f64::INFINITY;
    }
    let block = psi.select(Axis(0), indices);
    let gram = block.t().dot(&block);
    let Ok(eig) = sym_eig(gram.view()) else {
        return f64::INFINITY;
    };
    let lmin = eig.values[p - 1];
    let lmax = eig.values[0];
    if !(lmin > GRAM_RANK_TOL * lmax) || lmin <= 0.0 {
        return f64::INFINITY;
    }
    1.0 / lmin.sqrt()
}
