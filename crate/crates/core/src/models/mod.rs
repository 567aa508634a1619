//! Physics right-hand sides with column, row and stencil access.
//!
//! A [`Model`] evaluates `F = 𝓕(V)` column by column (one Monte Carlo sample
//! per column) and, for the sparse pipeline, at a handful of rows given the
//! state values at those rows plus their stencil neighbours.

use std::collections::HashMap;

use ndarray::ArrayView2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

pub mod burgers;
pub mod diffusion;
pub mod ns2d;

pub use burgers::{Burgers, BurgersConfig};
pub use diffusion::{Diffusion, DiffusionConfig};
pub use ns2d::{Ns2d, NsConfig};

pub trait Model: Send + Sync {
    fn name(&self) -> &'static str;

    /// State dimension `n`.
    fn n(&self) -> usize;

    /// Diagonal of `W_x`.
    fn spatial_weights(&self) -> Vector;

    /// `𝓕` applied to every column of `v`; `samples[k]` is the Monte Carlo
    /// sample that column `k` belongs to.
    fn rhs_columns(&self, t: f64, v: ArrayView2<f64>, samples: &[usize]) -> Result<Matrix>;

    /// Indices outside `rows` whose state values are needed to evaluate the
    /// right-hand side at `rows`, ascending.
    fn adjacency(&self, rows: &[usize]) -> Vec<usize>;

    /// Rows `rows` of `𝓕(V)`. `vsub` holds the state at `[rows; adjacency(rows)]`
    /// (in that order), one column per entry of `samples`.
    fn rhs_rows(&self, t: f64, rows: &[usize], vsub: ArrayView2<f64>, samples: &[usize]) -> Result<Matrix>;
}

/// A model whose right-hand side is a time-independent linear map `L v`.
pub trait LinearModel: Model {
    fn apply_linear(&self, u: ArrayView2<f64>) -> Matrix;
}

/// Evaluates `f` on each column in parallel; column order of the result is
/// fixed, so the output does not depend on the thread count.
pub(crate) fn map_columns<F>(v: ArrayView2<f64>, samples: &[usize], f: F) -> Result<Matrix>
where
    F: Fn(&[f64], usize) -> Result<Vec<f64>> + Sync,
{
    let (n, k) = v.dim();
    if samples.len() != k {
        return Err(Error::dims(
            "rhs_columns",
            format!("{k} sample ids"),
            samples.len().to_string(),
        ));
    }
    let cols: Vec<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|c| {
            let col = v.column(c).to_vec();
            f(&col, samples[c])
        })
        .collect::<Result<_>>()?;
    let mut out = Matrix::zeros((n, k));
    for (c, col) in cols.iter().enumerate() {
        for (i, &x) in col.iter().enumerate() {
            out[[i, c]] = x;
        }
    }
    Ok(out)
}

/// Maps global state indices to their row in a `[rows; adjacency]` block.
pub struct RowLookup {
    map: HashMap<usize, usize>,
}

impl RowLookup {
    pub fn new(rows: &[usize], adjacency: &[usize], supplied: usize) -> Result<Self> {
        let needed = rows.len() + adjacency.len();
        if supplied < needed {
            let missing = rows.iter().chain(adjacency).nth(supplied).copied().unwrap_or(0);
            return Err(Error::MissingAdjacency { row: missing });
        }
        if supplied > needed {
            return Err(Error::dims(
                "rhs_rows",
                format!("{needed} state rows"),
                supplied.to_string(),
            ));
        }
        let map = rows
            .iter()
            .chain(adjacency)
            .enumerate()
            .map(|(local, &global)| (global, local))
            .collect();
        Ok(Self { map })
    }

    #[inline]
    pub fn get(&self, global: usize) -> Result<usize> {
        self.map
            .get(&global)
            .copied()
            .ok_or(Error::MissingAdjacency { row: global })
    }
}

/// Closure-of-stencil helper: union of `neighbours(row)` over `rows`, minus `rows`.
pub fn collect_adjacency(rows: &[usize], neighbours: impl Fn(usize) -> Vec<usize>) -> Vec<usize> {
    let mut out: Vec<usize> = rows
        .iter()
        .flat_map(|&r| neighbours(r))
        .filter(|i| !rows.contains(i))
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Standard-normal germs `ξ` (`s x d`). Sample `j` draws from its own ChaCha
/// stream, so the ensemble does not depend on evaluation order.
pub fn sample_germs(seed: u64, s: usize, d: usize) -> Matrix {
    let mut xi = Matrix::zeros((s, d));
    for j in 0..s {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(j as u64);
        for k in 0..d {
            xi[[j, k]] = StandardNormal.sample(&mut rng);
        }
    }
    xi
}
