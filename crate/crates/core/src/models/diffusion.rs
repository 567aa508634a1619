//! Homogeneous linear diffusion `∂v/∂t = ν ∂²v/∂x²` on the periodic unit interval.

use std::f64::consts::PI;

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{collect_adjacency, map_columns, sample_germs, LinearModel, Model, RowLookup};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    pub n: usize,
    pub nu: f64,
    /// Number of random Fourier modes in the initial ensemble.
    pub d: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self { n: 64, nu: 0.01, d: 4 }
    }
}

impl DiffusionConfig {
    pub fn validate(&self, errors: &mut Vec<String>) {
        if self.n < 3 {
            errors.push(format!("diffusion.n must be at least 3 (got {})", self.n));
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            errors.push(format!("diffusion.nu must be positive (got {})", self.nu));
        }
        if 2 * self.d >= self.n {
            errors.push(format!("diffusion.d = {} is not resolved by n = {}", self.d, self.n));
        }
    }
}

#[derive(Clone, Debug)]
pub struct Diffusion {
    cfg: DiffusionConfig,
    dx: f64,
    coef: f64,
    xi: Matrix,
}

impl Diffusion {
    pub fn new(cfg: &DiffusionConfig, s: usize, seed: u64) -> Result<Self> {
        let mut errors = Vec::new();
        cfg.validate(&mut errors);
        if !errors.is_empty() {
            return Err(Error::Config(errors));
        }
        let dx = 1.0 / cfg.n as f64;
        Ok(Self {
            cfg: cfg.clone(),
            dx,
            coef: cfg.nu / (dx * dx),
            xi: sample_germs(seed, s, cfg.d),
        })
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn grid(&self) -> Vector {
        Vector::from_iter((0..self.cfg.n).map(|i| i as f64 * self.dx))
    }

    /// Column `j` is `1 + Σ_k ξ_{jk} sin(2πk x + k) / k`.
    pub fn initial_ensemble(&self) -> Matrix {
        let n = self.cfg.n;
        let s = self.xi.nrows();
        Matrix::from_shape_fn((n, s), |(i, j)| {
            let x = i as f64 * self.dx;
            let mut v = 1.0;
            for k in 0..self.cfg.d {
                let kk = (k + 1) as f64;
                v += self.xi[[j, k]] * (2.0 * PI * kk * x + kk).sin() / kk;
            }
            v
        })
    }

    /// Largest stable RK4 step with a 0.5 safety factor.
    pub fn stable_dt(&self) -> f64 {
        0.5 * 2.78 / (4.0 * self.coef)
    }

    #[inline]
    fn point(&self, vm: f64, vc: f64, vp: f64) -> f64 {
        self.coef * (vp - 2.0 * vc + vm)
    }

    fn wrap(&self, i: usize) -> (usize, usize) {
        let n = self.cfg.n;
        ((i + n - 1) % n, (i + 1) % n)
    }

    fn apply_column(&self, col: &[f64]) -> Vec<f64> {
        (0..self.cfg.n)
            .map(|i| {
                let (m, p) = self.wrap(i);
                self.point(col[m], col[i], col[p])
            })
            .collect()
    }
}

impl Model for Diffusion {
    fn name(&self) -> &'static str {
        "diffusion"
    }

    fn n(&self) -> usize {
        self.cfg.n
    }

    fn spatial_weights(&self) -> Vector {
        Vector::from_elem(self.cfg.n, self.dx)
    }

    fn rhs_columns(&self, _t: f64, v: ArrayView2<f64>, samples: &[usize]) -> Result<Matrix> {
        if v.nrows() != self.cfg.n {
            return Err(Error::dims(
                "diffusion rhs_columns",
                format!("{} rows", self.cfg.n),
                v.nrows().to_string(),
            ));
        }
        map_columns(v, samples, |col, _| Ok(self.apply_column(col)))
    }

    fn adjacency(&self, rows: &[usize]) -> Vec<usize> {
        collect_adjacency(rows, |i| {
            let (m, p) = self.wrap(i);
            vec![m, p]
        })
    }

    fn rhs_rows(&self, _t: f64, rows: &[usize], vsub: ArrayView2<f64>, samples: &[usize]) -> Result<Matrix> {
        let adj = self.adjacency(rows);
        let lookup = RowLookup::new(rows, &adj, vsub.nrows())?;
        let k = vsub.ncols();
        if samples.len() != k {
            return Err(Error::dims(
                "diffusion rhs_rows",
                format!("{k} sample ids"),
                samples.len().to_string(),
            ));
        }
        let out_rows: Vec<Vec<f64>> = rows
            .par_iter()
            .map(|&i| {
                let (m, p) = self.wrap(i);
                let (m, c, p) = (lookup.get(m)?, lookup.get(i)?, lookup.get(p)?);
                Ok((0..k)
                    .map(|j| self.point(vsub[[m, j]], vsub[[c, j]], vsub[[p, j]]))
                    .collect())
            })
            .collect::<Result<_>>()?;
        let mut out = Matrix::zeros((rows.len(), k));
        for (r, vals) in out_rows.iter().enumerate() {
            for (j, &x) in vals.iter().enumerate() {
                out[[r, j]] = x;
            }
        }
        Ok(out)
    }
}

impl LinearModel for Diffusion {
    fn apply_linear(&self, u: ArrayView2<f64>) -> Matrix {
        let mut out = Matrix::zeros(u.dim());
        for (c, col) in u.columns().into_iter().enumerate() {
            let col = col.to_vec();
            for (i, x) in self.apply_column(&col).into_iter().enumerate() {
                out[[i, c]] = x;
            }
        }
        out
    }
}
