//! Stochastic viscous Burgers equation on `[0, 1]`.
//!
//! Second-order central differences on a uniform grid. Both Dirichlet
//! conditions are imposed through a penalty term in the boundary rows so the
//! boundary flows through the same right-hand side the samplers see.

use std::f64::consts::PI;

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{collect_adjacency, map_columns, sample_germs, Model, RowLookup};
use crate::error::{Error, Result};
use crate::linalg::{sym_eig, Matrix, Vector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BurgersConfig {
    pub n: usize,
    pub nu: f64,
    /// Random dimension of the initial and boundary perturbations.
    pub d: usize,
    pub sigma_t: f64,
    pub sigma_x: f64,
    /// Length scale of the squared-exponential initial-condition kernel.
    pub length_scale: f64,
    /// Penalty strength in units of `1/dt`.
    pub penalty: f64,
    /// Turns the convective term off when false (diagnostic use).
    pub advection: bool,
    /// Holds both boundaries at zero instead of `g(t)` (diagnostic use).
    pub homogeneous_bc: bool,
}

impl Default for BurgersConfig {
    fn default() -> Self {
        Self {
            n: 405,
            nu: 0.05,
            d: 4,
            sigma_t: 0.01,
            sigma_x: 0.005,
            length_scale: 0.1,
            penalty: 1.0,
            advection: true,
            homogeneous_bc: false,
        }
    }
}

impl BurgersConfig {
    pub fn validate(&self, errors: &mut Vec<String>) {
        if self.n < 3 {
            errors.push(format!("burgers.n must be at least 3 (got {})", self.n));
        }
        for (name, v) in [
            ("burgers.nu", self.nu),
            ("burgers.length_scale", self.length_scale),
            ("burgers.penalty", self.penalty),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                errors.push(format!("{name} must be positive (got {v})"));
            }
        }
        for (name, v) in [("burgers.sigma_t", self.sigma_t), ("burgers.sigma_x", self.sigma_x)] {
            if !(v >= 0.0 && v.is_finite()) {
                errors.push(format!("{name} must be non-negative (got {v})"));
            }
        }
        if self.d > self.n {
            errors.push(format!("burgers.d = {} exceeds burgers.n = {}", self.d, self.n));
        }
    }

    /// Largest stable RK4 step for the diffusive part with a 0.5 safety factor.
    pub fn stable_dt(&self) -> f64 {
        let dx = 1.0 / (self.n - 1) as f64;
        0.5 * 2.78 * dx * dx / (4.0 * self.nu)
    }
}

#[derive(Clone, Debug)]
pub struct Burgers {
    cfg: BurgersConfig,
    dx: f64,
    inv_2dx: f64,
    inv_dx2: f64,
    kappa: f64,
    kl_values: Vector,
    kl_modes: Matrix,
    xi: Matrix,
}

impl Burgers {
    /// `s` samples with germs drawn from `seed`; the penalty is `cfg.penalty / dt`.
    pub fn new(cfg: &BurgersConfig, s: usize, dt: f64, seed: u64) -> Result<Self> {
        let mut errors = Vec::new();
        cfg.validate(&mut errors);
        if !(dt > 0.0) {
            errors.push(format!("dt must be positive (got {dt})"));
        }
        if !errors.is_empty() {
            return Err(Error::Config(errors));
        }
        let n = cfg.n;
        let dx = 1.0 / (n - 1) as f64;
        let eig = sym_eig(kernel_matrix(n, cfg.length_scale).view())?;
        let kl_values = eig.values.slice(ndarray::s![..cfg.d]).mapv(|l| l.max(0.0));
        let kl_modes = eig.vectors.slice(ndarray::s![.., ..cfg.d]).to_owned();
        Ok(Self {
            cfg: cfg.clone(),
            dx,
            inv_2dx: 1.0 / (2.0 * dx),
            inv_dx2: 1.0 / (dx * dx),
            kappa: cfg.penalty / dt,
            kl_values,
            kl_modes,
            xi: sample_germs(seed, s, cfg.d),
        })
    }

    pub fn config(&self) -> &BurgersConfig {
        &self.cfg
    }

    pub fn grid(&self) -> Vector {
        Vector::from_iter((0..self.cfg.n).map(|i| i as f64 * self.dx))
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn s(&self) -> usize {
        self.xi.nrows()
    }

    /// Leading `d` eigenpairs of the kernel matrix.
    pub fn kl_modes(&self) -> (&Vector, &Matrix) {
        (&self.kl_values, &self.kl_modes)
    }

    pub fn germs(&self) -> &Matrix {
        &self.xi
    }

    pub fn profile(x: f64) -> f64 {
        0.5 * (2.0 * PI * x).sin() * ((2.0 * PI * x).cos().exp() - 1.5)
    }

    /// Left boundary value `g(t; ξ_j)`.
    pub fn boundary_value(&self, t: f64, sample: usize) -> f64 {
        if self.cfg.homogeneous_bc {
            return 0.0;
        }
        let mut pert = 0.0;
        for i in 0..self.cfg.d {
            let k = (i + 1) as f64;
            pert += 0.01 / (k * k) * (k * PI * t).sin() * self.xi[[sample, i]];
        }
        -(2.0 * PI * t).sin() + self.cfg.sigma_t * pert
    }

    /// `n x s` initial ensemble.
    pub fn initial_ensemble(&self) -> Matrix {
        let n = self.cfg.n;
        let s = self.s();
        let mut v = Matrix::zeros((n, s));
        for i in 0..n {
            let base = Self::profile(i as f64 * self.dx);
            for j in 0..s {
                let mut pert = 0.0;
                for k in 0..self.cfg.d {
                    pert += self.kl_values[k].sqrt() * self.kl_modes[[i, k]] * self.xi[[j, k]];
                }
                v[[i, j]] = base + self.cfg.sigma_x * pert;
            }
        }
        v
    }

    #[inline]
    fn point(&self, i: usize, g: f64, vm: f64, vc: f64, vp: f64) -> f64 {
        let n = self.cfg.n;
        if i == 0 {
            -self.kappa * (vc - g)
        } else if i == n - 1 {
            -self.kappa * vc
        } else {
            let diff = self.cfg.nu * (vp - 2.0 * vc + vm) * self.inv_dx2;
            if self.cfg.advection {
                -vc * (vp - vm) * self.inv_2dx + diff
            } else {
                diff
            }
        }
    }

    fn neighbours(&self, i: usize) -> Vec<usize> {
        if i == 0 || i + 1 >= self.cfg.n {
            Vec::new()
        } else {
            vec![i - 1, i + 1]
        }
    }
}

pub fn kernel_matrix(n: usize, length_scale: f64) -> Matrix {
    let dx = 1.0 / (n - 1) as f64;
    Matrix::from_shape_fn((n, n), |(i, j)| {
        let d = (i as f64 - j as f64) * dx;
        (-d * d / (2.0 * length_scale * length_scale)).exp()
    })
}

impl Model for Burgers {
    fn name(&self) -> &'static str {
        "burgers"
    }

    fn n(&self) -> usize {
        self.cfg.n
    }

    fn spatial_weights(&self) -> Vector {
        let n = self.cfg.n;
        Vector::from_iter((0..n).map(|i| if i == 0 || i == n - 1 { 0.5 * self.dx } else { self.dx }))
    }

    fn rhs_columns(&self, t: f64, v: ArrayView2<f64>, samples: &[usize]) -> Result<Matrix> {
        let n = self.cfg.n;
        if v.nrows() != n {
            return Err(Error::dims(
                "burgers rhs_columns",
                format!("{n} rows"),
                v.nrows().to_string(),
            ));
        }
        map_columns(v, samples, |col, sample| {
            let g = self.boundary_value(t, sample);
            let mut out = vec![0.0; n];
            out[0] = self.point(0, g, col[0], col[0], col[0]);
            for i in 1..n - 1 {
                out[i] = self.point(i, g, col[i - 1], col[i], col[i + 1]);
            }
            out[n - 1] = self.point(n - 1, g, col[n - 1], col[n - 1], col[n - 1]);
            Ok(out)
        })
    }

    fn adjacency(&self, rows: &[usize]) -> Vec<usize> {
        collect_adjacency(rows, |i| self.neighbours(i))
    }

    fn rhs_rows(&self, t: f64, rows: &[usize], vsub: ArrayView2<f64>, samples: &[usize]) -> Result<Matrix> {
        let adj = self.adjacency(rows);
        let lookup = RowLookup::new(rows, &adj, vsub.nrows())?;
        let k = vsub.ncols();
        if samples.len() != k {
            return Err(Error::dims(
                "burgers rhs_rows",
                format!("{k} sample ids"),
                samples.len().to_string(),
            ));
        }
        let g: Vec<f64> = samples.iter().map(|&j| self.boundary_value(t, j)).collect();
        let out_rows: Vec<Vec<f64>> = rows
            .par_iter()
            .map(|&i| {
                if i >= self.cfg.n {
                    return Err(Error::InvalidArgument(format!("row {i} out of range")));
                }
                let c = lookup.get(i)?;
                let (m, p) = match self.neighbours(i).as_slice() {
                    [a, b] => (lookup.get(*a)?, lookup.get(*b)?),
                    _ => (c, c),
                };
                Ok((0..k)
                    .map(|j| self.point(i, g[j], vsub[[m, j]], vsub[[c, j]], vsub[[p, j]]))
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
