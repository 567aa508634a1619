//! Two-dimensional compressible Navier-Stokes on a doubly periodic box.
//!
//! State columns stack `[ρ; ρu; ρv; E]`, each field stored row-major in `x`
//! (`index = field·nx·ny + j·nx + i`). Fluxes are differenced with nested
//! second-order central differences.

use std::f64::consts::PI;

use ndarray::{ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{collect_adjacency, map_columns, sample_germs, Model, RowLookup};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NsConfig {
    pub re: f64,
    pub pr: f64,
    pub gamma: f64,
    pub ma: f64,
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub delta: f64,
    pub h: f64,
    pub a: f64,
    pub b: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub u_max: f64,
    /// Number of random velocity perturbation modes.
    pub d: usize,
    pub t_spinup: f64,
}

impl Default for NsConfig {
    fn default() -> Self {
        Self {
            re: 3000.0,
            pr: 1.0,
            gamma: 1.4,
            ma: 0.5,
            nx: 64,
            ny: 64,
            lx: 2.0,
            ly: 1.0,
            delta: 1.45e-4,
            h: 0.01,
            a: 0.45,
            b: 0.55,
            y_min: 0.45,
            y_max: 0.55,
            u_max: 1.0,
            d: 10,
            t_spinup: 3.0,
        }
    }
}

impl NsConfig {
    pub fn validate(&self, errors: &mut Vec<String>) {
        for (name, v) in [
            ("ns2d.re", self.re),
            ("ns2d.pr", self.pr),
            ("ns2d.ma", self.ma),
            ("ns2d.lx", self.lx),
            ("ns2d.ly", self.ly),
            ("ns2d.h", self.h),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                errors.push(format!("{name} must be positive (got {v})"));
            }
        }
        if !(self.gamma > 1.0) {
            errors.push(format!("ns2d.gamma must exceed 1 (got {})", self.gamma));
        }
        if self.nx < 5 || self.ny < 5 {
            errors.push(format!("ns2d grid must be at least 5x5 (got {}x{})", self.nx, self.ny));
        }
        if !(self.t_spinup >= 0.0) {
            errors.push(format!("ns2d.t_spinup must be non-negative (got {})", self.t_spinup));
        }
    }

    pub fn points(&self) -> usize {
        self.nx * self.ny
    }

    pub fn n(&self) -> usize {
        4 * self.points()
    }
}

#[derive(Clone, Copy, Debug)]
struct Prim {
    rho: f64,
    u: f64,
    v: f64,
    e: f64,
    p: f64,
    t: f64,
}

#[derive(Clone, Copy, Debug)]
struct Grad {
    ux: f64,
    uy: f64,
    vx: f64,
    vy: f64,
    tx: f64,
    ty: f64,
}

#[derive(Clone, Debug)]
pub struct Ns2d {
    cfg: NsConfig,
    dx: f64,
    dy: f64,
    inv_2dx: f64,
    inv_2dy: f64,
    inv_re: f64,
    conductivity: f64,
    xi: Matrix,
}

impl Ns2d {
    pub fn new(cfg: &NsConfig, s: usize, seed: u64) -> Result<Self> {
        let mut errors = Vec::new();
        cfg.validate(&mut errors);
        if !errors.is_empty() {
            return Err(Error::Config(errors));
        }
        let dx = cfg.lx / cfg.nx as f64;
        let dy = cfg.ly / cfg.ny as f64;
        let ec = (cfg.gamma - 1.0) * cfg.ma * cfg.ma;
        let pe = cfg.re * cfg.pr;
        Ok(Self {
            cfg: cfg.clone(),
            dx,
            dy,
            inv_2dx: 1.0 / (2.0 * dx),
            inv_2dy: 1.0 / (2.0 * dy),
            inv_re: 1.0 / cfg.re,
            conductivity: 1.0 / (ec * pe),
            xi: sample_germs(seed, s, cfg.d),
        })
    }

    pub fn config(&self) -> &NsConfig {
        &self.cfg
    }

    pub fn germs(&self) -> &Matrix {
        &self.xi
    }

    /// Replaces the sampled germs with `xi` (`s x d`).
    pub fn with_germs(mut self, xi: Matrix) -> Result<Self> {
        if xi.ncols() != self.cfg.d {
            return Err(Error::dims(
                "ns2d germs",
                format!("{} columns", self.cfg.d),
                xi.ncols().to_string(),
            ));
        }
        self.xi = xi;
        Ok(self)
    }

    /// Conservative state from primitive fields `(ρ, u, v, p)` given per grid point.
    pub fn conservative(&self, rho: &[f64], u: &[f64], v: &[f64], p: &[f64]) -> Vector {
        let np = self.cfg.points();
        let mut q = Vector::zeros(4 * np);
        for k in 0..np {
            q[k] = rho[k];
            q[np + k] = rho[k] * u[k];
            q[2 * np + k] = rho[k] * v[k];
            q[3 * np + k] = p[k] / (self.cfg.gamma - 1.0) + 0.5 * rho[k] * (u[k] * u[k] + v[k] * v[k]);
        }
        q
    }

    /// Density from pressure and temperature: `ρ = γ Ma² p / T`.
    pub fn density(&self, p: f64, t: f64) -> f64 {
        self.cfg.gamma * self.cfg.ma * self.cfg.ma * p / t
    }

    /// The double shear layer at `t = 0`.
    pub fn shear_layer(&self) -> Vector {
        let c = &self.cfg;
        let np = c.points();
        let (mut rho, mut u, mut v, p) = (vec![0.0; np], vec![0.0; np], vec![0.0; np], vec![1.0; np]);
        for j in 0..c.ny {
            let y = j as f64 * self.dy;
            let ga = (-(y - c.a).powi(2) / (c.h * c.h)).exp();
            let gb = (-(y - c.b).powi(2) / (c.h * c.h)).exp();
            let layer = ((y - c.y_min) / c.h).tanh() - ((y - c.y_max) / c.h).tanh();
            let ubar = 0.5 * c.u_max * (layer - 1.0);
            let temp = 0.5 + 0.25 * layer;
            for i in 0..c.nx {
                let x = i as f64 * self.dx;
                let k = j * c.nx + i;
                let arg = 10.0 * PI * x / c.lx;
                u[k] = ubar + 2.0 * c.lx * c.delta / (c.h * c.h) * ((y - c.b) * gb + (y - c.a) * ga) * arg.sin();
                v[k] = 10.0 * PI * c.delta * (gb + ga) * arg.cos();
                rho[k] = self.density(1.0, temp);
            }
        }
        self.conservative(&rho, &u, &v, &p)
    }

    /// Velocity perturbation `(δu, δv)` of one sample on the grid.
    pub fn perturbation(&self, sample: usize) -> (Vec<f64>, Vec<f64>) {
        let c = &self.cfg;
        let np = c.points();
        let (mut du, mut dv) = (vec![0.0; np], vec![0.0; np]);
        for j in 0..c.ny {
            let y = j as f64 * self.dy;
            let env = (y - c.b) * (-(y - c.b).powi(2) / (c.h * c.h)).exp()
                + (y - c.a) * (-(y - c.a).powi(2) / (c.h * c.h)).exp();
            for i in 0..c.nx {
                let x = i as f64 * self.dx;
                let k = j * c.nx + i;
                for m in 0..c.d {
                    let kk = (m + 1) as f64;
                    let amp = 10.0 / (kk * kk) * env * self.xi[[sample, m]];
                    let arg = 2.0 * kk * PI * x / c.lx;
                    du[k] += amp * arg.sin();
                    dv[k] += amp * arg.cos();
                }
            }
        }
        (du, dv)
    }

    /// Ensemble built from a deterministic base state: velocities perturbed,
    /// `ρ` and `E` kept, momenta recomputed.
    pub fn ensemble_from(&self, base: &Vector) -> Result<Matrix> {
        let np = self.cfg.points();
        if base.len() != 4 * np {
            return Err(Error::dims(
                "ns2d ensemble",
                (4 * np).to_string(),
                base.len().to_string(),
            ));
        }
        let s = self.xi.nrows();
        let cols: Vec<Vector> = (0..s)
            .into_par_iter()
            .map(|j| {
                let (du, dv) = self.perturbation(j);
                let mut q = base.clone();
                for k in 0..np {
                    let rho = base[k];
                    q[np + k] = base[np + k] + rho * du[k];
                    q[2 * np + k] = base[2 * np + k] + rho * dv[k];
                }
                q
            })
            .collect();
        let mut out = Matrix::zeros((4 * np, s));
        for (j, col) in cols.iter().enumerate() {
            out.column_mut(j).assign(col);
        }
        Ok(out)
    }

    /// Shear layer integrated to `t_spinup` with RK4 at step `dt`, then perturbed.
    pub fn initial_ensemble(&self, dt: f64) -> Result<Matrix> {
        let base = self.spin_up(dt)?;
        self.ensemble_from(&base)
    }

    pub fn spin_up(&self, dt: f64) -> Result<Vector> {
        let steps = (self.cfg.t_spinup / dt).round() as usize;
        let mut v = self.shear_layer().insert_axis(Axis(1));
        let mut t = 0.0;
        for _ in 0..steps {
            v = crate::integrate::rk4_fom(self, v.view(), t, dt, &[0])?;
            t += dt;
        }
        Ok(v.column(0).to_owned())
    }

    #[inline]
    fn point_index(&self, i: isize, j: isize) -> usize {
        let nx = self.cfg.nx as isize;
        let ny = self.cfg.ny as isize;
        (j.rem_euclid(ny) * nx + i.rem_euclid(nx)) as usize
    }

    #[inline]
    fn prim(&self, q: [f64; 4], index: usize) -> Result<Prim> {
        let rho = q[0];
        if !(rho > 0.0) {
            return Err(Error::NonPositiveDensity { index });
        }
        let u = q[1] / rho;
        let v = q[2] / rho;
        let e = q[3];
        let p = (self.cfg.gamma - 1.0) * (e - 0.5 * rho * (u * u + v * v));
        let t = self.cfg.gamma * self.cfg.ma * self.cfg.ma * p / rho;
        Ok(Prim { rho, u, v, e, p, t })
    }

    #[inline]
    fn grad(&self, e: &Prim, w: &Prim, n: &Prim, s: &Prim) -> Grad {
        Grad {
            ux: (e.u - w.u) * self.inv_2dx,
            uy: (n.u - s.u) * self.inv_2dy,
            vx: (e.v - w.v) * self.inv_2dx,
            vy: (n.v - s.v) * self.inv_2dy,
            tx: (e.t - w.t) * self.inv_2dx,
            ty: (n.t - s.t) * self.inv_2dy,
        }
    }

    #[inline]
    fn flux(&self, c: &Prim, g: &Grad) -> ([f64; 4], [f64; 4]) {
        let div = g.ux + g.vy;
        let txx = self.inv_re * (2.0 * g.ux - 2.0 / 3.0 * div);
        let tyy = self.inv_re * (2.0 * g.vy - 2.0 / 3.0 * div);
        let txy = self.inv_re * (g.uy + g.vx);
        let qx = -self.conductivity * g.tx;
        let qy = -self.conductivity * g.ty;
        let mu = c.rho * c.u;
        let mv = c.rho * c.v;
        let fx = [
            mu,
            mu * c.u + c.p - txx,
            mu * c.v - txy,
            (c.e + c.p) * c.u - (txx * c.u + txy * c.v) + qx,
        ];
        let fy = [
            mv,
            mv * c.u - txy,
            mv * c.v + c.p - tyy,
            (c.e + c.p) * c.v - (txy * c.u + tyy * c.v) + qy,
        ];
        (fx, fy)
    }

    #[inline]
    fn combine(&self, fxe: &[f64; 4], fxw: &[f64; 4], fyn: &[f64; 4], fys: &[f64; 4]) -> [f64; 4] {
        let mut out = [0.0; 4];
        for f in 0..4 {
            out[f] = -(fxe[f] - fxw[f]) * self.inv_2dx - (fyn[f] - fys[f]) * self.inv_2dy;
        }
        out
    }

    fn column_rhs(&self, col: &[f64]) -> Result<Vec<f64>> {
        let (nx, ny) = (self.cfg.nx, self.cfg.ny);
        let np = nx * ny;
        let prims: Vec<Prim> = (0..np)
            .map(|k| self.prim([col[k], col[np + k], col[2 * np + k], col[3 * np + k]], k))
            .collect::<Result<_>>()?;
        let mut fx = vec![[0.0; 4]; np];
        let mut fy = vec![[0.0; 4]; np];
        for j in 0..ny as isize {
            for i in 0..nx as isize {
                let k = self.point_index(i, j);
                let g = self.grad(
                    &prims[self.point_index(i + 1, j)],
                    &prims[self.point_index(i - 1, j)],
                    &prims[self.point_index(i, j + 1)],
                    &prims[self.point_index(i, j - 1)],
                );
                (fx[k], fy[k]) = self.flux(&prims[k], &g);
            }
        }
        let mut out = vec![0.0; 4 * np];
        for j in 0..ny as isize {
            for i in 0..nx as isize {
                let k = self.point_index(i, j);
                let r = self.combine(
                    &fx[self.point_index(i + 1, j)],
                    &fx[self.point_index(i - 1, j)],
                    &fy[self.point_index(i, j + 1)],
                    &fy[self.point_index(i, j - 1)],
                );
                for f in 0..4 {
                    out[f * np + k] = r[f];
                }
            }
        }
        Ok(out)
    }

    /// Grid points (including the centre) whose state enters the RHS at point `(i, j)`.
    fn stencil_points(&self, k: usize) -> [usize; 13] {
        let nx = self.cfg.nx;
        let (i, j) = ((k % nx) as isize, (k / nx) as isize);
        [
            self.point_index(i, j),
            self.point_index(i - 1, j),
            self.point_index(i + 1, j),
            self.point_index(i - 2, j),
            self.point_index(i + 2, j),
            self.point_index(i, j - 1),
            self.point_index(i, j + 1),
            self.point_index(i, j - 2),
            self.point_index(i, j + 2),
            self.point_index(i - 1, j - 1),
            self.point_index(i + 1, j - 1),
            self.point_index(i - 1, j + 1),
            self.point_index(i + 1, j + 1),
        ]
    }

    /// Right-hand side of all four fields at point `k`, reading states through `get`.
    fn point_rhs(&self, k: usize, get: &dyn Fn(usize) -> Result<Prim>) -> Result<[f64; 4]> {
        let nx = self.cfg.nx;
        let (i, j) = ((k % nx) as isize, (k / nx) as isize);
        let flux_at = |i: isize, j: isize| -> Result<([f64; 4], [f64; 4])> {
            let c = get(self.point_index(i, j))?;
            let g = self.grad(
                &get(self.point_index(i + 1, j))?,
                &get(self.point_index(i - 1, j))?,
                &get(self.point_index(i, j + 1))?,
                &get(self.point_index(i, j - 1))?,
            );
            Ok(self.flux(&c, &g))
        };
        let (fxe, _) = flux_at(i + 1, j)?;
        let (fxw, _) = flux_at(i - 1, j)?;
        let (_, fyn) = flux_at(i, j + 1)?;
        let (_, fys) = flux_at(i, j - 1)?;
        Ok(self.combine(&fxe, &fxw, &fyn, &fys))
    }
}

impl Model for Ns2d {
    fn name(&self) -> &'static str {
        "ns2d"
    }

    fn n(&self) -> usize {
        self.cfg.n()
    }

    fn spatial_weights(&self) -> Vector {
        Vector::from_elem(self.cfg.n(), self.dx * self.dy)
    }

    fn rhs_columns(&self, _t: f64, v: ArrayView2<f64>, samples: &[usize]) -> Result<Matrix> {
        if v.nrows() != self.cfg.n() {
            return Err(Error::dims(
                "ns2d rhs_columns",
                format!("{} rows", self.cfg.n()),
                v.nrows().to_string(),
            ));
        }
        map_columns(v, samples, |col, _| self.column_rhs(col))
    }

    fn adjacency(&self, rows: &[usize]) -> Vec<usize> {
        let np = self.cfg.points();
        collect_adjacency(rows, |r| {
            let pts = self.stencil_points(r % np);
            (0..4).flat_map(|f| pts.iter().map(move |&k| f * np + k)).collect()
        })
    }

    fn rhs_rows(&self, _t: f64, rows: &[usize], vsub: ArrayView2<f64>, samples: &[usize]) -> Result<Matrix> {
        let np = self.cfg.points();
        let adj = self.adjacency(rows);
        let lookup = RowLookup::new(rows, &adj, vsub.nrows())?;
        let k = vsub.ncols();
        if samples.len() != k {
            return Err(Error::dims(
                "ns2d rhs_rows",
                format!("{k} sample ids"),
                samples.len().to_string(),
            ));
        }
        let out_rows: Vec<Vec<f64>> = rows
            .par_iter()
            .map(|&r| {
                if r >= 4 * np {
                    return Err(Error::InvalidArgument(format!("row {r} out of range")));
                }
                let (field, point) = (r / np, r % np);
                let mut local = [[0usize; 4]; 13];
                let pts = self.stencil_points(point);
                for (slot, &pk) in pts.iter().enumerate() {
                    for (f, l) in local[slot].iter_mut().enumerate() {
                        *l = lookup.get(f * np + pk)?;
                    }
                }
                (0..k)
                    .map(|j| {
                        let get = |pk: usize| -> Result<Prim> {
                            let slot = pts
                                .iter()
                                .position(|&x| x == pk)
                                .ok_or(Error::MissingAdjacency { row: pk })?;
                            let l = &local[slot];
                            self.prim([vsub[[l[0], j]], vsub[[l[1], j]], vsub[[l[2], j]], vsub[[l[3], j]]], pk)
                        };
                        Ok(self.point_rhs(point, &get)?[field])
                    })
                    .collect()
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
