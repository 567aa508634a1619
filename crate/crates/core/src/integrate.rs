//! Classical RK4 for the full-order ensemble and for the DBO triplet.

use std::time::Instant;

use ndarray::{ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::dbo::{dbo_rhs_decompressed, DboDerivative, DboState};
use crate::error::{Error, Result};
use crate::linalg::{reorthonormalize, Matrix, QuadratureWeights};
use crate::models::Model;

/// Entries above this magnitude count as a blow-up.
pub const BLOW_UP: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Fom,
    Tdb,
    Stdb,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Fom => "fom",
            Mode::Tdb => "tdb",
            Mode::Stdb => "stdb",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    /// Time at the end of the step.
    pub t: f64,
    pub dt: f64,
    pub mode: Mode,
    pub wall_ns: u64,
    pub p: Option<usize>,
    pub eps: Option<f64>,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

/// What a provider reports once a step has been accepted.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepInfo {
    pub p: Option<usize>,
    pub eps: Option<f64>,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

/// Source of DBO derivatives for [`rk4_dbo`].
pub trait DboRhs {
    fn mode(&self) -> Mode;

    fn weights(&self) -> &QuadratureWeights;

    /// Derivative at an RK stage; `stage` runs 0..4 within a step.
    fn stage(&mut self, state: &DboState, stage: usize) -> Result<DboDerivative>;

    /// Called with the reorthonormalized state after the step.
    fn end_step(&mut self, _state: &DboState) -> Result<StepInfo> {
        Ok(StepInfo::default())
    }
}

/// Decompressed TDB: assembles the full `F` every stage.
pub struct Decompressed<'a, M: Model + ?Sized> {
    model: &'a M,
    w: &'a QuadratureWeights,
    samples: Vec<usize>,
}

impl<'a, M: Model + ?Sized> Decompressed<'a, M> {
    pub fn new(model: &'a M, w: &'a QuadratureWeights) -> Self {
        Self {
            model,
            w,
            samples: (0..w.s()).collect(),
        }
    }
}

impl<M: Model + ?Sized> DboRhs for Decompressed<'_, M> {
    fn mode(&self) -> Mode {
        Mode::Tdb
    }

    fn weights(&self) -> &QuadratureWeights {
        self.w
    }

    fn stage(&mut self, state: &DboState, _stage: usize) -> Result<DboDerivative> {
        let f = self
            .model
            .rhs_columns(state.t, state.reconstruct().view(), &self.samples)?;
        dbo_rhs_decompressed(state, f.view(), self.w)
    }
}

fn check_finite(m: &Matrix, t: f64) -> Result<()> {
    for (idx, &x) in m.indexed_iter() {
        if !x.is_finite() || x.abs() > BLOW_UP {
            return Err(Error::BlowUp { t, column: idx.1 });
        }
    }
    Ok(())
}

/// One RK4 step of `dV/dt = 𝓕(V)` starting at time `t`.
pub fn rk4_fom<M: Model + ?Sized>(model: &M, v: ArrayView2<f64>, t: f64, dt: f64, samples: &[usize]) -> Result<Matrix> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive (got {dt})")));
    }
    let h = 0.5 * dt;
    let k1 = model.rhs_columns(t, v, samples)?;
    check_finite(&k1, t)?;
    let k2 = model.rhs_columns(t + h, (&v + &(&k1 * h)).view(), samples)?;
    check_finite(&k2, t + h)?;
    let k3 = model.rhs_columns(t + h, (&v + &(&k2 * h)).view(), samples)?;
    check_finite(&k3, t + h)?;
    let k4 = model.rhs_columns(t + dt, (&v + &(&k3 * dt)).view(), samples)?;
    check_finite(&k4, t + dt)?;
    let mut out = v.to_owned();
    let c = dt / 6.0;
    Zip::from(&mut out)
        .and(&k1)
        .and(&k2)
        .and(&k3)
        .and(&k4)
        .for_each(|o, &a, &b, &cc, &d| *o += c * (a + 2.0 * b + 2.0 * cc + d));
    check_finite(&out, t + dt)?;
    Ok(out)
}

fn combine(x: &Matrix, k: [&Matrix; 4], dt: f64) -> Matrix {
    let mut out = x.clone();
    let c = dt / 6.0;
    Zip::from(&mut out)
        .and(k[0])
        .and(k[1])
        .and(k[2])
        .and(k[3])
        .for_each(|o, &a, &b, &cc, &d| *o += c * (a + 2.0 * b + 2.0 * cc + d));
    out
}

fn check_derivative(d: &DboDerivative, t: f64) -> Result<()> {
    check_finite(&d.du, t)?;
    check_finite(&d.dsigma, t)?;
    check_finite(&d.dy, t)
}

/// One RK4 step of the DBO triplet followed by reorthonormalization of `U`
/// and `Y` with the triangular factors folded into Σ.
pub fn rk4_dbo<P: DboRhs + ?Sized>(provider: &mut P, state: &DboState, dt: f64) -> Result<(DboState, StepReport)> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive (got {dt})")));
    }
    let start = Instant::now();
    let t = state.t;
    let h = 0.5 * dt;
    let k1 = provider.stage(state, 0)?;
    check_derivative(&k1, t)?;
    let k2 = provider.stage(&state.advanced(&k1, h, t + h), 1)?;
    check_derivative(&k2, t + h)?;
    let k3 = provider.stage(&state.advanced(&k2, h, t + h), 2)?;
    check_derivative(&k3, t + h)?;
    let k4 = provider.stage(&state.advanced(&k3, dt, t + dt), 3)?;
    check_derivative(&k4, t + dt)?;

    let u = combine(&state.u, [&k1.du, &k2.du, &k3.du, &k4.du], dt);
    let sigma = combine(&state.sigma, [&k1.dsigma, &k2.dsigma, &k3.dsigma, &k4.dsigma], dt);
    let y = combine(&state.y, [&k1.dy, &k2.dy, &k3.dy, &k4.dy], dt);
    check_finite(&u, t + dt)?;
    check_finite(&sigma, t + dt)?;
    check_finite(&y, t + dt)?;

    let w = provider.weights();
    let (u, tu) = reorthonormalize(u.view(), w.wx().view())?;
    let (y, ty) = reorthonormalize(y.view(), w.wxi().view())?;
    let sigma = tu.dot(&sigma).dot(&ty.t());
    let next = DboState { u, sigma, y, t: t + dt };

    let info = provider.end_step(&next)?;
    let wall_ns = (start.elapsed().as_nanos() as u64).max(1);
    let report = StepReport {
        t: next.t,
        dt,
        mode: provider.mode(),
        wall_ns,
        p: info.p,
        eps: info.eps,
        rows: info.rows,
        cols: info.cols,
    };
    Ok((next, report))
}
