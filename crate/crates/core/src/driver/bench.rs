use std::path::Path;
use std::time::Instant;

use crate::dbo::{init_from_samples, DboState};
use crate::error::{Error, Result};
use crate::integrate::{rk4_dbo, DboRhs, Decompressed};
use crate::linalg::QuadratureWeights;
use crate::models::{Burgers, Model};
use crate::sparse::{RankController, SparseRhs};

use super::config::{ModelKind, RunConfig};
use super::output::{fmt_f64, CsvFile};

const WARMUP_STEPS: usize = 2;
const REPEATS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub enum Sweep {
    /// Grid sizes at the configured `s`.
    N(Vec<usize>),
    /// Sample counts at the configured `burgers.n`.
    S(Vec<usize>),
}

impl Sweep {
    fn name(&self) -> &'static str {
        match self {
            Sweep::N(_) => "n",
            Sweep::S(_) => "s",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub sweep: &'static str,
    pub n: usize,
    pub s: usize,
    pub steps: usize,
    /// Mean wall time per step of the decompressed path.
    pub tdb_ns: f64,
    /// Mean wall time per step of the sparse path.
    pub stdb_ns: f64,
}

/// Best of a few repeats of the mean step time over `steps` steps.
fn time_steps<P: DboRhs>(provider: &mut P, mut state: DboState, dt: f64, steps: usize) -> Result<f64> {
    for _ in 0..WARMUP_STEPS {
        state = rk4_dbo(provider, &state, dt)?.0;
    }
    let mut best = f64::INFINITY;
    for _ in 0..REPEATS {
        let start = Instant::now();
        for _ in 0..steps {
            state = rk4_dbo(provider, &state, dt)?.0;
        }
        best = best.min(start.elapsed().as_nanos() as f64 / steps as f64);
    }
    Ok(best)
}

/// Per-step wall time of the decompressed and sparse Burgers solvers over a sweep.
pub fn scaling_bench(cfg: &RunConfig, sweep: &Sweep) -> Result<Vec<BenchRow>> {
    if cfg.model != ModelKind::Burgers {
        return Err(Error::InvalidArgument(
            "scaling_bench supports the burgers model only".into(),
        ));
    }
    let steps = cfg.bench.steps.max(50);
    let points: Vec<(usize, usize)> = match sweep {
        Sweep::N(ns) => ns.iter().map(|&n| (n, cfg.s)).collect(),
        Sweep::S(ss) => ss.iter().map(|&s| (cfg.burgers.n, s)).collect(),
    };
    let p = cfg.p.unwrap_or(8);
    let mut rows = Vec::new();
    for (n, s) in points {
        let bcfg = crate::models::BurgersConfig {
            n,
            ..cfg.burgers.clone()
        };
        let dt = cfg.dt.min(bcfg.stable_dt());
        let model = Burgers::new(&bcfg, s, dt, cfg.seed)?;
        let w = QuadratureWeights::monte_carlo(model.spatial_weights(), s)?;
        let (state, _) = init_from_samples(model.initial_ensemble().view(), cfg.r, &w)?;
        let tdb_ns = time_steps(&mut Decompressed::new(&model, &w), state.clone(), dt, steps)?;
        let mut sparse = SparseRhs::new(
            &model,
            &w,
            cfg.sampler,
            RankController::fixed(p),
            cfg.stage_reuse,
            &state,
        )?;
        let stdb_ns = time_steps(&mut sparse, state, dt, steps)?;
        log::info!(
            "bench n={n} s={s}: tdb {:.1} us, stdb {:.1} us",
            tdb_ns * 1e-3,
            stdb_ns * 1e-3
        );
        rows.push(BenchRow {
            sweep: sweep.name(),
            n,
            s,
            steps,
            tdb_ns,
            stdb_ns,
        });
    }
    Ok(rows)
}

pub fn write_bench(rows: &[BenchRow], path: impl AsRef<Path>) -> Result<()> {
    let mut csv = CsvFile::create(path, &["sweep", "n", "s", "steps", "tdb_ns", "stdb_ns", "speedup"])?;
    for r in rows {
        csv.row([
            r.sweep.to_string(),
            r.n.to_string(),
            r.s.to_string(),
            r.steps.to_string(),
            fmt_f64(r.tdb_ns),
            fmt_f64(r.stdb_ns),
            fmt_f64(r.tdb_ns / r.stdb_ns),
        ])?;
    }
    csv.finish()
}
