//! Run configuration, experiment orchestration and file output.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde_json::json;

use crate::dbo::{init_from_samples, singular_values, total_error, trajectory_gap, DboState};
use crate::error::{Error, Result};
use crate::integrate::{rk4_dbo, rk4_fom, DboRhs, Decompressed, StepReport};
use crate::linalg::{gram_singular_values, Matrix, QuadratureWeights};
use crate::models::{Burgers, Diffusion, Model, Ns2d};
use crate::sparse::{cur_diagnostics, CurDiagnostics, SparseRhs};

mod bench;
mod config;
mod output;

pub use bench::{scaling_bench, write_bench, BenchRow, Sweep};
pub use config::{AdaptiveConfig, BenchConfig, ModelKind, RunConfig, RunMode, MEMORY_LIMIT_BYTES};
pub use output::{
    checksum, emit_metrics, fmt_f64, read_metrics, read_snapshot, write_snapshot, CsvFile, MetricRecord, SnapshotMeta,
};

/// Environment variable holding the default thread cap.
pub const THREADS_ENV: &str = "TDB_SPARSE_THREADS";

/// A model chosen at run time.
pub enum AnyModel {
    Burgers(Burgers),
    Diffusion(Diffusion),
    Ns2d(Ns2d),
}

impl AnyModel {
    pub fn build(cfg: &RunConfig) -> Result<Self> {
        Ok(match cfg.model {
            ModelKind::Burgers => AnyModel::Burgers(Burgers::new(&cfg.burgers, cfg.s, cfg.dt, cfg.seed)?),
            ModelKind::Diffusion => AnyModel::Diffusion(Diffusion::new(&cfg.diffusion, cfg.s, cfg.seed)?),
            ModelKind::Ns2d => AnyModel::Ns2d(Ns2d::new(&cfg.ns2d, cfg.s, cfg.seed)?),
        })
    }

    pub fn model(&self) -> &dyn Model {
        match self {
            AnyModel::Burgers(m) => m,
            AnyModel::Diffusion(m) => m,
            AnyModel::Ns2d(m) => m,
        }
    }

    /// Seeded initial ensemble; the Navier-Stokes base state is spun up with step `dt`.
    pub fn initial_ensemble(&self, dt: f64) -> Result<Matrix> {
        match self {
            AnyModel::Burgers(m) => Ok(m.initial_ensemble()),
            AnyModel::Diffusion(m) => Ok(m.initial_ensemble()),
            AnyModel::Ns2d(m) => m.initial_ensemble(dt),
        }
    }
}

/// Series and timing of one solver within a run.
#[derive(Clone, Debug)]
pub struct SolverRun {
    pub solver: &'static str,
    pub steps: usize,
    /// Sum of per-step wall times.
    pub step_ns: u64,
    /// Checksum of the initial ensemble this solver started from.
    pub input_checksum: u64,
    pub records: Vec<MetricRecord>,
}

impl SolverRun {
    pub fn mean_step_ns(&self) -> f64 {
        self.step_ns as f64 / self.steps.max(1) as f64
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub checksum: u64,
    pub solvers: Vec<SolverRun>,
    /// `(t, ‖V_stdb − V_tdb‖)` at output times (compare mode).
    pub gap: Vec<(f64, f64)>,
    /// Dense CUR diagnostics keyed by the time the interpolant was built.
    pub diagnostics: Vec<(f64, CurDiagnostics)>,
    pub files: Vec<PathBuf>,
}

impl RunOutcome {
    pub fn solver(&self, name: &str) -> Option<&SolverRun> {
        self.solvers.iter().find(|s| s.solver == name)
    }
}

/// Thread count from an explicit value, else `TDB_SPARSE_THREADS`.
pub fn resolve_threads(explicit: Option<usize>) -> Option<usize> {
    explicit.or_else(|| {
        std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse().ok())
            .filter(|&n| n > 0)
    })
}

/// Runs `cfg` inside a dedicated pool of `threads` workers (rayon's default when `None`).
pub fn run_with_threads(cfg: &RunConfig, threads: Option<usize>) -> Result<RunOutcome> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| run(cfg))
}

fn is_output(cfg: &RunConfig, k: usize, steps: usize) -> bool {
    k.is_multiple_of(cfg.output_every) || k == steps
}

/// Weighted singular values of a full ensemble, leading `r`.
pub fn kl_values(v: &Matrix, w: &QuadratureWeights, r: usize) -> Result<Vec<f64>> {
    let sx = w.wx().mapv(f64::sqrt);
    let sxi = w.wxi().mapv(f64::sqrt);
    let a = Matrix::from_shape_fn(v.dim(), |(i, j)| sx[i] * v[[i, j]] * sxi[j]);
    Ok(gram_singular_values(a.view())?.iter().take(r).copied().collect())
}

/// Validates and executes `cfg`, writing all outputs under `cfg.output_dir`.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let started = Instant::now();
    let model = AnyModel::build(cfg)?;
    let m = model.model();
    let w = QuadratureWeights::monte_carlo(m.spatial_weights(), cfg.s)?;
    let v0 = model.initial_ensemble(cfg.dt)?;
    let sum = checksum(&v0);
    info!(
        "{} ensemble {}x{} checksum {sum:016x}",
        m.name(),
        v0.nrows(),
        v0.ncols()
    );

    let mut out = RunOutcome {
        checksum: sum,
        solvers: Vec::new(),
        gap: Vec::new(),
        diagnostics: Vec::new(),
        files: Vec::new(),
    };
    let mut fom_outputs = Vec::new();
    let mut tdb_states = Vec::new();
    match cfg.mode {
        RunMode::Fom => {
            out.solvers
                .push(run_fom(cfg, m, &w, &v0, &dir, &mut fom_outputs, false)?);
        }
        RunMode::Tdb => {
            out.solvers.push(run_tdb(cfg, m, &w, &v0, &[], &mut tdb_states)?);
        }
        RunMode::Stdb => {
            out.solvers
                .push(run_stdb(cfg, m, &w, &v0, &[], &[], &mut out.gap, &mut out.diagnostics)?);
        }
        RunMode::Compare => {
            out.solvers
                .push(run_fom(cfg, m, &w, &v0, &dir, &mut fom_outputs, true)?);
            out.solvers
                .push(run_tdb(cfg, m, &w, &v0, &fom_outputs, &mut tdb_states)?);
            out.solvers.push(run_stdb(
                cfg,
                m,
                &w,
                &v0,
                &fom_outputs,
                &tdb_states,
                &mut out.gap,
                &mut out.diagnostics,
            )?);
            let sums: Vec<u64> = out.solvers.iter().map(|s| s.input_checksum).collect();
            if sums.iter().any(|&s| s != sum) {
                return Err(Error::InvalidArgument(format!(
                    "solvers started from different ensembles: {sums:x?}"
                )));
            }
        }
    }
    write_outputs(cfg, &dir, &mut out, started.elapsed().as_nanos() as u64)?;
    Ok(out)
}

fn run_fom(
    cfg: &RunConfig,
    m: &dyn Model,
    w: &QuadratureWeights,
    v0: &Matrix,
    dir: &Path,
    keep: &mut Vec<Matrix>,
    retain: bool,
) -> Result<SolverRun> {
    let steps = cfg.steps();
    let samples: Vec<usize> = (0..cfg.s).collect();
    let snap_dir = dir.join("snapshots");
    if cfg.snapshots {
        std::fs::create_dir_all(&snap_dir).map_err(|e| Error::io(&snap_dir, e))?;
    }
    let mut v = v0.clone();
    let input_checksum = checksum(&v);
    let mut records = Vec::new();
    let mut step_ns = 0u64;
    let mut last_ns = 0u64;
    for k in 0..=steps {
        if k > 0 {
            let start = Instant::now();
            v = rk4_fom(m, v.view(), (k - 1) as f64 * cfg.dt, cfg.dt, &samples)?;
            last_ns = (start.elapsed().as_nanos() as u64).max(1);
            step_ns += last_ns;
        }
        if is_output(cfg, k, steps) {
            let t = k as f64 * cfg.dt;
            if cfg.snapshots {
                write_snapshot(&v, t, snap_dir.join(format!("fom_{k:07}.bin")))?;
            }
            records.push(MetricRecord {
                t,
                total_error: Some(0.0),
                sigma: kl_values(&v, w, cfg.r)?,
                p: None,
                eps: None,
                wall_ns: last_ns,
                rows: Vec::new(),
                cols: Vec::new(),
            });
            if retain {
                keep.push(v.clone());
            }
        }
    }
    info!("fom: {steps} steps, {:.3} s stepping", step_ns as f64 * 1e-9);
    Ok(SolverRun {
        solver: "fom",
        steps,
        step_ns,
        input_checksum,
        records,
    })
}

/// Steps a DBO provider through the run, calling `on_output` at output steps
/// with the step, the output index, the state before the last step (if any),
/// the current state and the step report.
fn march<P: DboRhs>(
    cfg: &RunConfig,
    provider: &mut P,
    state0: DboState,
    mut on_output: impl FnMut(&P, usize, usize, Option<&DboState>, &DboState, Option<&StepReport>) -> Result<()>,
) -> Result<(usize, u64)> {
    let steps = cfg.steps();
    let mut state = state0;
    let mut step_ns = 0u64;
    let mut outputs = 1;
    on_output(provider, 0, 0, None, &state, None)?;
    for k in 1..=steps {
        let (mut next, report) = rk4_dbo(provider, &state, cfg.dt)?;
        next.t = k as f64 * cfg.dt;
        step_ns += report.wall_ns;
        if is_output(cfg, k, steps) {
            on_output(provider, k, outputs, Some(&state), &next, Some(&report))?;
            outputs += 1;
        }
        state = next;
    }
    Ok((steps, step_ns))
}

fn rom_record(
    state: &DboState,
    fom: Option<&Matrix>,
    w: &QuadratureWeights,
    report: Option<&StepReport>,
) -> Result<MetricRecord> {
    Ok(MetricRecord {
        t: state.t,
        total_error: fom.map(|v| total_error(state, v.view(), w)).transpose()?,
        sigma: singular_values(state).to_vec(),
        p: report.and_then(|r| r.p),
        eps: report.and_then(|r| r.eps),
        wall_ns: report.map_or(0, |r| r.wall_ns),
        rows: report.map(|r| r.rows.clone()).unwrap_or_default(),
        cols: report.map(|r| r.cols.clone()).unwrap_or_default(),
    })
}

fn run_tdb(
    cfg: &RunConfig,
    m: &dyn Model,
    w: &QuadratureWeights,
    v0: &Matrix,
    fom: &[Matrix],
    keep: &mut Vec<DboState>,
) -> Result<SolverRun> {
    let input_checksum = checksum(v0);
    let (state, _) = init_from_samples(v0.view(), cfg.r, w)?;
    let mut provider = Decompressed::new(m, w);
    let mut records = Vec::new();
    let (steps, step_ns) = march(cfg, &mut provider, state, |_, _, idx, _, state, report| {
        records.push(rom_record(state, fom.get(idx), w, report)?);
        keep.push(state.clone());
        Ok(())
    })?;
    info!("tdb: {steps} steps, {:.3} s stepping", step_ns as f64 * 1e-9);
    Ok(SolverRun {
        solver: "tdb",
        steps,
        step_ns,
        input_checksum,
        records,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_stdb(
    cfg: &RunConfig,
    m: &dyn Model,
    w: &QuadratureWeights,
    v0: &Matrix,
    fom: &[Matrix],
    tdb: &[DboState],
    gap: &mut Vec<(f64, f64)>,
    diagnostics: &mut Vec<(f64, CurDiagnostics)>,
) -> Result<SolverRun> {
    let input_checksum = checksum(v0);
    let (state, _) = init_from_samples(v0.view(), cfg.r, w)?;
    let samples: Vec<usize> = (0..cfg.s).collect();
    let mut provider = SparseRhs::new(m, w, cfg.sampler, cfg.controller()?, cfg.stage_reuse, &state)?;
    let mut records = Vec::new();
    let (steps, step_ns) = march(cfg, &mut provider, state, |provider, _, idx, prev, state, report| {
        let mut rec = rom_record(state, fom.get(idx), w, report)?;
        if report.is_none() {
            let lr = provider.last_lowrank();
            rec.p = lr.map(|lr| lr.q.len());
            rec.rows = lr.map(|lr| lr.prow.clone()).unwrap_or_default();
            rec.cols = lr.map(|lr| lr.q.clone()).unwrap_or_default();
        }
        records.push(rec);
        if let Some(reference) = tdb.get(idx) {
            gap.push((state.t, trajectory_gap(state, reference, w)?));
        }
        if cfg.diagnostics {
            let built_at = prev.unwrap_or(state);
            if let Some(lr) = provider.last_lowrank() {
                let f = m.rhs_columns(built_at.t, built_at.reconstruct().view(), &samples)?;
                diagnostics.push((built_at.t, cur_diagnostics(lr, f.view(), w)?));
            }
        }
        Ok(())
    })?;
    info!("stdb: {steps} steps, {:.3} s stepping", step_ns as f64 * 1e-9);
    Ok(SolverRun {
        solver: "stdb",
        steps,
        step_ns,
        input_checksum,
        records,
    })
}

fn git_hash() -> String {
    std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

fn write_outputs(cfg: &RunConfig, dir: &Path, out: &mut RunOutcome, total_ns: u64) -> Result<()> {
    let mut files = Vec::new();
    for s in &out.solvers {
        let path = dir.join(format!("metrics_{}.csv", s.solver));
        emit_metrics(&s.records, &path)?;
        files.push(path);
    }

    let path = dir.join("sigma.csv");
    let mut header = vec!["t".to_string()];
    for s in &out.solvers {
        header.extend((1..=cfg.r).map(|i| format!("{}_sigma_{i}", s.solver)));
    }
    let mut csv = CsvFile::create(&path, &header.iter().map(String::as_str).collect::<Vec<_>>())?;
    let rows = out.solvers.first().map_or(0, |s| s.records.len());
    for k in 0..rows {
        let mut row = vec![fmt_f64(out.solvers[0].records[k].t)];
        for s in &out.solvers {
            let sig = &s.records[k].sigma;
            row.extend((0..cfg.r).map(|i| sig.get(i).map(|&x| fmt_f64(x)).unwrap_or_default()));
        }
        csv.row(row)?;
    }
    csv.finish()?;
    files.push(path);

    if let (Some(tdb), Some(stdb)) = (out.solver("tdb"), out.solver("stdb")) {
        if out.solver("fom").is_some() {
            let path = dir.join("error.csv");
            let mut csv = CsvFile::create(&path, &["t", "E_tdb", "E_stdb", "abs_diff"])?;
            for (a, b) in tdb.records.iter().zip(&stdb.records) {
                let (ea, eb) = (a.total_error.unwrap_or(f64::NAN), b.total_error.unwrap_or(f64::NAN));
                csv.row([fmt_f64(a.t), fmt_f64(ea), fmt_f64(eb), fmt_f64((ea - eb).abs())])?;
            }
            csv.finish()?;
            files.push(path);
        }
        let path = dir.join("gap.csv");
        let mut csv = CsvFile::create(&path, &["t", "gap"])?;
        for &(t, g) in &out.gap {
            csv.row([fmt_f64(t), fmt_f64(g)])?;
        }
        csv.finish()?;
        files.push(path);
    }

    if let Some(stdb) = out.solver("stdb") {
        let path = dir.join("points.csv");
        let mut csv = CsvFile::create(&path, &["t", "p", "eps", "rows", "cols"])?;
        for r in &stdb.records {
            let join = |xs: &[usize]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
            csv.row([
                fmt_f64(r.t),
                r.p.map(|p| p.to_string()).unwrap_or_default(),
                r.eps.map(fmt_f64).unwrap_or_default(),
                join(&r.rows),
                join(&r.cols),
            ])?;
        }
        csv.finish()?;
        files.push(path);
    }

    if cfg.diagnostics {
        let path = dir.join("diagnostics.csv");
        let mut csv = CsvFile::create(
            &path,
            &["t", "err2", "bound", "sigma_next", "eta_p", "eta_q", "cur_exactness"],
        )?;
        for (t, d) in &out.diagnostics {
            csv.row(
                [
                    t,
                    &d.err2,
                    &d.bound,
                    &d.sigma_next,
                    &d.eta_p,
                    &d.eta_q,
                    &d.cur_exactness,
                ]
                .map(|x| fmt_f64(*x)),
            )?;
        }
        csv.finish()?;
        files.push(path);
    }

    let path = dir.join("timing.csv");
    let mut csv = CsvFile::create(&path, &["solver", "steps", "step_ns_total", "step_ns_mean"])?;
    for s in &out.solvers {
        csv.row([
            s.solver.to_string(),
            s.steps.to_string(),
            s.step_ns.to_string(),
            fmt_f64(s.mean_step_ns()),
        ])?;
    }
    csv.finish()?;
    files.push(path);

    let path = dir.join("manifest.json");
    files.push(path.clone());
    let manifest = json!({
        "config": serde_json::to_value(cfg).expect("config serializes"),
        "git": git_hash(),
        "ensemble_checksum": format!("{:016x}", out.checksum),
        "threads": rayon::current_num_threads(),
        "wall_ns": total_ns,
        "solvers": out.solvers.iter().map(|s| json!({
            "solver": s.solver,
            "steps": s.steps,
            "step_ns_total": s.step_ns,
            "step_ns_mean": s.mean_step_ns(),
            "input_checksum": format!("{:016x}", s.input_checksum),
        })).collect::<Vec<_>>(),
        "files": files.iter().map(|f| f.file_name().map(|n| n.to_string_lossy().into_owned())).collect::<Vec<_>>(),
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    out.files = files;
    Ok(())
}
