use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stdb_core::driver::{resolve_threads, run_with_threads, scaling_bench, write_bench, RunConfig, Sweep};
use stdb_core::Result;

#[derive(Parser)]
#[command(
    name = "stdb",
    version,
    about = "Sparse time-dependent-basis reduced-order experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the solvers named by the config's `mode`.
    Run(Common),
    /// Time the decompressed and sparse Burgers solvers over the `[bench]` sweeps.
    Bench(Common),
    /// Parse and validate a config without running it.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Worker threads (default: TDB_SPARSE_THREADS, then all cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::from_path(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = dir.clone();
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate(c) => {
            let cfg = c.load()?;
            println!(
                "{}: ok ({} steps, n = {}, s = {})",
                c.config.display(),
                cfg.steps(),
                cfg.n(),
                cfg.s
            );
        }
        Command::Run(c) => {
            let cfg = c.load()?;
            let out = run_with_threads(&cfg, resolve_threads(cfg.threads))?;
            for s in &out.solvers {
                println!(
                    "{:>5}: {} steps, {:.3} ms/step",
                    s.solver,
                    s.steps,
                    s.mean_step_ns() * 1e-6
                );
            }
            println!("outputs in {}", cfg.output_dir.display());
        }
        Command::Bench(c) => {
            let cfg = c.load()?;
            std::fs::create_dir_all(&cfg.output_dir).map_err(|e| stdb_core::Error::io(&cfg.output_dir, e))?;
            let pool = rayon_pool(resolve_threads(cfg.threads))?;
            let mut rows = Vec::new();
            for sweep in [Sweep::N(cfg.bench.n.clone()), Sweep::S(cfg.bench.s.clone())] {
                rows.extend(pool.install(|| scaling_bench(&cfg, &sweep))?);
            }
            println!(
                "{:>5} {:>6} {:>6} {:>12} {:>12}",
                "sweep", "n", "s", "tdb_us", "stdb_us"
            );
            for r in &rows {
                println!(
                    "{:>5} {:>6} {:>6} {:>12.1} {:>12.1}",
                    r.sweep,
                    r.n,
                    r.s,
                    r.tdb_ns * 1e-3,
                    r.stdb_ns * 1e-3
                );
            }
            write_bench(&rows, cfg.output_dir.join("bench.csv"))?;
        }
    }
    Ok(())
}

fn rayon_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    b.build()
        .map_err(|e| stdb_core::Error::InvalidArgument(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
