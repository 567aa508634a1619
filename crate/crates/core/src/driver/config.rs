use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{BurgersConfig, DiffusionConfig, NsConfig};
use crate::sampling::Sampler;
use crate::sparse::RankController;

/// Peak memory a run may plan for.
pub const MEMORY_LIMIT_BYTES: u64 = 4 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Fom,
    Tdb,
    Stdb,
    Compare,
}

impl RunMode {
    fn runs_sparse(self) -> bool {
        matches!(self, RunMode::Stdb | RunMode::Compare)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Burgers,
    Diffusion,
    Ns2d,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveConfig {
    pub eps_l: f64,
    pub eps_u: f64,
    pub p_min: usize,
    pub p_max: usize,
}

/// Sweep points for `scaling_bench`; either list may be empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub n: Vec<usize>,
    pub s: Vec<usize>,
    /// Timed steps per path and sweep point.
    pub steps: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n: Vec::new(),
            s: Vec::new(),
            steps: 50,
        }
    }
}

fn default_r() -> usize {
    5
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: RunMode,
    pub model: ModelKind,
    #[serde(default = "default_r")]
    pub r: usize,
    /// Fixed interpolation rank, or the starting rank of an adaptive run.
    #[serde(default)]
    pub p: Option<usize>,
    #[serde(default)]
    pub adaptive: Option<AdaptiveConfig>,
    #[serde(default)]
    pub sampler: Sampler,
    pub s: usize,
    #[serde(default)]
    pub seed: u64,
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "one")]
    pub output_every: usize,
    /// Dense CUR diagnostics at every output step of the sparse solver.
    #[serde(default)]
    pub diagnostics: bool,
    #[serde(default)]
    pub stage_reuse: bool,
    /// Write full-order snapshots at output steps.
    #[serde(default = "yes")]
    pub snapshots: bool,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub burgers: BurgersConfig,
    #[serde(default)]
    pub diffusion: DiffusionConfig,
    #[serde(default)]
    pub ns2d: NsConfig,
    #[serde(default)]
    pub bench: BenchConfig,
}

impl RunConfig {
    /// Parses without validating.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// State dimension of the selected model.
    pub fn n(&self) -> usize {
        match self.model {
            ModelKind::Burgers => self.burgers.n,
            ModelKind::Diffusion => self.diffusion.n,
            ModelKind::Ns2d => self.ns2d.n(),
        }
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    /// Rough upper bound on resident bytes for this run.
    pub fn estimated_peak_bytes(&self) -> u64 {
        let ensemble = 8 * self.n() as u64 * self.s as u64;
        let outputs = (self.steps() / self.output_every.max(1) + 2) as u64;
        match self.mode {
            RunMode::Fom => 8 * ensemble,
            RunMode::Tdb => 4 * ensemble,
            RunMode::Stdb => 2 * ensemble,
            RunMode::Compare => 8 * ensemble + outputs * ensemble,
        }
    }

    pub fn controller(&self) -> Result<RankController> {
        match (&self.adaptive, self.p) {
            (Some(a), p) => RankController::adaptive(p.unwrap_or(a.p_min), a.eps_l, a.eps_u, a.p_min, a.p_max),
            (None, Some(p)) => Ok(RankController::fixed(p)),
            (None, None) => Err(Error::Config(vec![
                "p or [adaptive] is required for the sparse solver".into()
            ])),
        }
    }

    /// Checks every field and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        let n = self.n();
        if self.r == 0 {
            errors.push("r must be at least 1".to_string());
        }
        if self.s == 0 {
            errors.push("s must be at least 1".to_string());
        }
        if self.r > self.s.min(n) {
            errors.push(format!("r = {} exceeds min(n, s) = {}", self.r, self.s.min(n)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            errors.push(format!("dt must be positive (got {})", self.dt));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            errors.push(format!("t_end must be positive (got {})", self.t_end));
        } else if self.dt > 0.0 && self.t_end < self.dt {
            errors.push(format!("t_end = {} is shorter than dt = {}", self.t_end, self.dt));
        }
        if self.output_every == 0 {
            errors.push("output_every must be at least 1".to_string());
        }
        if self.threads == Some(0) {
            errors.push("threads must be at least 1".to_string());
        }
        if let Some(p) = self.p {
            if p == 0 || p > self.s.min(n) {
                errors.push(format!("p = {p} must lie in 1..={}", self.s.min(n)));
            }
        }
        if let Some(a) = &self.adaptive {
            if !(a.eps_l > 0.0 && a.eps_l.is_finite()) {
                errors.push(format!("adaptive.eps_l must be positive (got {})", a.eps_l));
            }
            if !(a.eps_l < a.eps_u) {
                errors.push(format!(
                    "adaptive.eps_l ({}) must be less than adaptive.eps_u ({})",
                    a.eps_l, a.eps_u
                ));
            }
            if a.p_min == 0 || a.p_min > a.p_max {
                errors.push(format!(
                    "adaptive.p_min ({}) must lie in 1..=adaptive.p_max ({})",
                    a.p_min, a.p_max
                ));
            }
            if a.p_max > self.s.min(n) {
                errors.push(format!(
                    "adaptive.p_max ({}) exceeds min(n, s) = {}",
                    a.p_max,
                    self.s.min(n)
                ));
            }
            if let Some(p) = self.p {
                if p < a.p_min || p > a.p_max {
                    errors.push(format!(
                        "p = {p} must lie in adaptive.p_min..=adaptive.p_max ({}..={})",
                        a.p_min, a.p_max
                    ));
                }
            }
        } else if self.mode.runs_sparse() && self.p.is_none() {
            errors.push(format!("mode = {:?} needs p or an [adaptive] section", self.mode).to_lowercase());
        }
        if self.diagnostics && !self.mode.runs_sparse() {
            errors.push("diagnostics requires mode stdb or compare".to_string());
        }
        if self.bench.steps < 50 {
            errors.push(format!("bench.steps must be at least 50 (got {})", self.bench.steps));
        }
        match self.model {
            ModelKind::Burgers => self.burgers.validate(&mut errors),
            ModelKind::Diffusion => self.diffusion.validate(&mut errors),
            ModelKind::Ns2d => self.ns2d.validate(&mut errors),
        }
        let bytes = self.estimated_peak_bytes();
        if bytes > MEMORY_LIMIT_BYTES {
            errors.push(format!(
                "estimated peak memory {:.1} GiB (n = {n}, s = {}) exceeds the {} GiB limit",
                bytes as f64 / (1u64 << 30) as f64,
                self.s,
                MEMORY_LIMIT_BYTES >> 30
            ));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }
}
