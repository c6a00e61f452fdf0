//! Run configuration: a sectioned key/value file (TOML syntax) mapped onto
//! the domain types. Parsing is strict -- unknown keys are fatal, parse
//! errors carry line numbers, and every value is validated before any work
//! starts. Command-line overrides take `section.key=value` form and are
//! applied after file parsing; the effective configuration serializes
//! canonically and its FNV-1a hash stamps every output file.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{BenchConfig, KernelId};
use crate::grid::GridSpec;
use crate::kernels::KernelPath;
use crate::operator::Limiter;
use crate::precond::PrecondKind;
use crate::pulse::PulseProblem;
use crate::solver::{SolverConfig, Variant};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Deserialize(String),
    #[error("invalid value for {key}: {reason}")]
    Invalid { key: String, reason: String },
    #[error("bad --set override '{0}': expected section.key=value")]
    BadOverride(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub grid: GridSection,
    pub problem: ProblemSection,
    pub solver: SolverSection,
    pub topology: TopologySection,
    pub bench: BenchSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid: GridSection::default(),
            problem: ProblemSection::default(),
            solver: SolverSection::default(),
            topology: TopologySection::default(),
            bench: BenchSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub nx1: usize,
    pub nx2: usize,
    pub nspecies: usize,
    pub dx1: f64,
    pub dx2: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { nx1: 200, nx2: 100, nspecies: 2, dx1: 1.0, dx2: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemSection {
    pub sigma0: f64,
    pub center: [f64; 2],
    pub amplitude: f64,
    pub d0: f64,
    pub dt: f64,
    pub nsteps: usize,
    pub solves_per_step: usize,
    pub limiter: LimiterName,
}

impl Default for ProblemSection {
    fn default() -> Self {
        ProblemSection {
            sigma0: 3.0,
            center: [100.0, 50.0],
            amplitude: 1.0,
            d0: 1.0,
            dt: 0.36,
            nsteps: 100,
            solves_per_step: 3,
            limiter: LimiterName::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LimiterName {
    None,
    Levermore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub tol: f64,
    /// Absent means the 10 * sqrt(N) default.
    pub max_iter: Option<usize>,
    pub variant: VariantName,
    pub precond: PrecondName,
    pub warm_start: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            tol: 1e-8,
            max_iter: None,
            variant: VariantName::Ganged,
            precond: PrecondName::Spai,
            warm_start: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantName {
    Classic,
    Ganged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecondName {
    Identity,
    BlockJacobi,
    Spai,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologySection {
    pub nprx1: usize,
    pub nprx2: usize,
}

impl Default for TopologySection {
    fn default() -> Self {
        TopologySection { nprx1: 1, nprx2: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub n: usize,
    pub reps: usize,
    pub warmup: usize,
    pub seed: u64,
    pub kernels: Vec<KernelName>,
    pub paths: Vec<PathName>,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            n: 1000,
            reps: 100_000,
            warmup: 1000,
            seed: 12345,
            kernels: vec![
                KernelName::Matvec,
                KernelName::Dprod,
                KernelName::Daxpy,
                KernelName::Dscal,
                KernelName::Ddaxpy,
            ],
            paths: vec![PathName::Scalar, PathName::Vectorized],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelName {
    Matvec,
    Dprod,
    Daxpy,
    Dscal,
    Ddaxpy,
    #[serde(rename = "spai_apply")]
    SpaiApply,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathName {
    Scalar,
    Vectorized,
}

impl RunConfig {
    /// Parse a config file and apply `section.key=value` overrides.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_str_with_overrides(&text, overrides)
    }

    /// Defaults plus overrides, for runs without a config file.
    pub fn from_overrides(overrides: &[String]) -> Result<Self, ConfigError> {
        Self::from_str_with_overrides("", overrides)
    }

    pub fn from_str_with_overrides(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table =
            text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for ov in overrides {
            apply_override(&mut table, ov)?;
        }
        let cfg: RunConfig = RunConfig::deserialize(table)
            .map_err(|e| ConfigError::Deserialize(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical serialization of the effective configuration.
    pub fn effective_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// FNV-1a over the canonical serialization; stamps output files.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.effective_toml().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
        h
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let key = |k: &str, reason: String| ConfigError::Invalid { key: k.to_string(), reason };
        if self.grid.nx1 < 1 || self.grid.nx2 < 1 {
            return Err(key("grid.nx1/nx2", "zone counts must be at least 1".into()));
        }
        if self.grid.nspecies < 1 {
            return Err(key("grid.nspecies", "need at least one species".into()));
        }
        if !(self.grid.dx1 > 0.0) {
            return Err(key("grid.dx1", format!("must be positive, got {}", self.grid.dx1)));
        }
        if !(self.grid.dx2 > 0.0) {
            return Err(key("grid.dx2", format!("must be positive, got {}", self.grid.dx2)));
        }
        if !(self.solver.tol > 0.0) {
            return Err(key("solver.tol", format!("must be positive, got {}", self.solver.tol)));
        }
        if self.solver.max_iter == Some(0) {
            return Err(key("solver.max_iter", "must be at least 1".into()));
        }
        if self.topology.nprx1 < 1 || self.topology.nprx2 < 1 {
            return Err(key("topology.nprx1/nprx2", "tile counts must be positive".into()));
        }
        if self.bench.n < 1 {
            return Err(key("bench.n", "must be at least 1".into()));
        }
        if self.bench.reps < 1 {
            return Err(key("bench.reps", "must be at least 1".into()));
        }
        // Problem-level invariants (resolution, positivity) are checked by
        // PulseProblem::validate with the grid in hand.
        self.to_problem().map_err(|e| key("problem", e.to_string()))?;
        Ok(())
    }

    pub fn to_grid(&self) -> GridSpec {
        GridSpec::new(self.grid.nx1, self.grid.nx2, self.grid.nspecies, self.grid.dx1, self.grid.dx2)
            .expect("validated grid")
    }

    pub fn to_solver(&self) -> SolverConfig {
        SolverConfig {
            tol: self.solver.tol,
            max_iter: self.solver.max_iter,
            variant: match self.solver.variant {
                VariantName::Classic => Variant::Classic,
                VariantName::Ganged => Variant::Ganged,
            },
            precond: match self.solver.precond {
                PrecondName::Identity => PrecondKind::Identity,
                PrecondName::BlockJacobi => PrecondKind::BlockJacobi,
                PrecondName::Spai => PrecondKind::Spai,
            },
            warm_start: self.solver.warm_start,
        }
    }

    pub fn to_problem(&self) -> Result<PulseProblem, ConfigError> {
        let grid = GridSpec::new(self.grid.nx1, self.grid.nx2, self.grid.nspecies, self.grid.dx1, self.grid.dx2)
            .map_err(|e| ConfigError::Invalid { key: "grid".into(), reason: e.to_string() })?;
        let p = PulseProblem {
            grid,
            sigma0: self.problem.sigma0,
            center: (self.problem.center[0], self.problem.center[1]),
            amplitude: self.problem.amplitude,
            d0: self.problem.d0,
            dt: self.problem.dt,
            nsteps: self.problem.nsteps,
            solves_per_step: self.problem.solves_per_step,
            limiter: match self.problem.limiter {
                LimiterName::None => Limiter::None,
                LimiterName::Levermore => Limiter::LevermorePomraning,
            },
            solver: self.to_solver(),
        };
        p.validate().map_err(|e| ConfigError::Invalid { key: "problem".into(), reason: e.to_string() })?;
        Ok(p)
    }

    pub fn to_bench(&self) -> BenchConfig {
        BenchConfig {
            n: self.bench.n,
            reps: self.bench.reps,
            warmup_reps: self.bench.warmup,
            rng_seed: self.bench.seed,
            kernels: self
                .bench
                .kernels
                .iter()
                .map(|k| match k {
                    KernelName::Matvec => KernelId::Matvec,
                    KernelName::Dprod => KernelId::Dprod,
                    KernelName::Daxpy => KernelId::Daxpy,
                    KernelName::Dscal => KernelId::Dscal,
                    KernelName::Ddaxpy => KernelId::Ddaxpy,
                    KernelName::SpaiApply => KernelId::SpaiApply,
                })
                .collect(),
            paths: self
                .bench
                .paths
                .iter()
                .map(|p| match p {
                    PathName::Scalar => KernelPath::ScalarReference,
                    PathName::Vectorized => KernelPath::Vectorized,
                })
                .collect(),
        }
    }

    pub fn topology_counts(&self) -> (usize, usize) {
        (self.topology.nprx1, self.topology.nprx2)
    }
}

/// Apply one `section.key=value` override onto the raw table.
fn apply_override(table: &mut toml::Table, ov: &str) -> Result<(), ConfigError> {
    let (path, value) = ov.split_once('=').ok_or_else(|| ConfigError::BadOverride(ov.into()))?;
    let (section, k) = path
        .trim()
        .split_once('.')
        .ok_or_else(|| ConfigError::BadOverride(ov.into()))?;
    if section.is_empty() || k.is_empty() {
        return Err(ConfigError::BadOverride(ov.into()));
    }
    // Parse the value with TOML typing rules; unquoted words become strings.
    let parsed: toml::Value = match format!("v = {}", value.trim()).parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(value.trim().to_string()),
    };
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    match entry {
        toml::Value::Table(t) => {
            t.insert(k.to_string(), parsed);
            Ok(())
        }
        _ => Err(ConfigError::BadOverride(ov.into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::ALL_KERNELS;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = cfg.effective_toml();
        let back = RunConfig::from_str_with_overrides(&text, &[]).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
    }

    #[test]
    fn unknown_keys_are_fatal() {
        let err = RunConfig::from_str_with_overrides("[grid]\nnx3 = 4\n", &[]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("nx3"), "error should name the key: {msg}");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = RunConfig::from_str_with_overrides("[grid]\nnx1 = = 3\n", &[]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "expected line info, got: {msg}");
    }

    #[test]
    fn overrides_apply_after_file() {
        let cfg = RunConfig::from_str_with_overrides(
            "[problem]\nnsteps = 7\n",
            &["problem.nsteps=3".into(), "solver.variant=classic".into(), "problem.center=[4.0, 5.0]".into()],
        )
        .unwrap();
        assert_eq!(cfg.problem.nsteps, 3);
        assert_eq!(cfg.solver.variant, VariantName::Classic);
        assert_eq!(cfg.problem.center, [4.0, 5.0]);
    }

    #[test]
    fn override_of_unknown_key_is_rejected() {
        let err = RunConfig::from_str_with_overrides("", &["solver.bogus=1".into()]).unwrap_err();
        assert!(err.to_string().contains("bogus"));
        assert!(RunConfig::from_str_with_overrides("", &["justakey".into()]).is_err());
    }

    #[test]
    fn validation_names_offending_key() {
        let err = RunConfig::from_str_with_overrides("[solver]\ntol = -1.0\n", &[]).unwrap_err();
        assert!(err.to_string().contains("solver.tol"), "{err}");
        let err = RunConfig::from_str_with_overrides("[grid]\ndx1 = 0.0\n", &[]).unwrap_err();
        assert!(err.to_string().contains("grid.dx1"), "{err}");
    }

    #[test]
    fn hash_changes_with_values() {
        let a = RunConfig::default();
        let b = RunConfig::from_overrides(&["problem.nsteps=99".into()]).unwrap();
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn bench_subsets_parse() {
        let cfg = RunConfig::from_str_with_overrides(
            "[bench]\nkernels = [\"dprod\"]\npaths = [\"scalar\"]\n",
            &[],
        )
        .unwrap();
        let bc = cfg.to_bench();
        assert_eq!(bc.kernels, vec![KernelId::Dprod]);
        assert_eq!(bc.paths, vec![KernelPath::ScalarReference]);
        assert_eq!(RunConfig::default().to_bench().kernels, ALL_KERNELS.to_vec());
    }

    #[test]
    fn domain_conversion_matches_defaults() {
        let cfg = RunConfig::default();
        let p = cfg.to_problem().unwrap();
        assert_eq!(p.grid.nx1, 200);
        assert_eq!(p.grid.nx2, 100);
        assert_eq!(p.nsteps, 100);
        assert_eq!(p.solves_per_step, 3);
        assert_eq!(cfg.topology_counts(), (1, 1));
    }
}
