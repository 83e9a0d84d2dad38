//! Reproducible experiment runs: configuration, result rows and reporting.

mod report;
mod runs;

pub use report::{check_tolerances, read_csv, report, write_csv, ReportFiles, ToleranceCheck};
pub use runs::{
    run, run_baiyin_necessity, run_fe, run_gs, run_lq, run_multispecies, run_tensor_pca, run_truncation_audit,
    run_universality,
};

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::disorder::{DisorderSpec, MomentRequirement};
use crate::error::{Error, Result};
use crate::free_energy::GibbsSamplerConfig;
use crate::ground_state::GsSolverConfig;
use crate::mixture::MixtureSpec;
use crate::rng::{derive_seed, label_tag};
use crate::tensor::SymmetricTensor;

/// Which experiment a configuration drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Gs,
    Fe,
    Universality,
    Baiyin,
    TruncationAudit,
    TensorPca,
    Multispecies,
    Lq,
}

impl ExperimentKind {
    pub fn tag(&self) -> &'static str {
        match self {
            Self::Gs => "gs",
            Self::Fe => "fe",
            Self::Universality => "universality",
            Self::Baiyin => "baiyin",
            Self::TruncationAudit => "truncation_audit",
            Self::TensorPca => "tensor_pca",
            Self::Multispecies => "multispecies",
            Self::Lq => "lq",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Self::Gs,
            Self::Fe,
            Self::Universality,
            Self::Baiyin,
            Self::TruncationAudit,
            Self::TensorPca,
            Self::Multispecies,
            Self::Lq,
        ]
        .into_iter()
        .find(|k| k.tag() == s)
        .ok_or_else(|| Error::Format(format!("unknown experiment kind '{s}'")))
    }
}

/// An order-`p` species coupling tensor in canonical entry order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingSpec {
    pub order: usize,
    pub entries: Vec<f64>,
}

/// Lower and upper limits for a reported statistic.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bound {
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl Bound {
    pub fn max(v: f64) -> Self {
        Self { min: None, max: Some(v) }
    }

    pub fn min(v: f64) -> Self {
        Self { min: Some(v), max: None }
    }

    pub fn admits(&self, v: f64) -> bool {
        self.min.is_none_or(|m| v >= m) && self.max.is_none_or(|m| v <= m)
    }
}

/// Truncation level schedule used by the audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationSchedule {
    Default,
    BaiYin,
}

/// Declarative description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub name: Option<String>,
    /// `γ_1, γ_2, …`.
    pub gammas: Vec<f64>,
    pub families: Vec<DisorderSpec>,
    pub sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub root_seed: u64,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default)]
    pub hypothesis: Option<MomentRequirement>,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub solver: GsSolverConfig,
    #[serde(default)]
    pub sampler: GibbsSamplerConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub tolerances: BTreeMap<String, Bound>,
    /// Spike strengths for tensor PCA.
    #[serde(default)]
    pub lambdas: Vec<f64>,
    /// Species fractions for multi-species runs.
    #[serde(default)]
    pub species: Vec<f64>,
    #[serde(default)]
    pub couplings: Vec<CouplingSpec>,
    /// Exponent of the ℓq sphere.
    #[serde(default)]
    pub q: Option<f64>,
    /// Localized probe threshold in units of `√N`.
    #[serde(default = "default_probe_factor")]
    pub probe_factor: f64,
    #[serde(default = "default_schedule")]
    pub schedule: TruncationSchedule,
    /// Solve for the injective norm of each truncation piece.
    #[serde(default = "default_true")]
    pub audit_gs: bool,
}

fn default_grid_points() -> usize {
    20
}

fn default_eps() -> f64 {
    0.5
}

fn default_probe_factor() -> f64 {
    1.0
}

fn default_schedule() -> TruncationSchedule {
    TruncationSchedule::Default
}

fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    /// Minimal configuration; everything else takes its default.
    pub fn new(
        kind: ExperimentKind,
        gammas: Vec<f64>,
        families: Vec<DisorderSpec>,
        sizes: Vec<usize>,
        seeds: Vec<u64>,
    ) -> Self {
        Self {
            kind,
            name: None,
            gammas,
            families,
            sizes,
            seeds,
            root_seed: 0,
            beta: None,
            grid_points: default_grid_points(),
            hypothesis: None,
            eps: default_eps(),
            solver: GsSolverConfig::default(),
            sampler: GibbsSamplerConfig::default(),
            output: None,
            tolerances: BTreeMap::new(),
            lambdas: Vec::new(),
            species: Vec::new(),
            couplings: Vec::new(),
            q: None,
            probe_factor: default_probe_factor(),
            schedule: default_schedule(),
            audit_gs: true,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Format(format!("experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("experiment config: {e}")))
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.kind.tag().to_string())
    }

    pub fn mixture(&self) -> Result<MixtureSpec> {
        MixtureSpec::new(self.gammas.clone())
    }

    pub fn validate(&self) -> Result<()> {
        if self.families.is_empty() || self.sizes.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("families, sizes and seeds must all be non-empty".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.sizes.contains(&0) {
            return Err(Error::Config("sizes must be positive".into()));
        }
        self.mixture()?;
        for f in &self.families {
            f.validate()?;
        }
        if let Some(b) = self.beta {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(Error::Config(format!("beta must be finite and non-negative, got {b}")));
            }
        }
        self.solver.validate()?;
        self.sampler.validate()?;
        Ok(())
    }

    /// Row label of family `k`; repeated families get a `#k` suffix so null comparisons stay distinct.
    pub fn family_label(&self, k: usize) -> String {
        let tag = self.families[k].tag();
        if self.families[..k].iter().any(|f| f.tag() == tag) {
            format!("{tag}#{k}")
        } else {
            tag
        }
    }

    /// Seed of one `(N, family, replicate)` cell; `n = 0` couples all sizes.
    pub fn instance_seed(&self, n: usize, family: usize, seed: u64) -> u64 {
        derive_seed(
            self.root_seed,
            &[label_tag(self.kind.tag()), n as u64, label_tag(&self.family_label(family)), seed],
        )
    }

    pub(crate) fn coupling_tensors(&self, species: usize) -> Result<Vec<Option<SymmetricTensor>>> {
        let max = self.couplings.iter().map(|c| c.order).max().unwrap_or(0);
        let mut out = vec![None; max];
        for c in &self.couplings {
            if c.order == 0 {
                return Err(Error::Config("coupling order must be positive".into()));
            }
            if out[c.order - 1].is_some() {
                return Err(Error::Config(format!("order-{} couplings given twice", c.order)));
            }
            out[c.order - 1] = Some(SymmetricTensor::from_entries(c.order, species, c.entries.clone())?);
        }
        Ok(out)
    }
}

/// Standard error of a row, or an explicit marker for exact values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StdErr {
    Value(f64),
    #[serde(with = "deterministic_tag")]
    Deterministic,
}

mod deterministic_tag {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("deterministic")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "deterministic" {
            Ok(())
        } else {
            Err(D::Error::custom(format!("expected 'deterministic', got '{s}'")))
        }
    }
}

impl fmt::Display for StdErr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Value(v) => write!(f, "{v}"),
            Self::Deterministic => f.write_str("deterministic"),
        }
    }
}

impl FromStr for StdErr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "deterministic" {
            return Ok(Self::Deterministic);
        }
        s.parse()
            .map(Self::Value)
            .map_err(|_| Error::Format(format!("bad stderr '{s}'")))
    }
}

/// One reported statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub kind: ExperimentKind,
    pub n: Option<usize>,
    pub family: String,
    pub seed: Option<u64>,
    pub stat: String,
    pub value: f64,
    pub stderr: StdErr,
    pub wall_ms: u64,
}

impl ResultRow {
    fn sort_key(&self) -> (ExperimentKind, &str, &str, &str, Option<usize>, Option<u64>) {
        (self.kind, &self.experiment, &self.stat, &self.family, self.n, self.seed)
    }

    /// Same row with the wall time cleared, for determinism comparisons.
    pub fn timeless(&self) -> Self {
        Self { wall_ms: 0, ..self.clone() }
    }
}

/// Sorts rows into their canonical order.
pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| {
        a.sort_key()
            .partial_cmp(&b.sort_key())
            .expect("keys are totally ordered")
    });
}

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "SPINGLASS_THREADS";

/// Sizes the global worker pool from [`THREADS_ENV`] when it is set. Returns the count used.
pub fn init_threads_from_env() -> Result<Option<usize>> {
    let Ok(raw) = std::env::var(THREADS_ENV) else { return Ok(None) };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(Some(threads))
}
