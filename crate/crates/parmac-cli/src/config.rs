//! JSON config schemas for the subcommands.
//!
//! Training knobs are all optional and fall back to the library defaults
//! (`TrainConfig::new`), so a minimal job config is just
//! `{"data": {"n": 2000, "dim": 16}, "l": 8}`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use parmac::data::{generate_synthetic, read_bvecs, read_fvecs, Dataset};
use parmac::eval::MetricConfig;
use parmac::mac::{TrainConfig, WMode};
use parmac::mac::ZMode;
use parmac::runtime::{Executor, RuntimeConfig};
use parmac::speedup::{effective_m, SpeedupParams};
use serde::Deserialize;

pub fn load<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("bad config {}", path.display()))
}

/// A dataset is either an fvecs/bvecs file (format chosen by extension) or a
/// Gaussian-mixture draw described inline.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum DataSource {
    File(PathBuf),
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    pub dim: usize,
    #[serde(default = "default_clusters")]
    pub clusters: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_clusters() -> usize {
    8
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::File(path) => read_vector_file(path),
            DataSource::Synthetic(s) => generate_synthetic(s.n, s.dim, s.clusters, s.seed)
                .context("synthetic dataset parameters rejected"),
        }
    }
}

pub fn read_vector_file(path: &Path) -> Result<Dataset> {
    let file =
        fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let reader = std::io::BufReader::new(file);
    let parsed = match path.extension().and_then(|e| e.to_str()) {
        Some("bvecs") => read_bvecs(reader),
        _ => read_fvecs(reader),
    };
    parsed.with_context(|| format!("cannot parse {}", path.display()))
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZModeArg {
    Enumerate,
    Alternate,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WModeArg {
    Sgd,
    ExactDecoder,
}

/// SGD settings; absent fields keep the library defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdSection {
    pub epochs: Option<u32>,
    pub minibatch: Option<usize>,
    pub eta0: Option<f64>,
    pub lambda: Option<f64>,
    pub probe_points: Option<usize>,
    pub shuffle: Option<bool>,
}

/// Config for `train`, `run` and `simulate`. The distributed block (`p`,
/// `executor`, `consecutive_pass`, `reshuffle`) is ignored by `train`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub data: DataSource,
    /// Separate validation set; when absent, a holdout of
    /// `validation_fraction` is split off the training data.
    pub validation: Option<DataSource>,
    pub l: usize,
    pub mu0: Option<f64>,
    pub mu_factor: Option<f64>,
    pub iterations: Option<u32>,
    #[serde(default)]
    pub sgd: SgdSection,
    pub z_mode: Option<ZModeArg>,
    pub w_mode: Option<WModeArg>,
    pub validation_fraction: Option<f64>,
    pub early_stop: Option<bool>,
    pub trace_half_steps: Option<bool>,
    pub pca_subset: Option<usize>,
    pub metric: Option<MetricConfig>,
    pub seed: Option<u64>,
    pub p: Option<usize>,
    pub executor: Option<Executor>,
    pub consecutive_pass: Option<bool>,
    pub reshuffle: Option<bool>,
}

impl JobConfig {
    pub fn train_config(&self) -> TrainConfig {
        let mut cfg = TrainConfig::new(self.l);
        if let Some(x) = self.mu0 {
            cfg.schedule.mu0 = x;
        }
        if let Some(x) = self.mu_factor {
            cfg.schedule.factor = x;
        }
        if let Some(x) = self.iterations {
            cfg.schedule.iterations = x;
        }
        if let Some(x) = self.sgd.epochs {
            cfg.sgd.epochs = x;
        }
        if let Some(x) = self.sgd.minibatch {
            cfg.sgd.minibatch = x;
        }
        if let Some(x) = self.sgd.eta0 {
            cfg.sgd.eta0 = x;
        }
        if let Some(x) = self.sgd.lambda {
            cfg.sgd.lambda = x;
        }
        if let Some(x) = self.sgd.probe_points {
            cfg.sgd.probe_points = x;
        }
        if let Some(x) = self.sgd.shuffle {
            cfg.sgd.shuffle = x;
        }
        if let Some(x) = self.z_mode {
            cfg.z_mode = match x {
                ZModeArg::Enumerate => ZMode::Enumerate,
                ZModeArg::Alternate => ZMode::Alternate,
            };
        }
        if let Some(x) = self.w_mode {
            cfg.w_mode = match x {
                WModeArg::Sgd => WMode::Sgd,
                WModeArg::ExactDecoder => WMode::ExactDecoder,
            };
        }
        if let Some(x) = self.validation_fraction {
            cfg.validation_fraction = x;
        }
        if let Some(x) = self.early_stop {
            cfg.early_stop = x;
        }
        if let Some(x) = self.trace_half_steps {
            cfg.trace_half_steps = x;
        }
        if let Some(x) = self.pca_subset {
            cfg.pca_subset = x;
        }
        if let Some(x) = self.metric {
            cfg.metric = x;
        }
        if let Some(x) = self.seed {
            cfg.seed = x;
        }
        cfg
    }

    pub fn runtime_config(&self, p_override: Option<usize>) -> RuntimeConfig {
        let mut rt = RuntimeConfig::new(p_override.or(self.p).unwrap_or(1));
        if let Some(x) = self.executor {
            rt.executor = x;
        }
        if let Some(x) = self.consecutive_pass {
            rt.consecutive_pass = x;
        }
        if let Some(x) = self.reshuffle {
            rt.reshuffle = x;
        }
        rt
    }
}

/// Config for `eval`. Without `queries` the base set is queried against
/// itself with self-matches excluded.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub checkpoint: PathBuf,
    pub base: DataSource,
    pub queries: Option<DataSource>,
    #[serde(default = "default_k")]
    pub k_true: usize,
    #[serde(default = "default_k")]
    pub k_retrieved: usize,
    /// Recall cutoffs; each entry becomes one key of the output's `recall`
    /// object.
    #[serde(default)]
    pub r_list: Vec<usize>,
}

fn default_k() -> usize {
    100
}

/// Config for `speedup`: exactly one of `curve` or `verify`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedupConfig {
    pub curve: Option<CurveSection>,
    pub verify: Option<VerifySection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveSection {
    pub n: u64,
    /// Submodel count, given directly or as encoder/decoder widths `l` and
    /// `d` (grouped to the effective count when `d >= l`).
    pub m: Option<u64>,
    pub l: Option<u64>,
    pub d: Option<u64>,
    #[serde(default = "one_u32")]
    pub e: u32,
    #[serde(default = "one_f64")]
    pub t_w_r: f64,
    pub t_z_r: f64,
    pub t_w_c: f64,
    pub p_max: Option<u64>,
    #[serde(default = "one_u64")]
    pub stride: u64,
}

fn one_u32() -> u32 {
    1
}

fn one_u64() -> u64 {
    1
}

fn one_f64() -> f64 {
    1.0
}

impl CurveSection {
    pub fn params(&self) -> Result<SpeedupParams> {
        let m = match (self.m, self.l) {
            (Some(m), None) => m,
            (None, Some(l)) => effective_m(l, self.d.unwrap_or(l)).count(),
            (Some(_), Some(_)) => bail!("give either m or l/d, not both"),
            (None, None) => bail!("missing submodel count: set m or l"),
        };
        let params = SpeedupParams {
            p: 1,
            n: self.n,
            m,
            e: self.e,
            t_w_r: self.t_w_r,
            t_z_r: self.t_z_r,
            t_w_c: self.t_w_c,
        };
        params.validate()?;
        Ok(params)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    pub m_values: Vec<u64>,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_grid")]
    pub grid_density: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_draws() -> usize {
    100
}

fn default_grid() -> usize {
    200
}

/// Config for `fit-times`: measured `(P, speedup)` pairs plus the fixed
/// problem shape.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub measured: Vec<(u64, f64)>,
    pub n: u64,
    pub m: u64,
    #[serde(default = "one_u32")]
    pub e: u32,
}
