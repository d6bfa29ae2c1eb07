//! Experiment configuration: a JSON file with optional fields, resolved
//! against scale presets and per-experiment defaults into a fully
//! concrete [`RunConfig`] that is echoed verbatim into the run manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use proxem::affine::FitMethod;
use proxem::dynamics::{DisorderDistribution, Integrator, SignConvention};
use proxem::mitigation::Pooling;
use proxem::tomography::DetectionStrategy;

use crate::CliError;

pub const SIGMA_LO: f64 = 0.005;
pub const SIGMA_HI: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    /// Distance between the proxy transfer matrix seen inside the
    /// code+proxy superposition and the standalone one, swept over
    /// disorder strength and over loss rate.
    ProxyLeakage,
    /// Distance between proxy and code transfer matrices, with and
    /// without a fitted affine map, swept over disorder strength.
    MapQuality,
    /// Mitigated logical expectation values via proxy-block inversion,
    /// optionally through a fitted affine map.
    Mitigate,
    /// Process fidelity of standard codes under loss and disorder for
    /// several detection strategies.
    CodeBench,
    /// Scalar noise measures (leakage, non-unital, coherent,
    /// decoherence deviation) of standard codes per detection strategy.
    NoiseHist,
    /// Fit an affine map from supplied or generated training pairs and
    /// persist it.
    FitMap,
}

impl Experiment {
    pub fn csv_name(&self) -> &'static str {
        match self {
            Experiment::ProxyLeakage => "proxy-leakage.csv",
            Experiment::MapQuality => "map-quality.csv",
            Experiment::Mitigate => "mitigate.csv",
            Experiment::CodeBench => "code-bench.csv",
            Experiment::NoiseHist => "noise-hist.csv",
            Experiment::FitMap => "map.json",
        }
    }
}

/// Where affine-map training pairs come from: the ensemble-pooled
/// transfer-matrix pair of each disorder grid point, or every
/// per-sample pair across the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapTraining {
    Pooled,
    PerSample,
}

/// Scale presets. Defaults match `Paper`; `Desk` trades grid density
/// and sample count for runtime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Paper,
    Desk,
}

impl Preset {
    fn samples(&self) -> usize {
        match self {
            Preset::Paper => 1000,
            Preset::Desk => 200,
        }
    }

    fn sweep_points(&self) -> usize {
        match self {
            Preset::Paper => 20,
            Preset::Desk => 6,
        }
    }
}

/// On-disk config: everything except the experiment tag is optional.
/// Unknown fields are rejected by name.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct PartialConfig {
    pub experiment: Option<Experiment>,
    pub code: Option<String>,
    pub proxies: Option<Vec<String>>,
    pub codes: Option<Vec<String>>,
    pub sigma_grid: Option<Vec<f64>>,
    pub gamma_grid: Option<Vec<f64>>,
    pub distribution: Option<DisorderDistribution>,
    pub samples: Option<usize>,
    pub master_seed: Option<u64>,
    pub t_final: Option<f64>,
    pub dt: Option<f64>,
    pub integrator: Option<Integrator>,
    pub sign: Option<SignConvention>,
    pub check_positivity: Option<bool>,
    pub detections: Option<Vec<DetectionStrategy>>,
    pub pooling: Option<Pooling>,
    pub fit_method: Option<FitMethod>,
    pub map_training: Option<MapTraining>,
    pub with_map: Option<bool>,
    pub floor: Option<f64>,
    pub condition_cap: Option<f64>,
    pub training_pairs: Option<String>,
}

/// Fully resolved run configuration; serialized into the manifest so
/// every default is on the record. Fields not consumed by the selected
/// experiment still carry their defaults.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub struct RunConfig {
    pub experiment: Experiment,
    /// Reference code space for leakage/map/mitigation experiments.
    pub code: String,
    /// Proxy spaces swept by leakage/map/mitigation experiments.
    pub proxies: Vec<String>,
    /// Encodings compared by code-bench and noise-hist.
    pub codes: Vec<String>,
    pub sigma_grid: Vec<f64>,
    pub gamma_grid: Vec<f64>,
    pub distribution: DisorderDistribution,
    pub samples: usize,
    pub master_seed: u64,
    pub t_final: f64,
    pub dt: f64,
    pub integrator: Integrator,
    pub sign: SignConvention,
    /// Eigenvalue positivity check per evolved density (costly; off by
    /// default for ensemble runs, trace/Hermiticity checks stay on).
    pub check_positivity: bool,
    pub detections: Vec<DetectionStrategy>,
    pub pooling: Pooling,
    pub fit_method: FitMethod,
    /// Training pairs for fitted affine maps: pooled pair per grid
    /// point, or all per-sample pairs.
    pub map_training: MapTraining,
    /// Mitigate: also emit rows where the inverted block comes from the
    /// affine-mapped transfer matrix.
    pub with_map: bool,
    pub floor: f64,
    pub condition_cap: f64,
    /// Fit-map: path to a JSON array of [proxy, code] row pairs. When
    /// absent, training pairs are generated for the first proxy across
    /// the sigma grid at the first loss rate.
    pub training_pairs: Option<String>,
}

/// Command-line overrides; highest precedence.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub preset: Option<Preset>,
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (n as f64 - 1.0);
    (0..n).map(|k| lo + step * k as f64).collect()
}

pub fn load(path: &Path, overrides: &Overrides) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let partial: PartialConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))?;
    resolve(partial, overrides)
}

pub fn resolve(p: PartialConfig, ov: &Overrides) -> Result<RunConfig, CliError> {
    let experiment = p
        .experiment
        .ok_or_else(|| CliError::Config("missing field `experiment`".into()))?;
    let preset = ov.preset.unwrap_or(Preset::Paper);
    let sweep = linspace(SIGMA_LO, SIGMA_HI, preset.sweep_points());

    let cfg = RunConfig {
        experiment,
        code: p.code.unwrap_or_else(|| "C".into()),
        proxies: p.proxies.unwrap_or_else(|| default_proxies(experiment)),
        codes: p.codes.unwrap_or_else(|| {
            vec!["dual-rail".into(), "binomial-024".into(), "cly-4222".into()]
        }),
        sigma_grid: p.sigma_grid.unwrap_or_else(|| sweep.clone()),
        gamma_grid: p
            .gamma_grid
            .unwrap_or_else(|| default_gamma_grid(experiment, &sweep)),
        distribution: p.distribution.unwrap_or(DisorderDistribution::TwoPoint),
        samples: ov.samples.or(p.samples).unwrap_or_else(|| preset.samples()),
        master_seed: ov.seed.or(p.master_seed).unwrap_or(7),
        t_final: p.t_final.unwrap_or(1.0),
        dt: p.dt.unwrap_or(1e-3),
        integrator: p.integrator.unwrap_or(Integrator::Rk4),
        sign: p.sign.unwrap_or(SignConvention::Standard),
        check_positivity: p.check_positivity.unwrap_or(false),
        // Mod-2 total number is the one nontrivial detection valid for
        // every default code (dual-rail, binomial-024, cly-4222).
        detections: p.detections.unwrap_or_else(|| {
            vec![
                DetectionStrategy::None,
                DetectionStrategy::NumberModTotal { modulus: 2 },
                DetectionStrategy::CodeProjector,
            ]
        }),
        pooling: p.pooling.unwrap_or(Pooling::Ensemble),
        fit_method: p.fit_method.unwrap_or(FitMethod::SumOfNorms),
        map_training: p.map_training.unwrap_or(MapTraining::Pooled),
        with_map: p.with_map.unwrap_or(true),
        floor: p.floor.unwrap_or(1e-12),
        condition_cap: p.condition_cap.unwrap_or(1e6),
        training_pairs: p.training_pairs,
    };
    validate(&cfg)?;
    Ok(cfg)
}

fn default_proxies(experiment: Experiment) -> Vec<String> {
    match experiment {
        Experiment::ProxyLeakage => vec!["P1".into(), "P2".into(), "P3".into(), "P4".into()],
        _ => vec!["P4".into(), "P5".into()],
    }
}

fn default_gamma_grid(experiment: Experiment, sweep: &[f64]) -> Vec<f64> {
    match experiment {
        // Loss sweep mirrors the disorder sweep.
        Experiment::ProxyLeakage => sweep.to_vec(),
        // Disorder-only studies.
        Experiment::MapQuality | Experiment::Mitigate | Experiment::FitMap => vec![0.0],
        // Fixed loss rate for code comparisons.
        Experiment::CodeBench | Experiment::NoiseHist => vec![0.02],
    }
}

fn validate(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.samples == 0 {
        return Err(CliError::Config("`samples` must be >= 1".into()));
    }
    if cfg.sigma_grid.is_empty() {
        return Err(CliError::Config("`sigma-grid` must be non-empty".into()));
    }
    if cfg.gamma_grid.is_empty() {
        return Err(CliError::Config("`gamma-grid` must be non-empty".into()));
    }
    for (name, grid) in [("sigma-grid", &cfg.sigma_grid), ("gamma-grid", &cfg.gamma_grid)] {
        if grid.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(CliError::Config(format!(
                "`{name}` entries must be finite and non-negative"
            )));
        }
    }
    if !(cfg.t_final.is_finite() && cfg.t_final >= 0.0) {
        return Err(CliError::Config("`t-final` must be finite and >= 0".into()));
    }
    if !(cfg.dt.is_finite() && cfg.dt > 0.0) {
        return Err(CliError::Config("`dt` must be finite and positive".into()));
    }
    if !(cfg.floor.is_finite() && cfg.floor > 0.0) {
        return Err(CliError::Config("`floor` must be finite and positive".into()));
    }
    if !(cfg.condition_cap.is_finite() && cfg.condition_cap > 1.0) {
        return Err(CliError::Config("`condition-cap` must be > 1".into()));
    }
    let uses_proxies = matches!(
        cfg.experiment,
        Experiment::ProxyLeakage | Experiment::MapQuality | Experiment::Mitigate
    );
    if uses_proxies || (cfg.experiment == Experiment::FitMap && cfg.training_pairs.is_none()) {
        if cfg.proxies.is_empty() {
            return Err(CliError::Config("`proxies` must be non-empty".into()));
        }
        proxem::codes::code_info(&cfg.code)
            .map_err(|e| CliError::Config(format!("`code`: {e}")))?;
        for p in &cfg.proxies {
            proxem::codes::code_info(p)
                .map_err(|e| CliError::Config(format!("`proxies`: {e}")))?;
        }
    }
    if matches!(cfg.experiment, Experiment::CodeBench | Experiment::NoiseHist) {
        if cfg.codes.is_empty() {
            return Err(CliError::Config("`codes` must be non-empty".into()));
        }
        for c in &cfg.codes {
            proxem::codes::code_info(c)
                .map_err(|e| CliError::Config(format!("`codes`: {e}")))?;
        }
        if cfg.detections.is_empty() {
            return Err(CliError::Config("`detections` must be non-empty".into()));
        }
    }
    Ok(())
}
