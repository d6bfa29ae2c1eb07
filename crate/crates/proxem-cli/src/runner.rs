//! Experiment implementations: each maps a resolved [`RunConfig`] onto
//! the library pipeline and renders fixed-schema CSV rows. Row order
//! follows the config grids, never thread scheduling.

use std::path::Path;

use proxem::affine::{fit_affine, FitOptions, TrainingSet};
use proxem::codes::{code_info, standard_code, CodeSpace};
use proxem::decomp::decompose_lptm;
use proxem::dynamics::{
    DisorderDistribution, DisorderEnsemble, EvolutionConfig, FluctuatingSet, HamiltonianParams,
};
use proxem::fock::FockBasis;
use proxem::mitigation::{proxy_consistency_report, run_mitigation_experiment, MitigationConfig};
use proxem::tomography::{
    ensemble_lptms, lptm_distance, process_fidelity, DetectionLabel, DetectionStrategy,
    EnsembleLptm, Lptm,
};

use crate::config::{Experiment, MapTraining, Preset, RunConfig};
use crate::output::{self, detection_name, mean_stderr, CsvTable, Field};
use crate::{CliError, RunStatus};

pub fn run(cfg: &RunConfig, preset: Option<Preset>, out_dir: &Path) -> Result<RunStatus, CliError> {
    output::ensure_dir(out_dir)?;
    let status = match cfg.experiment {
        Experiment::ProxyLeakage => {
            let table = proxy_leakage(cfg)?;
            output::write_file(out_dir, cfg.experiment.csv_name(), &table.render())?;
            RunStatus::Success
        }
        Experiment::MapQuality => {
            let table = map_quality(cfg)?;
            output::write_file(out_dir, cfg.experiment.csv_name(), &table.render())?;
            RunStatus::Success
        }
        Experiment::Mitigate => {
            let table = mitigate_experiment(cfg)?;
            output::write_file(out_dir, cfg.experiment.csv_name(), &table.render())?;
            RunStatus::Success
        }
        Experiment::CodeBench => {
            let table = code_bench(cfg)?;
            output::write_file(out_dir, cfg.experiment.csv_name(), &table.render())?;
            RunStatus::Success
        }
        Experiment::NoiseHist => {
            let table = noise_hist(cfg)?;
            output::write_file(out_dir, cfg.experiment.csv_name(), &table.render())?;
            RunStatus::Success
        }
        Experiment::FitMap => fit_map(cfg, out_dir)?,
    };
    output::write_file(out_dir, "manifest.json", &output::manifest_json(cfg, preset))?;
    Ok(status)
}

fn evolution(cfg: &RunConfig) -> EvolutionConfig {
    EvolutionConfig {
        t_final: cfg.t_final,
        dt: cfg.dt,
        sign: cfg.sign,
        integrator: cfg.integrator,
        check_positivity: cfg.check_positivity,
    }
}

fn ensemble(cfg: &RunConfig, modes: usize, sigma: f64) -> DisorderEnsemble {
    DisorderEnsemble {
        base: HamiltonianParams::zero(modes),
        fluctuating: FluctuatingSet::default(),
        distribution: cfg.distribution,
        sigma,
        samples: cfg.samples,
        master_seed: cfg.master_seed,
    }
}

/// Code and proxy constructed on one basis large enough for both
/// occupation sectors, so loss cascades stay exact.
fn shared_pair(cfg: &RunConfig, proxy_name: &str) -> Result<(CodeSpace, CodeSpace), CliError> {
    let (mc, _, nc) = code_info(&cfg.code)?;
    let (mp, _, np) = code_info(proxy_name)?;
    if mc != mp {
        return Err(CliError::Config(format!(
            "code {} has {mc} modes but proxy {proxy_name} has {mp}",
            cfg.code
        )));
    }
    let basis = FockBasis::new(mc, nc.max(np))?;
    Ok((
        standard_code(&cfg.code, &basis)?,
        standard_code(proxy_name, &basis)?,
    ))
}

fn mitigation_config(
    cfg: &RunConfig,
    code: &CodeSpace,
    proxy: &CodeSpace,
    sigma: f64,
    gamma: f64,
) -> MitigationConfig {
    let modes = code.basis().modes();
    let mut m = MitigationConfig::new(
        code.clone(),
        proxy.clone(),
        ensemble(cfg, modes, sigma),
        vec![gamma; modes],
        evolution(cfg),
    );
    m.floor = cfg.floor;
    m.condition_cap = cfg.condition_cap;
    m.pooling = cfg.pooling;
    m
}

fn dist_name(d: DisorderDistribution) -> String {
    match d {
        DisorderDistribution::TwoPoint => "two-point".into(),
        DisorderDistribution::Normal => "normal".into(),
    }
}

const LEAKAGE_HEADER: &[&str] = &[
    "sweep",
    "proxy",
    "distribution",
    "sigma",
    "gamma",
    "samples",
    "pooled_distance",
    "mean_distance",
    "stderr",
];

/// Distance between the in-superposition and standalone proxy transfer
/// matrices: a disorder sweep at zero loss, then a loss sweep at zero
/// disorder.
fn proxy_leakage(cfg: &RunConfig) -> Result<CsvTable, CliError> {
    let mut table = CsvTable::new(LEAKAGE_HEADER);
    for proxy_name in &cfg.proxies {
        let (code, proxy) = shared_pair(cfg, proxy_name)?;
        let sweeps: Vec<(&str, f64, f64)> = cfg
            .sigma_grid
            .iter()
            .map(|&s| ("sigma", s, 0.0))
            .chain(cfg.gamma_grid.iter().map(|&g| ("gamma", 0.0, g)))
            .collect();
        for (sweep, sigma, gamma) in sweeps {
            let mcfg = mitigation_config(cfg, &code, &proxy, sigma, gamma);
            let rep = proxy_consistency_report(&mcfg)?;
            let (mean, se) = mean_stderr(&rep.per_sample);
            table.push(vec![
                Field::Str(sweep.into()),
                Field::Str(proxy_name.clone()),
                Field::Str(dist_name(cfg.distribution)),
                Field::Num(sigma),
                Field::Num(gamma),
                Field::Int(rep.per_sample.len() as u64),
                Field::Num(rep.pooled),
                Field::Num(mean),
                Field::Num(se),
            ]);
        }
    }
    Ok(table)
}

const MAP_QUALITY_HEADER: &[&str] = &[
    "sigma",
    "proxy",
    "distribution",
    "samples",
    "mapped",
    "fit_method",
    "pooled_distance",
    "mean_distance",
    "stderr",
    "residual",
    "underdetermined",
];

/// Standalone proxy and code transfer-matrix ensembles for one grid
/// point (pooled plus per-sample).
fn standalone_ensembles(
    cfg: &RunConfig,
    code: &CodeSpace,
    proxy: &CodeSpace,
    strategy: &DetectionStrategy,
    sigma: f64,
    gamma: f64,
) -> Result<(EnsembleLptm, EnsembleLptm), CliError> {
    let modes = code.basis().modes();
    let ens = ensemble(cfg, modes, sigma);
    let rates = vec![gamma; modes];
    let evo = evolution(cfg);
    let t_code = ensemble_lptms(code, strategy, &ens, &rates, &evo, cfg.floor)?;
    let t_proxy = ensemble_lptms(proxy, strategy, &ens, &rates, &evo, cfg.floor)?;
    Ok((t_proxy, t_code))
}

/// (proxy, code) training pairs drawn from already computed grid-point
/// ensembles according to the configured training mode.
fn training_pairs(
    cfg: &RunConfig,
    per_sigma: &[(EnsembleLptm, EnsembleLptm)],
) -> Vec<(Lptm, Lptm)> {
    let mut pairs = Vec::new();
    for (t_proxy, t_code) in per_sigma {
        match cfg.map_training {
            MapTraining::Pooled => pairs.push((t_proxy.pooled.clone(), t_code.pooled.clone())),
            MapTraining::PerSample => pairs.extend(
                t_proxy
                    .per_sample
                    .iter()
                    .cloned()
                    .zip(t_code.per_sample.iter().cloned()),
            ),
        }
    }
    pairs
}

/// Distance between proxy and code transfer matrices per disorder
/// sample, before and after an affine map. One map per proxy, trained
/// on the ensemble-pooled transfer-matrix pair of each disorder grid
/// point: the map targets the systematic proxy-to-code relation, and
/// the per-sample evaluation then exposes the residual sample noise it
/// cannot remove. Both matrices use the first configured detection.
fn map_quality(cfg: &RunConfig) -> Result<CsvTable, CliError> {
    let mut table = CsvTable::new(MAP_QUALITY_HEADER);
    let gamma = cfg.gamma_grid[0];
    let detection = cfg.detections.first().cloned().unwrap_or(DetectionStrategy::None);
    for proxy_name in &cfg.proxies {
        let (code, proxy) = shared_pair(cfg, proxy_name)?;
        let mut per_sigma = Vec::with_capacity(cfg.sigma_grid.len());
        for &sigma in &cfg.sigma_grid {
            per_sigma.push(standalone_ensembles(
                cfg,
                &code,
                &proxy,
                &detection,
                sigma,
                gamma,
            )?);
        }
        let train = TrainingSet::new(training_pairs(cfg, &per_sigma))?;
        let report = fit_affine(&train, cfg.fit_method, &FitOptions::default())?;

        for (&sigma, (t_proxy, t_code)) in cfg.sigma_grid.iter().zip(per_sigma.iter()) {
            let unmapped: Vec<f64> = t_proxy
                .per_sample
                .iter()
                .zip(t_code.per_sample.iter())
                .map(|(p, c)| lptm_distance(&p.rows, &c.rows))
                .collect();
            let (mean, se) = mean_stderr(&unmapped);
            table.push(vec![
                Field::Num(sigma),
                Field::Str(proxy_name.clone()),
                Field::Str(dist_name(cfg.distribution)),
                Field::Int(unmapped.len() as u64),
                Field::Bool(false),
                Field::Empty,
                Field::Num(lptm_distance(&t_proxy.pooled.rows, &t_code.pooled.rows)),
                Field::Num(mean),
                Field::Num(se),
                Field::Empty,
                Field::Empty,
            ]);

            let mapped: Vec<f64> = t_proxy
                .per_sample
                .iter()
                .zip(t_code.per_sample.iter())
                .map(|(p, c)| lptm_distance(&report.map.apply_rows(&p.rows), &c.rows))
                .collect();
            let (mean, se) = mean_stderr(&mapped);
            table.push(vec![
                Field::Num(sigma),
                Field::Str(proxy_name.clone()),
                Field::Str(dist_name(cfg.distribution)),
                Field::Int(mapped.len() as u64),
                Field::Bool(true),
                Field::Str(fit_method_name(cfg)),
                Field::Num(lptm_distance(
                    &report.map.apply_rows(&t_proxy.pooled.rows),
                    &t_code.pooled.rows,
                )),
                Field::Num(mean),
                Field::Num(se),
                Field::Num(report.map.residual),
                Field::Bool(report.map.underdetermined),
            ]);
        }
    }
    Ok(table)
}

fn fit_method_name(cfg: &RunConfig) -> String {
    serde_json::to_value(cfg.fit_method)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

const MITIGATE_HEADER: &[&str] = &[
    "sigma",
    "gamma",
    "proxy",
    "mapped",
    "raw_x",
    "raw_y",
    "raw_z",
    "mit_x",
    "mit_y",
    "mit_z",
    "exact_x",
    "exact_y",
    "exact_z",
    "err_x",
    "err_y",
    "err_z",
];

/// Superposition-probe mitigation sweep. When `with-map` is set, one
/// affine map per proxy and loss rate is fitted on the code-projector
/// detected pooled pair of every disorder grid point (matching the
/// detection and pooling of the transfer matrix it is applied to),
/// then reused at every grid point.
fn mitigate_experiment(cfg: &RunConfig) -> Result<CsvTable, CliError> {
    let mut table = CsvTable::new(MITIGATE_HEADER);
    for proxy_name in &cfg.proxies {
        let (code, proxy) = shared_pair(cfg, proxy_name)?;
        for &gamma in &cfg.gamma_grid {
            let map = if cfg.with_map {
                let mut per_sigma = Vec::with_capacity(cfg.sigma_grid.len());
                for &sigma in &cfg.sigma_grid {
                    per_sigma.push(standalone_ensembles(
                        cfg,
                        &code,
                        &proxy,
                        &DetectionStrategy::CodeProjector,
                        sigma,
                        gamma,
                    )?);
                }
                let train = TrainingSet::new(training_pairs(cfg, &per_sigma))?;
                let mut report = fit_affine(&train, cfg.fit_method, &FitOptions::default())?;
                report.map.code = Some(cfg.code.clone());
                report.map.proxy = Some(proxy_name.clone());
                report.map.seed = Some(cfg.master_seed);
                Some(report.map)
            } else {
                None
            };
            for &sigma in &cfg.sigma_grid {
                let mut mcfg = mitigation_config(cfg, &code, &proxy, sigma, gamma);
                mcfg.map = map.clone();
                let out = run_mitigation_experiment(&mcfg)?;
                let mut push_row = |mapped: bool, mit: &proxem::mitigation::ExpectationTriple| {
                    table.push(vec![
                        Field::Num(sigma),
                        Field::Num(gamma),
                        Field::Str(proxy_name.clone()),
                        Field::Bool(mapped),
                        Field::Num(out.raw.x),
                        Field::Num(out.raw.y),
                        Field::Num(out.raw.z),
                        Field::Num(mit.x),
                        Field::Num(mit.y),
                        Field::Num(mit.z),
                        Field::Num(out.exact.x),
                        Field::Num(out.exact.y),
                        Field::Num(out.exact.z),
                        Field::Num((mit.x - out.exact.x).abs()),
                        Field::Num((mit.y - out.exact.y).abs()),
                        Field::Num((mit.z - out.exact.z).abs()),
                    ]);
                };
                push_row(false, &out.mitigated);
                if let Some(mapped) = &out.mitigated_mapped {
                    push_row(true, mapped);
                }
            }
        }
    }
    Ok(table)
}

const CODE_BENCH_HEADER: &[&str] = &[
    "code",
    "detection",
    "distribution",
    "sigma",
    "gamma",
    "samples",
    "fidelity_pooled",
    "fidelity_mean",
    "fidelity_stderr",
];

struct BenchPoint {
    code: String,
    detection: String,
    sigma: f64,
    gamma: f64,
    pooled: Lptm,
    per_sample: Vec<Lptm>,
}

fn bench_points(cfg: &RunConfig) -> Result<Vec<BenchPoint>, CliError> {
    let evo = evolution(cfg);
    let mut points = Vec::new();
    for code_name in &cfg.codes {
        let (modes, _, max_total) = code_info(code_name)?;
        let basis = FockBasis::new(modes, max_total)?;
        let code = standard_code(code_name, &basis)?;
        for strategy in &cfg.detections {
            for &sigma in &cfg.sigma_grid {
                for &gamma in &cfg.gamma_grid {
                    let ens = ensemble(cfg, modes, sigma);
                    let rates = vec![gamma; modes];
                    let t = ensemble_lptms(&code, strategy, &ens, &rates, &evo, cfg.floor)?;
                    points.push(BenchPoint {
                        code: code_name.clone(),
                        detection: detection_name(strategy),
                        sigma,
                        gamma,
                        pooled: t.pooled,
                        per_sample: t.per_sample,
                    });
                }
            }
        }
    }
    Ok(points)
}

/// Process fidelity of each code per detection strategy.
fn code_bench(cfg: &RunConfig) -> Result<CsvTable, CliError> {
    let mut table = CsvTable::new(CODE_BENCH_HEADER);
    for pt in bench_points(cfg)? {
        let fids: Vec<f64> = pt
            .per_sample
            .iter()
            .map(|t| process_fidelity(t, None))
            .collect();
        let (mean, se) = mean_stderr(&fids);
        table.push(vec![
            Field::Str(pt.code),
            Field::Str(pt.detection),
            Field::Str(dist_name(cfg.distribution)),
            Field::Num(pt.sigma),
            Field::Num(pt.gamma),
            Field::Int(fids.len() as u64),
            Field::Num(process_fidelity(&pt.pooled, None)),
            Field::Num(mean),
            Field::Num(se),
        ]);
    }
    Ok(table)
}

const NOISE_HIST_HEADER: &[&str] = &[
    "code",
    "detection",
    "distribution",
    "sigma",
    "gamma",
    "samples",
    "leakage_pooled",
    "leakage_mean",
    "leakage_stderr",
    "nonunital_pooled",
    "nonunital_mean",
    "nonunital_stderr",
    "coherent_pooled",
    "coherent_mean",
    "coherent_stderr",
    "decdev_pooled",
    "decdev_mean",
    "decdev_stderr",
];

/// Scalar noise measures of each code per detection strategy: leakage,
/// non-unital strength, coherent (rotation) strength, and deviation of
/// the singular values from the identity channel.
fn noise_hist(cfg: &RunConfig) -> Result<CsvTable, CliError> {
    let mut table = CsvTable::new(NOISE_HIST_HEADER);
    for pt in bench_points(cfg)? {
        let decs: Vec<_> = pt.per_sample.iter().map(decompose_lptm).collect();
        let pooled = decompose_lptm(&pt.pooled);
        let stats = |f: fn(&proxem::decomp::NoiseDecomposition) -> f64| {
            let xs: Vec<f64> = decs.iter().map(f).collect();
            mean_stderr(&xs)
        };
        let (leak_m, leak_s) = stats(|d| d.leakage);
        let (nonu_m, nonu_s) = stats(|d| d.nonunital);
        let (coh_m, coh_s) = stats(|d| d.coherent);
        let (dev_m, dev_s) = stats(|d| d.decoherence_deviation);
        table.push(vec![
            Field::Str(pt.code),
            Field::Str(pt.detection),
            Field::Str(dist_name(cfg.distribution)),
            Field::Num(pt.sigma),
            Field::Num(pt.gamma),
            Field::Int(decs.len() as u64),
            Field::Num(pooled.leakage),
            Field::Num(leak_m),
            Field::Num(leak_s),
            Field::Num(pooled.nonunital),
            Field::Num(nonu_m),
            Field::Num(nonu_s),
            Field::Num(pooled.coherent),
            Field::Num(coh_m),
            Field::Num(coh_s),
            Field::Num(pooled.decoherence_deviation),
            Field::Num(dev_m),
            Field::Num(dev_s),
        ]);
    }
    Ok(table)
}

/// Fit an affine map from a pairs file or a generated ensemble and
/// persist it. An underdetermined design is still persisted but exits
/// with a distinct status.
fn fit_map(cfg: &RunConfig, out_dir: &Path) -> Result<RunStatus, CliError> {
    let pairs: Vec<(Lptm, Lptm)> = match &cfg.training_pairs {
        Some(path) => read_pairs_file(Path::new(path))?,
        None => {
            let (code, proxy) = shared_pair(cfg, &cfg.proxies[0])?;
            let mut per_sigma = Vec::with_capacity(cfg.sigma_grid.len());
            for &sigma in &cfg.sigma_grid {
                per_sigma.push(standalone_ensembles(
                    cfg,
                    &code,
                    &proxy,
                    &DetectionStrategy::None,
                    sigma,
                    cfg.gamma_grid[0],
                )?);
            }
            training_pairs(cfg, &per_sigma)
        }
    };
    let train = TrainingSet::new(pairs)?;
    let mut report = fit_affine(&train, cfg.fit_method, &FitOptions::default())?;
    report.map.code = Some(cfg.code.clone());
    report.map.proxy = cfg.proxies.first().cloned();
    report.map.seed = Some(cfg.master_seed);

    let costs: Vec<f64> = train
        .pairs
        .iter()
        .map(|(p, c)| lptm_distance(&report.map.apply_rows(&p.rows), &c.rows))
        .collect();
    let (cost_mean, _) = mean_stderr(&costs);
    let cost_max = costs.iter().cloned().fold(0.0, f64::max);
    println!(
        "fit-map: {} pairs, rank {}, iterations {}, residual {}, per-pair distance mean {} max {}",
        train.len(),
        report.rank,
        report.iterations,
        report.map.residual,
        cost_mean,
        cost_max
    );
    if report.map.underdetermined {
        eprintln!("warning: training design is rank-deficient; minimum-norm solution persisted");
    }

    let mut text = serde_json::to_string_pretty(&report.map.to_json()).expect("map serialization");
    text.push('\n');
    output::write_file(out_dir, cfg.experiment.csv_name(), &text)?;
    if report.map.underdetermined {
        Ok(RunStatus::Underdetermined)
    } else {
        Ok(RunStatus::Success)
    }
}

/// Pairs file: JSON array of `{"proxy": [[..4x4..]], "code": [[..]]}`.
fn read_pairs_file(path: &Path) -> Result<Vec<(Lptm, Lptm)>, CliError> {
    #[derive(serde::Deserialize)]
    struct PairEntry {
        proxy: [[f64; 4]; 4],
        code: [[f64; 4]; 4],
    }
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::Config(format!("cannot read training pairs {}: {e}", path.display()))
    })?;
    let entries: Vec<PairEntry> = serde_json::from_str(&text).map_err(|e| {
        CliError::Config(format!("invalid training pairs {}: {e}", path.display()))
    })?;
    Ok(entries
        .into_iter()
        .map(|e| {
            (
                Lptm::from_rows(e.proxy, DetectionLabel::Raw),
                Lptm::from_rows(e.code, DetectionLabel::Raw),
            )
        })
        .collect())
}
