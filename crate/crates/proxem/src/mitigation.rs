//! Error mitigation by proxy transfer-matrix inversion.
//!
//! A target logical state of code C rides along with one of the four
//! proxy logical states in a superposition alpha|target_C> +
//! beta|p_k'>. After noisy evolution the code block (projected onto C
//! and renormalized) yields raw expectation values <X>, <Y>, <Z>,
//! while the proxy blocks across the four probes yield the proxy
//! transfer matrix T''. The mitigated triple inverts the noise the
//! proxy witnessed:
//!
//! ```text
//! (<X>, <Y>, <Z>)_mit = (T''_3x3)^{-1} (<X>, <Y>, <Z>)_raw
//! ```
//!
//! optionally after sending T'' through a learned proxy-to-code affine
//! map. Only the lower-right 3x3 block enters the inversion; leakage
//! and non-unital rows are deliberately ignored.

use nalgebra::{Matrix2, Matrix3, Vector3};
use ndarray::Array1;

use crate::affine::{apply_affine, AffineMap};
use crate::codes::CodeSpace;
use crate::dynamics::{DisorderEnsemble, EvolutionConfig};
use crate::tomography::{
    ensemble_evolve_probes, lptm_from_outcomes, DetectionStrategy, EvolvedProbe, Lptm,
    ProbeOutcome, DEFAULT_POST_SELECTION_FLOOR,
};
use crate::{C64, Error, Result};

pub const DEFAULT_CONDITION_CAP: f64 = 1e6;
const ORTHOGONALITY_TOL: f64 = 1e-10;
const NORM_TOL: f64 = 1e-12;

/// Logical Pauli expectation values of one qubit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectationTriple {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl ExpectationTriple {
    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        ExpectationTriple {
            x: v[0],
            y: v[1],
            z: v[2],
        }
    }

    /// Expectations of the normalized qubit density matrix rho = B/tr B.
    pub fn from_block(block: &Matrix2<C64>) -> Result<Self> {
        let tr = (block[(0, 0)] + block[(1, 1)]).re;
        if tr.abs() < 1e-300 {
            return Err(Error::Numerical("zero-trace logical block".into()));
        }
        let x = 2.0 * block[(1, 0)].re / tr;
        let y = 2.0 * block[(1, 0)].im / tr;
        let z = (block[(0, 0)] - block[(1, 1)]).re / tr;
        Ok(ExpectationTriple { x, y, z })
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn max_abs_error(&self, other: &ExpectationTriple) -> f64 {
        (self.x - other.x)
            .abs()
            .max((self.y - other.y).abs())
            .max((self.z - other.z).abs())
    }
}

/// Ideal triple of the target state a|0bar> + b|1bar>.
pub fn exact_triple(a: C64, b: C64) -> ExpectationTriple {
    let cross = a.conj() * b;
    ExpectationTriple {
        x: 2.0 * cross.re,
        y: 2.0 * cross.im,
        z: a.norm_sqr() - b.norm_sqr(),
    }
}

/// How ensemble statistics enter the mitigation formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    /// Average blocks and weights over samples first, then invert one
    /// ensemble T'' (default).
    Ensemble,
    /// Invert per sample and average the mitigated triples.
    PerSample,
}

#[derive(Debug, Clone)]
pub struct MitigationConfig {
    pub code: CodeSpace,
    pub proxy: CodeSpace,
    /// Weight on the code target state.
    pub alpha: C64,
    /// Weight on the proxy probe state.
    pub beta: C64,
    /// Logical coefficients (a, b) of the target state.
    pub target: [C64; 2],
    pub ensemble: DisorderEnsemble,
    pub rates: Vec<f64>,
    pub evolution: EvolutionConfig,
    pub map: Option<AffineMap>,
    pub condition_cap: f64,
    pub pooling: Pooling,
    pub floor: f64,
}

impl MitigationConfig {
    pub fn new(
        code: CodeSpace,
        proxy: CodeSpace,
        ensemble: DisorderEnsemble,
        rates: Vec<f64>,
        evolution: EvolutionConfig,
    ) -> Self {
        let r = 1.0 / 2f64.sqrt();
        MitigationConfig {
            code,
            proxy,
            alpha: C64::new(r, 0.0),
            beta: C64::new(r, 0.0),
            target: [C64::new(0.5, 0.0), C64::new(3f64.sqrt() / 2.0, 0.0)],
            ensemble,
            rates,
            evolution,
            map: None,
            condition_cap: DEFAULT_CONDITION_CAP,
            pooling: Pooling::Ensemble,
            floor: DEFAULT_POST_SELECTION_FLOOR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.code.dim() != self.proxy.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.code.dim(),
                found: self.proxy.dim(),
            });
        }
        let norm = self.alpha.norm_sqr() + self.beta.norm_sqr();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::BadCoefficients { norm });
        }
        let tnorm = self.target[0].norm_sqr() + self.target[1].norm_sqr();
        if (tnorm - 1.0).abs() > 1e-10 {
            return Err(Error::BadCoefficients { norm: tnorm });
        }
        for c in [self.code.zero(), self.code.one()] {
            for p in [self.proxy.zero(), self.proxy.one()] {
                let overlap: C64 = c.iter().zip(p.iter()).map(|(a, b)| a.conj() * b).sum();
                if overlap.norm() > ORTHOGONALITY_TOL {
                    return Err(Error::InvalidState {
                        reason: format!(
                            "code {} and proxy {} overlap ({:.2e})",
                            self.code.name(),
                            self.proxy.name(),
                            overlap.norm()
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}

/// alpha (a|0bar_C> + b|1bar_C>) + beta |p_k'>, unit norm.
pub fn prepare_superposition(cfg: &MitigationConfig, probe: usize) -> Result<Array1<C64>> {
    cfg.validate()?;
    let target = cfg.code.logical_state(cfg.target[0], cfg.target[1])?;
    let probe_state = cfg.proxy.pauli_states()[probe].clone();
    let psi = target.mapv(|z| z * cfg.alpha) + probe_state.mapv(|z| z * cfg.beta);
    let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
    if (norm - 1.0).abs() > NORM_TOL {
        return Err(Error::InvalidState {
            reason: format!("superposition norm {norm} deviates from 1"),
        });
    }
    Ok(psi)
}

/// Invert the lower-right 3x3 block. The 2-norm condition number must
/// stay at or below `condition_cap`.
pub fn invert_block(t: &Lptm, condition_cap: f64) -> Result<Matrix3<f64>> {
    let block = t.block3();
    let svd = nalgebra::SVD::new(block, false, false);
    let sv_max = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let sv_min = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let cond = if sv_min > 0.0 {
        sv_max / sv_min
    } else {
        f64::INFINITY
    };
    if !(cond <= condition_cap) {
        return Err(Error::IllConditioned {
            cond,
            cap: condition_cap,
        });
    }
    block
        .try_inverse()
        .ok_or(Error::IllConditioned {
            cond,
            cap: condition_cap,
        })
}

/// Eq.-style mitigation: (T''_3x3)^{-1} applied to the raw triple.
pub fn mitigate(
    t_proxy: &Lptm,
    raw: &ExpectationTriple,
    condition_cap: f64,
) -> Result<ExpectationTriple> {
    let inv = invert_block(t_proxy, condition_cap)?;
    let v = inv * raw.as_vector();
    let out = ExpectationTriple::from_vector(&v);
    if !out.is_finite() {
        return Err(Error::Numerical("non-finite mitigated triple".into()));
    }
    Ok(out)
}

/// Full experiment output. Post-selection weights are pooled over the
/// ensemble and reported per probe; they must land in (0, 1].
#[derive(Debug, Clone)]
pub struct MitigationOutcome {
    pub raw: ExpectationTriple,
    /// T'': proxy transfer matrix read out of the superposition runs.
    pub proxy_lptm: Lptm,
    pub mitigated: ExpectationTriple,
    /// Present when the config carries an affine map.
    pub mitigated_mapped: Option<ExpectationTriple>,
    pub exact: ExpectationTriple,
    pub code_weights: [f64; 4],
    pub proxy_weights: [f64; 4],
}

struct SampleBlocks {
    code: [Matrix2<C64>; 4],
    code_w: [f64; 4],
    proxy: [ProbeOutcome; 4],
}

fn sample_blocks(cfg: &MitigationConfig, evolved: &[EvolvedProbe]) -> SampleBlocks {
    let mut code = [Matrix2::zeros(); 4];
    let mut code_w = [0.0; 4];
    let mut proxy = [ProbeOutcome {
        block: Matrix2::zeros(),
        weight: 0.0,
    }; 4];
    for (k, e) in evolved.iter().enumerate() {
        let (cb, pb) = match e {
            EvolvedProbe::Pure(psi) => (
                cfg.code.block_from_state(psi),
                cfg.proxy.block_from_state(psi),
            ),
            EvolvedProbe::Mixed(rho) => (cfg.code.block(rho), cfg.proxy.block(rho)),
        };
        code[k] = cb;
        code_w[k] = (cb[(0, 0)] + cb[(1, 1)]).re;
        proxy[k] = ProbeOutcome {
            block: pb,
            weight: (pb[(0, 0)] + pb[(1, 1)]).re,
        };
    }
    SampleBlocks {
        code,
        code_w,
        proxy,
    }
}

fn raw_triple_from_blocks(
    code: &[Matrix2<C64>; 4],
    code_w: &[f64; 4],
    floor: f64,
) -> Result<ExpectationTriple> {
    let mut acc = Vector3::zeros();
    for (blk, &w) in code.iter().zip(code_w.iter()) {
        if w <= floor {
            return Err(Error::PostSelectionUnderflow { weight: w, floor });
        }
        acc += ExpectationTriple::from_block(blk)?.as_vector();
    }
    acc /= 4.0;
    Ok(ExpectationTriple::from_vector(&acc))
}

/// Run the four superposition probes over the disorder ensemble and
/// mitigate. The proxy LPTM is ensemble-pooled or per-sample per the
/// config.
pub fn run_mitigation_experiment(cfg: &MitigationConfig) -> Result<MitigationOutcome> {
    cfg.validate()?;
    let inputs: Vec<Array1<C64>> = (0..4)
        .map(|k| prepare_superposition(cfg, k))
        .collect::<Result<_>>()?;
    let basis = *cfg.code.basis();
    let per_sample: Vec<SampleBlocks> = ensemble_evolve_probes(
        &basis,
        &cfg.ensemble,
        &cfg.rates,
        &cfg.evolution,
        &inputs,
        |_, evolved| Ok(sample_blocks(cfg, evolved)),
    )?;
    let eff = per_sample.len() as f64;
    let exact = exact_triple(cfg.target[0], cfg.target[1]);
    let strategy = DetectionStrategy::CodeProjector;

    let mut pooled_code = [Matrix2::zeros(); 4];
    let mut pooled_code_w = [0.0; 4];
    let mut pooled_proxy = [ProbeOutcome {
        block: Matrix2::zeros(),
        weight: 0.0,
    }; 4];
    for s in &per_sample {
        for k in 0..4 {
            pooled_code[k] += s.code[k];
            pooled_code_w[k] += s.code_w[k];
            pooled_proxy[k].block += s.proxy[k].block;
            pooled_proxy[k].weight += s.proxy[k].weight;
        }
    }
    for k in 0..4 {
        pooled_code[k] /= C64::new(eff, 0.0);
        pooled_code_w[k] /= eff;
        pooled_proxy[k].block /= C64::new(eff, 0.0);
        pooled_proxy[k].weight /= eff;
    }
    for k in 0..4 {
        let tol = 1e-9;
        if !(pooled_code_w[k] > 0.0 && pooled_code_w[k] <= 1.0 + tol)
            || !(pooled_proxy[k].weight > 0.0 && pooled_proxy[k].weight <= 1.0 + tol)
        {
            return Err(Error::Unphysical {
                reason: format!(
                    "post-selection weight outside (0, 1]: code {} proxy {}",
                    pooled_code_w[k], pooled_proxy[k].weight
                ),
            });
        }
    }

    let mut t_pooled = lptm_from_outcomes(&pooled_proxy, &strategy, cfg.floor)?;
    t_pooled.metadata.code = Some(cfg.proxy.name().to_string());
    t_pooled.metadata.seed = Some(cfg.ensemble.master_seed);
    t_pooled.metadata.sigma = Some(cfg.ensemble.sigma);
    t_pooled.metadata.gamma = cfg.rates.first().copied();
    t_pooled.metadata.t = Some(cfg.evolution.t_final);

    let (raw, mitigated, mitigated_mapped, proxy_lptm) = match cfg.pooling {
        Pooling::Ensemble => {
            let raw = raw_triple_from_blocks(&pooled_code, &pooled_code_w, cfg.floor)?;
            let mit = mitigate(&t_pooled, &raw, cfg.condition_cap)?;
            let mapped = match &cfg.map {
                Some(map) => Some(mitigate(
                    &apply_affine(map, &t_pooled),
                    &raw,
                    cfg.condition_cap,
                )?),
                None => None,
            };
            (raw, mit, mapped, t_pooled)
        }
        Pooling::PerSample => {
            let mut raw_acc = Vector3::zeros();
            let mut mit_acc = Vector3::zeros();
            let mut mapped_acc = Vector3::zeros();
            for s in &per_sample {
                let t_j = lptm_from_outcomes(&s.proxy, &strategy, cfg.floor)?;
                let raw_j = raw_triple_from_blocks(&s.code, &s.code_w, cfg.floor)?;
                raw_acc += raw_j.as_vector();
                mit_acc += mitigate(&t_j, &raw_j, cfg.condition_cap)?.as_vector();
                if let Some(map) = &cfg.map {
                    mapped_acc += mitigate(&apply_affine(map, &t_j), &raw_j, cfg.condition_cap)?
                        .as_vector();
                }
            }
            raw_acc /= eff;
            mit_acc /= eff;
            mapped_acc /= eff;
            let mapped = cfg
                .map
                .as_ref()
                .map(|_| ExpectationTriple::from_vector(&mapped_acc));
            (
                ExpectationTriple::from_vector(&raw_acc),
                ExpectationTriple::from_vector(&mit_acc),
                mapped,
                t_pooled,
            )
        }
    };
    Ok(MitigationOutcome {
        raw,
        proxy_lptm,
        mitigated,
        mitigated_mapped,
        exact,
        code_weights: pooled_code_w,
        proxy_weights: [
            pooled_proxy[0].weight,
            pooled_proxy[1].weight,
            pooled_proxy[2].weight,
            pooled_proxy[3].weight,
        ],
    })
}

/// Trace distance between the proxy transfer matrix seen inside the
/// superposition runs (T'') and the one from standalone proxy-only
/// evolution of the same ensemble (T'). Small values justify reading
/// proxy noise off the superposition.
pub fn proxy_consistency(cfg: &MitigationConfig) -> Result<f64> {
    Ok(proxy_consistency_report(cfg)?.pooled)
}

/// Per-disorder-sample version of [`proxy_consistency`]: one distance
/// per sample, pairing the in-superposition and standalone proxy
/// transfer matrices drawn from the same disorder realization. Feeds
/// mean and standard-error estimates.
pub fn proxy_consistency_samples(cfg: &MitigationConfig) -> Result<Vec<f64>> {
    Ok(proxy_consistency_report(cfg)?.per_sample)
}

/// Pooled and per-sample T'/T'' trace distances from one pass over the
/// ensemble.
pub struct ConsistencyReport {
    pub pooled: f64,
    pub per_sample: Vec<f64>,
}

pub fn proxy_consistency_report(cfg: &MitigationConfig) -> Result<ConsistencyReport> {
    cfg.validate()?;
    let inputs: Vec<Array1<C64>> = (0..4)
        .map(|k| prepare_superposition(cfg, k))
        .collect::<Result<_>>()?;
    let basis = *cfg.code.basis();
    let strategy = DetectionStrategy::CodeProjector;
    let in_super: Vec<[ProbeOutcome; 4]> = ensemble_evolve_probes(
        &basis,
        &cfg.ensemble,
        &cfg.rates,
        &cfg.evolution,
        &inputs,
        |_, evolved| Ok(sample_blocks(cfg, evolved).proxy),
    )?;
    let standalone = crate::tomography::ensemble_lptms(
        &cfg.proxy,
        &strategy,
        &cfg.ensemble,
        &cfg.rates,
        &cfg.evolution,
        cfg.floor,
    )?;

    let eff = in_super.len() as f64;
    let mut pooled = [ProbeOutcome {
        block: Matrix2::zeros(),
        weight: 0.0,
    }; 4];
    for ocs in &in_super {
        for k in 0..4 {
            pooled[k].block += ocs[k].block;
            pooled[k].weight += ocs[k].weight;
        }
    }
    for oc in pooled.iter_mut() {
        oc.block /= C64::new(eff, 0.0);
        oc.weight /= eff;
    }
    let t_pooled = lptm_from_outcomes(&pooled, &strategy, cfg.floor)?;

    let per_sample = in_super
        .iter()
        .zip(standalone.per_sample.iter())
        .map(|(ocs, t_ref)| {
            let t_j = lptm_from_outcomes(ocs, &strategy, cfg.floor)?;
            Ok(crate::tomography::lptm_distance(&t_j.rows, &t_ref.rows))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ConsistencyReport {
        pooled: crate::tomography::lptm_distance(&t_pooled.rows, &standalone.pooled.rows),
        per_sample,
    })
}
