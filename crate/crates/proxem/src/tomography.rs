//! Logical Pauli transfer matrix (LPTM) tomography.
//!
//! Probes are the four logical states |0>, |1>, |+>, |+i>. Writing
//! rho_j = 1/2 sum_i c_ij p_i with p = (I, X, Y, Z) gives the constant
//! matrix [`TOMOGRAPHY_C`]; inverting it yields the recombination
//!
//! ```text
//! L(I) = r0 + r1      L(X) = 2 r+ - r0 - r1
//! L(Z) = r0 - r1      L(Y) = 2 r+i - r0 - r1
//! ```
//!
//! where r_k is the (detected, renormalized) channel output for probe
//! k. The LPTM is T_ij = 1/2 Re tr[p_i L(p_j)] restricted to the code
//! space; its imaginary residue is tracked and must stay below
//! [`IMAG_RESIDUE_LIMIT`].
//!
//! Detection post-selects each probe output separately (P rho P / tr)
//! before recombination. Because every projector here leaves the code
//! words invariant, the code block of P rho P equals the code block of
//! rho, so outcomes are extracted without materializing the projected
//! matrix: only the kept weight needs a scan over the diagonal.

use nalgebra::{Matrix2, Matrix4};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::channel::QuantumChannel;
use crate::codes::CodeSpace;
use crate::dynamics::{evolve, evolve_state, hamiltonian, DisorderEnsemble, EvolutionConfig};
use crate::fock::FockBasis;
use crate::linalg::outer;
use crate::{C64, Error, Result};

pub const PAULI_ORDER: [&str; 4] = ["I", "X", "Y", "Z"];

/// Probe decomposition rho_j = 1/2 sum_i c_ij p_i; rows are Paulis
/// (I, X, Y, Z), columns are probes (|0>, |1>, |+>, |+i>).
pub const TOMOGRAPHY_C: [[f64; 4]; 4] = [
    [1.0, 1.0, 1.0, 1.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
    [1.0, -1.0, 0.0, 0.0],
];

/// Recombination weights M = 2 (c^T)^{-1}: row i gives L(p_i) as a
/// combination of the four probe outputs.
pub const PAULI_COMBINATIONS: [[f64; 4]; 4] = [
    [1.0, 1.0, 0.0, 0.0],
    [-1.0, -1.0, 2.0, 0.0],
    [-1.0, -1.0, 0.0, 2.0],
    [1.0, -1.0, 0.0, 0.0],
];

pub const DEFAULT_POST_SELECTION_FLOOR: f64 = 1e-12;
pub const IMAG_RESIDUE_LIMIT: f64 = 1e-8;

/// Error-detection strategy applied to each probe output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectionStrategy {
    /// No detection: raw transfer matrix.
    None,
    /// Keep the total-occupation sector of the codewords.
    TotalNumber,
    /// Keep states matching the codewords' per-mode occupations modulo
    /// `modulus`.
    NumberModPerMode { modulus: usize },
    /// Keep states matching the codewords' total occupation modulo
    /// `modulus`.
    NumberModTotal { modulus: usize },
    /// Per-mode parity check (number-mod with modulus 2).
    ModeParity,
    /// Project onto the code space itself (full error detection).
    CodeProjector,
}

/// Coarse label attached to outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectionLabel {
    Raw,
    Number,
    Code,
}

impl DetectionStrategy {
    pub fn label(&self) -> DetectionLabel {
        match self {
            DetectionStrategy::None => DetectionLabel::Raw,
            DetectionStrategy::CodeProjector => DetectionLabel::Code,
            _ => DetectionLabel::Number,
        }
    }
}

/// Prepared projector form. Diagonal strategies reduce to a keep-mask;
/// the code projector is rank two and handled via logical amplitudes.
#[derive(Debug, Clone)]
pub enum DetectionProjector {
    Identity,
    Diagonal(Vec<bool>),
    Code,
}

/// Build the projector for `strategy`, validating that it keeps the
/// codewords invariant (reference sector/remainders are read off the
/// codeword support and must be consistent across both codewords).
pub fn detection_projector(
    code: &CodeSpace,
    strategy: &DetectionStrategy,
) -> Result<DetectionProjector> {
    let basis = code.basis();
    let support = code.support_indices();
    match strategy {
        DetectionStrategy::None => Ok(DetectionProjector::Identity),
        DetectionStrategy::CodeProjector => Ok(DetectionProjector::Code),
        DetectionStrategy::TotalNumber => {
            let n = basis.total_occupation(support[0]);
            if support.iter().any(|&k| basis.total_occupation(k) != n) {
                return Err(Error::BadDetection(format!(
                    "{}: codewords span several total-occupation sectors",
                    code.name()
                )));
            }
            Ok(DetectionProjector::Diagonal(basis.total_number_mask(n)))
        }
        DetectionStrategy::NumberModPerMode { .. } | DetectionStrategy::ModeParity => {
            let modulus = match strategy {
                DetectionStrategy::NumberModPerMode { modulus } => *modulus,
                _ => 2,
            };
            let rems: Vec<usize> = (0..basis.modes())
                .map(|m| basis.occupation_of(support[0], m) % modulus)
                .collect();
            for &k in &support {
                for (m, &r) in rems.iter().enumerate() {
                    if basis.occupation_of(k, m) % modulus != r {
                        return Err(Error::BadDetection(format!(
                            "{}: codeword occupations disagree modulo {modulus}",
                            code.name()
                        )));
                    }
                }
            }
            Ok(DetectionProjector::Diagonal(
                basis.mode_remainder_mask(modulus, &rems)?,
            ))
        }
        DetectionStrategy::NumberModTotal { modulus } => {
            let rem = basis.total_occupation(support[0]) % modulus;
            if support
                .iter()
                .any(|&k| basis.total_occupation(k) % modulus != rem)
            {
                return Err(Error::BadDetection(format!(
                    "{}: codeword totals disagree modulo {modulus}",
                    code.name()
                )));
            }
            Ok(DetectionProjector::Diagonal(
                basis.total_remainder_mask(*modulus, rem)?,
            ))
        }
    }
}

/// Unnormalized detected code block plus the kept probability.
#[derive(Debug, Clone, Copy)]
pub struct ProbeOutcome {
    pub block: Matrix2<C64>,
    pub weight: f64,
}

/// Outcome from a density-matrix channel output.
pub fn outcome_from_dm(
    rho: &Array2<C64>,
    code: &CodeSpace,
    proj: &DetectionProjector,
) -> ProbeOutcome {
    let block = code.block(rho);
    let weight = match proj {
        DetectionProjector::Identity => 1.0,
        DetectionProjector::Diagonal(mask) => mask
            .iter()
            .enumerate()
            .filter(|(_, &keep)| keep)
            .map(|(k, _)| rho[(k, k)].re)
            .sum(),
        DetectionProjector::Code => (block[(0, 0)] + block[(1, 1)]).re,
    };
    ProbeOutcome { block, weight }
}

/// Outcome from a pure-state channel output.
pub fn outcome_from_state(
    psi: &Array1<C64>,
    code: &CodeSpace,
    proj: &DetectionProjector,
) -> ProbeOutcome {
    let block = code.block_from_state(psi);
    let weight = match proj {
        DetectionProjector::Identity => 1.0,
        DetectionProjector::Diagonal(mask) => mask
            .iter()
            .enumerate()
            .filter(|(_, &keep)| keep)
            .map(|(k, _)| psi[k].norm_sqr())
            .sum(),
        DetectionProjector::Code => (block[(0, 0)] + block[(1, 1)]).re,
    };
    ProbeOutcome { block, weight }
}

/// Materialized post-selection P rho P / tr for callers that need the
/// full state; the LPTM pipeline itself only uses [`ProbeOutcome`]s.
pub fn post_select(
    rho: &Array2<C64>,
    code: &CodeSpace,
    proj: &DetectionProjector,
    floor: f64,
) -> Result<(Array2<C64>, f64)> {
    let d = rho.dim().0;
    let (projected, weight) = match proj {
        DetectionProjector::Identity => (rho.clone(), 1.0),
        DetectionProjector::Diagonal(mask) => {
            let mut out = rho.clone();
            for i in 0..d {
                for j in 0..d {
                    if !(mask[i] && mask[j]) {
                        out[(i, j)] = C64::new(0.0, 0.0);
                    }
                }
            }
            let w: f64 = (0..d).filter(|&k| mask[k]).map(|k| rho[(k, k)].re).sum();
            (out, w)
        }
        DetectionProjector::Code => {
            let p = code.projector();
            let out = p.dot(rho).dot(&p);
            let w = crate::linalg::trace(&out).re;
            (out, w)
        }
    };
    if weight <= floor {
        return Err(Error::PostSelectionUnderflow { weight, floor });
    }
    Ok((projected.mapv(|z| z / weight), weight))
}

/// Metadata carried on an LPTM for provenance in serialized output.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct LptmMetadata {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    /// Set when the matrix came out of an affine proxy-to-code map
    /// rather than direct tomography.
    #[serde(default, skip_serializing_if = "is_false")]
    pub mapped: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// Logical Pauli transfer matrix, row-major over (I, X, Y, Z).
#[derive(Debug, Clone, PartialEq)]
pub struct Lptm {
    pub rows: [[f64; 4]; 4],
    pub detection: DetectionLabel,
    pub imag_residue: f64,
    pub metadata: LptmMetadata,
}

impl Lptm {
    pub fn from_rows(rows: [[f64; 4]; 4], detection: DetectionLabel) -> Self {
        Lptm {
            rows,
            detection,
            imag_residue: 0.0,
            metadata: LptmMetadata::default(),
        }
    }

    pub fn identity(detection: DetectionLabel) -> Self {
        let mut rows = [[0.0; 4]; 4];
        for (i, row) in rows.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Lptm {
            rows,
            detection,
            imag_residue: 0.0,
            metadata: LptmMetadata::default(),
        }
    }

    pub fn as_matrix(&self) -> Matrix4<f64> {
        Matrix4::from_fn(|i, j| self.rows[i][j])
    }

    /// The 3x3 block over (X, Y, Z).
    pub fn block3(&self) -> nalgebra::Matrix3<f64> {
        nalgebra::Matrix3::from_fn(|i, j| self.rows[i + 1][j + 1])
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "order": PAULI_ORDER,
            "detection": self.detection,
            "rows": self.rows,
            "imag_residue": self.imag_residue,
            "metadata": self.metadata,
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let order: [String; 4] = serde_json::from_value(v["order"].clone())
            .map_err(|e| Error::Numerical(format!("bad LPTM order field: {e}")))?;
        if order
            .iter()
            .zip(PAULI_ORDER.iter())
            .any(|(a, b)| a != b)
        {
            return Err(Error::Numerical(format!(
                "unsupported Pauli order {order:?}"
            )));
        }
        let rows: [[f64; 4]; 4] = serde_json::from_value(v["rows"].clone())
            .map_err(|e| Error::Numerical(format!("bad LPTM rows: {e}")))?;
        let detection: DetectionLabel = serde_json::from_value(v["detection"].clone())
            .map_err(|e| Error::Numerical(format!("bad LPTM detection: {e}")))?;
        let metadata: LptmMetadata = match v.get("metadata") {
            Some(m) => serde_json::from_value(m.clone())
                .map_err(|e| Error::Numerical(format!("bad LPTM metadata: {e}")))?,
            None => LptmMetadata::default(),
        };
        let imag_residue = v
            .get("imag_residue")
            .and_then(|x| x.as_f64())
            .unwrap_or(0.0);
        Ok(Lptm {
            rows,
            detection,
            imag_residue,
            metadata,
        })
    }
}

fn pauli2(i: usize) -> Matrix2<C64> {
    let z = C64::new(0.0, 0.0);
    let o = C64::new(1.0, 0.0);
    let im = C64::new(0.0, 1.0);
    match i {
        0 => Matrix2::new(o, z, z, o),
        1 => Matrix2::new(z, o, o, z),
        2 => Matrix2::new(z, -im, im, z),
        3 => Matrix2::new(o, z, z, -o),
        _ => unreachable!(),
    }
}

/// Assemble an LPTM from the four probe outcomes. With detection each
/// outcome is renormalized by its kept weight first; without detection
/// the blocks enter raw.
pub fn lptm_from_outcomes(
    outcomes: &[ProbeOutcome; 4],
    strategy: &DetectionStrategy,
    floor: f64,
) -> Result<Lptm> {
    let renormalize = !matches!(strategy, DetectionStrategy::None);
    let mut blocks = [Matrix2::zeros(); 4];
    for (k, oc) in outcomes.iter().enumerate() {
        blocks[k] = if renormalize {
            if oc.weight <= floor {
                return Err(Error::PostSelectionUnderflow {
                    weight: oc.weight,
                    floor,
                });
            }
            oc.block / C64::new(oc.weight, 0.0)
        } else {
            oc.block
        };
    }
    let mut images = [Matrix2::zeros(); 4];
    for (i, img) in images.iter_mut().enumerate() {
        let mut acc: Matrix2<C64> = Matrix2::zeros();
        for (k, blk) in blocks.iter().enumerate() {
            let w = PAULI_COMBINATIONS[i][k];
            if w != 0.0 {
                acc += blk * C64::new(w, 0.0);
            }
        }
        *img = acc;
    }
    let mut rows = [[0.0; 4]; 4];
    let mut residue = 0.0f64;
    for i in 0..4 {
        let p = pauli2(i);
        for (j, img) in images.iter().enumerate() {
            let tr = (p * img).trace() * 0.5;
            rows[i][j] = tr.re;
            residue = residue.max(tr.im.abs());
        }
    }
    if residue > IMAG_RESIDUE_LIMIT {
        return Err(Error::ImaginaryResidue {
            residue,
            limit: IMAG_RESIDUE_LIMIT,
        });
    }
    Ok(Lptm {
        rows,
        detection: strategy.label(),
        imag_residue: residue,
        metadata: LptmMetadata::default(),
    })
}

/// Detected, renormalized channel outputs recombined into the four
/// Pauli images L(I), L(X), L(Y), L(Z) as full-space operators.
pub fn pauli_images<Ch: QuantumChannel>(
    channel: &Ch,
    code: &CodeSpace,
    strategy: &DetectionStrategy,
    floor: f64,
) -> Result<[Array2<C64>; 4]> {
    let proj = detection_projector(code, strategy)?;
    let renormalize = !matches!(strategy, DetectionStrategy::None);
    let d = code.dim();
    let mut outputs = Vec::with_capacity(4);
    for probe in code.pauli_states().iter() {
        let out = channel.apply(&outer(probe))?;
        let out = if renormalize {
            post_select(&out, code, &proj, floor)?.0
        } else {
            out
        };
        outputs.push(out);
    }
    let mut images: [Array2<C64>; 4] = [
        Array2::zeros((d, d)),
        Array2::zeros((d, d)),
        Array2::zeros((d, d)),
        Array2::zeros((d, d)),
    ];
    for (i, img) in images.iter_mut().enumerate() {
        for (k, out) in outputs.iter().enumerate() {
            let w = PAULI_COMBINATIONS[i][k];
            if w != 0.0 {
                *img = &*img + &out.mapv(|z| z * w);
            }
        }
    }
    Ok(images)
}

/// LPTM of a channel under a detection strategy.
pub fn lptm_channel<Ch: QuantumChannel>(
    channel: &Ch,
    code: &CodeSpace,
    strategy: &DetectionStrategy,
    floor: f64,
) -> Result<Lptm> {
    let proj = detection_projector(code, strategy)?;
    let states = code.pauli_states();
    let mut outcomes = [ProbeOutcome {
        block: Matrix2::zeros(),
        weight: 0.0,
    }; 4];
    for (k, probe) in states.iter().enumerate() {
        let out = channel.apply(&outer(probe))?;
        outcomes[k] = outcome_from_dm(&out, code, &proj);
    }
    let mut t = lptm_from_outcomes(&outcomes, strategy, floor)?;
    t.metadata.code = Some(code.name().to_string());
    Ok(t)
}

/// Evolved probe states handed to per-sample extractors: pure when the
/// sample evolution is closed, mixed otherwise.
pub enum EvolvedProbe {
    Pure(Array1<C64>),
    Mixed(Array2<C64>),
}

impl EvolvedProbe {
    pub fn outcome(&self, code: &CodeSpace, proj: &DetectionProjector) -> ProbeOutcome {
        match self {
            EvolvedProbe::Pure(psi) => outcome_from_state(psi, code, proj),
            EvolvedProbe::Mixed(rho) => outcome_from_dm(rho, code, proj),
        }
    }
}

/// Evolve a fixed set of input states under every disorder sample and
/// reduce each sample with `extract`. Closed dynamics (all rates zero)
/// propagates pure states; otherwise densities. Results are in sample
/// order.
pub fn ensemble_evolve_probes<T, F>(
    basis: &FockBasis,
    ens: &DisorderEnsemble,
    rates: &[f64],
    evo: &EvolutionConfig,
    inputs: &[Array1<C64>],
    extract: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &[EvolvedProbe]) -> Result<T> + Sync,
{
    let pure = rates.iter().all(|&g| g == 0.0);
    ens.map_samples(|j, params| {
        let h = hamiltonian(basis, params)?;
        let mut evolved = Vec::with_capacity(inputs.len());
        for input in inputs {
            if pure {
                evolved.push(EvolvedProbe::Pure(evolve_state(basis, &h, input, evo)?));
            } else {
                evolved.push(EvolvedProbe::Mixed(evolve(
                    basis,
                    &h,
                    rates,
                    &outer(input),
                    evo,
                )?));
            }
        }
        extract(j, &evolved)
    })
}

/// Per-sample and pooled LPTMs of a disorder ensemble.
pub struct EnsembleLptm {
    /// Pooled post-selection: probe blocks and weights are ensemble
    /// averaged first, then renormalized and recombined.
    pub pooled: Lptm,
    pub per_sample: Vec<Lptm>,
}

pub fn ensemble_lptms(
    code: &CodeSpace,
    strategy: &DetectionStrategy,
    ens: &DisorderEnsemble,
    rates: &[f64],
    evo: &EvolutionConfig,
    floor: f64,
) -> Result<EnsembleLptm> {
    let proj = detection_projector(code, strategy)?;
    let basis = *code.basis();
    let states = code.pauli_states();
    let raw: Vec<[ProbeOutcome; 4]> =
        ensemble_evolve_probes(&basis, ens, rates, evo, &states, |_, evolved| {
            let mut ocs = [ProbeOutcome {
                block: Matrix2::zeros(),
                weight: 0.0,
            }; 4];
            for (k, e) in evolved.iter().enumerate() {
                ocs[k] = e.outcome(code, &proj);
            }
            Ok(ocs)
        })?;
    let eff = raw.len() as f64;
    let mut pooled = [ProbeOutcome {
        block: Matrix2::zeros(),
        weight: 0.0,
    }; 4];
    for ocs in &raw {
        for k in 0..4 {
            pooled[k].block += ocs[k].block;
            pooled[k].weight += ocs[k].weight;
        }
    }
    for oc in pooled.iter_mut() {
        oc.block /= C64::new(eff, 0.0);
        oc.weight /= eff;
    }
    let mut per_sample = Vec::with_capacity(raw.len());
    for ocs in &raw {
        let mut t = lptm_from_outcomes(ocs, strategy, floor)?;
        t.metadata.code = Some(code.name().to_string());
        per_sample.push(t);
    }
    let mut pooled_t = lptm_from_outcomes(&pooled, strategy, floor)?;
    pooled_t.metadata = LptmMetadata {
        code: Some(code.name().to_string()),
        seed: Some(ens.master_seed),
        sigma: Some(ens.sigma),
        gamma: rates.first().copied(),
        t: Some(evo.t_final),
        mapped: false,
    };
    Ok(EnsembleLptm {
        pooled: pooled_t,
        per_sample,
    })
}

/// Process fidelity F = 1/4 tr[T T_target^T]; the target defaults to
/// the identity channel.
pub fn process_fidelity(t: &Lptm, target: Option<&[[f64; 4]; 4]>) -> f64 {
    let mut acc = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            let tgt = match target {
                Some(m) => m[i][j],
                None => {
                    if i == j {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            acc += t.rows[i][j] * tgt;
        }
    }
    acc / 4.0
}

/// Trace distance D = 1/2 ||A - B||_F between transfer matrices.
pub fn lptm_distance(a: &[[f64; 4]; 4], b: &[[f64; 4]; 4]) -> f64 {
    let mut acc = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            let d = a[i][j] - b[i][j];
            acc += d * d;
        }
    }
    0.5 * acc.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{FnChannel, IdentityChannel, LindbladChannel};
    use crate::codes::standard_code;
    use crate::dynamics::HamiltonianParams;
    use approx::assert_abs_diff_eq;

    #[test]
    fn combination_matrix_is_twice_inverse_transposed_c() {
        let c_t = nalgebra::Matrix4::from_fn(|i, j| TOMOGRAPHY_C[j][i]);
        let m = c_t.try_inverse().expect("c is invertible") * 2.0;
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!(m[(i, j)], PAULI_COMBINATIONS[i][j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn identity_channel_gives_identity_lptm_under_every_detection() {
        let basis = FockBasis::new(2, 4).unwrap();
        let code = standard_code("cly-4222", &basis).unwrap();
        let ch = IdentityChannel { dim: basis.dim() };
        for strategy in [
            DetectionStrategy::None,
            DetectionStrategy::TotalNumber,
            DetectionStrategy::NumberModPerMode { modulus: 2 },
            DetectionStrategy::NumberModTotal { modulus: 4 },
            DetectionStrategy::ModeParity,
            DetectionStrategy::CodeProjector,
        ] {
            let t = lptm_channel(&ch, &code, &strategy, DEFAULT_POST_SELECTION_FLOOR).unwrap();
            for i in 0..4 {
                for j in 0..4 {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(t.rows[i][j], expect, epsilon = 1e-12);
                }
            }
            assert!(t.imag_residue < 1e-14);
            assert_abs_diff_eq!(process_fidelity(&t, None), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn first_row_of_a_detected_lptm_is_a_point_channel_row() {
        // With renormalized outputs, L(I) has unit trace and the first
        // row must be (1, 0, 0, 0) up to numerics.
        let basis = FockBasis::new(2, 1).unwrap();
        let code = standard_code("dual-rail", &basis).unwrap();
        let p = HamiltonianParams {
            delta: vec![0.3, -0.1],
            hopping: 0.2,
            interaction: 0.0,
        };
        let h = crate::dynamics::hamiltonian(&basis, &p).unwrap();
        let ch = LindbladChannel {
            basis,
            h,
            rates: vec![0.05, 0.05],
            cfg: EvolutionConfig::default(),
        };
        let t = lptm_channel(
            &ch,
            &code,
            &DetectionStrategy::CodeProjector,
            DEFAULT_POST_SELECTION_FLOOR,
        )
        .unwrap();
        assert_abs_diff_eq!(t.rows[0][0], 1.0, epsilon = 1e-9);
        for j in 1..4 {
            assert_abs_diff_eq!(t.rows[0][j], 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn detuning_difference_rotates_the_logical_z_axis() {
        // Dual rail with detunings (d0, d1): logical |0> = |0,1> picks
        // up phase d1 t, |1> = |1,0> picks up d0 t, so the block is a
        // Z rotation by theta = (d1 - d0) t.
        let basis = FockBasis::new(2, 1).unwrap();
        let code = standard_code("dual-rail", &basis).unwrap();
        let (d0, d1) = (0.35, -0.15);
        let p = HamiltonianParams {
            delta: vec![d0, d1],
            hopping: 0.0,
            interaction: 0.0,
        };
        let h = crate::dynamics::hamiltonian(&basis, &p).unwrap();
        let ch = LindbladChannel {
            basis,
            h,
            rates: vec![0.0, 0.0],
            cfg: EvolutionConfig::default(),
        };
        let t = lptm_channel(&ch, &code, &DetectionStrategy::None, 1e-12).unwrap();
        let theta = (d1 - d0) * 1.0;
        assert_abs_diff_eq!(t.rows[1][1], theta.cos(), epsilon = 1e-9);
        assert_abs_diff_eq!(t.rows[1][2], -theta.sin(), epsilon = 1e-9);
        assert_abs_diff_eq!(t.rows[2][1], theta.sin(), epsilon = 1e-9);
        assert_abs_diff_eq!(t.rows[3][3], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn dual_rail_raw_loss_scales_every_pauli_by_the_survival_factor() {
        let basis = FockBasis::new(2, 1).unwrap();
        let code = standard_code("dual-rail", &basis).unwrap();
        let gamma = 0.02;
        let ch = LindbladChannel {
            basis,
            h: Array2::zeros((4, 4)),
            rates: vec![gamma, gamma],
            cfg: EvolutionConfig::default(),
        };
        let t = lptm_channel(&ch, &code, &DetectionStrategy::None, 1e-12).unwrap();
        let s = (-gamma as f64).exp();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { s } else { 0.0 };
                assert_abs_diff_eq!(t.rows[i][j], expect, epsilon = 1e-9);
            }
        }
        assert_abs_diff_eq!(process_fidelity(&t, None), s, epsilon = 1e-9);
        // 0.980199 to the printed precision.
        assert_abs_diff_eq!(process_fidelity(&t, None), 0.980199, epsilon = 1e-6);

        // Code detection (equivalently total-number here: the N = 1
        // sector is exactly the code space) restores the identity.
        let t_code = lptm_channel(&ch, &code, &DetectionStrategy::CodeProjector, 1e-12).unwrap();
        let t_num = lptm_channel(&ch, &code, &DetectionStrategy::TotalNumber, 1e-12).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(t_code.rows[i][j], expect, epsilon = 1e-9);
                assert_abs_diff_eq!(t_code.rows[i][j], t_num.rows[i][j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn post_selection_floor_raises_an_error() {
        let basis = FockBasis::new(2, 1).unwrap();
        let code = standard_code("dual-rail", &basis).unwrap();
        let dim = basis.dim();
        // Channel dumping everything into |0,0>, outside the code.
        let ch = FnChannel {
            dim,
            f: move |op: &Array2<C64>| {
                let mut out = Array2::<C64>::zeros((dim, dim));
                out[(0, 0)] = crate::linalg::trace(op);
                Ok(out)
            },
        };
        match lptm_channel(&ch, &code, &DetectionStrategy::CodeProjector, 1e-12) {
            Err(Error::PostSelectionUnderflow { .. }) => {}
            other => panic!("expected underflow, got {other:?}"),
        }
    }

    #[test]
    fn imaginary_residue_is_detected() {
        let basis = FockBasis::new(2, 1).unwrap();
        let code = standard_code("dual-rail", &basis).unwrap();
        let dim = basis.dim();
        let k01 = basis.index_of(&[0, 1]).unwrap();
        let k10 = basis.index_of(&[1, 0]).unwrap();
        // Non-Hermiticity-preserving map: adds a fixed non-Hermitian
        // defect scaled by the input trace.
        let ch = FnChannel {
            dim,
            f: move |op: &Array2<C64>| {
                let mut out = op.clone();
                out[(k01, k10)] += C64::new(0.0, 1e-3) * crate::linalg::trace(op);
                Ok(out)
            },
        };
        match lptm_channel(&ch, &code, &DetectionStrategy::None, 1e-12) {
            Err(Error::ImaginaryResidue { .. }) => {}
            other => panic!("expected residue error, got {other:?}"),
        }
    }

    #[test]
    fn pooled_ensemble_lptm_matches_the_ensemble_channel() {
        // Post-selecting the ensemble-averaged state equals pooling
        // unnormalized blocks and weights; both routes must agree.
        let basis = FockBasis::new(2, 1).unwrap();
        let code = standard_code("dual-rail", &basis).unwrap();
        let ens = DisorderEnsemble {
            base: HamiltonianParams::zero(2),
            fluctuating: Default::default(),
            distribution: crate::dynamics::DisorderDistribution::TwoPoint,
            sigma: 0.05,
            samples: 16,
            master_seed: 3,
        };
        let rates = vec![0.02, 0.02];
        let evo = EvolutionConfig::default();
        for strategy in [
            DetectionStrategy::None,
            DetectionStrategy::TotalNumber,
            DetectionStrategy::CodeProjector,
        ] {
            let fast = ensemble_lptms(&code, &strategy, &ens, &rates, &evo, 1e-12).unwrap();
            let ch = crate::channel::EnsembleLindbladChannel {
                basis,
                ensemble: ens.clone(),
                rates: rates.clone(),
                cfg: evo,
            };
            let slow = lptm_channel(&ch, &code, &strategy, 1e-12).unwrap();
            for i in 0..4 {
                for j in 0..4 {
                    assert_abs_diff_eq!(
                        fast.pooled.rows[i][j],
                        slow.rows[i][j],
                        epsilon = 1e-10
                    );
                }
            }
            assert_eq!(fast.per_sample.len(), 16);
        }
    }

    #[test]
    fn sigma_zero_per_sample_equals_pooled() {
        let basis = FockBasis::new(2, 1).unwrap();
        let code = standard_code("dual-rail", &basis).unwrap();
        let ens = DisorderEnsemble {
            base: HamiltonianParams {
                delta: vec![0.2, -0.2],
                hopping: 0.1,
                interaction: 0.0,
            },
            fluctuating: Default::default(),
            distribution: crate::dynamics::DisorderDistribution::Normal,
            sigma: 0.0,
            samples: 100,
            master_seed: 9,
        };
        let out = ensemble_lptms(
            &code,
            &DetectionStrategy::CodeProjector,
            &ens,
            &[0.0, 0.0],
            &EvolutionConfig::default(),
            1e-12,
        )
        .unwrap();
        assert_eq!(out.per_sample.len(), 1);
        assert_eq!(out.per_sample[0].rows, out.pooled.rows);
    }

    #[test]
    fn lptm_json_roundtrip() {
        let mut t = Lptm::identity(DetectionLabel::Code);
        t.rows[1][2] = -0.25;
        t.metadata.code = Some("dual-rail".into());
        t.metadata.sigma = Some(0.02);
        let v = t.to_json();
        assert_eq!(v["order"][3], "Z");
        let back = Lptm::from_json(&v).unwrap();
        assert_eq!(back.rows, t.rows);
        assert_eq!(back.metadata, t.metadata);
    }

    #[test]
    fn distance_and_fidelity_formulas() {
        let a = Lptm::identity(DetectionLabel::Raw);
        let mut b = Lptm::identity(DetectionLabel::Raw);
        b.rows[1][1] = 0.8;
        b.rows[2][2] = 0.8;
        // D = 1/2 sqrt(0.04 + 0.04)
        assert_abs_diff_eq!(
            lptm_distance(&a.rows, &b.rows),
            0.5 * (0.08f64).sqrt(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(process_fidelity(&b, None), (2.0 + 1.6) / 4.0, epsilon = 1e-15);
    }

    #[test]
    fn incompatible_detection_is_rejected() {
        // P4 = {|6,3>, |3,6>} spans one sector (total 9) but its kets
        // disagree per-mode modulo 2.
        let basis = FockBasis::new(2, 6).unwrap();
        let code = standard_code("P4", &basis).unwrap();
        assert!(detection_projector(&code, &DetectionStrategy::TotalNumber).is_ok());
        assert!(matches!(
            detection_projector(&code, &DetectionStrategy::ModeParity),
            Err(Error::BadDetection(_))
        ));
    }
}
