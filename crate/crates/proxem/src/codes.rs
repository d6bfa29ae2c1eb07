//! Two-level logical encodings embedded in truncated Fock space.
//!
//! A [`CodeSpace`] is an ordered orthonormal pair {|0bar>, |1bar>} of
//! Fock-space vectors. Families:
//!
//! - dual-rail: {|0,1>, |1,0>};
//! - one-mode binomial(S, N):
//!   |0bar/1bar> = 2^{-N/2} sum_{p even/odd} sqrt(C(N+1, p)) |p (S+1)>;
//! - two-mode binomial(S, N): the same coefficients on kets
//!   |p (S+1), N_tot - p (S+1)> with N_tot = (N+1)(S+1), so every
//!   codeword sits in the fixed total-occupation sector N_tot;
//! - named two-ket pairs from the registry (proxy spaces P1..P5 and the
//!   reference code C), where the first listed ket is |0bar>.
//!
//! The named code "cly-4222" is constructed as two-mode binomial(1, 1),
//! so the equality between the two is structural, not approximate.

use nalgebra::Matrix2;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::QuantumChannel;
use crate::fock::FockBasis;
use crate::linalg::outer;
use crate::{C64, Error, Result};

/// Orthonormality tolerance for constructed codewords.
const CODE_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct CodeSpace {
    name: String,
    basis: FockBasis,
    zero: Array1<C64>,
    one: Array1<C64>,
    support0: Vec<(usize, C64)>,
    support1: Vec<(usize, C64)>,
}

impl CodeSpace {
    /// Build from explicit codewords, validating normalization and
    /// orthogonality.
    pub fn from_codewords(
        name: &str,
        basis: &FockBasis,
        zero: Array1<C64>,
        one: Array1<C64>,
    ) -> Result<Self> {
        if zero.len() != basis.dim() || one.len() != basis.dim() {
            return Err(Error::DimensionMismatch {
                expected: basis.dim(),
                found: zero.len().max(one.len()),
            });
        }
        for (label, v) in [("|0bar>", &zero), ("|1bar>", &one)] {
            let norm2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
            if (norm2 - 1.0).abs() > CODE_TOL {
                return Err(Error::BadCode(format!(
                    "{name}: {label} has squared norm {norm2}"
                )));
            }
        }
        let overlap: C64 = zero.iter().zip(one.iter()).map(|(a, b)| a.conj() * b).sum();
        if overlap.norm() > CODE_TOL {
            return Err(Error::BadCode(format!(
                "{name}: codewords overlap by {:.3e}",
                overlap.norm()
            )));
        }
        let support = |v: &Array1<C64>| -> Vec<(usize, C64)> {
            v.iter()
                .enumerate()
                .filter(|(_, z)| z.norm() > 0.0)
                .map(|(k, z)| (k, *z))
                .collect()
        };
        Ok(CodeSpace {
            name: name.to_string(),
            basis: *basis,
            support0: support(&zero),
            support1: support(&one),
            zero,
            one,
        })
    }

    /// Two-ket code: |0bar> and |1bar> are single product states.
    pub fn from_occupations(
        name: &str,
        basis: &FockBasis,
        occ0: &[usize],
        occ1: &[usize],
    ) -> Result<Self> {
        let build = |occ: &[usize]| -> Result<Array1<C64>> {
            let mut v = Array1::<C64>::zeros(basis.dim());
            let k = basis.index_of(occ).map_err(|_| Error::BasisTooSmall {
                code: name.to_string(),
                modes: occ.len(),
                n_max: occ.iter().copied().max().unwrap_or(0),
            })?;
            v[k] = C64::new(1.0, 0.0);
            Ok(v)
        };
        Self::from_codewords(name, basis, build(occ0)?, build(occ1)?)
    }

    /// One-mode binomial code with spacing S and order N.
    pub fn one_mode_binomial(basis: &FockBasis, spacing: usize, order: usize) -> Result<Self> {
        if basis.modes() != 1 {
            return Err(Error::BadCode(
                "one-mode binomial code needs a single-mode basis".into(),
            ));
        }
        let name = format!("binomial-s{spacing}-n{order}");
        let top = (order + 1) * (spacing + 1);
        if basis.n_max() < top {
            return Err(Error::BasisTooSmall {
                code: name,
                modes: 1,
                n_max: top,
            });
        }
        let (mut zero, mut one) = (
            Array1::<C64>::zeros(basis.dim()),
            Array1::<C64>::zeros(basis.dim()),
        );
        for p in 0..=(order + 1) {
            let amp = binomial_amplitude(order, p);
            let k = basis.index_of(&[p * (spacing + 1)])?;
            if p % 2 == 0 {
                zero[k] = C64::new(amp, 0.0);
            } else {
                one[k] = C64::new(amp, 0.0);
            }
        }
        Self::from_codewords(&name, basis, zero, one)
    }

    /// Two-mode binomial code: one-mode binomial coefficients on kets
    /// |p(S+1), N_tot - p(S+1)> with N_tot = (N+1)(S+1). All codewords
    /// share the total-occupation sector N_tot.
    pub fn two_mode_binomial(basis: &FockBasis, spacing: usize, order: usize) -> Result<Self> {
        if basis.modes() != 2 {
            return Err(Error::BadCode(
                "two-mode binomial code needs a two-mode basis".into(),
            ));
        }
        let name = format!("binomial2-s{spacing}-n{order}");
        let n_tot = (order + 1) * (spacing + 1);
        if basis.n_max() < n_tot {
            return Err(Error::BasisTooSmall {
                code: name,
                modes: 2,
                n_max: n_tot,
            });
        }
        let (mut zero, mut one) = (
            Array1::<C64>::zeros(basis.dim()),
            Array1::<C64>::zeros(basis.dim()),
        );
        for p in 0..=(order + 1) {
            let amp = binomial_amplitude(order, p);
            let up = p * (spacing + 1);
            let k = basis.index_of(&[up, n_tot - up])?;
            if p % 2 == 0 {
                zero[k] = C64::new(amp, 0.0);
            } else {
                one[k] = C64::new(amp, 0.0);
            }
        }
        Self::from_codewords(&name, basis, zero, one)
    }

    pub fn with_name(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn basis(&self) -> &FockBasis {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn zero(&self) -> &Array1<C64> {
        &self.zero
    }

    pub fn one(&self) -> &Array1<C64> {
        &self.one
    }

    /// Basis indices carrying codeword amplitude.
    pub fn support_indices(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = self
            .support0
            .iter()
            .chain(self.support1.iter())
            .map(|&(k, _)| k)
            .collect();
        idx.sort_unstable();
        idx.dedup();
        idx
    }

    /// Largest total occupation over the codeword support. Dynamics
    /// conserving total occupation stay exact in a basis with
    /// n_max >= this value.
    pub fn max_total_occupation(&self) -> usize {
        self.support_indices()
            .iter()
            .map(|&k| self.basis.total_occupation(k))
            .max()
            .unwrap_or(0)
    }

    /// a|0bar> + b|1bar>; coefficients must be normalized.
    pub fn logical_state(&self, a: C64, b: C64) -> Result<Array1<C64>> {
        let norm = a.norm_sqr() + b.norm_sqr();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::BadCoefficients { norm });
        }
        Ok(self.zero.mapv(|z| z * a) + self.one.mapv(|z| z * b))
    }

    /// The four tomography probes |0bar>, |1bar>, |+bar>, |+i bar>.
    pub fn pauli_states(&self) -> [Array1<C64>; 4] {
        let r = C64::new(1.0 / 2f64.sqrt(), 0.0);
        let i = C64::new(0.0, 1.0 / 2f64.sqrt());
        [
            self.zero.clone(),
            self.one.clone(),
            self.zero.mapv(|z| z * r) + self.one.mapv(|z| z * r),
            self.zero.mapv(|z| z * r) + self.one.mapv(|z| z * i),
        ]
    }

    /// Rank-2 projector onto the code space.
    pub fn projector(&self) -> Array2<C64> {
        outer(&self.zero) + outer(&self.one)
    }

    /// Logical amplitudes (<0bar|psi>, <1bar|psi>).
    pub fn amplitudes(&self, psi: &Array1<C64>) -> [C64; 2] {
        let dot = |supp: &[(usize, C64)]| -> C64 {
            supp.iter().map(|&(k, amp)| amp.conj() * psi[k]).sum()
        };
        [dot(&self.support0), dot(&self.support1)]
    }

    /// 2x2 code block <c_i| rho |c_j> of an operator, via the sparse
    /// codeword supports.
    pub fn block(&self, rho: &Array2<C64>) -> Matrix2<C64> {
        let supports = [&self.support0, &self.support1];
        Matrix2::from_fn(|i, j| {
            let mut acc = C64::new(0.0, 0.0);
            for &(k, a) in supports[i] {
                for &(l, b) in supports[j] {
                    acc += a.conj() * rho[(k, l)] * b;
                }
            }
            acc
        })
    }

    /// Code block of a pure state's density matrix, from the logical
    /// amplitudes alone.
    pub fn block_from_state(&self, psi: &Array1<C64>) -> Matrix2<C64> {
        let v = self.amplitudes(psi);
        Matrix2::from_fn(|i, j| v[i] * v[j].conj())
    }

    /// Embedded logical Pauli operator (I, X, Y, Z as 0..3) as a dense
    /// Fock-space matrix. Intended for tests and small dimensions.
    pub fn embedded_pauli(&self, which: usize) -> Array2<C64> {
        let z = &self.zero;
        let o = &self.one;
        let ket_bra = |a: &Array1<C64>, b: &Array1<C64>| -> Array2<C64> {
            let d = a.len();
            Array2::from_shape_fn((d, d), |(i, j)| a[i] * b[j].conj())
        };
        match which {
            0 => outer(z) + outer(o),
            1 => ket_bra(z, o) + ket_bra(o, z),
            2 => (ket_bra(z, o) - ket_bra(o, z)).mapv(|v| v * C64::new(0.0, -1.0)),
            3 => outer(z) - outer(o),
            _ => panic!("Pauli index {which} out of range"),
        }
    }
}

/// True when every cross inner product between the two spaces is below
/// tolerance; superposition probes require this.
pub fn orthogonal(a: &CodeSpace, b: &CodeSpace) -> bool {
    let pairs = [
        (a.zero(), b.zero()),
        (a.zero(), b.one()),
        (a.one(), b.zero()),
        (a.one(), b.one()),
    ];
    pairs.iter().all(|(x, y)| {
        x.iter()
            .zip(y.iter())
            .map(|(p, q)| p.conj() * q)
            .sum::<C64>()
            .norm()
            < CODE_TOL
    })
}

/// sqrt(C(order+1, p)) / sqrt(2^order).
fn binomial_amplitude(order: usize, p: usize) -> f64 {
    assert!(order < 60, "binomial order too large for exact arithmetic");
    let c = binomial(order as u64 + 1, p as u64) as f64;
    let two_n = (1u64 << order) as f64;
    c.sqrt() / two_n.sqrt()
}

fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: u64 = 1;
    for i in 1..=k {
        c = c * (n - k + i) / i;
    }
    c
}

/// Named registry entries: standard encodings plus the proxy pairs and
/// reference code used in the mitigation studies. The first listed ket
/// of each pair is |0bar>.
pub fn standard_code(name: &str, basis: &FockBasis) -> Result<CodeSpace> {
    match name {
        "dual-rail" => CodeSpace::from_occupations(name, basis, &[0, 1], &[1, 0]),
        "cly-4222" => Ok(CodeSpace::two_mode_binomial(basis, 1, 1)?.with_name(name)),
        "binomial-024" => Ok(CodeSpace::one_mode_binomial(basis, 1, 1)?.with_name(name)),
        "P1" => CodeSpace::from_occupations(name, basis, &[0, 12], &[12, 0]),
        "P2" => CodeSpace::from_occupations(name, basis, &[1, 11], &[11, 1]),
        "P3" => CodeSpace::from_occupations(name, basis, &[7, 3], &[3, 7]),
        "P4" => CodeSpace::from_occupations(name, basis, &[6, 3], &[3, 6]),
        "P5" => CodeSpace::from_occupations(name, basis, &[9, 6], &[6, 9]),
        "C" => CodeSpace::from_occupations(name, basis, &[4, 8], &[8, 4]),
        _ => Err(Error::UnknownCode(name.to_string())),
    }
}

/// (modes, minimal cutoff to construct, max total codeword occupation)
/// for a registry name, without needing a basis up front.
pub fn code_info(name: &str) -> Result<(usize, usize, usize)> {
    let (modes, n_max) = match name {
        "dual-rail" => (2, 1),
        "cly-4222" => (2, 4),
        "binomial-024" => (1, 4),
        "P1" | "P2" => (2, 12),
        "P3" => (2, 7),
        "P4" => (2, 6),
        "P5" => (2, 9),
        "C" => (2, 8),
        _ => return Err(Error::UnknownCode(name.to_string())),
    };
    let basis = FockBasis::with_cap(modes, n_max, usize::MAX)?;
    let code = standard_code(name, &basis)?;
    Ok((modes, n_max, code.max_total_occupation()))
}

/// Phase sampling for [`cross_term_average`].
#[derive(Debug, Clone, Copy)]
pub enum PhaseSampling {
    /// k equally spaced phases 2 pi j / k; the cross-term mean vanishes
    /// exactly.
    Uniform { count: usize },
    /// k uniform random phases; the cross-term mean decays like
    /// k^{-1/2}.
    Random { count: usize, seed: u64 },
}

/// Average of E(|u_j><u_j|) over phased superpositions
/// u_j = (|phi> + e^{i theta_j} |chi>)/sqrt(2). Uses linearity: the
/// channel is applied once to each of the four constituent blocks and
/// the phase average is taken over the recombination.
pub fn cross_term_average<Ch: QuantumChannel>(
    channel: &Ch,
    phi: &Array1<C64>,
    chi: &Array1<C64>,
    sampling: PhaseSampling,
) -> Result<Array2<C64>> {
    let d = phi.len();
    if chi.len() != d || channel.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: chi.len(),
        });
    }
    let ket_bra = |a: &Array1<C64>, b: &Array1<C64>| -> Array2<C64> {
        Array2::from_shape_fn((d, d), |(i, j)| a[i] * b[j].conj())
    };
    let e_pp = channel.apply(&outer(phi))?;
    let e_cc = channel.apply(&outer(chi))?;
    let e_cp = channel.apply(&ket_bra(chi, phi))?;
    let e_pc = channel.apply(&ket_bra(phi, chi))?;

    let mean_phase: C64 = match sampling {
        PhaseSampling::Uniform { count } => {
            assert!(count > 0, "need at least one phase");
            (0..count)
                .map(|j| C64::from_polar(1.0, 2.0 * std::f64::consts::PI * j as f64 / count as f64))
                .sum::<C64>()
                / count as f64
        }
        PhaseSampling::Random { count, seed } => {
            assert!(count > 0, "need at least one phase");
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..count)
                .map(|_| {
                    C64::from_polar(1.0, rng.random_range(0.0..2.0 * std::f64::consts::PI))
                })
                .sum::<C64>()
                / count as f64
        }
    };
    let mut out = (&e_pp + &e_cc).mapv(|z| z * 0.5);
    out = out + e_cp.mapv(|z| z * (0.5 * mean_phase));
    out = out + e_pc.mapv(|z| z * (0.5 * mean_phase.conj()));
    Ok(out)
}

/// Frobenius distance between the second moment of a logical state set
/// and the exact 2-design moment (I4 + SWAP)/6. Zero iff the set is a
/// projective 2-design.
pub fn design_deviation(states: &[[C64; 2]]) -> f64 {
    assert!(!states.is_empty(), "need at least one state");
    let mut m = [[C64::new(0.0, 0.0); 4]; 4];
    for v in states {
        // (v v^dag) kron (v v^dag), row-major 2x2 blocks.
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        m[i * 2 + k][j * 2 + l] +=
                            v[i] * v[j].conj() * v[k] * v[l].conj() / states.len() as f64;
                    }
                }
            }
        }
    }
    // (I + SWAP)/6 on C^2 tensor C^2.
    let mut target = [[0.0f64; 4]; 4];
    for a in 0..2 {
        for b in 0..2 {
            target[a * 2 + b][a * 2 + b] += 1.0 / 6.0;
            target[a * 2 + b][b * 2 + a] += 1.0 / 6.0;
        }
    }
    let mut acc = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            acc += (m[i][j] - C64::new(target[i][j], 0.0)).norm_sqr();
        }
    }
    acc.sqrt()
}
