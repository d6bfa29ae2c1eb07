//! Truncated multi-mode Fock space.
//!
//! A [`FockBasis`] enumerates product states |n_0, ..., n_{L-1}> with
//! each occupation truncated at `n_max`. States are ordered
//! lexicographically with mode 0 most significant, so
//! `index = sum_i n_i * (n_max+1)^(L-1-i)`.
//!
//! Truncation is exact for dynamics that never populate occupations
//! above the cutoff: number-conserving Hamiltonians started inside a
//! sector with total occupation <= n_max, and pure loss, which only
//! moves weight downward.

use ndarray::Array2;

use crate::{C64, Error, Result};

/// Default cap on the Hilbert-space dimension (n_max+1)^L.
pub const DEFAULT_DIM_CAP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FockBasis {
    modes: usize,
    n_max: usize,
    dim: usize,
}

impl FockBasis {
    /// Basis with the default dimension cap.
    pub fn new(modes: usize, n_max: usize) -> Result<Self> {
        Self::with_cap(modes, n_max, DEFAULT_DIM_CAP)
    }

    /// Basis with an explicit dimension cap.
    pub fn with_cap(modes: usize, n_max: usize, cap: usize) -> Result<Self> {
        if modes == 0 {
            return Err(Error::Numerical("basis needs at least one mode".into()));
        }
        let base = n_max + 1;
        let mut dim: usize = 1;
        for _ in 0..modes {
            dim = dim.checked_mul(base).ok_or(Error::DimensionCap {
                modes,
                n_max,
                dim: usize::MAX,
                cap,
            })?;
        }
        if dim > cap {
            return Err(Error::DimensionCap {
                modes,
                n_max,
                dim,
                cap,
            });
        }
        Ok(FockBasis { modes, n_max, dim })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Stride of `mode` in the lexicographic index: (n_max+1)^(L-1-mode).
    pub fn stride(&self, mode: usize) -> Result<usize> {
        self.check_mode(mode)?;
        Ok((self.n_max + 1).pow((self.modes - 1 - mode) as u32))
    }

    /// Index of the product state with the given occupations.
    pub fn index_of(&self, occ: &[usize]) -> Result<usize> {
        if occ.len() != self.modes {
            return Err(Error::DimensionMismatch {
                expected: self.modes,
                found: occ.len(),
            });
        }
        let mut idx = 0;
        for &n in occ {
            if n > self.n_max {
                return Err(Error::OccupationRange {
                    occ: n,
                    n_max: self.n_max,
                });
            }
            idx = idx * (self.n_max + 1) + n;
        }
        Ok(idx)
    }

    /// Occupations of the product state at `index`.
    pub fn occupation(&self, index: usize) -> Vec<usize> {
        assert!(index < self.dim, "basis index out of range");
        let base = self.n_max + 1;
        let mut occ = vec![0; self.modes];
        let mut rest = index;
        for m in (0..self.modes).rev() {
            occ[m] = rest % base;
            rest /= base;
        }
        occ
    }

    /// Occupation of a single mode at `index`, without allocating.
    pub fn occupation_of(&self, index: usize, mode: usize) -> usize {
        let base = self.n_max + 1;
        let stride = base.pow((self.modes - 1 - mode) as u32);
        (index / stride) % base
    }

    /// Total occupation of the product state at `index`.
    pub fn total_occupation(&self, index: usize) -> usize {
        (0..self.modes).map(|m| self.occupation_of(index, m)).sum()
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.modes {
            return Err(Error::ModeIndex {
                mode,
                modes: self.modes,
            });
        }
        Ok(())
    }

    /// Annihilation operator b_mode: b|..., n, ...> = sqrt(n)|..., n-1, ...>.
    pub fn annihilation(&self, mode: usize) -> Result<Array2<C64>> {
        self.check_mode(mode)?;
        let base = self.n_max + 1;
        let stride = self.stride(mode)?;
        let mut op = Array2::<C64>::zeros((self.dim, self.dim));
        for k in 0..self.dim {
            let n = (k / stride) % base;
            if n > 0 {
                op[(k - stride, k)] = C64::new((n as f64).sqrt(), 0.0);
            }
        }
        Ok(op)
    }

    /// Creation operator, the exact conjugate transpose of
    /// [`FockBasis::annihilation`] (entries bitwise equal).
    pub fn creation(&self, mode: usize) -> Result<Array2<C64>> {
        Ok(crate::linalg::dagger(&self.annihilation(mode)?))
    }

    /// Number operator for `mode`. Diagonal entries are stored as the
    /// literal ladder-factor product sqrt(n)*sqrt(n) so that
    /// `number == creation . annihilation` holds bitwise.
    pub fn number(&self, mode: usize) -> Result<Array2<C64>> {
        self.check_mode(mode)?;
        let base = self.n_max + 1;
        let stride = self.stride(mode)?;
        let mut op = Array2::<C64>::zeros((self.dim, self.dim));
        for k in 0..self.dim {
            let n = (k / stride) % base;
            let s = (n as f64).sqrt();
            op[(k, k)] = C64::new(s * s, 0.0);
        }
        Ok(op)
    }

    /// Total number operator, the mode-ordered sum of the per-mode
    /// number operators.
    pub fn total_number(&self) -> Result<Array2<C64>> {
        let mut op = Array2::<C64>::zeros((self.dim, self.dim));
        for m in 0..self.modes {
            op = op + self.number(m)?;
        }
        Ok(op)
    }

    /// Diagonal 0/1 mask keeping states with total occupation `n`.
    pub fn total_number_mask(&self, n: usize) -> Vec<bool> {
        (0..self.dim).map(|k| self.total_occupation(k) == n).collect()
    }

    /// Mask keeping states whose per-mode occupations match `rems`
    /// modulo `modulus`.
    pub fn mode_remainder_mask(&self, modulus: usize, rems: &[usize]) -> Result<Vec<bool>> {
        if rems.len() != self.modes {
            return Err(Error::DimensionMismatch {
                expected: self.modes,
                found: rems.len(),
            });
        }
        if modulus == 0 {
            return Err(Error::Numerical("modulus must be positive".into()));
        }
        Ok((0..self.dim)
            .map(|k| {
                (0..self.modes).all(|m| self.occupation_of(k, m) % modulus == rems[m] % modulus)
            })
            .collect())
    }

    /// Mask keeping states whose total occupation matches `rem` modulo
    /// `modulus`.
    pub fn total_remainder_mask(&self, modulus: usize, rem: usize) -> Result<Vec<bool>> {
        if modulus == 0 {
            return Err(Error::Numerical("modulus must be positive".into()));
        }
        Ok((0..self.dim)
            .map(|k| self.total_occupation(k) % modulus == rem % modulus)
            .collect())
    }

    /// Dense diagonal projector from a 0/1 mask.
    pub fn mask_projector(&self, mask: &[bool]) -> Result<Array2<C64>> {
        if mask.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: mask.len(),
            });
        }
        let mut op = Array2::<C64>::zeros((self.dim, self.dim));
        for (k, &keep) in mask.iter().enumerate() {
            if keep {
                op[(k, k)] = C64::new(1.0, 0.0);
            }
        }
        Ok(op)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dagger, max_abs_diff};
    use approx::assert_abs_diff_eq;

    #[test]
    fn dimensions_match_cutoff_and_mode_count() {
        assert_eq!(FockBasis::new(2, 1).unwrap().dim(), 4);
        assert_eq!(FockBasis::new(2, 12).unwrap().dim(), 169);
        assert_eq!(FockBasis::new(1, 4).unwrap().dim(), 5);
    }

    #[test]
    fn dimension_cap_is_enforced() {
        // (63+1)^2 = 4096 sits exactly at the default cap.
        assert!(FockBasis::new(2, 63).is_ok());
        match FockBasis::new(2, 64) {
            Err(Error::DimensionCap { dim, cap, .. }) => {
                assert_eq!(dim, 4225);
                assert_eq!(cap, 4096);
            }
            other => panic!("expected DimensionCap, got {other:?}"),
        }
        assert!(FockBasis::with_cap(2, 64, 5000).is_ok());
    }

    #[test]
    fn lexicographic_order_puts_mode_zero_most_significant() {
        let b = FockBasis::new(2, 2).unwrap();
        assert_eq!(b.index_of(&[0, 0]).unwrap(), 0);
        assert_eq!(b.index_of(&[0, 1]).unwrap(), 1);
        assert_eq!(b.index_of(&[0, 2]).unwrap(), 2);
        assert_eq!(b.index_of(&[1, 0]).unwrap(), 3);
        assert_eq!(b.index_of(&[2, 2]).unwrap(), 8);
    }

    #[test]
    fn index_occupation_roundtrip_is_a_bijection() {
        for (modes, n_max) in [(1, 7), (2, 5), (3, 3)] {
            let b = FockBasis::new(modes, n_max).unwrap();
            for k in 0..b.dim() {
                let occ = b.occupation(k);
                assert_eq!(b.index_of(&occ).unwrap(), k);
                for (m, &n) in occ.iter().enumerate() {
                    assert_eq!(b.occupation_of(k, m), n);
                }
            }
        }
    }

    #[test]
    fn occupation_out_of_range_is_rejected() {
        let b = FockBasis::new(2, 3).unwrap();
        assert!(matches!(
            b.index_of(&[1, 4]),
            Err(Error::OccupationRange { occ: 4, n_max: 3 })
        ));
        assert!(matches!(
            b.index_of(&[1]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn annihilation_lowers_with_sqrt_factor() {
        // b|3> = sqrt(3)|2> on a single mode.
        let b = FockBasis::new(1, 5).unwrap();
        let a = b.annihilation(0).unwrap();
        assert_eq!(a[(2, 3)], C64::new(3f64.sqrt(), 0.0));
        assert_eq!(a[(3, 2)], C64::new(0.0, 0.0));
        // Column 0 is empty: b|0> = 0.
        for i in 0..6 {
            assert_eq!(a[(i, 0)], C64::new(0.0, 0.0));
        }
    }

    #[test]
    fn creation_raises_and_is_bitwise_dagger() {
        let b = FockBasis::new(1, 5).unwrap();
        let a = b.annihilation(0).unwrap();
        let c = b.creation(0).unwrap();
        // b†|3> = sqrt(4)|4> = 2|4>.
        assert_eq!(c[(4, 3)], C64::new(2.0, 0.0));
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(c[(i, j)], a[(j, i)].conj());
            }
        }
        // b†|n_max> truncates to zero.
        for i in 0..6 {
            assert_eq!(c[(i, 5)], C64::new(0.0, 0.0));
        }
    }

    #[test]
    fn number_acts_per_mode() {
        let b = FockBasis::new(2, 5).unwrap();
        let n0 = b.number(0).unwrap();
        let n1 = b.number(1).unwrap();
        let k = b.index_of(&[2, 5]).unwrap();
        assert_abs_diff_eq!(n0[(k, k)].re, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(n1[(k, k)].re, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn number_equals_creation_times_annihilation_bitwise() {
        for (modes, n_max) in [(1, 6), (2, 4)] {
            let b = FockBasis::new(modes, n_max).unwrap();
            for m in 0..modes {
                let prod = b.creation(m).unwrap().dot(&b.annihilation(m).unwrap());
                let n = b.number(m).unwrap();
                for i in 0..b.dim() {
                    for j in 0..b.dim() {
                        assert_eq!(n[(i, j)], prod[(i, j)], "mode {m} entry ({i},{j})");
                    }
                }
            }
        }
    }

    #[test]
    fn commutator_is_identity_below_cutoff_and_minus_n_max_at_it() {
        // [b, b†]|n> = |n> for n < n_max; the truncated commutator gives
        // -n_max|n_max> because b† annihilates the top state.
        let n_max = 4;
        let b = FockBasis::new(1, n_max).unwrap();
        let a = b.annihilation(0).unwrap();
        let c = b.creation(0).unwrap();
        let comm = a.dot(&c) - c.dot(&a);
        for n in 0..n_max {
            assert_abs_diff_eq!(comm[(n, n)].re, 1.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(comm[(n_max, n_max)].re, -(n_max as f64), epsilon = 1e-12);
        for i in 0..=n_max {
            for j in 0..=n_max {
                if i != j {
                    assert_eq!(comm[(i, j)], C64::new(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn total_number_masks_partition_the_basis() {
        let b = FockBasis::new(2, 3).unwrap();
        let mut seen = vec![false; b.dim()];
        for n in 0..=6 {
            for (k, &keep) in b.total_number_mask(n).iter().enumerate() {
                if keep {
                    assert!(!seen[k], "state {k} in two sectors");
                    seen[k] = true;
                    assert_eq!(b.total_occupation(k), n);
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn mask_projector_is_idempotent_and_hermitian() {
        let b = FockBasis::new(2, 2).unwrap();
        let mask = b.mode_remainder_mask(2, &[0, 0]).unwrap();
        // Both occupations even: (0,0),(0,2),(2,0),(2,2).
        assert_eq!(mask.iter().filter(|&&x| x).count(), 4);
        let p = b.mask_projector(&mask).unwrap();
        assert_eq!(max_abs_diff(&p.dot(&p), &p), 0.0);
        assert_eq!(max_abs_diff(&dagger(&p), &p), 0.0);
    }

    #[test]
    fn total_remainder_mask_uses_total_occupation() {
        let b = FockBasis::new(2, 2).unwrap();
        let mask = b.total_remainder_mask(2, 0).unwrap();
        for k in 0..b.dim() {
            assert_eq!(mask[k], b.total_occupation(k) % 2 == 0);
        }
    }
}
