//! Linear quantum-channel abstraction.
//!
//! A channel here is any linear superoperator on system operators.
//! Linearity is part of the contract: tomography and the cross-term
//! utilities apply channels to non-Hermitian blocks like |phi><chi| and
//! recombine the results, which is only valid for linear maps.

use ndarray::Array2;

use crate::dynamics::{propagate_operator, DisorderEnsemble, EvolutionConfig};
use crate::fock::FockBasis;
use crate::{C64, Result};

pub trait QuantumChannel {
    /// Hilbert-space dimension the channel acts on.
    fn dim(&self) -> usize;

    /// Apply the channel to an operator (not necessarily Hermitian).
    fn apply(&self, op: &Array2<C64>) -> Result<Array2<C64>>;
}

/// The identity channel.
#[derive(Debug, Clone, Copy)]
pub struct IdentityChannel {
    pub dim: usize,
}

impl QuantumChannel for IdentityChannel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, op: &Array2<C64>) -> Result<Array2<C64>> {
        Ok(op.clone())
    }
}

/// Adapter turning a closure into a channel, mainly for tests and
/// synthetic noise models.
pub struct FnChannel<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> QuantumChannel for FnChannel<F>
where
    F: Fn(&Array2<C64>) -> Result<Array2<C64>>,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, op: &Array2<C64>) -> Result<Array2<C64>> {
        (self.f)(op)
    }
}

/// A single fixed-parameter Lindblad evolution as a channel.
pub struct LindbladChannel {
    pub basis: FockBasis,
    pub h: Array2<C64>,
    pub rates: Vec<f64>,
    pub cfg: EvolutionConfig,
}

impl QuantumChannel for LindbladChannel {
    fn dim(&self) -> usize {
        self.basis.dim()
    }

    fn apply(&self, op: &Array2<C64>) -> Result<Array2<C64>> {
        propagate_operator(&self.basis, &self.h, &self.rates, op, &self.cfg)
    }
}

/// Disorder-ensemble-averaged Lindblad channel: the mean of the
/// fixed-parameter channels over the quasi-static ensemble.
pub struct EnsembleLindbladChannel {
    pub basis: FockBasis,
    pub ensemble: DisorderEnsemble,
    pub rates: Vec<f64>,
    pub cfg: EvolutionConfig,
}

impl QuantumChannel for EnsembleLindbladChannel {
    fn dim(&self) -> usize {
        self.basis.dim()
    }

    fn apply(&self, op: &Array2<C64>) -> Result<Array2<C64>> {
        let dim = self.basis.dim();
        let eff = self.ensemble.effective_samples();
        let per_sample = self.ensemble.map_samples(|_, params| {
            let h = crate::dynamics::hamiltonian(&self.basis, params)?;
            propagate_operator(&self.basis, &h, &self.rates, op, &self.cfg)
        })?;
        let mut acc = Array2::<C64>::zeros((dim, dim));
        for s in per_sample {
            acc = acc + s;
        }
        Ok(acc.mapv(|z| z / eff as f64))
    }
}
