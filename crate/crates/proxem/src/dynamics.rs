//! Lindblad master-equation dynamics with quasi-static disorder.
//!
//! The master equation is
//!
//! ```text
//! d rho/dt = -+ i [H, rho] + sum_i gamma_i (b_i rho b_i^dag - 1/2 {b_i^dag b_i, rho})
//! ```
//!
//! with the sign of the commutator chosen by [`SignConvention`]:
//! `Standard` uses `-i[H, rho]`, `Paper` uses `+i[H, rho]` (the
//! convention some sources print; for a fixed Hermitian `H` it evolves
//! the complex conjugate trajectory).
//!
//! Two integrators are provided: fixed-step RK4 (default) and a
//! matrix-free Taylor expansion of the Liouvillian exponential with
//! automatic substepping, used as a cross-validation reference.
//! Operators enter as dense matrices and are sparsified internally, so
//! the right-hand side costs O(nnz(H) * dim + modes * dim^2) instead of
//! dense matrix products.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fock::FockBasis;
use crate::linalg::{add_scaled, Csr};
use crate::{C64, Error, Result};

/// Commutator sign convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignConvention {
    /// d rho/dt = -i[H, rho] + dissipator.
    Standard,
    /// d rho/dt = +i[H, rho] + dissipator.
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    Rk4,
    LiouvillianExpm,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub t_final: f64,
    pub dt: f64,
    pub sign: SignConvention,
    pub integrator: Integrator,
    /// Check the smallest eigenvalue of the evolved density matrix
    /// (an O(dim^3) eigendecomposition; disable for large batches).
    pub check_positivity: bool,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            t_final: 1.0,
            dt: 1e-3,
            sign: SignConvention::Standard,
            integrator: Integrator::Rk4,
            check_positivity: true,
        }
    }
}

/// Tolerances from the module contract.
const TRACE_TOL_PER_UNIT_TIME: f64 = 1e-9;
const HERMITICITY_TOL: f64 = 1e-10;
const POSITIVITY_TOL: f64 = -1e-8;
const NORM_TOL_PER_UNIT_TIME: f64 = 1e-9;

/// Chain Hamiltonian parameters: per-mode detunings, nearest-neighbour
/// hopping, and on-site interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianParams {
    pub delta: Vec<f64>,
    pub hopping: f64,
    pub interaction: f64,
}

impl HamiltonianParams {
    pub fn zero(modes: usize) -> Self {
        HamiltonianParams {
            delta: vec![0.0; modes],
            hopping: 0.0,
            interaction: 0.0,
        }
    }
}

/// H = sum_i delta_i n_i + J sum_i (b_i^dag b_{i+1} + h.c.)
///     + U sum_i n_i (n_i - 1) / 2
///
/// built structurally (no matrix products). The hopping sum runs over
/// the open chain i = 0..L-2 and is explicitly hermitized, so H is
/// Hermitian bitwise. H conserves total occupation.
pub fn hamiltonian(basis: &FockBasis, p: &HamiltonianParams) -> Result<Array2<C64>> {
    let modes = basis.modes();
    if p.delta.len() != modes {
        return Err(Error::DimensionMismatch {
            expected: modes,
            found: p.delta.len(),
        });
    }
    let dim = basis.dim();
    let n_max = basis.n_max();
    let strides: Vec<usize> = (0..modes)
        .map(|m| basis.stride(m))
        .collect::<Result<_>>()?;
    let mut h = Array2::<C64>::zeros((dim, dim));
    let mut occ = vec![0usize; modes];
    for k in 0..dim {
        for m in 0..modes {
            occ[m] = basis.occupation_of(k, m);
        }
        let mut diag = 0.0;
        for (m, &n) in occ.iter().enumerate() {
            diag += p.delta[m] * n as f64;
        }
        for &n in &occ {
            diag += p.interaction * (n * (n.max(1) - 1) / 2) as f64;
        }
        h[(k, k)] = C64::new(diag, 0.0);
        if p.hopping != 0.0 {
            for m in 0..modes.saturating_sub(1) {
                let s_m = strides[m];
                let s_n = strides[m + 1];
                // b_m^dag b_{m+1}: move one boson from mode m+1 to mode m.
                if occ[m + 1] > 0 && occ[m] < n_max {
                    let amp = p.hopping * ((occ[m + 1] as f64).sqrt() * ((occ[m] + 1) as f64).sqrt());
                    h[(k + s_m - s_n, k)] += C64::new(amp, 0.0);
                }
                // b_{m+1}^dag b_m: the Hermitian partner.
                if occ[m] > 0 && occ[m + 1] < n_max {
                    let amp = p.hopping * ((occ[m] as f64).sqrt() * ((occ[m + 1] + 1) as f64).sqrt());
                    h[(k - s_m + s_n, k)] += C64::new(amp, 0.0);
                }
            }
        }
    }
    Ok(h)
}

struct LossTerm {
    stride: usize,
    gamma: f64,
    /// sqrt(n_mode(k)) for every basis index k.
    sq: Vec<f64>,
}

/// Sparse Lindblad right-hand side, prepared once per (H, rates) pair.
struct LindbladRhs {
    dim: usize,
    h: Option<Csr>,
    i_factor: C64,
    loss: Vec<LossTerm>,
    /// sum_i gamma_i n_i(k); empty when all rates vanish.
    gdiag: Vec<f64>,
}

impl LindbladRhs {
    fn new(basis: &FockBasis, h: &Array2<C64>, rates: &[f64], sign: SignConvention) -> Result<Self> {
        let dim = basis.dim();
        if h.dim() != (dim, dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: h.dim().0,
            });
        }
        if rates.len() != basis.modes() {
            return Err(Error::DimensionMismatch {
                expected: basis.modes(),
                found: rates.len(),
            });
        }
        for (mode, &g) in rates.iter().enumerate() {
            if g < 0.0 || !g.is_finite() {
                return Err(Error::NegativeRate { mode, rate: g });
            }
        }
        let hs = Csr::from_dense(h, 0.0);
        let h_sparse = if hs.is_empty() { None } else { Some(hs) };
        let i_factor = match sign {
            SignConvention::Standard => C64::new(0.0, -1.0),
            SignConvention::Paper => C64::new(0.0, 1.0),
        };
        let mut loss = Vec::new();
        let mut gdiag = Vec::new();
        if rates.iter().any(|&g| g > 0.0) {
            gdiag = vec![0.0; dim];
            for (mode, &g) in rates.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let stride = basis.stride(mode)?;
                let sq: Vec<f64> = (0..dim)
                    .map(|k| (basis.occupation_of(k, mode) as f64).sqrt())
                    .collect();
                for (k, gd) in gdiag.iter_mut().enumerate() {
                    *gd += g * basis.occupation_of(k, mode) as f64;
                }
                loss.push(LossTerm { stride, gamma: g, sq });
            }
        }
        Ok(LindbladRhs {
            dim,
            h: h_sparse,
            i_factor,
            loss,
            gdiag,
        })
    }

    fn has_loss(&self) -> bool {
        !self.loss.is_empty()
    }

    /// out = L(rho), dense row-major buffers.
    fn apply(&self, rho: &[C64], out: &mut [C64]) {
        let d = self.dim;
        out.fill(C64::new(0.0, 0.0));
        if let Some(h) = &self.h {
            h.left_mul_acc(rho, self.i_factor, out);
            h.right_mul_acc(rho, -self.i_factor, out);
        }
        for term in &self.loss {
            // gamma * b rho b^dag: a doubly shifted, scaled copy.
            let s = term.stride;
            let sq = &term.sq;
            for r in occupied_indices(d, sq) {
                let fr = term.gamma * sq[r];
                let dst = &mut out[(r - s) * d..(r - s) * d + d];
                let src = &rho[r * d..r * d + d];
                for c in occupied_indices(d, sq) {
                    dst[c - s] += src[c] * (fr * sq[c]);
                }
            }
        }
        if !self.gdiag.is_empty() {
            // -1/2 {sum_i gamma_i n_i, rho}, a fused diagonal pass.
            for r in 0..d {
                let gr = self.gdiag[r];
                let out_row = &mut out[r * d..r * d + d];
                let rho_row = &rho[r * d..r * d + d];
                for c in 0..d {
                    out_row[c] -= rho_row[c] * (0.5 * (gr + self.gdiag[c]));
                }
            }
        }
    }

    /// out = i_factor * H psi (closed-system state derivative).
    fn apply_state(&self, psi: &[C64], out: &mut [C64]) {
        out.fill(C64::new(0.0, 0.0));
        if let Some(h) = &self.h {
            h.matvec_acc(psi, self.i_factor, out);
        }
    }

    /// Crude upper bound on the Liouvillian operator norm, used to pick
    /// exponential substeps.
    fn norm_bound(&self, n_max: usize) -> f64 {
        let h_norm: f64 = self
            .h
            .as_ref()
            .map(|h| h.val.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt())
            .unwrap_or(0.0);
        let loss_norm: f64 = self.loss.iter().map(|t| t.gamma * 2.0 * n_max as f64).sum();
        2.0 * h_norm + loss_norm
    }
}

/// Iterator over basis indices whose relevant mode occupation is
/// nonzero, i.e. sq[k] > 0.
fn occupied_indices<'a>(dim: usize, sq: &'a [f64]) -> impl Iterator<Item = usize> + 'a {
    (0..dim).filter(move |&k| sq[k] > 0.0)
}

fn step_count(t_final: f64, dt: f64) -> usize {
    (((t_final / dt) - 1e-9).ceil().max(1.0)) as usize
}

fn check_time_grid(cfg: &EvolutionConfig) -> Result<()> {
    if !(cfg.dt > 0.0) || !cfg.dt.is_finite() {
        return Err(Error::InvalidTimeStep { dt: cfg.dt });
    }
    if cfg.t_final < 0.0 || !cfg.t_final.is_finite() {
        return Err(Error::InvalidTimeStep { dt: cfg.t_final });
    }
    Ok(())
}

/// Cheap density-matrix checks: Hermiticity and unit trace. Positivity
/// is checked separately because it costs an eigendecomposition.
pub fn validate_density(rho: &Array2<C64>, trace_tol: f64, herm_tol: f64) -> Result<()> {
    let (r, c) = rho.dim();
    if r != c {
        return Err(Error::InvalidState {
            reason: format!("shape {r}x{c} is not square"),
        });
    }
    let mut tr = 0.0;
    let mut herm = 0.0f64;
    for i in 0..r {
        tr += rho[(i, i)].re;
        herm = herm.max(rho[(i, i)].im.abs());
        for j in (i + 1)..r {
            let d = rho[(i, j)] - rho[(j, i)].conj();
            herm = herm.max(d.norm());
        }
    }
    if (tr - 1.0).abs() > trace_tol {
        return Err(Error::InvalidState {
            reason: format!("trace {tr} deviates from 1 by more than {trace_tol:.1e}"),
        });
    }
    if herm > herm_tol {
        return Err(Error::InvalidState {
            reason: format!("Hermiticity violation {herm:.3e} exceeds {herm_tol:.1e}"),
        });
    }
    Ok(())
}

/// Smallest eigenvalue of a Hermitian matrix (hermitized first to kill
/// floating-point asymmetry). A non-finite eigenvalue from the solver
/// maps to negative infinity so the positivity check fails closed.
pub fn min_eigenvalue(rho: &Array2<C64>) -> f64 {
    crate::linalg::hermitian_eigenvalues(rho)
        .into_iter()
        .map(|e| if e.is_finite() { e } else { f64::NEG_INFINITY })
        .fold(f64::INFINITY, f64::min)
}

fn warn_if_truncation_unsafe(basis: &FockBasis, support: impl Iterator<Item = (usize, f64)>) {
    let n_max = basis.n_max();
    for (k, w) in support {
        if w > 1e-12 && basis.total_occupation(k) > n_max {
            log::warn!(
                "initial state populates total occupation {} above cutoff {}; \
                 number-conserving dynamics will be truncated",
                basis.total_occupation(k),
                n_max
            );
            return;
        }
    }
}

/// Propagate an arbitrary operator under the Lindblad generator,
/// without density-matrix validation. This is the linear core shared
/// by [`evolve`] and the channel implementations, which must act on
/// non-Hermitian operator blocks too.
pub fn propagate_operator(
    basis: &FockBasis,
    h: &Array2<C64>,
    rates: &[f64],
    op: &Array2<C64>,
    cfg: &EvolutionConfig,
) -> Result<Array2<C64>> {
    check_time_grid(cfg)?;
    let dim = basis.dim();
    if op.dim() != (dim, dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: op.dim().0,
        });
    }
    let rhs = LindbladRhs::new(basis, h, rates, cfg.sign)?;
    let mut buf: Vec<C64> = op.iter().cloned().collect();
    // H = 0 and no loss means the generator vanishes identically.
    let trivial = rhs.h.is_none() && !rhs.has_loss();
    if cfg.t_final > 0.0 && !trivial {
        match cfg.integrator {
            Integrator::Rk4 => rk4_run(&rhs, &mut buf, cfg.t_final, cfg.dt),
            Integrator::LiouvillianExpm => expm_run(&rhs, &mut buf, cfg.t_final, basis.n_max())?,
        }
    }
    Ok(Array2::from_shape_vec((dim, dim), buf).expect("shape preserved"))
}

/// Evolve a density matrix under H and per-mode loss `rates` for
/// `cfg.t_final`. Returns the evolved density matrix after checking
/// trace, Hermiticity and (optionally) positivity against the module
/// tolerances.
pub fn evolve(
    basis: &FockBasis,
    h: &Array2<C64>,
    rates: &[f64],
    rho0: &Array2<C64>,
    cfg: &EvolutionConfig,
) -> Result<Array2<C64>> {
    let dim = basis.dim();
    if rho0.dim() != (dim, dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: rho0.dim().0,
        });
    }
    validate_density(rho0, 1e-9, 1e-9)?;
    warn_if_truncation_unsafe(basis, (0..dim).map(|k| (k, rho0[(k, k)].re)));
    let out = propagate_operator(basis, h, rates, rho0, cfg)?;

    let trace_tol = TRACE_TOL_PER_UNIT_TIME * cfg.t_final.max(1.0);
    validate_density(&out, trace_tol, HERMITICITY_TOL).map_err(|e| Error::Unphysical {
        reason: e.to_string(),
    })?;
    if cfg.check_positivity {
        let min_eig = min_eigenvalue(&out);
        if min_eig < POSITIVITY_TOL {
            return Err(Error::Unphysical {
                reason: format!("smallest eigenvalue {min_eig:.3e} below {POSITIVITY_TOL:.1e}"),
            });
        }
    }
    Ok(out)
}

/// Evolve a pure state under H alone (no loss). Much cheaper than
/// [`evolve`]: the state stays pure, so only a vector is propagated.
pub fn evolve_state(
    basis: &FockBasis,
    h: &Array2<C64>,
    psi0: &Array1<C64>,
    cfg: &EvolutionConfig,
) -> Result<Array1<C64>> {
    check_time_grid(cfg)?;
    let dim = basis.dim();
    if psi0.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: psi0.len(),
        });
    }
    let norm: f64 = psi0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidState {
            reason: format!("state norm {norm} deviates from 1"),
        });
    }
    warn_if_truncation_unsafe(basis, psi0.iter().enumerate().map(|(k, z)| (k, z.norm_sqr())));
    let rhs = LindbladRhs::new(basis, h, &vec![0.0; basis.modes()], cfg.sign)?;

    let mut psi: Vec<C64> = psi0.iter().cloned().collect();
    if cfg.t_final > 0.0 && rhs.h.is_some() {
        match cfg.integrator {
            Integrator::Rk4 => {
                rk4_run_with(&mut psi, cfg.t_final, cfg.dt, |x, out| rhs.apply_state(x, out))
            }
            Integrator::LiouvillianExpm => {
                let bound = rhs.norm_bound(basis.n_max());
                taylor_exp_action(&mut psi, cfg.t_final, bound, |x, out| rhs.apply_state(x, out))?
            }
        }
    }
    let out = Array1::from_vec(psi);
    let norm: f64 = out.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let tol = NORM_TOL_PER_UNIT_TIME * cfg.t_final.max(1.0);
    if (norm - 1.0).abs() > tol {
        return Err(Error::Unphysical {
            reason: format!("state norm drifted to {norm}"),
        });
    }
    Ok(out)
}

fn rk4_run(rhs: &LindbladRhs, rho: &mut Vec<C64>, t_final: f64, dt: f64) {
    rk4_run_with(rho, t_final, dt, |x, out| rhs.apply(x, out));
}

/// Classic fixed-step RK4 over complex slices; `f` computes the
/// right-hand side into its second argument.
fn rk4_run_with<F: Fn(&[C64], &mut [C64])>(y: &mut Vec<C64>, t_final: f64, dt: f64, f: F) {
    let n = y.len();
    let steps = step_count(t_final, dt);
    let mut k1 = vec![C64::new(0.0, 0.0); n];
    let mut k2 = k1.clone();
    let mut k3 = k1.clone();
    let mut k4 = k1.clone();
    let mut tmp = k1.clone();
    for step in 0..steps {
        let h = if step + 1 == steps {
            t_final - dt * step as f64
        } else {
            dt
        };
        f(y, &mut k1);
        add_scaled(y, 0.5 * h, &k1, &mut tmp);
        f(&tmp, &mut k2);
        add_scaled(y, 0.5 * h, &k2, &mut tmp);
        f(&tmp, &mut k3);
        add_scaled(y, h, &k3, &mut tmp);
        f(&tmp, &mut k4);
        let w = h / 6.0;
        for i in 0..n {
            y[i] += w * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}

fn expm_run(rhs: &LindbladRhs, rho: &mut Vec<C64>, t_final: f64, n_max: usize) -> Result<()> {
    let bound = rhs.norm_bound(n_max);
    taylor_exp_action(rho, t_final, bound, |x, out| rhs.apply(x, out))
}

/// y <- exp(t L) y via a substepped Taylor series. `bound` is an upper
/// bound on ||L||; substeps keep ||delta L|| <= 0.7 so the series
/// converges in a few dozen terms.
fn taylor_exp_action<F: Fn(&[C64], &mut [C64])>(
    y: &mut Vec<C64>,
    t_final: f64,
    bound: f64,
    f: F,
) -> Result<()> {
    let n = y.len();
    let substeps = ((t_final * bound / 0.7).ceil() as usize).max(1);
    let delta = t_final / substeps as f64;
    let mut term = vec![C64::new(0.0, 0.0); n];
    let mut next = term.clone();
    for _ in 0..substeps {
        term.copy_from_slice(y);
        let mut converged = false;
        for k in 1..=120 {
            f(&term, &mut next);
            let scale = delta / k as f64;
            for (t, x) in term.iter_mut().zip(&next) {
                *t = *x * scale;
            }
            let term_norm: f64 = term.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            let y_norm: f64 = y.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            for (yi, t) in y.iter_mut().zip(&term) {
                *yi += t;
            }
            if term_norm <= 1e-16 * y_norm.max(1e-300) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Numerical(
                "Liouvillian exponential Taylor series did not converge".into(),
            ));
        }
    }
    Ok(())
}

/// Halve the step and compare: returns the largest entry difference
/// between the dt and dt/2 evolutions of the same initial state.
pub fn convergence_check(
    basis: &FockBasis,
    h: &Array2<C64>,
    rates: &[f64],
    rho0: &Array2<C64>,
    cfg: &EvolutionConfig,
) -> Result<f64> {
    let full = evolve(basis, h, rates, rho0, cfg)?;
    let mut half_cfg = *cfg;
    half_cfg.dt = cfg.dt / 2.0;
    let half = evolve(basis, h, rates, rho0, &half_cfg)?;
    Ok(crate::linalg::max_abs_diff(&full, &half))
}

/// Dense Liouvillian superoperator acting on row-major vec(rho), for
/// cross-validation at small dimension: vec(A rho B) = (A kron B^T) vec(rho).
pub fn liouvillian_matrix(
    basis: &FockBasis,
    h: &Array2<C64>,
    rates: &[f64],
    sign: SignConvention,
) -> Result<Array2<C64>> {
    use crate::linalg::kron;
    let dim = basis.dim();
    if h.dim() != (dim, dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: h.dim().0,
        });
    }
    let eye = Array2::<C64>::eye(dim);
    let i_factor = match sign {
        SignConvention::Standard => C64::new(0.0, -1.0),
        SignConvention::Paper => C64::new(0.0, 1.0),
    };
    let ht = h.t().to_owned();
    let mut sup = kron(h, &eye).mapv(|z| z * i_factor) + kron(&eye, &ht).mapv(|z| z * (-i_factor));
    for (mode, &g) in rates.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let b = basis.annihilation(mode)?;
        let bconj = b.mapv(|z| z.conj());
        let n = basis.number(mode)?;
        let nt = n.t().to_owned();
        sup = sup + kron(&b, &bconj).mapv(|z| z * g);
        sup = sup - kron(&n, &eye).mapv(|z| z * (0.5 * g));
        sup = sup - kron(&eye, &nt).mapv(|z| z * (0.5 * g));
    }
    Ok(sup)
}

/// Disorder distribution for quasi-static parameter fluctuations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisorderDistribution {
    /// delta drawn uniformly from {-sigma, +sigma}.
    TwoPoint,
    /// delta drawn from Normal(0, sigma^2).
    Normal,
}

/// Which Hamiltonian parameters fluctuate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FluctuatingSet {
    pub delta: bool,
    pub hopping: bool,
    pub interaction: bool,
}

impl Default for FluctuatingSet {
    fn default() -> Self {
        FluctuatingSet {
            delta: true,
            hopping: true,
            interaction: false,
        }
    }
}

impl FluctuatingSet {
    pub fn is_empty(&self) -> bool {
        !(self.delta || self.hopping || self.interaction)
    }
}

/// A quasi-static disorder ensemble: each sample j draws one static
/// parameter set (the Hamiltonian is constant within a sample) from
/// independent, seeded RNG streams, so sample j is reproducible in
/// isolation and independent of how samples are scheduled.
///
/// Draw order within a sample is fixed: delta_0 .. delta_{L-1}, then
/// hopping, then interaction, skipping parameters that do not
/// fluctuate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DisorderEnsemble {
    pub base: HamiltonianParams,
    pub fluctuating: FluctuatingSet,
    pub distribution: DisorderDistribution,
    pub sigma: f64,
    pub samples: usize,
    pub master_seed: u64,
}

impl DisorderEnsemble {
    /// With sigma = 0 or nothing fluctuating every sample is identical,
    /// so one evolution represents the whole ensemble.
    pub fn effective_samples(&self) -> usize {
        if self.sigma == 0.0 || self.fluctuating.is_empty() {
            1
        } else {
            self.samples.max(1)
        }
    }

    /// Parameter draw for sample `j` (independent RNG stream j).
    pub fn sample_params(&self, j: usize) -> HamiltonianParams {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(j as u64);
        let mut p = self.base.clone();
        if self.fluctuating.delta {
            for d in p.delta.iter_mut() {
                *d += self.draw(&mut rng);
            }
        }
        if self.fluctuating.hopping {
            p.hopping += self.draw(&mut rng);
        }
        if self.fluctuating.interaction {
            p.interaction += self.draw(&mut rng);
        }
        p
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self.distribution {
            DisorderDistribution::TwoPoint => {
                if rng.random_bool(0.5) {
                    self.sigma
                } else {
                    -self.sigma
                }
            }
            DisorderDistribution::Normal => {
                let normal = rand_distr::Normal::new(0.0, self.sigma)
                    .expect("sigma validated non-negative");
                normal.sample(rng)
            }
        }
    }

    /// Apply `f` to every effective sample in parallel; results come
    /// back in sample order regardless of scheduling.
    pub fn map_samples<T, F>(&self, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize, &HamiltonianParams) -> Result<T> + Sync,
    {
        (0..self.effective_samples())
            .into_par_iter()
            .map(|j| {
                let p = self.sample_params(j);
                f(j, &p)
            })
            .collect()
    }

    /// Ensemble-averaged evolved density matrix
    /// rho^f = (1/s) sum_j rho^f_j. Summation is chunked with fixed
    /// boundaries so the result is independent of thread scheduling.
    pub fn ensemble_density(
        &self,
        basis: &FockBasis,
        rates: &[f64],
        rho0: &Array2<C64>,
        cfg: &EvolutionConfig,
    ) -> Result<Array2<C64>> {
        let eff = self.effective_samples();
        let dim = basis.dim();
        let indices: Vec<usize> = (0..eff).collect();
        let partials: Vec<Array2<C64>> = indices
            .par_chunks(8)
            .map(|chunk| {
                let mut acc = Array2::<C64>::zeros((dim, dim));
                for &j in chunk {
                    let p = self.sample_params(j);
                    let h = hamiltonian(basis, &p)?;
                    acc = acc + evolve(basis, &h, rates, rho0, cfg)?;
                }
                Ok(acc)
            })
            .collect::<Result<_>>()?;
        let mut total = Array2::<C64>::zeros((dim, dim));
        for p in partials {
            total = total + p;
        }
        Ok(total.mapv(|z| z / eff as f64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{expm, max_abs_diff, outer};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn single_mode_loss(gamma: f64, t: f64, check_positivity: bool) -> Array2<C64> {
        let basis = FockBasis::new(1, 1).unwrap();
        let h = Array2::<C64>::zeros((2, 2));
        let rho0 = array![[c(0.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(1.0, 0.0)]];
        let cfg = EvolutionConfig {
            t_final: t,
            check_positivity,
            ..Default::default()
        };
        evolve(&basis, &h, &[gamma], &rho0, &cfg).unwrap()
    }

    #[test]
    fn pure_loss_decays_exponentially() {
        // From |1>: rho_11(t) = exp(-gamma t), rho_00 = 1 - exp(-gamma t).
        let gamma = 0.02;
        let out = single_mode_loss(gamma, 1.0, true);
        let expect = (-gamma as f64).exp();
        assert_abs_diff_eq!(out[(1, 1)].re, expect, epsilon = 1e-9);
        assert_abs_diff_eq!(out[(0, 0)].re, 1.0 - expect, epsilon = 1e-9);
    }

    #[test]
    fn coherence_decays_at_half_rate() {
        // From |+> = (|0>+|1>)/sqrt(2): rho_01(t) = 0.5 exp(-gamma t / 2).
        let basis = FockBasis::new(1, 1).unwrap();
        let h = Array2::<C64>::zeros((2, 2));
        let psi = Array1::from_vec(vec![c(1.0 / 2f64.sqrt(), 0.0), c(1.0 / 2f64.sqrt(), 0.0)]);
        let rho0 = outer(&psi);
        let gamma = 0.3;
        let cfg = EvolutionConfig::default();
        let out = evolve(&basis, &h, &[gamma], &rho0, &cfg).unwrap();
        assert_abs_diff_eq!(out[(0, 1)].re, 0.5 * (-gamma / 2.0f64).exp(), epsilon = 1e-9);
        assert_abs_diff_eq!(out[(0, 1)].im, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn closed_two_level_rabi_oscillation() {
        // H = [[0,1],[1,0]] on a two-level truncation: |<0|psi(t)>|^2 = cos^2 t.
        let basis = FockBasis::new(1, 1).unwrap();
        let h = array![[c(0.0, 0.0), c(1.0, 0.0)], [c(1.0, 0.0), c(0.0, 0.0)]];
        let psi0 = Array1::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0)]);
        let cfg = EvolutionConfig::default();
        let out = evolve_state(&basis, &h, &psi0, &cfg).unwrap();
        assert_abs_diff_eq!(out[0].norm_sqr(), 1.0f64.cos().powi(2), epsilon = 1e-10);
        assert_abs_diff_eq!(out[1].norm_sqr(), 1.0f64.sin().powi(2), epsilon = 1e-10);
    }

    #[test]
    fn hamiltonian_restricted_to_single_excitation_block() {
        // On span{|1,0>, |0,1>} the chain Hamiltonian is [[d1, J], [J, d2]].
        let basis = FockBasis::new(2, 1).unwrap();
        let p = HamiltonianParams {
            delta: vec![0.7, -0.4],
            hopping: 0.3,
            interaction: 5.0, // no effect below double occupancy
        };
        let h = hamiltonian(&basis, &p).unwrap();
        let k10 = basis.index_of(&[1, 0]).unwrap();
        let k01 = basis.index_of(&[0, 1]).unwrap();
        assert_abs_diff_eq!(h[(k10, k10)].re, 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(h[(k01, k01)].re, -0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(h[(k10, k01)].re, 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(h[(k01, k10)].re, 0.3, epsilon = 1e-15);
    }

    #[test]
    fn hamiltonian_matches_operator_algebra() {
        let basis = FockBasis::new(2, 3).unwrap();
        let p = HamiltonianParams {
            delta: vec![0.21, -0.13],
            hopping: 0.17,
            interaction: 0.4,
        };
        let h = hamiltonian(&basis, &p).unwrap();
        // Independent construction from ladder operators.
        let dim = basis.dim();
        let mut ref_h = Array2::<C64>::zeros((dim, dim));
        for m in 0..2 {
            let n = basis.number(m).unwrap();
            ref_h = ref_h + n.mapv(|z| z * p.delta[m]);
            let n2 = n.dot(&n) - &n;
            ref_h = ref_h + n2.mapv(|z| z * (p.interaction / 2.0));
        }
        let hop = basis.creation(0).unwrap().dot(&basis.annihilation(1).unwrap());
        let hop_hc = crate::linalg::dagger(&hop);
        ref_h = ref_h + (hop + hop_hc).mapv(|z| z * p.hopping);
        assert!(max_abs_diff(&h, &ref_h) < 1e-12);
    }

    #[test]
    fn hamiltonian_is_hermitian_bitwise_and_conserves_number() {
        let basis = FockBasis::new(2, 4).unwrap();
        let p = HamiltonianParams {
            delta: vec![0.11, -0.07],
            hopping: 0.23,
            interaction: 0.05,
        };
        let h = hamiltonian(&basis, &p).unwrap();
        for i in 0..basis.dim() {
            for j in 0..basis.dim() {
                assert_eq!(h[(i, j)], h[(j, i)].conj());
            }
        }
        let n = basis.total_number().unwrap();
        let comm = h.dot(&n) - n.dot(&h);
        assert!(crate::linalg::frobenius(&comm) < 1e-12);
    }

    #[test]
    fn rk4_matches_liouvillian_exponential() {
        // Open two-mode system with hopping and loss; both integrators
        // and the dense superoperator must agree.
        let basis = FockBasis::new(2, 2).unwrap();
        let p = HamiltonianParams {
            delta: vec![0.5, -0.3],
            hopping: 0.4,
            interaction: 0.2,
        };
        let h = hamiltonian(&basis, &p).unwrap();
        let rates = [0.05, 0.08];
        let k = basis.index_of(&[1, 1]).unwrap();
        let mut psi = Array1::<C64>::zeros(basis.dim());
        psi[k] = c(1.0, 0.0);
        let rho0 = outer(&psi);

        let rk4 = evolve(&basis, &h, &rates, &rho0, &EvolutionConfig::default()).unwrap();
        let exp_cfg = EvolutionConfig {
            integrator: Integrator::LiouvillianExpm,
            ..Default::default()
        };
        let via_expm = evolve(&basis, &h, &rates, &rho0, &exp_cfg).unwrap();
        assert!(max_abs_diff(&rk4, &via_expm) < 1e-9);

        // Dense-superoperator route.
        let sup = liouvillian_matrix(&basis, &h, &rates, SignConvention::Standard).unwrap();
        let dim = basis.dim();
        let vec0 = Array1::from_iter(rho0.iter().cloned());
        let propagated = expm(&sup).dot(&vec0);
        let dense = Array2::from_shape_vec((dim, dim), propagated.to_vec()).unwrap();
        assert!(max_abs_diff(&rk4, &dense) < 1e-9);
    }

    #[test]
    fn paper_sign_convention_evolves_the_conjugate_trajectory() {
        let basis = FockBasis::new(2, 2).unwrap();
        let p = HamiltonianParams {
            delta: vec![0.3, -0.2],
            hopping: 0.25,
            interaction: 0.0,
        };
        let h = hamiltonian(&basis, &p).unwrap();
        let k = basis.index_of(&[1, 0]).unwrap();
        let mut psi = Array1::<C64>::zeros(basis.dim());
        psi[k] = c(1.0, 0.0);
        let rho0 = outer(&psi);
        let std = evolve(&basis, &h, &[0.01, 0.01], &rho0, &EvolutionConfig::default()).unwrap();
        let paper_cfg = EvolutionConfig {
            sign: SignConvention::Paper,
            ..Default::default()
        };
        let paper = evolve(&basis, &h, &[0.01, 0.01], &rho0, &paper_cfg).unwrap();
        // Real H, real rho0: the two conventions are complex conjugates.
        assert!(max_abs_diff(&paper, &std.mapv(|z| z.conj())) < 1e-12);
    }

    #[test]
    fn step_count_handles_non_divisible_horizons() {
        assert_eq!(step_count(1.0, 1e-3), 1000);
        assert_eq!(step_count(0.25, 0.1), 3);
        assert_eq!(step_count(1e-4, 1e-3), 1);
    }

    #[test]
    fn convergence_check_is_tiny_at_default_step() {
        let basis = FockBasis::new(1, 2).unwrap();
        let p = HamiltonianParams {
            delta: vec![0.8],
            hopping: 0.0,
            interaction: 0.3,
        };
        let h = hamiltonian(&basis, &p).unwrap();
        let mut psi = Array1::<C64>::zeros(3);
        psi[1] = c(1.0, 0.0);
        let rho0 = outer(&psi);
        let diff = convergence_check(&basis, &h, &[0.05], &rho0, &EvolutionConfig::default())
            .unwrap();
        assert!(diff < 1e-7, "dt self-check {diff}");
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let basis = FockBasis::new(1, 1).unwrap();
        let h = Array2::<C64>::zeros((2, 2));
        let rho = array![[c(0.5, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(0.5, 0.0)]];
        let bad_dt = EvolutionConfig {
            dt: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            evolve(&basis, &h, &[0.0], &rho, &bad_dt),
            Err(Error::InvalidTimeStep { .. })
        ));
        assert!(matches!(
            evolve(&basis, &h, &[-0.1], &rho, &EvolutionConfig::default()),
            Err(Error::NegativeRate { .. })
        ));
        let not_density = array![[c(0.9, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(0.5, 0.0)]];
        assert!(matches!(
            evolve(&basis, &h, &[0.0], &not_density, &EvolutionConfig::default()),
            Err(Error::InvalidState { .. })
        ));
    }

    #[test]
    fn two_point_dephasing_ensemble_matches_analytic_average() {
        // Single mode, fluctuating detuning only, gamma = 0, from
        // (|0>+|1>)/sqrt(2): the exact ensemble coherence is
        // rho_01(t) = 0.5 cos(sigma t) (mean of e^{+i sigma t}, e^{-i sigma t}).
        let basis = FockBasis::new(1, 1).unwrap();
        let sigma = 0.1;
        let ens = DisorderEnsemble {
            base: HamiltonianParams::zero(1),
            fluctuating: FluctuatingSet {
                delta: true,
                hopping: false,
                interaction: false,
            },
            distribution: DisorderDistribution::TwoPoint,
            sigma,
            samples: 4096,
            master_seed: 11,
        };
        let psi = Array1::from_vec(vec![c(1.0 / 2f64.sqrt(), 0.0), c(1.0 / 2f64.sqrt(), 0.0)]);
        let rho0 = outer(&psi);
        let out = ens
            .ensemble_density(&basis, &[0.0], &rho0, &EvolutionConfig::default())
            .unwrap();
        let expect = 0.5 * (sigma * 1.0f64).cos();
        // 4096 fair-coin draws: sampling error ~ 0.5 sigma t / sqrt(s).
        assert_abs_diff_eq!(out[(0, 1)].re, expect, epsilon = 2e-3);
        // Exact two-branch average for comparison.
        let mut exact = Array2::<C64>::zeros((2, 2));
        for s in [sigma, -sigma] {
            let p = HamiltonianParams {
                delta: vec![s],
                hopping: 0.0,
                interaction: 0.0,
            };
            let h = hamiltonian(&basis, &p).unwrap();
            exact = exact
                + evolve(&basis, &h, &[0.0], &rho0, &EvolutionConfig::default()).unwrap();
        }
        exact = exact.mapv(|z| z * 0.5);
        assert_abs_diff_eq!(exact[(0, 1)].re, expect, epsilon = 1e-9);
    }

    #[test]
    fn disorder_sampling_is_deterministic_and_ordered() {
        let ens = DisorderEnsemble {
            base: HamiltonianParams::zero(2),
            fluctuating: FluctuatingSet::default(),
            distribution: DisorderDistribution::Normal,
            sigma: 0.02,
            samples: 10,
            master_seed: 42,
        };
        let a = ens.sample_params(3);
        let b = ens.sample_params(3);
        assert_eq!(a, b);
        // Disabling a later parameter must not shift earlier draws.
        let mut ens2 = ens.clone();
        ens2.fluctuating.hopping = false;
        let c = ens2.sample_params(3);
        assert_eq!(a.delta, c.delta);
        assert_eq!(c.hopping, 0.0);
    }

    #[test]
    fn sigma_zero_collapses_to_a_single_sample() {
        let ens = DisorderEnsemble {
            base: HamiltonianParams {
                delta: vec![0.3],
                hopping: 0.0,
                interaction: 0.0,
            },
            fluctuating: FluctuatingSet::default(),
            distribution: DisorderDistribution::TwoPoint,
            sigma: 0.0,
            samples: 500,
            master_seed: 7,
        };
        assert_eq!(ens.effective_samples(), 1);
        let basis = FockBasis::new(1, 1).unwrap();
        let psi = Array1::from_vec(vec![c(1.0 / 2f64.sqrt(), 0.0), c(1.0 / 2f64.sqrt(), 0.0)]);
        let rho0 = outer(&psi);
        let ens_out = ens
            .ensemble_density(&basis, &[0.0], &rho0, &EvolutionConfig::default())
            .unwrap();
        let h = hamiltonian(&basis, &ens.base).unwrap();
        let single = evolve(&basis, &h, &[0.0], &rho0, &EvolutionConfig::default()).unwrap();
        assert_eq!(max_abs_diff(&ens_out, &single), 0.0);
    }

    #[test]
    fn closed_evolution_preserves_total_number_sectors() {
        let basis = FockBasis::new(2, 4).unwrap();
        let p = HamiltonianParams {
            delta: vec![0.2, -0.2],
            hopping: 0.4,
            interaction: 0.1,
        };
        let h = hamiltonian(&basis, &p).unwrap();
        let k = basis.index_of(&[3, 1]).unwrap();
        let mut psi = Array1::<C64>::zeros(basis.dim());
        psi[k] = c(1.0, 0.0);
        let cfg = EvolutionConfig::default();
        let out = evolve_state(&basis, &h, &psi, &cfg).unwrap();
        let leak: f64 = (0..basis.dim())
            .filter(|&i| basis.total_occupation(i) != 4)
            .map(|i| out[i].norm_sqr())
            .sum();
        assert!(leak < 1e-10, "sector leakage {leak}");
    }
}
