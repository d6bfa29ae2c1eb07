//! Small dense/sparse linear-algebra helpers for complex matrices.
//!
//! Everything here is deliberately simple and deterministic: fixed loop
//! orders, no threading, no fast-math. The integrators depend on that
//! for bit-identical reruns.

use ndarray::{Array1, Array2};

use crate::C64;

/// Conjugate transpose.
pub fn dagger(a: &Array2<C64>) -> Array2<C64> {
    let (r, c) = a.dim();
    Array2::from_shape_fn((c, r), |(i, j)| a[(j, i)].conj())
}

/// Matrix trace.
pub fn trace(a: &Array2<C64>) -> C64 {
    a.diag().sum()
}

/// Frobenius norm.
pub fn frobenius(a: &Array2<C64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Frobenius norm of the difference `a - b`.
pub fn frobenius_diff(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// Largest entry magnitude of the difference `a - b`.
pub fn max_abs_diff(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Outer product |psi><psi|.
pub fn outer(psi: &Array1<C64>) -> Array2<C64> {
    let d = psi.len();
    Array2::from_shape_fn((d, d), |(i, j)| psi[i] * psi[j].conj())
}

/// Eigenvalues of a Hermitian matrix by cyclic Jacobi rotations,
/// unsorted. Jacobi converges unconditionally, which matters for the
/// rank-deficient densities loss channels produce: shift-based QL
/// solvers can emit NaN on their highly degenerate zero clusters.
/// The non-Hermitian part of the input is discarded.
pub fn hermitian_eigenvalues(m: &Array2<C64>) -> Vec<f64> {
    let d = m.dim().0;
    debug_assert_eq!(m.dim().0, m.dim().1);
    let mut a: Vec<C64> = (0..d * d)
        .map(|idx| {
            let (i, j) = (idx / d, idx % d);
            (m[(i, j)] + m[(j, i)].conj()) * 0.5
        })
        .collect();
    let norm: f64 = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return vec![0.0; d];
    }
    let stop = 1e-15 * norm;
    let skip = stop / (d as f64);
    for _sweep in 0..50 {
        let off: f64 = (0..d)
            .flat_map(|p| ((p + 1)..d).map(move |q| (p, q)))
            .map(|(p, q)| a[p * d + q].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if off <= stop {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[p * d + q];
                let g = apq.norm();
                if g <= skip {
                    continue;
                }
                let phase = apq / g;
                let app = a[p * d + p].re;
                let aqq = a[q * d + q].re;
                // Zero the (p, q) entry: t = tan(theta) is the
                // smaller-magnitude root of t^2 - 2 tau t - 1 = 0.
                let tau = (aqq - app) / (2.0 * g);
                let t = if tau >= 0.0 {
                    -1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let col_p = phase.conj() * s;
                let col_q = -phase * s;
                for k in 0..d {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    let new_kp = akp * c + akq * col_p;
                    let new_kq = akp * col_q + akq * c;
                    a[k * d + p] = new_kp;
                    a[k * d + q] = new_kq;
                    a[p * d + k] = new_kp.conj();
                    a[q * d + k] = new_kq.conj();
                }
                a[p * d + p] = C64::new(app + t * g, 0.0);
                a[q * d + q] = C64::new(aqq - t * g, 0.0);
                a[p * d + q] = C64::new(0.0, 0.0);
                a[q * d + p] = C64::new(0.0, 0.0);
            }
        }
    }
    (0..d).map(|k| a[k * d + k].re).collect()
}

/// Kronecker product, row-major convention: `(a ⊗ b)[(i*p+k, j*q+l)] = a[i,j] b[k,l]`.
pub fn kron(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (m, n) = a.dim();
    let (p, q) = b.dim();
    let mut out = Array2::zeros((m * p, n * q));
    for i in 0..m {
        for j in 0..n {
            let aij = a[(i, j)];
            for k in 0..p {
                for l in 0..q {
                    out[(i * p + k, j * q + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Dense matrix exponential by scaling-and-squaring with a Taylor core.
/// Intended for test oracles and reference integrators at small
/// dimension; cost is O(d^3) per Taylor term.
pub fn expm(a: &Array2<C64>) -> Array2<C64> {
    let d = a.dim().0;
    assert_eq!(a.dim().0, a.dim().1, "expm needs a square matrix");
    let norm = frobenius(a);
    // Scale so the Taylor series converges fast: ||A/2^s|| <= 0.5.
    let s = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scale = C64::new(1.0 / f64::powi(2.0, s as i32), 0.0);
    let small = a.mapv(|z| z * scale);

    let mut result = Array2::<C64>::eye(d);
    let mut term = Array2::<C64>::eye(d);
    for k in 1..=60 {
        term = term.dot(&small).mapv(|z| z / C64::new(k as f64, 0.0));
        result = &result + &term;
        if frobenius(&term) < 1e-18 * frobenius(&result) {
            break;
        }
    }
    for _ in 0..s {
        result = result.dot(&result);
    }
    result
}

/// Compressed sparse-row view of a dense complex matrix. Entries with
/// magnitude at or below `tol` are dropped.
#[derive(Debug, Clone)]
pub struct Csr {
    pub dim: usize,
    pub row_ptr: Vec<usize>,
    pub col: Vec<usize>,
    pub val: Vec<C64>,
}

impl Csr {
    pub fn from_dense(a: &Array2<C64>, tol: f64) -> Self {
        let (r, c) = a.dim();
        assert_eq!(r, c, "sparse view expects a square matrix");
        let mut row_ptr = Vec::with_capacity(r + 1);
        let mut col = Vec::new();
        let mut val = Vec::new();
        row_ptr.push(0);
        for i in 0..r {
            for j in 0..c {
                let v = a[(i, j)];
                if v.norm() > tol {
                    col.push(j);
                    val.push(v);
                }
            }
            row_ptr.push(col.len());
        }
        Csr {
            dim: r,
            row_ptr,
            col,
            val,
        }
    }

    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    pub fn is_empty(&self) -> bool {
        self.val.is_empty()
    }

    /// y += scale * A x
    pub fn matvec_acc(&self, x: &[C64], scale: C64, y: &mut [C64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(y.len(), self.dim);
        for i in 0..self.dim {
            let mut acc = C64::new(0.0, 0.0);
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.val[k] * x[self.col[k]];
            }
            y[i] += scale * acc;
        }
    }

    /// out += scale * A rho, with `rho` and `out` dense row-major square
    /// buffers of dimension `dim`. Row-oriented: each sparse entry
    /// contributes a contiguous row axpy.
    pub fn left_mul_acc(&self, rho: &[C64], scale: C64, out: &mut [C64]) {
        let d = self.dim;
        debug_assert_eq!(rho.len(), d * d);
        debug_assert_eq!(out.len(), d * d);
        for i in 0..d {
            let out_row = &mut out[i * d..(i + 1) * d];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let f = scale * self.val[k];
                let src = &rho[self.col[k] * d..(self.col[k] + 1) * d];
                for (o, s) in out_row.iter_mut().zip(src) {
                    *o += f * s;
                }
            }
        }
    }

    /// out += scale * rho A, same buffer conventions as [`Csr::left_mul_acc`].
    /// Iterates rows of `rho` outermost so all accesses stay row-local.
    pub fn right_mul_acc(&self, rho: &[C64], scale: C64, out: &mut [C64]) {
        let d = self.dim;
        debug_assert_eq!(rho.len(), d * d);
        debug_assert_eq!(out.len(), d * d);
        for r in 0..d {
            let rho_row = &rho[r * d..(r + 1) * d];
            let out_row = &mut out[r * d..(r + 1) * d];
            for m in 0..d {
                let x = rho_row[m];
                if x == C64::new(0.0, 0.0) {
                    continue;
                }
                for k in self.row_ptr[m]..self.row_ptr[m + 1] {
                    out_row[self.col[k]] += scale * x * self.val[k];
                }
            }
        }
    }
}

/// y = a + s*b elementwise over complex slices.
pub fn add_scaled(a: &[C64], s: f64, b: &[C64], y: &mut [C64]) {
    debug_assert_eq!(a.len(), b.len());
    debug_assert_eq!(a.len(), y.len());
    for ((yi, ai), bi) in y.iter_mut().zip(a).zip(b) {
        *yi = ai + s * bi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn dagger_conjugates_and_transposes() {
        let a = array![[c(1.0, 2.0), c(3.0, -1.0)], [c(0.0, 0.5), c(-2.0, 0.0)]];
        let ad = dagger(&a);
        assert_eq!(ad[(0, 1)], c(0.0, -0.5));
        assert_eq!(ad[(1, 0)], c(3.0, 1.0));
    }

    #[test]
    fn expm_matches_scalar_exponential_on_diagonal() {
        let a = array![[c(0.3, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(0.0, -1.2)]];
        let e = expm(&a);
        assert_abs_diff_eq!(e[(0, 0)].re, 0.3f64.exp(), epsilon = 1e-14);
        assert_abs_diff_eq!(e[(1, 1)].re, (-1.2f64).cos(), epsilon = 1e-14);
        assert_abs_diff_eq!(e[(1, 1)].im, -(-1.2f64).sin().abs(), epsilon = 1e-14);
    }

    #[test]
    fn expm_of_pauli_x_rotation() {
        // exp(-i t X) = cos(t) I - i sin(t) X
        let t = 0.7;
        let a = array![[c(0.0, 0.0), c(0.0, -t)], [c(0.0, -t), c(0.0, 0.0)]];
        let e = expm(&a);
        assert_abs_diff_eq!(e[(0, 0)].re, t.cos(), epsilon = 1e-13);
        assert_abs_diff_eq!(e[(0, 1)].im, -t.sin(), epsilon = 1e-13);
    }

    #[test]
    fn csr_matvec_matches_dense() {
        let a = array![
            [c(1.0, 0.0), c(0.0, 0.0), c(2.0, 1.0)],
            [c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)],
            [c(0.0, -1.0), c(3.0, 0.0), c(0.0, 0.0)]
        ];
        let s = Csr::from_dense(&a, 0.0);
        assert_eq!(s.nnz(), 4);
        let x = vec![c(1.0, 0.0), c(0.0, 1.0), c(2.0, 0.0)];
        let mut y = vec![c(0.0, 0.0); 3];
        s.matvec_acc(&x, c(1.0, 0.0), &mut y);
        assert_eq!(y[0], c(5.0, 2.0));
        assert_eq!(y[1], c(0.0, 0.0));
        assert_eq!(y[2], c(0.0, 2.0));
    }

    #[test]
    fn csr_left_right_mul_match_dense_products() {
        let a = array![
            [c(0.0, 0.0), c(1.5, 0.0), c(0.0, 0.0)],
            [c(1.5, 0.0), c(0.2, 0.0), c(0.0, -2.0)],
            [c(0.0, 0.0), c(0.0, 2.0), c(0.0, 0.0)]
        ];
        let rho = array![
            [c(0.5, 0.0), c(0.1, 0.2), c(0.0, 0.0)],
            [c(0.1, -0.2), c(0.3, 0.0), c(0.0, 0.1)],
            [c(0.0, 0.0), c(0.0, -0.1), c(0.2, 0.0)]
        ];
        let s = Csr::from_dense(&a, 0.0);
        let mut left = vec![c(0.0, 0.0); 9];
        let mut right = vec![c(0.0, 0.0); 9];
        s.left_mul_acc(rho.as_slice().unwrap(), c(1.0, 0.0), &mut left);
        s.right_mul_acc(rho.as_slice().unwrap(), c(1.0, 0.0), &mut right);
        let dense_left = a.dot(&rho);
        let dense_right = rho.dot(&a);
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(left[i * 3 + j].re, dense_left[(i, j)].re, epsilon = 1e-15);
                assert_abs_diff_eq!(left[i * 3 + j].im, dense_left[(i, j)].im, epsilon = 1e-15);
                assert_abs_diff_eq!(right[i * 3 + j].re, dense_right[(i, j)].re, epsilon = 1e-15);
                assert_abs_diff_eq!(right[i * 3 + j].im, dense_right[(i, j)].im, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn kron_dimensions_and_entries() {
        let a = array![[c(1.0, 0.0), c(2.0, 0.0)]];
        let b = array![[c(0.0, 1.0)], [c(3.0, 0.0)]];
        let k = kron(&a, &b);
        assert_eq!(k.dim(), (2, 2));
        assert_eq!(k[(0, 1)], c(0.0, 2.0));
        assert_eq!(k[(1, 0)], c(3.0, 0.0));
    }

    fn sorted_eigs(m: &Array2<C64>) -> Vec<f64> {
        let mut e = hermitian_eigenvalues(m);
        e.sort_by(|a, b| a.partial_cmp(b).unwrap());
        e
    }

    #[test]
    fn hermitian_eigenvalues_two_by_two_closed_form() {
        // [[0, 0.1], [0.1, 1]] has eigenvalues (1 +- sqrt(1.04)) / 2.
        let m = array![[c(0.0, 0.0), c(0.1, 0.0)], [c(0.1, 0.0), c(1.0, 0.0)]];
        let e = sorted_eigs(&m);
        let root = 1.04f64.sqrt();
        assert_abs_diff_eq!(e[0], (1.0 - root) / 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e[1], (1.0 + root) / 2.0, epsilon = 1e-14);
    }

    #[test]
    fn hermitian_eigenvalues_match_characteristic_invariants() {
        // Random dense Hermitian matrix: eigenvalue sums must reproduce
        // tr(A) and tr(A^2), and eigenvectors are never needed here.
        let d = 8;
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let raw = Array2::from_shape_fn((d, d), |_| c(next(), next()));
        let m = (&raw + &dagger(&raw)) * c(0.5, 0.0);
        let e = sorted_eigs(&m);
        let tr: f64 = (0..d).map(|i| m[(i, i)].re).sum();
        let tr2: f64 = m.iter().map(|z| z.norm_sqr()).sum();
        assert_abs_diff_eq!(e.iter().sum::<f64>(), tr, epsilon = 1e-12);
        assert_abs_diff_eq!(e.iter().map(|x| x * x).sum::<f64>(), tr2, epsilon = 1e-12);
    }

    #[test]
    fn hermitian_eigenvalues_rank_one_projector() {
        // vv^dag at dim 30: spectrum is {|v|^2, 0, ..., 0}. Degenerate
        // zero clusters are exactly the case shift-based solvers choke on.
        let d = 30;
        let v: Vec<C64> = (0..d)
            .map(|k| c((k as f64 * 0.37).sin(), (k as f64 * 0.11).cos()))
            .collect();
        let m = Array2::from_shape_fn((d, d), |(i, j)| v[i] * v[j].conj());
        let norm_sq: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        let e = sorted_eigs(&m);
        assert!(e.iter().all(|x| x.is_finite()));
        assert_abs_diff_eq!(e[d - 1], norm_sq, epsilon = 1e-12 * norm_sq);
        for &x in &e[..d - 1] {
            assert_abs_diff_eq!(x, 0.0, epsilon = 1e-12 * norm_sq);
        }
    }

    #[test]
    fn hermitian_eigenvalues_low_rank_mixture_stays_positive() {
        // Rank-3 density-like matrix at dim 40; all eigenvalues finite,
        // none below -1e-12, three of them recover the mixture weights.
        let d = 40;
        let weights = [0.6, 0.3, 0.1];
        let mut m = Array2::<C64>::zeros((d, d));
        for (s, &w) in weights.iter().enumerate() {
            let v: Vec<C64> = (0..d)
                .map(|k| {
                    let ph = 0.23 * (k * (s + 1)) as f64;
                    c(ph.cos(), ph.sin()) / (d as f64).sqrt()
                })
                .collect();
            for i in 0..d {
                for j in 0..d {
                    m[(i, j)] += v[i] * v[j].conj() * w;
                }
            }
        }
        let e = sorted_eigs(&m);
        assert!(e.iter().all(|x| x.is_finite()));
        assert!(e[0] >= -1e-12, "min eigenvalue {}", e[0]);
        let top: f64 = e[d - 3..].iter().sum();
        assert_abs_diff_eq!(top, weights.iter().sum::<f64>(), epsilon = 1e-10);
    }

    #[test]
    fn hermitian_eigenvalues_zero_matrix() {
        let m = Array2::<C64>::zeros((5, 5));
        assert_eq!(hermitian_eigenvalues(&m), vec![0.0; 5]);
    }
}
