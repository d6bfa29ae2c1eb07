//! Decomposition of an LPTM into interpretable noise measures.
//!
//! Writing the matrix over (I, X, Y, Z) as
//!
//! ```text
//!     | 1 - l  .  .  . |        leakage row    i = 0
//! T = |  m                |
//!     |  m        B       |     3x3 Bloch block over (X, Y, Z)
//!     |  m                |
//! ```
//!
//! the block is split by SVD, B = U D V^T, into a proper rotation
//! R = U V^T (coherent error) and singular values (decoherence). When
//! det(U V^T) < 0 the column of U belonging to the smallest singular
//! value is flipped together with the sign of that value, so R is
//! always a rotation and the reflection lives in the spectrum.

use nalgebra::{Matrix3, SVD};

use crate::tomography::Lptm;

/// Scalar noise measures of a logical transfer matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseDecomposition {
    /// sqrt((1 - T_II)^2 + sum_j T_I,j^2): trace lost from the code
    /// space plus Pauli-dependent leakage.
    pub leakage: f64,
    /// Norm of the (X, Y, Z) components of the image of I.
    pub nonunital: f64,
    /// Proper rotation U V^T acting on the Bloch block.
    pub rotation: Matrix3<f64>,
    /// Singular values, descending by magnitude; the last entry is
    /// negative when the block contains a reflection.
    pub singular_values: [f64; 3],
    /// ||I - U V^T||_F: coherent (unitary) error strength.
    pub coherent: f64,
    /// ||D||_F: sqrt(3) for a noiseless block, shrinking with
    /// decoherence.
    pub decoherence_norm: f64,
    /// ||I - D||_F: zero for a noiseless block.
    pub decoherence_deviation: f64,
}

/// Decompose a transfer matrix given as rows over (I, X, Y, Z).
pub fn decompose(rows: &[[f64; 4]; 4]) -> NoiseDecomposition {
    let leakage = {
        let mut acc = (1.0 - rows[0][0]) * (1.0 - rows[0][0]);
        for j in 1..4 {
            acc += rows[0][j] * rows[0][j];
        }
        acc.sqrt()
    };
    let nonunital = (rows[1][0] * rows[1][0]
        + rows[2][0] * rows[2][0]
        + rows[3][0] * rows[3][0])
        .sqrt();

    let block = Matrix3::from_fn(|i, j| rows[i + 1][j + 1]);
    let svd = SVD::new(block, true, true);
    let mut u = svd.u.expect("3x3 SVD always yields U");
    let v_t = svd.v_t.expect("3x3 SVD always yields V^T");
    let mut d = [
        svd.singular_values[0],
        svd.singular_values[1],
        svd.singular_values[2],
    ];
    if (u * v_t).determinant() < 0.0 {
        for i in 0..3 {
            u[(i, 2)] = -u[(i, 2)];
        }
        d[2] = -d[2];
    }
    let rotation = u * v_t;
    let coherent = (Matrix3::identity() - rotation).norm();
    let decoherence_norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let decoherence_deviation =
        ((1.0 - d[0]).powi(2) + (1.0 - d[1]).powi(2) + (1.0 - d[2]).powi(2)).sqrt();
    NoiseDecomposition {
        leakage,
        nonunital,
        rotation,
        singular_values: d,
        coherent,
        decoherence_norm,
        decoherence_deviation,
    }
}

pub fn decompose_lptm(t: &Lptm) -> NoiseDecomposition {
    decompose(&t.rows)
}
