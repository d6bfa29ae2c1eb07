//! Affine regression from proxy transfer matrices to code-space ones.
//!
//! Model: vec(T) = A vec(T') + B with A a 16x16 real matrix, B a
//! 16-vector, and vec the row-major flattening over (I, X, Y, Z).
//!
//! Two costs are supported. `squared` minimizes sum_i ||r_i||^2 and has
//! the closed linear-least-squares form: every output component sees
//! the same N x 17 design matrix [vec(T'_i), 1], solved by SVD with
//! minimum-norm fallback when the design is rank deficient.
//! `sum-of-norms` minimizes sum_i ||r_i|| (non-smooth at zero), handled
//! by BFGS on the smoothed objective sum_i sqrt(||r_i||^2 + eps^2),
//! started from the squared solution. Both fits are deterministic.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::tomography::Lptm;
use crate::{Error, Result};

pub const VECTORIZATION: &str = "row-major-IXYZ";
pub const DEFAULT_SMOOTHING_EPS: f64 = 1e-9;

/// Row-major flattening of a transfer matrix over (I, X, Y, Z).
pub fn vec16(rows: &[[f64; 4]; 4]) -> [f64; 16] {
    let mut v = [0.0; 16];
    for i in 0..4 {
        for j in 0..4 {
            v[4 * i + j] = rows[i][j];
        }
    }
    v
}

pub fn unvec16(v: &[f64; 16]) -> [[f64; 4]; 4] {
    let mut rows = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            rows[i][j] = v[4 * i + j];
        }
    }
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMethod {
    Squared,
    SumOfNorms,
}

/// Paired proxy/code transfer matrices. Detection tags must be uniform
/// within the proxy column and within the code column.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub pairs: Vec<(Lptm, Lptm)>,
}

impl TrainingSet {
    pub fn new(pairs: Vec<(Lptm, Lptm)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        let proxy_tag = pairs[0].0.detection;
        let code_tag = pairs[0].1.detection;
        for (p, c) in &pairs {
            if p.detection != proxy_tag || c.detection != code_tag {
                return Err(Error::InvalidState {
                    reason: "training set mixes detection tags".into(),
                });
            }
            for rows in [&p.rows, &c.rows] {
                if rows.iter().flatten().any(|x| !x.is_finite()) {
                    return Err(Error::Numerical(
                        "non-finite entry in training transfer matrix".into(),
                    ));
                }
            }
        }
        Ok(TrainingSet { pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    /// Row-major 16x16 matrix: a[i][j] weights input component j in
    /// output component i.
    pub a: [[f64; 16]; 16],
    pub b: [f64; 16],
    pub method: FitMethod,
    pub code: Option<String>,
    pub proxy: Option<String>,
    pub seed: Option<u64>,
    /// Value of the trained cost at the solution.
    pub residual: f64,
    /// Design matrix rank fell short of 17: minimum-norm solution.
    pub underdetermined: bool,
}

impl AffineMap {
    pub fn identity() -> Self {
        let mut a = [[0.0; 16]; 16];
        for (i, row) in a.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        AffineMap {
            a,
            b: [0.0; 16],
            method: FitMethod::Squared,
            code: None,
            proxy: None,
            seed: None,
            residual: 0.0,
            underdetermined: false,
        }
    }

    pub fn apply_vec(&self, x: &[f64; 16]) -> [f64; 16] {
        let mut y = self.b;
        for i in 0..16 {
            for j in 0..16 {
                y[i] += self.a[i][j] * x[j];
            }
        }
        y
    }

    pub fn apply_rows(&self, rows: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
        unvec16(&self.apply_vec(&vec16(rows)))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "A": self.a,
            "B": self.b,
            "vectorization": VECTORIZATION,
            "method": self.method,
            "code": self.code,
            "proxy": self.proxy,
            "seed": self.seed,
            "residual": self.residual,
            "underdetermined": self.underdetermined,
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let vectorization = v["vectorization"].as_str().unwrap_or_default();
        if vectorization != VECTORIZATION {
            return Err(Error::Numerical(format!(
                "unsupported vectorization {vectorization:?}, expected {VECTORIZATION:?}"
            )));
        }
        let a: [[f64; 16]; 16] = serde_json::from_value(v["A"].clone())
            .map_err(|e| Error::Numerical(format!("bad map matrix A: {e}")))?;
        let b: [f64; 16] = serde_json::from_value(v["B"].clone())
            .map_err(|e| Error::Numerical(format!("bad map offset B: {e}")))?;
        let method: FitMethod = serde_json::from_value(v["method"].clone())
            .map_err(|e| Error::Numerical(format!("bad fit method: {e}")))?;
        Ok(AffineMap {
            a,
            b,
            method,
            code: v["code"].as_str().map(String::from),
            proxy: v["proxy"].as_str().map(String::from),
            seed: v["seed"].as_u64(),
            residual: v["residual"].as_f64().unwrap_or(0.0),
            underdetermined: v["underdetermined"].as_bool().unwrap_or(false),
        })
    }
}

/// Apply the map to a transfer matrix, preserving the detection tag
/// and marking the result as mapped.
pub fn apply_affine(map: &AffineMap, t: &Lptm) -> Lptm {
    let mut out = t.clone();
    out.rows = map.apply_rows(&t.rows);
    out.metadata.mapped = true;
    out
}

/// Exact (unsmoothed) cost of a map on a training set.
pub fn affine_cost(map: &AffineMap, data: &TrainingSet, method: FitMethod) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let mut total = 0.0;
    for (proxy, code) in &data.pairs {
        let pred = map.apply_vec(&vec16(&proxy.rows));
        let truth = vec16(&code.rows);
        let sq: f64 = pred
            .iter()
            .zip(truth.iter())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        total += match method {
            FitMethod::Squared => sq,
            FitMethod::SumOfNorms => sq.sqrt(),
        };
    }
    Ok(total)
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub smoothing_eps: f64,
    pub max_iterations: usize,
    pub gradient_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            smoothing_eps: DEFAULT_SMOOTHING_EPS,
            max_iterations: 2000,
            gradient_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub map: AffineMap,
    /// Rank of the N x 17 design matrix.
    pub rank: usize,
    /// BFGS iterations (zero for the closed-form method).
    pub iterations: usize,
}

/// Fit the affine map. See the module docs for the two cost functions.
pub fn fit_affine(data: &TrainingSet, method: FitMethod, options: &FitOptions) -> Result<FitReport> {
    if data.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let n = data.len();
    let xs: Vec<[f64; 16]> = data.pairs.iter().map(|(p, _)| vec16(&p.rows)).collect();
    let ys: Vec<[f64; 16]> = data.pairs.iter().map(|(_, c)| vec16(&c.rows)).collect();

    // Shared design matrix: row k = [vec(T'_k), 1].
    let design = DMatrix::from_fn(n, 17, |k, j| if j < 16 { xs[k][j] } else { 1.0 });
    let rhs = DMatrix::from_fn(n, 16, |k, i| ys[k][i]);
    let svd = nalgebra::SVD::new(design.clone(), true, true);
    let sv_max = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let eps = sv_max * 17.0f64.max(n as f64) * f64::EPSILON;
    let rank = svd.rank(eps);
    let w = svd
        .solve(&rhs, eps)
        .map_err(|e| Error::Numerical(format!("least-squares solve failed: {e}")))?;

    let mut map = AffineMap::identity();
    for i in 0..16 {
        for j in 0..16 {
            map.a[i][j] = w[(j, i)];
        }
        map.b[i] = w[(16, i)];
    }
    map.method = method;
    map.underdetermined = rank < 17;

    let mut iterations = 0;
    if matches!(method, FitMethod::SumOfNorms) {
        let mut params = DVector::zeros(272);
        for i in 0..16 {
            for j in 0..16 {
                params[16 * i + j] = map.a[i][j];
            }
            params[256 + i] = map.b[i];
        }
        iterations = bfgs_smoothed(&mut params, &xs, &ys, options);
        for i in 0..16 {
            for j in 0..16 {
                map.a[i][j] = params[16 * i + j];
            }
            map.b[i] = params[256 + i];
        }
    }
    let dataset = TrainingSet {
        pairs: data.pairs.clone(),
    };
    map.residual = affine_cost(&map, &dataset, method)?;
    Ok(FitReport {
        map,
        rank,
        iterations,
    })
}

/// Smoothed sum-of-norms objective and gradient at `params`.
fn smoothed_cost_grad(
    params: &DVector<f64>,
    xs: &[[f64; 16]],
    ys: &[[f64; 16]],
    eps: f64,
) -> (f64, DVector<f64>) {
    let mut f = 0.0;
    let mut grad = DVector::zeros(272);
    for (x, y) in xs.iter().zip(ys.iter()) {
        let mut r = [0.0f64; 16];
        for i in 0..16 {
            let mut acc = params[256 + i] - y[i];
            let row = 16 * i;
            for j in 0..16 {
                acc += params[row + j] * x[j];
            }
            r[i] = acc;
        }
        let norm_sq: f64 = r.iter().map(|v| v * v).sum();
        let s = (norm_sq + eps * eps).sqrt();
        f += s;
        for i in 0..16 {
            let w = r[i] / s;
            let row = 16 * i;
            for j in 0..16 {
                grad[row + j] += w * x[j];
            }
            grad[256 + i] += w;
        }
    }
    (f, grad)
}

/// BFGS with Armijo backtracking. Returns the iteration count; updates
/// `params` in place. Inverse-Hessian updates are skipped when the
/// curvature condition fails, so the approximation stays positive
/// definite.
fn bfgs_smoothed(
    params: &mut DVector<f64>,
    xs: &[[f64; 16]],
    ys: &[[f64; 16]],
    options: &FitOptions,
) -> usize {
    let n = params.len();
    let eps = options.smoothing_eps;
    let mut h = DMatrix::<f64>::identity(n, n);
    let (mut f, mut g) = smoothed_cost_grad(params, xs, ys, eps);
    let mut iterations = 0;
    for _ in 0..options.max_iterations {
        if g.amax() <= options.gradient_tol * (1.0 + f.abs()) {
            break;
        }
        let mut dir = -(&h * &g);
        let mut slope = g.dot(&dir);
        if slope >= 0.0 {
            h = DMatrix::identity(n, n);
            dir = -g.clone();
            slope = g.dot(&dir);
        }
        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-20 {
            let trial = &*params + &dir * step;
            let (ft, gt) = smoothed_cost_grad(&trial, xs, ys, eps);
            if ft <= f + 1e-4 * step * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, ft, gt)) = accepted else {
            break;
        };
        iterations += 1;
        let s = &trial - &*params;
        let yv = &gt - &g;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            let hy = &h * &yv;
            let yhy = yv.dot(&hy);
            let c = (sy + yhy) / (sy * sy);
            h += &s * s.transpose() * c;
            h -= (&hy * s.transpose() + &s * hy.transpose()) / sy;
        }
        let stalled = (f - ft).abs() <= 1e-15 * (1.0 + f.abs());
        *params = trial;
        f = ft;
        g = gt;
        if stalled {
            break;
        }
    }
    iterations
}
