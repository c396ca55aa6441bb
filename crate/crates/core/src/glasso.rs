//! Sparse precision estimation by l1-penalized log-determinant
//! minimization:
//!
//! ```text
//! minimize over positive definite Theta:
//!     -log det(Theta) + tr(Theta S) + sum_ij Lambda_ij |Theta_ij|
//! ```
//!
//! The solver is blockwise coordinate descent over columns with an inner
//! cyclic coordinate-descent lasso (the GLASSO scheme). The working
//! covariance `W` is kept dense during descent; the precision `Theta` is
//! recovered from `W` and the final lasso coefficients, symmetrized by
//! averaging, and certified by its KKT residual before being returned.

use std::io::Write as IoWrite;

use nalgebra::DMatrix;

use crate::ensemble::{Ensemble, SymmetricMatrix};
use crate::error::{Error, Result};

/// Default KKT residual target.
pub const DEFAULT_TOL: f64 = 1e-6;
/// Default sweep budget for [`glasso_solve`].
pub const DEFAULT_MAX_SWEEPS: usize = 200;

/// Elementwise penalty weights: symmetric, nonnegative. A scalar penalty
/// is a constant matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix {
    entries: DMatrix<f64>,
}

impl PenaltyMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::DimensionMismatch("penalty matrix must be square".into()));
        }
        for i in 0..entries.nrows() {
            for j in 0..entries.ncols() {
                let v = entries[(i, j)];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "penalty entry ({i},{j}) = {v} must be finite and >= 0"
                    )));
                }
                if entries[(i, j)] != entries[(j, i)] {
                    return Err(Error::InvalidArgument(format!(
                        "penalty matrix not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(Self { entries })
    }

    /// Constant penalty `lambda` on every entry, diagonal included.
    pub fn constant(p: usize, lambda: f64) -> Result<Self> {
        Self::new(DMatrix::from_element(p, p, lambda))
    }

    /// Constant penalty on off-diagonals only (diagonal unpenalized).
    pub fn offdiag_constant(p: usize, lambda: f64) -> Result<Self> {
        let mut m = DMatrix::from_element(p, p, lambda);
        m.fill_diagonal(0.0);
        Self::new(m)
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    fn all_offdiag_zero(&self) -> bool {
        let p = self.dim();
        for i in 0..p {
            for j in (i + 1)..p {
                if self.entries[(i, j)] > 0.0 {
                    return false;
                }
            }
        }
        true
    }
}

/// Symmetric sparse matrix stored as upper-triangular coordinate
/// triplets `(i, j, value)` with `i <= j`, sorted; `s + p` stored values
/// for `s` off-diagonal pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymmetric {
    dim: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseSymmetric {
    /// Collect the nonzero upper triangle of a dense symmetric matrix.
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let dim = m.nrows();
        let mut entries = Vec::new();
        for j in 0..dim {
            for i in 0..=j {
                let v = m[(i, j)];
                if v != 0.0 {
                    entries.push((i, j, v));
                }
            }
        }
        Self { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Stored triplets (upper triangle, `i <= j`).
    pub fn triplets(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    /// Number of nonzero off-diagonal pairs.
    pub fn offdiag_pairs(&self) -> usize {
        self.entries.iter().filter(|(i, j, _)| i != j).count()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        match self.entries.binary_search_by(|&(ei, ej, _)| (ej, ei).cmp(&(b, a))) {
            Ok(k) => self.entries[k].2,
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for &(i, j, v) in &self.entries {
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        m
    }

    /// `sum_ij A_ij M_ij` against a dense symmetric matrix.
    pub fn trace_dot(&self, m: &DMatrix<f64>) -> f64 {
        let mut acc = 0.0;
        for &(i, j, v) in &self.entries {
            if i == j {
                acc += v * m[(i, j)];
            } else {
                acc += 2.0 * v * m[(i, j)];
            }
        }
        acc
    }

    /// Dump in MatrixMarket coordinate format (1-based, symmetric).
    pub fn write_matrix_market<W: IoWrite>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "%%MatrixMarket matrix coordinate real symmetric")?;
        writeln!(out, "{} {} {}", self.dim, self.dim, self.entries.len())?;
        // entries are stored with i <= j; MatrixMarket symmetric wants the
        // lower triangle, so emit (j+1, i+1)
        for &(i, j, v) in &self.entries {
            writeln!(out, "{} {} {}", j + 1, i + 1, v)?;
        }
        Ok(())
    }
}

/// A certified solution of the penalized problem: sparse precision
/// `theta`, its dense working inverse `w` (the penalized covariance), the
/// penalty it was solved with, and the implied subdifferential matrix.
#[derive(Debug, Clone)]
pub struct PrecisionEstimate {
    /// Sparse symmetric positive definite precision matrix.
    pub theta: SparseSymmetric,
    /// Dense working covariance `W ~= Theta^-1`.
    pub w: DMatrix<f64>,
    /// Penalty the problem was solved with.
    pub penalty: PenaltyMatrix,
    /// Number of nonzero off-diagonal pairs in `theta`.
    pub edge_count: usize,
    /// Subdifferential matrix: `(W - S)/Lambda` where the penalty is
    /// positive, `sign(Theta)` where it is zero. Entries lie in `[-1, 1]`
    /// up to solver tolerance.
    pub subgradient: DMatrix<f64>,
    /// KKT residual achieved by the solver.
    pub kkt_residual: f64,
    /// Sweeps used.
    pub sweeps: usize,
    /// Final lasso coefficients, kept for warm starts.
    pub(crate) beta: DMatrix<f64>,
}

impl PrecisionEstimate {
    /// Build an estimate directly from a dense precision matrix. Intended
    /// for diagnostics and tests; `w` is the exact inverse of `theta`.
    pub fn from_theta_dense(
        theta: &DMatrix<f64>,
        penalty: PenaltyMatrix,
        s: &SymmetricMatrix,
    ) -> Result<Self> {
        let p = theta.nrows();
        if penalty.dim() != p || s.dim() != p {
            return Err(Error::DimensionMismatch("from_theta_dense".into()));
        }
        let chol = nalgebra::Cholesky::new(theta.clone())
            .ok_or_else(|| Error::NotPositiveDefinite("theta".into()))?;
        let w = chol.inverse();
        let sparse = SparseSymmetric::from_dense(theta);
        let edge_count = sparse.offdiag_pairs();
        let subgradient = subgradient_matrix(&w, s.as_matrix(), &penalty, &sparse);
        let beta = DMatrix::zeros(p, p);
        let mut est = Self {
            theta: sparse,
            w,
            penalty,
            edge_count,
            subgradient,
            kkt_residual: f64::NAN,
            sweeps: 0,
            beta,
        };
        est.kkt_residual = kkt_residual(s, &est);
        Ok(est)
    }

    pub fn dim(&self) -> usize {
        self.theta.dim()
    }

    /// `log det Theta` via dense Cholesky.
    pub fn log_det(&self) -> Result<f64> {
        let dense = self.theta.to_dense();
        let chol = nalgebra::Cholesky::new(dense)
            .ok_or_else(|| Error::NotPositiveDefinite("theta".into()))?;
        Ok(2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
    }

    /// `tr(S Theta)` against a dense symmetric matrix.
    pub fn trace_dot(&self, s: &SymmetricMatrix) -> f64 {
        self.theta.trace_dot(s.as_matrix())
    }

    /// Objective value `-log det(Theta) + tr(Theta S) + sum Lambda|Theta|`.
    pub fn objective(&self, s: &SymmetricMatrix) -> Result<f64> {
        let mut penalty_term = 0.0;
        for &(i, j, v) in self.theta.triplets() {
            let lam = self.penalty.get(i, j);
            if i == j {
                penalty_term += lam * v.abs();
            } else {
                penalty_term += 2.0 * lam * v.abs();
            }
        }
        Ok(-self.log_det()? + self.trace_dot(s) + penalty_term)
    }

    /// `max_ij |Theta W - I|_ij`, a consistency check between the two
    /// stored factors.
    pub fn inverse_residual(&self) -> f64 {
        let prod = self.theta.to_dense() * &self.w;
        let p = self.dim();
        let mut worst = 0.0f64;
        for i in 0..p {
            for j in 0..p {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((prod[(i, j)] - target).abs());
            }
        }
        worst
    }
}

fn subgradient_matrix(
    w: &DMatrix<f64>,
    s: &DMatrix<f64>,
    penalty: &PenaltyMatrix,
    theta: &SparseSymmetric,
) -> DMatrix<f64> {
    let p = w.nrows();
    DMatrix::from_fn(p, p, |i, j| {
        let lam = penalty.get(i, j);
        if lam > 0.0 {
            (w[(i, j)] - s[(i, j)]) / lam
        } else {
            sign(theta.get(i, j))
        }
    })
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Stationarity residual of an estimate against the sample covariance it
/// was solved with:
///
/// * entries with `Theta_ij != 0`: `|S_ij - W_ij + Lambda_ij sign(Theta_ij)|`
/// * entries with `Theta_ij == 0`: `max(0, |S_ij - W_ij| - Lambda_ij)`
///
/// Zero at an exact solution.
pub fn kkt_residual(s: &SymmetricMatrix, est: &PrecisionEstimate) -> f64 {
    let p = est.dim();
    let sm = s.as_matrix();
    let mut worst = 0.0f64;
    for j in 0..p {
        for i in 0..=j {
            let th = est.theta.get(i, j);
            let lam = est.penalty.get(i, j);
            let diff = sm[(i, j)] - est.w[(i, j)];
            let r = if th != 0.0 {
                (diff + lam * sign(th)).abs()
            } else {
                (diff.abs() - lam).max(0.0)
            };
            worst = worst.max(r);
        }
    }
    worst
}

/// Inner lasso: `min_b 0.5 b'Vb - u'b + sum_i lam_i |b_i|` by cyclic
/// coordinate descent with active-set passes. `o` holds `V b` and is kept
/// in sync; `beta` is the warm start and the result.
#[allow(clippy::too_many_arguments)]
fn lasso_cd(
    v: &[f64],
    m: usize,
    u: &[f64],
    lam: &[f64],
    beta: &mut [f64],
    o: &mut [f64],
    inner_tol: f64,
    max_passes: usize,
) {
    // o = V beta for the warm start
    for x in o.iter_mut() {
        *x = 0.0;
    }
    for i in 0..m {
        let b = beta[i];
        if b != 0.0 {
            let col = &v[i * m..(i + 1) * m];
            for (ov, cv) in o.iter_mut().zip(col) {
                *ov += b * cv;
            }
        }
    }
    let mut full_pass = true;
    for _ in 0..max_passes {
        let mut max_change = 0.0f64;
        for i in 0..m {
            let b_old = beta[i];
            if !full_pass && b_old == 0.0 {
                continue;
            }
            let vii = v[i * m + i];
            let g = u[i] - (o[i] - vii * b_old);
            let b_new = soft_threshold(g, lam[i]) / vii;
            let d = b_new - b_old;
            if d != 0.0 {
                let col = &v[i * m..(i + 1) * m];
                for (ov, cv) in o.iter_mut().zip(col) {
                    *ov += d * cv;
                }
                beta[i] = b_new;
                max_change = max_change.max(d.abs());
            }
        }
        if max_change <= inner_tol {
            if full_pass {
                return;
            }
            // active set is stable; verify against all coordinates
            full_pass = true;
        } else {
            full_pass = false;
        }
    }
}

struct ColumnBuffers {
    v: Vec<f64>,
    u: Vec<f64>,
    lam: Vec<f64>,
    beta: Vec<f64>,
    o: Vec<f64>,
}

impl ColumnBuffers {
    fn new(m: usize) -> Self {
        Self {
            v: vec![0.0; m * m],
            u: vec![0.0; m],
            lam: vec![0.0; m],
            beta: vec![0.0; m],
            o: vec![0.0; m],
        }
    }
}

/// Solve the penalized problem for `S` and return a certified
/// [`PrecisionEstimate`]. Sweeping stops once the mean absolute change of
/// the off-diagonal `W` entries per sweep drops below
/// `tol * mean|S offdiagonal|` *and* the KKT residual is at most `tol`;
/// running past the first criterion until the residual certifies keeps the
/// returned estimate honest about its own optimality. `warm_start`
/// initializes `W` and the lasso coefficients from a previous solution and
/// must not change the result beyond tolerance.
pub fn glasso_solve(
    s: &SymmetricMatrix,
    penalty: &PenaltyMatrix,
    tol: f64,
    max_sweeps: usize,
    warm_start: Option<&PrecisionEstimate>,
) -> Result<PrecisionEstimate> {
    let p = s.dim();
    if penalty.dim() != p {
        return Err(Error::DimensionMismatch(format!(
            "S is {p}x{p} but penalty is {}x{}",
            penalty.dim(),
            penalty.dim()
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tol must be positive".into()));
    }
    let sm = s.as_matrix();
    for i in 0..p {
        if !(sm[(i, i)] > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "S has nonpositive diagonal entry {} at {i}",
                sm[(i, i)]
            )));
        }
    }
    if penalty.all_offdiag_zero() && p > 1 {
        // Unpenalized off-diagonals require a nonsingular S; reject
        // degenerate input up front instead of sweeping on it.
        if nalgebra::Cholesky::new(sm.clone()).is_none() {
            return Err(Error::Singular(
                "S is singular and the off-diagonal penalty is zero".into(),
            ));
        }
    }

    if p == 1 {
        let w11 = sm[(0, 0)] + penalty.get(0, 0);
        let theta = DMatrix::from_element(1, 1, 1.0 / w11);
        let sparse = SparseSymmetric::from_dense(&theta);
        let subgradient = subgradient_matrix(
            &DMatrix::from_element(1, 1, w11),
            sm,
            penalty,
            &sparse,
        );
        return Ok(PrecisionEstimate {
            theta: sparse,
            w: DMatrix::from_element(1, 1, w11),
            penalty: penalty.clone(),
            edge_count: 0,
            subgradient,
            kkt_residual: 0.0,
            sweeps: 0,
            beta: DMatrix::zeros(1, 1),
        });
    }

    // W starts at S with the penalized diagonal added; the diagonal is
    // exact at the solution and never updated again.
    let mut w = match warm_start {
        Some(prev) if prev.dim() == p => prev.w.clone(),
        _ => sm.clone(),
    };
    for i in 0..p {
        w[(i, i)] = sm[(i, i)] + penalty.get(i, i);
    }
    let mut b = match warm_start {
        Some(prev) if prev.dim() == p => prev.beta.clone(),
        _ => DMatrix::zeros(p, p),
    };

    let m = p - 1;
    let mut buf = ColumnBuffers::new(m);
    let inner_tol = (tol * 1e-2).max(1e-15);
    let offdiag_mean = {
        let mut acc = 0.0;
        for j in 0..p {
            for i in 0..p {
                if i != j {
                    acc += sm[(i, j)].abs();
                }
            }
        }
        acc / (p * (p - 1)) as f64
    };
    let sweep_threshold = tol * offdiag_mean;

    let mut best: Option<(DMatrix<f64>, f64)> = None;
    let mut sweeps_used = 0;
    for sweep in 1..=max_sweeps {
        sweeps_used = sweep;
        let mut delta_sum = 0.0;
        for j in 0..p {
            // V = W[-j,-j], u = S[-j,j], lam = Lambda[-j,j], beta = B[-j,j]
            for (lc, gc) in (0..p).filter(|&g| g != j).enumerate() {
                let col = w.column(gc);
                let mut lr = 0;
                for gr in 0..p {
                    if gr == j {
                        continue;
                    }
                    buf.v[lc * m + lr] = col[gr];
                    lr += 1;
                }
            }
            let mut lr = 0;
            for gr in 0..p {
                if gr == j {
                    continue;
                }
                buf.u[lr] = sm[(gr, j)];
                buf.lam[lr] = penalty.get(gr, j);
                buf.beta[lr] = b[(gr, j)];
                lr += 1;
            }

            lasso_cd(&buf.v, m, &buf.u, &buf.lam, &mut buf.beta, &mut buf.o, inner_tol, 100_000);

            // w12 = V beta, already accumulated in o
            let mut lr = 0;
            for gr in 0..p {
                if gr == j {
                    continue;
                }
                let new = buf.o[lr];
                delta_sum += (w[(gr, j)] - new).abs();
                w[(gr, j)] = new;
                w[(j, gr)] = new;
                b[(gr, j)] = buf.beta[lr];
                lr += 1;
            }
        }
        let mean_delta = delta_sum / (p * (p - 1)) as f64;
        if mean_delta <= sweep_threshold {
            if let Some(theta) = recover_theta(&w, &b) {
                let residual = kkt_residual_dense(sm, &w, &theta, penalty);
                let keep = match &best {
                    Some((_, r)) => residual < *r,
                    None => true,
                };
                if keep {
                    best = Some((theta, residual));
                }
                if residual <= tol {
                    break;
                }
            }
        }
    }

    let (theta_dense, residual) = match best {
        Some(pair) => pair,
        None => {
            let theta = recover_theta(&w, &b).ok_or(Error::NonConvergence {
                sweeps: sweeps_used,
                residual: f64::INFINITY,
            })?;
            let residual = kkt_residual_dense(sm, &w, &theta, penalty);
            (theta, residual)
        }
    };
    if residual > tol {
        return Err(Error::NonConvergence {
            sweeps: sweeps_used,
            residual,
        });
    }
    if nalgebra::Cholesky::new(theta_dense.clone()).is_none() {
        return Err(Error::NotPositiveDefinite("recovered theta".into()));
    }

    let sparse = SparseSymmetric::from_dense(&theta_dense);
    let edge_count = sparse.offdiag_pairs();
    let subgradient = subgradient_matrix(&w, sm, penalty, &sparse);
    Ok(PrecisionEstimate {
        theta: sparse,
        w,
        penalty: penalty.clone(),
        edge_count,
        subgradient,
        kkt_residual: residual,
        sweeps: sweeps_used,
        beta: b,
    })
}

/// `Theta` from the working covariance and lasso coefficients:
/// `theta_jj = 1/(w_jj - w12'beta_j)`, `theta_12 = -beta_j theta_jj`,
/// symmetrized by averaging. Exact zeros in `beta` stay exact zeros.
fn recover_theta(w: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let p = w.nrows();
    let mut theta = DMatrix::zeros(p, p);
    for j in 0..p {
        let mut dot = 0.0;
        for i in 0..p {
            if i != j {
                dot += w[(i, j)] * b[(i, j)];
            }
        }
        let denom = w[(j, j)] - dot;
        if !(denom > 0.0) || !denom.is_finite() {
            return None;
        }
        let tjj = 1.0 / denom;
        theta[(j, j)] = tjj;
        for i in 0..p {
            if i != j && b[(i, j)] != 0.0 {
                theta[(i, j)] = -b[(i, j)] * tjj;
            }
        }
    }
    // average; an entry is zero only when both directions agree it is
    for j in 0..p {
        for i in 0..j {
            let avg = 0.5 * (theta[(i, j)] + theta[(j, i)]);
            theta[(i, j)] = avg;
            theta[(j, i)] = avg;
        }
    }
    Some(theta)
}

fn kkt_residual_dense(
    s: &DMatrix<f64>,
    w: &DMatrix<f64>,
    theta: &DMatrix<f64>,
    penalty: &PenaltyMatrix,
) -> f64 {
    let p = s.nrows();
    let mut worst = 0.0f64;
    for j in 0..p {
        for i in 0..=j {
            let th = theta[(i, j)];
            let lam = penalty.get(i, j);
            let diff = s[(i, j)] - w[(i, j)];
            let r = if th != 0.0 {
                (diff + lam * sign(th)).abs()
            } else {
                (diff.abs() - lam).max(0.0)
            };
            worst = worst.max(r);
        }
    }
    worst
}

/// Penalized forecast covariance: solve the problem for the forecast
/// ensemble's sample covariance. The returned estimate's `w` is the
/// penalized forecast covariance and `theta` its sparse inverse.
pub fn penalized_forecast_cov(
    forecast: &Ensemble,
    penalty: &PenaltyMatrix,
    tol: f64,
    max_sweeps: usize,
) -> Result<PrecisionEstimate> {
    let s = forecast.sample_covariance();
    glasso_solve(&s, penalty, tol, max_sweeps, None)
}
