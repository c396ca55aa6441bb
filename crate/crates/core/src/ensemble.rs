//! Ensembles, sample moments and the elementary numerics shared by all
//! filters.
//!
//! States live in `R^p` and an ensemble is a `p x n` matrix whose columns
//! are members. All matrices in this module are dense; sparsity only
//! appears in the precision estimates of the `glasso` module.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// A state vector in `R^p`.
pub type StateVector = DVector<f64>;

/// A symmetric `p x p` matrix. Symmetry holds by construction: the
/// checked constructor rejects asymmetric input and [`SymmetricMatrix::symmetrize`]
/// averages an almost-symmetric one.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    m: DMatrix<f64>,
}

impl SymmetricMatrix {
    /// Wrap a matrix that is already symmetric (entrywise, exactly).
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        for i in 0..m.nrows() {
            for j in (i + 1)..m.ncols() {
                if m[(i, j)] != m[(j, i)] {
                    return Err(Error::InvalidArgument(format!(
                        "matrix not symmetric at ({i},{j}): {} vs {}",
                        m[(i, j)],
                        m[(j, i)]
                    )));
                }
            }
        }
        Ok(Self { m })
    }

    /// Symmetrize by averaging `(M + M^T)/2`.
    pub fn symmetrize(m: &DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let sym = (m + m.transpose()) * 0.5;
        Ok(Self { m: sym })
    }

    /// Identity of the given dimension.
    pub fn identity(p: usize) -> Self {
        Self {
            m: DMatrix::identity(p, p),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    /// Elementwise (Schur) product with another symmetric matrix.
    pub fn schur(&self, other: &SymmetricMatrix) -> Result<SymmetricMatrix> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch(format!(
                "schur product of {}x{} with {}x{}",
                self.dim(),
                self.dim(),
                other.dim(),
                other.dim()
            )));
        }
        Ok(SymmetricMatrix {
            m: self.m.component_mul(&other.m),
        })
    }
}

/// A diagonal covariance with strictly positive variances.
///
/// Zero noise is not a degenerate `DiagonalCovariance`; operations that
/// allow a noiseless path take `Option<&DiagonalCovariance>` instead.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalCovariance {
    variances: DVector<f64>,
}

impl DiagonalCovariance {
    pub fn new(variances: DVector<f64>) -> Result<Self> {
        if variances.is_empty() {
            return Err(Error::InvalidArgument("empty variance vector".into()));
        }
        if variances.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "variances must be finite and strictly positive".into(),
            ));
        }
        Ok(Self { variances })
    }

    /// Uniform variance `var` in every coordinate.
    pub fn uniform(dim: usize, var: f64) -> Result<Self> {
        Self::new(DVector::from_element(dim, var))
    }

    pub fn dim(&self) -> usize {
        self.variances.len()
    }

    pub fn variances(&self) -> &DVector<f64> {
        &self.variances
    }

    /// Per-coordinate standard deviations.
    pub fn stds(&self) -> DVector<f64> {
        self.variances.map(f64::sqrt)
    }

    /// Per-coordinate inverse variances.
    pub fn inverse_variances(&self) -> DVector<f64> {
        self.variances.map(|v| 1.0 / v)
    }

    /// Dense diagonal matrix, for oracle-style computations.
    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.variances)
    }
}

/// A `p x n` ensemble of state vectors (column `j` is member `j`).
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: DMatrix<f64>,
}

impl Ensemble {
    /// Wrap a member matrix. Requires at least two members (the sample
    /// covariance divides by `n - 1`) and finite entries.
    pub fn new(members: DMatrix<f64>) -> Result<Self> {
        if members.ncols() < 2 {
            return Err(Error::InsufficientMembers {
                n: members.ncols(),
                min: 2,
            });
        }
        if members.nrows() == 0 {
            return Err(Error::InvalidArgument("state dimension is zero".into()));
        }
        if members.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ensemble member entries".into()));
        }
        Ok(Self { members })
    }

    /// Draw `count` independent members from `N(mean, cov)` with diagonal
    /// covariance. Members are generated column by column, coordinates in
    /// order, so a fixed stream reproduces the matrix bit for bit.
    pub fn draw_gaussian(
        mean: &StateVector,
        cov: &DiagonalCovariance,
        count: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if cov.dim() != mean.len() {
            return Err(Error::DimensionMismatch(format!(
                "mean has length {}, covariance dimension {}",
                mean.len(),
                cov.dim()
            )));
        }
        if count < 2 {
            return Err(Error::InsufficientMembers { n: count, min: 2 });
        }
        let p = mean.len();
        let stds = cov.stds();
        let mut members = DMatrix::zeros(p, count);
        for j in 0..count {
            for i in 0..p {
                members[(i, j)] = mean[i] + stds[i] * rng.standard_normal();
            }
        }
        Self::new(members)
    }

    /// State dimension `p`.
    pub fn state_dim(&self) -> usize {
        self.members.nrows()
    }

    /// Number of members `n`.
    pub fn size(&self) -> usize {
        self.members.ncols()
    }

    pub fn members(&self) -> &DMatrix<f64> {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.members
    }

    pub fn member(&self, j: usize) -> StateVector {
        self.members.column(j).into_owned()
    }

    /// Columnwise sample mean `(1/n) sum_j a_j`.
    pub fn sample_mean(&self) -> StateVector {
        let n = self.size() as f64;
        let mut mean = DVector::zeros(self.state_dim());
        for j in 0..self.size() {
            mean += self.members.column(j);
        }
        mean / n
    }

    /// Sample covariance `(1/(n-1)) (A - Abar)(A - Abar)^T`.
    ///
    /// Symmetric positive semi-definite by construction; the `n >= 2`
    /// divisor requirement is enforced when the ensemble is built.
    pub fn sample_covariance(&self) -> SymmetricMatrix {
        let mean = self.sample_mean();
        let p = self.state_dim();
        let n = self.size();
        let mut anomalies = self.members.clone();
        for j in 0..n {
            let mut col = anomalies.column_mut(j);
            col -= &mean;
        }
        let cov = (&anomalies * anomalies.transpose()) / (n as f64 - 1.0);
        // products of the form B B^T are symmetric up to rounding
        let mut m = cov;
        for i in 0..p {
            for j in (i + 1)..p {
                let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = avg;
                m[(j, i)] = avg;
            }
        }
        SymmetricMatrix { m }
    }

    /// True when every entry is finite.
    pub fn is_finite(&self) -> bool {
        self.members.iter().all(|v| v.is_finite())
    }
}

/// Root mean squared error `sqrt(||estimate - truth||^2 / p)`.
pub fn rmse(estimate: &StateVector, truth: &StateVector) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "rmse of vectors with lengths {} and {}",
            estimate.len(),
            truth.len()
        )));
    }
    if estimate.is_empty() {
        return Err(Error::InvalidArgument("rmse of empty vectors".into()));
    }
    let p = estimate.len() as f64;
    let sq = (estimate - truth).norm_squared();
    Ok((sq / p).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn random_matrix(p: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = RngStream::new(seed);
        DMatrix::from_fn(p, n, |_, _| rng.standard_normal())
    }

    #[test]
    fn mean_of_identical_members_is_that_member() {
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let m = DMatrix::from_columns(&[v.clone(), v.clone(), v.clone()]);
        let ens = Ensemble::new(m).unwrap();
        assert_eq!(ens.sample_mean(), v);
    }

    #[test]
    fn mean_scalar_two_members() {
        let ens = Ensemble::new(DMatrix::from_row_slice(1, 2, &[0.0, 2.0])).unwrap();
        assert_eq!(ens.sample_mean()[0], 1.0);
    }

    #[test]
    fn mean_matches_brute_force() {
        let m = random_matrix(7, 13, 42);
        let ens = Ensemble::new(m.clone()).unwrap();
        let mean = ens.sample_mean();
        for i in 0..7 {
            let mut acc = 0.0;
            for j in 0..13 {
                acc += m[(i, j)];
            }
            assert_abs_diff_eq!(mean[i], acc / 13.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn covariance_of_identical_members_is_zero() {
        let v = DVector::from_vec(vec![3.0, 1.0]);
        let ens = Ensemble::new(DMatrix::from_columns(&[v.clone(), v])).unwrap();
        let cov = ens.sample_covariance();
        assert!(cov.as_matrix().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn covariance_scalar_case() {
        // members {0, 2}: ((0-1)^2 + (2-1)^2) / 1 = 2
        let ens = Ensemble::new(DMatrix::from_row_slice(1, 2, &[0.0, 2.0])).unwrap();
        assert_abs_diff_eq!(ens.sample_covariance().get(0, 0), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn covariance_matches_double_loop() {
        let m = random_matrix(5, 10, 7);
        let ens = Ensemble::new(m.clone()).unwrap();
        let cov = ens.sample_covariance();
        let mean = ens.sample_mean();
        for i in 0..5 {
            for k in 0..5 {
                let mut acc = 0.0;
                for j in 0..10 {
                    acc += (m[(i, j)] - mean[i]) * (m[(k, j)] - mean[k]);
                }
                assert_abs_diff_eq!(cov.get(i, k), acc / 9.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn covariance_is_psd_on_random_inputs() {
        for seed in 0..20u64 {
            let p = 3 + (seed as usize % 6);
            let n = 2 + (seed as usize % 9);
            let ens = Ensemble::new(random_matrix(p, n, seed)).unwrap();
            let cov = ens.sample_covariance();
            let norm = cov.as_matrix().norm();
            let eigs = cov.as_matrix().clone().symmetric_eigenvalues();
            let min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(min >= -1e-10 * norm.max(1.0), "min eig {min} for seed {seed}");
        }
    }

    #[test]
    fn single_member_rejected() {
        let err = Ensemble::new(DMatrix::from_row_slice(2, 1, &[1.0, 2.0])).unwrap_err();
        assert!(matches!(err, Error::InsufficientMembers { n: 1, min: 2 }));
    }

    #[test]
    fn rmse_zero_when_equal() {
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(rmse(&v, &v).unwrap(), 0.0);
    }

    #[test]
    fn rmse_three_four_five() {
        let a = DVector::from_vec(vec![3.0, 4.0]);
        let b = DVector::from_vec(vec![0.0, 0.0]);
        assert_abs_diff_eq!(rmse(&a, &b).unwrap(), (25.0f64 / 2.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn rmse_matches_brute_force() {
        let mut rng = RngStream::new(3);
        let a = DVector::from_fn(17, |_, _| rng.standard_normal());
        let b = DVector::from_fn(17, |_, _| rng.standard_normal());
        let mut acc = 0.0;
        for i in 0..17 {
            acc += (a[i] - b[i]) * (a[i] - b[i]);
        }
        assert_abs_diff_eq!(rmse(&a, &b).unwrap(), (acc / 17.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn rmse_length_mismatch_errors() {
        let a = DVector::zeros(3);
        let b = DVector::zeros(4);
        assert!(rmse(&a, &b).is_err());
    }

    #[test]
    fn draw_gaussian_is_reproducible() {
        let mean = DVector::zeros(4);
        let cov = DiagonalCovariance::uniform(4, 2.0).unwrap();
        let a = Ensemble::draw_gaussian(&mean, &cov, 6, &mut RngStream::new(11)).unwrap();
        let b = Ensemble::draw_gaussian(&mean, &cov, 6, &mut RngStream::new(11)).unwrap();
        assert_eq!(a.members(), b.members());
    }

    #[test]
    fn draw_gaussian_sample_variance_close_to_one() {
        // 1e5 draws per coordinate; CLT puts the sample variance within
        // ~1.4% of 1 at three sigma.
        let mean = DVector::zeros(3);
        let cov = DiagonalCovariance::uniform(3, 1.0).unwrap();
        let ens = Ensemble::draw_gaussian(&mean, &cov, 100_000, &mut RngStream::new(2)).unwrap();
        let sample = ens.sample_covariance();
        for i in 0..3 {
            assert!(
                (sample.get(i, i) - 1.0).abs() < 0.03,
                "variance {} at coordinate {i}",
                sample.get(i, i)
            );
        }
    }

    #[test]
    fn zero_variance_rejected() {
        assert!(DiagonalCovariance::uniform(3, 0.0).is_err());
        assert!(DiagonalCovariance::new(DVector::from_vec(vec![1.0, -0.5])).is_err());
    }

    #[test]
    fn symmetric_matrix_rejects_asymmetry() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(SymmetricMatrix::new(m.clone()).is_err());
        let s = SymmetricMatrix::symmetrize(&m).unwrap();
        assert_eq!(s.get(0, 1), 0.45);
        assert_eq!(s.get(1, 0), 0.45);
    }
}
