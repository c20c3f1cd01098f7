//! Proximal operators and cached linear solves used by the ADMM updates.

use nalgebra::DMatrix;

use crate::error::{GlossError, Result};
use crate::scalar::Real;
use crate::tensor::{DenseTensor, ModeSplit};

/// Relative cutoff below which a singular value counts as zero for rank reporting.
pub const RANK_RTOL: f64 = 1e-12;

const SVD_EPS: f64 = 1e-15;
const SVD_MAX_ITERS: usize = 10_000;

#[inline]
pub fn shrink<T: Real>(a: T, threshold: T) -> T {
    let mag = a.abs() - threshold;
    if mag > T::zero() {
        if a < T::zero() {
            -mag
        } else {
            mag
        }
    } else {
        T::zero()
    }
}

fn check_threshold<T: Real>(threshold: T) -> Result<()> {
    if !(threshold >= T::zero()) || !threshold.is_finite_value() {
        return Err(GlossError::InvalidParameter(format!(
            "threshold must be a finite nonnegative number, got {}",
            threshold.as_f64()
        )));
    }
    Ok(())
}

/// Elementwise soft thresholding `sign(a) * max(|a| - threshold, 0)`.
pub fn soft_threshold<T: Real>(values: &[T], threshold: T) -> Result<Vec<T>> {
    check_threshold(threshold)?;
    Ok(values.iter().map(|&a| shrink(a, threshold)).collect())
}

/// In-place soft thresholding of a whole tensor.
pub fn soft_threshold_tensor<T: Real>(t: &mut DenseTensor<T>, threshold: T) -> Result<()> {
    check_threshold(threshold)?;
    t.map_inplace(|a| shrink(a, threshold));
    Ok(())
}

fn thin_svd<T: Real>(m: &DMatrix<T>) -> Result<nalgebra::SVD<T, nalgebra::Dyn, nalgebra::Dyn>> {
    if m.iter().any(|v| !v.is_finite_value()) {
        return Err(GlossError::NonFinite("SVD input contains NaN or infinity".into()));
    }
    m.clone()
        .try_svd(true, true, T::lit(SVD_EPS), SVD_MAX_ITERS)
        .ok_or_else(|| GlossError::Factorization("SVD did not converge".into()))
}

/// Singular values in decreasing order.
pub fn singular_values<T: Real>(m: &DMatrix<T>) -> Result<Vec<T>> {
    let svd = thin_svd(m)?;
    let mut s: Vec<T> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).expect("finite singular values"));
    Ok(s)
}

/// Numerical rank with singular values below `RANK_RTOL * sigma_max` treated as zero.
pub fn numerical_rank<T: Real>(m: &DMatrix<T>) -> Result<usize> {
    let s = singular_values(m)?;
    let Some(&top) = s.first() else { return Ok(0) };
    if top == T::zero() {
        return Ok(0);
    }
    let cut = top * T::lit(RANK_RTOL);
    Ok(s.iter().filter(|&&v| v > cut).count())
}

pub fn nuclear_norm<T: Real>(m: &DMatrix<T>) -> Result<T> {
    Ok(singular_values(m)?
        .into_iter()
        .fold(T::zero(), |acc, v| acc + v))
}

/// Singular value thresholding through a thin bidiagonalization SVD.
///
/// Returns `U * max(S - threshold, 0) * V^T`, the proximal map of
/// `threshold * ||.||_*`.
pub fn svt<T: Real>(m: &DMatrix<T>, threshold: T) -> Result<DMatrix<T>> {
    check_threshold(threshold)?;
    let svd = thin_svd(m)?;
    let u = svd.u.as_ref().expect("left vectors requested");
    let vt = svd.v_t.as_ref().expect("right vectors requested");
    let mut scaled_u = u.clone();
    for (j, &s) in svd.singular_values.iter().enumerate() {
        let keep = shrink(s, threshold);
        scaled_u.column_mut(j).scale_mut(keep);
    }
    Ok(scaled_u * vt)
}

/// Spectral filter that maps the Gram matrix `A A^T` to `M` with `M A = svt(A, threshold)`.
fn svt_filter<T: Real>(gram: DMatrix<T>, threshold: T) -> DMatrix<T> {
    let dim = gram.nrows();
    let eig = gram.symmetric_eigen();
    let mut scaled = eig.eigenvectors.clone();
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        let sigma = lambda.max(T::zero()).sqrt();
        let gain = if sigma > threshold && sigma > T::zero() {
            T::one() - threshold / sigma
        } else {
            T::zero()
        };
        scaled.column_mut(j).scale_mut(gain);
    }
    let mut filter = DMatrix::<T>::zeros(dim, dim);
    filter.gemm(T::one(), &scaled, &eig.eigenvectors.transpose(), T::zero());
    filter
}

/// Singular value thresholding of the mode-`n` unfolding, folded back.
///
/// Uses the identity `svt(A, t) = h(A A^T) A` with `h(s^2) = max(1 - t / s, 0)`,
/// evaluated through a symmetric eigendecomposition of the small `I_n x I_n`
/// Gram matrix. This avoids factoring the very wide unfolding directly; the
/// filter is Lipschitz in the Gram entries so the result stays accurate to a
/// small multiple of machine precision relative to `||A||`.
pub fn svt_mode<T: Real>(t: &DenseTensor<T>, n: usize, threshold: T) -> Result<DenseTensor<T>> {
    check_threshold(threshold)?;
    if !t.is_finite() {
        return Err(GlossError::NonFinite(format!(
            "mode-{n} singular value thresholding input contains NaN or infinity"
        )));
    }
    if threshold == T::zero() {
        return Ok(t.clone());
    }
    let filter = svt_filter(t.mode_gram(n)?, threshold);
    t.mode_product(&filter, n)
}

/// Nuclear norm of the mode-`n` unfolding, from the Gram eigenvalues.
pub fn mode_nuclear_norm<T: Real>(t: &DenseTensor<T>, n: usize) -> Result<T> {
    let eig = t.mode_gram(n)?.symmetric_eigenvalues();
    Ok(eig
        .iter()
        .fold(T::zero(), |acc, &l| acc + l.max(T::zero()).sqrt()))
}

/// Circulant first-difference operator along the first (hour) mode.
///
/// Row `i` has `+1` at column `i` and `-1` at column `i + 1`; the last row
/// wraps around with `-1` at column 0 and `+1` on the diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffOperator<T> {
    size: usize,
    matrix: DMatrix<T>,
}

impl<T: Real> DiffOperator<T> {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(GlossError::InvalidParameter(format!(
                "difference operator needs at least 2 samples, got {size}"
            )));
        }
        let mut matrix = DMatrix::<T>::zeros(size, size);
        for i in 0..size {
            matrix[(i, i)] = T::one();
            matrix[(i, (i + 1) % size)] = -T::one();
        }
        Ok(Self { size, matrix })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }

    /// `D^T D`, the circulant second-difference matrix.
    pub fn gram(&self) -> DMatrix<T> {
        self.matrix.transpose() * &self.matrix
    }

    fn check(&self, t: &DenseTensor<T>) -> Result<ModeSplit> {
        let split = t.split(0)?;
        if split.dim != self.size {
            return Err(GlossError::DimensionMismatch(format!(
                "difference operator of size {} applied to mode-0 extent {}",
                self.size, split.dim
            )));
        }
        Ok(split)
    }

    /// `t x_0 D`: circular differences `x_i - x_{i+1}` along every mode-0 fiber.
    pub fn apply(&self, t: &DenseTensor<T>) -> Result<DenseTensor<T>> {
        let ModeSplit { dim, right, .. } = self.check(t)?;
        let mut out = t.zeros_like();
        let src = t.as_slice();
        let dst = out.as_mut_slice();
        for r in 0..right {
            let base = r * dim;
            for i in 0..dim {
                dst[base + i] = src[base + i] - src[base + (i + 1) % dim];
            }
        }
        Ok(out)
    }

    /// `t x_0 D^T`: circular differences `x_i - x_{i-1}` along every mode-0 fiber.
    pub fn apply_transpose(&self, t: &DenseTensor<T>) -> Result<DenseTensor<T>> {
        let ModeSplit { dim, right, .. } = self.check(t)?;
        let mut out = t.zeros_like();
        let src = t.as_slice();
        let dst = out.as_mut_slice();
        for r in 0..right {
            let base = r * dim;
            for i in 0..dim {
                dst[base + i] = src[base + i] - src[base + (i + dim - 1) % dim];
            }
        }
        Ok(out)
    }
}

/// Which closed form a cached inverse belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InverseKind {
    /// `(theta * Phi + beta_3 I)^{-1}` for the graph split of one mode.
    Graph { mode: usize },
    /// `(beta_5 I + beta_4 D^T D)^{-1}` for the smoothness split.
    TotalVariation,
}

/// Symmetric positive-definite inverse computed once before the iterations.
#[derive(Clone, Debug)]
pub struct CachedInverse<T> {
    pub matrix: DMatrix<T>,
    pub kind: InverseKind,
}

fn spd_inverse<T: Real>(m: DMatrix<T>, what: &str) -> Result<DMatrix<T>> {
    if m.iter().any(|v| !v.is_finite_value()) {
        return Err(GlossError::NonFinite(format!("{what} contains NaN or infinity")));
    }
    let chol = m.cholesky().ok_or_else(|| {
        GlossError::Factorization(format!("{what} is not positive definite"))
    })?;
    let inv = chol.inverse();
    // Cholesky inverses are symmetric up to rounding; restore exact symmetry.
    Ok((&inv + inv.transpose()) * T::lit(0.5))
}

/// `(theta * laplacian + beta3 * I)^{-1}`.
pub fn precompute_graph_inverse<T: Real>(
    laplacian: &DMatrix<T>,
    theta: T,
    beta3: T,
    mode: usize,
) -> Result<CachedInverse<T>> {
    if !(theta >= T::zero()) {
        return Err(GlossError::InvalidParameter("theta must be nonnegative".into()));
    }
    if !(beta3 > T::zero()) {
        return Err(GlossError::InvalidParameter("beta_3 must be positive".into()));
    }
    if !laplacian.is_square() {
        return Err(GlossError::DimensionMismatch("laplacian must be square".into()));
    }
    let dim = laplacian.nrows();
    let m = laplacian * theta + DMatrix::<T>::identity(dim, dim) * beta3;
    Ok(CachedInverse {
        matrix: spd_inverse(m, "theta * laplacian + beta_3 * I")?,
        kind: InverseKind::Graph { mode },
    })
}

/// `(beta5 * I + beta4 * D^T D)^{-1}`.
pub fn precompute_tv_inverse<T: Real>(
    diff: &DiffOperator<T>,
    beta4: T,
    beta5: T,
) -> Result<CachedInverse<T>> {
    if !(beta4 >= T::zero()) {
        return Err(GlossError::InvalidParameter("beta_4 must be nonnegative".into()));
    }
    if !(beta5 > T::zero()) {
        return Err(GlossError::InvalidParameter("beta_5 must be positive".into()));
    }
    let dim = diff.size();
    let m = diff.gram() * beta4 + DMatrix::<T>::identity(dim, dim) * beta5;
    Ok(CachedInverse {
        matrix: spd_inverse(m, "beta_5 * I + beta_4 * D^T D")?,
        kind: InverseKind::TotalVariation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(&[3.0, -0.5, -2.0], 1.0).unwrap(), vec![2.0, 0.0, -1.0]);
        let a = [1.5, -2.0, 0.25];
        assert_eq!(soft_threshold(&a, 0.0).unwrap(), a.to_vec());
        assert!(soft_threshold(&a, 2.0).unwrap().iter().all(|&v| v == 0.0));
        assert!(soft_threshold(&a, -1.0).is_err());
    }

    #[test]
    fn svt_diagonal() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 1.0]));
        let out = svt(&m, 2.0).unwrap();
        assert_relative_eq!(out, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]), epsilon = 1e-12);
    }

    #[test]
    fn svt_zero_threshold_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_matrix(&mut rng, 4, 6);
        assert_relative_eq!(svt(&m, 0.0).unwrap(), m, epsilon = 1e-10);
    }

    #[test]
    fn svt_rejects_non_finite() {
        let mut m = DMatrix::<f64>::zeros(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(svt(&m, 1.0).is_err());
    }

    fn svt_objective(x: &DMatrix<f64>, m: &DMatrix<f64>, t: f64) -> f64 {
        t * nuclear_norm(x).unwrap() + 0.5 * (x - m).norm_squared()
    }

    #[test]
    fn svt_is_optimal_under_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_matrix(&mut rng, 4, 6);
        let x = svt(&m, 0.5).unwrap();
        let base = svt_objective(&x, &m, 0.5);
        for _ in 0..20 {
            let d = random_matrix(&mut rng, 4, 6);
            let perturbed = &x + d * 1e-4;
            assert!(svt_objective(&perturbed, &m, 0.5) >= base - 1e-12);
        }
    }

    #[test]
    fn spectral_route_matches_svd_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let shape = [4, 3, 5, 2];
        let len: usize = shape.iter().product();
        let t = DenseTensor::from_vec(&shape, (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        for n in 0..4 {
            for &phi in &[0.0, 0.3, 1.5, 100.0] {
                let fast = svt_mode(&t, n, phi).unwrap();
                let reference = DenseTensor::fold(&svt(&t.unfold(n).unwrap(), phi).unwrap(), n, &shape).unwrap();
                assert!(fast.distance(&reference).unwrap() <= 1e-10 * (1.0 + t.frobenius_norm()));
            }
            let nn = mode_nuclear_norm(&t, n).unwrap();
            assert_relative_eq!(nn, nuclear_norm(&t.unfold(n).unwrap()).unwrap(), max_relative = 1e-10);
        }
    }

    #[test]
    fn diff_operator_pattern() {
        let d = DiffOperator::<f64>::new(4).unwrap();
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[1., -1., 0., 0., 0., 1., -1., 0., 0., 0., 1., -1., -1., 0., 0., 1.],
        );
        assert_eq!(d.matrix(), &expected);
        let ones = nalgebra::DVector::from_element(4, 1.0);
        assert_eq!(d.matrix() * ones, nalgebra::DVector::zeros(4));
        let x = DenseTensor::from_vec(&[4], vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(d.apply(&x).unwrap().as_slice(), &[-1., -1., -1., 3.]);
        assert_eq!(d.apply(&x).unwrap(), x.mode_product(d.matrix(), 0).unwrap());
        assert!(DiffOperator::<f64>::new(1).is_err());
    }

    #[test]
    fn diff_operator_rows() {
        let d = DiffOperator::<f64>::new(7).unwrap();
        for row in d.matrix().row_iter() {
            assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(row.iter().filter(|&&v| v == -1.0).count(), 1);
            assert_eq!(row.sum(), 0.0);
        }
        let g = d.gram();
        assert_relative_eq!(g, g.transpose());
        let eig = g.symmetric_eigenvalues();
        assert!(eig.iter().all(|&l| l >= -1e-12));
        assert_relative_eq!((g * nalgebra::DVector::from_element(7, 1.0)).norm(), 0.0);
    }

    #[test]
    fn diff_transpose_matches_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = DenseTensor::from_vec(&[5, 3, 2], (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let d = DiffOperator::<f64>::new(5).unwrap();
        let expected = t.mode_product(&d.matrix().transpose(), 0).unwrap();
        assert!(d.apply_transpose(&t).unwrap().distance(&expected).unwrap() < 1e-14);
        assert!(d.apply(&DenseTensor::zeros(&[4, 2]).unwrap()).is_err());
    }

    fn path_laplacian() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[1., -1., 0., -1., 2., -1., 0., -1., 1.])
    }

    #[test]
    fn graph_inverse_theta_zero() {
        let inv = precompute_graph_inverse(&path_laplacian(), 0.0, 4.0, 0).unwrap();
        assert_relative_eq!(inv.matrix, DMatrix::identity(3, 3) * 0.25, epsilon = 1e-14);
        assert_eq!(inv.kind, InverseKind::Graph { mode: 0 });
    }

    #[test]
    fn graph_inverse_matches_linear_solves() {
        let lap = path_laplacian();
        let inv = precompute_graph_inverse(&lap, 1.0, 1.0, 2).unwrap();
        let a = &lap + DMatrix::identity(3, 3);
        assert_relative_eq!(&a * &inv.matrix, DMatrix::identity(3, 3), epsilon = 1e-10);
        let lu = a.clone().lu();
        for k in 0..3 {
            let e = nalgebra::DVector::from_fn(3, |i, _| if i == k { 1.0 } else { 0.0 });
            let col = lu.solve(&e).unwrap();
            assert_relative_eq!(inv.matrix.column(k).into_owned(), col, epsilon = 1e-12);
        }
        // Exact inverse of [[2,-1,0],[-1,3,-1],[0,-1,2]] is (1/8)[[5,2,1],[2,4,2],[1,2,5]].
        let exact = DMatrix::from_row_slice(3, 3, &[5., 2., 1., 2., 4., 2., 1., 2., 5.]) / 8.0;
        assert_relative_eq!(inv.matrix, exact, epsilon = 1e-12);
    }

    #[test]
    fn graph_inverse_rejects_bad_input() {
        let lap = path_laplacian();
        assert!(precompute_graph_inverse(&lap, 1.0, 0.0, 0).is_err());
        assert!(precompute_graph_inverse(&lap, -1.0, 1.0, 0).is_err());
        let not_psd = DMatrix::from_row_slice(2, 2, &[-5.0, 0.0, 0.0, -5.0]);
        assert!(matches!(
            precompute_graph_inverse(&not_psd, 1.0, 1.0, 0),
            Err(GlossError::Factorization(_))
        ));
    }

    #[test]
    fn tv_inverse_properties() {
        let d = DiffOperator::<f64>::new(24).unwrap();
        let inv0 = precompute_tv_inverse(&d, 0.0, 2.0).unwrap();
        assert_relative_eq!(inv0.matrix, DMatrix::identity(24, 24) * 0.5, epsilon = 1e-14);
        let inv = precompute_tv_inverse(&d, 0.1, 0.1).unwrap();
        let a = d.gram() * 0.1 + DMatrix::identity(24, 24) * 0.1;
        assert_relative_eq!(&a * &inv.matrix, DMatrix::identity(24, 24), epsilon = 1e-10);
        assert_relative_eq!(inv.matrix, inv.matrix.transpose(), epsilon = 1e-14);
        let eig = inv.matrix.clone().symmetric_eigenvalues();
        assert!(eig.iter().all(|&l| l > 0.0));
        // Eigenvalues are 1 / (0.1 + 0.1 * (2 - 2 cos(2 pi k / 24))).
        let mut expected: Vec<f64> = (0..24)
            .map(|k| 1.0 / (0.1 + 0.1 * (2.0 - 2.0 * (2.0 * std::f64::consts::PI * k as f64 / 24.0).cos())))
            .collect();
        let mut got: Vec<f64> = eig.iter().copied().collect();
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (e, g) in expected.iter().zip(&got) {
            assert_relative_eq!(e, g, max_relative = 1e-10);
        }
        assert!(precompute_tv_inverse(&d, 0.1, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn soft_threshold_solves_scalar_prox(a in -10.0f64..10.0, t in 0.0f64..5.0) {
            let x = shrink(a, t);
            let f = |x: f64| t * x.abs() + 0.5 * (x - a) * (x - a);
            for k in -200..=200 {
                let probe = x + k as f64 * 0.01;
                prop_assert!(f(probe) >= f(x) - 1e-12);
            }
        }

        #[test]
        fn svt_is_nonexpansive(seed in 0u64..500, t in 0.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(&mut rng, 3, 5);
            let b = random_matrix(&mut rng, 3, 5);
            let lhs = (svt(&a, t).unwrap() - svt(&b, t).unwrap()).norm();
            prop_assert!(lhs <= (&a - &b).norm() + 1e-12);
        }

        #[test]
        fn svt_rank_counts_large_singular_values(seed in 0u64..500, t in 0.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_matrix(&mut rng, 4, 6) * 2.0;
            let s = singular_values(&m).unwrap();
            let expected = s.iter().filter(|&&v| v > t).count();
            prop_assert_eq!(numerical_rank(&svt(&m, t).unwrap()).unwrap(), expected);
        }
    }
}
