//! Symmetric eigendecomposition by cyclic Jacobi rotations.
//!
//! Dimension is capped at [`MAX_EIGEN_DIM`]; within that range Jacobi is
//! robust and more than accurate enough for covariance spectra.

use crate::error::{Error, Result};
use crate::numcore::Matrix;

pub const MAX_EIGEN_DIM: usize = 256;

const ASYMMETRY_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 100;

/// Eigenvalues (descending) and the matching orthonormal eigenvectors
/// (as matrix columns) of a symmetric matrix.
pub fn symmetric_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::DimensionMismatch(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if n == 0 {
        return Err(Error::EmptyInput("eigendecomposition of an empty matrix"));
    }
    if n > MAX_EIGEN_DIM {
        return Err(Error::DimensionTooLarge {
            dim: n,
            limit: MAX_EIGEN_DIM,
        });
    }

    let scale = a
        .data()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1.0);
    let mut max_asym = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            max_asym = max_asym.max((a.get(i, j) - a.get(j, i)).abs());
        }
    }
    if max_asym > ASYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric(max_asym));
    }

    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let frob = a.frobenius_norm().max(f64::MIN_POSITIVE);

    for _sweep in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m.get(p, q) * m.get(p, q);
            }
        }
        if (2.0 * off).sqrt() <= 1e-13 * frob {
            break;
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                // Two-sided rotation in the (p, q) plane.
                for k in 0..n {
                    let akp = m.get(k, p);
                    let akq = m.get(k, q);
                    m.set(k, p, c * akp - s * akq);
                    m.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = m.get(p, k);
                    let aqk = m.get(q, k);
                    m.set(p, k, c * apk - s * aqk);
                    m.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m.get(j, j)
            .partial_cmp(&m.get(i, i))
            .expect("finite eigenvalues")
            .then(i.cmp(&j))
    });

    let eigenvalues: Vec<f64> = order.iter().map(|&i| m.get(i, i)).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors.set(k, col, v.get(k, src));
        }
    }
    Ok((eigenvalues, vectors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::RngStream;

    fn reconstruct(values: &[f64], vectors: &Matrix) -> Matrix {
        let n = values.len();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut sum = 0.0;
                for (k, &lam) in values.iter().enumerate() {
                    sum += vectors.get(i, k) * lam * vectors.get(j, k);
                }
                out.set(i, j, sum);
            }
        }
        out
    }

    /// Determinant by cofactor expansion; independent of the solver.
    fn det_cofactor(a: &Matrix) -> f64 {
        let n = a.rows();
        if n == 1 {
            return a.get(0, 0);
        }
        let mut det = 0.0;
        for j in 0..n {
            let mut minor = Matrix::zeros(n - 1, n - 1);
            for i in 1..n {
                let mut cj = 0;
                for k in 0..n {
                    if k == j {
                        continue;
                    }
                    minor.set(i - 1, cj, a.get(i, k));
                    cj += 1;
                }
            }
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            det += sign * a.get(0, j) * det_cofactor(&minor);
        }
        det
    }

    #[test]
    fn identity_has_unit_eigenvalues() {
        let (vals, _) = symmetric_eigen(&Matrix::identity(3)).unwrap();
        assert_eq!(vals, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn diagonal_matrix_sorted_descending() {
        let a = Matrix::from_vec(2, 2, vec![4.0, 0.0, 0.0, 1.0]).unwrap();
        let (vals, _) = symmetric_eigen(&a).unwrap();
        assert_eq!(vals, vec![4.0, 1.0]);
    }

    #[test]
    fn random_gram_matrix_reconstructs() {
        let mut rng = RngStream::new(31, 0);
        let data: Vec<f64> = (0..25).map(|_| rng.range_f64(-1.0, 1.0)).collect();
        let b = Matrix::from_vec(5, 5, data).unwrap();
        let a = b.transpose().matmul(&b);

        let (vals, vecs) = symmetric_eigen(&a).unwrap();
        // Descending order and PSD up to roundoff.
        for w in vals.windows(2) {
            assert!(w[0] >= w[1]);
        }
        assert!(vals.iter().all(|&l| l > -1e-10));

        let recon = reconstruct(&vals, &vecs);
        let mut err = 0.0f64;
        for i in 0..5 {
            for j in 0..5 {
                err += (recon.get(i, j) - a.get(i, j)).powi(2);
            }
        }
        assert!(err.sqrt() <= 1e-8 * a.frobenius_norm());

        // Trace and determinant identities against independent computations.
        let trace: f64 = (0..5).map(|i| a.get(i, i)).sum();
        let sum: f64 = vals.iter().sum();
        assert!((sum - trace).abs() <= 1e-9 * trace.abs().max(1.0));

        let det = det_cofactor(&a);
        let prod: f64 = vals.iter().product();
        assert!((prod - det).abs() <= 1e-6 * det.abs().max(1.0), "{prod} vs {det}");
    }

    #[test]
    fn eigenvectors_orthonormal() {
        let mut rng = RngStream::new(77, 1);
        let data: Vec<f64> = (0..36).map(|_| rng.range_f64(-2.0, 2.0)).collect();
        let b = Matrix::from_vec(6, 6, data).unwrap();
        let a = b.transpose().matmul(&b);
        let (_, vecs) = symmetric_eigen(&a).unwrap();
        let gram = vecs.transpose().matmul(&vecs);
        for i in 0..6 {
            for j in 0..6 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((gram.get(i, j) - expect).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn rejects_non_symmetric() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 0.0, 1.0]).unwrap();
        assert!(matches!(symmetric_eigen(&a), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn rejects_oversized() {
        let a = Matrix::zeros(257, 257);
        assert!(matches!(
            symmetric_eigen(&a),
            Err(Error::DimensionTooLarge { .. })
        ));
    }

    #[test]
    fn rejects_non_square() {
        let a = Matrix::zeros(2, 3);
        assert!(symmetric_eigen(&a).is_err());
    }
}
