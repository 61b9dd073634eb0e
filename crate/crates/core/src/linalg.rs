//! Dense symmetric eigendecomposition via cyclic Jacobi rotations.
//!
//! Sized for covariance matrices in the tens-of-dimensions range; the sweep
//! order is fixed so results are deterministic.

/// Eigen-decompose a symmetric n x n matrix (row-major). Returns eigenvalues
/// in descending order and the matching eigenvectors as rows of a flat
/// n x n buffer (eigenvector i occupies row i).
pub fn symmetric_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(matrix.len(), n * n);
    let mut a = matrix.to_vec();
    // v holds the accumulated rotations; v[r*n + c] is component c of the
    // eigenvector currently associated with diagonal slot r.
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                s += a[p * n + q] * a[p * n + q];
            }
        }
        s
    };

    let scale: f64 = (0..n).map(|i| a[i * n + i].abs()).fold(1e-300, f64::max);
    let tol = (scale * 1e-14).powi(2).max(1e-280);
    for _sweep in 0..60 {
        if off(&a) <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // rotate rows/cols p and q
                for i in 0..n {
                    let aip = a[i * n + p];
                    let aiq = a[i * n + q];
                    a[i * n + p] = c * aip - s * aiq;
                    a[i * n + q] = s * aip + c * aiq;
                }
                for j in 0..n {
                    let apj = a[p * n + j];
                    let aqj = a[q * n + j];
                    a[p * n + j] = c * apj - s * aqj;
                    a[q * n + j] = s * apj + c * aqj;
                }
                for j in 0..n {
                    let vpj = v[p * n + j];
                    let vqj = v[q * n + j];
                    v[p * n + j] = c * vpj - s * vqj;
                    v[q * n + j] = s * vpj + c * vqj;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let mut eigenvectors = vec![0.0; n * n];
    for (r, &i) in order.iter().enumerate() {
        eigenvectors[r * n..(r + 1) * n].copy_from_slice(&v[i * n..(i + 1) * n]);
        // Deterministic sign: largest-magnitude component is positive.
        let row = &mut eigenvectors[r * n..(r + 1) * n];
        let mut arg = 0usize;
        for (j, val) in row.iter().enumerate() {
            if val.abs() > row[arg].abs() {
                arg = j;
            }
        }
        if row[arg] < 0.0 {
            for val in row.iter_mut() {
                *val = -*val;
            }
        }
    }
    (eigenvalues, eigenvectors)
}

/// Singular values of an arbitrary r x c matrix (row-major), descending,
/// computed from the eigenvalues of the Gram matrix.
pub fn singular_values(matrix: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    assert_eq!(matrix.len(), rows * cols);
    // Gram over the smaller side.
    let (m, gram_side) = if rows <= cols {
        // M M^T, rows x rows
        let mut g = vec![0.0; rows * rows];
        for i in 0..rows {
            for j in i..rows {
                let mut s = 0.0;
                for k in 0..cols {
                    s += matrix[i * cols + k] * matrix[j * cols + k];
                }
                g[i * rows + j] = s;
                g[j * rows + i] = s;
            }
        }
        (g, rows)
    } else {
        let mut g = vec![0.0; cols * cols];
        for i in 0..cols {
            for j in i..cols {
                let mut s = 0.0;
                for k in 0..rows {
                    s += matrix[k * cols + i] * matrix[k * cols + j];
                }
                g[i * cols + j] = s;
                g[j * cols + i] = s;
            }
        }
        (g, cols)
    };
    let (vals, _) = symmetric_eigen(&m, gram_side);
    vals.into_iter().map(|v| v.max(0.0).sqrt()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_matrix_is_its_own_decomposition() {
        let m = vec![3.0, 0.0, 0.0, 0.0, 7.0, 0.0, 0.0, 0.0, 1.0];
        let (vals, vecs) = symmetric_eigen(&m, 3);
        assert!((vals[0] - 7.0).abs() < 1e-12);
        assert!((vals[1] - 3.0).abs() < 1e-12);
        assert!((vals[2] - 1.0).abs() < 1e-12);
        // first eigenvector is e_1 (row 0, component 1)
        assert!((vecs[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reconstructs_symmetric_matrix() {
        let mut rng = crate::rng::Rng::new(2);
        let n = 12;
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = rng.next_normal();
                m[i * n + j] = v;
                m[j * n + i] = v;
            }
        }
        let (vals, vecs) = symmetric_eigen(&m, n);
        // rebuild sum_k lambda_k v_k v_k^T
        let mut rebuilt = vec![0.0; n * n];
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    rebuilt[i * n + j] += vals[k] * vecs[k * n + i] * vecs[k * n + j];
                }
            }
        }
        for (a, b) in m.iter().zip(&rebuilt) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        // eigenvalues descending
        for w in vals.windows(2) {
            assert!(w[0] >= w[1] - 1e-12);
        }
    }

    #[test]
    fn singular_values_of_rank_one() {
        // outer product [1,2]^T [3,4]: singular value = |u||v| = sqrt(5)*5
        let m = vec![3.0, 4.0, 6.0, 8.0];
        let sv = singular_values(&m, 2, 2);
        assert!((sv[0] - (5.0f64.sqrt() * 5.0)).abs() < 1e-10, "{sv:?}");
        assert!(sv[1].abs() < 1e-10);
    }
}
