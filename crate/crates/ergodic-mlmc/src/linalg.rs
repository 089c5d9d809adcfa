//! Small dense linear algebra for the low-dimensional solves the samplers need
//! (Newton systems and prior-precision eigenvalue bounds, d is typically 1..3).

use crate::error::{Error, Result};

/// Solve `a x = b` in place by Gaussian elimination with partial pivoting.
/// `a` is row-major n x n and is destroyed; `b` becomes the solution.
pub fn solve_in_place(a: &mut [f64], b: &mut [f64], context: &'static str) -> Result<()> {
    let n = b.len();
    debug_assert_eq!(a.len(), n * n);
    for col in 0..n {
        let mut pivot = col;
        let mut best = a[col * n + col].abs();
        for row in col + 1..n {
            let v = a[row * n + col].abs();
            if v > best {
                best = v;
                pivot = row;
            }
        }
        if best == 0.0 || !best.is_finite() {
            return Err(Error::SingularSystem { context });
        }
        if pivot != col {
            for k in col..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let inv = 1.0 / a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] * inv;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            b[row] -= factor * b[col];
        }
    }
    for col in (0..n).rev() {
        let mut sum = b[col];
        for k in col + 1..n {
            sum -= a[col * n + k] * b[k];
        }
        b[col] = sum / a[col * n + col];
    }
    Ok(())
}

/// Extreme eigenvalues (min, max) of a symmetric matrix by cyclic Jacobi sweeps.
pub fn sym_eigen_extremes(mat: &[f64], n: usize) -> Result<(f64, f64)> {
    debug_assert_eq!(mat.len(), n * n);
    if n == 1 {
        return Ok((mat[0], mat[0]));
    }
    let mut a = mat.to_vec();
    for _sweep in 0..64 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                // Rotation angle that annihilates a[p][q].
                let phi = 0.5 * (2.0 * apq).atan2(app - aqq);
                let (s, c) = phi.sin_cos();
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp + s * akq;
                    a[k * n + q] = -s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk + s * aqk;
                    a[q * n + k] = -s * apk + c * aqk;
                }
            }
        }
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let d = a[i * n + i];
        if !d.is_finite() {
            return Err(Error::SingularSystem {
                context: "jacobi eigenvalue iteration",
            });
        }
        lo = lo.min(d);
        hi = hi.max(d);
    }
    Ok((lo, hi))
}

/// y = m x for a row-major n x n matrix.
pub fn matvec(m: &[f64], x: &[f64], y: &mut [f64]) {
    let n = x.len();
    for (row, yi) in y.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (col, xj) in x.iter().enumerate() {
            acc += m[row * n + col] * xj;
        }
        *yi = acc;
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn solves_diagonal_system() {
        let mut a = vec![2.0, 0.0, 0.0, 4.0];
        let mut b = vec![2.0, 8.0];
        solve_in_place(&mut a, &mut b, "test").unwrap();
        assert_relative_eq!(b[0], 1.0);
        assert_relative_eq!(b[1], 2.0);
    }

    #[test]
    fn solves_with_pivoting() {
        // First pivot is zero without row exchange.
        let mut a = vec![0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0];
        let x_true = [3.0, -1.0, 2.0];
        let mut b = vec![
            0.0 * 3.0 + 1.0 * -1.0 + 2.0 * 2.0,
            1.0 * 3.0 + 0.0 * -1.0 + 1.0 * 2.0,
            1.0 * 3.0 + 1.0 * -1.0 + 0.0 * 2.0,
        ];
        solve_in_place(&mut a, &mut b, "test").unwrap();
        for (got, want) in b.iter().zip(x_true.iter()) {
            assert_relative_eq!(got, want, max_relative = 1e-12);
        }
    }

    #[test]
    fn singular_system_is_reported() {
        let mut a = vec![1.0, 2.0, 2.0, 4.0];
        let mut b = vec![1.0, 2.0];
        assert!(solve_in_place(&mut a, &mut b, "test").is_err());
    }

    #[test]
    fn eigen_extremes_of_known_matrix() {
        // Eigenvalues of [[2,1],[1,2]] are 1 and 3.
        let (lo, hi) = sym_eigen_extremes(&[2.0, 1.0, 1.0, 2.0], 2).unwrap();
        assert_relative_eq!(lo, 1.0, max_relative = 1e-10);
        assert_relative_eq!(hi, 3.0, max_relative = 1e-10);
    }

    #[test]
    fn eigen_extremes_identity() {
        let m = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let (lo, hi) = sym_eigen_extremes(&m, 3).unwrap();
        assert_relative_eq!(lo, 1.0);
        assert_relative_eq!(hi, 1.0);
    }
}
