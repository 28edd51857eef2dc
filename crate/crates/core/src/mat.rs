//! Dense square matrices with row-major storage, plus an LU factorization
//! with partial pivoting for determinants and linear solves.
//!
//! Row-major layout keeps row sweeps in ascending column order, which the
//! dynamics engine relies on for reproducible floating-point results.

use std::fmt;
use std::ops::{Index, IndexMut};

/// Dense square matrix of `f64`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    n: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(n: usize) -> Self {
        Mat {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from rows. Returns `None` if the rows are ragged or
    /// their number does not match their length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Option<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return None;
        }
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            data.extend_from_slice(r);
        }
        Some(Mat { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.n..(i + 1) * self.n]
    }

    /// `self * x`, accumulating each row in ascending column order.
    pub fn mat_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| {
                let mut acc = 0.0;
                for (k, &w) in self.row(i).iter().enumerate() {
                    acc += w * x[k];
                }
                acc
            })
            .collect()
    }

    /// Maximum absolute row sum.
    pub fn inf_norm(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum())
            .fold(0.0, f64::max)
    }

    /// `self + other * scale`.
    pub fn add_scaled(&self, other: &Mat, scale: f64) -> Mat {
        assert_eq!(self.n, other.n);
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b * scale)
            .collect();
        Mat { n: self.n, data }
    }

    pub fn to_dmatrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.n, self.n, &self.data)
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

impl fmt::Display for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.n {
            writeln!(f, "{:?}", self.row(i))?;
        }
        Ok(())
    }
}

/// LU factorization with partial pivoting. Factors every matrix; zero or
/// near-zero pivots are recorded rather than rejected so the determinant of
/// a singular matrix comes out as (near) zero.
pub struct Lu {
    lu: Mat,
    sign: f64,
    perm: Vec<usize>,
    /// Infinity norm of the input, used to scale singularity thresholds.
    norm: f64,
}

impl Lu {
    pub fn factor(m: &Mat) -> Lu {
        let n = m.n();
        let mut lu = m.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        for col in 0..n {
            let pivot_row = (col..n)
                .max_by(|&a, &b| {
                    lu[(a, col)]
                        .abs()
                        .partial_cmp(&lu[(b, col)].abs())
                        .unwrap()
                })
                .unwrap();
            if pivot_row != col {
                for j in 0..n {
                    let tmp = lu[(col, j)];
                    lu[(col, j)] = lu[(pivot_row, j)];
                    lu[(pivot_row, j)] = tmp;
                }
                perm.swap(col, pivot_row);
                sign = -sign;
            }
            let pivot = lu[(col, col)];
            if pivot == 0.0 {
                continue;
            }
            for row in col + 1..n {
                let factor = lu[(row, col)] / pivot;
                lu[(row, col)] = factor;
                for j in col + 1..n {
                    lu[(row, j)] -= factor * lu[(col, j)];
                }
            }
        }
        Lu {
            lu,
            sign,
            perm,
            norm: m.inf_norm(),
        }
    }

    pub fn det(&self) -> f64 {
        let mut d = self.sign;
        for i in 0..self.lu.n() {
            d *= self.lu[(i, i)];
        }
        d
    }

    /// True if some pivot is negligible relative to the input's scale.
    pub fn is_singular(&self) -> bool {
        let n = self.lu.n();
        let threshold = (n as f64) * f64::EPSILON * self.norm.max(1.0);
        (0..n).any(|i| self.lu[(i, i)].abs() <= threshold)
    }

    /// Solves `A x = b`. Returns `None` when the factorization is singular.
    pub fn solve(&self, b: &[f64]) -> Option<Vec<f64>> {
        if self.is_singular() {
            return None;
        }
        let n = self.lu.n();
        assert_eq!(b.len(), n);
        // Forward substitution on the permuted right-hand side.
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 1..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu[(i, j)] * x[j];
            }
            x[i] = acc;
        }
        // Back substitution.
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in i + 1..n {
                acc -= self.lu[(i, j)] * x[j];
            }
            x[i] = acc / self.lu[(i, i)];
        }
        Some(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn mat(rows: &[&[f64]]) -> Mat {
        Mat::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn det_of_permutation() {
        // 2-swap: det = -1.
        let m = mat(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert_abs_diff_eq!(Lu::factor(&m).det(), -1.0, epsilon = 1e-14);
    }

    #[test]
    fn det_of_singular() {
        let m = mat(&[&[1.0, 1.0], &[1.0, 1.0]]);
        let lu = Lu::factor(&m);
        assert_abs_diff_eq!(lu.det(), 0.0, epsilon = 1e-14);
        assert!(lu.is_singular());
        assert!(lu.solve(&[1.0, 0.0]).is_none());
    }

    #[test]
    fn solve_small_system() {
        let m = mat(&[&[2.0, 1.0], &[1.0, 3.0]]);
        let x = Lu::factor(&m).solve(&[5.0, 10.0]).unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn solve_matches_known_inverse_3x3() {
        let m = mat(&[&[4.0, 2.0, 0.0], &[2.0, 3.0, 1.0], &[0.0, 1.0, 2.0]]);
        let b = [6.0, 6.0, 3.0];
        let x = Lu::factor(&m).solve(&b).unwrap();
        let back = m.mat_vec(&x);
        for (bi, yi) in b.iter().zip(&back) {
            assert_abs_diff_eq!(bi, yi, epsilon = 1e-12);
        }
    }

    #[test]
    fn det_needs_pivoting() {
        // Zero leading entry forces a row swap.
        let m = mat(&[&[0.0, 2.0, 1.0], &[1.0, 0.0, 0.0], &[0.0, 1.0, 1.0]]);
        // Expansion along first column: det = -1 * det([[2,1],[1,1]]) = -1.
        assert_abs_diff_eq!(Lu::factor(&m).det(), -1.0, epsilon = 1e-12);
    }

    #[test]
    fn from_rows_rejects_ragged() {
        assert!(Mat::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_none());
        assert!(Mat::from_rows(&[vec![1.0, 2.0]]).is_none());
    }
}
