//! Dense LU factorization with partial pivoting, sized for the transient
//! blocks of this crate's absorbing chains (a few hundred unknowns at most).

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("matrix is singular (no usable pivot in column {column})")]
    Singular { column: usize },
    #[error("dimension mismatch: matrix is {n}x{n}, rhs has length {rhs}")]
    DimensionMismatch { n: usize, rhs: usize },
}

/// Square matrix in row-major storage.
#[derive(Debug, Clone)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        DenseMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut m = DenseMatrix::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), n, "row {i} has wrong length");
            m.data[i * n..(i + 1) * n].copy_from_slice(row);
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    /// `self * x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| {
                let row = &self.data[i * self.n..(i + 1) * self.n];
                row.iter().zip(x).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    /// Solve `self * x = rhs` by LU factorization with partial pivoting.
    /// The matrix is consumed as factorization workspace.
    pub fn solve(mut self, rhs: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let n = self.n;
        if rhs.len() != n {
            return Err(LinalgError::DimensionMismatch { n, rhs: rhs.len() });
        }
        let mut x = rhs.to_vec();
        // Scale for the singularity test: an exactly-zero column of an
        // otherwise healthy matrix should fail cleanly, not produce inf.
        let scale = self
            .data
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()))
            .max(1.0);
        let tiny = scale * f64::EPSILON * n as f64 * 16.0;

        for col in 0..n {
            let pivot_row = (col..n)
                .max_by(|&a, &b| {
                    self.get(a, col)
                        .abs()
                        .partial_cmp(&self.get(b, col).abs())
                        .unwrap()
                })
                .unwrap();
            if self.get(pivot_row, col).abs() <= tiny {
                return Err(LinalgError::Singular { column: col });
            }
            if pivot_row != col {
                for j in 0..n {
                    let tmp = self.get(col, j);
                    self.set(col, j, self.get(pivot_row, j));
                    self.set(pivot_row, j, tmp);
                }
                x.swap(col, pivot_row);
            }
            let pivot = self.get(col, col);
            for row in col + 1..n {
                let factor = self.get(row, col) / pivot;
                if factor == 0.0 {
                    continue;
                }
                self.set(row, col, 0.0);
                for j in col + 1..n {
                    let v = self.get(row, j) - factor * self.get(col, j);
                    self.set(row, j, v);
                }
                x[row] -= factor * x[col];
            }
        }
        // Back substitution.
        for col in (0..n).rev() {
            x[col] /= self.get(col, col);
            let (head, tail) = x.split_at_mut(col);
            let xc = tail[0];
            for (row, v) in head.iter_mut().enumerate() {
                *v -= self.get(row, col) * xc;
            }
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_known_system() {
        // 2x + y - z = 8; -3x - y + 2z = -11; -2x + y + 2z = -3
        // -> x = 2, y = 3, z = -1.
        let a = DenseMatrix::from_rows(&[
            vec![2.0, 1.0, -1.0],
            vec![-3.0, -1.0, 2.0],
            vec![-2.0, 1.0, 2.0],
        ]);
        let x = a.solve(&[8.0, -11.0, -3.0]).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-12);
        assert!((x[1] - 3.0).abs() < 1e-12);
        assert!((x[2] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pivoting_handles_zero_leading_entry() {
        let a = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let x = a.solve(&[3.0, 7.0]).unwrap();
        assert_eq!(x, vec![7.0, 3.0]);
    }

    #[test]
    fn detects_singularity() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert!(matches!(
            a.solve(&[1.0, 2.0]),
            Err(LinalgError::Singular { .. })
        ));
    }

    #[test]
    fn residual_small_on_random_diagonally_dominant_system() {
        // Deterministic pseudo-random entries; diagonal dominance keeps the
        // system well conditioned, mirroring the absorbing-chain use case.
        let n = 60;
        let mut seed = 0x2545F4914F6CDD1Du64;
        let mut next = move || {
            seed ^= seed << 13;
            seed ^= seed >> 7;
            seed ^= seed << 17;
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut a = DenseMatrix::zeros(n);
        for i in 0..n {
            let mut off_sum = 0.0;
            for j in 0..n {
                if i != j {
                    let v = next() - 0.5;
                    a.set(i, j, v);
                    off_sum += v.abs();
                }
            }
            a.set(i, i, off_sum + 1.0);
        }
        let rhs: Vec<f64> = (0..n).map(|_| next() * 10.0).collect();
        let x = a.clone().solve(&rhs).unwrap();
        let r = a.mul_vec(&x);
        for (ri, bi) in r.iter().zip(&rhs) {
            assert!((ri - bi).abs() < 1e-10);
        }
    }
}
