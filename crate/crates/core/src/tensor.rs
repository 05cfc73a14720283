//! Dense row-major matrices in 64-bit precision: the numeric substrate for
//! every other module. Deliberately small — matmul, a Cholesky solve for SPD
//! systems, and norms cover everything the trainer and the manifold code
//! need.

use crate::error::{Result, StmError};
use std::ops::{Index, IndexMut};

/// Dense 2-D array of `f64`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Build from a row-major data vector. Errors unless `data.len() == rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(StmError::DimensionMismatch {
                op: "from_vec",
                details: format!("{} values for a {rows}x{cols} matrix", data.len()),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Build from slices of equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(StmError::DimensionMismatch {
                    op: "from_rows",
                    details: format!("ragged rows: expected {c}, found {}", row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            rows: r,
            cols: c,
            data,
        })
    }

    /// Column vector (n x 1) from a slice.
    pub fn column(values: &[f64]) -> Self {
        Matrix {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn same_shape(&self, other: &Matrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Standard matrix product. Errors when `self.cols != other.rows`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(StmError::DimensionMismatch {
                op: "matmul",
                details: format!(
                    "{}x{} times {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        // i-k-j order: the inner loop walks rows of `other` and of `out`
        // sequentially, which vectorizes well.
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        let mut out = self.clone();
        out.add_assign_scaled(other, 1.0)?;
        Ok(out)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        let mut out = self.clone();
        out.add_assign_scaled(other, -1.0)?;
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        let mut out = self.clone();
        for v in &mut out.data {
            *v *= s;
        }
        out
    }

    /// `self += scale * other`, in place.
    pub fn add_assign_scaled(&mut self, other: &Matrix, scale: f64) -> Result<()> {
        if !self.same_shape(other) {
            return Err(StmError::DimensionMismatch {
                op: "add_assign_scaled",
                details: format!(
                    "{}x{} vs {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            });
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    /// Sum of squared entries.
    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Solve `self * x = rhs` for symmetric positive definite `self` via
    /// Cholesky. Only the lower triangle is read; callers are responsible for
    /// conditioning (e.g. Tikhonov regularization). A non-positive pivot
    /// yields `SingularMatrix`.
    pub fn solve_spd(&self, rhs: &Matrix) -> Result<Matrix> {
        let n = self.rows;
        if self.rows != self.cols {
            return Err(StmError::DimensionMismatch {
                op: "solve_spd",
                details: format!("matrix is {}x{}, expected square", self.rows, self.cols),
            });
        }
        if rhs.rows != n {
            return Err(StmError::DimensionMismatch {
                op: "solve_spd",
                details: format!("rhs has {} rows, expected {n}", rhs.rows),
            });
        }

        // Lower Cholesky factor, row-major.
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = self.data[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(StmError::SingularMatrix { row: i, pivot: s });
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }

        // Forward then backward substitution, one rhs column at a time.
        let mut x = rhs.clone();
        for col in 0..rhs.cols {
            for i in 0..n {
                let mut s = x.data[i * rhs.cols + col];
                for k in 0..i {
                    s -= l[i * n + k] * x.data[k * rhs.cols + col];
                }
                x.data[i * rhs.cols + col] = s / l[i * n + i];
            }
            for i in (0..n).rev() {
                let mut s = x.data[i * rhs.cols + col];
                for k in i + 1..n {
                    s -= l[k * n + i] * x.data[k * rhs.cols + col];
                }
                x.data[i * rhs.cols + col] = s / l[i * n + i];
            }
        }
        Ok(x)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Squared Euclidean (Frobenius) distance between equally shaped matrices.
pub fn dist_sq(a: &Matrix, b: &Matrix) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(StmError::DimensionMismatch {
            op: "dist_sq",
            details: format!("{}x{} vs {}x{}", a.rows, a.cols, b.rows, b.cols),
        });
    }
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum())
}

/// Euclidean distance between equally shaped matrices.
pub fn dist(a: &Matrix, b: &Matrix) -> Result<f64> {
    dist_sq(a, b).map(f64::sqrt)
}

/// Dot product of two matrices viewed as flat vectors of equal length.
pub fn dot(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.data.len() != b.data.len() {
        return Err(StmError::DimensionMismatch {
            op: "dot",
            details: format!("{} vs {} entries", a.data.len(), b.data.len()),
        });
    }
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum())
}
