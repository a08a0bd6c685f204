//! Dense small-n linear algebra: the generalized (n-1)-ary cross product,
//! LU determinants and solves, finite-difference Jacobians, and the
//! numerical rank used by the independence check.
//!
//! Everything here targets n of at most a dozen or so; clarity and exact,
//! documented thresholds win over asymptotics.

use crate::error::Error;

/// Column/row vectors are plain `Vec<f64>`.
pub type Vector = Vec<f64>;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Build from row slices; all rows must have equal length.
    pub fn from_rows(rows: &[Vector]) -> Result<Self, Error> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged rows in matrix".into()));
        }
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: r,
            cols: c,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Result<Vector, Error> {
        if v.len() != self.cols {
            return Err(Error::Dimension(format!(
                "matrix has {} columns, vector has length {}",
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    pub fn mul(&self, other: &Matrix) -> Result<Matrix, Error> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut acc = 0.0;
                for k in 0..self.cols {
                    acc += self.get(i, k) * other.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        Ok(out)
    }

    /// Induced infinity norm: maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Generalized cross product of n-1 vectors in R^n: component i is
/// `(-1)^(1+i) * det(minor)` where the minor deletes column i from the
/// stacked rows. The result is orthogonal to every input row and zero iff
/// the rows are linearly dependent.
pub fn cross_nd(rows: &[Vector]) -> Result<Vector, Error> {
    let k = rows.len();
    let n = k + 1;
    if k == 0 {
        return Err(Error::Dimension("cross product needs at least one row".into()));
    }
    for row in rows {
        if row.len() != n {
            return Err(Error::Dimension(format!(
                "cross product of {k} rows needs length {n}, got {}",
                row.len()
            )));
        }
    }
    let mut out = vec![0.0; n];
    let mut minor = Matrix::zeros(k, k);
    for drop_col in 0..n {
        for (i, row) in rows.iter().enumerate() {
            let mut jj = 0;
            for (j, &value) in row.iter().enumerate() {
                if j != drop_col {
                    minor.set(i, jj, value);
                    jj += 1;
                }
            }
        }
        let d = det(&minor)?;
        out[drop_col] = if drop_col % 2 == 0 { d } else { -d };
    }
    Ok(out)
}

/// Determinant via LU with partial pivoting; singular matrices return 0.
/// Sizes 1 and 2 use the closed forms so the tiny cases match hand
/// formulas bit for bit.
pub fn det(m: &Matrix) -> Result<f64, Error> {
    if m.rows != m.cols {
        return Err(Error::Dimension(format!(
            "determinant of non-square {}x{} matrix",
            m.rows, m.cols
        )));
    }
    let n = m.rows;
    match n {
        0 => return Ok(1.0),
        1 => return Ok(m.get(0, 0)),
        2 => return Ok(m.get(0, 0) * m.get(1, 1) - m.get(0, 1) * m.get(1, 0)),
        _ => {}
    }
    let mut a = m.clone();
    let mut sign = 1.0;
    let mut product = 1.0;
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_mag = a.get(col, col).abs();
        for r in col + 1..n {
            let mag = a.get(r, col).abs();
            if mag > pivot_mag {
                pivot_mag = mag;
                pivot_row = r;
            }
        }
        if pivot_mag == 0.0 {
            return Ok(0.0);
        }
        if pivot_row != col {
            swap_rows(&mut a, pivot_row, col);
            sign = -sign;
        }
        let pivot = a.get(col, col);
        product *= pivot;
        for r in col + 1..n {
            let factor = a.get(r, col) / pivot;
            if factor != 0.0 {
                for c in col + 1..n {
                    let v = a.get(r, c) - factor * a.get(col, c);
                    a.set(r, c, v);
                }
            }
        }
    }
    Ok(sign * product)
}

/// Solve `m * x = rhs` by Gaussian elimination with partial pivoting.
/// A pivot below `1e-12 * norm_inf(m)` is reported as singular.
pub fn solve_linear(m: &Matrix, rhs: &[f64]) -> Result<Vector, Error> {
    if m.rows != m.cols {
        return Err(Error::Dimension(format!(
            "solve with non-square {}x{} matrix",
            m.rows, m.cols
        )));
    }
    let n = m.rows;
    if rhs.len() != n {
        return Err(Error::Dimension(format!(
            "rhs has length {}, matrix is {}x{}",
            rhs.len(),
            n,
            n
        )));
    }
    let threshold = 1e-12 * m.norm_inf();
    let mut a = m.clone();
    let mut b = rhs.to_vec();
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_mag = a.get(col, col).abs();
        for r in col + 1..n {
            let mag = a.get(r, col).abs();
            if mag > pivot_mag {
                pivot_mag = mag;
                pivot_row = r;
            }
        }
        if pivot_mag < threshold || pivot_mag == 0.0 {
            return Err(Error::SingularMatrix(format!(
                "pivot {pivot_mag:e} below threshold {threshold:e} in column {col}"
            )));
        }
        if pivot_row != col {
            swap_rows(&mut a, pivot_row, col);
            b.swap(pivot_row, col);
        }
        let pivot = a.get(col, col);
        for r in col + 1..n {
            let factor = a.get(r, col) / pivot;
            if factor != 0.0 {
                for c in col..n {
                    let v = a.get(r, c) - factor * a.get(col, c);
                    a.set(r, c, v);
                }
                b[r] -= factor * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for c in row + 1..n {
            acc -= a.get(row, c) * x[c];
        }
        x[row] = acc / a.get(row, row);
    }
    Ok(x)
}

fn swap_rows(m: &mut Matrix, i: usize, j: usize) {
    for c in 0..m.cols {
        let tmp = m.get(i, c);
        m.set(i, c, m.get(j, c));
        m.set(j, c, tmp);
    }
}

/// Jacobian of a vector function by central differences with per-coordinate
/// step `1e-6 * max(1, |x_j|)`. Entry (i, j) approximates df_i/dx_j.
pub fn jacobian_fd<F>(f: F, point: &[f64]) -> Result<Matrix, Error>
where
    F: Fn(&[f64]) -> Result<Vector, Error>,
{
    let n = point.len();
    let base = f(point)?;
    let p = base.len();
    let mut jac = Matrix::zeros(p, n);
    let mut hi = point.to_vec();
    let mut lo = point.to_vec();
    for j in 0..n {
        let h = 1e-6 * point[j].abs().max(1.0);
        hi[j] = point[j] + h;
        lo[j] = point[j] - h;
        let fhi = f(&hi)?;
        let flo = f(&lo)?;
        if fhi.len() != p || flo.len() != p {
            return Err(Error::Dimension(
                "function output length changed between evaluations".into(),
            ));
        }
        for i in 0..p {
            jac.set(i, j, (fhi[i] - flo[i]) / (2.0 * h));
        }
        hi[j] = point[j];
        lo[j] = point[j];
    }
    Ok(jac)
}

/// Singular values (descending) via Jacobi eigenvalues of the Gram matrix
/// of the shorter side. Adequate for the rank decisions made here.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    let gram = if m.rows <= m.cols {
        m.mul(&m.transpose()).expect("gram")
    } else {
        m.transpose().mul(m).expect("gram")
    };
    let mut eig = symmetric_eigenvalues(&gram);
    for v in &mut eig {
        *v = v.max(0.0).sqrt();
    }
    eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
    eig
}

/// Count of singular values above `rel_tol * sigma_max`.
pub fn numerical_rank(m: &Matrix, rel_tol: f64) -> usize {
    let sv = singular_values(m);
    match sv.first() {
        None | Some(&0.0) => 0,
        Some(&smax) => sv.iter().filter(|&&s| s > rel_tol * smax).count(),
    }
}

/// Cyclic Jacobi iteration for a symmetric matrix; returns the eigenvalues.
fn symmetric_eigenvalues(m: &Matrix) -> Vec<f64> {
    let n = m.rows();
    let mut a = m.clone();
    let scale = a.norm_inf().max(1e-300);
    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                off = off.max(a.get(p, q).abs());
            }
        }
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
            }
        }
    }
    (0..n).map(|i| a.get(i, i)).collect()
}
