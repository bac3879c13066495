//! Small dense matrix helpers. Sizes here are a handful of agents, so
//! everything is row-major `Vec<f64>` with naive loops.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
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
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from nested rows. All rows must have the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Option<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return None;
        }
        Some(Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matrix-vector size mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Display for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.rows {
            writeln!(f, "{:?}", self.row(i))?;
        }
        Ok(())
    }
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Reduced row echelon form with partial pivoting. Returns the reduced
/// matrix and the pivot column of each nonzero row.
fn rref(m: &Matrix, tol: f64) -> (Matrix, Vec<usize>) {
    let mut a = m.clone();
    let (rows, cols) = (a.rows, a.cols);
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let (p, best) =
            (r..rows)
                .map(|i| (i, a[(i, c)].abs()))
                .fold((r, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if best <= tol {
            for i in r..rows {
                a[(i, c)] = 0.0;
            }
            continue;
        }
        if p != r {
            for j in 0..cols {
                a.data.swap(p * cols + j, r * cols + j);
            }
        }
        let piv = a[(r, c)];
        for j in 0..cols {
            a[(r, j)] /= piv;
        }
        a[(r, c)] = 1.0;
        for i in 0..rows {
            if i == r {
                continue;
            }
            let f = a[(i, c)];
            if f != 0.0 {
                for j in 0..cols {
                    let v = a[(r, j)];
                    a[(i, j)] -= f * v;
                }
                a[(i, c)] = 0.0;
            }
        }
        pivots.push(c);
        r += 1;
    }
    (a, pivots)
}

/// Orthonormal basis of `{x : m x = 0}`.
///
/// Free variables of the row-reduced system give a raw basis which is then
/// orthonormalised with modified Gram-Schmidt.
pub fn null_space(m: &Matrix) -> Vec<Vec<f64>> {
    let tol = 1e-10 * m.max_abs().max(1.0);
    let (r, pivots) = rref(m, tol);
    let n = m.cols;
    let mut raw = Vec::new();
    for free in (0..n).filter(|c| !pivots.contains(c)) {
        let mut v = vec![0.0; n];
        v[free] = 1.0;
        for (row, &pc) in pivots.iter().enumerate() {
            v[pc] = -r[(row, free)];
        }
        raw.push(v);
    }
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(raw.len());
    for mut v in raw {
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let norm = l2_norm(&v);
        if norm > tol {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    basis
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
/// Returns `None` for (numerically) singular systems.
pub fn solve(a: &Matrix, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.rows;
    assert!(a.cols == n && b.len() == n, "solve needs a square system");
    let mut m = a.clone();
    let mut x = b.to_vec();
    let tol = 1e-14 * a.max_abs().max(f64::MIN_POSITIVE);
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[(i, c)].abs().total_cmp(&m[(j, c)].abs()))?;
        if m[(p, c)].abs() <= tol {
            return None;
        }
        if p != c {
            for j in 0..n {
                m.data.swap(p * n + j, c * n + j);
            }
            x.swap(p, c);
        }
        for i in c + 1..n {
            let f = m[(i, c)] / m[(c, c)];
            if f != 0.0 {
                for j in c..n {
                    let v = m[(c, j)];
                    m[(i, j)] -= f * v;
                }
                x[i] -= f * x[c];
            }
        }
    }
    for c in (0..n).rev() {
        let s: f64 = (c + 1..n).map(|j| m[(c, j)] * x[j]).sum();
        x[c] = (x[c] - s) / m[(c, c)];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_space_of_rank_one_2x2() {
        let m = Matrix::from_rows(&[vec![0.5, -0.5], vec![-0.5, 0.5]]).unwrap();
        let basis = null_space(&m);
        assert_eq!(basis.len(), 1);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let v = &basis[0];
        assert!((v[0].abs() - s).abs() < 1e-15 && (v[1] - v[0]).abs() < 1e-15);
    }

    #[test]
    fn identity_has_trivial_null_space() {
        assert!(null_space(&Matrix::identity(4)).is_empty());
    }

    #[test]
    fn null_space_of_zero_matrix_is_everything() {
        let basis = null_space(&Matrix::zeros(2, 3));
        assert_eq!(basis.len(), 3);
    }

    #[test]
    fn solve_small_system() {
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let x = solve(&a, &[3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-14 && (x[1] - 1.4).abs() < 1e-14);
        assert!(solve(&Matrix::zeros(2, 2), &[1.0, 1.0]).is_none());
    }
}
