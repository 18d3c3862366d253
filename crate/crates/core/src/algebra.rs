//! Entry-sum calculus on vectors and matrices.
//!
//! The toolkit only ever needs the entry sum `σ(M)`, conjugation by signed
//! diagonals `I M I`, the max-norm, and the exponential of the all-ones
//! matrix. Diagonal sign matrices are kept as sign vectors, so a conjugation
//! `σ(I M I)` is a signed entry sum and never a matrix product.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major real matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
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

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::invalid("ragged matrix rows"));
        }
        Ok(Self {
            rows: r,
            cols: c,
            data: rows.concat(),
        })
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, d) in diag.iter().enumerate() {
            m[(i, i)] = *d;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len());
        (0..self.rows).map(|i| (0..self.cols).map(|j| self[(i, j)] * v[j]).sum()).collect()
    }

    /// Induced max-norm: largest absolute row sum.
    pub fn max_norm(&self) -> f64 {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
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

/// `σ(M)`: the sum of all entries.
pub fn sum_entries(m: &Matrix) -> f64 {
    m.data.iter().sum()
}

/// Entry sum of a vector, viewed as a q×1 matrix.
pub fn sum_vec(v: &[f64]) -> f64 {
    v.iter().sum()
}

/// Max-norm `max |z_i|`.
pub fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// The signed diagonal `I_{i,q}`: all `+1` except a `-1` at position `i`
/// (1-based). Index 0 is the identity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Involution {
    index: usize,
    signs: Vec<i8>,
}

impl Involution {
    pub fn new(index: usize, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("involution dimension must be at least 1"));
        }
        if index > dim {
            return Err(Error::invalid(format!("involution index {index} out of range 0..={dim}")));
        }
        let mut signs = vec![1i8; dim];
        if index >= 1 {
            signs[index - 1] = -1;
        }
        Ok(Self { index, signs })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            index: 0,
            signs: vec![1; dim],
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn dim(&self) -> usize {
        self.signs.len()
    }

    pub fn sign(&self, j: usize) -> f64 {
        f64::from(self.signs[j])
    }

    pub fn signs(&self) -> impl Iterator<Item = f64> + '_ {
        self.signs.iter().map(|&s| f64::from(s))
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(self.signs()).map(|(x, s)| s * x).collect()
    }

    /// `σ(I v)`.
    pub fn signed_sum(&self, v: &[f64]) -> f64 {
        v.iter().zip(self.signs()).map(|(x, s)| s * x).sum()
    }

    /// `σ(I M I)`.
    pub fn conjugated_sum(&self, m: &Matrix) -> f64 {
        self.scaled_conjugated_sum(m, None)
    }

    /// `σ(I Z⁻¹ M Z I)` with `Z = diag(scale)`; `None` means `Z` is the identity.
    pub fn scaled_conjugated_sum(&self, m: &Matrix, scale: Option<&[f64]>) -> f64 {
        let q = self.dim();
        debug_assert_eq!((m.rows(), m.cols()), (q, q));
        let mut total = 0.0;
        for j in 0..q {
            let sj = self.sign(j);
            let mut row = 0.0;
            for k in 0..q {
                let w = match scale {
                    Some(z) => z[k],
                    None => 1.0,
                };
                row += self.sign(k) * m[(j, k)] * w;
            }
            total += match scale {
                Some(z) => sj * row / z[j],
                None => sj * row,
            };
        }
        total
    }

    /// `I M I` as a dense matrix (row and column sign flips).
    pub fn conjugate(&self, m: &Matrix) -> Matrix {
        let mut out = m.clone();
        for j in 0..m.rows() {
            for k in 0..m.cols() {
                out[(j, k)] *= self.sign(j) * self.sign(k);
            }
        }
        out
    }
}

/// `{ ±I_{i,q} : i = 0..q }`, each as `(sign, involution)`.
pub fn signed_involutions(q: usize) -> Vec<(f64, Involution)> {
    (0..=q)
        .flat_map(|i| {
            let inv = Involution::new(i, q).expect("index in range");
            [(1.0, inv.clone()), (-1.0, inv)]
        })
        .collect()
}

/// Recovers `y_i` from `½[σ(I_{0,q} y) − σ(I_{i,q} y)]`.
pub fn recover_component(y: &[f64], i: usize) -> Result<f64> {
    if i == 0 || i > y.len() {
        return Err(Error::invalid(format!("component index {i} out of range 1..={}", y.len())));
    }
    let base = Involution::identity(y.len()).signed_sum(y);
    let flipped = Involution::new(i, y.len())?.signed_sum(y);
    Ok(0.5 * (base - flipped))
}

/// `exp(t J)` for the q×q all-ones matrix `J`, from `J² = qJ`:
/// `I + (e^{qt} − 1)/q · J`.
pub fn ones_exp(t: f64, q: usize) -> Result<Matrix> {
    if q == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    let off = (q as f64 * t).exp_m1() / q as f64;
    let mut m = Matrix::zeros(q, q);
    m.fill(off);
    for i in 0..q {
        m[(i, i)] += 1.0;
    }
    Ok(m)
}

/// All-ones matrix `J_q`.
pub fn ones(q: usize) -> Matrix {
    let mut m = Matrix::zeros(q, q);
    m.fill(1.0);
    m
}

/// Entrywise membership in the open cone (`z ≻ 0`) and its closure (`z ⪰ 0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConeMembership {
    pub dim: usize,
    pub positive: bool,
    pub nonnegative: bool,
}

impl ConeMembership {
    pub fn of(z: &[f64]) -> Self {
        Self {
            dim: z.len(),
            positive: z.iter().all(|&x| x > 0.0),
            nonnegative: z.iter().all(|&x| x >= 0.0),
        }
    }
}
