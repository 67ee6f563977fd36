use std::ops::Index;

use super::{PolyError, Polynomial};

/// A vector of polynomials sharing one variable count.
#[derive(Clone, PartialEq, Debug)]
pub struct PolyVector {
    nvars: usize,
    entries: Vec<Polynomial>,
}

impl PolyVector {
    pub fn from_vec(nvars: usize, entries: Vec<Polynomial>) -> Result<Self, PolyError> {
        if let Some(p) = entries.iter().find(|p| p.nvars() != nvars) {
            return Err(PolyError::NvarsMismatch {
                left: nvars,
                right: p.nvars(),
            });
        }
        Ok(PolyVector { nvars, entries })
    }

    pub fn zeros(nvars: usize, len: usize) -> Self {
        PolyVector {
            nvars,
            entries: vec![Polynomial::zero(nvars); len],
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Polynomial> {
        self.entries.iter()
    }

    pub fn as_slice(&self) -> &[Polynomial] {
        &self.entries
    }

    pub fn into_vec(self) -> Vec<Polynomial> {
        self.entries
    }

    pub fn dot(&self, other: &PolyVector) -> Result<Polynomial, PolyError> {
        if self.len() != other.len() {
            return Err(PolyError::DimensionMismatch {
                expected: self.len(),
                found: other.len(),
            });
        }
        let mut acc = Polynomial::zero(self.nvars);
        for (a, b) in self.entries.iter().zip(&other.entries) {
            acc = acc.checked_add(&a.checked_mul(b)?)?;
        }
        Ok(acc)
    }

    pub fn checked_add(&self, other: &PolyVector) -> Result<PolyVector, PolyError> {
        if self.len() != other.len() {
            return Err(PolyError::DimensionMismatch {
                expected: self.len(),
                found: other.len(),
            });
        }
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a.checked_add(b))
            .collect::<Result<Vec<_>, _>>()?;
        PolyVector::from_vec(self.nvars, entries)
    }

    pub fn scale(&self, s: f64) -> PolyVector {
        PolyVector {
            nvars: self.nvars,
            entries: self.entries.iter().map(|p| p.scale(s)).collect(),
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>, PolyError> {
        self.entries.iter().map(|p| p.evaluate(x)).collect()
    }

    /// Jacobian `d self / d x` as a `len × nvars` matrix.
    pub fn jacobian(&self) -> PolyMatrix {
        let n = self.nvars;
        let mut data = Vec::with_capacity(self.len() * n);
        for p in &self.entries {
            data.extend((0..n).map(|j| p.derivative(j)));
        }
        PolyMatrix {
            nvars: n,
            rows: self.len(),
            cols: n,
            data,
        }
    }
}

impl Index<usize> for PolyVector {
    type Output = Polynomial;
    fn index(&self, i: usize) -> &Polynomial {
        &self.entries[i]
    }
}

impl<'a> IntoIterator for &'a PolyVector {
    type Item = &'a Polynomial;
    type IntoIter = std::slice::Iter<'a, Polynomial>;
    fn into_iter(self) -> Self::IntoIter {
        self.entries.iter()
    }
}

/// Row-major matrix of polynomials sharing one variable count.
#[derive(Clone, PartialEq, Debug)]
pub struct PolyMatrix {
    nvars: usize,
    rows: usize,
    cols: usize,
    data: Vec<Polynomial>,
}

impl PolyMatrix {
    pub fn from_rows(nvars: usize, rows: Vec<Vec<Polynomial>>) -> Result<Self, PolyError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(PolyError::Shape(format!(
                    "ragged matrix: expected {c} columns, found {}",
                    row.len()
                )));
            }
            for p in row {
                if p.nvars() != nvars {
                    return Err(PolyError::NvarsMismatch {
                        left: nvars,
                        right: p.nvars(),
                    });
                }
                data.push(p);
            }
        }
        Ok(PolyMatrix {
            nvars,
            rows: r,
            cols: c,
            data,
        })
    }

    pub fn zeros(nvars: usize, rows: usize, cols: usize) -> Self {
        PolyMatrix {
            nvars,
            rows,
            cols,
            data: vec![Polynomial::zero(nvars); rows * cols],
        }
    }

    pub fn identity(nvars: usize, n: usize) -> Self {
        let mut m = Self::zeros(nvars, n, n);
        for i in 0..n {
            m.data[i * n + i] = Polynomial::constant(nvars, 1.0);
        }
        m
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> &Polynomial {
        &self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, p: Polynomial) {
        assert_eq!(p.nvars(), self.nvars);
        self.data[i * self.cols + j] = p;
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(Polynomial::is_zero)
    }

    pub fn is_constant(&self) -> bool {
        self.data.iter().all(Polynomial::is_constant)
    }

    /// Exact entrywise symmetry.
    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn transpose(&self) -> PolyMatrix {
        let mut t = PolyMatrix::zeros(self.nvars, self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.get(i, j).clone();
            }
        }
        t
    }

    pub fn mul_vec(&self, v: &PolyVector) -> Result<PolyVector, PolyError> {
        if v.len() != self.cols {
            return Err(PolyError::DimensionMismatch {
                expected: self.cols,
                found: v.len(),
            });
        }
        let mut out = Vec::with_capacity(self.rows);
        for i in 0..self.rows {
            let mut acc = Polynomial::zero(self.nvars);
            for j in 0..self.cols {
                acc = acc.checked_add(&self.get(i, j).checked_mul(&v[j])?)?;
            }
            out.push(acc);
        }
        PolyVector::from_vec(self.nvars, out)
    }

    pub fn mul_mat(&self, other: &PolyMatrix) -> Result<PolyMatrix, PolyError> {
        if other.rows != self.cols {
            return Err(PolyError::DimensionMismatch {
                expected: self.cols,
                found: other.rows,
            });
        }
        let mut out = PolyMatrix::zeros(self.nvars, self.rows, other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut acc = Polynomial::zero(self.nvars);
                for k in 0..self.cols {
                    acc = acc.checked_add(&self.get(i, k).checked_mul(other.get(k, j))?)?;
                }
                out.data[i * other.cols + j] = acc;
            }
        }
        Ok(out)
    }

    /// Numeric value at `x`, row-major.
    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>, PolyError> {
        self.data.iter().map(|p| p.evaluate(x)).collect()
    }

    pub fn map(&self, f: impl Fn(&Polynomial) -> Polynomial) -> PolyMatrix {
        let data: Vec<Polynomial> = self.data.iter().map(f).collect();
        let nvars = data.first().map_or(self.nvars, Polynomial::nvars);
        PolyMatrix {
            nvars,
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn column(&self, j: usize) -> PolyVector {
        PolyVector {
            nvars: self.nvars,
            entries: (0..self.rows).map(|i| self.get(i, j).clone()).collect(),
        }
    }
}
