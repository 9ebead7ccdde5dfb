//! Row-major sample matrix: `n` observations of a `d`-dimensional vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMatrix {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl SampleMatrix {
    /// Builds a matrix from row-major data, rejecting non-finite entries.
    pub fn from_row_major(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        if d == 0 {
            return Err(Error::Domain("sample dimension must be at least 1".into()));
        }
        if data.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / d,
                col: pos % d,
            });
        }
        Ok(Self { n, d, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            let r = r.as_ref();
            if r.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_row_major(rows.len(), d, data)
    }

    /// Univariate sample as an `n × 1` matrix.
    pub fn from_column(values: &[f64]) -> Result<Self> {
        Self::from_row_major(values.len(), 1, values.to_vec())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.d + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for r in self.rows() {
            for (acc, v) in m.iter_mut().zip(r) {
                *acc += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= self.n as f64);
        m
    }

    /// Applies `x ↦ scale·x + shift` to every row.
    pub fn affine(&self, scale: f64, shift: &[f64]) -> Result<Self> {
        if shift.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: shift.len(),
            });
        }
        let data = self
            .rows()
            .flat_map(|r| r.iter().zip(shift).map(|(x, m)| scale * x + m))
            .collect();
        Self::from_row_major(self.n, self.d, data)
    }

    /// Applies a `d × d` matrix (row-major) to every row: `x ↦ M x`.
    pub fn linear_map(&self, m: &[f64]) -> Result<Self> {
        if m.len() != self.d * self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d * self.d,
                got: m.len(),
            });
        }
        let d = self.d;
        let data = self
            .rows()
            .flat_map(|r| {
                (0..d).map(move |i| (0..d).map(|k| m[i * d + k] * r[k]).sum::<f64>())
            })
            .collect();
        Self::from_row_major(self.n, d, data)
    }

    /// Returns the first pair of identical rows, if any.
    pub fn find_duplicate(&self) -> Option<(usize, usize)> {
        let mut order: Vec<usize> = (0..self.n).collect();
        order.sort_by(|&a, &b| {
            self.row(a)
                .iter()
                .zip(self.row(b))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        order.windows(2).find_map(|w| {
            (self.row(w[0]) == self.row(w[1])).then(|| (w[0].min(w[1]), w[0].max(w[1])))
        })
    }

    /// Unbiased sample covariance (row-major `d × d`). Needs `n ≥ 2`.
    pub fn covariance(&self) -> Result<Vec<f64>> {
        if self.n < 2 {
            return Err(Error::InsufficientSamples {
                needed: 2,
                got: self.n,
            });
        }
        let mean = self.column_means();
        let d = self.d;
        let mut c = vec![0.0; d * d];
        for r in self.rows() {
            for i in 0..d {
                for j in 0..d {
                    c[i * d + j] += (r[i] - mean[i]) * (r[j] - mean[j]);
                }
            }
        }
        c.iter_mut().for_each(|v| *v /= (self.n - 1) as f64);
        Ok(c)
    }
}
