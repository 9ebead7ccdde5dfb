//! Empirical Rosenblatt quantile and the concomitant-based L-moment
//! estimators built on it.
//!
//! Sorting the sample on one coordinate and carrying the other coordinates
//! along gives the empirical Rosenblatt quantile, which is piecewise constant
//! in the first argument only. Only indices of the form `(r, 1, …, 1)` are
//! therefore meaningful; every other index integrates to zero.

use nalgebra::DMatrix;

use crate::error::{domain, Error, Result};
use crate::polybasis::{binomial, legendre_interval_weight};
use crate::sample::SampleMatrix;

/// Row permutation sorting the sample on one coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcomitantOrder {
    /// Zero-based coordinate the rows are sorted by.
    pub sort_coordinate: usize,
    /// `permutation[k]` is the row holding the `(k+1)`-th order statistic.
    pub permutation: Vec<usize>,
    /// Set when two rows share the same value of the sort coordinate.
    pub has_ties: bool,
}

/// Stable sort of the rows by coordinate `j` (zero-based); ties keep input order.
pub fn sort_with_concomitants(samples: &SampleMatrix, j: usize) -> Result<ConcomitantOrder> {
    if j >= samples.dim() {
        return domain(format!(
            "sort coordinate {j} out of range for dimension {}",
            samples.dim()
        ));
    }
    let mut permutation: Vec<usize> = (0..samples.n()).collect();
    permutation.sort_by(|&a, &b| samples.get(a, j).total_cmp(&samples.get(b, j)));
    let has_ties = permutation
        .windows(2)
        .any(|w| samples.get(w[0], j) == samples.get(w[1], j));
    Ok(ConcomitantOrder {
        sort_coordinate: j,
        permutation,
        has_ties,
    })
}

/// Empirical Rosenblatt quantile `Q_n`, sorted on the first coordinate.
#[derive(Debug, Clone)]
pub struct RosenblattQuantile<'a> {
    samples: &'a SampleMatrix,
    order: ConcomitantOrder,
}

impl<'a> RosenblattQuantile<'a> {
    pub fn new(samples: &'a SampleMatrix) -> Self {
        let order = sort_with_concomitants(samples, 0).expect("dimension is at least 1");
        Self { samples, order }
    }

    pub fn order(&self) -> &ConcomitantOrder {
        &self.order
    }

    /// Row `x_{(i:n)}` with `u₁ ∈ [(i−1)/n, i/n)`; `u₁ = 1` maps to the last row.
    pub fn eval(&self, u: &[f64]) -> Result<&'a [f64]> {
        if u.len() != self.samples.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.samples.dim(),
                got: u.len(),
            });
        }
        if u.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return domain("Rosenblatt quantile argument outside the unit cube");
        }
        let n = self.samples.n();
        let rank = ((u[0] * n as f64).floor() as usize).min(n - 1);
        Ok(self.samples.row(self.order.permutation[rank]))
    }
}

/// Convenience wrapper over [`RosenblattQuantile::eval`].
pub fn empirical_rosenblatt_quantile(samples: &SampleMatrix, u: &[f64]) -> Result<Vec<f64>> {
    RosenblattQuantile::new(samples).eval(u).map(<[f64]>::to_vec)
}

fn weighted_rows(samples: &SampleMatrix, order: &ConcomitantOrder, weights: &[f64]) -> Vec<f64> {
    let mut acc = vec![0.0; samples.dim()];
    for (&row, &w) in order.permutation.iter().zip(weights) {
        for (a, x) in acc.iter_mut().zip(samples.row(row)) {
            *a += w * x;
        }
    }
    acc
}

/// Plug-in weights `w_i = K_r(i/n) − K_r((i−1)/n)`.
pub fn direct_weights(r: u32, n: usize) -> Result<Vec<f64>> {
    (1..=n).map(|i| legendre_interval_weight(r, i, n)).collect()
}

/// Unbiased (U-statistic) weights for the `r`-th L-moment of a sample of size `n`:
///
/// `v_i = (1/n) Σ_j (−1)^{r−1−j} C(r−1, j) C(r−1+j, j) C(i−1, j) / C(n−1, j)`.
pub fn unbiased_weights(r: u32, n: usize) -> Result<Vec<f64>> {
    if r < 1 {
        return domain("L-moment order starts at 1");
    }
    if (r as usize) > n {
        return Err(Error::InsufficientSamples {
            needed: r as usize,
            got: n,
        });
    }
    let rm1 = (r - 1) as u64;
    let coeffs: Vec<f64> = (0..=rm1)
        .map(|j| {
            let sign = if (rm1 - j).is_multiple_of(2) { 1.0 } else { -1.0 };
            sign * binomial(rm1, j) * binomial(rm1 + j, j)
        })
        .collect();
    let nf = n as f64;
    Ok((1..=n)
        .map(|i| {
            let mut ratio = 1.0; // C(i−1, j) / C(n−1, j)
            let mut acc = 0.0;
            for (j, c) in coeffs.iter().enumerate() {
                if j > 0 {
                    let jm = (j - 1) as f64;
                    ratio *= ((i - 1) as f64 - jm) / ((n - 1) as f64 - jm);
                }
                if j >= i {
                    break;
                }
                acc += c * ratio;
            }
            acc / nf
        })
        .collect())
}

/// Plug-in Rosenblatt estimate of `λ_{(r,1,…,1)}`.
pub fn lmoment_rosenblatt_direct(samples: &SampleMatrix, r: u32) -> Result<Vec<f64>> {
    let order = sort_with_concomitants(samples, 0)?;
    let w = direct_weights(r, samples.n())?;
    Ok(weighted_rows(samples, &order, &w))
}

/// Unbiased Rosenblatt estimate of `λ_{(r,1,…,1)}`; needs `r ≤ n`.
pub fn lmoment_rosenblatt_unbiased(samples: &SampleMatrix, r: u32) -> Result<Vec<f64>> {
    concomitant_lmoment_unbiased(samples, r, 0)
}

/// Unbiased concomitant estimate with the rows sorted on coordinate `j`.
pub fn concomitant_lmoment_unbiased(samples: &SampleMatrix, r: u32, j: usize) -> Result<Vec<f64>> {
    let order = sort_with_concomitants(samples, j)?;
    let v = unbiased_weights(r, samples.n())?;
    Ok(weighted_rows(samples, &order, &v))
}

/// Unbiased univariate `r`-th sample L-moment.
pub fn univariate_lmoment_unbiased(values: &[f64], r: u32) -> Result<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let v = unbiased_weights(r, sorted.len())?;
    Ok(sorted.iter().zip(&v).map(|(x, w)| x * w).sum())
}

/// Pairwise concomitant matrix `Λ_r`: column `j` is the unbiased estimate
/// obtained by sorting on coordinate `j`, so the diagonal holds the
/// univariate L-moments of the marginals.
pub fn serfling_xiao_matrix(samples: &SampleMatrix, r: u32) -> Result<DMatrix<f64>> {
    let d = samples.dim();
    let mut m = DMatrix::zeros(d, d);
    for j in 0..d {
        let col = concomitant_lmoment_unbiased(samples, r, j)?;
        for (i, v) in col.into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

/// Order-statistic weights of the unbiased TL-moment estimator.
pub fn tl_weights(r: u32, t1: u32, t2: u32, n: usize) -> Result<Vec<f64>> {
    if r < 1 {
        return domain("TL-moment order starts at 1");
    }
    let size = (r + t1 + t2) as usize;
    if size > n {
        return Err(Error::InsufficientSamples { needed: size, got: n });
    }
    let total = binomial(n as u64, size as u64);
    let rm1 = (r - 1) as u64;
    Ok((1..=n as u64)
        .map(|i| {
            let mut acc = 0.0;
            for k in 0..=rm1 {
                let below = (r as u64 + t1 as u64 - 1).checked_sub(k);
                let Some(below) = below else { continue };
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                acc += sign
                    * binomial(rm1, k)
                    * binomial(i - 1, below)
                    * binomial(n as u64 - i, t2 as u64 + k);
            }
            acc / (r as f64 * total)
        })
        .collect())
}

/// Unbiased estimate of the trimmed L-moment `λ_r^{(t1,t2)}`, i.e. the
/// average over all subsamples of size `r + t1 + t2`.
pub fn tl_moment_univariate(values: &[f64], r: u32, t1: u32, t2: u32) -> Result<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let w = tl_weights(r, t1, t2, sorted.len())?;
    Ok(sorted.iter().zip(&w).map(|(x, w)| x * w).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rows3() -> SampleMatrix {
        SampleMatrix::from_rows(&[[3.0, 9.0], [1.0, 5.0], [2.0, 7.0]]).unwrap()
    }

    #[test]
    fn sorting_examples() {
        let s = rows3();
        let o = sort_with_concomitants(&s, 0).unwrap();
        assert_eq!(o.permutation, vec![1, 2, 0]);
        assert!(!o.has_ties);
        assert_eq!(sort_with_concomitants(&s, 1).unwrap().permutation, vec![1, 2, 0]);
        let single = SampleMatrix::from_rows(&[[4.0, 2.0]]).unwrap();
        assert_eq!(sort_with_concomitants(&single, 1).unwrap().permutation, vec![0]);
        assert!(sort_with_concomitants(&s, 2).is_err());
    }

    #[test]
    fn ties_are_flagged_and_stable() {
        let s = SampleMatrix::from_rows(&[[1.0, 3.0], [0.0, 1.0], [1.0, 2.0]]).unwrap();
        let o = sort_with_concomitants(&s, 0).unwrap();
        assert!(o.has_ties);
        assert_eq!(o.permutation, vec![1, 0, 2]);
    }

    #[test]
    fn quantile_cells() {
        let s = SampleMatrix::from_rows(&[[4.0, 0.0], [1.0, 1.0], [3.0, 2.0], [2.0, 3.0]]).unwrap();
        let q = RosenblattQuantile::new(&s);
        assert_eq!(q.eval(&[0.1, 0.9]).unwrap(), &[1.0, 1.0]);
        assert_eq!(q.eval(&[0.25, 0.0]).unwrap(), &[2.0, 3.0]);
        assert_eq!(q.eval(&[1.0, 0.5]).unwrap(), &[4.0, 0.0]);
        assert!(q.eval(&[1.2, 0.5]).is_err());
        assert!(q.eval(&[0.5]).is_err());
        let one = SampleMatrix::from_rows(&[[7.0, 8.0]]).unwrap();
        for u in [0.0, 0.4, 1.0] {
            assert_eq!(empirical_rosenblatt_quantile(&one, &[u, 0.3]).unwrap(), vec![7.0, 8.0]);
        }
    }

    #[test]
    fn direct_examples() {
        let s = rows3();
        let m = lmoment_rosenblatt_direct(&s, 1).unwrap();
        assert_abs_diff_eq!(m[0], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(m[1], 7.0, epsilon = 1e-14);
        let s = SampleMatrix::from_column(&[0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(lmoment_rosenblatt_direct(&s, 2).unwrap()[0], 0.25, epsilon = 1e-15);
        let s = SampleMatrix::from_rows(&[[0.0, 5.0], [1.0, 7.0]]).unwrap();
        let l = lmoment_rosenblatt_direct(&s, 2).unwrap();
        assert_abs_diff_eq!(l[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(l[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn unbiased_examples() {
        let s = rows3();
        let m = lmoment_rosenblatt_unbiased(&s, 1).unwrap();
        assert_abs_diff_eq!(m[0], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(m[1], 7.0, epsilon = 1e-14);
        let s = SampleMatrix::from_column(&[0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(lmoment_rosenblatt_unbiased(&s, 2).unwrap()[0], 0.5, epsilon = 1e-15);
        let s = SampleMatrix::from_column(&[1.0, 2.0, 3.0]).unwrap();
        assert_abs_diff_eq!(
            lmoment_rosenblatt_unbiased(&s, 2).unwrap()[0],
            2.0 / 3.0,
            epsilon = 1e-15
        );
        assert!(matches!(
            lmoment_rosenblatt_unbiased(&s, 4),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn weight_sums() {
        for n in [1usize, 2, 9, 40] {
            for r in 1..=5u32 {
                let s: f64 = direct_weights(r, n).unwrap().iter().sum();
                assert_abs_diff_eq!(s, if r == 1 { 1.0 } else { 0.0 }, epsilon = 1e-12);
                if r as usize <= n {
                    let s: f64 = unbiased_weights(r, n).unwrap().iter().sum();
                    assert_abs_diff_eq!(s, if r == 1 { 1.0 } else { 0.0 }, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn serfling_xiao_examples() {
        let s = rows3();
        let m = serfling_xiao_matrix(&s, 1).unwrap();
        for j in 0..2 {
            assert_abs_diff_eq!(m[(0, j)], 2.0, epsilon = 1e-14);
            assert_abs_diff_eq!(m[(1, j)], 7.0, epsilon = 1e-14);
        }
        // comonotone (x, 2x): both sort orders coincide
        let xs = [0.3, -1.2, 2.5, 0.9, 1.7, -0.4];
        let rows: Vec<[f64; 2]> = xs.iter().map(|&x| [x, 2.0 * x]).collect();
        let s = SampleMatrix::from_rows(&rows).unwrap();
        let m = serfling_xiao_matrix(&s, 2).unwrap();
        assert_abs_diff_eq!(m[(1, 0)], 2.0 * m[(0, 0)], epsilon = 1e-12);
        assert_abs_diff_eq!(m[(0, 1)], 0.5 * m[(1, 1)], epsilon = 1e-12);
        assert_abs_diff_eq!(m[(1, 1)], 2.0 * m[(0, 0)], epsilon = 1e-12);
    }

    #[test]
    fn tl_examples() {
        assert_abs_diff_eq!(tl_moment_univariate(&[1.0, 2.0, 3.0], 1, 1, 1).unwrap(), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            tl_moment_univariate(&[0.0, 1.0, 2.0, 3.0], 1, 1, 1).unwrap(),
            1.5,
            epsilon = 1e-15
        );
        let xs = [0.5, -2.0, 3.25, 1.0, 7.5];
        for r in 1..=4 {
            assert_abs_diff_eq!(
                tl_moment_univariate(&xs, r, 0, 0).unwrap(),
                univariate_lmoment_unbiased(&xs, r).unwrap(),
                epsilon = 1e-12
            );
        }
        assert!(tl_moment_univariate(&[1.0, 2.0], 1, 1, 1).is_err());
    }
}
