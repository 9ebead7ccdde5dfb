//! Shifted Legendre polynomials on `[0, 1]`, probabilists' Hermite
//! polynomials on `ℝ`, and their tensor products.
//!
//! Legendre indices start at 1 (`L_1 ≡ 1`, `L_2(t) = 2t − 1`). Hermite
//! degrees start at 0 (`H_0 ≡ 1`). When a [`MultiIndex`] addresses a Hermite
//! L-moment, each entry is shifted down by one so that `(1, …, 1)` is the mean
//! in both bases.
//!
//! All evaluations go through three-term recurrences.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Multi-index `α = (i_1, …, i_d)` with every entry at least 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(indices: Vec<u32>) -> Result<Self> {
        if indices.is_empty() {
            return domain("multi-index needs at least one entry");
        }
        if let Some(pos) = indices.iter().position(|&i| i == 0) {
            return domain(format!("multi-index entry {pos} is 0; entries start at 1"));
        }
        Ok(Self(indices))
    }

    /// The index `(1, …, 1)` of the mean.
    pub fn ones(dim: usize) -> Self {
        Self(vec![1; dim])
    }

    /// `(1, …, r, …, 1)` with `r` at position `axis`.
    pub fn axis(dim: usize, axis: usize, r: u32) -> Result<Self> {
        if axis >= dim {
            return domain(format!("axis {axis} out of range for dimension {dim}"));
        }
        let mut v = vec![1; dim];
        v[axis] = r;
        Self::new(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn indices(&self) -> &[u32] {
        &self.0
    }

    /// `Σ (i_k − 1) + 1`.
    pub fn degree(&self) -> u32 {
        self.0.iter().map(|&i| i - 1).sum::<u32>() + 1
    }

    pub fn is_mean(&self) -> bool {
        self.0.iter().all(|&i| i == 1)
    }

    pub fn max_index(&self) -> u32 {
        self.0.iter().copied().max().unwrap_or(1)
    }

    /// If the index has the shape `(1, …, r, …, 1)`, the position of `r`.
    /// The mean index reports axis 0.
    pub fn single_axis(&self) -> Option<(usize, u32)> {
        let mut found = None;
        for (k, &i) in self.0.iter().enumerate() {
            if i != 1 {
                if found.is_some() {
                    return None;
                }
                found = Some((k, i));
            }
        }
        Some(found.unwrap_or((0, 1)))
    }

    /// Hermite degrees `α − 1`.
    pub fn hermite_degrees(&self) -> Vec<u32> {
        self.0.iter().map(|&i| i - 1).collect()
    }
}

impl TryFrom<Vec<u32>> for MultiIndex {
    type Error = Error;
    fn try_from(v: Vec<u32>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<MultiIndex> for Vec<u32> {
    fn from(m: MultiIndex) -> Self {
        m.0
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|i| i.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

impl FromStr for MultiIndex {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let parsed: std::result::Result<Vec<u32>, _> =
            s.split(',').map(|p| p.trim().parse::<u32>()).collect();
        match parsed {
            Ok(v) => Self::new(v),
            Err(_) => domain(format!("cannot parse multi-index from {s:?}")),
        }
    }
}

/// Binomial coefficient as a float; exact for the small arguments used here.
pub(crate) fn binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for j in 0..k {
        acc = acc * (n - j) as f64 / (j + 1) as f64;
    }
    if acc < 9.0e15 {
        acc.round()
    } else {
        acc
    }
}

/// Classical Legendre `P_m` on `[-1, 1]` and the previous two terms,
/// returned as `(P_m, P_{m-1}, P_{m-2})` with missing terms set to 0.
fn legendre_classic(m: u32, x: f64) -> (f64, f64, f64) {
    if m == 0 {
        return (1.0, 0.0, 0.0);
    }
    let (mut pm2, mut pm1, mut p) = (0.0, 1.0, x);
    for k in 2..=m {
        let kf = k as f64;
        let next = ((2.0 * kf - 1.0) * x * p - (kf - 1.0) * pm1) / kf;
        pm2 = pm1;
        pm1 = p;
        p = next;
    }
    (p, pm1, pm2)
}

fn check_unit(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return domain(format!("argument {t} outside [0, 1]"));
    }
    Ok(())
}

/// Shifted Legendre polynomial `L_r(t) = P_{r−1}(2t − 1)`.
pub fn legendre(r: u32, t: f64) -> Result<f64> {
    if r < 1 {
        return domain("Legendre index starts at 1");
    }
    check_unit(t)?;
    Ok(legendre_unchecked(r, t))
}

#[inline]
pub(crate) fn legendre_unchecked(r: u32, t: f64) -> f64 {
    legendre_classic(r - 1, 2.0 * t - 1.0).0
}

/// Fills `out[k] = L_{k+1}(t)` for `k < out.len()`.
#[inline]
pub(crate) fn legendre_table(t: f64, out: &mut [f64]) {
    let x = 2.0 * t - 1.0;
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = x;
    }
    for k in 2..out.len() {
        let kf = k as f64;
        out[k] = ((2.0 * kf - 1.0) * x * out[k - 1] - (kf - 1.0) * out[k - 2]) / kf;
    }
}

/// `∏_k L_{i_k}(t_k)`.
pub fn legendre_multi(alpha: &MultiIndex, t: &[f64]) -> Result<f64> {
    if alpha.dim() != t.len() {
        return Err(Error::DimensionMismatch {
            expected: alpha.dim(),
            got: t.len(),
        });
    }
    let mut acc = 1.0;
    for (&i, &tk) in alpha.indices().iter().zip(t) {
        acc *= legendre(i, tk)?;
    }
    Ok(acc)
}

/// `K_r(x) = ∫₀ˣ L_r`, so `K_r(0) = 0`.
pub fn legendre_primitive1(r: u32, x: f64) -> Result<f64> {
    if r < 1 {
        return domain("Legendre index starts at 1");
    }
    if r == 1 {
        return Ok(x);
    }
    // ∫_{-1}^{y} P_m = (P_{m+1} − P_{m−1}) / (2m + 1), which vanishes at y = −1.
    let m = r - 1;
    let (p_next, _, p_prev) = legendre_classic(m + 1, 2.0 * x - 1.0);
    Ok((p_next - p_prev) / (2.0 * (2.0 * m as f64 + 1.0)))
}

/// `J_r(x) = ∫₀ˣ K_r`, so `J_r(0) = 0`.
pub fn legendre_primitive2(r: u32, x: f64) -> Result<f64> {
    if r < 1 {
        return domain("Legendre index starts at 1");
    }
    let y = 2.0 * x - 1.0;
    // ∫_{-1}^{y} P_m, in the variable y.
    let int_p = |m: u32| -> f64 {
        if m == 0 {
            y + 1.0
        } else {
            let (p_next, _, p_prev) = legendre_classic(m + 1, y);
            (p_next - p_prev) / (2.0 * m as f64 + 1.0)
        }
    };
    Ok(match r {
        1 => 0.5 * x * x,
        _ => {
            let m = r - 1;
            // K_r = (P_{m+1} − P_{m−1}) / (2(2m+1)) and dt = dy / 2.
            (int_p(m + 1) - int_p(m - 1)) / (4.0 * (2.0 * m as f64 + 1.0))
        }
    })
}

/// `∫_{(i−1)/n}^{i/n} L_r(u) du`: the weight of the `i`-th order statistic
/// (1-based) in the plug-in estimator of the `r`-th L-moment.
pub fn legendre_interval_weight(r: u32, i: usize, n: usize) -> Result<f64> {
    if n == 0 || i < 1 || i > n {
        return domain(format!("order-statistic rank {i} outside 1..={n}"));
    }
    let hi = i as f64 / n as f64;
    let lo = (i - 1) as f64 / n as f64;
    Ok(legendre_primitive1(r, hi)? - legendre_primitive1(r, lo)?)
}

/// Probabilists' Hermite polynomial `H_r`, `H_{r+1} = x H_r − r H_{r−1}`.
pub fn hermite(r: u32, x: f64) -> f64 {
    let (mut prev, mut cur) = (0.0, 1.0);
    for k in 0..r {
        let next = x * cur - k as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Fills `out[k] = H_k(x)`.
#[inline]
pub(crate) fn hermite_table(x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = x;
    }
    for k in 2..out.len() {
        out[k] = x * out[k - 1] - (k - 1) as f64 * out[k - 2];
    }
}

/// `∏_k H_{d_k}(x_k)` for raw Hermite degrees.
pub fn hermite_multi(degrees: &[u32], x: &[f64]) -> Result<f64> {
    if degrees.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: degrees.len(),
            got: x.len(),
        });
    }
    Ok(degrees.iter().zip(x).map(|(&r, &xk)| hermite(r, xk)).product())
}

/// Hermite weight of the L-moment `α`: `∏_k H_{i_k − 1}(x_k)`.
pub fn hermite_lmoment_weight(alpha: &MultiIndex, x: &[f64]) -> Result<f64> {
    hermite_multi(&alpha.hermite_degrees(), x)
}

/// Weight kernel `P_r^{(t1,t2)}` of the trimmed L-moment, so that
/// `λ_r^{(t1,t2)} = ∫₀¹ Q(u) P_r^{(t1,t2)}(u) du`.
pub fn tl_weight_poly(r: u32, t1: u32, t2: u32, u: f64) -> Result<f64> {
    if r < 1 {
        return domain("TL-moment order starts at 1");
    }
    let total = (r + t1 + t2) as u64;
    let mut acc = 0.0;
    for k in 0..r {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let low = (r - k + t1 - 1) as i32;
        let high = (t2 + k) as i32;
        // (r+t1+t2)! / (low! high!) with low + high = r + t1 + t2 − 1.
        let coeff = total as f64 * binomial(total - 1, high as u64);
        acc += sign * binomial((r - 1) as u64, k as u64) * coeff * u.powi(low) * (1.0 - u).powi(high);
    }
    Ok(acc / r as f64)
}
