//! Plug-in L-moments of a solved semi-discrete transport.
//!
//! For the transport `Q` onto the points `x_i`, `λ_α = ∫ Q L_α dμ` is the
//! L-statistic `Σ_i (∫_{W_i} L_α dμ) x_i`. The cell integrals are estimated
//! by binning Monte-Carlo source draws by their power cell; a single pass
//! serves every requested index.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{domain, Error, Result};
use crate::mc::{map_batches, SourceKind};
use crate::polybasis::{hermite_table, legendre_table, MultiIndex};
use crate::rosenblatt::univariate_lmoment_unbiased;
use crate::sample::SampleMatrix;
use crate::transport::TransportSolution;

const ESTIMATE_STREAM: u32 = 0x4553_5449;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    MonotoneUniform,
    MonotoneHermite,
    Rosenblatt,
    RosenblattUnbiased,
    TrimmedMonotone,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::MonotoneUniform => "monotone-uniform",
            EstimatorKind::MonotoneHermite => "monotone-hermite",
            EstimatorKind::Rosenblatt => "rosenblatt",
            EstimatorKind::RosenblattUnbiased => "rosenblatt-unbiased",
            EstimatorKind::TrimmedMonotone => "trimmed-monotone",
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "monotone-uniform" | "monotone" | "uniform" => EstimatorKind::MonotoneUniform,
            "monotone-hermite" | "hermite" => EstimatorKind::MonotoneHermite,
            "rosenblatt" => EstimatorKind::Rosenblatt,
            "rosenblatt-unbiased" => EstimatorKind::RosenblattUnbiased,
            "trimmed-monotone" | "trimmed" => EstimatorKind::TrimmedMonotone,
            other => return domain(format!("unknown estimator {other:?}")),
        })
    }
}

/// Sub-cube `D = ∏_j [t_j, 1 − t_j]` of a trimmed L-moment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrimDomain {
    trims: Vec<f64>,
}

impl TrimDomain {
    pub fn new(trims: Vec<f64>) -> Result<Self> {
        if trims.is_empty() {
            return domain("trim vector is empty");
        }
        if let Some(t) = trims.iter().find(|t| !(0.0..0.5).contains(*t)) {
            return domain(format!("trim {t} outside [0, 1/2)"));
        }
        Ok(Self { trims })
    }

    pub fn untrimmed(dim: usize) -> Self {
        Self {
            trims: vec![0.0; dim],
        }
    }

    pub fn trims(&self) -> &[f64] {
        &self.trims
    }

    pub fn volume(&self) -> f64 {
        self.trims.iter().map(|t| 1.0 - 2.0 * t).product()
    }
}

/// One estimated L-moment with the settings that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LMomentResult {
    pub alpha: MultiIndex,
    pub value: Vec<f64>,
    pub estimator: EstimatorKind,
    pub mc_samples: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trim: Option<TrimDomain>,
}

/// Polynomial family weighting the source draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Weight {
    /// `L_α(u)` on the uniform cube.
    Legendre,
    /// `H_{α−1}(y)` on the Gaussian source.
    Hermite,
    /// `L_α(Φ(y))` on the Gaussian source.
    LegendreOfPhi,
}

fn std_normal_cdf(y: f64) -> f64 {
    0.5 * erfc(-y / std::f64::consts::SQRT_2)
}

fn binned(
    solution: &TransportSolution,
    alphas: &[MultiIndex],
    weight: Weight,
    trim: Option<&TrimDomain>,
    mc_samples: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let d = solution.points.dim();
    let n = solution.points.n();
    if mc_samples == 0 {
        return domain("mc_samples must be positive");
    }
    for a in alphas {
        if a.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: a.dim(),
            });
        }
    }
    if let Some(t) = trim {
        if t.trims().len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: t.trims().len(),
            });
        }
    }
    let source = solution.source.kind;
    let table_len = alphas.iter().map(|a| a.max_index()).max().unwrap_or(1) as usize;
    let na = alphas.len();
    let per_batch = map_batches(mc_samples, seed, ESTIMATE_STREAM, |rng, len| {
        let mut bins = vec![0.0; na * n];
        let mut u = vec![0.0; d];
        let mut table = vec![0.0; d * table_len];
        for _ in 0..len {
            source.draw(rng, &mut u);
            if let Some(t) = trim {
                for (v, tj) in u.iter_mut().zip(t.trims()) {
                    *v = tj + (1.0 - 2.0 * tj) * *v;
                }
            }
            let cell = solution.assign(&u);
            for (j, &uj) in u.iter().enumerate() {
                let row = &mut table[j * table_len..(j + 1) * table_len];
                match weight {
                    Weight::Legendre => legendre_table(uj, row),
                    Weight::Hermite => hermite_table(uj, row),
                    Weight::LegendreOfPhi => legendre_table(std_normal_cdf(uj), row),
                }
            }
            for (a, alpha) in alphas.iter().enumerate() {
                let w: f64 = alpha
                    .indices()
                    .iter()
                    .enumerate()
                    .map(|(j, &i)| table[j * table_len + i as usize - 1])
                    .product();
                bins[a * n + cell] += w;
            }
        }
        bins
    });
    let mut bins = vec![0.0; na * n];
    for b in per_batch {
        bins.iter_mut().zip(b).for_each(|(t, v)| *t += v);
    }
    let scale = trim.map_or(1.0, TrimDomain::volume) / mc_samples as f64;
    Ok((0..na)
        .map(|a| {
            let mut value = vec![0.0; d];
            for (i, x) in solution.points.rows().enumerate() {
                let w = bins[a * n + i] * scale;
                value.iter_mut().zip(x).for_each(|(v, xi)| *v += w * xi);
            }
            value
        })
        .collect())
}

fn require_source(solution: &TransportSolution, kind: SourceKind) -> Result<()> {
    if solution.source.kind != kind {
        return Err(Error::SourceMismatch {
            expected: kind.name(),
            got: solution.source.kind.name(),
        });
    }
    Ok(())
}

/// Legendre L-moments `λ_α` from a uniform-source transport, one pass for all `α`.
pub fn lmoments_from_transport(
    solution: &TransportSolution,
    alphas: &[MultiIndex],
    mc_samples: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    require_source(solution, SourceKind::UniformCube)?;
    binned(solution, alphas, Weight::Legendre, None, mc_samples, seed)
}

pub fn lmoment_from_transport(
    solution: &TransportSolution,
    alpha: &MultiIndex,
    mc_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    Ok(lmoments_from_transport(solution, std::slice::from_ref(alpha), mc_samples, seed)?.remove(0))
}

/// Hermite L-moments `∫ Q H_{α−1} dN` from a Gaussian-source transport.
pub fn hermite_lmoments_from_transport(
    solution: &TransportSolution,
    alphas: &[MultiIndex],
    mc_samples: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    require_source(solution, SourceKind::StandardGaussian)?;
    binned(solution, alphas, Weight::Hermite, None, mc_samples, seed)
}

pub fn hermite_lmoment_from_transport(
    solution: &TransportSolution,
    alpha: &MultiIndex,
    mc_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    Ok(hermite_lmoments_from_transport(solution, std::slice::from_ref(alpha), mc_samples, seed)?
        .remove(0))
}

/// Legendre L-moments of a Gaussian-source transport, weighting the draws by
/// `L_α(Φ(y))` with `Φ` the standard normal distribution function.
pub fn gaussian_reference_lmoments(
    solution: &TransportSolution,
    alphas: &[MultiIndex],
    mc_samples: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    require_source(solution, SourceKind::StandardGaussian)?;
    binned(solution, alphas, Weight::LegendreOfPhi, None, mc_samples, seed)
}

/// `λ_α^{(D)} = ∫_D Q L_α`, not normalised by the volume of `D`. Draws are
/// taken uniformly inside `D` and the sum is scaled by `vol(D)`.
pub fn trimmed_lmoment(
    solution: &TransportSolution,
    alpha: &MultiIndex,
    trim: &TrimDomain,
    mc_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    require_source(solution, SourceKind::UniformCube)?;
    Ok(binned(
        solution,
        std::slice::from_ref(alpha),
        Weight::Legendre,
        Some(trim),
        mc_samples,
        seed,
    )?
    .remove(0))
}

/// `τ_{α,i} = λ_{α,i} / λ₂(X_i)` with the unbiased marginal second L-moments.
pub fn lmoment_ratio(lambda: &[f64], samples: &SampleMatrix) -> Result<Vec<f64>> {
    if lambda.len() != samples.dim() {
        return Err(Error::DimensionMismatch {
            expected: samples.dim(),
            got: lambda.len(),
        });
    }
    lambda
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let l2 = univariate_lmoment_unbiased(&samples.column(i), 2)?;
            if l2.abs() <= f64::EPSILON * samples.column(i).iter().fold(0.0f64, |m, v| m.max(v.abs())) {
                return Err(Error::DegenerateCoordinate(i));
            }
            Ok(l / l2)
        })
        .collect()
}
