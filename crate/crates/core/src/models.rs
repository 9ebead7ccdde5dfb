//! Closed-form reference models: copula transports, Gaussian L-moments,
//! nearly-elliptical and LCIV samplers, the symmetrized Weibull law and the
//! repeated-sampling experiment on LCIV data.

use nalgebra::DMatrix;
use num_rational::Rational64;
use rand::Rng;
use rand_distr::{Open01, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{domain, Error, Result};
use crate::estimators::{hermite_lmoments_from_transport, lmoments_from_transport};
use crate::mc::{batch_rng, SourceKind};
use crate::polybasis::{hermite, legendre_unchecked, MultiIndex};
use crate::quadrature::integrate_gaussian;
use crate::sample::SampleMatrix;
use crate::transport::{solve, SolverConfig};

const SAMPLE_STREAM: u32 = 0x5341_4d50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CopulaKind {
    Independent,
    Max,
    Min,
}

impl std::str::FromStr for CopulaKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "independent" | "pi" => Ok(CopulaKind::Independent),
            "max" | "m" => Ok(CopulaKind::Max),
            "min" | "w" => Ok(CopulaKind::Min),
            other => domain(format!("unknown copula {other:?}")),
        }
    }
}

fn check_unit_square(u: [f64; 2]) -> Result<()> {
    if u.iter().all(|v| (0.0..=1.0).contains(v)) {
        Ok(())
    } else {
        domain(format!("{u:?} is outside the unit square"))
    }
}

/// Monotone transport from the uniform square onto the copula.
pub fn copula_transport(kind: CopulaKind, u: [f64; 2]) -> Result<[f64; 2]> {
    check_unit_square(u)?;
    let [a, b] = u;
    Ok(match kind {
        CopulaKind::Independent => [a, b],
        CopulaKind::Max => [0.5 * (a + b); 2],
        CopulaKind::Min => [0.5 * (a + 1.0 - b), 0.5 * (b + 1.0 - a)],
    })
}

/// Convex potential whose gradient is [`copula_transport`].
///
/// For the min copula the gradient of `(u+1−v)²/4` alone is
/// `((u+1−v)/2, −(u+1−v)/2)`; the extra linear term `v` recovers the second
/// coordinate `(v+1−u)/2`.
pub fn copula_potential(kind: CopulaKind, u: [f64; 2]) -> Result<f64> {
    check_unit_square(u)?;
    let [a, b] = u;
    Ok(match kind {
        CopulaKind::Independent => 0.5 * (a * a + b * b),
        CopulaKind::Max => 0.25 * (a + b) * (a + b),
        CopulaKind::Min => 0.25 * (a + 1.0 - b) * (a + 1.0 - b) + b,
    })
}

/// `λ_r(U)` for `U` uniform on `[0, 1]`.
fn uniform_lmoment(r: u32) -> Rational64 {
    match r {
        1 => Rational64::new(1, 2),
        2 => Rational64::new(1, 6),
        _ => Rational64::from_integer(0),
    }
}

/// `∫₀¹ (1 − v) L_r(v) dv = (−1)^{r−1} λ_r(U)`.
fn reflected_uniform_lmoment(r: u32) -> Rational64 {
    if r % 2 == 1 {
        uniform_lmoment(r)
    } else {
        -uniform_lmoment(r)
    }
}

/// Exact `λ_{jk} = ∫ Q_kind(u, v) L_j(u) L_k(v) du dv`.
pub fn copula_lmoment(kind: CopulaKind, j: u32, k: u32) -> Result<[Rational64; 2]> {
    if j == 0 || k == 0 {
        return domain("copula L-moment indices start at 1");
    }
    let zero = Rational64::from_integer(0);
    let ind = |c: bool, v: Rational64| if c { v } else { zero };
    let half = Rational64::new(1, 2);
    Ok(match kind {
        CopulaKind::Independent => [ind(k == 1, uniform_lmoment(j)), ind(j == 1, uniform_lmoment(k))],
        CopulaKind::Max => {
            let v = half * (ind(k == 1, uniform_lmoment(j)) + ind(j == 1, uniform_lmoment(k)));
            [v, v]
        }
        CopulaKind::Min => [
            half * (ind(k == 1, uniform_lmoment(j)) + ind(j == 1, reflected_uniform_lmoment(k))),
            half * (ind(j == 1, uniform_lmoment(k)) + ind(k == 1, reflected_uniform_lmoment(j))),
        ],
    })
}

pub fn rational_to_f64(r: Rational64) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

pub(crate) fn std_normal_cdf(y: f64) -> f64 {
    0.5 * erfc(-y / std::f64::consts::SQRT_2)
}

/// `λ_r` of the standard normal law.
pub fn gaussian_univariate_lmoment(r: u32) -> Result<f64> {
    match r {
        0 => domain("L-moment order starts at 1"),
        2 => Ok(1.0 / std::f64::consts::PI.sqrt()),
        r if r % 2 == 1 => Ok(0.0),
        r => Ok(integrate_gaussian(|y| y * legendre_unchecked(r, std_normal_cdf(y)))),
    }
}

fn check_square(a: &DMatrix<f64>, d: usize) -> Result<()> {
    if a.nrows() != d || a.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: if a.nrows() != d { a.nrows() } else { a.ncols() },
        });
    }
    Ok(())
}

fn check_positive_definite(a: &DMatrix<f64>) -> Result<()> {
    if (a - a.transpose()).norm() > 1e-10 * (1.0 + a.norm()) {
        return domain("matrix is not symmetric");
    }
    if a.clone().cholesky().is_none() {
        return domain("matrix is not positive definite");
    }
    Ok(())
}

/// `λ_α` of `m + A·N` where `N` has independent standard normal coordinates
/// and `t ↦ m + A·Φ⁻¹(t)` is the transport from the uniform cube.
pub fn gaussian_lmoment(m: &[f64], a: &DMatrix<f64>, alpha: &MultiIndex) -> Result<Vec<f64>> {
    let d = m.len();
    check_square(a, d)?;
    if alpha.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: alpha.dim(),
        });
    }
    if alpha.is_mean() {
        return Ok(m.to_vec());
    }
    let idx = alpha.indices();
    let mut base = vec![0.0; d];
    for (i, b) in base.iter_mut().enumerate() {
        if idx.iter().enumerate().all(|(j, &r)| j == i || r == 1) {
            *b = gaussian_univariate_lmoment(idx[i])?;
        }
    }
    Ok((a * nalgebra::DVector::from_vec(base)).iter().copied().collect())
}

/// Degree-2 L-moment matrix `A·diag(1/√π)` of the Gaussian model.
pub fn gaussian_lambda2(a: &DMatrix<f64>) -> DMatrix<f64> {
    a / std::f64::consts::PI.sqrt()
}

/// Applies `T₀(x) = m + u'(xᵀAx)·Ax` to `n` standard Gaussian draws.
pub fn sample_nearly_elliptical<F>(
    m: &[f64],
    a: &DMatrix<f64>,
    u_prime: F,
    n: usize,
    seed: u64,
) -> Result<SampleMatrix>
where
    F: Fn(f64) -> f64,
{
    let d = m.len();
    check_square(a, d)?;
    check_positive_definite(a)?;
    let mut rng = batch_rng(seed, SAMPLE_STREAM, 0);
    let mut data = Vec::with_capacity(n * d);
    let mut x = nalgebra::DVector::zeros(d);
    for _ in 0..n {
        x.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        let ax = a * &x;
        let s = x.dot(&ax);
        let w = u_prime(s);
        if !(w.is_finite() && w > 0.0) {
            return domain(format!("u'({s}) = {w} is not positive"));
        }
        data.extend(m.iter().zip(ax.iter()).map(|(mi, v)| mi + w * v));
    }
    SampleMatrix::from_row_major(n, d, data)
}

/// `εW` with `ε` a Rademacher sign and `W` of density `8ν(8x)^{ν−1}e^{−(8x)^ν}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymmetrizedWeibull {
    shape: f64,
}

impl SymmetrizedWeibull {
    pub fn new(shape: f64) -> Result<Self> {
        if !(shape.is_finite() && shape > 0.0) {
            return domain(format!("Weibull shape {shape} must be positive"));
        }
        Ok(Self { shape })
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn quantile(&self, t: f64) -> Result<f64> {
        symmetrized_weibull_quantile(self.shape, t)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let tail = 0.5 * (-(8.0 * x.abs()).powf(self.shape)).exp();
        if x >= 0.0 {
            1.0 - tail
        } else {
            tail
        }
    }

    /// `Q(Φ(y))` evaluated through `1 − Φ(|y|)` to keep the tails accurate.
    fn quantile_of_normal(&self, y: f64) -> f64 {
        let two_tail = erfc(y.abs() / std::f64::consts::SQRT_2);
        let w = 0.125 * (-two_tail.ln()).max(0.0).powf(1.0 / self.shape);
        w.copysign(y)
    }
}

pub fn symmetrized_weibull_quantile(shape: f64, t: f64) -> Result<f64> {
    if !(shape.is_finite() && shape > 0.0) {
        return domain(format!("Weibull shape {shape} must be positive"));
    }
    if !(t > 0.0 && t < 1.0) {
        return domain(format!("probability {t} outside (0, 1)"));
    }
    let p = if t >= 0.5 { 1.0 - t } else { t };
    let w = 0.125 * (-(2.0 * p).ln()).powf(1.0 / shape);
    Ok(if t >= 0.5 { w } else { -w })
}

/// Univariate law of one LCIV component, through its quantile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComponentLaw {
    /// Uniform on `[0, 1]`.
    Uniform,
    StandardGaussian,
    /// `W` alone, with density `8ν(8x)^{ν−1}e^{−(8x)^ν}` on `x > 0`.
    Weibull { shape: f64 },
    SymmetrizedWeibull(SymmetrizedWeibull),
}

/// A component `Z = scale · Q(U)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub law: ComponentLaw,
    pub scale: f64,
}

impl Component {
    pub fn new(law: ComponentLaw) -> Self {
        Self { law, scale: 1.0 }
    }

    pub fn quantile(&self, t: f64) -> Result<f64> {
        if !(t > 0.0 && t < 1.0) {
            return domain(format!("probability {t} outside (0, 1)"));
        }
        let q = match self.law {
            ComponentLaw::Uniform => t,
            ComponentLaw::StandardGaussian => statrs::distribution::ContinuousCDF::inverse_cdf(
                &statrs::distribution::Normal::standard(),
                t,
            ),
            ComponentLaw::Weibull { shape } => 0.125 * (-(1.0 - t).ln()).powf(1.0 / shape),
            ComponentLaw::SymmetrizedWeibull(w) => w.quantile(t)?,
        };
        Ok(self.scale * q)
    }

    /// Monotone transport `Q ∘ Φ` from the standard normal line.
    pub fn gaussian_transport(&self, y: f64) -> f64 {
        let q = match self.law {
            ComponentLaw::Uniform => std_normal_cdf(y),
            ComponentLaw::StandardGaussian => y,
            ComponentLaw::Weibull { shape } => {
                let upper = 0.5 * erfc(y / std::f64::consts::SQRT_2);
                0.125 * (-upper.ln()).max(0.0).powf(1.0 / shape)
            }
            ComponentLaw::SymmetrizedWeibull(w) => w.quantile_of_normal(y),
        };
        self.scale * q
    }

    /// `λ_r^{(H)}(Z) = ∫ Q(Φ(y)) H_{r−1}(y) dN(y)`, by quadrature.
    pub fn hermite_lmoment(&self, r: u32) -> Result<f64> {
        if r == 0 {
            return domain("Hermite L-moment order starts at 1");
        }
        Ok(integrate_gaussian(|y| self.gaussian_transport(y) * hermite(r - 1, y)))
    }

    /// The same law rescaled so that `λ₂^{(H)} = 1`.
    pub fn hermite_normalized(&self) -> Result<Self> {
        let l2 = self.hermite_lmoment(2)?;
        if !(l2 > 0.0) {
            return domain("component has a vanishing second Hermite L-moment");
        }
        Ok(Self {
            law: self.law,
            scale: self.scale / l2,
        })
    }
}

/// `Y = Pᵀ D Z` with `P` orthogonal, `D = diag(σ)` and independent `Z_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LcivModel {
    p: DMatrix<f64>,
    sigma: Vec<f64>,
    components: Vec<Component>,
}

impl LcivModel {
    pub fn new(p: DMatrix<f64>, sigma: Vec<f64>, components: Vec<Component>) -> Result<Self> {
        let d = sigma.len();
        check_square(&p, d)?;
        if components.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: components.len(),
            });
        }
        let defect = (&p * p.transpose() - DMatrix::identity(d, d)).norm();
        if defect >= 1e-10 {
            return domain(format!("P is not orthogonal (‖PPᵀ − I‖ = {defect:e})"));
        }
        if let Some(s) = sigma.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return domain(format!("scale {s} must be positive"));
        }
        for c in &components {
            let shape = match c.law {
                ComponentLaw::Weibull { shape } => shape,
                _ => 1.0,
            };
            if !(shape.is_finite() && shape > 0.0 && c.scale.is_finite() && c.scale > 0.0) {
                return domain(format!("invalid component {c:?}"));
            }
        }
        Ok(Self { p, sigma, components })
    }

    pub fn dim(&self) -> usize {
        self.sigma.len()
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// Copy with every component rescaled to `λ₂^{(H)}(Z_i) = 1`.
    pub fn hermite_normalized(&self) -> Result<Self> {
        let components = self
            .components
            .iter()
            .map(Component::hermite_normalized)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            components,
            ..self.clone()
        })
    }

    fn d_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.sigma))
    }

    /// Population covariance `Pᵀ D diag(Var Z_i) D P`, with the variances
    /// computed by quadrature.
    pub fn covariance(&self) -> DMatrix<f64> {
        let var: Vec<f64> = self
            .components
            .iter()
            .map(|c| {
                let m = integrate_gaussian(|y| c.gaussian_transport(y));
                integrate_gaussian(|y| (c.gaussian_transport(y) - m).powi(2))
            })
            .collect();
        let v = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(var));
        let d = self.d_matrix();
        self.p.transpose() * &d * v * &d * &self.p
    }
}

/// `n` draws of `Pᵀ D Z`.
pub fn sample_lciv(model: &LcivModel, n: usize, seed: u64) -> Result<SampleMatrix> {
    let d = model.dim();
    let mut rng = batch_rng(seed, SAMPLE_STREAM, 1);
    let pt = model.p.transpose();
    let mut data = Vec::with_capacity(n * d);
    let mut z = nalgebra::DVector::zeros(d);
    for _ in 0..n {
        for (i, zi) in z.iter_mut().enumerate() {
            let t: f64 = rng.sample(Open01);
            *zi = model.sigma[i] * model.components[i].quantile(t)?;
        }
        data.extend((&pt * &z).iter());
    }
    SampleMatrix::from_row_major(n, d, data)
}

/// Hermite matrix `Λ₂ = (∫ ∇φ(x) x_j dN)_j = Pᵀ D P`.
///
/// Needs `λ₂^{(H)}(Z_i) = 1` for every component (see
/// [`LcivModel::hermite_normalized`]); the general value is
/// [`lciv_hermite_lambda2_general`].
pub fn lciv_hermite_lambda2(model: &LcivModel) -> Result<DMatrix<f64>> {
    for (i, c) in model.components.iter().enumerate() {
        let l2 = c.hermite_lmoment(2)?;
        if (l2 - 1.0).abs() > 1e-8 {
            return domain(format!(
                "component {i} has λ₂^(H) = {l2}, not 1; normalize the model first"
            ));
        }
    }
    Ok(model.p.transpose() * model.d_matrix() * &model.p)
}

/// `Pᵀ D diag(λ₂^{(H)}(Z_i)) P`, valid without normalization.
pub fn lciv_hermite_lambda2_general(model: &LcivModel) -> Result<DMatrix<f64>> {
    let l2 = model
        .components
        .iter()
        .map(|c| c.hermite_lmoment(2))
        .collect::<Result<Vec<_>>>()?;
    let l = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(l2));
    Ok(model.p.transpose() * model.d_matrix() * l * &model.p)
}

/// `Λ₃ = (∫ (∇φ)_i (x_j² − 1) dN)_{ij} = Pᵀ D M` with
/// `M_ij = P_ij² λ₃^{(H)}(Z_i)`, where `λ₃^{(H)}(Z) = ∫ Q(Φ(y)) (y² − 1) dN`.
pub fn lciv_hermite_lambda3(model: &LcivModel) -> Result<DMatrix<f64>> {
    let d = model.dim();
    let l3 = model
        .components
        .iter()
        .map(|c| c.hermite_lmoment(3))
        .collect::<Result<Vec<_>>>()?;
    let m = DMatrix::from_fn(d, d, |i, j| model.p[(i, j)].powi(2) * l3[i]);
    Ok(model.p.transpose() * model.d_matrix() * m)
}

/// `(a, b)` solving `σ_i² + a σ_i + b = 0` for `d = 2`, so that
/// `Λ₂Λ₃ + aΛ₃ + bΛ₂⁻¹Λ₃ = 0` for a normalized model.
pub fn lciv_identity_coefficients(sigma: [f64; 2]) -> Result<(f64, f64)> {
    let [s1, s2] = sigma;
    if (s1 - s2).abs() <= 1e-12 * (s1.abs() + s2.abs()) {
        return domain("the identity needs σ₁ ≠ σ₂");
    }
    let a = -(s1 + s2);
    let b = s1 * s2;
    Ok((a, b))
}

/// Residual `‖Λ₂Λ₃ + aΛ₃ + bΛ₂⁻¹Λ₃‖_F` of a normalized bivariate model.
pub fn lciv_identity_residual(model: &LcivModel) -> Result<f64> {
    if model.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: model.dim(),
        });
    }
    let (a, b) = lciv_identity_coefficients([model.sigma[0], model.sigma[1]])?;
    let l2 = lciv_hermite_lambda2(model)?;
    let l3 = lciv_hermite_lambda3(model)?;
    let inv = l2
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Domain("Λ₂ is singular".into()))?;
    Ok((&l2 * &l3 + a * &l3 + b * inv * &l3).norm())
}

/// Rotation used by the repeated-sampling experiment.
pub fn table1_rotation() -> DMatrix<f64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    DMatrix::from_row_slice(2, 2, &[s, s, s, -s])
}

pub const TABLE1_SIGMA: [f64; 2] = [1.8, 0.2];

/// Bivariate LCIV model of the experiment: symmetrized Weibull components
/// of shape `ν`, scales `(1.8, 0.2)`.
pub fn table1_model(shape: f64) -> Result<LcivModel> {
    let w = Component::new(ComponentLaw::SymmetrizedWeibull(SymmetrizedWeibull::new(shape)?));
    LcivModel::new(table1_rotation(), TABLE1_SIGMA.to_vec(), vec![w, w])
}

/// Parameters summarised by [`table1_experiment`], with their
/// reference values at `ν = 0.5`.
pub const TABLE1_PARAMETERS: [(&str, f64); 6] = [
    ("Lambda2_11", 0.38),
    ("Lambda2_12", 0.19),
    ("Lambda2H_11", 0.66),
    ("Lambda2H_12", 0.33),
    ("Sigma_11", 0.69),
    ("Sigma_12", 0.55),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Config {
    pub shape: f64,
    pub n: usize,
    pub replicates: usize,
    pub seed: u64,
    pub solver: SolverConfig,
    /// Source draws for each L-moment estimate.
    pub estimate_mc: usize,
}

impl Table1Config {
    pub fn new(shape: f64, n: usize, replicates: usize, seed: u64) -> Self {
        Self {
            shape,
            n,
            replicates,
            seed,
            solver: SolverConfig::default(),
            estimate_mc: 200_000,
        }
    }
}

/// Estimates of one replicate, in the order of [`TABLE1_PARAMETERS`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Replicate {
    pub index: usize,
    pub seed: u64,
    pub values: [f64; 6],
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub parameter: String,
    pub true_value: f64,
    pub mean: f64,
    pub median: f64,
    pub cv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Summary {
    pub shape: f64,
    pub n: usize,
    pub replicates: usize,
    /// Replicates dropped because a transport did not converge.
    pub unconverged: usize,
    pub rows: Vec<Table1Row>,
}

impl Table1Summary {
    pub fn row(&self, parameter: &str) -> Option<&Table1Row> {
        self.rows.iter().find(|r| r.parameter == parameter)
    }

    /// Comma-separated table, one line per parameter.
    pub fn to_delimited(&self) -> String {
        let mut out = String::from("parameter,true_value,n,mean,median,cv\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.4},{:.4},{:.4}\n",
                r.parameter, r.true_value, self.n, r.mean, r.median, r.cv
            ));
        }
        out
    }
}

/// splitmix64 finaliser, used to derive replicate seeds.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One replicate: LCIV sample, uniform-source `Λ₂`, Gaussian-source Hermite
/// `Λ₂^{(H)}` and the sample covariance.
pub fn table1_replicate(config: &Table1Config, index: usize) -> Result<Table1Replicate> {
    let model = table1_model(config.shape)?;
    let seed = derive_seed(config.seed, index as u64);
    let data = sample_lciv(&model, config.n, seed)?;
    let alphas = [MultiIndex::new(vec![2, 1])?, MultiIndex::new(vec![1, 2])?];
    let solver = SolverConfig {
        seed,
        ..config.solver.clone()
    };
    let uni = solve(
        &data,
        SourceKind::UniformCube,
        &solver,
    )?;
    let gau = solve(
        &data,
        SourceKind::StandardGaussian,
        &solver,
    )?;
    let l2 = lmoments_from_transport(&uni, &alphas, config.estimate_mc, seed)?;
    let h2 = hermite_lmoments_from_transport(&gau, &alphas, config.estimate_mc, seed)?;
    let cov = data.covariance()?;
    Ok(Table1Replicate {
        index,
        seed,
        values: [l2[0][0], l2[1][0], h2[0][0], h2[1][0], cov[0], cov[1]],
        converged: uni.converged() && gau.converged(),
    })
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// `(mean, median, CV)` with `CV = (Σ (θ_i − θ̄)²)^{1/2} / θ̄`.
pub fn summary_statistics(values: &[f64]) -> (f64, f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, median(&sorted), ss.sqrt() / mean)
}

pub fn summarize_replicates(config: &Table1Config, reps: &[Table1Replicate]) -> Table1Summary {
    let kept: Vec<&Table1Replicate> = reps.iter().filter(|r| r.converged).collect();
    let rows = TABLE1_PARAMETERS
        .iter()
        .enumerate()
        .map(|(k, (name, truth))| {
            let v: Vec<f64> = kept.iter().map(|r| r.values[k]).collect();
            let (mean, median, cv) = summary_statistics(&v);
            Table1Row {
                parameter: name.to_string(),
                true_value: *truth,
                mean,
                median,
                cv,
            }
        })
        .collect();
    Table1Summary {
        shape: config.shape,
        n: config.n,
        replicates: reps.len(),
        unconverged: reps.len() - kept.len(),
        rows,
    }
}

/// Runs the replicates in parallel and summarises the converged ones.
pub fn table1_experiment(config: &Table1Config) -> Result<(Table1Summary, Vec<Table1Replicate>)> {
    if config.replicates == 0 || config.n < 2 {
        return domain("need at least one replicate and two samples");
    }
    let reps = (0..config.replicates)
        .into_par_iter()
        .map(|i| table1_replicate(config, i))
        .collect::<Result<Vec<_>>>()?;
    Ok((summarize_replicates(config, &reps), reps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::GaussLegendre;
    use approx::assert_abs_diff_eq;

    fn q(n: i64, d: i64) -> Rational64 {
        Rational64::new(n, d)
    }

    #[test]
    fn copula_transport_examples() {
        assert_eq!(copula_transport(CopulaKind::Independent, [0.3, 0.7]).unwrap(), [0.3, 0.7]);
        let m = copula_transport(CopulaKind::Max, [0.3, 0.7]).unwrap();
        assert_abs_diff_eq!(m[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(m[1], 0.5, epsilon = 1e-15);
        let w = copula_transport(CopulaKind::Min, [0.3, 0.7]).unwrap();
        assert_abs_diff_eq!(w[0], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.7, epsilon = 1e-15);
        assert!(copula_transport(CopulaKind::Max, [1.2, 0.0]).is_err());
    }

    #[test]
    fn copula_exact_values() {
        use CopulaKind::*;
        assert_eq!(copula_lmoment(Independent, 1, 1).unwrap(), [q(1, 2), q(1, 2)]);
        assert_eq!(copula_lmoment(Independent, 1, 2).unwrap(), [q(0, 1), q(1, 6)]);
        assert_eq!(copula_lmoment(Independent, 2, 1).unwrap(), [q(1, 6), q(0, 1)]);
        assert_eq!(copula_lmoment(Max, 2, 1).unwrap(), [q(1, 12), q(1, 12)]);
        assert_eq!(copula_lmoment(Max, 1, 2).unwrap(), [q(1, 12), q(1, 12)]);
        assert_eq!(copula_lmoment(Min, 1, 1).unwrap(), [q(1, 2), q(1, 2)]);
        // Integrated directly: the first coordinate decreases in v.
        assert_eq!(copula_lmoment(Min, 1, 2).unwrap(), [q(-1, 12), q(1, 12)]);
        assert_eq!(copula_lmoment(Min, 2, 1).unwrap(), [q(1, 12), q(-1, 12)]);
        for kind in [Independent, Max, Min] {
            assert_eq!(copula_lmoment(kind, 2, 2).unwrap(), [q(0, 1); 2]);
            assert_eq!(copula_lmoment(kind, 3, 1).unwrap(), [q(0, 1); 2]);
        }
        assert!(copula_lmoment(Min, 0, 1).is_err());
    }

    #[test]
    fn copula_values_match_tensor_quadrature() {
        let rule = GaussLegendre::new(8);
        for kind in [CopulaKind::Independent, CopulaKind::Max, CopulaKind::Min] {
            for j in 1..=4 {
                for k in 1..=4 {
                    let mut acc = [0.0; 2];
                    for (x, wx) in rule.nodes.iter().zip(&rule.weights) {
                        for (y, wy) in rule.nodes.iter().zip(&rule.weights) {
                            let (u, v) = (0.5 * (x + 1.0), 0.5 * (y + 1.0));
                            let t = copula_transport(kind, [u, v]).unwrap();
                            let w = 0.25 * wx * wy * legendre_unchecked(j, u) * legendre_unchecked(k, v);
                            acc[0] += w * t[0];
                            acc[1] += w * t[1];
                        }
                    }
                    let exact = copula_lmoment(kind, j, k).unwrap();
                    for c in 0..2 {
                        assert_abs_diff_eq!(acc[c], rational_to_f64(exact[c]), epsilon = 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn copula_transport_is_potential_gradient() {
        let h = 1e-6;
        for kind in [CopulaKind::Independent, CopulaKind::Max, CopulaKind::Min] {
            for &(u, v) in &[(0.2, 0.3), (0.5, 0.9), (0.75, 0.1)] {
                let t = copula_transport(kind, [u, v]).unwrap();
                let f = |a: f64, b: f64| copula_potential(kind, [a, b]).unwrap();
                let gu = (f(u + h, v) - f(u - h, v)) / (2.0 * h);
                let gv = (f(u, v + h) - f(u, v - h)) / (2.0 * h);
                assert_abs_diff_eq!(gu, t[0], epsilon = 1e-6);
                assert_abs_diff_eq!(gv, t[1], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn gaussian_lmoment_examples() {
        let pi = std::f64::consts::PI;
        let id = DMatrix::identity(2, 2);
        let m = [0.3, -1.0];
        assert_eq!(gaussian_lmoment(&m, &id, &MultiIndex::ones(2)).unwrap(), m.to_vec());
        let v = gaussian_lmoment(&[0.0, 0.0], &id, &MultiIndex::new(vec![2, 1]).unwrap()).unwrap();
        assert_abs_diff_eq!(v[0], 1.0 / pi.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(v[1], 0.0, epsilon = 1e-15);
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.8, 0.8, 1.0]);
        let v = gaussian_lmoment(&[0.0, 0.0], &a, &MultiIndex::new(vec![1, 2]).unwrap()).unwrap();
        assert_abs_diff_eq!(v[0], 0.8 / pi.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(v[1], 1.0 / pi.sqrt(), epsilon = 1e-15);
        let mixed = gaussian_lmoment(&[0.0, 0.0], &a, &MultiIndex::new(vec![2, 2]).unwrap()).unwrap();
        assert_eq!(mixed, vec![0.0, 0.0]);
    }

    #[test]
    fn univariate_gaussian_lmoments_match_quadrature() {
        for r in 1..=6 {
            let quad = integrate_gaussian(|y| y * legendre_unchecked(r, std_normal_cdf(y)));
            assert_abs_diff_eq!(gaussian_univariate_lmoment(r).unwrap(), quad, epsilon = 1e-10);
        }
        // L-kurtosis of the normal law.
        let t4 = gaussian_univariate_lmoment(4).unwrap() / gaussian_univariate_lmoment(2).unwrap();
        let pi = std::f64::consts::PI;
        assert_abs_diff_eq!(t4, 30.0 / pi * 2f64.sqrt().atan() - 9.0, epsilon = 1e-9);
    }

    #[test]
    fn weibull_quantile_examples() {
        assert_eq!(symmetrized_weibull_quantile(0.5, 0.5).unwrap(), 0.0);
        assert_abs_diff_eq!(
            symmetrized_weibull_quantile(1.0, 0.75).unwrap(),
            0.125 * 2f64.ln(),
            epsilon = 1e-15
        );
        for &t in &[0.01, 0.2, 0.45, 0.6, 0.999] {
            for &nu in &[0.5, 1.0, 2.5] {
                let a = symmetrized_weibull_quantile(nu, t).unwrap();
                let b = symmetrized_weibull_quantile(nu, 1.0 - t).unwrap();
                assert!((a + b).abs() < 1e-12);
                let w = SymmetrizedWeibull::new(nu).unwrap();
                assert_abs_diff_eq!(w.cdf(a), t, epsilon = 1e-12);
            }
        }
        assert!(symmetrized_weibull_quantile(0.5, 0.0).is_err());
        assert!(symmetrized_weibull_quantile(0.5, 1.0).is_err());
        assert!(symmetrized_weibull_quantile(-1.0, 0.3).is_err());
    }

    #[test]
    fn stable_gaussian_transport_agrees_with_quantile() {
        let w = SymmetrizedWeibull::new(0.5).unwrap();
        for &y in &[-3.0, -0.4, 0.0, 0.7, 2.5] {
            let direct = w.quantile(std_normal_cdf(y)).unwrap_or(0.0);
            assert_abs_diff_eq!(w.quantile_of_normal(y), direct, epsilon = 1e-10);
        }
    }

    #[test]
    fn lciv_model_validation() {
        let c = Component::new(ComponentLaw::Uniform);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(LcivModel::new(bad, vec![1.0, 1.0], vec![c, c]).is_err());
        assert!(LcivModel::new(DMatrix::identity(2, 2), vec![1.0, 0.0], vec![c, c]).is_err());
        assert!(LcivModel::new(DMatrix::identity(2, 2), vec![1.0], vec![c, c]).is_err());
    }

    #[test]
    fn lciv_identity_rotation_gives_uniform_columns() {
        let c = Component::new(ComponentLaw::Uniform);
        let model = LcivModel::new(DMatrix::identity(2, 2), vec![1.0, 1.0], vec![c, c]).unwrap();
        let s = sample_lciv(&model, 5000, 3).unwrap();
        assert!(s.as_slice().iter().all(|v| (0.0..1.0).contains(v)));
        let cov = s.covariance().unwrap();
        assert_abs_diff_eq!(cov[0], 1.0 / 12.0, epsilon = 0.005);
        assert_abs_diff_eq!(cov[1], 0.0, epsilon = 0.005);
    }

    #[test]
    fn lambda2_with_identity_rotation_is_d() {
        let g = Component::new(ComponentLaw::StandardGaussian);
        let model = LcivModel::new(DMatrix::identity(2, 2), vec![2.0, 0.5], vec![g, g]).unwrap();
        let l2 = lciv_hermite_lambda2(&model).unwrap();
        assert_abs_diff_eq!(l2[(0, 0)], 2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(l2[(1, 1)], 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(l2[(0, 1)], 0.0, epsilon = 1e-12);
        let raw = table1_model(0.5).unwrap();
        assert!(lciv_hermite_lambda2(&raw).is_err());
        let general = lciv_hermite_lambda2_general(&raw).unwrap();
        let normalized = lciv_hermite_lambda2(&raw.hermite_normalized().unwrap()).unwrap();
        let c2 = raw.components()[0].hermite_lmoment(2).unwrap();
        assert_abs_diff_eq!((general - normalized * c2).norm(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn lambda3_follows_squared_rotation_rule() {
        let model = table1_model(0.5).unwrap().hermite_normalized().unwrap();
        let l3 = lciv_hermite_lambda3(&model).unwrap();
        // The symmetrized law is odd, so the even-degree Hermite moment vanishes.
        assert!(l3.norm() < 1e-10);
        // A skewed component.
        let u = Component::new(ComponentLaw::Weibull { shape: 1.5 }).hermite_normalized().unwrap();
        let model = LcivModel::new(table1_rotation(), vec![1.8, 0.2], vec![u, u]).unwrap();
        let l2 = lciv_hermite_lambda2(&model).unwrap();
        let l3 = lciv_hermite_lambda3(&model).unwrap();
        // Direct 2-d quadrature of ∇φ(x) = Pᵀ D T(Px) against x_j and x_j² − 1.
        let p = table1_rotation();
        let rule = GaussLegendre::new(20);
        let (lo, hi, panels) = (-8.0, 8.0, 24);
        let width = (hi - lo) / panels as f64;
        let mut nodes = Vec::new();
        for k in 0..panels {
            let a = lo + width * k as f64;
            for (x, w) in rule.nodes.iter().zip(&rule.weights) {
                let t = a + 0.5 * width * (x + 1.0);
                nodes.push((t, 0.5 * width * w * crate::quadrature::normal_pdf(t)));
            }
        }
        let mut q2 = DMatrix::zeros(2, 2);
        let mut q3 = DMatrix::zeros(2, 2);
        for &(x0, w0) in &nodes {
            for &(x1, w1) in &nodes {
                let px = [p[(0, 0)] * x0 + p[(0, 1)] * x1, p[(1, 0)] * x0 + p[(1, 1)] * x1];
                let dz = [1.8 * u.gaussian_transport(px[0]), 0.2 * u.gaussian_transport(px[1])];
                let grad = [p[(0, 0)] * dz[0] + p[(1, 0)] * dz[1], p[(0, 1)] * dz[0] + p[(1, 1)] * dz[1]];
                let x = [x0, x1];
                for i in 0..2 {
                    for j in 0..2 {
                        q2[(i, j)] += w0 * w1 * grad[i] * x[j];
                        q3[(i, j)] += w0 * w1 * grad[i] * (x[j] * x[j] - 1.0);
                    }
                }
            }
        }
        assert!((&l2 - q2).norm() < 1e-8);
        assert!((&l3 - q3).norm() < 1e-8);
        assert!(l3.norm() > 0.01);
        assert!(lciv_identity_residual(&model).unwrap() < 1e-9);
    }

    #[test]
    fn tail_example_defines_all_hermite_moments() {
        let w = Component::new(ComponentLaw::SymmetrizedWeibull(SymmetrizedWeibull::new(0.5).unwrap()));
        // E|εW| = Γ(1 + 1/ν)/8 = 2/8 for ν = 1/2, and the law is symmetric.
        assert_abs_diff_eq!(integrate_gaussian(|y| w.gaussian_transport(y).abs()), 0.25, epsilon = 1e-9);
        assert_abs_diff_eq!(w.hermite_lmoment(1).unwrap(), 0.0, epsilon = 1e-12);
        // Var = Γ(1 + 2/ν)/64 = 24/64.
        let var = integrate_gaussian(|y| w.gaussian_transport(y).powi(2));
        assert_abs_diff_eq!(var, 0.375, epsilon = 1e-8);
    }

    #[test]
    fn summary_statistics_follow_the_cv_formula() {
        let (mean, med, cv) = summary_statistics(&[1.0, 2.0, 3.0, 6.0]);
        assert_abs_diff_eq!(mean, 3.0);
        assert_abs_diff_eq!(med, 2.5);
        assert_abs_diff_eq!(cv, 14f64.sqrt() / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn derived_seeds_differ() {
        let s: std::collections::HashSet<u64> = (0..1000).map(|i| derive_seed(42, i)).collect();
        assert_eq!(s.len(), 1000);
    }
}
