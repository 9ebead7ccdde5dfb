//! Semi-discrete monotone transport from a continuous source measure onto the
//! empirical measure of `n` distinct points.
//!
//! The transport is `∇φ_h` for the piecewise-linear potential
//! `φ_h(u) = max_i (u·x_i + h_i)`. The weights `h` minimise the convex energy
//! `E(h) = ∫ φ_h dμ − (1/n) Σ h_i`, whose gradient is `μ(W_i(h)) − 1/n`, so at
//! the minimiser every power cell `W_i` carries mass `1/n`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::mc::{draw_pool, map_batches, SourceKind};
use crate::polybasis::{legendre_primitive1, legendre_primitive2};
use crate::sample::SampleMatrix;

/// Stream used by [`cell_masses_mc`].
const MASS_STREAM: u32 = 0x4d41_5353;
/// Stream holding the common Monte-Carlo pool of [`solve`].
const POOL_STREAM: u32 = 0x504f_4f4c;
/// Fresh-sampling iteration `k` draws from stream `FRESH_STREAM + k`.
const FRESH_STREAM: u32 = 0x1000_0000;

const CHUNK: usize = 4096;

/// Source measure of the transport problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceMeasure {
    pub kind: SourceKind,
    pub dim: usize,
}

/// How the solver estimates cell masses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    /// One pool of source draws reused by every iteration. The pooled energy
    /// is then computed exactly and the step adapts to it: a step that raises
    /// the energy is undone and the step size halved, an accepted step grows
    /// it by 20%.
    #[default]
    CommonPool,
    /// New draws at every iteration, fixed step size.
    Fresh,
}

impl std::str::FromStr for SamplingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pool" | "common-pool" => Ok(SamplingMode::CommonPool),
            "fresh" => Ok(SamplingMode::Fresh),
            other => domain(format!("unknown sampling mode {other:?}")),
        }
    }
}

/// Gradient-descent settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Initial step `γ`. Defaults to a quarter of the root-mean-square
    /// distance of the points to their centroid.
    pub step_size: Option<f64>,
    /// Stopping threshold `η` on `max_i |mass_i − 1/n|`. Defaults to `min(0.05/n, 0.005)`.
    pub tolerance: Option<f64>,
    /// Source draws per mass estimate (pool size in [`SamplingMode::CommonPool`]).
    pub mc_samples: usize,
    pub max_iterations: usize,
    pub seed: u64,
    pub sampling: SamplingMode,
    #[serde(default)]
    pub step_rule: StepRule,
}

/// Step-size rule of the pooled descent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StepRule {
    /// Undo and halve on an energy increase, grow by 20% otherwise. The
    /// energy decreases at every accepted step.
    BoldDriver,
    /// Barzilai–Borwein step `sᵀs / sᵀy` from the last two iterates, accepted
    /// while the energy stays below its maximum over the last few accepted
    /// iterates and halved otherwise.
    BarzilaiBorwein,
    /// Damped Newton steps. The Hessian is the weighted graph Laplacian of
    /// the power-diagram facets, `∂mass_i/∂h_j = −∫_{F_ij} dμ / ‖x_i − x_j‖`,
    /// with the facet integrals estimated from the pool draws lying within a
    /// thin band around each facet. Steps are backtracked until the pooled
    /// energy satisfies an Armijo decrease.
    #[default]
    Newton,
}

impl std::str::FromStr for StepRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bold-driver" => Ok(StepRule::BoldDriver),
            "bb" | "barzilai-borwein" => Ok(StepRule::BarzilaiBorwein),
            "newton" => Ok(StepRule::Newton),
            other => domain(format!("unknown step rule {other:?}")),
        }
    }
}

const NONMONOTONE_WINDOW: usize = 10;

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            step_size: None,
            tolerance: None,
            mc_samples: 200_000,
            max_iterations: 5_000,
            seed: 0,
            sampling: SamplingMode::CommonPool,
            step_rule: StepRule::default(),
        }
    }
}

impl SolverConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.mc_samples == 0 {
            return domain("mc_samples must be positive");
        }
        if self.max_iterations == 0 {
            return domain("max_iterations must be positive");
        }
        for (name, v) in [("step size", self.step_size), ("tolerance", self.tolerance)] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return domain(format!("{name} must be positive and finite"));
                }
            }
        }
        Ok(())
    }

    pub fn resolved_tolerance(&self, n: usize) -> f64 {
        self.tolerance.unwrap_or((0.05 / n as f64).min(0.005))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Converged,
    Unconverged,
}

/// One line of the convergence trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    /// `max_i |mass_i − 1/n|` before the step.
    pub grad_sup: f64,
    /// Energy estimate before the step.
    pub energy: f64,
    pub step: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportSolution {
    pub source: SourceMeasure,
    pub points: SampleMatrix,
    /// Potential weights, recentred to sum to zero.
    pub h: Vec<f64>,
    /// Cell masses estimated at `h`.
    pub cell_mass: Vec<f64>,
    pub iterations: usize,
    pub grad_sup: f64,
    pub tolerance: f64,
    pub status: SolveStatus,
    /// Cells that received no source draw at the final weights.
    pub empty_cells: Vec<usize>,
    pub trace: Vec<TraceRecord>,
    pub config: SolverConfig,
}

impl TransportSolution {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    /// Solution object for given weights, with the cell masses estimated
    /// from `config.mc_samples` fresh draws. The status is
    /// [`SolveStatus::Converged`] when the masses are within tolerance.
    pub fn from_potential(
        points: &SampleMatrix,
        source: SourceKind,
        h: Vec<f64>,
        config: &SolverConfig,
    ) -> Result<Self> {
        config.validate()?;
        check_distinct(points)?;
        let mut h = h;
        if h.iter().any(|v| !v.is_finite()) {
            return domain("weights must be finite");
        }
        let cell_mass = cell_masses_mc(&h, points, source, config.mc_samples, config.seed)?;
        recenter(&mut h);
        let n = points.n();
        let tolerance = config.resolved_tolerance(n);
        let grad_sup = cell_mass
            .iter()
            .fold(0.0f64, |m, v| m.max((v - 1.0 / n as f64).abs()));
        Ok(Self {
            source: SourceMeasure {
                kind: source,
                dim: points.dim(),
            },
            points: points.clone(),
            empty_cells: (0..n).filter(|&i| cell_mass[i] <= 0.0).collect(),
            h,
            cell_mass,
            iterations: 0,
            grad_sup,
            tolerance,
            status: if grad_sup < tolerance {
                SolveStatus::Converged
            } else {
                SolveStatus::Unconverged
            },
            trace: Vec::new(),
            config: config.clone(),
        })
    }

    /// Cell index of source point `u`.
    pub fn assign(&self, u: &[f64]) -> usize {
        argmax(self.points.as_slice(), self.points.dim(), &self.h, u).0
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(argmax, best score, best − second best)`; the smallest index wins ties.
#[inline]
fn argmax(points: &[f64], d: usize, h: &[f64], u: &[f64]) -> (usize, f64, f64) {
    let mut best = 0;
    let mut top = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for (i, (x, hi)) in points.chunks_exact(d).zip(h).enumerate() {
        let s = dot(u, x) + hi;
        if s > top {
            second = top;
            top = s;
            best = i;
        } else if s > second {
            second = s;
        }
    }
    (best, top, top - second)
}

fn check_potential(h: &[f64], points: &SampleMatrix, u: &[f64]) -> Result<()> {
    if h.len() != points.n() {
        return Err(Error::DimensionMismatch {
            expected: points.n(),
            got: h.len(),
        });
    }
    if u.len() != points.dim() {
        return Err(Error::DimensionMismatch {
            expected: points.dim(),
            got: u.len(),
        });
    }
    Ok(())
}

/// `φ_h(u) = max_i (u·x_i + h_i)`.
pub fn potential_eval(h: &[f64], points: &SampleMatrix, u: &[f64]) -> Result<f64> {
    check_potential(h, points, u)?;
    Ok(argmax(points.as_slice(), points.dim(), h, u).1)
}

/// Zero-based index of the power cell containing `u`.
pub fn cell_assign(h: &[f64], points: &SampleMatrix, u: &[f64]) -> Result<usize> {
    check_potential(h, points, u)?;
    Ok(argmax(points.as_slice(), points.dim(), h, u).0)
}

fn mass_counts(
    h: &[f64],
    points: &SampleMatrix,
    source: SourceKind,
    n_mc: usize,
    seed: u64,
    stream: u32,
) -> Vec<u64> {
    let d = points.dim();
    let pts = points.as_slice();
    let per_batch = map_batches(n_mc, seed, stream, |rng, len| {
        let mut counts = vec![0u64; h.len()];
        let mut u = vec![0.0; d];
        for _ in 0..len {
            source.draw(rng, &mut u);
            counts[argmax(pts, d, h, &u).0] += 1;
        }
        counts
    });
    let mut total = vec![0u64; h.len()];
    for c in per_batch {
        total.iter_mut().zip(c).for_each(|(t, v)| *t += v);
    }
    total
}

/// Monte-Carlo estimate of `(μ(W_i(h)))_i` from `n_mc` fresh source draws.
pub fn cell_masses_mc(
    h: &[f64],
    points: &SampleMatrix,
    source: SourceKind,
    n_mc: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if h.len() != points.n() {
        return Err(Error::DimensionMismatch {
            expected: points.n(),
            got: h.len(),
        });
    }
    if n_mc == 0 {
        return domain("n_mc must be positive");
    }
    let counts = mass_counts(h, points, source, n_mc, seed, MASS_STREAM);
    Ok(counts.iter().map(|&c| c as f64 / n_mc as f64).collect())
}

fn check_distinct(points: &SampleMatrix) -> Result<()> {
    match points.find_duplicate() {
        Some((first, second)) => Err(Error::DuplicatePoints { first, second }),
        None => Ok(()),
    }
}

/// Monte-Carlo gradient of the energy, `mass_i − 1/n`, from fresh draws.
pub fn energy_gradient(
    h: &[f64],
    points: &SampleMatrix,
    source: SourceKind,
    config: &SolverConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    check_distinct(points)?;
    let inv_n = 1.0 / points.n() as f64;
    Ok(cell_masses_mc(h, points, source, config.mc_samples, config.seed)?
        .into_iter()
        .map(|m| m - inv_n)
        .collect())
}

fn recenter(h: &mut [f64]) {
    let mean = h.iter().sum::<f64>() / h.len() as f64;
    h.iter_mut().for_each(|v| *v -= mean);
}

/// Starting weights, recentred to sum to zero.
///
/// Gaussian source: `−‖x_i‖²/2`, the Voronoi diagram. Uniform source:
/// `−‖x_i‖²/(4 m_n) − ⟨x_i, u_c⟩` with `m_n` the largest absolute
/// coordinate and `u_c` the centre of the cube. The cells are then the
/// Voronoi cells of the box `[−m_n, m_n]^d` scaled by `1/(2 m_n)` and moved
/// onto the cube, so none of them is empty.
pub fn init_h0(points: &SampleMatrix, source: SourceKind) -> Result<Vec<f64>> {
    let n = points.n();
    if n == 1 {
        return Ok(vec![0.0]);
    }
    if points.rows().all(|r| r == points.row(0)) {
        return domain("all points coincide");
    }
    let sq: Vec<f64> = points.rows().map(|r| dot(r, r)).collect();
    let mut h: Vec<f64> = match source {
        SourceKind::UniformCube => {
            let m_n = points.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            points
                .rows()
                .zip(&sq)
                .map(|(x, s)| -s / (4.0 * m_n) - 0.5 * x.iter().sum::<f64>())
                .collect()
        }
        SourceKind::StandardGaussian => sq.iter().map(|s| -0.5 * s).collect(),
    };
    recenter(&mut h);
    Ok(h)
}

/// Warm start for the Newton descent: the power diagram whose cells are the
/// Voronoi cells of the points mapped affinely into the source, centred on
/// the coordinatewise median and scaled by the largest interquartile range.
fn warm_start(points: &SampleMatrix, source: SourceKind) -> Vec<f64> {
    let d = points.dim();
    let mut center = vec![0.0; d];
    let mut spread = 0.0f64;
    for (j, c) in center.iter_mut().enumerate() {
        let mut col = points.column(j);
        col.sort_by(f64::total_cmp);
        let q = |p: f64| col[((col.len() - 1) as f64 * p).round() as usize];
        *c = q(0.5);
        spread = spread.max(q(0.75) - q(0.25));
    }
    if !(spread > 0.0) {
        spread = default_step(points);
    }
    // Maps the interquartile box onto the middle half of the cube, or onto
    // (−0.67, 0.67), the quartiles of the standard normal.
    let (scale, shift) = match source {
        SourceKind::UniformCube => (2.0 * spread, 0.5),
        SourceKind::StandardGaussian => (spread / 1.35, 0.0),
    };
    let mut h: Vec<f64> = points
        .rows()
        .map(|x| {
            let xc: f64 = x.iter().zip(&center).map(|(a, c)| a * (a - 2.0 * c)).sum();
            -xc / (2.0 * scale) - shift * x.iter().sum::<f64>()
        })
        .collect();
    recenter(&mut h);
    h
}

fn default_step(points: &SampleMatrix) -> f64 {
    let mean = points.column_means();
    let ms = points
        .rows()
        .map(|r| r.iter().zip(&mean).map(|(x, m)| (x - m).powi(2)).sum::<f64>())
        .sum::<f64>()
        / points.n() as f64;
    0.25 * ms.sqrt().max(f64::MIN_POSITIVE)
}

/// Candidates kept per draw by [`PoolAssigner`].
const CANDIDATES: usize = 8;
/// Number of recent potentials kept for exact drift bounds.
const WINDOW: usize = 64;

/// Cached scoring of one pool draw, taken at potential version `stamp`.
#[derive(Debug, Clone, Copy)]
struct Draw {
    best: u32,
    stamp: u32,
    /// Score of `best` at `stamp`.
    top: f64,
    /// Upper bound on every other score at `stamp`.
    second: f64,
    /// Upper bound on every non-candidate score at `stamp`.
    kth: f64,
    /// `h_best` at `stamp`.
    hb: f64,
}

/// Cell assignment of a fixed pool, updated lazily as `h` moves.
///
/// Each draw keeps its `K` best-scoring cells as candidates. Between
/// potential versions `t` and `now` no score rises by more than
/// `R = max_j (h_j(now) − h_j(t))`, so the cached best cell is still the
/// argmax whenever its current score beats `second + R`. Otherwise the draw
/// is re-scored on its candidates alone, unless `kth + R` no longer rules the
/// other cells out, in which case all `n` cells are scored. `R` is computed
/// exactly for the last few versions and bounded by the running sum of the
/// largest per-step rises beyond that.
struct PoolAssigner<'a> {
    pool: &'a [f64],
    points: &'a [f64],
    d: usize,
    n: usize,
    k: usize,
    draws: Vec<Draw>,
    /// Row-major `M × k` candidate cells.
    cand: Vec<u32>,
    version: u32,
    /// Potentials of the last [`WINDOW`] versions, newest last.
    recent: std::collections::VecDeque<Vec<f64>>,
    /// Running sum of the largest rise, indexed by version.
    rises: Vec<f64>,
    counts: Vec<u64>,
    /// Per-cell sums of the assigned draws, row-major `n × d`.
    sums: Vec<f64>,
}

/// State before an update, for undoing it.
struct Rescored {
    h: Vec<f64>,
    saved: Vec<(usize, Draw, Option<Vec<u32>>)>,
}

/// Scores all cells, keeping the `k` best as candidates.
fn score_full(
    points: &[f64],
    d: usize,
    h: &[f64],
    u: &[f64],
    k: usize,
    stamp: u32,
) -> (Draw, Vec<u32>) {
    let mut top = [(f64::NEG_INFINITY, 0u32); CANDIDATES + 1];
    let top = &mut top[..k + 1];
    for (i, (x, hi)) in points.chunks_exact(d).zip(h).enumerate() {
        let s = dot(u, x) + hi;
        if s > top[k].0 {
            let mut p = k;
            while p > 0 && s > top[p - 1].0 {
                top[p] = top[p - 1];
                p -= 1;
            }
            top[p] = (s, i as u32);
        }
    }
    let best = top[0].1;
    let draw = Draw {
        best,
        stamp,
        top: top[0].0,
        second: top[1].0,
        kth: top[k].0,
        hb: h[best as usize],
    };
    (draw, top[..k].iter().map(|t| t.1).collect())
}

impl<'a> PoolAssigner<'a> {
    fn new(pool: &'a [f64], points: &'a SampleMatrix, h: &[f64]) -> Self {
        let d = points.dim();
        let n = points.n();
        let m = pool.len() / d;
        let k = CANDIDATES.min(n.saturating_sub(1)).max(1);
        let pts = points.as_slice();
        let scored: Vec<(Draw, Vec<u32>)> = pool
            .par_chunks(CHUNK * d)
            .flat_map_iter(|us| us.chunks_exact(d).map(|u| score_full(pts, d, h, u, k, 0)))
            .collect();
        let mut s = Self {
            pool,
            points: pts,
            d,
            n,
            k,
            draws: Vec::with_capacity(m),
            cand: Vec::with_capacity(m * k),
            version: 0,
            recent: std::collections::VecDeque::from([h.to_vec()]),
            rises: vec![0.0],
            counts: vec![0; n],
            sums: vec![0.0; n * d],
        };
        for (j, (draw, c)) in scored.into_iter().enumerate() {
            let i = draw.best as usize;
            s.counts[i] += 1;
            for (a, v) in s.sums[i * d..(i + 1) * d].iter_mut().zip(&pool[j * d..(j + 1) * d]) {
                *a += v;
            }
            s.draws.push(draw);
            s.cand.extend_from_slice(&c);
        }
        s
    }

    fn len(&self) -> usize {
        self.draws.len()
    }

    fn current(&self) -> &[f64] {
        self.recent.back().expect("at least one version")
    }

    /// Exact pooled energy `mean_s φ_h(u_s) − mean(h)` at the current `h`.
    fn energy(&self) -> f64 {
        let d = self.d;
        let h = self.current();
        let mut acc = 0.0;
        for i in 0..self.n {
            let x = &self.points[i * d..(i + 1) * d];
            acc += dot(&self.sums[i * d..(i + 1) * d], x) + self.counts[i] as f64 * h[i];
        }
        acc / self.len() as f64 - h.iter().sum::<f64>() / self.n as f64
    }

    fn moved(&mut self, sample: usize, from: u32, to: u32) {
        let d = self.d;
        let u = &self.pool[sample * d..(sample + 1) * d];
        let (f, t) = (from as usize, to as usize);
        self.counts[f] -= 1;
        self.counts[t] += 1;
        for k in 0..d {
            self.sums[f * d + k] -= u[k];
            self.sums[t * d + k] += u[k];
        }
    }

    /// Makes `h` the current potential.
    fn push_version(&mut self, h: &[f64]) {
        let rise = h
            .iter()
            .zip(self.current())
            .map(|(a, b)| a - b)
            .fold(0.0f64, f64::max);
        let last = *self.rises.last().expect("non-empty");
        self.rises.push(last + rise);
        self.version += 1;
        self.recent.push_back(h.to_vec());
        if self.recent.len() > WINDOW {
            self.recent.pop_front();
        }
    }

    /// Bound on score rises since each version, for the current `h`.
    fn rise_bounds(&self) -> impl Fn(u32) -> f64 + Sync + '_ {
        let h = self.current();
        let oldest = self.version + 1 - self.recent.len() as u32;
        let exact: Vec<f64> = self
            .recent
            .iter()
            .map(|old| h.iter().zip(old).map(|(a, b)| a - b).fold(0.0f64, f64::max))
            .collect();
        let now = self.rises[self.version as usize];
        move |stamp: u32| {
            if stamp >= oldest {
                exact[(stamp - oldest) as usize]
            } else {
                now - self.rises[stamp as usize]
            }
        }
    }

    fn rescore(&self, j: usize, h: &[f64], bound: f64) -> (Draw, Option<Vec<u32>>) {
        let d = self.d;
        let k = self.k;
        let u = &self.pool[j * d..(j + 1) * d];
        let draw = self.draws[j];
        let mut top = f64::NEG_INFINITY;
        let mut second = f64::NEG_INFINITY;
        let mut best = 0u32;
        for &c in &self.cand[j * k..(j + 1) * k] {
            let ci = c as usize;
            let s = dot(u, &self.points[ci * d..(ci + 1) * d]) + h[ci];
            if s > top || (s == top && c < best) {
                second = top;
                top = s;
                best = c;
            } else if s > second {
                second = s;
            }
        }
        let others = draw.kth + bound;
        if top - margin(top) > others {
            let fresh = Draw {
                best,
                stamp: self.version,
                top,
                second: second.max(others),
                kth: others,
                hb: h[best as usize],
            };
            return (fresh, None);
        }
        let (fresh, c) = score_full(self.points, d, h, u, k, self.version);
        (fresh, Some(c))
    }

    /// Moves to potential `h`, re-scoring the draws whose cell may change.
    fn update(&mut self, h: &[f64]) -> Rescored {
        let previous = self.current().to_vec();
        self.push_version(h);
        let bound = self.rise_bounds();
        let this = &*self;
        let changes: Vec<Vec<(usize, (Draw, Option<Vec<u32>>))>> = (0..this.len().div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let lo = c * CHUNK;
                let hi = (lo + CHUNK).min(this.len());
                (lo..hi)
                    .filter_map(|j| {
                        let dr = &this.draws[j];
                        let r = bound(dr.stamp);
                        let now = dr.top + h[dr.best as usize] - dr.hb;
                        if now - margin(now) > dr.second + r {
                            None
                        } else {
                            Some((j, this.rescore(j, h, r)))
                        }
                    })
                    .collect()
            })
            .collect();
        drop(bound);
        let k = self.k;
        let mut saved = Vec::new();
        for (j, (draw, cand)) in changes.into_iter().flatten() {
            let old = self.draws[j];
            let old_cand = cand.map(|c| {
                let prev = self.cand[j * k..(j + 1) * k].to_vec();
                self.cand[j * k..(j + 1) * k].copy_from_slice(&c);
                prev
            });
            if old.best != draw.best {
                self.moved(j, old.best, draw.best);
            }
            self.draws[j] = draw;
            saved.push((j, old, old_cand));
        }
        Rescored { h: previous, saved }
    }

    /// Returns to the potential before the matching [`Self::update`].
    fn undo(&mut self, r: Rescored) {
        let k = self.k;
        for (j, old, cand) in r.saved.into_iter().rev() {
            let cur = self.draws[j].best;
            if cur != old.best {
                self.moved(j, cur, old.best);
            }
            self.draws[j] = old;
            if let Some(c) = cand {
                self.cand[j * k..(j + 1) * k].copy_from_slice(&c);
            }
        }
        self.push_version(&r.h);
    }

    fn gradient(&self) -> Vec<f64> {
        let m = self.len() as f64;
        let inv_n = 1.0 / self.n as f64;
        self.counts.iter().map(|&c| c as f64 / m - inv_n).collect()
    }

    #[cfg(test)]
    fn best(&self) -> Vec<u32> {
        self.draws.iter().map(|d| d.best).collect()
    }
}

/// Slack absorbing rounding in the score comparisons.
#[inline]
fn margin(top: f64) -> f64 {
    1e-12 * (1.0 + top.abs())
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Gradient descent on the energy, recentring `Σh = 0` after each step.
/// Stops once `max_i |mass_i − 1/n| < η`; running out of iterations gives
/// [`SolveStatus::Unconverged`] with the full trace.
pub fn solve(
    points: &SampleMatrix,
    source: SourceKind,
    config: &SolverConfig,
) -> Result<TransportSolution> {
    config.validate()?;
    check_distinct(points)?;
    let n = points.n();
    let measure = SourceMeasure {
        kind: source,
        dim: points.dim(),
    };
    let tolerance = config.resolved_tolerance(n);
    let h = init_h0(points, source)?;
    if n == 1 {
        return Ok(TransportSolution {
            source: measure,
            points: points.clone(),
            h,
            cell_mass: vec![1.0],
            iterations: 0,
            grad_sup: 0.0,
            tolerance,
            status: SolveStatus::Converged,
            empty_cells: Vec::new(),
            trace: Vec::new(),
            config: config.clone(),
        });
    }
    let gamma0 = config.step_size.unwrap_or_else(|| default_step(points));
    let (h, grad, trace, status) = match config.sampling {
        SamplingMode::CommonPool if config.step_rule == StepRule::Newton => {
            descend_newton(points, source, config, h, tolerance)
        }
        SamplingMode::CommonPool => descend_pool(points, source, config, h, gamma0, tolerance),
        SamplingMode::Fresh => descend_fresh(points, source, config, h, gamma0, tolerance),
    };
    let inv_n = 1.0 / n as f64;
    let cell_mass: Vec<f64> = grad.iter().map(|g| g + inv_n).collect();
    let empty_cells = cell_mass
        .iter()
        .enumerate()
        .filter(|(_, &m)| m <= 0.0)
        .map(|(i, _)| i)
        .collect();
    Ok(TransportSolution {
        source: measure,
        points: points.clone(),
        h,
        cell_mass,
        iterations: trace.len(),
        grad_sup: sup_norm(&grad),
        tolerance,
        status,
        empty_cells,
        trace,
        config: config.clone(),
    })
}

type Descent = (Vec<f64>, Vec<f64>, Vec<TraceRecord>, SolveStatus);

fn step_from(h: &[f64], grad: &[f64], gamma: f64) -> Vec<f64> {
    let mut next: Vec<f64> = h.iter().zip(grad).map(|(h, g)| h - gamma * g).collect();
    recenter(&mut next);
    next
}

fn descend_pool(
    points: &SampleMatrix,
    source: SourceKind,
    config: &SolverConfig,
    mut h: Vec<f64>,
    gamma0: f64,
    tolerance: f64,
) -> Descent {
    let pool = draw_pool(source, points.dim(), config.mc_samples, config.seed, POOL_STREAM);
    let mut assigner = PoolAssigner::new(&pool, points, &h);
    let mut energy = assigner.energy();
    let mut recent = std::collections::VecDeque::from([energy]);
    let mut gamma = gamma0;
    let mut backtracking = false;
    let mut previous: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut trace = Vec::new();
    for iteration in 0..config.max_iterations {
        let grad = assigner.gradient();
        let grad_sup = sup_norm(&grad);
        if grad_sup < tolerance {
            return (h, grad, trace, SolveStatus::Converged);
        }
        if config.step_rule == StepRule::BarzilaiBorwein && !backtracking {
            if let Some((h_prev, g_prev)) = &previous {
                let (mut ss, mut sy) = (0.0, 0.0);
                for k in 0..h.len() {
                    let s = h[k] - h_prev[k];
                    ss += s * s;
                    sy += s * (grad[k] - g_prev[k]);
                }
                if sy > 0.0 {
                    gamma = (ss / sy).clamp(1e-3 * gamma0, 1e3 * gamma0);
                }
            }
        }
        let next = step_from(&h, &grad, gamma);
        let undo = assigner.update(&next);
        let next_energy = assigner.energy();
        let reference = match config.step_rule {
            StepRule::BoldDriver | StepRule::Newton => energy,
            StepRule::BarzilaiBorwein => recent.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        };
        let accepted = next_energy <= reference + 1e-14 * (1.0 + reference.abs());
        trace.push(TraceRecord {
            iteration,
            grad_sup,
            energy,
            step: gamma,
            accepted,
        });
        if accepted {
            previous = Some((std::mem::replace(&mut h, next), grad));
            energy = next_energy;
            recent.push_back(energy);
            if recent.len() > NONMONOTONE_WINDOW {
                recent.pop_front();
            }
            backtracking = false;
            gamma *= 1.2;
        } else {
            assigner.undo(undo);
            backtracking = true;
            gamma *= 0.5;
        }
    }
    let grad = assigner.gradient();
    let status = if sup_norm(&grad) < tolerance {
        SolveStatus::Converged
    } else {
        SolveStatus::Unconverged
    };
    (h, grad, trace, status)
}

/// One full scoring pass of the pool at a fixed `h`.
struct PoolScan {
    counts: Vec<u64>,
    /// Mean of `φ_h` over the pool.
    mean_phi: f64,
    /// `(i, j)` for every draw of cell `i` whose runner-up is `j` and which
    /// lies within the facet band.
    near: Vec<(u32, u32)>,
    /// Per draw: assigned cell and its score.
    assigned: Vec<(u32, f64)>,
}

/// Candidate cells of every draw, from a full scan at `h`.
struct Reference {
    h: Vec<f64>,
    k: usize,
    /// Row-major `M × k` best cells at `h`.
    cand: Vec<u32>,
    /// Upper bound on the scores of the other cells at `h`.
    kth: Vec<f64>,
}

/// Per-draw result of a scan: cell, score, runner-up and its score.
type Scored = (u32, f64, u32, f64);

/// Points stored coordinate by coordinate, so that the scores of all cells
/// for one draw are computed by vectorisable passes.
struct Columns {
    cols: Vec<f64>,
    n: usize,
}

impl Columns {
    fn new(points: &[f64], d: usize) -> Self {
        let n = points.len() / d;
        let mut cols = vec![0.0; n * d];
        for (i, x) in points.chunks_exact(d).enumerate() {
            for (k, v) in x.iter().enumerate() {
                cols[k * n + i] = *v;
            }
        }
        Self { cols, n }
    }

    /// `out[i] = u·x_i + h_i`, summed in the same order as [`dot`].
    #[inline]
    fn scores(&self, h: &[f64], u: &[f64], out: &mut [f64]) {
        let n = self.n;
        let (first, rest) = u.split_first().expect("non-empty point");
        for (o, x) in out.iter_mut().zip(&self.cols[..n]) {
            *o = first * x;
        }
        for (k, uk) in rest.iter().enumerate() {
            for (o, x) in out.iter_mut().zip(&self.cols[(k + 1) * n..(k + 2) * n]) {
                *o += uk * x;
            }
        }
        for (o, hi) in out.iter_mut().zip(h) {
            *o += hi;
        }
    }
}

fn full_scores(
    columns: &Columns,
    h: &[f64],
    u: &[f64],
    k: usize,
    buf: &mut [f64],
    cand: &mut Vec<u32>,
) -> (Scored, f64) {
    columns.scores(h, u, buf);
    let mut top = [(f64::NEG_INFINITY, u32::MAX); CANDIDATES + 1];
    let top = &mut top[..k + 1];
    for (i, &s) in buf.iter().enumerate() {
        if s > top[k].0 {
            let mut p = k;
            while p > 0 && s > top[p - 1].0 {
                top[p] = top[p - 1];
                p -= 1;
            }
            top[p] = (s, i as u32);
        }
    }
    cand.extend(top[..k].iter().map(|t| t.1));
    ((top[0].1, top[0].0, top[1].1, top[1].0), top[k].0)
}

/// Scores `u` on its reference candidates, falling back to all cells when
/// a non-candidate could have overtaken them (`rise` bounds the score gain
/// of any cell since the reference).
fn pruned_scores(
    points: &[f64],
    d: usize,
    h: &[f64],
    u: &[f64],
    cand: &[u32],
    kth: f64,
    rise: f64,
) -> Option<Scored> {
    let (mut best, mut second) = (u32::MAX, u32::MAX);
    let (mut top, mut next) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &c in cand {
        let ci = c as usize;
        let s = dot(u, &points[ci * d..(ci + 1) * d]) + h[ci];
        if s > top || (s == top && c < best) {
            next = top;
            second = best;
            top = s;
            best = c;
        } else if s > next || (s == next && c < second) {
            next = s;
            second = c;
        }
    }
    let others = kth + rise;
    (next - margin(next) > others).then_some((best, top, second, next))
}

fn scan_pool(pool: &[f64], points: &[f64], d: usize, h: &[f64], band: f64) -> PoolScan {
    scan_pool_with(pool, points, d, h, band, None).0
}

/// Scans the pool at `h`. With a reference, draws are scored on their
/// candidates when that is provably exact; returns the scan and the fraction
/// of draws that needed a full scoring. Without one, also returns a fresh
/// reference at `h`.
fn scan_pool_with(
    pool: &[f64],
    points: &[f64],
    d: usize,
    h: &[f64],
    band: f64,
    reference: Option<&Reference>,
) -> (PoolScan, f64, Option<Reference>) {
    let n = h.len();
    let m = pool.len() / d;
    let k = CANDIDATES.min(n.saturating_sub(1)).max(1);
    let rise = reference.map_or(0.0, |r| {
        h.iter().zip(&r.h).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max)
    });
    type Part = (Vec<u64>, f64, Vec<(u32, u32)>, Vec<(u32, f64)>, usize, Vec<u32>, Vec<f64>);
    let columns = Columns::new(points, d);
    let parts: Vec<Part> = pool
        .par_chunks(CHUNK * d)
        .enumerate()
        .map(|(c, us)| {
            let mut counts = vec![0u64; n];
            let mut phi = 0.0;
            let mut near = Vec::new();
            let len = us.len() / d;
            let mut assigned = Vec::with_capacity(len);
            let mut full = 0;
            let mut cand = Vec::new();
            let mut kth = Vec::new();
            let mut scratch = Vec::with_capacity(k);
            let mut buf = vec![0.0; n];
            for (r, u) in us.chunks_exact(d).enumerate() {
                let j = c * CHUNK + r;
                let scored = reference.and_then(|rf| {
                    pruned_scores(points, d, h, u, &rf.cand[j * rf.k..(j + 1) * rf.k], rf.kth[j], rise)
                });
                let (best, top, second, next) = match scored {
                    Some(s) => s,
                    None => {
                        full += 1;
                        scratch.clear();
                        let (s, kk) = full_scores(&columns, h, u, k, &mut buf, &mut scratch);
                        if reference.is_none() {
                            cand.extend_from_slice(&scratch);
                            kth.push(kk);
                        }
                        s
                    }
                };
                counts[best as usize] += 1;
                phi += top;
                assigned.push((best, top));
                if second != u32::MAX {
                    let (b, s2) = (best as usize, second as usize);
                    let xb = &points[b * d..(b + 1) * d];
                    let xs = &points[s2 * d..(s2 + 1) * d];
                    let dist: f64 = xb.iter().zip(xs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                    if top - next < band * dist {
                        near.push((best, second));
                    }
                }
            }
            (counts, phi, near, assigned, full, cand, kth)
        })
        .collect();
    let mut counts = vec![0u64; n];
    let mut phi = 0.0;
    let mut near = Vec::new();
    let mut assigned = Vec::with_capacity(m);
    let mut full = 0;
    let mut cand = Vec::new();
    let mut kth = Vec::new();
    for (c, p, nr, a, f, cd, kt) in parts {
        counts.iter_mut().zip(&c).for_each(|(t, v)| *t += v);
        phi += p;
        near.extend(nr);
        assigned.extend(a);
        full += f;
        cand.extend(cd);
        kth.extend(kt);
    }
    let fresh = reference.is_none().then(|| Reference {
        h: h.to_vec(),
        k,
        cand,
        kth,
    });
    let scan = PoolScan {
        counts,
        mean_phi: phi / m as f64,
        near,
        assigned,
    };
    (scan, full as f64 / m as f64, fresh)
}

impl PoolScan {
    fn energy(&self, h: &[f64]) -> f64 {
        self.mean_phi - h.iter().sum::<f64>() / h.len() as f64
    }

    fn gradient(&self) -> Vec<f64> {
        let m: u64 = self.counts.iter().sum();
        let inv_n = 1.0 / self.counts.len() as f64;
        self.counts.iter().map(|&c| c as f64 / m as f64 - inv_n).collect()
    }
}

/// Raises the weights of empty cells one at a time, each until it captures
/// about half its target share of the pool, tracking the reassigned draws so
/// later lifts see earlier ones. Cells emptied on the way are lifted too.
fn lift_empty_cells(pool: &[f64], points: &[f64], d: usize, h: &mut [f64], scan: &PoolScan) {
    let n = h.len();
    let m = pool.len() / d;
    let mut best: Vec<u32> = scan.assigned.iter().map(|a| a.0).collect();
    let mut top: Vec<f64> = scan.assigned.iter().map(|a| a.1).collect();
    let mut counts = scan.counts.clone();
    let share = (m / (2 * n)).clamp(1, m - 1);
    for _ in 0..4 * n {
        let Some(i) = (0..n).find(|&i| counts[i] == 0) else {
            break;
        };
        let x = &points[i * d..(i + 1) * d];
        let mut need: Vec<f64> = pool
            .chunks_exact(d)
            .zip(&top)
            .map(|(u, t)| t - dot(u, x) - h[i])
            .collect();
        let (_, kth, _) = need.select_nth_unstable_by(share, f64::total_cmp);
        h[i] += *kth;
        for (s, u) in pool.chunks_exact(d).enumerate() {
            let score = dot(u, x) + h[i];
            if score > top[s] {
                counts[best[s] as usize] -= 1;
                counts[i] += 1;
                best[s] = i as u32;
                top[s] = score;
            }
        }
    }
}

fn newton_direction(
    points: &[f64],
    d: usize,
    scan: &PoolScan,
    grad: &[f64],
    band: f64,
    m: usize,
) -> Option<Vec<f64>> {
    let n = grad.len();
    let mut hess = nalgebra::DMatrix::<f64>::zeros(n, n);
    // Each band draw contributes 1/(2 M band ‖x_i − x_j‖) from its own side.
    let scale = 1.0 / (2.0 * m as f64 * band);
    for &(i, j) in &scan.near {
        let (i, j) = (i as usize, j as usize);
        let xi = &points[i * d..(i + 1) * d];
        let xj = &points[j * d..(j + 1) * d];
        let dist: f64 = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let w = scale / dist;
        hess[(i, j)] -= w;
        hess[(j, i)] -= w;
        hess[(i, i)] += w;
        hess[(j, j)] += w;
    }
    let mean_diag = (0..n).map(|i| hess[(i, i)]).sum::<f64>() / n as f64;
    if !(mean_diag > 0.0) {
        return None;
    }
    for i in 0..n {
        hess[(i, i)] += 1e-3 * mean_diag;
    }
    let chol = hess.cholesky()?;
    let rhs = nalgebra::DVector::from_iterator(n, grad.iter().map(|g| -g));
    let mut dir: Vec<f64> = chol.solve(&rhs).iter().copied().collect();
    recenter(&mut dir);
    Some(dir)
}

/// Half-width of the facet band, in source units: a fraction of the typical
/// cell diameter.
fn facet_band(n: usize, d: usize) -> f64 {
    0.1 * (n as f64).powf(-1.0 / d as f64)
}

fn descend_newton(
    points: &SampleMatrix,
    source: SourceKind,
    config: &SolverConfig,
    mut h: Vec<f64>,
    tolerance: f64,
) -> Descent {
    let d = points.dim();
    let n = points.n();
    let pts = points.as_slice();
    let pool = draw_pool(source, d, config.mc_samples, config.seed, POOL_STREAM);
    let m = config.mc_samples;
    let start = warm_start(points, source);
    let empty = |h: &[f64]| scan_pool(&pool, pts, d, h, 0.0).counts.iter().filter(|&&c| c == 0).count();
    if empty(&start) <= empty(&h) {
        h = start;
    }
    let band = facet_band(n, d);
    let mut reference: Option<Reference> = None;
    // Re-anchors the candidate lists once too many draws need a full scoring.
    let mut scan_at = |h: &[f64]| {
        let (scan, full, fresh) = scan_pool_with(&pool, pts, d, h, band, reference.as_ref());
        if fresh.is_some() {
            reference = fresh;
        } else if full > 0.25 {
            reference = None;
        }
        scan
    };
    let mut scan = scan_at(&h);
    let mut trace = Vec::new();
    for iteration in 0..config.max_iterations {
        let mut grad = scan.gradient();
        let grad_sup = sup_norm(&grad);
        let energy = scan.energy(&h);
        if grad_sup < tolerance {
            return (h, grad, trace, SolveStatus::Converged);
        }
        let empty: Vec<usize> = (0..n).filter(|&i| scan.counts[i] == 0).collect();
        if !empty.is_empty() {
            lift_empty_cells(&pool, pts, d, &mut h, &scan);
            recenter(&mut h);
            scan = scan_at(&h);
            trace.push(TraceRecord {
                iteration,
                grad_sup,
                energy,
                step: 0.0,
                accepted: true,
            });
            continue;
        }
        let dir = newton_direction(pts, d, &scan, &grad, band, m)
            .unwrap_or_else(|| grad.iter().map(|g| -default_step(points) * g).collect());
        let slope: f64 = dir.iter().zip(&grad).map(|(a, b)| a * b).sum();
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha > 1e-4 {
            let mut next: Vec<f64> = h.iter().zip(&dir).map(|(a, b)| a + alpha * b).collect();
            recenter(&mut next);
            let trial = scan_at(&next);
            if trial.energy(&next) <= energy + 1e-4 * alpha * slope {
                accepted = Some((next, trial));
                break;
            }
            alpha *= 0.5;
        }
        trace.push(TraceRecord {
            iteration,
            grad_sup,
            energy,
            step: alpha,
            accepted: accepted.is_some(),
        });
        match accepted {
            Some((next, trial)) => {
                h = next;
                scan = trial;
            }
            None => {
                grad = scan.gradient();
                return (h, grad, trace, SolveStatus::Unconverged);
            }
        }
    }
    let grad = scan.gradient();
    let status = if sup_norm(&grad) < tolerance {
        SolveStatus::Converged
    } else {
        SolveStatus::Unconverged
    };
    (h, grad, trace, status)
}

fn descend_fresh(
    points: &SampleMatrix,
    source: SourceKind,
    config: &SolverConfig,
    mut h: Vec<f64>,
    gamma: f64,
    tolerance: f64,
) -> Descent {
    let n = points.n();
    let d = points.dim();
    let inv_n = 1.0 / n as f64;
    let mut trace = Vec::new();
    let estimate = |h: &[f64], iteration: usize| -> (Vec<f64>, f64) {
        let stream = FRESH_STREAM.wrapping_add(iteration as u32);
        let pool = draw_pool(source, d, config.mc_samples, config.seed, stream);
        let a = PoolAssigner::new(&pool, points, h);
        (a.gradient(), a.energy())
    };
    let mut last = estimate(&h, 0);
    for iteration in 0..config.max_iterations {
        let (grad, energy) = &last;
        let grad_sup = sup_norm(grad);
        if grad_sup < tolerance {
            let grad = last.0;
            return (h, grad, trace, SolveStatus::Converged);
        }
        trace.push(TraceRecord {
            iteration,
            grad_sup,
            energy: *energy,
            step: gamma,
            accepted: true,
        });
        h = step_from(&h, grad, gamma);
        last = estimate(&h, iteration + 1);
    }
    let status = if sup_norm(&last.0) < tolerance {
        SolveStatus::Converged
    } else {
        SolveStatus::Unconverged
    };
    let _ = inv_n;
    (h, last.0, trace, status)
}

/// Interior cell boundaries of a univariate uniform-source solution, in
/// increasing order: the `u` at which consecutive sorted points swap.
pub fn cell_boundaries_1d(solution: &TransportSolution) -> Result<Vec<f64>> {
    if solution.source.dim != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: solution.source.dim,
        });
    }
    let x = solution.points.as_slice();
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    Ok(order
        .windows(2)
        .map(|w| (solution.h[w[0]] - solution.h[w[1]]) / (x[w[1]] - x[w[0]]))
        .collect())
}

fn two_point_split(x1: &[f64], x2: &[f64], i: usize) -> Result<(Vec<f64>, f64, f64)> {
    if x1.len() != x2.len() {
        return Err(Error::DimensionMismatch {
            expected: x1.len(),
            got: x2.len(),
        });
    }
    if i >= x1.len() {
        return domain(format!("coordinate {i} out of range for dimension {}", x1.len()));
    }
    if x1 == x2 {
        return Err(Error::DuplicatePoints { first: 0, second: 1 });
    }
    let delta: Vec<f64> = x1.iter().zip(x2).map(|(a, b)| a - b).collect();
    let a1 = delta[i];
    let a2 = delta
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != i)
        .map(|(_, v)| v * v)
        .sum::<f64>()
        .sqrt();
    Ok((delta, a1, a2))
}

/// Second L-moment along coordinate `i` (index 2 at `i`, 1 elsewhere) of the
/// two-point empirical measure, for the Gaussian source with Legendre
/// weights evaluated at `Φ(y)`:
/// `((x1 − x2)/π) · arctan(c/√(c² + 2))`, `c = a₁/|a₂|`.
pub fn two_point_lmoment_gaussian(x1: &[f64], x2: &[f64], i: usize) -> Result<Vec<f64>> {
    let (delta, a1, a2) = two_point_split(x1, x2, i)?;
    let value = if a2 == 0.0 {
        0.25 * a1.signum()
    } else {
        let c = a1 / a2;
        (c / (c * c + 2.0).sqrt()).atan() / std::f64::consts::PI
    };
    Ok(delta.iter().map(|v| v * value).collect())
}

/// `r`-th L-moment along coordinate `i` of the two-point empirical measure
/// for the uniform source on `[0,1]^d`, `d ≤ 2`.
///
/// With `a₁` the gap along `i`, `a₂` the other one, `c = a₁/|a₂|` and
/// `s = 1/|c|`, the value is `(x1 − x2)` times
/// * `c·λ_r(U)` when `|c| ≤ 1` (`c/6` for `r = 2`, zero beyond),
/// * `−c·(J_r((1+s)/2) − J_r((1−s)/2))` when `|c| > 1`,
/// * `−sgn(a₁)·K_r(1/2)` when `a₂ = 0`.
pub fn two_point_lmoment_uniform(x1: &[f64], x2: &[f64], r: u32, i: usize) -> Result<Vec<f64>> {
    if r < 2 {
        return domain("two-point formula needs r ≥ 2");
    }
    if x1.len() > 2 {
        return domain("uniform two-point formula is available for d ≤ 2");
    }
    let (delta, a1, a2) = two_point_split(x1, x2, i)?;
    let value = if a2 == 0.0 {
        -a1.signum() * legendre_primitive1(r, 0.5)?
    } else {
        let c = a1 / a2;
        if c.abs() <= 1.0 {
            if r == 2 {
                c / 6.0
            } else {
                0.0
            }
        } else {
            let s = 1.0 / c.abs();
            -c * (legendre_primitive2(r, 0.5 * (1.0 + s))? - legendre_primitive2(r, 0.5 * (1.0 - s))?)
        }
    };
    Ok(delta.iter().map(|v| v * value).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pair() -> SampleMatrix {
        SampleMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap()
    }

    #[test]
    fn potential_and_assignment() {
        let p = pair();
        assert_abs_diff_eq!(potential_eval(&[0.0, 0.0], &p, &[0.9, 0.1]).unwrap(), 0.9);
        assert_abs_diff_eq!(potential_eval(&[2.5, 2.5], &p, &[0.9, 0.1]).unwrap(), 3.4);
        assert_eq!(cell_assign(&[0.0, 0.0], &p, &[0.9, 0.1]).unwrap(), 0);
        assert_eq!(cell_assign(&[1e9, 0.0], &p, &[0.0, 1.0]).unwrap(), 0);
        // ties go to the smallest index
        assert_eq!(cell_assign(&[0.0, 0.0], &p, &[0.5, 0.5]).unwrap(), 0);
        let one = SampleMatrix::from_rows(&[[2.0, 3.0]]).unwrap();
        assert_abs_diff_eq!(potential_eval(&[0.5], &one, &[1.0, 1.0]).unwrap(), 5.5);
        assert!(cell_assign(&[0.0], &p, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn voronoi_weights_give_nearest_neighbour() {
        let p = SampleMatrix::from_rows(&[[0.1, 0.2], [0.8, 0.3], [0.4, 0.9], [0.5, 0.5]]).unwrap();
        let h: Vec<f64> = p.rows().map(|r| -0.5 * dot(r, r)).collect();
        for k in 0..200 {
            let u = [(k as f64 * 0.618).fract(), (k as f64 * 0.377).fract()];
            let nearest = (0..4)
                .min_by(|&a, &b| {
                    let da: f64 = p.row(a).iter().zip(&u).map(|(x, v)| (x - v).powi(2)).sum();
                    let db: f64 = p.row(b).iter().zip(&u).map(|(x, v)| (x - v).powi(2)).sum();
                    da.total_cmp(&db)
                })
                .unwrap();
            assert_eq!(cell_assign(&h, &p, &u).unwrap(), nearest);
        }
    }

    #[test]
    fn initial_weights() {
        let p = SampleMatrix::from_rows(&[[0.0, 0.0], [1.0, 0.0]]).unwrap();
        let h = init_h0(&p, SourceKind::UniformCube).unwrap();
        assert_abs_diff_eq!(h[0], 0.375, epsilon = 1e-15);
        assert_abs_diff_eq!(h[1], -0.375, epsilon = 1e-15);
        // equal norms: only the translation term is left
        let p = SampleMatrix::from_rows(&[[1.0, 0.0], [0.0, -1.0], [0.6, 0.8]]).unwrap();
        let h = init_h0(&p, SourceKind::UniformCube).unwrap();
        let raw = [-0.5, 0.5, -0.7];
        let mean = raw.iter().sum::<f64>() / 3.0;
        for (hi, want) in h.iter().zip(raw) {
            assert_abs_diff_eq!(*hi, want - mean, epsilon = 1e-15);
        }
        let h = init_h0(&p, SourceKind::StandardGaussian).unwrap();
        assert!(h.iter().all(|v| v.abs() < 1e-15));
        // every initial cell meets the cube, even far from it
        let p = SampleMatrix::from_rows(&[[-3.0, 5.0], [-2.9, 5.1], [4.0, -1.0], [-3.1, 4.8], [0.0, 0.0]])
            .unwrap();
        let h = init_h0(&p, SourceKind::UniformCube).unwrap();
        let m = cell_masses_mc(&h, &p, SourceKind::UniformCube, 200_000, 2).unwrap();
        assert!(m.iter().all(|&v| v > 0.0), "{m:?}");
        let same = SampleMatrix::from_rows(&[[1.0, 2.0], [1.0, 2.0]]).unwrap();
        assert!(init_h0(&same, SourceKind::UniformCube).is_err());
    }

    #[test]
    fn masses_and_gradient() {
        let one = SampleMatrix::from_rows(&[[2.0, 3.0]]).unwrap();
        assert_eq!(cell_masses_mc(&[0.0], &one, SourceKind::UniformCube, 100, 1).unwrap(), vec![1.0]);
        let p = SampleMatrix::from_rows(&[[1.0, 1.0], [-1.0, -1.0]]).unwrap();
        let m = cell_masses_mc(&[0.0, 0.0], &p, SourceKind::StandardGaussian, 1_000_000, 4).unwrap();
        assert_abs_diff_eq!(m[0] + m[1], 1.0, epsilon = 1e-12);
        assert!((m[0] - 0.5).abs() < 0.002);
        let cfg = SolverConfig {
            mc_samples: 100_000,
            ..SolverConfig::default()
        };
        let g = energy_gradient(&[0.0, 0.0], &p, SourceKind::StandardGaussian, &cfg).unwrap();
        assert_abs_diff_eq!(g[0] + g[1], 0.0, epsilon = 1e-12);
        let dup = SampleMatrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        assert!(matches!(
            energy_gradient(&[0.0, 0.0], &dup, SourceKind::UniformCube, &cfg),
            Err(Error::DuplicatePoints { .. })
        ));
    }

    #[test]
    fn pool_assigner_matches_brute_force() {
        let pts: Vec<f64> = draw_pool(SourceKind::StandardGaussian, 2, 15, 5, 0);
        let p = SampleMatrix::from_row_major(15, 2, pts).unwrap();
        let pool = draw_pool(SourceKind::UniformCube, 2, 20_000, 9, 0);
        let mut h = init_h0(&p, SourceKind::UniformCube).unwrap();
        let mut a = PoolAssigner::new(&pool, &p, &h);
        for step in 0..150 {
            let g = a.gradient();
            let next = step_from(&h, &g, 0.3);
            let undo = a.update(&next);
            if step % 3 == 2 {
                a.undo(undo);
            } else {
                h = next;
            }
            let fresh = PoolAssigner::new(&pool, &p, &h);
            assert_eq!(a.best(), fresh.best());
            assert_eq!(a.counts, fresh.counts);
            assert_abs_diff_eq!(a.energy(), fresh.energy(), epsilon = 1e-12);
        }
    }

    #[test]
    fn trivial_and_symmetric_solves() {
        let one = SampleMatrix::from_rows(&[[2.0, 3.0]]).unwrap();
        let s = solve(&one, SourceKind::UniformCube, &SolverConfig::default()).unwrap();
        assert!(s.converged());
        assert_eq!(s.cell_mass, vec![1.0]);

        let p = SampleMatrix::from_rows(&[[1.0, 2.0], [-1.0, -2.0]]).unwrap();
        let s = solve(&p, SourceKind::StandardGaussian, &SolverConfig::with_seed(3)).unwrap();
        assert!(s.converged());
        assert!(s.h[0].abs() < 0.01 && s.h[1].abs() < 0.01);
    }

    #[test]
    fn energy_never_increases_along_accepted_steps() {
        let p = SampleMatrix::from_rows(&[[0.1, 0.2], [0.8, 0.3], [0.4, 0.9], [0.5, 0.5], [0.2, 0.7]])
            .unwrap();
        let s = solve(&p, SourceKind::UniformCube, &SolverConfig::with_seed(1)).unwrap();
        let accepted: Vec<f64> = s
            .trace
            .iter()
            .filter(|t| t.accepted)
            .map(|t| t.energy)
            .collect();
        assert!(accepted.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn two_point_gaussian_examples() {
        let v = two_point_lmoment_gaussian(&[2.0, 0.0], &[0.0, 0.0], 0).unwrap();
        assert_abs_diff_eq!(v[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(v[1], 0.0, epsilon = 1e-15);
        let v = two_point_lmoment_gaussian(&[1.0, 1.0], &[-1.0, -1.0], 0).unwrap();
        assert_abs_diff_eq!(v[0], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v[1], 1.0 / 3.0, epsilon = 1e-15);
        // relabelling the two atoms leaves the measure unchanged
        let v = two_point_lmoment_gaussian(&[-1.0, -1.0], &[1.0, 1.0], 0).unwrap();
        assert_abs_diff_eq!(v[0], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v[1], 1.0 / 3.0, epsilon = 1e-15);
        assert!(two_point_lmoment_gaussian(&[1.0, 1.0], &[1.0, 1.0], 0).is_err());
    }

    #[test]
    fn two_point_uniform_branches() {
        // collinear: the cube splits at u₁ = 1/2
        let v = two_point_lmoment_uniform(&[2.0, 0.0], &[0.0, 0.0], 2, 0).unwrap();
        assert_abs_diff_eq!(v[0], 0.5, epsilon = 1e-15);
        let v = two_point_lmoment_uniform(&[1.0, 3.0], &[0.0, 0.0], 2, 0).unwrap();
        assert_abs_diff_eq!(v[0], 1.0 / 18.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v[1], 3.0 / 18.0, epsilon = 1e-15);
        // both branches meet at |c| = 1
        let lo = two_point_lmoment_uniform(&[1.0, 1.0], &[0.0, 0.0], 2, 0).unwrap();
        let hi = two_point_lmoment_uniform(&[1.0 + 1e-9, 1.0], &[0.0, 0.0], 2, 0).unwrap();
        assert_abs_diff_eq!(lo[0], hi[0], epsilon = 1e-8);
        // and the steep branch tends to the collinear value
        let steep = two_point_lmoment_uniform(&[1.0, 1e-9], &[0.0, 0.0], 3, 0).unwrap();
        let flat = two_point_lmoment_uniform(&[1.0, 0.0], &[0.0, 0.0], 3, 0).unwrap();
        assert_abs_diff_eq!(steep[0], flat[0], epsilon = 1e-8);
    }
}
