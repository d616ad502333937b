//! Target densities and the score force field f_ext = α ∇ log p.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MpmError, Result};
use crate::grid::{Grid, GridSpec};
use crate::scalar::Real;
use crate::tensor::{MatN, VecN};
use crate::transfer::{scatter, Execution, Particle};

pub type LogDensityFn<S> = Arc<dyn Fn(&VecN<S>) -> S + Send + Sync>;
pub type ScoreFn<S> = Arc<dyn Fn(&VecN<S>) -> VecN<S> + Send + Sync>;

/// Gaussian mixture with precomputed Cholesky factors and precisions.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixture<S: Real> {
    means: Vec<VecN<S>>,
    precisions: Vec<MatN<S>>,
    chol: Vec<MatN<S>>,
    /// log w_k − ½ log det Σ_k − ½ d log 2π
    log_constants: Vec<S>,
    weights: Vec<S>,
}

impl<S: Real> GaussianMixture<S> {
    pub fn new(weights: &[S], means: Vec<VecN<S>>, covariances: Vec<MatN<S>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || covariances.len() != k {
            return Err(MpmError::InvalidParameter(format!(
                "mixture needs matching weights/means/covariances, got {}/{}/{}",
                k,
                means.len(),
                covariances.len()
            )));
        }
        let d = means[0].dim();
        let total: S = weights.iter().copied().sum();
        if weights.iter().any(|&w| !(w > S::zero())) || !total.is_finite() {
            return Err(MpmError::InvalidParameter("mixture weights must be positive".into()));
        }
        let mut precisions = Vec::with_capacity(k);
        let mut chol = Vec::with_capacity(k);
        let mut log_constants = Vec::with_capacity(k);
        let half_log_two_pi = S::lit(0.5) * (S::lit(2.0) * S::PI()).ln();
        for (idx, (mean, cov)) in means.iter().zip(&covariances).enumerate() {
            if mean.dim() != d {
                return Err(MpmError::DimensionMismatch { expected: d, got: mean.dim() });
            }
            if cov.dim() != d {
                return Err(MpmError::DimensionMismatch { expected: d, got: cov.dim() });
            }
            if cov.asymmetry() > S::lit(1e-12) * (S::one() + cov.max_abs()) {
                return Err(MpmError::InvalidParameter(format!(
                    "covariance of component {idx} is not symmetric"
                )));
            }
            let l = cov.cholesky().map_err(|_| {
                MpmError::InvalidParameter(format!(
                    "covariance of component {idx} is not positive definite"
                ))
            })?;
            let half_log_det: S = (0..d).map(|i| l[(i, i)].ln()).sum();
            log_constants.push(
                (weights[idx] / total).ln() - half_log_det - S::from_usize_lossy(d) * half_log_two_pi,
            );
            precisions.push(cov.inverse()?);
            chol.push(l);
        }
        Ok(GaussianMixture {
            means,
            precisions,
            chol,
            log_constants,
            weights: weights.iter().map(|&w| w / total).collect(),
        })
    }

    pub fn dimension(&self) -> usize {
        self.means[0].dim()
    }

    pub fn components(&self) -> usize {
        self.means.len()
    }

    fn component_log_densities(&self, x: &VecN<S>) -> Vec<S> {
        self.means
            .iter()
            .zip(&self.precisions)
            .zip(&self.log_constants)
            .map(|((m, p), &c)| {
                let r = x - m;
                c - S::lit(0.5) * r.dot(&p.mul_vec(&r))
            })
            .collect()
    }

    pub fn log_density(&self, x: &VecN<S>) -> S {
        log_sum_exp(&self.component_log_densities(x))
    }

    /// Σ_k r_k(x) · (−Σ_k⁻¹ (x − μ_k)) with responsibilities r_k.
    pub fn score(&self, x: &VecN<S>) -> VecN<S> {
        let logs = self.component_log_densities(x);
        let total = log_sum_exp(&logs);
        let mut score = VecN::zeros(x.dim());
        for ((m, p), l) in self.means.iter().zip(&self.precisions).zip(logs) {
            let r = (l - total).exp();
            score.axpy(-r, &p.mul_vec(&(x - m)));
        }
        score
    }

    fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> VecN<S> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w.to_f64_lossy();
            if u < acc {
                k = i;
                break;
            }
        }
        let z = standard_normal_vec(rng, self.dimension());
        &self.means[k] + &self.chol[k].mul_vec(&z)
    }
}

fn log_sum_exp<S: Real>(values: &[S]) -> S {
    let max = values.iter().copied().fold(S::neg_infinity(), S::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|&v| (v - max).exp()).sum::<S>().ln()
}

fn standard_normal_vec<S: Real, R: Rng + ?Sized>(rng: &mut R, d: usize) -> VecN<S> {
    VecN::from_fn(d, |_| {
        let z: f64 = StandardNormal.sample(rng);
        S::lit(z)
    })
}

#[derive(Clone)]
pub enum TargetKind<S: Real> {
    /// N(0, I)
    StdGaussian,
    GaussianMixture(GaussianMixture<S>),
    /// x₀ ~ N(0, s²), x₁ | x₀ ~ N(b (x₀² − s²), 1), remaining axes N(0, 1).
    Banana { scale: S, curvature: S },
    /// log p = −(‖x‖ − r)² / (2w²)
    Donut { radius: S, width: S },
    /// User-supplied log-density with an optional analytic score; the score
    /// falls back to central differences.
    Custom {
        log_density: LogDensityFn<S>,
        score: Option<ScoreFn<S>>,
    },
}

impl<S: Real> fmt::Debug for TargetKind<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetKind::StdGaussian => f.write_str("StdGaussian"),
            TargetKind::GaussianMixture(m) => f.debug_tuple("GaussianMixture").field(m).finish(),
            TargetKind::Banana { scale, curvature } => f
                .debug_struct("Banana")
                .field("scale", scale)
                .field("curvature", curvature)
                .finish(),
            TargetKind::Donut { radius, width } => f
                .debug_struct("Donut")
                .field("radius", radius)
                .field("width", width)
                .finish(),
            TargetKind::Custom { score, .. } => f
                .debug_struct("Custom")
                .field("analytic_score", &score.is_some())
                .finish(),
        }
    }
}

/// Unnormalised target density p(x) known through log p and ∇ log p.
#[derive(Clone, Debug)]
pub struct TargetDensity<S: Real> {
    dimension: usize,
    kind: TargetKind<S>,
    /// Constant added to every log-density value.
    log_offset: S,
}

impl<S: Real> TargetDensity<S> {
    pub fn std_gaussian(dimension: usize) -> Result<Self> {
        Self::new(dimension, TargetKind::StdGaussian)
    }

    pub fn mixture(mixture: GaussianMixture<S>) -> Self {
        TargetDensity {
            dimension: mixture.dimension(),
            kind: TargetKind::GaussianMixture(mixture),
            log_offset: S::zero(),
        }
    }

    pub fn custom(
        dimension: usize,
        log_density: impl Fn(&VecN<S>) -> S + Send + Sync + 'static,
        score: Option<ScoreFn<S>>,
    ) -> Result<Self> {
        Self::new(
            dimension,
            TargetKind::Custom {
                log_density: Arc::new(log_density),
                score,
            },
        )
    }

    pub fn new(dimension: usize, kind: TargetKind<S>) -> Result<Self> {
        if dimension == 0 {
            return Err(MpmError::InvalidParameter("target dimension must be ≥ 1".into()));
        }
        match &kind {
            TargetKind::GaussianMixture(m) if m.dimension() != dimension => {
                return Err(MpmError::DimensionMismatch {
                    expected: dimension,
                    got: m.dimension(),
                })
            }
            TargetKind::Banana { scale, .. } => {
                if dimension < 2 {
                    return Err(MpmError::InvalidParameter("banana target needs dimension ≥ 2".into()));
                }
                if !(*scale > S::zero()) {
                    return Err(MpmError::InvalidParameter("banana scale must be positive".into()));
                }
            }
            TargetKind::Donut { radius, width } if !(*width > S::zero()) || *radius < S::zero() => {
                return Err(MpmError::InvalidParameter(
                    "donut needs radius ≥ 0 and width > 0".into(),
                ));
            }
            _ => {}
        }
        Ok(TargetDensity {
            dimension,
            kind,
            log_offset: S::zero(),
        })
    }

    /// Same target with `offset` added to the log-density.
    pub fn with_log_offset(mut self, offset: S) -> Self {
        self.log_offset = offset;
        self
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn kind(&self) -> &TargetKind<S> {
        &self.kind
    }

    pub fn log_density(&self, x: &VecN<S>) -> S {
        let half = S::lit(0.5);
        let value = match &self.kind {
            TargetKind::StdGaussian => -half * x.norm_squared(),
            TargetKind::GaussianMixture(m) => m.log_density(x),
            TargetKind::Banana { scale, curvature } => {
                let r = x[1] - *curvature * (x[0] * x[0] - *scale * *scale);
                let rest: S = x.iter().skip(2).map(|&v| v * v).sum();
                -half * (x[0] * x[0] / (*scale * *scale) + r * r + rest)
            }
            TargetKind::Donut { radius, width } => {
                let e = x.norm() - *radius;
                -half * e * e / (*width * *width)
            }
            TargetKind::Custom { log_density, .. } => log_density(x),
        };
        value + self.log_offset
    }

    pub fn has_analytic_score(&self) -> bool {
        !matches!(&self.kind, TargetKind::Custom { score: None, .. })
    }

    /// ∇ log p(x).
    pub fn score(&self, x: &VecN<S>) -> Result<VecN<S>> {
        let d = self.dimension;
        if x.dim() != d {
            return Err(MpmError::DimensionMismatch { expected: d, got: x.dim() });
        }
        Ok(match &self.kind {
            TargetKind::StdGaussian => -x,
            TargetKind::GaussianMixture(m) => m.score(x),
            TargetKind::Banana { scale, curvature } => {
                let (s, b) = (*scale, *curvature);
                let r = x[1] - b * (x[0] * x[0] - s * s);
                VecN::from_fn(d, |j| match j {
                    0 => -x[0] / (s * s) + S::lit(2.0) * b * x[0] * r,
                    1 => -r,
                    _ => -x[j],
                })
            }
            TargetKind::Donut { radius, width } => {
                let n = x.norm();
                if n == S::zero() {
                    VecN::zeros(d)
                } else {
                    x.scaled(-(n - *radius) / (*width * *width * n))
                }
            }
            TargetKind::Custom { score: Some(score), .. } => score(x),
            TargetKind::Custom { score: None, .. } => {
                numerical_score(|y| self.log_density(y), x, None)?
            }
        })
    }

    /// Independent draws from the target, where an exact sampler exists.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Result<Vec<VecN<S>>> {
        let d = self.dimension;
        match &self.kind {
            TargetKind::StdGaussian => Ok((0..count).map(|_| standard_normal_vec(rng, d)).collect()),
            TargetKind::GaussianMixture(m) => Ok((0..count).map(|_| m.sample_one(rng)).collect()),
            TargetKind::Banana { scale, curvature } => Ok((0..count)
                .map(|_| {
                    let mut z: VecN<S> = standard_normal_vec(rng, d);
                    z[0] *= *scale;
                    z[1] = z[1] + *curvature * (z[0] * z[0] - *scale * *scale);
                    z
                })
                .collect()),
            _ => Err(MpmError::InvalidParameter(
                "no direct sampler for this target".into(),
            )),
        }
    }
}

/// Central-difference gradient of `log_density`. The default step is
/// 1e−5·(1 + |x_j|) per coordinate.
pub fn numerical_score<S: Real>(
    log_density: impl Fn(&VecN<S>) -> S,
    x: &VecN<S>,
    step: Option<S>,
) -> Result<VecN<S>> {
    if let Some(h) = step {
        if !(h > S::zero()) {
            return Err(MpmError::InvalidParameter(format!("finite-difference step {h} must be > 0")));
        }
    }
    let mut probe = x.clone();
    let mut grad = VecN::zeros(x.dim());
    for j in 0..x.dim() {
        let h = step.unwrap_or_else(|| S::lit(1e-5) * (S::one() + x[j].abs()));
        probe[j] = x[j] + h;
        let up = log_density(&probe);
        probe[j] = x[j] - h;
        let down = log_density(&probe);
        probe[j] = x[j];
        if !up.is_finite() || !down.is_finite() {
            return Err(MpmError::NonFinite(format!(
                "log-density at finite-difference probe along axis {j}"
            )));
        }
        grad[j] = (up - down) / (h + h);
    }
    Ok(grad)
}

/// Where the score force is evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluationSite {
    /// Once per run at grid nodes.
    #[default]
    AtNodes,
    /// Every iteration at particles, then transferred to the grid.
    AtParticles,
}

/// Per-iteration score amplification α(n).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AlphaSchedule<S: Real> {
    Constant(S),
    /// Linear ramp from `start` to `end` over `iterations`, then held.
    Linear { start: S, end: S, iterations: usize },
}

impl<S: Real> AlphaSchedule<S> {
    pub fn at(&self, iteration: usize) -> S {
        match *self {
            AlphaSchedule::Constant(a) => a,
            AlphaSchedule::Linear { start, end, iterations } => {
                if iterations == 0 || iteration >= iterations {
                    end
                } else {
                    let t = S::from_usize_lossy(iteration) / S::from_usize_lossy(iterations);
                    start + (end - start) * t
                }
            }
        }
    }
}

/// f_ext = α(n) ∇ log p + m g.
#[derive(Clone, Debug)]
pub struct ScoreForceField<S: Real> {
    pub target: TargetDensity<S>,
    pub score_alpha: AlphaSchedule<S>,
    pub site: EvaluationSite,
    pub gravity: Option<VecN<S>>,
}

impl<S: Real> ScoreForceField<S> {
    pub fn new(target: TargetDensity<S>, score_alpha: S) -> Self {
        ScoreForceField {
            target,
            score_alpha: AlphaSchedule::Constant(score_alpha),
            site: EvaluationSite::AtNodes,
            gravity: None,
        }
    }
}

/// Scores at every grid node, computed once and read-only afterwards.
/// Nodes where the score is not finite carry zero force.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeScoreTable<S: Real> {
    scores: Vec<VecN<S>>,
    non_finite: usize,
}

impl<S: Real> NodeScoreTable<S> {
    pub fn build(target: &TargetDensity<S>, spec: &GridSpec<S>) -> Result<Self> {
        if target.dimension() != spec.dimension() {
            return Err(MpmError::DimensionMismatch {
                expected: spec.dimension(),
                got: target.dimension(),
            });
        }
        let d = spec.dimension();
        let scores: Vec<Option<VecN<S>>> = (0..spec.node_count())
            .into_par_iter()
            .map(|i| {
                target
                    .score(&spec.node_position_flat(i))
                    .ok()
                    .filter(VecN::is_finite)
            })
            .collect();
        let non_finite = scores.iter().filter(|s| s.is_none()).count();
        if non_finite > 0 {
            log::warn!("score is not finite at {non_finite} grid nodes; their external force is zero");
        }
        Ok(NodeScoreTable {
            scores: scores.into_iter().map(|s| s.unwrap_or_else(|| VecN::zeros(d))).collect(),
            non_finite,
        })
    }

    pub fn score(&self, node: usize) -> &VecN<S> {
        &self.scores[node]
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn non_finite_count(&self) -> usize {
        self.non_finite
    }

    /// α ∇ log p(x_i) for every node.
    pub fn forces(&self, alpha: S) -> Vec<VecN<S>> {
        self.scores.iter().map(|s| s.scaled(alpha)).collect()
    }
}

/// Node-indexed external force table α(0) ∇ log p(x_i).
pub fn external_force_at_nodes<S: Real>(field: &ScoreForceField<S>, spec: &GridSpec<S>) -> Result<Vec<VecN<S>>> {
    Ok(NodeScoreTable::build(&field.target, spec)?.forces(field.score_alpha.at(0)))
}

/// Adds α ∇ log p(x_i) + m_i g to every active node.
pub fn apply_node_forces<S: Real>(table: &NodeScoreTable<S>, alpha: S, gravity: Option<&VecN<S>>, grid: &mut Grid<S>) {
    let eps = grid.mass_epsilon();
    grid.for_each_node_mut(|i, node| {
        if !node.is_active(eps) {
            return;
        }
        node.force_external.axpy(alpha, table.score(i));
        if let Some(g) = gravity {
            let m = node.mass;
            node.force_external.axpy(m, g);
        }
    });
}

/// Accumulates Σ_p w_ip (α ∇ log p(x_p) + m_p g) into nodal external forces.
/// Particles whose score is not finite contribute no score force.
pub fn external_force_at_particles_p2g<S: Real>(
    exec: Execution,
    field: &ScoreForceField<S>,
    alpha: S,
    particles: &[Particle<S>],
    grid: &mut Grid<S>,
) -> Result<()> {
    let d = grid.spec().dimension();
    let force_of = |p: &Particle<S>| -> VecN<S> {
        let mut f = match field.target.score(&p.position) {
            Ok(s) if s.is_finite() => s.scaled(alpha),
            _ => VecN::zeros(d),
        };
        if let Some(g) = &field.gravity {
            f.axpy(p.mass, g);
        }
        f
    };
    if field.target.dimension() != d {
        return Err(MpmError::DimensionMismatch {
            expected: d,
            got: field.target.dimension(),
        });
    }
    let forces: Vec<VecN<S>> = match exec {
        Execution::Serial => particles.iter().map(force_of).collect(),
        Execution::Parallel => particles.par_iter().map(force_of).collect(),
    };
    scatter(exec, particles, grid, |idx, p, slot, node| {
        node.force_external.axpy(p.stencil.weights[slot], &forces[idx]);
    });
    Ok(())
}

/// Target description in configuration form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum TargetSpec {
    StdGaussian,
    /// Means and covariances are flat row-major lists.
    GaussianMixture {
        weights: Vec<f64>,
        means: Vec<f64>,
        covariances: Vec<f64>,
    },
    Banana { scale: f64, curvature: f64 },
    Donut { radius: f64, width: f64 },
}

impl TargetSpec {
    pub fn name(&self) -> &'static str {
        match self {
            TargetSpec::StdGaussian => "std_gaussian",
            TargetSpec::GaussianMixture { .. } => "gaussian_mixture",
            TargetSpec::Banana { .. } => "banana",
            TargetSpec::Donut { .. } => "donut",
        }
    }

    pub fn build<S: Real>(&self, dimension: usize) -> Result<TargetDensity<S>> {
        match self {
            TargetSpec::StdGaussian => TargetDensity::std_gaussian(dimension),
            TargetSpec::GaussianMixture {
                weights,
                means,
                covariances,
            } => {
                let k = weights.len();
                let d = dimension;
                if means.len() != k * d {
                    return Err(MpmError::InvalidParameter(format!(
                        "mixture means: expected {} values ({k} components × dimension {d}), got {}",
                        k * d,
                        means.len()
                    )));
                }
                if covariances.len() != k * d * d {
                    return Err(MpmError::InvalidParameter(format!(
                        "mixture covariances: expected {} values ({k} components × {d}×{d}), got {}",
                        k * d * d,
                        covariances.len()
                    )));
                }
                let lift = |v: &[f64]| v.iter().map(|&x| S::lit(x)).collect::<Vec<S>>();
                let mu = means.chunks(d).map(|c| VecN::from_slice(&lift(c))).collect();
                let cov = covariances
                    .chunks(d * d)
                    .map(|c| MatN::from_row_major(d, &lift(c)))
                    .collect::<Result<Vec<_>>>()?;
                let mixture = GaussianMixture::new(&lift(weights), mu, cov)?;
                TargetDensity::new(d, TargetKind::GaussianMixture(mixture))
            }
            TargetSpec::Banana { scale, curvature } => TargetDensity::new(
                dimension,
                TargetKind::Banana {
                    scale: S::lit(*scale),
                    curvature: S::lit(*curvature),
                },
            ),
            TargetSpec::Donut { radius, width } => TargetDensity::new(
                dimension,
                TargetKind::Donut {
                    radius: S::lit(*radius),
                    width: S::lit(*width),
                },
            ),
        }
    }
}
