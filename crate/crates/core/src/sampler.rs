//! The sampling loop: particles initialised from a proposal are driven by the
//! score force field through repeated MPM cycles.
//!
//! One [`Sampler::step`] performs, in order:
//! 1. stencils from the current positions,
//! 2. particle-to-grid transfer (PIC, or APIC for the APIC scheme),
//! 3. nodal velocities,
//! 4. internal elastic forces,
//! 5. external score (and gravity) forces,
//! 6. explicit momentum update on active nodes,
//! 7. grid-to-particle update of v, x, B and F,
//! 8. grid reset and telemetry.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{BoundaryKind, Proposal, SchemeKind, SimConfig};
use crate::constitutive::ConstitutiveModel;
use crate::error::{Error, MpmError, Result};
use crate::grid::{apply_momentum_update, Grid};
use crate::interp::KernelKind;
use crate::scalar::Real;
use crate::target::{
    apply_node_forces, external_force_at_particles_p2g, EvaluationSite, NodeScoreTable, ScoreForceField,
};
use crate::tensor::VecN;
use crate::transfer::{
    assemble_internal_forces, build_stencils, g2p, p2g_apic, p2g_pic, Boundary, Execution, G2pReport,
    Particle, TransferScheme,
};

const MAX_REJECTIONS: usize = 10_000;

/// One row of the per-iteration telemetry series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TelemetryRow {
    pub iteration: usize,
    pub mean_log_density: f64,
    pub kinetic_energy: f64,
    /// Cumulative count of deformation-gradient resets.
    pub f_reset_count: usize,
    /// Wall time of the step that produced this row; 0 for the initial row.
    pub wall_ms: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StopRule {
    pub enabled: bool,
    pub window: usize,
    pub tol_rel: f64,
    pub kinetic_floor: f64,
}

impl StopRule {
    pub fn from_config(config: &SimConfig) -> Self {
        let sim = &config.simulation;
        StopRule {
            enabled: sim.stop_rule,
            window: sim.stop_window,
            tol_rel: sim.stop_tol_rel,
            kinetic_floor: sim.stop_kinetic_floor,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIterations,
    /// The moving average of mean log-density settled.
    Converged,
    KineticFloor,
}

/// Decides whether a run has reached its terminal state.
///
/// With A_n the mean of the last `window` entries of `mean_log_density`
/// ending at entry n, the rule fires when |A_n − A_{n−1}| < tol·|A_{n−1}|
/// (or both are equal), or when `kinetic_energy` is below the floor. It
/// needs at least `window + 1` entries.
pub fn stop_rule(mean_log_density: &[f64], kinetic_energy: f64, rule: &StopRule) -> Option<StopReason> {
    let w = rule.window;
    let n = mean_log_density.len();
    if !rule.enabled || w == 0 || n < w + 1 {
        return None;
    }
    let avg = |end: usize| mean_log_density[end - w..end].iter().sum::<f64>() / w as f64;
    let current = avg(n);
    let previous = avg(n - 1);
    let delta = (current - previous).abs();
    if delta == 0.0 || delta < rule.tol_rel * previous.abs() {
        return Some(StopReason::Converged);
    }
    if kinetic_energy < rule.kinetic_floor {
        return Some(StopReason::KineticFloor);
    }
    None
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub iteration: usize,
    pub f_resets: usize,
    pub clamped: usize,
    pub max_speed: f64,
    /// dt exceeded the stability bound for the current maximum speed.
    pub cfl_exceeded: bool,
}

/// Position in a run, handed to the observer of [`Sampler::run`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Progress {
    pub iteration: usize,
    /// Last observation of the run.
    pub finished: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub iterations: usize,
    pub stop_reason: StopReason,
    pub f_reset_count: usize,
    pub cfl_warnings: usize,
    pub total_mass: f64,
}

/// Full run state for one configuration.
pub struct Sampler<S: Real> {
    config: SimConfig,
    exec: Execution,
    kernel: KernelKind,
    scheme: TransferScheme,
    boundary: Boundary<S>,
    model: ConstitutiveModel<S>,
    field: ScoreForceField<S>,
    node_scores: Option<NodeScoreTable<S>>,
    dt: S,
    particles: Vec<Particle<S>>,
    grid: Grid<S>,
    iteration: usize,
    telemetry: Vec<TelemetryRow>,
    f_resets: usize,
    cfl_warnings: usize,
}

impl<S: Real> Sampler<S> {
    /// Validates `config` and draws the initial particles from its proposal.
    pub fn new(config: &SimConfig) -> Result<Self, Error> {
        config.validate()?;
        let positions = initial_positions(config)?;
        Self::build(config, positions)
    }

    /// Starts from explicit positions instead of the configured proposal.
    pub fn from_positions(config: &SimConfig, positions: Vec<Vec<f64>>) -> Result<Self, Error> {
        config.validate()?;
        if positions.len() != config.simulation.particle_count {
            return Err(MpmError::InvalidParameter(format!(
                "expected {} particles, got {}",
                config.simulation.particle_count,
                positions.len()
            ))
            .into());
        }
        Self::build(config, positions)
    }

    fn build(config: &SimConfig, positions: Vec<Vec<f64>>) -> Result<Self, Error> {
        let sim = &config.simulation;
        let d = sim.dimension;
        let spec = config.grid_spec()?.cast::<S>();
        let params = config.material_params()?;
        let model = ConstitutiveModel::new(
            config.material.constitutive,
            crate::constitutive::MaterialParams {
                youngs_modulus: S::lit(params.youngs_modulus),
                poissons_ratio: S::lit(params.poissons_ratio),
                mu: S::lit(params.mu),
                lambda: S::lit(params.lambda),
            },
        );
        let target = config.target.build::<S>(d)?;
        let schedule = config.alpha_schedule();
        let field = ScoreForceField {
            target,
            score_alpha: match schedule {
                crate::target::AlphaSchedule::Constant(a) => crate::target::AlphaSchedule::Constant(S::lit(a)),
                crate::target::AlphaSchedule::Linear { start, end, iterations } => {
                    crate::target::AlphaSchedule::Linear {
                        start: S::lit(start),
                        end: S::lit(end),
                        iterations,
                    }
                }
            },
            site: sim.evaluation_site,
            gravity: sim
                .gravity
                .as_ref()
                .map(|g| VecN::from_fn(d, |a| S::lit(g[a]))),
        };
        let node_scores = match sim.evaluation_site {
            EvaluationSite::AtNodes => Some(NodeScoreTable::build(&field.target, &spec)?),
            EvaluationSite::AtParticles => None,
        };
        let mass = S::lit(config.particle_mass());
        let volume0 = S::lit(config.particle_volume0());
        let particles: Vec<Particle<S>> = positions
            .iter()
            .map(|x| {
                if x.len() != d {
                    return Err(MpmError::DimensionMismatch { expected: d, got: x.len() });
                }
                Ok(Particle::at_rest(VecN::from_fn(d, |a| S::lit(x[a])), mass, volume0))
            })
            .collect::<Result<_>>()?;
        let grid = Grid::new(spec, config.storage_kind(), S::lit(crate::grid::DEFAULT_MASS_EPSILON));
        let boundary = match config.grid.boundary {
            BoundaryKind::Clamp => Boundary::Clamp {
                margin: S::lit(sim.kernel.support_radius()),
            },
            BoundaryKind::Free => Boundary::Free,
        };
        let mut sampler = Sampler {
            exec: if sim.deterministic {
                Execution::Serial
            } else {
                Execution::Parallel
            },
            kernel: sim.kernel,
            scheme: config.transfer_scheme(),
            boundary,
            model,
            field,
            node_scores,
            dt: S::lit(sim.dt),
            particles,
            grid,
            iteration: 0,
            telemetry: Vec::new(),
            f_resets: 0,
            cfl_warnings: 0,
            config: config.clone(),
        };
        let row = sampler.telemetry_row(0.0);
        sampler.telemetry.push(row);
        Ok(sampler)
    }

    /// Overrides the execution mode chosen from the configuration.
    pub fn set_execution(&mut self, exec: Execution) {
        self.exec = exec;
    }

    pub fn execution(&self) -> Execution {
        self.exec
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn particles(&self) -> &[Particle<S>] {
        &self.particles
    }

    pub fn grid(&self) -> &Grid<S> {
        &self.grid
    }

    pub fn force_field(&self) -> &ScoreForceField<S> {
        &self.field
    }

    /// Node score cache, present for node-site evaluation.
    pub fn node_scores(&self) -> Option<&NodeScoreTable<S>> {
        self.node_scores.as_ref()
    }

    pub fn telemetry(&self) -> &[TelemetryRow] {
        &self.telemetry
    }

    pub fn f_reset_count(&self) -> usize {
        self.f_resets
    }

    pub fn cfl_warnings(&self) -> usize {
        self.cfl_warnings
    }

    /// Positions as `f64` rows.
    pub fn positions(&self) -> Vec<Vec<f64>> {
        self.particles
            .iter()
            .map(|p| p.position.iter().map(|x| x.to_f64_lossy()).collect())
            .collect()
    }

    /// Σ_p m_p in particle order.
    pub fn total_mass(&self) -> S {
        self.particles.iter().map(|p| p.mass).sum()
    }

    pub fn kinetic_energy(&self) -> S {
        self.particles.iter().map(Particle::kinetic_energy).sum()
    }

    /// log p(x_p) for every particle, including the target's offset.
    pub fn log_densities(&self) -> Vec<S> {
        let target = &self.field.target;
        match self.exec {
            Execution::Serial => self.particles.iter().map(|p| target.log_density(&p.position)).collect(),
            Execution::Parallel => self
                .particles
                .par_iter()
                .map(|p| target.log_density(&p.position))
                .collect(),
        }
    }

    fn telemetry_row(&self, wall_ms: f64) -> TelemetryRow {
        let logs = self.log_densities();
        let n = logs.len().max(1);
        TelemetryRow {
            iteration: self.iteration,
            mean_log_density: logs.iter().map(|l| l.to_f64_lossy()).sum::<f64>() / n as f64,
            kinetic_energy: self.kinetic_energy().to_f64_lossy(),
            f_reset_count: self.f_resets,
            wall_ms,
        }
    }

    /// One full MPM cycle.
    pub fn step(&mut self) -> Result<StepReport> {
        let started = Instant::now();
        let exec = self.exec;
        let spec = self.grid.spec().clone();
        build_stencils(exec, self.kernel, &spec, &mut self.particles)?;

        self.grid.reset();
        match self.scheme {
            TransferScheme::Apic => p2g_apic(exec, &self.particles, &mut self.grid, self.kernel)?,
            TransferScheme::Pic | TransferScheme::FlipBlend { .. } => {
                p2g_pic(exec, &self.particles, &mut self.grid)
            }
        }
        self.grid.compute_velocities();
        assemble_internal_forces(exec, &self.particles, &mut self.grid, &self.model)?;

        let alpha = self.field.score_alpha.at(self.iteration);
        match &self.node_scores {
            Some(table) => apply_node_forces(table, alpha, self.field.gravity.as_ref(), &mut self.grid),
            None => external_force_at_particles_p2g(exec, &self.field, alpha, &self.particles, &mut self.grid)?,
        }

        let dt = self.dt;
        let eps = self.grid.mass_epsilon();
        self.grid
            .for_each_node_mut(|_, node| node.velocity = apply_momentum_update(node, dt, eps));

        let report: G2pReport<S> = g2p(exec, &mut self.particles, &self.grid, self.scheme, dt, self.boundary)?;
        self.grid.reset();

        self.iteration += 1;
        self.f_resets += report.f_resets;
        let max_speed = report.max_speed.to_f64_lossy();
        let bound = self.config.cfl_bound(max_speed)?;
        let cfl_exceeded = self.config.simulation.dt > bound;
        if cfl_exceeded {
            if self.cfl_warnings == 0 {
                log::warn!(
                    "iteration {}: dt = {} exceeds the stability bound {:.3e} at max particle speed {:.3e}",
                    self.iteration,
                    self.config.simulation.dt,
                    bound,
                    max_speed
                );
            }
            self.cfl_warnings += 1;
        }
        if report.f_resets > 0 {
            log::debug!(
                "iteration {}: {} deformation gradients reset to identity",
                self.iteration,
                report.f_resets
            );
        }
        let wall_ms = started.elapsed().as_secs_f64() * 1e3;
        let row = self.telemetry_row(wall_ms);
        self.telemetry.push(row);
        Ok(StepReport {
            iteration: self.iteration,
            f_resets: report.f_resets,
            clamped: report.clamped,
            max_speed,
            cfl_exceeded,
        })
    }

    /// Steps until `max_iterations` or the stop rule, calling `observe` on
    /// the initial state and after every step.
    pub fn run(&mut self, mut observe: impl FnMut(&Self, Progress) -> Result<(), Error>) -> Result<RunSummary, Error> {
        let rule = StopRule::from_config(&self.config);
        let max_iterations = self.config.simulation.max_iterations;
        let mut reason = if self.iteration >= max_iterations {
            Some(StopReason::MaxIterations)
        } else {
            None
        };
        observe(
            self,
            Progress {
                iteration: self.iteration,
                finished: reason.is_some(),
            },
        )?;
        while reason.is_none() {
            self.step()?;
            let series: Vec<f64> = self.telemetry.iter().map(|r| r.mean_log_density).collect();
            let ke = self.telemetry.last().map_or(0.0, |r| r.kinetic_energy);
            reason = stop_rule(&series, ke, &rule);
            if reason.is_none() && self.iteration >= max_iterations {
                reason = Some(StopReason::MaxIterations);
            }
            observe(
                self,
                Progress {
                    iteration: self.iteration,
                    finished: reason.is_some(),
                },
            )?;
        }
        let stop_reason = reason.unwrap_or(StopReason::MaxIterations);
        log::info!("run finished after {} iterations ({stop_reason:?})", self.iteration);
        Ok(RunSummary {
            iterations: self.iteration,
            stop_reason,
            f_reset_count: self.f_resets,
            cfl_warnings: self.cfl_warnings,
            total_mass: self.total_mass().to_f64_lossy(),
        })
    }

    /// Runs without observing intermediate states.
    pub fn run_to_end(&mut self) -> Result<RunSummary, Error> {
        self.run(|_, _| Ok(()))
    }

    pub fn scheme_kind(&self) -> SchemeKind {
        self.config.simulation.scheme
    }
}

/// Seeded draw of the initial particle positions from the configured
/// proposal.
pub fn initial_positions(config: &SimConfig) -> Result<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.simulation.seed);
    let m = config.simulation.particle_count;
    let d = config.simulation.dimension;
    match config.init.proposal {
        Proposal::Uniform => {
            let (lower, upper) = config.init_box();
            Ok((0..m)
                .map(|_| {
                    (0..d)
                        .map(|a| {
                            let u: f64 = rng.random();
                            lower[a] + (upper[a] - lower[a]) * u
                        })
                        .collect()
                })
                .collect())
        }
        Proposal::Gaussian => {
            let mean = config.gaussian_mean();
            let std = config.init.std;
            let (lo, hi) = config.interior_box();
            let mut out = Vec::with_capacity(m);
            for _ in 0..m {
                let mut accepted = None;
                for _ in 0..MAX_REJECTIONS {
                    let x: Vec<f64> = (0..d)
                        .map(|a| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            mean[a] + std * z
                        })
                        .collect();
                    if (0..d).all(|a| x[a] >= lo[a] && x[a] <= hi[a]) {
                        accepted = Some(x);
                        break;
                    }
                }
                out.push(accepted.ok_or_else(|| {
                    MpmError::InvalidParameter(
                        "Gaussian proposal mass lies almost entirely outside the grid interior".into(),
                    )
                })?);
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule(window: usize, tol: f64) -> StopRule {
        StopRule {
            enabled: true,
            window,
            tol_rel: tol,
            kinetic_floor: 0.0,
        }
    }

    #[test]
    fn constant_series_fires_once_window_is_full() {
        let r = rule(5, 1e-3);
        let series = vec![-1.3; 5];
        assert_eq!(stop_rule(&series, 1.0, &r), None);
        let series = vec![-1.3; 6];
        assert_eq!(stop_rule(&series, 1.0, &r), Some(StopReason::Converged));
    }

    #[test]
    fn steadily_increasing_series_never_fires() {
        let r = rule(10, 1e-3);
        let series: Vec<f64> = (0..500).map(|i| -100.0 + i as f64).collect();
        for n in 1..=series.len() {
            assert_eq!(stop_rule(&series[..n], 1.0, &r), None);
        }
    }

    #[test]
    fn kinetic_floor() {
        let r = StopRule {
            kinetic_floor: 1e-6,
            ..rule(2, 0.0)
        };
        let series = vec![1.0, 2.0, 3.0];
        assert_eq!(stop_rule(&series, 1e-7, &r), Some(StopReason::KineticFloor));
        assert_eq!(stop_rule(&series, 1e-5, &r), None);
    }

    #[test]
    fn disabled_rule_never_fires() {
        let r = StopRule {
            enabled: false,
            ..rule(1, 1.0)
        };
        assert_eq!(stop_rule(&[1.0; 10], 0.0, &r), None);
    }

    #[test]
    fn seeded_initialisation_is_reproducible() {
        let c = SimConfig::default();
        let a = initial_positions(&c).unwrap();
        let b = initial_positions(&c).unwrap();
        assert_eq!(a, b);
        let (lo, hi) = c.init_box();
        assert!(a.iter().all(|x| x[0] >= lo[0] && x[0] <= hi[0]));
    }
}
