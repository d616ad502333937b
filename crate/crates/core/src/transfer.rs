//! Particle ↔ grid transfers: PIC and APIC particle-to-grid, internal force
//! assembly, and the grid-to-particle update of velocity, position, affine
//! tensor and deformation gradient.
//!
//! Every scatter into the grid goes through [`scatter`]. In serial mode
//! contributions are added in particle order. In parallel mode particles are
//! split into fixed chunks of [`SCATTER_CHUNK`]; each chunk accumulates into
//! a private buffer and the buffers are merged in chunk order, so results
//! do not depend on the number of worker threads.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constitutive::{ConstitutiveModel, MIN_DETERMINANT};
use crate::error::{MpmError, Result};
use crate::grid::{Grid, GridSpec, NodalState};
use crate::interp::{fill_stencil, KernelKind, WeightStencil};
use crate::scalar::Real;
use crate::tensor::{MatN, VecN};

pub const SCATTER_CHUNK: usize = 1024;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    /// Single-threaded; bit-reproducible.
    #[default]
    Serial,
    /// Rayon-parallel with chunked, order-fixed merges.
    Parallel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Particle<S: Real> {
    pub position: VecN<S>,
    pub velocity: VecN<S>,
    /// Constant for the whole run.
    pub mass: S,
    /// Reference volume V⁰, constant.
    pub volume0: S,
    /// Deformation gradient F.
    pub deformation: MatN<S>,
    /// APIC affine tensor B.
    pub affine: MatN<S>,
    /// Weights for the current iteration only.
    pub stencil: WeightStencil<S>,
}

impl<S: Real> Particle<S> {
    /// Particle at rest with F = I and B = 0.
    pub fn at_rest(position: VecN<S>, mass: S, volume0: S) -> Self {
        let d = position.dim();
        Particle {
            velocity: VecN::zeros(d),
            position,
            mass,
            volume0,
            deformation: MatN::identity(d),
            affine: MatN::zeros(d),
            stencil: WeightStencil::default(),
        }
    }

    pub fn kinetic_energy(&self) -> S {
        S::lit(0.5) * self.mass * self.velocity.norm_squared()
    }
}

/// Particle-to-grid / grid-to-particle scheme. The FLIP blend weight is
/// named `flip_alpha` to keep it apart from the score amplification
/// constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransferScheme {
    Pic,
    Apic,
    FlipBlend { flip_alpha: f64 },
}

impl TransferScheme {
    pub fn name(&self) -> &'static str {
        match self {
            TransferScheme::Pic => "pic",
            TransferScheme::Apic => "apic",
            TransferScheme::FlipBlend { .. } => "flip",
        }
    }
}

/// Recomputes every particle's stencil from its current position.
pub fn build_stencils<S: Real>(
    exec: Execution,
    kernel: KernelKind,
    spec: &GridSpec<S>,
    particles: &mut [Particle<S>],
) -> Result<()> {
    let fill = |p: &mut Particle<S>| fill_stencil(kernel, spec, &p.position, &mut p.stencil);
    match exec {
        Execution::Serial => particles.iter_mut().try_for_each(fill),
        Execution::Parallel => particles.par_iter_mut().try_for_each(fill),
    }
}

/// Adds `contribute(particle_index, particle, stencil_slot, node)` for every
/// stencil entry of every particle.
pub(crate) fn scatter<S, F>(exec: Execution, particles: &[Particle<S>], grid: &mut Grid<S>, contribute: F)
where
    S: Real,
    F: Fn(usize, &Particle<S>, usize, &mut NodalState<S>) + Sync,
{
    match exec {
        Execution::Serial => {
            for (idx, p) in particles.iter().enumerate() {
                for (slot, &node) in p.stencil.nodes.iter().enumerate() {
                    contribute(idx, p, slot, grid.node_mut(node));
                }
            }
        }
        Execution::Parallel => {
            let dim = grid.spec().dimension();
            let partials: Vec<HashMap<usize, NodalState<S>>> = particles
                .par_chunks(SCATTER_CHUNK)
                .enumerate()
                .map(|(c, chunk)| {
                    let mut local: HashMap<usize, NodalState<S>> = HashMap::new();
                    for (j, p) in chunk.iter().enumerate() {
                        let idx = c * SCATTER_CHUNK + j;
                        for (slot, &node) in p.stencil.nodes.iter().enumerate() {
                            let entry = local.entry(node).or_insert_with(|| NodalState::zero(dim));
                            contribute(idx, p, slot, entry);
                        }
                    }
                    local
                })
                .collect();
            for local in &partials {
                for (&node, state) in local {
                    grid.node_mut(node).accumulate(state);
                }
            }
        }
    }
}

/// m_i = Σ w m_p, m_i v_i = Σ w m_p v_p
pub fn p2g_pic<S: Real>(exec: Execution, particles: &[Particle<S>], grid: &mut Grid<S>) {
    scatter(exec, particles, grid, |_, p, slot, node| {
        let wm = p.stencil.weights[slot] * p.mass;
        node.mass += wm;
        node.momentum.axpy(wm, &p.velocity);
    });
}

/// D_p = Σ_i w_ip (x_i − x_p)(x_i − x_p)ᵀ from the particle's stencil.
pub fn compute_dp<S: Real>(particle: &Particle<S>, spec: &GridSpec<S>) -> MatN<S> {
    let d = spec.dimension();
    let mut dp = MatN::zeros(d);
    for (node, w, _) in particle.stencil.iter() {
        let offset = &spec.node_position_flat(node) - &particle.position;
        dp.add_outer(w, &offset, &offset);
    }
    dp
}

/// D_p⁻¹, from the closed form ¼h²I / ⅓h²I for quadratic / cubic kernels
/// and from the explicit sum otherwise.
pub fn inverse_dp<S: Real>(kernel: KernelKind, particle: &Particle<S>, spec: &GridSpec<S>) -> Result<MatN<S>> {
    let h = spec.spacing();
    match kernel.inertia_factor() {
        Some(c) => Ok(MatN::scalar(spec.dimension(), S::one() / (S::lit(c) * h * h))),
        None => compute_dp(particle, spec).inverse(),
    }
}

/// m_i = Σ w m_p, m_i v_i = Σ w m_p [v_p + B_p D_p⁻¹ (x_i − x_p)].
/// B_p D_p⁻¹ is formed once per particle before the node loop.
pub fn p2g_apic<S: Real>(
    exec: Execution,
    particles: &[Particle<S>],
    grid: &mut Grid<S>,
    kernel: KernelKind,
) -> Result<()> {
    let spec = grid.spec().clone();
    let affine_of = |p: &Particle<S>| -> Result<MatN<S>> {
        Ok(p.affine.matmul(&inverse_dp(kernel, p, &spec)?))
    };
    let velocity_gradients: Vec<MatN<S>> = match exec {
        Execution::Serial => particles.iter().map(affine_of).collect::<Result<_>>()?,
        Execution::Parallel => particles.par_iter().map(affine_of).collect::<Result<_>>()?,
    };
    scatter(exec, particles, grid, |idx, p, slot, node| {
        let wm = p.stencil.weights[slot] * p.mass;
        let offset = &spec.node_position_flat(p.stencil.nodes[slot]) - &p.position;
        let affine = velocity_gradients[idx].mul_vec(&offset);
        node.mass += wm;
        node.momentum.axpy(wm, &p.velocity);
        node.momentum.axpy(wm, &affine);
    });
    Ok(())
}

/// f_i −= Σ_p V_p⁰ [∂Ψ/∂F](F_p) F_pᵀ ∇w_ip. The stress product is computed
/// once per particle and reused across its stencil.
pub fn assemble_internal_forces<S: Real>(
    exec: Execution,
    particles: &[Particle<S>],
    grid: &mut Grid<S>,
    model: &ConstitutiveModel<S>,
) -> Result<()> {
    let stress_of = |p: &Particle<S>| -> Result<MatN<S>> {
        Ok(model.kirchhoff_stress(&p.deformation)?.scaled(p.volume0))
    };
    let weighted: Vec<MatN<S>> = match exec {
        Execution::Serial => particles.iter().map(stress_of).collect::<Result<_>>()?,
        Execution::Parallel => particles.par_iter().map(stress_of).collect::<Result<_>>()?,
    };
    scatter(exec, particles, grid, |idx, p, slot, node| {
        let f = weighted[idx].mul_vec(&p.stencil.gradients[slot]);
        node.force_internal -= &f;
    });
    Ok(())
}

/// Same forces from the current-configuration route f_i −= Σ_p V_p σ_p ∇w_ip
/// with V_p = det(F_p) V_p⁰.
pub fn assemble_internal_forces_cauchy<S: Real>(
    exec: Execution,
    particles: &[Particle<S>],
    grid: &mut Grid<S>,
    model: &ConstitutiveModel<S>,
) -> Result<()> {
    let stress_of = |p: &Particle<S>| -> Result<MatN<S>> {
        let volume = p.deformation.determinant() * p.volume0;
        Ok(model.cauchy_stress(&p.deformation)?.scaled(volume))
    };
    let weighted: Vec<MatN<S>> = match exec {
        Execution::Serial => particles.iter().map(stress_of).collect::<Result<_>>()?,
        Execution::Parallel => particles.par_iter().map(stress_of).collect::<Result<_>>()?,
    };
    scatter(exec, particles, grid, |idx, p, slot, node| {
        let f = weighted[idx].mul_vec(&p.stencil.gradients[slot]);
        node.force_internal -= &f;
    });
    Ok(())
}

/// Boundary handling applied after the position update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Boundary<S: Real> {
    /// Leave positions alone.
    Free,
    /// Clamp into the interior box of the given margin (grid spacings).
    Clamp { margin: S },
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct G2pReport<S: Real> {
    /// Particles whose F was reset to identity by the det guard.
    pub f_resets: usize,
    pub clamped: usize,
    pub max_speed: S,
}

struct ParticleOutcome<S> {
    f_reset: bool,
    clamped: bool,
    speed: S,
}

/// Grid-to-particle update:
/// - v_p from Σ w v_i (PIC/APIC) or the PIC/FLIP blend,
/// - x_p += dt Σ w v_i,
/// - B_p = Σ w v_i (x_i − x_p)ᵀ for APIC,
/// - F_p ← (I + dt Σ v_i ∇wᵀ) F_p, reset to I when det(F_p) ≤ 1e−10.
///
/// Inactive nodes are skipped.
pub fn g2p<S: Real>(
    exec: Execution,
    particles: &mut [Particle<S>],
    grid: &Grid<S>,
    scheme: TransferScheme,
    dt: S,
    boundary: Boundary<S>,
) -> Result<G2pReport<S>> {
    let spec = grid.spec();
    let d = spec.dimension();
    let eps = grid.mass_epsilon();
    let min_det = S::lit(MIN_DETERMINANT);
    let flip_alpha = match scheme {
        TransferScheme::FlipBlend { flip_alpha } => Some(S::lit(flip_alpha)),
        _ => None,
    };
    let track_affine = matches!(scheme, TransferScheme::Apic);

    let update = |p: &mut Particle<S>| -> Result<ParticleOutcome<S>> {
        let mut v_pic = VecN::zeros(d);
        let mut v_increment = VecN::zeros(d);
        let mut velocity_gradient = MatN::zeros(d);
        let mut affine = MatN::zeros(d);
        for (node_index, w, grad_w) in p.stencil.iter() {
            let Some(node) = grid.node(node_index) else {
                continue;
            };
            if !node.is_active(eps) {
                continue;
            }
            v_pic.axpy(w, &node.velocity);
            if flip_alpha.is_some() {
                let v_old = node.momentum.scaled(S::one() / node.mass);
                v_increment.axpy(w, &(&node.velocity - &v_old));
            }
            velocity_gradient.add_outer(S::one(), &node.velocity, grad_w);
            if track_affine {
                let offset = &spec.node_position_flat(node_index) - &p.position;
                affine.add_outer(w, &node.velocity, &offset);
            }
        }

        p.velocity = match flip_alpha {
            Some(alpha) if alpha != S::zero() => {
                let flip = &p.velocity + &v_increment;
                VecN::from_fn(d, |a| (S::one() - alpha) * v_pic[a] + alpha * flip[a])
            }
            _ => v_pic.clone(),
        };
        p.position.axpy(dt, &v_pic);
        if track_affine {
            p.affine = affine;
        }

        let mut step = velocity_gradient.scaled(dt);
        for a in 0..d {
            step[(a, a)] += S::one();
        }
        let updated = step.matmul(&p.deformation);
        let det = updated.determinant();
        let f_reset = !(det > min_det) || !updated.is_finite();
        if f_reset {
            p.deformation.set_identity();
        } else {
            p.deformation = updated;
        }

        let clamped = match boundary {
            Boundary::Free => false,
            Boundary::Clamp { margin } => spec.clamp_to_interior(margin, &mut p.position, &mut p.velocity),
        };
        if !p.position.is_finite() || !p.velocity.is_finite() {
            return Err(MpmError::NonFinite(format!(
                "particle state after grid-to-particle update: x = {:?}",
                p.position.iter().map(|x| x.to_f64_lossy()).collect::<Vec<_>>()
            )));
        }
        Ok(ParticleOutcome {
            f_reset,
            clamped,
            speed: p.velocity.norm(),
        })
    };

    let outcomes: Vec<ParticleOutcome<S>> = match exec {
        Execution::Serial => particles.iter_mut().map(update).collect::<Result<_>>()?,
        Execution::Parallel => particles.par_iter_mut().map(update).collect::<Result<_>>()?,
    };
    let mut report = G2pReport {
        f_resets: 0,
        clamped: 0,
        max_speed: S::zero(),
    };
    for o in outcomes {
        report.f_resets += usize::from(o.f_reset);
        report.clamped += usize::from(o.clamped);
        report.max_speed = report.max_speed.max(o.speed);
    }
    Ok(report)
}
