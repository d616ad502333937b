//! B-spline interpolation kernels and the per-particle weight stencil.
//!
//! The d-dimensional weight of node i for particle p is the product of 1D
//! kernels evaluated at r = (x_p − x_i)/h along each axis; the gradient
//! follows the product rule with each derivative factor scaled by 1/h.
//!
//! The linear kernel has a discontinuous derivative at integer offsets,
//! which produces force jumps when particles cross cell faces. It is kept
//! for tests; sampling runs default to the cubic kernel.

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{MpmError, Result};
use crate::grid::GridSpec;
use crate::scalar::Real;
use crate::tensor::VecN;

/// Tolerance (in grid spacings) on the interior-margin test, so positions
/// clamped exactly onto the margin are accepted despite rounding.
const MARGIN_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Linear,
    Quadratic,
    #[default]
    Cubic,
}

impl KernelKind {
    /// Support radius in grid spacings.
    pub fn support_radius(self) -> f64 {
        match self {
            KernelKind::Linear => 1.0,
            KernelKind::Quadratic => 1.5,
            KernelKind::Cubic => 2.0,
        }
    }

    /// Upper bound on nodes touched per axis, 2⌈R⌉.
    pub fn max_nodes_per_axis(self) -> usize {
        2 * self.support_radius().ceil() as usize
    }

    /// Closed form of Σ_i w_ip (x_i − x_p)(x_i − x_p)ᵀ / h² for interior
    /// particles, when one exists.
    pub fn inertia_factor(self) -> Option<f64> {
        match self {
            KernelKind::Linear => None,
            KernelKind::Quadratic => Some(0.25),
            KernelKind::Cubic => Some(1.0 / 3.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Linear => "linear",
            KernelKind::Quadratic => "quadratic",
            KernelKind::Cubic => "cubic",
        }
    }
}

/// K(r). Branch boundaries belong to the outer branch.
pub fn kernel_eval<S: Real>(kind: KernelKind, r: S) -> S {
    let a = r.abs();
    let one = S::one();
    match kind {
        KernelKind::Linear => {
            if a < one {
                one - a
            } else {
                S::zero()
            }
        }
        KernelKind::Quadratic => {
            let half = S::lit(0.5);
            let three_halves = S::lit(1.5);
            if a < half {
                S::lit(0.75) - a * a
            } else if a < three_halves {
                let t = three_halves - a;
                half * t * t
            } else {
                S::zero()
            }
        }
        KernelKind::Cubic => {
            let two = S::lit(2.0);
            if a < one {
                S::lit(0.5) * a * a * a - a * a + S::lit(2.0 / 3.0)
            } else if a < two {
                let t = two - a;
                t * t * t / S::lit(6.0)
            } else {
                S::zero()
            }
        }
    }
}

/// dK/dr
pub fn kernel_grad<S: Real>(kind: KernelKind, r: S) -> S {
    let a = r.abs();
    let sign = if r > S::zero() {
        S::one()
    } else if r < S::zero() {
        -S::one()
    } else {
        S::zero()
    };
    let one = S::one();
    match kind {
        KernelKind::Linear => {
            if a < one {
                -sign
            } else {
                S::zero()
            }
        }
        KernelKind::Quadratic => {
            let three_halves = S::lit(1.5);
            if a < S::lit(0.5) {
                -S::lit(2.0) * r
            } else if a < three_halves {
                -(three_halves - a) * sign
            } else {
                S::zero()
            }
        }
        KernelKind::Cubic => {
            let two = S::lit(2.0);
            if a < one {
                (S::lit(1.5) * a - two) * r
            } else if a < two {
                let t = two - a;
                -S::lit(0.5) * t * t * sign
            } else {
                S::zero()
            }
        }
    }
}

/// Nodes with nonzero weight for one particle, with their weights and
/// weight gradients. Node indices are flat row-major indices (see
/// [`GridSpec::unflatten`] for the multi-index).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightStencil<S: Real> {
    pub nodes: Vec<usize>,
    pub weights: Vec<S>,
    pub gradients: Vec<VecN<S>>,
}

impl<S: Real> WeightStencil<S> {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.weights.clear();
        self.gradients.clear();
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, S, &VecN<S>)> + '_ {
        self.nodes
            .iter()
            .zip(self.weights.iter())
            .zip(self.gradients.iter())
            .map(|((&n, &w), g)| (n, w, g))
    }
}

/// Builds the stencil of `position` on `grid`.
pub fn build_stencil<S: Real>(kind: KernelKind, grid: &GridSpec<S>, position: &VecN<S>) -> Result<WeightStencil<S>> {
    let mut stencil = WeightStencil::default();
    fill_stencil(kind, grid, position, &mut stencil)?;
    Ok(stencil)
}

struct AxisTaps<S> {
    index: SmallVec<[usize; 4]>,
    weight: SmallVec<[S; 4]>,
    grad: SmallVec<[S; 4]>,
}

/// In-place variant of [`build_stencil`] that reuses `out`'s buffers.
pub fn fill_stencil<S: Real>(
    kind: KernelKind,
    grid: &GridSpec<S>,
    position: &VecN<S>,
    out: &mut WeightStencil<S>,
) -> Result<()> {
    let d = grid.dimension();
    if position.dim() != d {
        return Err(MpmError::DimensionMismatch {
            expected: d,
            got: position.dim(),
        });
    }
    let radius = kind.support_radius();
    let support = S::lit(radius);
    let slack = S::lit(MARGIN_SLACK);
    let h = grid.spacing();
    let inv_h = S::one() / h;
    let k = grid.nodes_per_dim();
    let upper = S::from_usize_lossy(k - 1);

    let mut axes: SmallVec<[AxisTaps<S>; 4]> = SmallVec::with_capacity(d);
    for a in 0..d {
        let u = (position[a] - grid.origin()[a]) * inv_h;
        if !(u >= support - slack && u <= upper - support + slack) {
            return Err(MpmError::OutOfDomain {
                position: position.iter().map(|x| x.to_f64_lossy()).collect(),
            });
        }
        let lo = ((u - support).floor() + S::one()).max(S::zero());
        let hi = ((u + support).ceil() - S::one()).min(upper);
        let lo = lo.to_usize().unwrap_or(0);
        let hi = hi.to_usize().unwrap_or(k - 1);
        let mut taps = AxisTaps {
            index: SmallVec::new(),
            weight: SmallVec::new(),
            grad: SmallVec::new(),
        };
        for i in lo..=hi {
            let r = u - S::from_usize_lossy(i);
            let w = kernel_eval(kind, r);
            if w == S::zero() {
                continue;
            }
            taps.index.push(i);
            taps.weight.push(w);
            taps.grad.push(kernel_grad(kind, r) * inv_h);
        }
        axes.push(taps);
    }

    out.clear();
    let counts: SmallVec<[usize; 4]> = axes.iter().map(|t| t.index.len()).collect();
    let total: usize = counts.iter().product();
    let mut cursor: SmallVec<[usize; 4]> = SmallVec::from_elem(0, d);
    for _ in 0..total {
        let mut flat = 0usize;
        let mut weight = S::one();
        for a in 0..d {
            let c = cursor[a];
            flat = flat * k + axes[a].index[c];
            weight *= axes[a].weight[c];
        }
        let grad = VecN::from_fn(d, |g| {
            let mut prod = S::one();
            for a in 0..d {
                let c = cursor[a];
                prod *= if a == g { axes[a].grad[c] } else { axes[a].weight[c] };
            }
            prod
        });
        out.nodes.push(flat);
        out.weights.push(weight);
        out.gradients.push(grad);

        // odometer increment, last axis fastest
        for a in (0..d).rev() {
            cursor[a] += 1;
            if cursor[a] < counts[a] {
                break;
            }
            cursor[a] = 0;
        }
    }
    Ok(())
}
