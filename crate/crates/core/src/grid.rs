//! Regular Cartesian background grid and its per-iteration nodal state.
//!
//! Node geometry is fixed for the lifetime of a [`Grid`]; only the nodal
//! state is rewritten each iteration. Storage is either a dense flat array
//! (row-major over the node multi-index, last axis fastest) or a hash map
//! keyed by the flat index for grids too large to allocate densely. Both
//! backends accumulate contributions in the same order and therefore yield
//! identical nodal states.

use std::collections::HashMap;

use smallvec::SmallVec;

use crate::error::{MpmError, Result};
use crate::scalar::Real;
use crate::tensor::VecN;

/// Node multi-index.
pub type MultiIndex = SmallVec<[usize; 4]>;

/// Default activity threshold for nodal mass, relative to unit total mass.
pub const DEFAULT_MASS_EPSILON: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec<S: Real> {
    dimension: usize,
    nodes_per_dim: usize,
    spacing: S,
    origin: VecN<S>,
}

impl<S: Real> GridSpec<S> {
    pub fn new(dimension: usize, nodes_per_dim: usize, spacing: S, origin: VecN<S>) -> Result<Self> {
        if dimension == 0 {
            return Err(MpmError::InvalidParameter("grid dimension must be at least 1".into()));
        }
        if nodes_per_dim < 4 {
            return Err(MpmError::InvalidParameter(format!(
                "nodes_per_dim must be at least 4, got {nodes_per_dim}"
            )));
        }
        if !(spacing.is_finite() && spacing > S::zero()) {
            return Err(MpmError::InvalidParameter(format!(
                "grid spacing must be positive, got {spacing}"
            )));
        }
        if origin.dim() != dimension {
            return Err(MpmError::DimensionMismatch {
                expected: dimension,
                got: origin.dim(),
            });
        }
        if !origin.is_finite() {
            return Err(MpmError::NonFinite("grid origin".into()));
        }
        if checked_node_count(dimension, nodes_per_dim).is_none() {
            return Err(MpmError::InvalidParameter(format!(
                "{nodes_per_dim}^{dimension} nodes overflows the index type"
            )));
        }
        Ok(GridSpec {
            dimension,
            nodes_per_dim,
            spacing,
            origin,
        })
    }

    /// Grid whose nodes span `[origin, origin + extent]` on every axis.
    pub fn cube(dimension: usize, nodes_per_dim: usize, origin: VecN<S>, extent: S) -> Result<Self> {
        if nodes_per_dim < 2 {
            return Self::new(dimension, nodes_per_dim, S::one(), origin);
        }
        let spacing = extent / S::from_usize_lossy(nodes_per_dim - 1);
        Self::new(dimension, nodes_per_dim, spacing, origin)
    }

    #[inline]
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    #[inline]
    pub fn nodes_per_dim(&self) -> usize {
        self.nodes_per_dim
    }

    #[inline]
    pub fn spacing(&self) -> S {
        self.spacing
    }

    pub fn origin(&self) -> &VecN<S> {
        &self.origin
    }

    /// N = k^d
    pub fn node_count(&self) -> usize {
        checked_node_count(self.dimension, self.nodes_per_dim).expect("validated at construction")
    }

    pub fn flat_index(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.dimension {
            return Err(MpmError::DimensionMismatch {
                expected: self.dimension,
                got: index.len(),
            });
        }
        let k = self.nodes_per_dim;
        let mut flat = 0usize;
        for &m in index {
            if m >= k {
                return Err(MpmError::IndexOutOfRange {
                    index: index.to_vec(),
                    nodes_per_dim: k,
                });
            }
            flat = flat * k + m;
        }
        Ok(flat)
    }

    pub fn unflatten(&self, mut flat: usize) -> MultiIndex {
        let k = self.nodes_per_dim;
        let mut index: MultiIndex = SmallVec::from_elem(0, self.dimension);
        for slot in index.iter_mut().rev() {
            *slot = flat % k;
            flat /= k;
        }
        index
    }

    /// origin + h · index
    pub fn node_position(&self, index: &[usize]) -> Result<VecN<S>> {
        self.flat_index(index)?;
        Ok(VecN::from_fn(self.dimension, |a| {
            self.origin[a] + self.spacing * S::from_usize_lossy(index[a])
        }))
    }

    pub fn node_position_flat(&self, flat: usize) -> VecN<S> {
        let index = self.unflatten(flat);
        VecN::from_fn(self.dimension, |a| {
            self.origin[a] + self.spacing * S::from_usize_lossy(index[a])
        })
    }

    /// Coordinate of the last node along every axis.
    pub fn upper_corner(&self) -> VecN<S> {
        let span = self.spacing * S::from_usize_lossy(self.nodes_per_dim - 1);
        VecN::from_fn(self.dimension, |a| self.origin[a] + span)
    }

    /// Box that keeps a full kernel stencil of radius `margin` (in grid
    /// spacings) inside the grid.
    pub fn interior_bounds(&self, margin: S) -> (VecN<S>, VecN<S>) {
        let pad = margin * self.spacing;
        let upper = self.upper_corner();
        let lo = VecN::from_fn(self.dimension, |a| self.origin[a] + pad);
        let hi = VecN::from_fn(self.dimension, |a| upper[a] - pad);
        (lo, hi)
    }

    /// Clamps `position` into the interior box and zeroes the outward
    /// normal velocity component on every clamped axis. Returns whether any
    /// axis was clamped.
    pub fn clamp_to_interior(&self, margin: S, position: &mut VecN<S>, velocity: &mut VecN<S>) -> bool {
        let (lo, hi) = self.interior_bounds(margin);
        let mut clamped = false;
        for a in 0..self.dimension {
            if position[a] < lo[a] {
                position[a] = lo[a];
                if velocity[a] < S::zero() {
                    velocity[a] = S::zero();
                }
                clamped = true;
            } else if position[a] > hi[a] {
                position[a] = hi[a];
                if velocity[a] > S::zero() {
                    velocity[a] = S::zero();
                }
                clamped = true;
            }
        }
        clamped
    }

    pub fn cast<T: Real>(&self) -> GridSpec<T> {
        GridSpec {
            dimension: self.dimension,
            nodes_per_dim: self.nodes_per_dim,
            spacing: T::lit(self.spacing.to_f64_lossy()),
            origin: self.origin.cast(),
        }
    }
}

fn checked_node_count(dimension: usize, k: usize) -> Option<usize> {
    let mut n = 1usize;
    for _ in 0..dimension {
        n = n.checked_mul(k)?;
    }
    Some(n)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodalState<S: Real> {
    pub mass: S,
    /// Aggregated m_i v_i from the particle-to-grid transfer.
    pub momentum: VecN<S>,
    pub velocity: VecN<S>,
    pub force_internal: VecN<S>,
    pub force_external: VecN<S>,
}

impl<S: Real> NodalState<S> {
    pub fn zero(dim: usize) -> Self {
        NodalState {
            mass: S::zero(),
            momentum: VecN::zeros(dim),
            velocity: VecN::zeros(dim),
            force_internal: VecN::zeros(dim),
            force_external: VecN::zeros(dim),
        }
    }

    pub fn clear(&mut self) {
        self.mass = S::zero();
        self.momentum.set_zero();
        self.velocity.set_zero();
        self.force_internal.set_zero();
        self.force_external.set_zero();
    }

    #[inline]
    pub fn is_active(&self, mass_epsilon: S) -> bool {
        self.mass > mass_epsilon
    }

    /// Field-wise accumulation, used to merge partial buffers.
    pub fn accumulate(&mut self, other: &Self) {
        self.mass += other.mass;
        self.momentum += &other.momentum;
        self.velocity += &other.velocity;
        self.force_internal += &other.force_internal;
        self.force_external += &other.force_external;
    }
}

/// v_i = (m_i v_i) / m_i on active nodes, zero on inactive ones.
pub fn nodal_velocity<S: Real>(state: &NodalState<S>, mass_epsilon: S) -> VecN<S> {
    if state.is_active(mass_epsilon) {
        state.momentum.scaled(S::one() / state.mass)
    } else {
        VecN::zeros(state.momentum.dim())
    }
}

/// Explicit Euler update v + dt (f_int + f_ext) / m on active nodes; forces
/// on inactive nodes are dropped.
pub fn apply_momentum_update<S: Real>(state: &NodalState<S>, dt: S, mass_epsilon: S) -> VecN<S> {
    let dim = state.velocity.dim();
    if !state.is_active(mass_epsilon) {
        return VecN::zeros(dim);
    }
    let scale = dt / state.mass;
    VecN::from_fn(dim, |a| {
        state.velocity[a] + scale * (state.force_internal[a] + state.force_external[a])
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StorageKind {
    Dense,
    Sparse,
}

#[derive(Clone, Debug)]
enum NodeStorage<S: Real> {
    Dense(Vec<NodalState<S>>),
    Sparse(HashMap<usize, NodalState<S>>),
}

/// Background grid: immutable geometry plus resettable nodal state.
#[derive(Clone, Debug)]
pub struct Grid<S: Real> {
    spec: GridSpec<S>,
    storage: NodeStorage<S>,
    mass_epsilon: S,
}

impl<S: Real> Grid<S> {
    pub fn new(spec: GridSpec<S>, kind: StorageKind, mass_epsilon: S) -> Self {
        let storage = match kind {
            StorageKind::Dense => {
                NodeStorage::Dense(vec![NodalState::zero(spec.dimension()); spec.node_count()])
            }
            StorageKind::Sparse => NodeStorage::Sparse(HashMap::new()),
        };
        Grid {
            spec,
            storage,
            mass_epsilon,
        }
    }

    /// Dense storage up to `sparse_threshold` nodes, sparse above.
    pub fn with_threshold(spec: GridSpec<S>, sparse_threshold: usize, mass_epsilon: S) -> Self {
        let kind = if spec.node_count() > sparse_threshold {
            StorageKind::Sparse
        } else {
            StorageKind::Dense
        };
        Self::new(spec, kind, mass_epsilon)
    }

    pub fn spec(&self) -> &GridSpec<S> {
        &self.spec
    }

    pub fn mass_epsilon(&self) -> S {
        self.mass_epsilon
    }

    pub fn storage_kind(&self) -> StorageKind {
        match self.storage {
            NodeStorage::Dense(_) => StorageKind::Dense,
            NodeStorage::Sparse(_) => StorageKind::Sparse,
        }
    }

    pub fn node(&self, flat: usize) -> Option<&NodalState<S>> {
        match &self.storage {
            NodeStorage::Dense(nodes) => nodes.get(flat),
            NodeStorage::Sparse(map) => map.get(&flat),
        }
    }

    /// Mutable access, materialising a zero state for untouched sparse nodes.
    #[inline]
    pub fn node_mut(&mut self, flat: usize) -> &mut NodalState<S> {
        let dim = self.spec.dimension();
        match &mut self.storage {
            NodeStorage::Dense(nodes) => &mut nodes[flat],
            NodeStorage::Sparse(map) => map.entry(flat).or_insert_with(|| NodalState::zero(dim)),
        }
    }

    /// Zeroes all nodal state; geometry is untouched.
    pub fn reset(&mut self) {
        match &mut self.storage {
            NodeStorage::Dense(nodes) => nodes.iter_mut().for_each(NodalState::clear),
            NodeStorage::Sparse(map) => map.clear(),
        }
    }

    /// Flat indices of nodes that currently hold any state, ascending.
    pub fn touched_nodes(&self) -> Vec<usize> {
        match &self.storage {
            NodeStorage::Dense(nodes) => (0..nodes.len()).collect(),
            NodeStorage::Sparse(map) => {
                let mut keys: Vec<usize> = map.keys().copied().collect();
                keys.sort_unstable();
                keys
            }
        }
    }

    pub fn active_nodes(&self) -> Vec<usize> {
        self.touched_nodes()
            .into_iter()
            .filter(|&i| self.node(i).is_some_and(|n| n.is_active(self.mass_epsilon)))
            .collect()
    }

    /// Applies `f(flat, state)` to every stored node.
    pub fn for_each_node_mut(&mut self, mut f: impl FnMut(usize, &mut NodalState<S>)) {
        match &mut self.storage {
            NodeStorage::Dense(nodes) => {
                for (i, n) in nodes.iter_mut().enumerate() {
                    f(i, n);
                }
            }
            NodeStorage::Sparse(map) => {
                for (&i, n) in map.iter_mut() {
                    f(i, n);
                }
            }
        }
    }

    /// Sets v_i = (m_i v_i)/m_i on every node.
    pub fn compute_velocities(&mut self) {
        let eps = self.mass_epsilon;
        self.for_each_node_mut(|_, n| n.velocity = nodal_velocity(n, eps));
    }

    /// Σ_i m_i, summed in ascending node order.
    pub fn total_mass(&self) -> S {
        self.touched_nodes()
            .into_iter()
            .filter_map(|i| self.node(i))
            .map(|n| n.mass)
            .sum()
    }

    /// Σ_i m_i v_i, summed in ascending node order.
    pub fn total_momentum(&self) -> VecN<S> {
        let mut total = VecN::zeros(self.spec.dimension());
        for i in self.touched_nodes() {
            if let Some(n) = self.node(i) {
                total += &n.momentum;
            }
        }
        total
    }

    /// Number of stored nodal records; N for dense grids.
    pub fn stored_node_count(&self) -> usize {
        match &self.storage {
            NodeStorage::Dense(nodes) => nodes.len(),
            NodeStorage::Sparse(map) => map.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec2() -> GridSpec<f64> {
        GridSpec::new(2, 5, 0.5, VecN::from_slice(&[-1.0, -1.0])).unwrap()
    }

    #[test]
    fn node_position_examples() {
        let spec = spec2();
        assert_eq!(spec.node_position(&[0, 0]).unwrap(), *spec.origin());
        assert_eq!(
            spec.node_position(&[2, 0]).unwrap(),
            VecN::from_slice(&[0.0, -1.0])
        );
        assert!(matches!(
            spec.node_position(&[5, 0]),
            Err(MpmError::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            spec.node_position(&[1]),
            Err(MpmError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn flat_index_round_trips() {
        for spec in [
            spec2(),
            GridSpec::new(3, 4, 1.0, VecN::zeros(3)).unwrap(),
            GridSpec::new(4, 5, 1.0, VecN::zeros(4)).unwrap(),
        ] {
            for j in 0..spec.node_count() {
                let m = spec.unflatten(j);
                assert_eq!(spec.flat_index(&m).unwrap(), j);
                assert_eq!(spec.node_position_flat(j), spec.node_position(&m).unwrap());
            }
        }
    }

    #[test]
    fn spec_validation() {
        assert!(GridSpec::new(2, 3, 1.0, VecN::zeros(2)).is_err());
        assert!(GridSpec::new(2, 8, 0.0, VecN::zeros(2)).is_err());
        assert!(GridSpec::new(2, 8, 1.0, VecN::zeros(3)).is_err());
        assert!(GridSpec::new(40, 1 << 20, 1.0, VecN::<f64>::zeros(40)).is_err());
    }

    #[test]
    fn nodal_velocity_examples() {
        let mut n = NodalState::<f64>::zero(2);
        assert_eq!(nodal_velocity(&n, 1e-12), VecN::zeros(2));
        n.mass = 2.0;
        n.momentum = VecN::from_slice(&[4.0, -2.0]);
        assert_eq!(nodal_velocity(&n, 1e-12), VecN::from_slice(&[2.0, -1.0]));
        n.mass = 1e-18;
        assert_eq!(nodal_velocity(&n, 1e-12), VecN::zeros(2));
        assert!(!n.is_active(1e-12));
    }

    #[test]
    fn momentum_update_examples() {
        let mut n = NodalState::<f64>::zero(2);
        n.mass = 2.0;
        n.velocity = VecN::from_slice(&[0.3, -0.1]);
        assert_eq!(apply_momentum_update(&n, 0.1, 1e-12), n.velocity);

        n.velocity = VecN::zeros(2);
        n.force_internal = VecN::from_slice(&[0.25, 0.5]);
        n.force_external = VecN::from_slice(&[0.75, -0.5]);
        let v = apply_momentum_update(&n, 0.1, 1e-12);
        assert!((v[0] - 0.05).abs() < 1e-15);
        assert_eq!(v[1], 0.0);

        let mut empty = NodalState::<f64>::zero(2);
        empty.force_external = VecN::from_slice(&[3.0, 1.0]);
        assert_eq!(apply_momentum_update(&empty, 0.1, 1e-12), VecN::zeros(2));
    }

    #[test]
    fn reset_is_idempotent_and_keeps_geometry() {
        for kind in [StorageKind::Dense, StorageKind::Sparse] {
            let mut grid = Grid::new(spec2(), kind, 1e-12);
            let before: Vec<_> = (0..25).map(|j| grid.spec().node_position_flat(j)).collect();
            let node = grid.node_mut(7);
            node.mass = 3.0;
            node.momentum[0] = 1.0;
            node.force_internal[1] = 2.0;
            grid.reset();
            assert_eq!(grid.total_mass(), 0.0);
            grid.reset();
            assert_eq!(grid.total_mass(), 0.0);
            assert_eq!(grid.total_momentum(), VecN::zeros(2));
            if let Some(n) = grid.node(7) {
                assert_eq!(*n, NodalState::zero(2));
            }
            let after: Vec<_> = (0..25).map(|j| grid.spec().node_position_flat(j)).collect();
            assert_eq!(before, after);
        }
    }

    #[test]
    fn clamp_zeroes_outward_velocity_only() {
        let spec = GridSpec::new(1, 11, 1.0, VecN::zeros(1)).unwrap();
        let mut x = VecN::from_slice(&[0.5]);
        let mut v = VecN::from_slice(&[-3.0]);
        assert!(spec.clamp_to_interior(2.0, &mut x, &mut v));
        assert_eq!(x[0], 2.0);
        assert_eq!(v[0], 0.0);

        let mut x = VecN::from_slice(&[9.5]);
        let mut v = VecN::from_slice(&[-1.0]);
        assert!(spec.clamp_to_interior(2.0, &mut x, &mut v));
        assert_eq!(x[0], 8.0);
        assert_eq!(v[0], -1.0);

        let mut x = VecN::from_slice(&[5.0]);
        let mut v = VecN::from_slice(&[1.0]);
        assert!(!spec.clamp_to_interior(2.0, &mut x, &mut v));
    }
}
