use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mpm_parvi::grid::GridSpec;
use mpm_parvi::interp::{build_stencil, kernel_eval, kernel_grad, KernelKind};
use mpm_parvi::tensor::VecN;
use mpm_parvi::transfer::{compute_dp, Particle};

const KERNELS: [KernelKind; 3] = [KernelKind::Linear, KernelKind::Quadratic, KernelKind::Cubic];

fn spec(d: usize) -> GridSpec<f64> {
    GridSpec::cube(d, 17, VecN::filled(d, -2.0), 4.0).unwrap()
}

fn interior_point(rng: &mut impl Rng, spec: &GridSpec<f64>) -> VecN<f64> {
    let (lo, hi) = spec.interior_bounds(2.0);
    VecN::from_fn(spec.dimension(), |a| rng.random_range(lo[a]..hi[a]))
}

#[test]
fn partition_of_unity_gradient_nullsum_linear_reproduction() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for d in 1..=3 {
        let spec = spec(d);
        for kernel in KERNELS {
            for _ in 0..1000 {
                let x = interior_point(&mut rng, &spec);
                let s = build_stencil(kernel, &spec, &x).unwrap();
                let sum: f64 = s.weights.iter().sum();
                assert!((sum - 1.0).abs() < 1e-12, "{kernel:?} d={d} Σw={sum}");
                let mut grad = VecN::zeros(d);
                let mut first = VecN::zeros(d);
                for (node, w, g) in s.iter() {
                    grad += g;
                    first.axpy(w, &spec.node_position_flat(node));
                }
                assert!(grad.max_abs() < 1e-10, "{kernel:?} d={d} Σ∇w={grad:?}");
                assert!((&first - &x).max_abs() < 1e-10, "{kernel:?} d={d}");
            }
        }
    }
}

#[test]
fn inertia_tensor_closed_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for d in 1..=3 {
        let spec = spec(d);
        let h = spec.spacing();
        for (kernel, factor) in [(KernelKind::Quadratic, 0.25), (KernelKind::Cubic, 1.0 / 3.0)] {
            for _ in 0..200 {
                let mut p = Particle::at_rest(interior_point(&mut rng, &spec), 1.0, 1.0);
                p.stencil = build_stencil(kernel, &spec, &p.position).unwrap();
                let dp = compute_dp(&p, &spec);
                for i in 0..d {
                    for j in 0..d {
                        let expected = if i == j { factor * h * h } else { 0.0 };
                        assert!((dp[(i, j)] - expected).abs() < 1e-10, "{kernel:?} d={d}");
                    }
                }
            }
        }
    }
}

#[test]
fn stencil_sizes() {
    let spec = spec(2);
    let x = VecN::from_slice(&[0.1, -0.37]);
    assert_eq!(build_stencil(KernelKind::Linear, &spec, &x).unwrap().len(), 4);
    assert_eq!(build_stencil(KernelKind::Quadratic, &spec, &x).unwrap().len(), 9);
    assert_eq!(build_stencil(KernelKind::Cubic, &spec, &x).unwrap().len(), 16);
}

#[test]
fn out_of_margin_positions_are_rejected() {
    let spec = spec(1);
    assert!(build_stencil(KernelKind::Cubic, &spec, &VecN::from_slice(&[-1.9])).is_err());
    assert!(build_stencil(KernelKind::Cubic, &spec, &VecN::from_slice(&[f64::NAN])).is_err());
}

proptest! {
    #[test]
    fn kernels_are_even_and_compact(r in 0.0f64..3.0) {
        for kernel in KERNELS {
            let w = kernel_eval::<f64>(kernel, r);
            prop_assert_eq!(w, kernel_eval::<f64>(kernel, -r));
            prop_assert_eq!(kernel_grad::<f64>(kernel, r), -kernel_grad::<f64>(kernel, -r));
            prop_assert!(w >= 0.0);
            if r >= kernel.support_radius() {
                prop_assert_eq!(w, 0.0);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_difference(r in -2.5f64..2.5) {
        for kernel in KERNELS {
            let h = 1e-6;
            let near_knot = [0.0, 0.5, 1.0, 1.5, 2.0].iter().any(|k| (r.abs() - k).abs() < 1e-4);
            prop_assume!(!near_knot);
            let fd = (kernel_eval::<f64>(kernel, r + h) - kernel_eval::<f64>(kernel, r - h)) / (2.0 * h);
            prop_assert!((fd - kernel_grad::<f64>(kernel, r)).abs() < 1e-6);
        }
    }
}
