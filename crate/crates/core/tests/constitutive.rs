use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mpm_parvi::constitutive::{lame_from_elastic, stress_convert, ConstitutiveKind, ConstitutiveModel, StressMeasure};
use mpm_parvi::tensor::MatN;

fn random_f(rng: &mut impl Rng, d: usize) -> MatN<f64> {
    loop {
        let f = MatN::from_fn(d, |i, j| if i == j { 1.0 } else { 0.0 } + rng.random_range(-0.4..0.4));
        let det = f.determinant();
        if det <= 0.1 {
            continue;
        }
        let target: f64 = rng.random_range(0.5..2.0);
        let scaled = f.scaled((target / det).powf(1.0 / d as f64));
        return scaled;
    }
}

fn models() -> Vec<ConstitutiveModel<f64>> {
    let p = lame_from_elastic(7.5, 0.3).unwrap();
    vec![
        ConstitutiveModel::new(ConstitutiveKind::NeoHookean, p),
        ConstitutiveModel::new(ConstitutiveKind::LinearElastic, p),
    ]
}

fn fd_gradient(model: &ConstitutiveModel<f64>, f: &MatN<f64>, step: f64) -> MatN<f64> {
    let d = f.dim();
    MatN::from_fn(d, |i, j| {
        let mut plus = f.clone();
        let mut minus = f.clone();
        plus[(i, j)] += step;
        minus[(i, j)] -= step;
        (model.energy_density(&plus).unwrap() - model.energy_density(&minus).unwrap()) / (2.0 * step)
    })
}

#[test]
fn pk1_matches_energy_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for model in models() {
        for k in 0..100 {
            let d = 1 + k % 3;
            let f = random_f(&mut rng, d);
            let det = f.determinant();
            assert!((0.5 - 1e-12..=2.0 + 1e-12).contains(&det));
            let p = model.first_pk_stress(&f).unwrap();
            let fd = fd_gradient(&model, &f, 1e-6);
            let mut diff = p.clone();
            diff.axpy(-1.0, &fd);
            let rel = diff.max_abs() / p.max_abs();
            assert!(rel < 1e-5, "{:?} d={d} rel={rel:e}", model.kind);
        }
    }
}

#[test]
fn rest_state_is_stress_free() {
    for model in models() {
        for d in 1..=3 {
            let i = MatN::identity(d);
            assert_eq!(model.energy_density(&i).unwrap(), 0.0);
            assert!(model.first_pk_stress(&i).unwrap().as_slice().iter().all(|&x| x == 0.0));
        }
    }
}

#[test]
fn cauchy_closed_form_matches_pk1_push_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let model = &models()[0];
    for k in 0..100 {
        let d = 1 + k % 3;
        let f = random_f(&mut rng, d);
        let p = model.first_pk_stress(&f).unwrap();
        let pushed = p.matmul(&f.transpose()).scaled(1.0 / f.determinant());
        let sigma = model.cauchy_stress(&f).unwrap();
        for (a, b) in sigma.as_slice().iter().zip(pushed.as_slice()) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
}

#[test]
fn stress_conversion_cycles_close() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let model = &models()[0];
    for k in 0..30 {
        let d = 1 + k % 3;
        let f = random_f(&mut rng, d);
        let sigma = model.cauchy_stress(&f).unwrap();
        for from in StressMeasure::ALL {
            let start = stress_convert(StressMeasure::Cauchy, from, &sigma, &f).unwrap();
            for to in StressMeasure::ALL {
                let there = stress_convert(from, to, &start, &f).unwrap();
                let back = stress_convert(to, from, &there, &f).unwrap();
                for (a, b) in back.as_slice().iter().zip(start.as_slice()) {
                    assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "{from:?}->{to:?}");
                }
            }
        }
    }
}

#[test]
fn singular_deformation_is_rejected() {
    let model = &models()[0];
    let f = MatN::from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]);
    assert!(model.first_pk_stress(&f).is_err());
    assert!(model.energy_density(&f).is_err());
}

fn rotation2(theta: f64) -> MatN<f64> {
    let (s, c) = theta.sin_cos();
    MatN::from_rows(&[&[c, -s], &[s, c]])
}

proptest! {
    #[test]
    fn neo_hookean_is_frame_indifferent(
        theta in -3.0f64..3.0,
        a in 0.7f64..1.4, b in -0.3f64..0.3, c in -0.3f64..0.3, e in 0.7f64..1.4,
    ) {
        let model = &models()[0];
        let f = MatN::from_rows(&[&[a, b], &[c, e]]);
        prop_assume!(f.determinant() > 0.2);
        let r = rotation2(theta);
        let rf = r.matmul(&f);
        assert_relative_eq!(
            model.energy_density(&rf).unwrap(),
            model.energy_density(&f).unwrap(),
            epsilon = 1e-12,
            max_relative = 1e-12
        );
        let p_rot = model.first_pk_stress(&rf).unwrap();
        let rp = r.matmul(&model.first_pk_stress(&f).unwrap());
        for (x, y) in p_rot.as_slice().iter().zip(rp.as_slice()) {
            prop_assert!((x - y).abs() < 1e-11);
        }
    }

    #[test]
    fn kirchhoff_is_symmetric(a in 0.7f64..1.4, b in -0.3f64..0.3, c in -0.3f64..0.3, e in 0.7f64..1.4) {
        let model = &models()[0];
        let f = MatN::from_rows(&[&[a, b], &[c, e]]);
        prop_assume!(f.determinant() > 0.2);
        let tau = model.kirchhoff_stress(&f).unwrap();
        prop_assert!(tau.asymmetry() < 1e-12);
    }
}

#[test]
fn lame_parameters_hand_values() {
    let p = lame_from_elastic(10.0, 0.25).unwrap();
    assert_relative_eq!(p.mu, 4.0, max_relative = 1e-15);
    assert_relative_eq!(p.lambda, 4.0, max_relative = 1e-15);
    assert!(lame_from_elastic(1.0, 0.5).is_err());
    assert!(lame_from_elastic(-1.0, 0.2).is_err());
}
