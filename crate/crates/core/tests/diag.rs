use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use mpm_parvi::diag::{histogram, kde_1d, median_heuristic, mmd_rbf, moments, sample_stats, MmdEstimator};

fn col(v: &[f64]) -> Vec<Vec<f64>> {
    v.iter().map(|&x| vec![x]).collect()
}

fn normals(rng: &mut impl Rng, n: usize, d: usize, shift: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal) + shift).collect())
        .collect()
}

#[test]
fn moments_hand_example() {
    let (m, c) = moments(&[vec![1.0, 2.0], vec![3.0, 6.0], vec![5.0, 4.0]]).unwrap();
    assert_eq!(m, vec![3.0, 4.0]);
    assert_eq!(c, vec![vec![4.0, 2.0], vec![2.0, 4.0]]);
}

#[test]
fn histogram_counts_sum_to_sample_size() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for n in [1, 2, 17, 1000] {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let h = histogram(&v, 32).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), n);
        assert_eq!(h.edges.len(), 33);
    }
}

#[test]
fn kde_integrates_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for n in [2, 10, 500, 5000] {
        let v: Vec<f64> = (0..n)
            .map(|i| rng.sample::<f64, _>(StandardNormal) + if i % 2 == 0 { -3.0 } else { 3.0 })
            .collect();
        let k = kde_1d(&v, None, None).unwrap();
        assert_eq!(k.grid.len(), 256);
        assert!((k.integral() - 1.0).abs() < 1e-3, "n={n}: {}", k.integral());
    }
}

#[test]
fn silverman_bandwidth_hand_value() {
    // sample std of {-1, 0, 1} is 1
    let k = kde_1d(&[-1.0, 0.0, 1.0], None, None).unwrap();
    assert!((k.bandwidth - 1.06 * 3f64.powf(-0.2)).abs() < 1e-15);
}

#[test]
fn mmd_small_hand_values() {
    let a = col(&[0.0, 1.0]);
    let b = col(&[0.0, 2.0]);
    assert_eq!(median_heuristic(&a, &b), 1.0);
    let e = |x: f64| x.exp();
    let u = mmd_rbf(&a, &b, Some(1.0), MmdEstimator::Unbiased).unwrap();
    assert!((u.mmd2_raw - (e(-2.0) - 1.0) / 2.0).abs() < 1e-15);
    assert_eq!(u.mmd, 0.0);
    let v = mmd_rbf(&a, &b, Some(1.0), MmdEstimator::Biased).unwrap();
    assert!((v.mmd2_raw - (1.0 - e(-0.5)) / 2.0).abs() < 1e-15);
    assert!((v.mmd - v.mmd2_raw.sqrt()).abs() < 1e-15);
}

#[test]
fn mmd_is_symmetric_and_permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let a = normals(&mut rng, 300, 2, 0.0);
    let b = normals(&mut rng, 250, 2, 0.5);
    let ab = mmd_rbf(&a, &b, None, MmdEstimator::Unbiased).unwrap();
    let ba = mmd_rbf(&b, &a, None, MmdEstimator::Unbiased).unwrap();
    assert_eq!(ab, ba);
    let mut a2 = a.clone();
    a2.shuffle(&mut rng);
    let mut b2 = b.clone();
    b2.shuffle(&mut rng);
    assert_eq!(ab, mmd_rbf(&a2, &b2, None, MmdEstimator::Unbiased).unwrap());
    assert_eq!(sample_stats(&a, Some(&b)).unwrap(), sample_stats(&a2, Some(&b2)).unwrap());
}

#[test]
fn mmd_separates_shifted_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let a = normals(&mut rng, 400, 1, 0.0);
    let same = normals(&mut rng, 400, 1, 0.0);
    let shifted = normals(&mut rng, 400, 1, 1.5);
    let near = mmd_rbf(&a, &same, None, MmdEstimator::Unbiased).unwrap();
    let far = mmd_rbf(&a, &shifted, None, MmdEstimator::Unbiased).unwrap();
    assert!(near.mmd < 0.1, "{near:?}");
    assert!(far.mmd > 0.4, "{far:?}");
}

#[test]
fn identical_sets_have_zero_biased_mmd() {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let a = normals(&mut rng, 100, 3, 0.0);
    assert_eq!(mmd_rbf(&a, &a, None, MmdEstimator::Biased).unwrap().mmd2_raw, 0.0);
}

#[test]
fn degenerate_inputs_are_errors() {
    assert!(moments(&col(&[1.0])).is_err());
    assert!(kde_1d(&[2.0, 2.0], None, None).is_err());
    assert!(mmd_rbf(&col(&[1.0]), &col(&[1.0, 2.0]), None, MmdEstimator::Unbiased).is_err());
    assert!(mmd_rbf(&[], &col(&[1.0]), None, MmdEstimator::Biased).is_err());
}
