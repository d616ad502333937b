use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mpm_parvi::config::{BoundaryKind, Proposal, SchemeKind, StorageChoice};
use mpm_parvi::interp::KernelKind;
use mpm_parvi::snapshot::{snapshot_header, telemetry_csv, Snapshot, SnapshotRow};
use mpm_parvi::target::{EvaluationSite, TargetSpec};
use mpm_parvi::{read_snapshot, write_snapshot, Error, Sampler, SimConfig, TelemetryRow};

#[test]
fn cfl_violation_quotes_recomputed_bound() {
    // 1-D defaults: h = 16/64, central-half init box of length 8 holding unit
    // mass, so ρ₀ = 1/8; E = 0.1, ν = 0 gives λ + 2μ = 0.1.
    let h = 16.0 / 64.0;
    let bound = 0.4 * h / (0.1f64 / 0.125).sqrt();
    let err = SimConfig::parse("[simulation]\ndt = 0.2\n").unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains(&format!("{bound:.6e}")), "{msg}");
    assert!(msg.contains("0.2"), "{msg}");
    assert_eq!(err.issues[0].line, Some(2));
    assert!(SimConfig::parse(&format!("[simulation]\ndt = {}\n", bound * 0.99)).is_ok());
}

#[test]
fn unknown_key_names_key_and_line() {
    let err = SimConfig::parse("[simulation]\ndt = 0.05\ntim_step = 3\n").unwrap_err();
    let text = err.to_string();
    assert!(text.contains("tim_step") && text.contains("line 3"), "{text}");
}

fn arb_config() -> impl Strategy<Value = SimConfig> {
    (
        (1usize..=3, 1usize..5000, 0.001f64..0.02, 0usize..10_000, 0usize..3, 0usize..3, 0.0f64..1.0),
        (0.0f64..1e-2, 0usize..100, any::<u64>(), any::<bool>(), any::<bool>(), 2usize..100),
        (0usize..2, 0usize..3, 0usize..2, 0usize..4, 0.05f64..5.0, 0.0f64..0.45, 0usize..50),
    )
        .prop_map(|(a, b, c)| {
            let mut cfg = SimConfig::default();
            let s = &mut cfg.simulation;
            s.dimension = a.0;
            s.particle_count = a.1;
            s.dt = a.2;
            s.max_iterations = a.3;
            s.kernel = [KernelKind::Linear, KernelKind::Quadratic, KernelKind::Cubic][a.4];
            s.scheme = [SchemeKind::Pic, SchemeKind::Apic, SchemeKind::FlipBlend][a.5];
            s.flip_alpha = a.6;
            s.score_alpha = b.0;
            s.score_alpha_ramp = b.1;
            s.seed = b.2;
            s.deterministic = b.3;
            s.stop_rule = b.4;
            s.stop_window = b.5;
            s.evaluation_site = [EvaluationSite::AtNodes, EvaluationSite::AtParticles][c.0];
            cfg.grid.storage = [StorageChoice::Auto, StorageChoice::Dense, StorageChoice::Sparse][c.1];
            cfg.grid.boundary = [BoundaryKind::Clamp, BoundaryKind::Free][c.2];
            cfg.target = match c.3 {
                0 => TargetSpec::StdGaussian,
                1 => TargetSpec::Donut { radius: 2.0, width: c.4 },
                2 => TargetSpec::Banana { scale: c.4, curvature: 0.3 },
                _ => {
                    let d = a.0;
                    let mut cov = vec![0.0; d * d];
                    (0..d).for_each(|i| cov[i * d + i] = c.4);
                    TargetSpec::GaussianMixture {
                        weights: vec![0.3, 0.7],
                        means: (0..2 * d).map(|i| i as f64 * 0.25 - 1.0).collect(),
                        covariances: [cov.clone(), cov].concat(),
                    }
                }
            };
            if matches!(cfg.target, TargetSpec::Banana { .. }) && a.0 < 2 {
                cfg.target = TargetSpec::StdGaussian;
            }
            cfg.material.youngs_modulus = c.4;
            cfg.material.poissons_ratio = c.5;
            cfg.init.proposal = if c.6 % 2 == 0 { Proposal::Uniform } else { Proposal::Gaussian };
            cfg.init.std = 0.5 + c.6 as f64 * 0.01;
            cfg.output.snapshot_every = c.6;
            cfg
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn config_print_parse_round_trip(cfg in arb_config()) {
        prop_assume!(cfg.validate().is_ok());
        let parsed = SimConfig::parse(&cfg.to_text());
        prop_assert_eq!(parsed.unwrap(), cfg);
    }
}

#[test]
fn snapshot_header_is_fixed() {
    assert_eq!(snapshot_header(1), "iteration,particle_id,x_0,v_0,det_F,log_density");
    assert_eq!(
        snapshot_header(3),
        "iteration,particle_id,x_0,x_1,x_2,v_0,v_1,v_2,det_F,log_density"
    );
}

fn random_snapshot(rng: &mut impl Rng, d: usize, m: usize) -> Snapshot {
    let value = |rng: &mut ChaCha8Rng| {
        let mantissa: f64 = rng.random_range(-1.0..1.0);
        mantissa * 10f64.powi(rng.random_range(-310..300))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(rng.random());
    Snapshot {
        iteration: 42,
        dimension: d,
        rows: (0..m)
            .map(|id| SnapshotRow {
                particle_id: id,
                position: (0..d).map(|_| value(&mut rng)).collect(),
                velocity: (0..d).map(|_| value(&mut rng)).collect(),
                det_f: value(&mut rng),
                log_density: value(&mut rng),
            })
            .collect(),
    }
}

#[test]
fn snapshot_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for d in 1..=4 {
        let snap = random_snapshot(&mut rng, d, 200);
        let path = dir.path().join(format!("s{d}.csv"));
        write_snapshot(&snap, &path).unwrap();
        let back = read_snapshot(&path).unwrap();
        assert_eq!(back.iteration, 42);
        for (a, b) in snap.rows.iter().zip(&back.rows) {
            let bits = |r: &SnapshotRow| {
                r.position
                    .iter()
                    .chain(&r.velocity)
                    .chain([&r.det_f, &r.log_density])
                    .map(|x| x.to_bits())
                    .collect::<Vec<_>>()
            };
            assert_eq!(bits(a), bits(b));
            assert_eq!(a.particle_id, b.particle_id);
        }
    }
}

#[test]
fn three_dimensional_snapshot_layout() {
    let mut c = SimConfig::default();
    c.simulation.dimension = 3;
    c.simulation.particle_count = 10;
    c.simulation.dt = 0.01;
    c.grid.nodes_per_dim = 17;
    let sampler = Sampler::new(&c).unwrap();
    let text = Snapshot::from_sampler(&sampler).to_csv();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 11);
    assert!(lines.iter().all(|l| l.split(',').count() == 10));
    assert!(lines[1..].iter().enumerate().all(|(i, l)| l.starts_with(&format!("0,{i},"))));
}

#[test]
fn malformed_snapshot_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "iteration,particle_id,x_0,v_0,det_F,log_density\n0,0,abc,0,1,0\n").unwrap();
    let err = read_snapshot(&path).unwrap_err();
    assert!(matches!(err, Error::Format { .. }));
    assert_eq!(err.exit_code(), 1);
    let missing = read_snapshot(dir.path().join("missing.csv")).unwrap_err();
    assert_eq!(missing.exit_code(), 2);
}

#[test]
fn telemetry_redaction() {
    let rows = [TelemetryRow {
        iteration: 3,
        mean_log_density: -1.25,
        kinetic_energy: 1e-9,
        f_reset_count: 2,
        wall_ms: 4.5,
    }];
    assert_eq!(
        telemetry_csv(&rows, true),
        "iteration,mean_log_density,kinetic_energy,f_reset_count,wall_ms\n3,-1.25,1e-9,2,0\n"
    );
    assert!(telemetry_csv(&rows, false).ends_with(",4.5\n"));
}
