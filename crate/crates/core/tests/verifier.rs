use collinear_nbody::gamma::MirrorMap;
use collinear_nbody::integrator::{periodicity_check, IntegratorOptions};
use collinear_nbody::minimizer::{minimize, OptimizerOptions};
use collinear_nbody::model::total_mass_and_momentum;
use collinear_nbody::verifier::*;
use collinear_nbody::SystemSpec;

fn quick(schedule: Vec<usize>) -> OptimizerOptions {
    OptimizerOptions {
        mesh_schedule: schedule,
        restarts: 1,
        ..Default::default()
    }
}

fn no_integration() -> VerifierOptions {
    VerifierOptions {
        integrate: false,
        ..Default::default()
    }
}

#[test]
fn boundary_patterns_of_minimizers() {
    let five = SystemSpec::new(vec![1.0, 2.0, 3.0, 4.0, 5.0], 1.0).unwrap();
    let path = minimize(&five, &quick(vec![32])).unwrap().path;
    let start = path.node(0);
    assert_eq!(start[1], start[2]);
    assert_eq!(start[3], start[4]);
    assert!(start[1] - start[0] > 1e-3);
    let records = verify_boundary(&path, 1e-10, 1e-3).unwrap();
    assert!(records.iter().all(|r| r.pass));
    assert_eq!(records[0].margin, 0.0);

    let four = SystemSpec::new(vec![1.0, 2.0, 3.0, 4.0], 1.0).unwrap();
    let path = minimize(&four, &quick(vec![32])).unwrap().path;
    let end = path.node(path.cells());
    assert_eq!(end[0], end[1]);
    assert_eq!(end[2], end[3]);
    assert!(verify_boundary(&path, 1e-10, 1e-3).unwrap().iter().all(|r| r.pass));
}

#[test]
fn truncated_mesh_fails_only_the_residual() {
    let spec = SystemSpec::new(vec![1.0; 3], 1.0).unwrap();
    let path = minimize(&spec, &quick(vec![8])).unwrap().path;
    let report = full_report(&path, &spec, &no_integration());
    assert!(!report.pass);
    assert!(!report.check("el_residual_supnorm").unwrap().pass);
    for name in ["monotonicity", "boundary_pattern", "boundary_separation", "zero_momentum"] {
        assert!(report.check(name).unwrap().pass, "{name}");
    }
    // too coarse for endpoint extrapolation
    let limits = report.check("endpoint_velocities").unwrap();
    assert!(!limits.pass && limits.detail.as_deref().unwrap().contains("too coarse"));
}

#[test]
fn endpoint_limits_of_even_and_odd_minimizers() {
    for masses in [vec![1.0; 3], vec![1.0, 2.0, 3.0, 4.0]] {
        let spec = SystemSpec::new(masses, 1.0).unwrap();
        let path = minimize(&spec, &quick(vec![32, 64, 128])).unwrap().path;
        let r = verify_velocity_limits(&path, &spec, 1e-3).unwrap();
        assert!(r.pass, "{r:?}");
    }
}

#[test]
fn mirror_masses_give_emergent_symmetry() {
    let spec = SystemSpec::new(vec![1.0, 2.0, 1.0], 1.0).unwrap();
    let path = minimize(&spec, &quick(vec![32, 64, 128, 256])).unwrap().path;
    assert!(euler_defect(&path) < 1e-6, "{}", euler_defect(&path));
    assert!(symmetry_defect(&path) < 1e-6);
    assert!(verify_euler_quarter(&path, 1e-6).unwrap().pass);
}

#[test]
fn mirror_image_passes_monotonicity() {
    let spec = SystemSpec::new(vec![1.0, 2.0, 2.0, 1.0], 1.0).unwrap();
    let path = minimize(&spec, &quick(vec![32, 64])).unwrap().path;
    assert!(verify_monotonicity(&path, 1e-10).pass);
    let image = MirrorMap::new(4, path.cells()).apply(&path);
    assert!(verify_monotonicity(&image, 1e-10).pass);
}

#[test]
fn integrated_trajectory_keeps_zero_momentum() {
    let spec = SystemSpec::new(vec![1.0, 2.0, 3.0], 1.0).unwrap();
    let masses = spec.sorted_masses();
    let path = minimize(&spec, &quick(vec![32, 64, 128])).unwrap().path;
    let rep = periodicity_check(&path, &masses, &IntegratorOptions::default()).unwrap();
    let worst = rep
        .trajectory
        .samples
        .iter()
        .map(|s| {
            let (m0, p) = total_mass_and_momentum(s, &masses);
            (p / m0).abs()
        })
        .fold(0.0, f64::max);
    assert!(worst < 1e-10, "{worst}");
}

#[test]
fn reports_are_deterministic_and_serializable() {
    let spec = SystemSpec::new(vec![1.0; 3], 1.0).unwrap().with_symmetric_mode(true).unwrap();
    let path = minimize(&spec, &quick(vec![32, 64])).unwrap().path;
    let a = full_report(&path, &spec, &VerifierOptions::default());
    let b = full_report(&path, &spec, &VerifierOptions::default());
    assert_eq!(a, b);
    let json = serde_json::to_string(&a).unwrap();
    let back: VerificationReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, a);
    assert!(a.check("symmetry_g").unwrap().pass);
    assert!(a.check("euler_config_quarter").unwrap().pass);
}
