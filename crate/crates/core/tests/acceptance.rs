//! Acceptance suite. Runs every criterion, prints one line per criterion and
//! fails if any criterion fails.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use collinear_nbody::action::{action_evaluate, action_gradient, el_residual_norm, graded_mesh, DiscretePath};
use collinear_nbody::cli::cmd_solve;
use collinear_nbody::gamma::AdmissibleSpace;
use collinear_nbody::integrator::{integrate, periodicity_check, CollisionMode, IntegratorOptions};
use collinear_nbody::minimizer::{minimize, solve_symmetric, OptimizerOptions};
use collinear_nbody::model::energy;
use collinear_nbody::verifier::{full_report, symmetry_defect, VerifierOptions};
use collinear_nbody::{Permutation, PhaseState, SystemSpec};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, limit: f64) -> bool {
    elapsed.as_secs_f64() < limit
}

fn spec(masses: &[f64], half_period: f64) -> SystemSpec {
    SystemSpec::new(masses.to_vec(), half_period).unwrap()
}

/// Relative sup-norm error of the analytic gradient against central
/// differences on interior nodes. Steps scale with the nearest gap so that
/// no perturbation comes close to reordering bodies.
fn gradient_error(path: &DiscretePath, masses: &[f64]) -> f64 {
    let g = action_gradient(path, masses).unwrap();
    let n = path.n();
    let mut worst_diff: f64 = 0.0;
    let mut worst_g: f64 = 0.0;
    for idx in n..path.positions().len() - n {
        let (k, i) = (idx / n, idx % n);
        let row = path.node(k);
        let left = if i > 0 { row[i] - row[i - 1] } else { f64::INFINITY };
        let right = if i + 1 < n { row[i + 1] - row[i] } else { f64::INFINITY };
        let h = 1e-4 * left.min(right).min(path.extent());
        let mut p = path.clone();
        p.positions_mut()[idx] += h;
        let up = action_evaluate(&p, masses).unwrap().total;
        p.positions_mut()[idx] -= 2.0 * h;
        let down = action_evaluate(&p, masses).unwrap().total;
        let fd = (up - down) / (2.0 * h);
        worst_diff = worst_diff.max((fd - g[idx]).abs());
        worst_g = worst_g.max(g[idx].abs());
    }
    worst_diff / worst_g
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let n = 3 + trial % 3;
        let masses: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..3.0)).collect();
        let space = AdmissibleSpace::from_sorted(masses.clone(), graded_mesh(64, 1.0).unwrap(), false).unwrap();
        let vars = space.initial_guess(Some(rng.gen())).0;
        let path = space.decode(&vars).unwrap();
        worst = worst.max(gradient_error(&path, &masses));
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-6 && within(elapsed, 10.0),
        format!("worst relative error {worst:.2e}, {:.2} s", elapsed.as_secs_f64()),
    )
}

fn criterion_2() -> Outcome {
    // parabolic ejection of two unit masses: r(t) = 9^{1/3} t^{2/3}
    let exact = 6.0 * 9f64.powf(-1.0 / 3.0);
    let times = graded_mesh(512, 1.0).unwrap();
    let path = DiscretePath::from_fn(times, 2, |t| {
        let r = 9f64.cbrt() * t.powf(2.0 / 3.0);
        vec![-0.5 * r, 0.5 * r]
    });
    let result = action_evaluate(&path, &[1.0, 1.0]);
    match result {
        Ok(a) => {
            let rel = (a.total / exact - 1.0).abs();
            outcome(rel < 1e-3, format!("A = {:.6}, exact {exact:.6}, relative error {rel:.2e}", a.total))
        }
        Err(e) => outcome(false, format!("evaluation failed: {e}")),
    }
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let s = spec(&[1.0, 1.0, 1.0], 1.0).with_symmetric_mode(true).unwrap();
    let result = solve_symmetric(&s, &OptimizerOptions::default()).unwrap();
    let report = full_report(&result.path, &s, &VerifierOptions::default());
    let names = [
        "monotonicity",
        "boundary_pattern",
        "boundary_separation",
        "endpoint_velocities",
        "zero_momentum",
    ];
    let failed: Vec<&str> = names
        .iter()
        .copied()
        .filter(|n| !report.check(n).is_some_and(|c| c.pass))
        .collect();
    let mid = result.path.node(result.path.cells() / 2);
    let (outer, middle) = ((mid[0] + mid[2]).abs(), mid[1].abs());
    let coarse_opts = OptimizerOptions {
        mesh_schedule: vec![32, 64, 128],
        ..Default::default()
    };
    let coarse = solve_symmetric(&s, &coarse_opts).unwrap();
    let masses = s.sorted_masses();
    let el_coarse = el_residual_norm(&coarse.path, &masses).unwrap();
    let el_fine = el_residual_norm(&result.path, &masses).unwrap();
    let ratio = el_coarse / el_fine;
    let elapsed = start.elapsed();
    let pass = result.converged
        && failed.is_empty()
        && outer < 1e-6
        && middle < 1e-6
        && (3.5..=4.5).contains(&ratio)
        && within(elapsed, 60.0);
    outcome(
        pass,
        format!(
            "converged {}, failed checks {:?}, |x1+x3| {outer:.1e}, |x2| {middle:.1e}, EL ratio 128->256 {ratio:.3}, {:.2} s",
            result.converged,
            failed,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    for masses in [vec![1.0, 2.0, 3.0, 4.0], vec![1.0, 2.0, 3.0, 4.0, 5.0]] {
        let s = spec(&masses, 1.0);
        let result = minimize(&s, &OptimizerOptions::default()).unwrap();
        let report = full_report(&result.path, &s, &VerifierOptions::default());
        let failed: Vec<String> = report.failures().map(|c| c.name.clone()).collect();
        pass &= result.converged && report.pass;
        parts.push(format!("n={} converged {} failed {:?}", masses.len(), result.converged, failed));
    }
    let elapsed = start.elapsed();
    pass &= within(elapsed, 300.0);
    outcome(pass, format!("{}, {:.2} s", parts.join("; "), elapsed.as_secs_f64()))
}

fn criterion_5() -> Outcome {
    let one = minimize(&spec(&[1.0; 3], 1.0), &OptimizerOptions::default()).unwrap();
    let two = minimize(&spec(&[1.0; 3], 2.0), &OptimizerOptions::default()).unwrap();
    let ratio = two.action.total / one.action.total;
    let expected = 2f64.cbrt();
    let err = (ratio - expected).abs();
    outcome(
        one.converged && two.converged && err < 1e-3,
        format!("A(2)/A(1) = {ratio:.8}, 2^(1/3) = {expected:.8}, error {err:.1e}"),
    )
}

fn criterion_6() -> Outcome {
    let opts = OptimizerOptions::default();
    let permuted = spec(&[1.0, 2.0, 3.0], 1.0)
        .with_sigma(Permutation::from_one_based(&[2, 3, 1]).unwrap())
        .unwrap();
    let relabeled = spec(&[2.0, 3.0, 1.0], 1.0);
    let a = minimize(&permuted, &opts).unwrap();
    let b = minimize(&relabeled, &opts).unwrap();
    let action = (a.action.total - b.action.total).abs();
    // rank i carries body sigma(i) in the first problem and body i in the
    // second; both sorted frames hold the same bodies in the same order
    let mut positions: f64 = 0.0;
    for k in 0..=a.path.cells() {
        for rank in 0..3 {
            let body_a = permuted.sigma.image(rank);
            let body_b = relabeled.sigma.image(rank);
            assert_eq!(permuted.masses[body_a], relabeled.masses[body_b]);
            positions = positions.max((a.path.position(k, rank) - b.path.position(k, rank)).abs());
        }
    }
    outcome(
        action < 1e-10 && positions < 1e-10,
        format!("action difference {action:.1e}, position difference {positions:.1e}"),
    )
}

fn criterion_7() -> Outcome {
    let opts = IntegratorOptions::default();
    let masses = [1.0, 2.0, 3.0];
    let free = PhaseState::new(0.0, vec![-3.0, 0.0, 3.5], vec![-0.4, 0.1, 0.2]);
    let free_run = integrate(&free, 1.0, &masses, &opts).unwrap();
    let e0 = energy(&free, &masses);
    let free_drift = free_run
        .samples
        .iter()
        .map(|s| (energy(s, &masses) - e0).abs())
        .fold(0.0, f64::max);
    let free_ok = free_run.events.is_empty() && free_drift < 1e-9;

    let masses = [1.0, 1.0, 1.0];
    let hit = PhaseState::new(0.0, vec![-2.0, 0.0, 1.0], vec![0.1, 0.5, -0.5]);
    let run = integrate(&hit, 1.0, &masses, &opts).unwrap();
    let e0 = energy(&hit, &masses);
    let end_drift = (energy(run.final_state(), &masses) - e0).abs();
    let (jump, s_match, alpha) = match run.events.as_slice() {
        [e] => (
            (e.energy_after - e.energy_before).abs().max(end_drift),
            e.before.s == e.after.s,
            (e.before.alpha - e.after.alpha).abs(),
        ),
        _ => (f64::INFINITY, false, f64::INFINITY),
    };
    let collision_ok = run.events.len() == 1 && jump < 1e-8 && s_match && alpha < 1e-8;
    outcome(
        free_ok && collision_ok,
        format!(
            "collision-free drift {free_drift:.1e}; {} collision(s), |dE| {jump:.1e}, s matches {s_match}, |da| {alpha:.1e}",
            run.events.len()
        ),
    )
}

fn criterion_8() -> Outcome {
    let s = spec(&[1.0; 3], 1.0);
    let result = minimize(&s, &OptimizerOptions::default()).unwrap();
    let masses = s.sorted_masses();
    let reg = IntegratorOptions::default();
    let bounce = IntegratorOptions {
        collision_mode: CollisionMode::Bounce,
        ..reg
    };
    let a = periodicity_check(&result.path, &masses, &reg).unwrap();
    let b = periodicity_check(&result.path, &masses, &bounce).unwrap();
    let mut agree: f64 = 0.0;
    for i in 0..3 {
        agree = agree.max((a.end.positions[i] - b.end.positions[i]).abs());
        agree = agree.max((a.end.velocities[i] - b.end.velocities[i]).abs());
    }
    let defects = (a.defect - b.defect).abs();
    outcome(
        result.path.cells() == 256 && a.defect < 1e-4 && agree < 1e-5 && defects < 1e-5,
        format!(
            "defect {:.2e} (bounce {:.2e}), end states differ by {agree:.1e}",
            a.defect, b.defect
        ),
    )
}

fn criterion_9() -> Outcome {
    let masses = [1.0, 2.0, 2.0, 1.0];
    let plain = spec(&masses, 1.0);
    let sym = plain.clone().with_symmetric_mode(true).unwrap();
    let opts = OptimizerOptions::default();
    let a = solve_symmetric(&sym, &opts).unwrap();
    let b = minimize(&plain, &opts).unwrap();
    let (da, db) = (symmetry_defect(&a.path), symmetry_defect(&b.path));
    outcome(
        a.converged && b.converged && da <= 1e-10 && db <= 1e-6,
        format!("symmetric solve {da:.1e}, plain solve {db:.1e}"),
    )
}

fn criterion_10() -> Outcome {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/schubart.cfg");
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("run{run}/solution.json"));
        let o = cmd_solve(&config, Some(&out)).unwrap();
        files.push((
            std::fs::read(&o.solution_path).unwrap(),
            std::fs::read(&o.summary_path).unwrap(),
        ));
    }
    let same = files[0] == files[1];
    outcome(
        same,
        format!("solution files of {} bytes identical: {same}", files[0].0.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient matches finite differences", criterion_1),
        ("ejection action quadrature", criterion_2),
        ("equal-mass three-body orbit", criterion_3),
        ("arbitrary masses, n = 4 and 5", criterion_4),
        ("scaling of the minimal action", criterion_5),
        ("permutation equivariance", criterion_6),
        ("integrator conservation", criterion_7),
        ("periodicity of the integrated orbit", criterion_8),
        ("mirror symmetry, n = 4", criterion_9),
        ("deterministic solve output", criterion_10),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        if !o.pass {
            failures += 1;
        }
        println!(
            "criterion {:>2} {} {name}: {} [{:.1} s]",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
