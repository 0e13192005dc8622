use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use collinear_nbody::action::{action_evaluate, graded_mesh, DiscretePath};
use collinear_nbody::integrator::IntegratorOptions;
use collinear_nbody::minimizer::{MinimizerResult, OptimizerOptions};
use collinear_nbody::solution::SolutionFile;
use collinear_nbody::SystemSpec;

const BIN: &str = env!("CARGO_BIN_EXE_collinear-nbody");

fn schubart_cfg() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/schubart.cfg")
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("NBODY_SEED")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("run.cfg");
    std::fs::write(&p, body).unwrap();
    p
}

fn solve_schubart(dir: &Path) -> PathBuf {
    let sol = dir.join("schubart.json");
    let out = run(&["solve", "--config", s(&schubart_cfg()), "--out", s(&sol)]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    sol
}

#[test]
fn solve_verify_integrate_round() {
    let dir = tempfile::tempdir().unwrap();
    let sol = solve_schubart(dir.path());
    assert!(dir.path().join("schubart.summary.txt").exists());

    let first = run(&["verify", "--solution", s(&sol)]);
    assert_eq!(code(&first), 0, "{}", stdout(&first));
    let report_path = sol.with_extension("report.json");
    let a = std::fs::read(&report_path).unwrap();
    let second = run(&["verify", "--solution", s(&sol)]);
    assert_eq!(code(&second), 0);
    assert_eq!(std::fs::read(&report_path).unwrap(), a);

    let out = run(&["integrate", "--solution", s(&sol), "--periods", "1"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(sol.with_extension("trajectory.report.json")).unwrap()).unwrap();
    let regularized = report["defect"].as_f64().unwrap();
    assert!(regularized < 1e-4);

    let csv = dir.path().join("bounce.csv");
    let out = run(&["integrate", "--solution", s(&sol), "--mode", "bounce", "--out", s(&csv)]);
    assert_eq!(code(&out), 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(csv.with_extension("report.json")).unwrap()).unwrap();
    assert!((report["defect"].as_f64().unwrap() - regularized).abs() < 1e-5);
    let header = std::fs::read_to_string(&csv).unwrap();
    assert!(header.starts_with("t,x_1,x_2,x_3,v_1,v_2,v_3\n"));

    let out = run(&["integrate", "--solution", s(&sol), "--periods", "3"]);
    assert_eq!(code(&out), 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(sol.with_extension("trajectory.report.json")).unwrap()).unwrap();
    let three = report["defect"].as_f64().unwrap();
    assert!(three < 1e-3 && three >= regularized, "{three}");

    let out = run(&["integrate", "--solution", s(&sol), "--periods", "1.5"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn corrupted_positions_fail_verification() {
    let dir = tempfile::tempdir().unwrap();
    let sol = solve_schubart(dir.path());
    let mut file = SolutionFile::load(&sol).unwrap();
    let k = file.cells / 3;
    file.positions[k][0] += 0.05;
    file.save(&sol).unwrap();
    let out = run(&["verify", "--solution", s(&sol)]);
    assert_eq!(code(&out), 1);
    let text = stdout(&out);
    assert!(text.contains("FAIL"), "{text}");
    assert!(text.lines().any(|l| l.starts_with("el_residual_supnorm") && l.contains("FAIL")));
}

#[test]
fn input_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[system]\nn = 3\nmasses = 1, 0, 1\nT = 1\n");
    let out = run(&["solve", "--config", s(&cfg)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("mass of body 1"));

    let out = run(&["verify", "--solution", s(&dir.path().join("missing.json"))]);
    assert_eq!(code(&out), 2);

    let sol = solve_schubart(dir.path());
    let text = std::fs::read_to_string(&sol)
        .unwrap()
        .replace("\"format_version\": 1", "\"format_version\": 2");
    std::fs::write(&sol, text).unwrap();
    let out = run(&["verify", "--solution", s(&sol)]);
    assert_eq!(code(&out), 2);

    let out = run(&["export", "--solution", s(&sol), "--format", "svg"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn export_shapes_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    let sol = solve_schubart(dir.path());
    let csv = dir.path().join("orbit.csv");
    assert_eq!(code(&run(&["export", "--solution", s(&sol), "--format", "csv", "--out", s(&csv)])), 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(text.lines().next().unwrap(), "t,x_1,x_2,x_3");
    assert_eq!(rows.len(), 257);
    assert!(rows.iter().all(|r| r.len() == 4));
    // pattern collisions at the endpoints
    assert_eq!(rows[0][2], rows[0][3]);
    assert_eq!(rows[256][1], rows[256][2]);

    let out = run(&["export", "--solution", s(&sol), "--format", "csv", "--velocities", "--out", s(&csv)]);
    assert_eq!(code(&out), 0);
    let header = std::fs::read_to_string(&csv).unwrap();
    assert!(header.starts_with("t,x_1,x_2,x_3,v_1,v_2,v_3\n"));

    let plot = dir.path().join("orbit.dat");
    assert_eq!(code(&run(&["export", "--solution", s(&sol), "--format", "plotdata", "--out", s(&plot)])), 0);
    let text = std::fs::read_to_string(&plot).unwrap();
    assert_eq!(text.matches("# body").count(), 3);
    assert_eq!(text.split("\n\n\n").count(), 3);
}

#[test]
fn relabeled_export_applies_sigma() {
    let dir = tempfile::tempdir().unwrap();
    let base = "[optimizer]\nmesh_schedule = 16, 32\nrestarts = 1\n[output]\nsolution = out.json\n";
    let sorted_cfg = write_config(dir.path(), &format!("[system]\nmasses = 2, 3, 1\nT = 1\n{base}"));
    assert_eq!(code(&run(&["solve", "--config", s(&sorted_cfg)])), 0);
    let sorted_csv = dir.path().join("sorted.csv");
    let sol = dir.path().join("out.json");
    assert_eq!(code(&run(&["export", "--solution", s(&sol), "--format", "csv", "--out", s(&sorted_csv)])), 0);

    let perm_cfg = write_config(dir.path(), &format!("[system]\nmasses = 1, 2, 3\nT = 1\nsigma = 2, 3, 1\n{base}"));
    assert_eq!(code(&run(&["solve", "--config", s(&perm_cfg)])), 0);
    let perm_csv = dir.path().join("perm.csv");
    assert_eq!(code(&run(&["export", "--solution", s(&sol), "--format", "csv", "--out", s(&perm_csv)])), 0);

    let parse = |p: &Path| -> Vec<Vec<String>> {
        std::fs::read_to_string(p)
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(str::to_string).collect())
            .collect()
    };
    let (a, b) = (parse(&sorted_csv), parse(&perm_csv));
    assert_eq!(a.len(), b.len());
    // body sigma(i) of the permuted run is body i of the sorted run
    let sigma = [2, 3, 1];
    for (ra, rb) in a.iter().zip(&b) {
        assert_eq!(ra[0], rb[0]);
        for (i, &img) in sigma.iter().enumerate() {
            assert_eq!(rb[img], ra[i + 1]);
        }
    }
}

#[test]
fn seed_override_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let c = dir.path().join("c.json");
    assert_eq!(code(&run(&["solve", "--config", s(&schubart_cfg()), "--out", s(&a)])), 0);
    assert_eq!(code(&run(&["solve", "--config", s(&schubart_cfg()), "--out", s(&b)])), 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(
        std::fs::read(a.with_extension("summary.txt")).unwrap(),
        std::fs::read(b.with_extension("summary.txt")).unwrap()
    );
    let out = Command::new(BIN)
        .args(["solve", "--config", s(&schubart_cfg()), "--out", s(&c)])
        .env("NBODY_SEED", "7")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    let file = SolutionFile::load(&c).unwrap();
    assert_eq!(file.optimizer.seed, 7);
    assert_eq!(file.convergence.restarts[1].seed, Some(8));
}

#[test]
fn sweep_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[system]\nmasses = 1, 1, 1\nT = 1\n[output]\nsolution = base.json\n",
    );
    let table = dir.path().join("sweep.csv");
    let out = run(&[
        "sweep", "--config", s(&cfg), "--mass-index", "2", "--range", "0.5:2", "--steps", "4", "--out", s(&table),
    ]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let text = std::fs::read_to_string(&table).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "mass,action,converged,checks_pass");
    assert_eq!(rows.len(), 5);
    assert!(rows[1..].iter().all(|r| r.ends_with("true,true")), "{text}");

    let out = run(&[
        "sweep", "--config", s(&cfg), "--mass-index", "2", "--range", "1:1", "--steps", "1", "--out", s(&table),
    ]);
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(&table).unwrap();
    let action: f64 = text.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(code(&run(&["solve", "--config", s(&cfg)])), 0);
    let solved = SolutionFile::load(&dir.path().join("base.json")).unwrap();
    assert_eq!(action, solved.action.total);

    let out = run(&["sweep", "--config", s(&cfg), "--mass-index", "4", "--range", "1:2", "--steps", "2"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn triple_collision_exits_4() {
    // homothetic collapse: outer bodies fall onto the resting middle one
    let spec = SystemSpec::new(vec![1.0; 3], 1.0).unwrap();
    let times = graded_mesh(16, 1.0).unwrap();
    let path = DiscretePath::from_fn(times, 3, |t| vec![-(1.5 - t), 0.0, 1.5 - t]);
    let action = action_evaluate(&path, &spec.masses).unwrap();
    let result = MinimizerResult {
        path,
        action,
        gradient_norm: 0.0,
        iterations: vec![0],
        converged: true,
        best_restart: 0,
        restarts: Vec::new(),
    };
    let file = SolutionFile::new(&spec, &OptimizerOptions::default(), &IntegratorOptions::default(), &result);
    let dir = tempfile::tempdir().unwrap();
    let sol = dir.path().join("collapse.json");
    file.save(&sol).unwrap();
    let out = run(&["integrate", "--solution", s(&sol)]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("t = "));
}
