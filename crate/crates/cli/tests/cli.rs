use std::path::Path;
use std::process::Command;

const PLAN: &str = r#"
seed = 11
trials = 3
thresholds = 64

[system]
devices = 8
active = 2
antennas = 4
seq_len = 4
scatterers = 2

[solver]
max_sweeps = 15

[sweep]
variable = "L"
values = [3, 5]
"#;

fn nfad(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_nfad")).args(args).output().expect("binary runs")
}

fn write_plan(dir: &Path) -> String {
    let p = dir.join("plan.toml");
    std::fs::write(&p, PLAN).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write_plan(dir.path());
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        let o = nfad(&["simulate", &plan, "--seed", "5", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (a, b) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    assert_eq!(a, b);
    assert!(String::from_utf8(a).unwrap().starts_with("variable,value,metric,metric_value\n"));
}

#[test]
fn seed_flag_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write_plan(dir.path());
    let a = nfad(&["simulate", &plan, "--seed", "1", "--trials", "2"]);
    let b = nfad(&["simulate", &plan, "--seed", "2", "--trials", "2"]);
    assert!(a.status.success() && b.status.success());
    assert_ne!(a.stdout, b.stdout);
}

#[test]
fn trace_and_convergence_and_analyze_run() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write_plan(dir.path());
    let t = nfad(&["trace", &plan, "--trial", "1"]);
    assert!(t.status.success());
    assert!(String::from_utf8_lossy(&t.stdout).starts_with("sweep,objective,v_norm,elapsed_s"));
    let c = nfad(&["convergence", &plan, "--trials", "2", "--scatterers", "1,2"]);
    assert!(c.status.success());
    assert_eq!(String::from_utf8_lossy(&c.stdout).lines().count(), 3);
    let a = nfad(&["analyze", &plan, "--trials", "5", "--pairs", "20"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let text = String::from_utf8_lossy(&a.stdout);
    assert!(text.contains("violations,0"));
    assert!(text.contains("oracle_disagreements,0"));
}

#[test]
fn bad_plans_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "trials = 0\n").unwrap();
    assert!(!nfad(&["simulate", p.to_str().unwrap()]).status.success());
    assert!(!nfad(&["trace", "--trials", "1", "--trial", "4"]).status.success());
}

#[test]
fn shipped_plans_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../plans");
    let mut count = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        nfad::harness::ExperimentPlan::from_toml(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        count += 1;
    }
    assert!(count >= 5);
}
