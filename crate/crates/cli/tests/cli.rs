use std::path::Path;
use std::process::Command;

use tlse_cli::output::read_table;

const BIN: &str = env!("CARGO_BIN_EXE_tlse");

fn run(config: &Path, out: &Path, extra: &[&str]) {
    let status = Command::new(BIN)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .status()
        .unwrap();
    assert!(status.success());
}

const RATE: &str = r#"
[system]
n_particles = 4
dim = 1
n_samples = 64
positions = { law = "iid_uniform" }
noise = { law = "gaussian", sigma = 0.1 }
seed = 21

[kernel]
kind = "series"
decay = 1.75
modes = 30

[basis]
family = "poly"
n = 6

[experiment]
name = "rate_sweep"
m_list = [64, 128, 256, 512]
replicates = 6
"#;

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("rate.toml");
    std::fs::write(&cfg, RATE).unwrap();
    let (one, four) = (dir.path().join("one"), dir.path().join("four"));
    run(&cfg, &one, &["--threads", "1"]);
    run(&cfg, &four, &["--threads", "4"]);
    for name in ["rate_sweep.csv", "rate_sweep.svg", "rate_fit.json"] {
        let a = std::fs::read(one.join(name)).unwrap();
        let b = std::fs::read(four.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs");
    }
    let text = std::fs::read_to_string(one.join("rate_sweep.csv")).unwrap();
    assert!(text.starts_with("#manifest,config_hash="));
    assert!(text.lines().next().unwrap().contains("seed=21"));
    let (header, rows) = read_table(&one.join("rate_sweep.csv")).unwrap();
    assert_eq!(header, ["M", "n", "mean_risk", "std_error", "replicates", "failed"]);
    assert_eq!(rows.len(), 4);
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("rate.toml");
    std::fs::write(&cfg, RATE).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(&cfg, &a, &[]);
    run(&cfg, &b, &["--seed", "22"]);
    let ta = std::fs::read_to_string(a.join("rate_sweep.csv")).unwrap();
    let tb = std::fs::read_to_string(b.join("rate_sweep.csv")).unwrap();
    assert!(tb.lines().next().unwrap().contains("seed=22"));
    assert_ne!(ta.lines().nth(2), tb.lines().nth(2));
}

#[test]
fn unknown_keys_fail_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, RATE.replace("replicates = 6", "replicates = 6\nreplicats = 7")).unwrap();
    let status = Command::new(BIN).arg("--config").arg(&cfg).arg("--out").arg(dir.path()).status().unwrap();
    assert!(!status.success());
}

fn simulate_then_estimate(dir: &Path, system: &str, basis: &str, density: &str) -> serde_json::Value {
    let data = dir.join("data.ikds");
    let sim = format!(
        "{system}\n[kernel]\nkind = \"power\"\nexponent = 1.0\n\n{basis}\n[experiment]\nname = \"simulate\"\ndataset = {:?}\n{density}",
        data.display().to_string()
    );
    let est = sim.replace("name = \"simulate\"", "name = \"estimate\"");
    std::fs::write(dir.join("sim.toml"), sim).unwrap();
    std::fs::write(dir.join("est.toml"), est).unwrap();
    run(&dir.join("sim.toml"), &dir.join("sim"), &[]);
    run(&dir.join("est.toml"), &dir.join("est"), &[]);
    let first = std::fs::read(dir.join("est/estimate.json")).unwrap();
    run(&dir.join("est.toml"), &dir.join("est2"), &["--threads", "3"]);
    assert_eq!(first, std::fs::read(dir.join("est2/estimate.json")).unwrap());
    serde_json::from_slice(&first).unwrap()
}

#[test]
fn simulate_and_estimate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let system = "[system]\nn_particles = 5\ndim = 1\nn_samples = 3000\npositions = { law = \"iid_uniform\" }\nnoise = { law = \"gaussian\", sigma = 0.05 }\nseed = 4\n";
    let basis = "[basis]\nfamily = \"poly\"\nn = 4\n";
    let json = simulate_then_estimate(dir.path(), system, basis, "");
    assert_eq!(json["gated"], false);
    assert_eq!(json["kind"]["estimator"], "tlse");
    assert!(json["manifest"]["config_hash"].as_str().unwrap().len() == 64);
    let dataset = tlse_core::io::read_dataset(&dir.path().join("data.ikds")).unwrap();
    assert_eq!(dataset.n_samples(), 3000);
    let system = tlse_core::io::read_normal_system(&dir.path().join("est/normal_system.csv")).unwrap();
    assert_eq!(system.n, 4);
}

#[test]
fn gated_estimate_is_reported() {
    // every particle in [0, 1/8]: the second Haar cell on [0, 1] is never hit
    let dir = tempfile::tempdir().unwrap();
    let density = dir.path().join("density.csv");
    std::fs::write(&density, "r,density\n0,2\n1,0\n").unwrap();
    let system = "[system]\nn_particles = 4\ndim = 1\nn_samples = 200\npositions = { law = \"conditional_iid_mixture\", components = [{ law = \"uniform\", lo = 0.0, hi = 0.125 }], weights = [1.0] }\nnoise = { law = \"gaussian\", sigma = 0.1 }\nseed = 8\n";
    let basis = "[basis]\nfamily = \"haar\"\nn = 2\ninterval = [0.0, 1.0]\n";
    let extra = format!("density = {{ model = \"tabulated\", path = {:?} }}\n", density.display().to_string());
    let json = simulate_then_estimate(dir.path(), system, basis, &extra);
    assert_eq!(json["gated"], true);
    assert!(json["lambda_min"].as_f64().unwrap().abs() <= 1e-12);
    assert!(json["coefficients"].as_array().unwrap().iter().all(|c| c.as_f64() == Some(0.0)));
}
