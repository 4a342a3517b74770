use tlse_cli::config::ExperimentConfig;
use tlse_cli::experiments::{run_lowerbound, run_rate_sweep, run_tail_sweep};
use tlse_cli::output::{read_table, Manifest, Sink};

fn sink(dir: &std::path::Path, cfg: &ExperimentConfig) -> Sink {
    Sink::new(dir, Manifest::new(cfg.hash(), cfg.system.seed)).unwrap()
}

const SYSTEM: &str = r#"
[system]
n_particles = 3
dim = 1
n_samples = 100
positions = { law = "iid_uniform" }
noise = { law = "none" }
seed = 5
"#;

#[test]
fn noiseless_truth_in_span_skips_the_fit() {
    let toml = format!(
        "{SYSTEM}\n[kernel]\nkind = \"expansion\"\ncoefficients = [0.5, -0.2, 0.1]\n\n[basis]\nfamily = \"poly\"\nn = 4\n\n[experiment]\nname = \"rate_sweep\"\nm_list = [200, 400, 800]\nreplicates = 3\nn = 4\n"
    );
    let cfg = ExperimentConfig::from_toml(&toml).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let r = run_rate_sweep(&cfg, &sink(dir.path(), &cfg)).unwrap();
    assert!(r.fit.is_none());
    assert!(r.notice.unwrap().contains("degenerate"));
    assert!(r.points.iter().all(|p| p.mean_risk < 1e-24 && p.failed == 0));
}

#[test]
fn reference_slopes() {
    for (beta, want) in [(1.0, -2.0 / 3.0), (2.0, -0.8)] {
        let toml = format!(
            "{}\n[kernel]\nkind = \"expansion\"\ncoefficients = [0.5]\n\n[basis]\nfamily = \"poly\"\nn = 2\n\n[experiment]\nname = \"rate_sweep\"\nm_list = [50, 100, 200]\nreplicates = 2\nbeta = {beta}\n",
            SYSTEM.replace("{ law = \"none\" }", "{ law = \"gaussian\", sigma = 0.1 }")
        );
        let cfg = ExperimentConfig::from_toml(&toml).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let r = run_rate_sweep(&cfg, &sink(dir.path(), &cfg)).unwrap();
        assert!((r.reference_slope - want).abs() < 1e-15);
        let svg = std::fs::read_to_string(dir.path().join("rate_sweep.svg")).unwrap();
        assert!(svg.contains("stroke-dasharray"));
    }
}

#[test]
fn tail_bound_columns_match_the_formula() {
    let toml = format!(
        "{SYSTEM}\n[basis]\nfamily = \"haar\"\nn = 2\n\n[experiment]\nname = \"tail_sweep\"\nn_list = [2]\nm_list = [100, 40000]\nepsilons = [0.9]\nreplicates = 100\nmc_samples = 2000\n"
    );
    let cfg = ExperimentConfig::from_toml(&toml).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let r = run_tail_sweep(&cfg, &sink(dir.path(), &cfg)).unwrap();
    let c = 2.0 / 9.0;
    for row in &r.rows {
        let n = row.n as f64;
        let nc2 = n * row.cmax * row.cmax;
        let e = row.epsilon;
        let direct = 2.0 * n
            * (-(row.m as f64 * e * e * c * c / 4.0) / (nc2 * nc2 + nc2 * e * c / 3.0)).exp();
        assert!((row.bernstein_raw - direct).abs() <= 1e-12 * direct.max(1.0));
        assert_eq!(row.bernstein_vacuous(), row.bernstein_raw >= 1.0);
        assert_eq!(row.freq.reps, 100);
    }
    assert!(r.rows[0].bernstein_vacuous());
    assert!(!r.rows[1].bernstein_vacuous());
    let (header, rows) = read_table(&dir.path().join("tail_sweep.csv")).unwrap();
    assert_eq!(&header[..9], ["n", "M", "epsilon", "threshold", "frequency", "ci_lo", "ci_hi", "bernstein_raw", "pacbayes_raw"]);
    assert_eq!(rows[0][11], "1");
    assert_eq!(rows[1][11], "0");
}

#[test]
fn lowerbound_writes_certified_sets() {
    let toml = format!(
        "{}\n[basis]\nfamily = \"haar\"\nn = 4\n\n[experiment]\nname = \"lowerbound\"\nkbar_list = [8]\nfano_replicates = 50\n",
        SYSTEM.replace("{ law = \"none\" }", "{ law = \"gaussian\", sigma = 0.1 }")
    );
    let cfg = ExperimentConfig::from_toml(&toml).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let r = run_lowerbound(&cfg, &sink(dir.path(), &cfg)).unwrap();
    let row = &r.rows[0];
    assert!(row.certified, "{:?}", row.failure);
    assert!(row.alpha < 0.125);
    assert!(row.error_rate.is_finite());
    assert!(dir.path().join("fano_K8.csv").exists());
    assert!(dir.path().join("hypotheses_K8.json").exists());
}
