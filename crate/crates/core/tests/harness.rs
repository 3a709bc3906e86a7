use std::path::Path;

use twinmap::harness::{mae, run_experiment, ExperimentConfig, Scheme, Twin};
use twinmap::prior::GpPrior;
use twinmap::select::read_plan_indices;
use twinmap::stats::QuantileDataset;

const SCENE: &str = r#"{
  "ap_position": [17.0, 17.0, 10.0],
  "obstacles": [
    {"footprint": [[2.5, 2.5], [7.5, 2.5], [7.5, 12.5], [2.5, 12.5]], "height": 5.0, "nominal_permittivity": 5.0},
    {"footprint": [[22.5, 17.5], [27.5, 17.5], [27.5, 27.5], [22.5, 27.5]], "height": 8.0, "nominal_permittivity": 7.0}
  ],
  "grid": {"origin": [0.0, 0.0], "extent": [30.0, 30.0], "spacing": 5.0, "height": 1.5},
  "rf": {"carrier_hz": 6.0e9, "bandwidth_hz": 2.0e7, "subcarrier_spacing_hz": 2.0e5}
}"#;

fn small_config(dir: &Path) -> ExperimentConfig {
    let scene = dir.join("scene.json");
    std::fs::write(&scene, SCENE).unwrap();
    let mut cfg = ExperimentConfig::with_scene(scene);
    cfg.ensemble_size = 12;
    cfg.budgets = vec![0, 3, 6];
    cfg.seeds = vec![0, 1, 2];
    cfg.output_dir = dir.join("out");
    cfg
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn zero_budget_scores_the_prior_mean() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.schemes = vec![Scheme::Proposed];
    let out = run_experiment(&cfg).unwrap();

    let twin = Twin::load(&cfg.scene, None).unwrap();
    let draws: Vec<QuantileDataset> = (0..cfg.ensemble_size as u64)
        .map(|k| twin.dataset(cfg.prior_seed_base + k, cfg.pos_bound, cfg.max_order, cfg.epsilon).unwrap())
        .collect();
    let m = twin.grid.len();
    let mean: Vec<f64> = (0..m).map(|i| draws.iter().map(|d| d.values[i]).sum::<f64>() / draws.len() as f64).collect();

    for r in out.records.iter().filter(|r| r.budget == 0) {
        let truth = twin.dataset(r.seed, cfg.pos_bound, cfg.max_order, cfg.epsilon).unwrap();
        assert!((r.mae - mae(&mean, &truth.values)).abs() < 1e-12, "seed {}", r.seed);
    }
}

#[test]
fn full_noiseless_budget_recovers_the_truth() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    let twin = Twin::load(&cfg.scene, None).unwrap();
    cfg.schemes = vec![Scheme::Proposed];
    cfg.noise_variance = 0.0;
    cfg.budgets = vec![twin.grid.len()];
    cfg.seeds = vec![0];
    let out = run_experiment(&cfg).unwrap();
    assert!(out.records[0].mae < 1e-8, "mae {}", out.records[0].mae);
}

#[test]
fn records_do_not_depend_on_other_seeds_or_schemes() {
    let dir = tempfile::tempdir().unwrap();
    let full = run_experiment(&small_config(dir.path())).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.seeds = vec![1];
    cfg.schemes = vec![Scheme::Uninformed];
    let single = run_experiment(&cfg).unwrap();

    for r in &single.records {
        let twin = full
            .records
            .iter()
            .find(|f| f.scheme == r.scheme && f.budget == r.budget && f.seed == r.seed)
            .unwrap();
        assert_eq!(twin.mae, r.mae);
        assert_eq!(twin.meta_probability, r.meta_probability);
        assert_eq!(twin.normalized_rates, r.normalized_rates);
    }
}

#[test]
fn writes_the_documented_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = run_experiment(&cfg).unwrap();
    let o = &cfg.output_dir;

    assert_eq!(header(&o.join("mae.csv")), "scheme,budget,seed,mae,meta_probability,anomalies");
    let rows = std::fs::read_to_string(o.join("mae.csv")).unwrap().lines().count() - 1;
    assert_eq!(rows, 3 * 3 * 3);
    for b in [0, 3, 6] {
        assert_eq!(header(&o.join(format!("rate_cdf_{b}.csv"))), "scheme,value,cdf");
        for s in ["proposed", "uninformed", "stationary_dt"] {
            assert_eq!(
                header(&o.join(format!("posterior_{s}_{b}.csv"))),
                "index,x,y,mean,variance,observed_flag"
            );
        }
    }
    for s in [Scheme::Proposed, Scheme::Uninformed, Scheme::StationaryDt] {
        let path = o.join(format!("plan_{s}.csv"));
        assert_eq!(header(&path), "step,index,x,y,gain");
        assert_eq!(read_plan_indices(&path).unwrap(), out.plans[&s].chosen);
    }

    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(o.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest.is_object());

    let (prior, points) = GpPrior::<f64>::read_cache(o.join("prior")).unwrap();
    assert_eq!(prior.len(), out.locations);
    assert_eq!(points.len(), out.locations);
}

#[test]
fn rejects_invalid_configs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.seeds = vec![cfg.prior_seed_base];
    assert!(run_experiment(&cfg).is_err());

    let mut cfg = small_config(dir.path());
    cfg.delta = 1.0;
    assert!(run_experiment(&cfg).is_err());
}
