//! End-to-end pipeline tests on simulated oscillator data: artifact
//! emission, row-count bookkeeping, cross-file consistency between
//! geometry.csv and years.csv, and failure modes.

use std::fs;
use std::path::Path;

use oscgeo::pipeline::{self, PipelineConfig};
use oscgeo::simulate::{observe, simulate_sde, write_price_csv, DriftSpec};
use oscgeo::yearstats;

/// Six synthetic years of daily data, enough for every statistics stage.
fn write_sim_csv(dir: &Path, n: usize, seed: u64) -> String {
    let drift = DriftSpec::damped_oscillator();
    let path = simulate_sde(&drift, 0.0, 0.05, (0.1, 0.0), 0.01, n, 4, seed).unwrap();
    let series = observe(&path, 0.001, seed + 1).unwrap();
    let mut buf = Vec::new();
    write_price_csv(&mut buf, series.values(), (1990, 1, 1), 100.0).unwrap();
    let csv = dir.join("sim.csv");
    fs::write(&csv, &buf).unwrap();
    csv.to_string_lossy().to_string()
}

fn fast_config(input: String, out_dir: String) -> PipelineConfig {
    PipelineConfig {
        input,
        out_dir,
        dt: 0.01,
        max_iter: 40,
        init_sigma1: 0.01,
        init_sigma2: 0.1,
        init_sigma_eps: 0.002,
        ..PipelineConfig::default()
    }
}

#[test]
fn pipeline_emits_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let n = 2200; // six synthetic years
    let input = write_sim_csv(dir.path(), n, 11);
    let out = dir.path().join("out");
    let config = fast_config(input, out.to_string_lossy().to_string());
    let output = pipeline::run_pipeline(&config).unwrap();

    for name in [
        "params.json",
        "geometry.csv",
        "years.csv",
        "pca.csv",
        "hotelling.csv",
        "anova.json",
    ] {
        assert!(out.join(name).exists(), "{name} missing");
    }
    let plots: Vec<_> = fs::read_dir(out.join("plots")).unwrap().collect();
    assert!(plots.len() >= 6, "expected per-year plot files");

    // row count: steps minus burn-in
    let steps = n - 1;
    let burn = ((steps as f64) * config.burn_in_fraction).floor() as usize;
    assert_eq!(output.rows.len(), steps - burn);
    let expect_approx = (n as f64) * (1.0 - config.burn_in_fraction);
    assert!((output.rows.len() as f64 - expect_approx).abs() <= 2.0);

    let geometry = fs::read_to_string(out.join("geometry.csv")).unwrap();
    assert_eq!(geometry.lines().count() - 1, output.rows.len());

    // params.json parses and carries finite values
    let params: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("params.json")).unwrap()).unwrap();
    assert!(params["sigma2"].as_f64().unwrap() > 0.0);
    assert!(params["log_likelihood"].as_f64().unwrap().is_finite());

    // anova.json has both sections with groups partitioning the years
    let anova: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("anova.json")).unwrap()).unwrap();
    for section in ["norm_v", "norm_nabla_v"] {
        let groups = anova[section]["groups"].as_array().unwrap();
        let total: usize = groups.iter().map(|g| g.as_array().unwrap().len()).sum();
        assert_eq!(total, output.years.len());
    }
}

#[test]
fn zero_burn_in_keeps_every_step() {
    let dir = tempfile::tempdir().unwrap();
    let n = 2200;
    let input = write_sim_csv(dir.path(), n, 12);
    let out = dir.path().join("out");
    let mut config = fast_config(input, out.to_string_lossy().to_string());
    config.burn_in_fraction = 0.0;
    let output = pipeline::run_pipeline(&config).unwrap();
    assert_eq!(output.rows.len(), n - 1);
}

#[test]
fn years_csv_matches_geometry_csv() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_sim_csv(dir.path(), 2200, 13);
    let out = dir.path().join("out");
    let config = fast_config(input, out.to_string_lossy().to_string());
    pipeline::run_pipeline(&config).unwrap();

    // parse geometry.csv back and regroup by year
    let geometry = fs::read_to_string(out.join("geometry.csv")).unwrap();
    let mut by_year: std::collections::BTreeMap<String, Vec<(f64, f64, f64)>> = Default::default();
    for line in geometry.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let year = fields[0][..4].to_string();
        let p: f64 = fields[1].parse().unwrap();
        let norm_v: f64 = fields[10].parse().unwrap();
        let norm_dv: f64 = fields[11].parse().unwrap();
        by_year.entry(year).or_default().push((p, norm_v, norm_dv));
    }

    let years = fs::read_to_string(out.join("years.csv")).unwrap();
    let mut checked = 0;
    for line in years.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let year = fields[0];
        let samples = &by_year[year];
        let recomputed = yearstats::summarize_year(samples, year).unwrap();
        let close = |text: &str, value: f64| {
            let parsed: f64 = text.parse().unwrap();
            let slack = 1e-3 * value.abs().max(1e-2);
            assert!(
                (parsed - value).abs() <= slack,
                "{year}: {text} vs {value}"
            );
        };
        assert_eq!(fields[1].parse::<usize>().unwrap(), recomputed.n);
        close(fields[2], recomputed.mean_p);
        close(fields[3], recomputed.sd_p);
        close(fields[4], recomputed.mean_v);
        close(fields[5], recomputed.sd_v);
        close(fields[6], recomputed.mean_dv);
        close(fields[7], recomputed.sd_dv);
        close(fields[8], recomputed.rho_p_v.unwrap());
        checked += 1;
    }
    assert!(checked >= 6, "expected at least six year rows");
}

#[test]
fn failure_modes_map_to_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");

    // missing input
    let config = fast_config(
        dir.path().join("missing.csv").to_string_lossy().to_string(),
        out.to_string_lossy().to_string(),
    );
    match pipeline::run_pipeline(&config) {
        Err(e) => assert_eq!(e.exit_code(), 2),
        Ok(_) => panic!("expected failure"),
    }

    // too few years for the statistics stages: data spans only ~6 months
    let input = write_sim_csv(dir.path(), 180, 14);
    let config = fast_config(input, out.to_string_lossy().to_string());
    match pipeline::run_pipeline(&config) {
        Err(e) => assert_eq!(e.exit_code(), 5, "got {e}"),
        Ok(_) => panic!("expected degenerate-statistics failure"),
    }
    // nothing may be left behind on failure
    assert!(!out.join("params.json").exists());
}

#[test]
fn simulate_dump_is_ingestible() {
    let dir = tempfile::tempdir().unwrap();
    let drift = DriftSpec::harmonic();
    let path = simulate_sde(&drift, 0.0, 0.0, (1.0, 0.0), 0.01, 100, 2, 0).unwrap();
    let mut buf = Vec::new();
    write_price_csv(&mut buf, &path.x1, (2005, 6, 1), 250.0).unwrap();
    let csv = dir.path().join("latent.csv");
    fs::write(&csv, &buf).unwrap();

    let ingested = pipeline::ingest_csv(&csv, 0.01).unwrap();
    assert_eq!(ingested.series.len(), 100);
    // log relative price reproduces x1 - x1[0]
    for (z, x) in ingested.series.values().iter().zip(&path.x1) {
        assert!((z - (x - path.x1[0])).abs() < 1e-9);
    }
}
