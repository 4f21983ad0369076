use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ergoband::density::BandExport;
use ergoband::experiment::ExperimentConfig;
use ergoband::variance::zeta_gaussian_bound;
use ergoband::wavelet::{
    analyze_function, multiscale_norm, Quadrature, ScalingWeight, WaveletBasis, WeightSequence,
};
use serde_json::Value;
use tempfile::TempDir;

const OU_DENSITY: &str = r#"
seed = 42
replications = 10

[model]
family = "ornstein-uhlenbeck"
theta = 1.0
sigma = 1.0

[simulation]
n = 2000

[basis]
order = 8
j0 = 3

[band]
target = "density"
alpha = 0.1
interval = [-1.0, 1.0]
"#;

const SELF_SIMILAR: &str = r#"
seed = 5
replications = 10

[model]
family = "self-similar"
smoothness = 1
amplitude = 4.0

[simulation]
n = 20000
substeps = 20
burn_in = 200
x0 = 0.0

[basis]
order = 4
j0 = 1

[band]
target = "drift"
method = "adaptive"
alpha = 0.1
interval = [-1.0, 1.0]
cap_scale = 4.0
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ergoband"))
}

fn workspace_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(rel)
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn run(config: &Path, out: &Path, args: &[&str]) -> Output {
    bin()
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn ok(output: Output) -> Output {
    assert!(
        output.status.success(),
        "status {:?}: {}",
        output.status,
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn schema() -> Value {
    read_json(&workspace_file("schemas/ergoband-1.schema.json"))
}

fn assert_valid(doc: &Value) {
    let schema = schema();
    let compiled = jsonschema::JSONSchema::compile(&schema).unwrap();
    let msgs: Vec<String> = match compiled.validate(doc) {
        Ok(()) => Vec::new(),
        Err(errors) => errors
            .map(|e| format!("{} at {}", e, e.instance_path))
            .collect(),
    };
    assert!(msgs.is_empty(), "schema violations: {msgs:?}");
}

fn assert_valid_record(record: &Value) {
    let mut schema = schema();
    let definitions = schema["definitions"].take();
    let wrapper = serde_json::json!({
        "definitions": definitions,
        "$ref": "#/definitions/replicationRecord"
    });
    let compiled = jsonschema::JSONSchema::compile(&wrapper).unwrap();
    assert!(compiled.is_valid(record), "{record}");
}

fn simulate(config: &Path, out: &Path) -> PathBuf {
    ok(run(config, out, &["simulate"]));
    out.join("trajectory.csv")
}

#[test]
fn simulate_writes_header_and_samples_deterministically() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "ou.toml", OU_DENSITY);
    let first = fs::read(simulate(&cfg, &dir.path().join("a"))).unwrap();
    let second = fs::read(simulate(&cfg, &dir.path().join("b"))).unwrap();
    assert_eq!(first, second);
    let text = String::from_utf8(first).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2001);
    assert!(lines[0].starts_with("# model="));
    assert!(lines[0].contains("seed=42"));
    let other = TempDir::new().unwrap();
    let reseeded = run(&cfg, other.path(), &["--seed", "43", "simulate"]);
    ok(reseeded);
    assert_ne!(
        fs::read(other.path().join("trajectory.csv")).unwrap(),
        text.as_bytes()
    );
}

#[test]
fn invalid_sigma_exits_with_two_and_names_field() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.toml",
        &OU_DENSITY.replace("sigma = 1.0", "sigma = -1.0"),
    );
    let out = run(&cfg, dir.path(), &["simulate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.sigma"));

    let out = run(&cfg, dir.path(), &["--json-errors", "simulate"]);
    assert_eq!(out.status.code(), Some(2));
    let doc: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(doc["kind"], "error");
    assert_eq!(doc["body"]["kind"], "config");
    assert_valid(&doc);
}

#[test]
fn unknown_fields_and_missing_files_are_reported() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "typo.toml",
        &OU_DENSITY.replace("theta = 1.0", "theta = 1.0\nthetta = 2.0"),
    );
    assert_eq!(run(&cfg, dir.path(), &["simulate"]).status.code(), Some(2));
    let missing = dir.path().join("absent.toml");
    assert_eq!(
        run(&missing, dir.path(), &["simulate"]).status.code(),
        Some(4)
    );
    let cfg = write_config(dir.path(), "ok.toml", OU_DENSITY);
    let out = run(
        &cfg,
        dir.path(),
        &["band", "--input", "/nonexistent/traj.csv"],
    );
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn zero_length_trajectory_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "ou.toml", OU_DENSITY);
    let traj = dir.path().join("empty.csv");
    fs::write(&traj, "# model=ou, delta=1, seed=1, n=0\n").unwrap();
    let out = run(
        &cfg,
        dir.path(),
        &["band", "--input", traj.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn density_band_pipeline_is_decidable() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "ou.toml",
        &OU_DENSITY.replace("n = 2000", "n = 100000"),
    );
    let traj = simulate(&cfg, dir.path());
    ok(run(
        &cfg,
        dir.path(),
        &["band", "--input", traj.to_str().unwrap()],
    ));
    let doc = read_json(&dir.path().join("band.json"));
    assert_valid(&doc);
    assert_eq!(doc["kind"], "density-band");
    let band: BandExport = serde_json::from_value(doc["body"].clone()).unwrap();
    let radius = band.linf.unwrap().radius;
    assert!(radius > 0.0);

    // Independent membership check of the analytic N(0, 1/2) density.
    let basis = WaveletBasis::new(8, 3).unwrap();
    let level = band.center_coeffs.max_level();
    let mu = |x: f64| (-x * x).exp() / std::f64::consts::PI.sqrt();
    let truth =
        analyze_function(&basis, mu, level, -1.0, 1.0, Quadrature::for_basis(&basis)).unwrap();
    let diff = truth.axpy(-1.0, &band.center_coeffs).unwrap();
    let stat = multiscale_norm(&diff, &band.weights);
    let threshold = band.zeta / (band.n as f64).sqrt();
    assert!(stat.is_finite() && threshold > 0.0);
    assert!(stat < threshold, "{stat} >= {threshold}");

    let csv = fs::read_to_string(dir.path().join("band.csv")).unwrap();
    let mut rows = csv.lines();
    assert_eq!(rows.next(), Some("x,center,lower,upper"));
    for row in rows.take(50) {
        let v: Vec<f64> = row.split(',').map(|c| c.parse().unwrap()).collect();
        assert!((v[3] - v[1] - radius).abs() < 1e-9 && (v[1] - v[2] - radius).abs() < 1e-9);
    }
}

#[test]
fn json_trajectories_are_accepted() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "ou.toml", OU_DENSITY);
    ok(run(&cfg, dir.path(), &["simulate", "--format", "json"]));
    let traj = dir.path().join("trajectory.json");
    let doc = read_json(&traj);
    let schema = read_json(&workspace_file("schemas/trajectory-1.schema.json"));
    assert!(jsonschema::JSONSchema::compile(&schema)
        .unwrap()
        .is_valid(&doc));
    ok(run(
        &cfg,
        dir.path(),
        &["estimate-density", "--input", traj.to_str().unwrap()],
    ));
    assert_valid(&read_json(&dir.path().join("density.json")));
}

#[test]
fn drift_estimates_and_bands_validate() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "ou.toml",
        &OU_DENSITY
            .replace("order = 8\nj0 = 3", "order = 4\nj0 = 1")
            .replace("n = 2000", "n = 20000"),
    );
    let traj = simulate(&cfg, dir.path());
    let input = traj.to_str().unwrap();
    for method in ["plugin", "direct"] {
        ok(run(
            &cfg,
            dir.path(),
            &["--method", method, "estimate-drift", "--input", input],
        ));
        let doc = read_json(&dir.path().join("drift.json"));
        assert_eq!(doc["body"]["method"], method);
        assert_valid(&doc);
        ok(run(
            &cfg,
            dir.path(),
            &["--method", method, "band", "--input", input],
        ));
        let doc = read_json(&dir.path().join("band.json"));
        assert_eq!(doc["kind"], "drift-band");
        assert_valid(&doc);
    }
}

#[test]
fn positivity_failures_exit_with_three() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "far.toml",
        &OU_DENSITY
            .replace("order = 8\nj0 = 3", "order = 4\nj0 = 1")
            .replace("interval = [-1.0, 1.0]", "interval = [4.0, 6.0]"),
    );
    let traj = simulate(&cfg, dir.path());
    let out = run(
        &cfg,
        dir.path(),
        &[
            "--method",
            "direct",
            "--json-errors",
            "band",
            "--input",
            traj.to_str().unwrap(),
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    let doc: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(doc["body"]["kind"], "positivity_floor");
    assert!(doc["body"]["message"].as_str().unwrap().contains('['));
}

#[test]
fn adaptive_band_reports_selection() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "ss.toml", SELF_SIMILAR);
    let traj = simulate(&cfg, dir.path());
    let input = traj.to_str().unwrap();
    ok(run(&cfg, dir.path(), &["band", "--input", input]));
    let doc = read_json(&dir.path().join("band.json"));
    assert_valid(&doc);
    let body = &doc["body"];
    assert!(body["adaptive"]["j_hat"].is_i64());
    assert!(body["adaptive"]["s_hat"].as_f64().unwrap() >= 1.0);
    assert_eq!(body["selection"]["j_hat"], body["adaptive"]["j_hat"]);

    ok(run(&cfg, dir.path(), &["adapt", "--input", input]));
    let diag = read_json(&dir.path().join("adapt.json"));
    assert_valid(&diag);
    let tests = diag["body"]["selection"]["tests"].as_array().unwrap();
    assert!(!tests.is_empty());
    for t in tests {
        let passed = t["statistic"].as_f64().unwrap() <= t["threshold"].as_f64().unwrap();
        assert_eq!(t["passed"].as_bool().unwrap(), passed);
    }
}

#[test]
fn coverage_with_huge_zeta_saturates() {
    let dir = TempDir::new().unwrap();
    let text = format!("{OU_DENSITY}\n[band.zeta]\nrule = \"fixed\"\nvalue = 1e6\n");
    let cfg = write_config(dir.path(), "wide.toml", &text);
    ok(run(
        &cfg,
        &dir.path().join("a"),
        &["--workers", "1", "coverage"],
    ));
    ok(run(
        &cfg,
        &dir.path().join("b"),
        &["--workers", "3", "coverage"],
    ));
    let report_a = fs::read(dir.path().join("a/coverage.json")).unwrap();
    let report_b = fs::read(dir.path().join("b/coverage.json")).unwrap();
    assert_eq!(report_a, report_b);
    let doc: Value = serde_json::from_slice(&report_a).unwrap();
    assert_valid(&doc);
    let summary = &doc["body"]["summary"];
    assert_eq!(summary["covered"], 10);
    assert_eq!(summary["coverage"], 1.0);
    assert_eq!(doc["body"]["records"].as_array().unwrap().len(), 10);
    assert_valid(&read_json(&dir.path().join("a/metadata.json")));

    let log = fs::read_to_string(dir.path().join("b/replications.jsonl")).unwrap();
    let mut seen: Vec<u64> = log
        .lines()
        .map(|l| {
            let r: Value = serde_json::from_str(l).unwrap();
            assert_valid_record(&r);
            r["index"].as_u64().unwrap()
        })
        .collect();
    seen.sort();
    assert_eq!(seen, (0..10).collect::<Vec<_>>());
}

#[test]
fn coverage_rejects_zero_zeta_and_few_replications() {
    let dir = TempDir::new().unwrap();
    let text = format!("{OU_DENSITY}\n[band.zeta]\nrule = \"fixed\"\nvalue = 0.0\n");
    let cfg = write_config(dir.path(), "zero.toml", &text);
    let out = run(&cfg, dir.path(), &["coverage"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("zeta"));
    let cfg = write_config(
        dir.path(),
        "few.toml",
        &OU_DENSITY.replace("replications = 10", "replications = 9"),
    );
    assert_eq!(run(&cfg, dir.path(), &["coverage"]).status.code(), Some(2));
}

#[test]
fn quantile_passthrough_monotonicity_and_determinism() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "ou.toml", OU_DENSITY);
    let zeta_at = |alpha: &str| {
        ok(run(
            &cfg,
            dir.path(),
            &["--alpha", alpha, "quantile", "--sigma", "1"],
        ));
        let doc = read_json(&dir.path().join("critical_value.json"));
        assert_valid(&doc);
        doc["body"]["zeta"].as_f64().unwrap()
    };
    let basis = WaveletBasis::new(8, 3).unwrap();
    let w = WeightSequence::density(3).with_scaling(ScalingWeight::CriticalValue);
    let config: ExperimentConfig = toml::from_str(OU_DENSITY).unwrap();
    let level = config.level().unwrap();
    let direct = zeta_gaussian_bound(0.1, 1.0, &basis, &w, level, -1.0, 1.0).unwrap();
    assert_eq!(zeta_at("0.1"), direct.zeta);
    assert!(zeta_at("0.05") > zeta_at("0.1"));

    let traj = simulate(&cfg, dir.path());
    let mc = write_config(
        dir.path(),
        "mc.toml",
        &format!("{OU_DENSITY}\n[band.zeta]\nrule = \"mc-quantile\"\nreplications = 2000\n"),
    );
    let runs: Vec<String> = (0..2)
        .map(|_| {
            ok(run(
                &mc,
                dir.path(),
                &["quantile", "--input", traj.to_str().unwrap()],
            ));
            fs::read_to_string(dir.path().join("critical_value.json")).unwrap()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    let doc: Value = serde_json::from_str(&runs[0]).unwrap();
    assert_eq!(doc["body"]["construction"], "mc-quantile");
    assert_eq!(doc["body"]["seed"], 42);
}

#[test]
fn selfsim_check_shows_first_order_decay() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "ss.toml", SELF_SIMILAR);
    ok(run(&cfg, dir.path(), &["selfsim-check"]));
    let doc = read_json(&dir.path().join("selfsim.json"));
    assert_valid(&doc);
    for r in doc["body"]["ratios"].as_array().unwrap() {
        let r = r.as_f64().unwrap();
        assert!((0.4..=0.6).contains(&r), "{r}");
    }
}

#[test]
fn configs_round_trip_through_toml() {
    for name in [
        "ou_density.toml",
        "ou_drift.toml",
        "selfsimilar_adaptive.toml",
    ] {
        let text = fs::read_to_string(workspace_file(&format!("configs/{name}"))).unwrap();
        let cfg: ExperimentConfig = toml::from_str(&text).unwrap();
        cfg.validate().unwrap();
        let again: ExperimentConfig = toml::from_str(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, again, "{name}");
    }
    for text in [OU_DENSITY, SELF_SIMILAR] {
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        let again: ExperimentConfig = toml::from_str(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, again);
    }
}
