use std::fs;

use ttrecover::harness::{
    generate_ground_truth, results_csv, run_experiment, summary_csv, write_outputs, ExperimentConfig, ExperimentKind,
    RESULTS_HEADER, RIP_HEADER, SUMMARY_HEADER,
};
use ttrecover::io::{read_measurements, write_measurements};
use ttrecover::rgd::TRACE_HEADER;
use ttrecover::sensing::{add_noise, Distribution, SensingOperator};

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(text).unwrap()
}

#[test]
fn outputs_have_the_documented_layout() {
    let cfg = config(
        "experiment = \"sensing\"\norders = [2, 3]\ndims = [3]\nmeasurements = [60]\ntrials = 2\nmax_iters = 200\nbase_seed = 5\n",
    );
    let out = run_experiment(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_outputs(&cfg, &out, dir.path()).unwrap();

    let results = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    let mut lines = results.lines();
    assert_eq!(lines.next(), Some(RESULTS_HEADER));
    let width = RESULTS_HEADER.split(',').count();
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4);
    for row in &rows {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), width, "{row}");
        assert_eq!(fields[0], "sensing");
        let trace = fields[width - 1];
        assert!(dir.path().join(trace).is_file(), "missing {trace}");
    }

    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().next(), Some(SUMMARY_HEADER));
    assert_eq!(summary.lines().count(), 3);

    let trace = fs::read_to_string(dir.path().join("traces/g0_t0.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some(TRACE_HEADER));

    // the manifest carries the config and can be read back as one
    let manifest: toml::Table = fs::read_to_string(dir.path().join("manifest.toml"))
        .unwrap()
        .parse()
        .unwrap();
    let back: ExperimentConfig = manifest["config"].clone().try_into().unwrap();
    assert_eq!(back, cfg);
    let seeds = manifest["trial_seeds"].as_array().unwrap();
    assert_eq!(seeds.len(), 4);
    for (s, r) in seeds.iter().zip(&out.records) {
        assert_eq!(s.as_str().unwrap().parse::<u64>().unwrap(), r.seed);
    }
}

#[test]
fn runs_are_identical_across_thread_counts() {
    let text =
        "experiment = \"phase\"\norders = [2]\ndims = [3]\nmeasurements = [20, 40]\ntrials = 6\nmax_iters = 100\n";
    let mut one = config(text);
    one.threads = 1;
    let mut many = one.clone();
    many.threads = 3;
    let a = run_experiment(&one).unwrap();
    let b = run_experiment(&many).unwrap();
    assert_eq!(results_csv(&a.records), results_csv(&b.records));
    assert_eq!(summary_csv(&a.summaries), summary_csv(&b.summaries));
    assert!(a.traces.is_empty());
}

#[test]
fn completion_phase_reports_success_rates() {
    let cfg = config(
        "experiment = \"completion-phase\"\norders = [3]\ndims = [4]\nmeasurements = [8, 64]\ntrials = 4\nmax_iters = 400\n",
    );
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.summaries.len(), 2);
    let (low, high) = (&out.summaries[0], &out.summaries[1]);
    assert_eq!(low.experiment, ExperimentKind::CompletionPhase);
    assert!(low.success_rate <= high.success_rate);
    assert!(high.success_rate > 0.0);
}

#[test]
fn rip_probe_writes_its_own_table() {
    let cfg =
        config("experiment = \"rip-probe\"\norders = [3]\ndims = [3]\nmeasurements = [50, 500]\nrip_trials = 40\n");
    let out = run_experiment(&cfg).unwrap();
    assert!(out.records.is_empty());
    assert_eq!(out.rip.len(), 2);
    assert!(out.rip[1].delta_hat < out.rip[0].delta_hat);
    assert!(out
        .rip
        .iter()
        .all(|r| r.min_ratio <= 1.0 + r.delta_hat && r.max_ratio <= 1.0 + r.delta_hat));
    let dir = tempfile::tempdir().unwrap();
    write_outputs(&cfg, &out, dir.path()).unwrap();
    let rip = fs::read_to_string(dir.path().join("rip.csv")).unwrap();
    assert_eq!(rip.lines().next(), Some(RIP_HEADER));
    assert_eq!(rip.lines().count(), 3);
    assert!(!dir.path().join("results.csv").exists());
}

#[test]
fn measurements_round_trip_through_files() {
    let truth = generate_ground_truth(3, 3, 2, 4).unwrap();
    let op =
        SensingOperator::gaussian_ensemble(&truth.dims(), 25, 18446744073709551557, Distribution::Gaussian).unwrap();
    let y = add_noise(&op.apply_tt(&truth).unwrap(), 0.01, 3).unwrap();
    let mut desc = op.descriptor();
    desc.gamma = 0.01;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("y.csv");
    write_measurements(&path, &y, &desc).unwrap();
    let (back, values) = read_measurements(&path).unwrap();
    assert_eq!(back, desc);
    assert_eq!(values, y);
    let rebuilt = SensingOperator::from_descriptor(&back).unwrap();
    assert_eq!(rebuilt.measurement(24).unwrap(), op.measurement(24).unwrap());

    fs::write(&path, "k,y_k\n1,0.5\n3,0.1\n").unwrap();
    assert!(read_measurements(&path).is_err());
    assert!(write_measurements(&path, &y[..3], &desc).is_err());
}

#[test]
fn bad_config_files_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    assert!(ExperimentConfig::from_file(&path).is_err());
    fs::write(&path, "experiment = \"sensing\"\nmu = -0.5\n").unwrap();
    assert!(ExperimentConfig::from_file(&path).is_err());
    assert!("no-such-run".parse::<ExperimentKind>().is_err());
    assert_eq!(
        "noise-sweep".parse::<ExperimentKind>().unwrap(),
        ExperimentKind::NoiseSweep
    );
}
