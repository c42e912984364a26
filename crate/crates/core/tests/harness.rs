use std::fs;

use fnrcal::harness::{
    execute, execute_coordinates, run_experiment, DatasetSpec, ExperimentPlan, Metric, TrialReport, TRIAL_HEADER,
};
use fnrcal::{save_dataset, GeneratorConfig, Strategy, StrategyKind};

fn plan(repetitions: usize) -> ExperimentPlan {
    ExperimentPlan {
        datasets: vec![
            DatasetSpec::generated(
                "all",
                GeneratorConfig { n_scans: 40, distractors_per_scan: [10, 30], seed: 8, ..Default::default() },
                None,
            ),
            DatasetSpec::generated(
                "r3",
                GeneratorConfig { n_scans: 50, distractors_per_scan: [10, 30], seed: 9, ..Default::default() },
                Some(3),
            ),
        ],
        strategies: vec![
            Strategy::Naive { fixed_lambda: 0.5 },
            Strategy::Froc { target_sensitivity: 0.9 },
            Strategy::Crc { alpha: 0.1 },
        ],
        repetitions,
        base_seed: 42,
        output_dir: "unused".into(),
        histogram_bins: 12,
        workers: 3,
    }
}

#[test]
fn summary_means_recompute_from_trial_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = plan(50);
    p.output_dir = dir.path().to_path_buf();
    let summary = run_experiment(&p).unwrap();

    let mut reader = csv::Reader::from_path(dir.path().join("trials.csv")).unwrap();
    assert_eq!(reader.headers().unwrap().iter().collect::<Vec<_>>(), TRIAL_HEADER);
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2 * 3 * 50);

    for row in &summary.rows {
        let mine: Vec<&csv::StringRecord> = rows
            .iter()
            .filter(|r| r[0] == row.dataset && &r[1] == row.strategy.as_str())
            .collect();
        assert_eq!(mine.len(), row.trials);
        let col = |i: usize| mine.iter().map(|r| r[i].parse::<f64>().unwrap()).sum::<f64>() / mine.len() as f64;
        // CSV values are rounded to six decimals.
        for (got, i) in [
            (row.lambda_hat, 3),
            (row.sensitivity, 4),
            (row.precision, 5),
            (row.efficiency, 6),
            (row.fn_per_scan, 7),
            (row.fp_per_scan, 8),
            (row.infeasible_rate, 9),
        ] {
            assert!((got - col(i)).abs() <= 5e-7, "{} {} column {i}", row.dataset, row.strategy);
        }
    }
}

#[test]
fn histograms_are_normalized() {
    let out = execute(&plan(40)).unwrap();
    for row in &out.summary.rows {
        for m in Metric::ALL {
            let h = row.histogram(m).unwrap();
            assert!((h.heights.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            assert_eq!(h.edges.len(), h.heights.len() + 1);
        }
    }
    let dir = tempfile::tempdir().unwrap();
    fnrcal::harness::write_outputs(&out, dir.path()).unwrap();
    let mut reader = csv::Reader::from_path(dir.path().join("histograms.csv")).unwrap();
    let mut totals = std::collections::BTreeMap::<(String, String, String), f64>::new();
    for r in reader.records() {
        let r = r.unwrap();
        *totals.entry((r[0].into(), r[1].into(), r[2].into())).or_default() += r[5].parse::<f64>().unwrap();
    }
    assert_eq!(totals.len(), 2 * 3 * Metric::ALL.len());
    assert!(totals.values().all(|t| (t - 1.0).abs() <= 1e-9));
}

#[test]
fn rerunning_a_subset_of_coordinates_reproduces_rows() {
    let p = plan(30);
    let full = execute(&p).unwrap();
    let coords = [(1, 29), (0, 3), (1, 0), (0, 17)];
    let part = execute_coordinates(&p, &coords).unwrap();
    assert_eq!(part.trials.len(), coords.len() * 3);
    for t in &part.trials {
        let same = full
            .trials
            .iter()
            .find(|f| f.dataset == t.dataset && f.strategy == t.strategy && f.rep == t.rep)
            .unwrap();
        assert_eq!(same, t);
    }
    assert!(execute_coordinates(&p, &[(2, 0)]).is_err());
}

#[test]
fn trial_rows_do_not_depend_on_repetition_count() {
    let short = execute(&plan(5)).unwrap();
    let long = execute(&plan(25)).unwrap();
    let key = |t: &TrialReport| (t.dataset.clone(), t.strategy, t.rep);
    for t in &short.trials {
        assert!(long.trials.iter().any(|l| key(l) == key(t) && l == t));
    }
}

#[test]
fn plan_file_resolves_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let data = fnrcal::generate(&GeneratorConfig { n_scans: 20, seed: 3, ..Default::default() }).unwrap();
    fs::create_dir(dir.path().join("data")).unwrap();
    save_dataset(&data, dir.path().join("data/scans.jsonl")).unwrap();
    let plan_path = dir.path().join("plan.toml");
    fs::write(
        &plan_path,
        r#"
repetitions = 4
base_seed = 11
output_dir = "out"

[[datasets]]
name = "file"
path = "data/scans.jsonl"
consensus = 2

[[datasets]]
name = "synthetic"
generator = { n_scans = 20, seed = 5 }

[[strategies]]
kind = "crc"
alpha = 0.2

[[strategies]]
kind = "naive"
fixed_lambda = 0.4
"#,
    )
    .unwrap();
    let p = ExperimentPlan::from_file(&plan_path).unwrap();
    assert_eq!(p.output_dir, dir.path().join("out"));
    let summary = run_experiment(&p).unwrap();
    assert_eq!(summary.rows.len(), 4);
    assert!(summary.row("file", StrategyKind::Crc).is_some());
    for f in ["trials.csv", "summary.csv", "histograms.csv", "summary.json", "failures.csv"] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
}

#[test]
fn invalid_plans_are_rejected() {
    let mut p = plan(0);
    assert!(p.validate().is_err());
    p.repetitions = 1;
    p.strategies.clear();
    assert!(p.validate().is_err());
    let mut p = plan(1);
    p.strategies.push(Strategy::Crc { alpha: 0.2 });
    assert!(p.validate().is_err());
    let mut p = plan(1);
    p.strategies[2] = Strategy::Crc { alpha: 1.5 };
    assert!(p.validate().is_err());
}

#[test]
fn crc_efficiency_shrinks_with_consensus() {
    let base = GeneratorConfig { n_scans: 200, distractors_per_scan: [20, 60], seed: 31, ..Default::default() };
    let p = ExperimentPlan {
        datasets: (1..=4u8).map(|r| DatasetSpec::generated(format!("set{r}"), base.clone(), Some(r))).collect(),
        strategies: vec![Strategy::Crc { alpha: 0.1 }],
        repetitions: 200,
        base_seed: 1,
        output_dir: "unused".into(),
        histogram_bins: 10,
        workers: 0,
    };
    let s = execute(&p).unwrap().summary;
    let eff = |n: &str| s.row(n, StrategyKind::Crc).unwrap().efficiency;
    assert!(eff("set1") > eff("set3"), "{} vs {}", eff("set1"), eff("set3"));
}

#[test]
fn shipped_plans_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../plans");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let p = ExperimentPlan::from_file(&path).unwrap();
            assert_eq!(p.repetitions, fnrcal::harness::DEFAULT_REPETITIONS, "{}", path.display());
            n += 1;
        }
    }
    assert!(n >= 2);
}
