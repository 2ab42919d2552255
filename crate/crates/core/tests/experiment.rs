use std::fs;
use std::path::Path;

use rebalance::experiment::{
    run_experiment, ExperimentConfig, RunOptions, RESULTS_HEADER, SUMMARY_HEADER,
};

fn config(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::smote_vs_bootstrap();
    cfg.dims = vec![2, 4];
    cfg.train_sizes = vec![400];
    cfg.seeds = vec![0, 1, 2];
    cfg.n_eval = 10_000;
    cfg.output_dir = dir.to_path_buf();
    cfg
}

fn results(dir: &Path) -> String {
    fs::read_to_string(dir.join("results.csv")).unwrap()
}

#[test]
fn reruns_are_byte_identical_across_worker_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_experiment(
        &config(a.path()),
        &RunOptions {
            resume: false,
            workers: Some(1),
        },
    )
    .unwrap();
    run_experiment(
        &config(b.path()),
        &RunOptions {
            resume: false,
            workers: Some(4),
        },
    )
    .unwrap();
    let text = results(a.path());
    assert_eq!(text, results(b.path()));
    assert_eq!(text.lines().next().unwrap(), RESULTS_HEADER);
    // 2 dims x 1 size x 3 seeds x 2 methods
    assert_eq!(text.lines().count(), 13);
    assert_eq!(
        fs::read_to_string(a.path().join("summary.csv")).unwrap(),
        fs::read_to_string(b.path().join("summary.csv")).unwrap()
    );
}

#[test]
fn resume_fills_missing_cells_only() {
    let fresh = tempfile::tempdir().unwrap();
    run_experiment(&config(fresh.path()), &RunOptions::default()).unwrap();
    let full = results(fresh.path());

    let partial = tempfile::tempdir().unwrap();
    // keep the header, five rows and half of the sixth
    let lines: Vec<&str> = full.lines().collect();
    let mut cut = lines[..6].join("\n");
    cut.push('\n');
    cut.push_str(&lines[6][..lines[6].len() / 2]);
    fs::write(partial.path().join("results.csv"), cut).unwrap();

    let rows = run_experiment(
        &config(partial.path()),
        &RunOptions {
            resume: true,
            workers: Some(2),
        },
    )
    .unwrap();
    assert_eq!(rows.len(), 12);
    assert_eq!(results(partial.path()), full);
}

#[test]
fn summary_pairs_smote_with_bootstrap() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&config(dir.path()), &RunOptions::default()).unwrap();
    let text = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), SUMMARY_HEADER);
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert_eq!(&r[2..5], &["smote:k=5", "bootstrap", "3"]);
    }
}
