use std::path::PathBuf;

use mabn::agent::{read_metrics_csv, MetricsRow, CSV_COLUMNS};
use mabn::envs::{EnvSpec, LqrSpec, MazeSpec};
use mabn::harness::{
    aggregate_files, aggregate_rows, render_svg, run, sweep, AxisValues, ExperimentConfig,
    PlotStyle, SweepAxis,
};
use mabn::parallel::Exec;
use proptest::prelude::*;

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mabn-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn lqr_config(name: &str, steps: u64, seeds: Vec<u64>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(
        r#"
        [env]
        kind = "lqr"
        horizon = 40
        action_bound = 1.0
        state_bound = 5.0
        [agent]
        hidden = [8, 8]
        batch_size = 16
        buffer_capacity = 500
        warmup_steps = 50
        eval_episodes = 2
        [run]
        eval_every = 100
        "#,
    )
    .unwrap();
    cfg.run.total_steps = steps;
    cfg.run.seeds = seeds;
    cfg.run.output_dir = Some(scratch(name));
    cfg
}

#[test]
fn zero_steps_write_header_only() {
    let cfg = lqr_config("zero", 0, vec![0]);
    let out = run(&cfg, Exec::Sequential).unwrap();
    let text = std::fs::read_to_string(&out.seeds[0].csv).unwrap();
    assert_eq!(text, format!("{}\n", CSV_COLUMNS.join(",")));
    assert!(out.config_file.exists());
}

#[test]
fn one_file_per_seed_and_reruns_match() {
    let cfg = lqr_config("seeds", 300, vec![0, 1]);
    let first = run(&cfg, Exec::available()).unwrap();
    let files = first.csv_files();
    assert_eq!(files.len(), 2);
    let bytes: Vec<Vec<u8>> = files.iter().map(|p| std::fs::read(p).unwrap()).collect();
    assert_ne!(bytes[0], bytes[1]);

    let again = run(&cfg, Exec::Sequential).unwrap();
    for (p, b) in again.csv_files().iter().zip(&bytes) {
        assert_eq!(&std::fs::read(p).unwrap(), b);
    }
    let rows = read_metrics_csv(&files[0]).unwrap();
    assert_eq!(rows, first.seeds[0].metrics.rows);
    assert_eq!(rows.len(), 3);
}

#[test]
fn config_file_reloads_to_same_hash() {
    let cfg = lqr_config("reload", 0, vec![3]);
    let out = run(&cfg, Exec::Sequential).unwrap();
    let back = ExperimentConfig::load(&out.config_file).unwrap();
    assert_eq!(back.hash(), out.hash);
}

#[test]
fn maze_run_reports_coverage() {
    let mut cfg = lqr_config("maze", 300, vec![0]);
    cfg.env = EnvSpec::Maze(MazeSpec::default());
    let out = run(&cfg, Exec::Sequential).unwrap();
    let rows = &out.seeds[0].metrics.rows;
    let cov: Vec<f64> = rows.iter().map(|r| r.coverage.unwrap()).collect();
    assert!(cov[0] > 0.0);
    assert!(cov.windows(2).all(|w| w[1] >= w[0]));
    assert!(cov.iter().all(|c| *c <= 1.0));
}

fn row(step: u64, eval: Option<f64>, loss: f64) -> MetricsRow {
    MetricsRow {
        step,
        episode_return: None,
        eval_return: eval,
        critic_loss: Some(loss),
        actor_loss: None,
        q_bias_mean: None,
        q_bias_std: None,
        a_mean_diff: None,
        a_var_diff: None,
        coverage: None,
        sigma_t: 0.5,
    }
}

#[test]
fn aggregate_matches_hand_statistics() {
    let runs = vec![
        vec![row(10, Some(-3.0), 1.0), row(20, Some(-1.0), 2.0)],
        vec![row(10, Some(-5.0), 3.0), row(20, None, 4.0)],
        vec![row(10, Some(-4.0), 5.0)],
    ];
    let agg = aggregate_rows(&runs).unwrap();
    assert_eq!(agg.runs, 3);
    let eval = agg.series("eval_return").unwrap();
    assert_eq!(eval.len(), 2);
    let (step, s) = &eval[0];
    assert_eq!(*step, 10);
    assert!((s.mean + 4.0).abs() < 1e-12);
    assert!((s.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
    assert_eq!((s.min, s.max, s.count), (-5.0, -3.0, 3));
    assert_eq!(eval[1].1.count, 1);
    let loss = agg.last("critic_loss").unwrap().unwrap();
    assert_eq!((loss.mean, loss.std, loss.count), (3.0, 1.0, 2));
    assert!(agg.series("actor_loss").unwrap().is_empty());
}

proptest! {
    #[test]
    fn aggregate_oracle_and_permutation(values in prop::collection::vec(-1e3f64..1e3, 1..12), rot in 0usize..12) {
        let runs: Vec<Vec<MetricsRow>> = values.iter().map(|&v| vec![row(5, Some(v), v * v)]).collect();
        let agg = aggregate_rows(&runs).unwrap();
        let s = agg.last("eval_return").unwrap().unwrap();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let scale = values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        prop_assert!((s.mean - mean).abs() <= 1e-12 * scale);
        prop_assert!((s.std - var.sqrt()).abs() <= 1e-9 * scale);

        let mut rotated = runs.clone();
        rotated.rotate_left(rot % runs.len());
        rotated.reverse();
        prop_assert_eq!(aggregate_rows(&rotated).unwrap(), agg);
    }
}

#[test]
fn aggregate_rejects_foreign_csv() {
    let dir = scratch("foreign");
    std::fs::create_dir_all(&dir).unwrap();
    let p = dir.join("other.csv");
    std::fs::write(&p, "a,b\n1,2\n").unwrap();
    assert!(aggregate_files(&[p]).is_err());
}

#[test]
fn sweep_table_is_normalized() {
    let base = lqr_config("sweep", 200, vec![0]);
    let axes = vec![
        AxisValues {
            axis: SweepAxis::ModeString,
            values: vec!["ETT/TT".into(), "Origin".into()],
        },
        AxisValues {
            axis: SweepAxis::LearningRate,
            values: vec!["1e-4".into(), "1e-3".into()],
        },
    ];
    let out = sweep(&base, &axes, Exec::available()).unwrap();
    assert_eq!(out.cells.len(), 4);
    assert_eq!(out.cells[1].coord(SweepAxis::ModeString), Some("ETT/TT"));
    assert_eq!(out.cells[1].coord(SweepAxis::LearningRate), Some("1e-3"));
    for c in &out.cells {
        assert!(c.normalized > 0.0 && c.normalized <= 1.0, "{}", c.normalized);
    }
    assert!(out.cells.iter().any(|c| c.normalized == 1.0));
    let table = std::fs::read_to_string(&out.summary).unwrap();
    assert_eq!(table.lines().count(), 5);
    assert!(table.starts_with("mode_string,learning_rate,"));
}

#[test]
fn plots_are_reproducible() {
    let runs = vec![
        vec![row(10, Some(-3.0), 1.0), row(20, Some(-1.0), 2.0)],
        vec![row(10, Some(-5.0), 3.0), row(20, Some(-2.0), 4.0)],
    ];
    let agg = aggregate_rows(&runs).unwrap();
    let series = vec![("a".to_string(), agg.clone()), ("b".to_string(), agg)];
    let style = PlotStyle::default();
    let svg = render_svg(&series, &style).unwrap();
    assert_eq!(svg, render_svg(&series, &style).unwrap());
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches("class=\"legend\"").count(), 2);
}

#[test]
fn lqr_discount_must_match_agent() {
    let mut cfg = lqr_config("discount", 0, vec![0]);
    cfg.env = EnvSpec::Lqr(LqrSpec {
        discount: 0.9,
        ..LqrSpec::default()
    });
    assert!(cfg.validate().is_err());
}
