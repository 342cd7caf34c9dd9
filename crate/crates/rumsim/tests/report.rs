use proptest::prelude::*;
use rumsim::report::{
    emit_report, recovery_table, Cell, Estimate, EstimatorColumn, FitRow, ParamTable, QSweep, Report, Table,
    TimingSweep,
};
use rumsim::Error;
use rumsim_core::analysis::{linear_fit, ParamSamples};
use rumsim_core::estimation::Metrics;

fn exp1_table() -> ParamTable {
    let est = |mean, std| Some(Estimate { mean, std: Some(std) });
    ParamTable {
        parameters: vec!["beta_p".into(), "beta_a".into(), "beta_b".into(), "beta_q".into()],
        truth: Some(vec![-1.0, 0.5, 0.5, 1.0]),
        estimators: vec![
            EstimatorColumn {
                label: "RUM-NN".into(),
                n: 20,
                failures: 0,
                cells: vec![est(-1.01, 0.04), est(0.51, 0.03), est(0.49, 0.03), est(1.02, 0.02)],
            },
            EstimatorColumn {
                label: "MNL".into(),
                n: 19,
                failures: 1,
                cells: vec![est(-1.0, 0.03), est(0.5, 0.02), None, est(1.0, 0.02)],
            },
        ],
    }
}

fn parse_csv(text: &str) -> Vec<Vec<String>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
    r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
}

#[test]
fn recovery_markdown_has_true_estimated_and_std_columns() {
    let md = recovery_table(&exp1_table()).to_markdown();
    let header = md.lines().next().unwrap();
    assert_eq!(
        header,
        "| Parameter | True | RUM-NN Estimated | RUM-NN Std | MNL Estimated | MNL Std |"
    );
    assert!(md.contains("| beta_p | -1 | -1.0100 | 0.0400 | -1 | 0.0300 |"), "{md}");
    assert!(md.contains("| beta_b | 0.5000 | 0.4900 | 0.0300 |  |  |"), "{md}");
    assert!(md.contains("MNL: 19 successful runs, 1 failed"), "{md}");
}

#[test]
fn csv_cells_parse_back_exactly() {
    let t = exp1_table();
    let csv = recovery_table(&t).to_csv().unwrap();
    let rows = parse_csv(&csv);
    assert_eq!(rows.len(), 5);
    for (k, row) in rows[1..].iter().enumerate() {
        assert_eq!(row[0], t.parameters[k]);
        assert_eq!(row[1].parse::<f64>().unwrap(), t.truth.as_ref().unwrap()[k]);
        let e = t.estimators[0].cells[k].unwrap();
        assert_eq!(row[2].parse::<f64>().unwrap(), e.mean);
        assert_eq!(row[3].parse::<f64>().unwrap(), e.std.unwrap());
    }
    assert_eq!(rows[3][4], "");
}

fn one_by(v: f64) -> Table {
    Table {
        columns: vec!["value".into()],
        rows: vec![vec![Cell::Num(v)], vec![Cell::Text("a,\"b\"".into())], vec![Cell::Empty]],
        notes: Vec::new(),
    }
}

proptest! {
    #[test]
    fn any_finite_number_round_trips_through_csv(v in prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO) {
        let rows = parse_csv(&one_by(v).to_csv().unwrap());
        prop_assert_eq!(rows[1][0].parse::<f64>().unwrap().to_bits(), v.to_bits());
        prop_assert_eq!(&rows[2][0], "a,\"b\"");
        prop_assert_eq!(&rows[3][0], "");
    }
}

fn sweep() -> QSweep {
    let names = vec!["beta_p".to_string(), "beta_a".to_string()];
    let samples = [10usize, 100, 500, 1000]
        .iter()
        .map(|&q| {
            let mut s = ParamSamples::new(names.clone());
            let spread = 1.0 / (q as f64).sqrt();
            for r in 0..20 {
                let d = spread * (r as f64 - 9.5) / 10.0;
                s.push(&[-1.0 + d, 0.5 - d]).unwrap();
            }
            s
        })
        .collect();
    QSweep {
        label: "RUM-NN".into(),
        truth: vec![("beta_p".into(), -1.0), ("beta_a".into(), 0.5)],
        q_values: vec![10, 100, 500, 1000],
        samples,
    }
}

#[test]
fn boxplot_draws_one_box_per_q_in_every_panel() {
    let dir = tempfile::tempdir().unwrap();
    let q = sweep();
    let files = emit_report(&Report::QBoxplot(&q), dir.path(), "exp1_qsweep").unwrap();
    let names: Vec<String> = files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(
        names,
        ["exp1_qsweep_q_boxplot.csv", "exp1_qsweep_q_boxplot.md", "exp1_qsweep_q_boxplot.svg"]
    );
    let svg = std::fs::read_to_string(&files[2]).unwrap();
    let panels: Vec<&str> = svg.split(r#"<g class="panel""#).skip(1).collect();
    assert_eq!(panels.len(), 2);
    for p in panels {
        assert_eq!(p.matches(r#"class="box""#).count(), 4);
        assert_eq!(p.matches(r#"class="sigma""#).count(), 4);
        assert_eq!(p.matches(r#"class="truth""#).count(), 1);
    }
}

#[test]
fn timing_report_carries_the_fitted_line() {
    let dir = tempfile::tempdir().unwrap();
    let q = vec![100usize, 1000, 3000, 5000, 10000];
    let secs: Vec<f64> = q.iter().map(|&x| 0.2 + 1e-3 * x as f64).collect();
    let x: Vec<f64> = q.iter().map(|&v| v as f64).collect();
    let t = TimingSweep {
        label: "RUM-NN".into(),
        fit: linear_fit(&x, &secs).unwrap(),
        q_values: q,
        wall_secs: secs,
    };
    let files = emit_report(&Report::QTiming(&t), dir.path(), "exp1_qsweep").unwrap();
    assert_eq!(files.len(), 3);
    let svg = std::fs::read_to_string(&files[2]).unwrap();
    assert!(svg.contains("RUM-NN: R² = 1.0000"), "{svg}");
}

#[test]
fn empty_report_errors_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<FitRow> = Vec::new();
    let err = emit_report(&Report::Fit(&rows), dir.path(), "exp1_fit").unwrap_err();
    assert!(matches!(err, Error::EmptyReport(_)), "{err}");
    let empty = ParamTable {
        parameters: Vec::new(),
        truth: None,
        estimators: Vec::new(),
    };
    assert!(emit_report(&Report::Recovery(&empty), dir.path(), "exp1_fit").is_err());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn fit_rows_render_train_and_test() {
    let dir = tempfile::tempdir().unwrap();
    let m = |n, ll, acc| Metrics {
        n,
        log_likelihood: ll,
        accuracy: acc,
    };
    let rows = vec![FitRow {
        label: "MNL".into(),
        group: "fold 1".into(),
        train: m(800, -500.25, 0.7),
        test: Some(m(200, -130.5, 0.65)),
    }];
    let files = emit_report(&Report::Fit(&rows), dir.path(), "sm_cv").unwrap();
    let csv = parse_csv(&std::fs::read_to_string(&files[0]).unwrap());
    assert_eq!(csv[1][..3], ["MNL", "fold 1", "800"]);
    assert!(csv[1].contains(&"-500.25".to_string()));
    assert!(csv[1].contains(&"-130.5".to_string()));
}
