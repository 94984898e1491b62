mod common;

use proptest::prelude::*;
use ramp_core::ingestion::{attach_extras, ingest_extras, ingest_table, to_records, PublishedRow};
use ramp_core::metrics::{aei, cohort_maxima, Dimension};
use ramp_core::orchestrator::RunRecord;
use ramp_core::reporting::{
    build_leaderboard, ols_fit, radar, rank, render, resource_ratio, Leaderboard, Predictor,
    ReportFormat,
};

fn published() -> Vec<RunRecord> {
    let data = common::crate_dir().join("data");
    let mut table = ingest_table(&data.join("leaderboard.csv")).unwrap();
    attach_extras(
        &mut table,
        &ingest_extras(&data.join("extras.csv")).unwrap(),
    );
    to_records(&table.rows, 60.0)
}

fn row(model: &str, mr: f64, cost: Option<f64>) -> PublishedRow {
    PublishedRow {
        model_id: model.to_string(),
        scores: vec![100.0, 50.0, 0.0, 0.0, 0.0, 0.0],
        mr_reported: mr,
        cost,
        extras: None,
    }
}

#[test]
fn published_rows_rank_in_table_order() {
    let entries = rank(&published());
    assert_eq!(entries.first().unwrap().model_id, "Opus-4.7");
    assert_eq!(entries.last().unwrap().model_id, "DS-Reasoner");
    assert_eq!(entries.len(), 15);
    let ranks: Vec<usize> = entries.iter().map(|e| e.rank).collect();
    assert_eq!(ranks, (1..=15).collect::<Vec<_>>());
}

#[test]
fn ties_break_on_cost_then_name() {
    let records = to_records(
        &[
            row("b", 50.0, Some(2.0)),
            row("a", 50.0, None),
            row("c", 50.0, Some(1.0)),
            row("d", 50.0, Some(1.0)),
        ],
        60.0,
    );
    let order: Vec<String> = rank(&records).into_iter().map(|e| e.model_id).collect();
    assert_eq!(order, vec!["c", "d", "b", "a"]);
    assert_eq!(rank(&records[..1])[0].rank, 1);
}

#[test]
fn radar_axes_equal_index_components() {
    let records = published();
    let maxima = cohort_maxima(&records).unwrap();
    let opus = records.iter().find(|r| r.model_id == "Opus-4.7").unwrap();
    let profile = radar(opus, &maxima).unwrap();
    let b = aei(opus, &maxima).unwrap();
    assert_eq!(
        [
            profile.stage,
            profile.reward,
            profile.time,
            profile.cost,
            profile.tokens
        ],
        b.components()
    );
    assert_eq!(b.components(), [100.0, 100.0, 0.0, 0.0, 0.0]);
    let glm = records.iter().find(|r| r.model_id == "GLM-4.6").unwrap();
    assert!(radar(glm, &maxima).is_err());
}

#[test]
fn ratios_of_identical_records_are_one() {
    let records = published();
    let opus = records.iter().find(|r| r.model_id == "Opus-4.7").unwrap();
    for d in [Dimension::Time, Dimension::Cost, Dimension::Tokens] {
        assert_eq!(resource_ratio(opus, opus, d).unwrap(), 1.0);
    }
    let glm = records.iter().find(|r| r.model_id == "GLM-4.6").unwrap();
    assert!(resource_ratio(opus, glm, Dimension::Cost).is_err());
}

#[test]
fn markdown_has_ranked_rows_and_baseline_footer() {
    let data = common::crate_dir().join("data");
    let table = ingest_table(&data.join("leaderboard.csv")).unwrap();
    let records = to_records(&table.rows, 60.0);
    let baseline = ramp_core::ingestion::to_record(table.baseline.as_ref().unwrap(), 60.0);
    let board = build_leaderboard(&records, Some(&baseline), "fixed");
    let md = render(&board, ReportFormat::Markdown).unwrap();
    let rows: Vec<&str> = md.lines().take_while(|l| !l.is_empty()).skip(2).collect();
    assert_eq!(rows.len(), 16);
    assert!(rows[15].starts_with("| - | Baseline |"));
    assert!(md.contains("| 8 | GLM-4.6 |") && md.contains("| 30.88 | --- |"));
    let csv = render(&board, ReportFormat::Csv).unwrap();
    assert!(csv
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("1,Opus-4.7,mode 2,100.00,"));
}

#[test]
fn rendering_is_deterministic_and_json_round_trips() {
    let board = build_leaderboard(&published(), None, "2026-01-01T00:00:00Z");
    for format in [
        ReportFormat::Json,
        ReportFormat::Csv,
        ReportFormat::Markdown,
    ] {
        assert_eq!(
            render(&board, format).unwrap(),
            render(&board, format).unwrap()
        );
    }
    let json = render(&board, ReportFormat::Json).unwrap();
    let parsed: Leaderboard = serde_json::from_str(&json).unwrap();
    assert_eq!(parsed, board);
}

#[test]
fn leaderboard_file_write_replaces_contents() {
    let dir = tempfile::TempDir::new().unwrap();
    let path = dir.path().join("leaderboard.json");
    ramp_core::reporting::write_report(&path, "old").unwrap();
    ramp_core::reporting::write_report(&path, "new").unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "new");
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

fn points() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.01f64..1000.0, 0.0f64..100.0), 3..20)
}

proptest! {
    #[test]
    fn rank_ignores_input_order(
        rows in prop::collection::vec((0u8..20, prop::option::of(0u8..5)), 1..12),
        seed in any::<u64>(),
    ) {
        let rows: Vec<PublishedRow> = rows
            .iter()
            .enumerate()
            .map(|(i, &(mr, cost))| row(&format!("m{i:02}"), mr as f64 * 5.0, cost.map(f64::from)))
            .collect();
        let records = to_records(&rows, 60.0);
        let mut shuffled = records.clone();
        let mut state = seed;
        for i in (1..shuffled.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (state >> 33) as usize % (i + 1));
        }
        prop_assert_eq!(rank(&records), rank(&shuffled));
    }

    #[test]
    fn r_squared_is_bounded_and_shift_invariant(pts in points(), shift in -50.0f64..50.0) {
        let Ok(fit) = ols_fit(&pts, Predictor::Log10Cost) else { return Ok(()); };
        prop_assert!((0.0..=1.0).contains(&fit.r_squared));
        let moved: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (x, y + shift)).collect();
        let refit = ols_fit(&moved, Predictor::Log10Cost).unwrap();
        prop_assert!((fit.r_squared - refit.r_squared).abs() < 1e-9);
        prop_assert!((fit.slope - refit.slope).abs() < 1e-9);
    }
}
