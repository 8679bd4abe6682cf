use icl_dyn::eval::{
    read_latency_csv, read_sweep_csv, write_latency, write_sweep, LatencyReport, LatencyRow, SweepReport, SweepRow,
    SVG_NS,
};
use icl_dyn::signal::{DatasetId, RandomizationProfile, SignalKind};
use std::collections::BTreeSet;

fn sweep() -> (SweepReport, [f64; 2]) {
    let band = RandomizationProfile::table(DatasetId::D2, SignalKind::Chirp).freq;
    let mut rows = Vec::new();
    for (i, model) in ["RoboMorph", "Diffuser", "CDT"].iter().enumerate() {
        for f in [0.1, 0.3, 0.7] {
            rows.push(SweepRow {
                model: model.to_string(),
                freq_hz: f,
                signal: SignalKind::Chirp,
                rmse_mean: 0.1 * (i + 1) as f64 + f * f,
                rmse_std: 0.01 / 3.0,
                n_scenarios: 100,
                in_distribution: band[0] <= f && f <= band[1],
            });
        }
    }
    (SweepReport { rows, id_band: Some(band) }, band)
}

fn polylines<'a>(doc: &'a roxmltree::Document) -> Vec<roxmltree::Node<'a, 'a>> {
    doc.descendants().filter(|n| n.has_tag_name((SVG_NS, "polyline"))).collect()
}

#[test]
fn sweep_csv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let (report, _) = sweep();
    let (csv, _) = write_sweep(&report, dir.path(), "sweep").unwrap();
    assert_eq!(read_sweep_csv(&csv).unwrap(), report.rows);
    let header = std::fs::read_to_string(&csv).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "model,freq_hz,signal,rmse_mean,rmse_std,n_scenarios,in_distribution");
}

#[test]
fn sweep_svg_has_one_line_per_model_and_the_training_band() {
    let dir = tempfile::tempdir().unwrap();
    let (report, band) = sweep();
    let (_, svg) = write_sweep(&report, dir.path(), "sweep").unwrap();
    let text = std::fs::read_to_string(svg).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap();
    assert!(doc.root_element().has_tag_name((SVG_NS, "svg")));

    let lines = polylines(&doc);
    let models: BTreeSet<&str> = lines.iter().map(|n| n.attribute("data-model").unwrap()).collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(models, BTreeSet::from(["CDT", "Diffuser", "RoboMorph"]));
    for l in &lines {
        assert_eq!(l.attribute("points").unwrap().split_whitespace().count(), 3);
    }

    let rects: Vec<_> = doc.descendants().filter(|n| n.attribute("class") == Some("id-band")).collect();
    assert_eq!(rects.len(), 1);
    let edge = |k: &str| rects[0].attribute(k).unwrap().parse::<f64>().unwrap();
    assert_eq!([edge("data-lo"), edge("data-hi")], band);
}

#[test]
fn sweep_without_band_draws_no_band() {
    let dir = tempfile::tempdir().unwrap();
    let (mut report, _) = sweep();
    report.id_band = None;
    let (_, svg) = write_sweep(&report, dir.path(), "ood").unwrap();
    let text = std::fs::read_to_string(svg).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap();
    assert!(doc.descendants().all(|n| n.attribute("class") != Some("id-band")));
}

#[test]
fn latency_report_round_trips_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let row = |model: &str, k: usize, ms: f64| LatencyRow {
        model: model.into(),
        warm_start_k: k,
        wall_time_mean_ms: ms,
        wall_time_std_ms: ms / 10.0,
        rmse_mean: 1.0 / (k + 1) as f64,
    };
    let report = LatencyReport::new(vec![row("CDT", 100, 40.0), row("CDT", 5, 2.0), row("CDT", 25, 10.0), row("RoboMorph", 0, 0.3)]);
    assert_eq!(report.rows.iter().map(|r| r.warm_start_k).collect::<Vec<_>>(), [0, 5, 25, 100]);
    let (csv, svg) = write_latency(&report, dir.path(), "latency").unwrap();
    assert_eq!(read_latency_csv(&csv).unwrap(), report.rows);
    let text = std::fs::read_to_string(svg).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap();
    let lines = polylines(&doc);
    assert_eq!(lines.len(), 2);
    let cdt = lines.iter().find(|n| n.attribute("data-model") == Some("CDT")).unwrap();
    assert_eq!(cdt.attribute("points").unwrap().split_whitespace().count(), 3);
}

#[test]
fn report_writing_is_deterministic() {
    let (report, _) = sweep();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_sweep(&report, a.path(), "s").unwrap();
    write_sweep(&report, b.path(), "s").unwrap();
    for f in ["s.csv", "s.svg"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
    }
}
