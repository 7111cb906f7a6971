//! Figures and the summary table of a finished run.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::Path;

use crate::error::Result;
use crate::pipeline::FitSummary;
use crate::plot::{Chart, Series, Style};
use crate::tables::*;

pub const CATEGORIZATION_SVG: &str = "categorization.svg";
pub const RESPONSES_SVG: &str = "responses.svg";
pub const X50_SVG: &str = "x50.svg";
pub const INVERSE_STEEPNESS_SVG: &str = "inverse_steepness.svg";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const SUMMARY_TXT: &str = "summary.txt";

fn categorization_chart(cat: &[CategorizationRow]) -> Chart {
    let mut chart = Chart::new(
        "Categorization",
        "stimulus",
        "proportion upper category",
    );
    chart.y_range = Some((-0.05, 1.05));
    let mut by_group: BTreeMap<&str, BTreeMap<i32, (f64, u32, u32)>> = BTreeMap::new();
    for c in cat {
        let e = by_group
            .entry(&c.group)
            .or_default()
            .entry(c.stimulus_id)
            .or_insert((c.position, 0, 0));
        e.1 += c.n;
        e.2 += c.n_upper;
    }
    for (group, cells) in by_group {
        chart.series.push(Series::new(
            group,
            Style::LinePoints,
            cells
                .values()
                .map(|&(x, n, k)| (x, k as f64 / n.max(1) as f64)),
        ));
    }
    chart
}

fn responses_chart(
    continuum: &ContinuumManifest,
    subjects: &[SubjectRow],
    responses: &[ResponseRow],
) -> Chart {
    let mut chart = Chart::new("Mean mimicry responses", "F2 (Hz)", "F1 (Hz)");
    chart.invert_x = true;
    chart.invert_y = true;
    let group_of: BTreeMap<u32, &str> = subjects.iter().map(|s| (s.subject, s.group.as_str())).collect();
    for g in &continuum.groups {
        let mut sums: BTreeMap<i32, (f64, f64, f64)> = BTreeMap::new();
        for r in responses
            .iter()
            .filter(|r| group_of.get(&r.subject) == Some(&g.group.as_str()))
        {
            let e = sums.entry(r.stimulus_id).or_insert((0.0, 0.0, 0.0));
            e.0 += r.f1_hz;
            e.1 += r.f2_hz;
            e.2 += 1.0;
        }
        let mut targets = Series::new(format!("{} targets", g.group), Style::LinePoints, []);
        targets.points = g
            .stimuli
            .iter()
            .map(|s| (s.target.f2(), s.target.f1(), Some(s.id.to_string())))
            .collect();
        let mut means = Series::new(format!("{} responses", g.group), Style::LinePoints, []);
        means.points = sums
            .iter()
            .map(|(id, (f1, f2, n))| (f2 / n, f1 / n, Some(id.to_string())))
            .collect();
        chart.series.push(targets);
        chart.series.push(means);
    }
    chart
}

fn limen_chart(rows: &[JpdRow], title: &str, y_label: &str, value: fn(&JpdRow) -> Option<f64>) -> Chart {
    let mut chart = Chart::new(title, "reference stimulus", y_label);
    let mut s = Series::new("converged fits", Style::LinePoints, []);
    s.points = rows
        .iter()
        .filter(|r| r.row == JpdRowKind::Reference && r.usable)
        .filter_map(|r| value(r).map(|v| (r.reference_stim as f64, v, Some(r.reference_stim.to_string()))))
        .collect();
    chart.series.push(s);
    chart
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |x| format!("{x:.2}"))
}

fn summary_text(summary: &FitSummary, rows: &[JpdRow]) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "Just producible difference limens (mels)");
    let _ = writeln!(t);
    let line = |t: &mut String, name: &str, b: &Option<crate::pipeline::Bound>| {
        let _ = match b {
            Some(b) => writeln!(
                t,
                "{name:<12} {:>8.2}   reference stimulus {}   inverse steepness {}",
                b.x50_mels,
                b.reference_stim,
                fmt_opt(b.inverse_steepness_mels)
            ),
            None => writeln!(t, "{name:<12} {:>8}", "n/a"),
        };
    };
    line(&mut t, "Upper bound", &summary.upper);
    line(&mut t, "Lower bound", &summary.lower);
    let _ = writeln!(t);
    if let Some((lo, hi)) = summary.summary_range {
        let _ = writeln!(t, "Bounds taken over references {lo} to {hi}.");
    }
    if let Some(rate) = summary.same_stimulus_rate {
        let _ = writeln!(t, "Same-stimulus difference rate: {rate:.3}");
    }
    if let Some(o) = &summary.ordering {
        let _ = writeln!(
            t,
            "Prototype peak / boundary valley ordering: {}",
            if o.holds { "holds" } else { "does not hold" }
        );
    }
    let _ = writeln!(t);
    let _ = writeln!(t, "{:>9} {:>10} {:>10} {:>8} {:>14}", "reference", "X50", "X75-X50", "n", "status");
    for r in rows.iter().filter(|r| r.row == JpdRowKind::Reference) {
        let status = serde_json::to_value(r.status)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default();
        let _ = writeln!(
            t,
            "{:>9} {:>10} {:>10} {:>8} {:>14}{}",
            r.reference_stim,
            fmt_opt(r.x50_mels),
            fmt_opt(r.inverse_steepness_mels),
            r.n,
            status,
            if r.in_summary { "" } else { "  (outside summary range)" }
        );
    }
    t
}

/// Writes the four figures and the summary into `report/` and returns
/// their paths relative to the run directory.
pub fn render_report(run_dir: &Path) -> Result<Vec<String>> {
    let dir = RunDir::new(run_dir);
    let continuum: ContinuumManifest = read_json(&dir.file(CONTINUUM))?;
    let subjects: Vec<SubjectRow> = read_csv(&dir.file(SUBJECTS))?;
    let responses: Vec<ResponseRow> = read_csv(&dir.file(RESPONSES))?;
    let jpd: Vec<JpdRow> = read_csv(&dir.file(JPD))?;
    let summary: FitSummary = read_json(&dir.file(FIT_SUMMARY))?;
    let categorization: Vec<CategorizationRow> = if dir.file(CATEGORIZATION).is_file() {
        read_csv(&dir.file(CATEGORIZATION))?
    } else {
        Vec::new()
    };

    let charts = [
        (CATEGORIZATION_SVG, categorization_chart(&categorization)),
        (RESPONSES_SVG, responses_chart(&continuum, &subjects, &responses)),
        (
            X50_SVG,
            limen_chart(&jpd, "Just producible difference limen", "X50 (mels)", |r| r.x50_mels),
        ),
        (
            INVERSE_STEEPNESS_SVG,
            limen_chart(&jpd, "Inverse steepness", "X75 - X50 (mels)", |r| {
                r.inverse_steepness_mels
            }),
        ),
    ];
    let mut written = Vec::new();
    for (name, chart) in &charts {
        write_text(&dir.report(name), &chart.to_svg())?;
        written.push(format!("{REPORT_DIR}/{name}"));
    }

    let bound_row = |name: &str, b: &Option<crate::pipeline::Bound>| SummaryRow {
        bound: name.into(),
        reference_stim: b.as_ref().map(|b| b.reference_stim),
        jpd_mels: b.as_ref().map(|b| b.x50_mels),
        inverse_steepness_mels: b.as_ref().and_then(|b| b.inverse_steepness_mels),
    };
    write_csv(
        &dir.report(SUMMARY_CSV),
        &[bound_row("upper", &summary.upper), bound_row("lower", &summary.lower)],
    )?;
    written.push(format!("{REPORT_DIR}/{SUMMARY_CSV}"));
    write_text(&dir.report(SUMMARY_TXT), &summary_text(&summary, &jpd))?;
    written.push(format!("{REPORT_DIR}/{SUMMARY_TXT}"));
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn empty_run_directory_is_missing_intermediates() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            render_report(dir.path()),
            Err(Error::MissingIntermediate(_))
        ));
    }

    #[test]
    fn categorization_chart_pools_subjects() {
        let row = |subject, id, n_upper| CategorizationRow {
            group: "g".into(),
            subject,
            stimulus_id: id,
            position: id as f64,
            n: 6,
            n_upper,
        };
        let chart = categorization_chart(&[row(1, 1, 0), row(2, 1, 3), row(1, 2, 6), row(2, 2, 6)]);
        let pts = &chart.series[0].points;
        assert_eq!(pts[0].1, 0.25);
        assert_eq!(pts[1].1, 1.0);
    }
}
