//! Report files: line-delimited JSON records and SVG heatmaps.
//!
//! Every JSONL file starts with a header line carrying [`SCHEMA_VERSION`] and
//! the record kind, so readers can reject files they do not understand.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use plotters::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::checkpoint::write_atomic;
use crate::error::{Error, Result};
use crate::tournament::{heatmap, metrics, Heatmap, HeatmapMetric, MetricsRow, MetricsTable, PairResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub schema_version: u32,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Config hash and seed of the run that produced a file.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Stamp {
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
}

impl Stamp {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        Stamp { config_hash: Some(config_hash.into()), seed: Some(seed) }
    }
}

/// Serializes a header and one record per line.
pub fn to_jsonl<T: Serialize>(kind: &str, records: &[T]) -> Result<String> {
    to_jsonl_stamped(kind, &Stamp::default(), records)
}

pub fn to_jsonl_stamped<T: Serialize>(kind: &str, stamp: &Stamp, records: &[T]) -> Result<String> {
    let header = Header {
        schema_version: SCHEMA_VERSION,
        kind: kind.to_owned(),
        config_hash: stamp.config_hash.clone(),
        seed: stamp.seed,
    };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, kind: &str, records: &[T]) -> Result<()> {
    write_atomic(path, to_jsonl(kind, records)?.as_bytes())
}

pub fn write_jsonl_stamped<T: Serialize>(path: &Path, kind: &str, stamp: &Stamp, records: &[T]) -> Result<()> {
    write_atomic(path, to_jsonl_stamped(kind, stamp, records)?.as_bytes())
}

/// The header line of a JSONL file.
pub fn read_header(path: &Path) -> Result<Header> {
    let file = fs::File::open(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let first = BufReader::new(file)
        .lines()
        .next()
        .ok_or_else(|| Error::Integrity(format!("{} is empty", path.display())))??;
    Ok(serde_json::from_str(&first)?)
}

/// Reads records written by [`write_jsonl`], checking the header.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines.next().ok_or_else(|| Error::Integrity(format!("{} is empty", path.display())))??;
    let header: Header = serde_json::from_str(&first)?;
    if header.schema_version != SCHEMA_VERSION || header.kind != kind {
        return Err(Error::Integrity(format!(
            "{}: expected {kind} v{SCHEMA_VERSION}, found {} v{}",
            path.display(),
            header.kind,
            header.schema_version
        )));
    }
    lines.filter(|l| l.as_ref().map_or(true, |l| !l.is_empty())).map(|l| Ok(serde_json::from_str(&l?)?)).collect()
}

fn title(metric: HeatmapMetric) -> &'static str {
    match metric {
        HeatmapMetric::OwnPoints => "Points scored by row agent",
        HeatmapMetric::JointPoints => "Joint points",
        HeatmapMetric::WalkawayPct => "Walkaway %",
    }
}

/// White to dark blue over `[lo, hi]`.
fn shade(v: f64, lo: f64, hi: f64) -> RGBColor {
    let t = if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.5 };
    let mix = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    RGBColor(mix(247.0, 8.0), mix(251.0, 48.0), mix(255.0, 107.0))
}

/// Renders a heatmap as a standalone SVG document.
pub fn heatmap_svg(h: &Heatmap) -> Result<String> {
    let n = h.agents.len();
    let (cell, left, top) = (90i32, 150i32, 60i32);
    let size = ((left + cell * n as i32 + 20) as u32, (top + cell * n as i32 + 20) as u32);
    let (lo, hi) = match h.metric {
        HeatmapMetric::WalkawayPct => (0.0, 100.0),
        HeatmapMetric::OwnPoints => (0.0, 10.0),
        HeatmapMetric::JointPoints => (0.0, 20.0),
    };
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, size).into_drawing_area();
        let err = |e: DrawingAreaErrorKind<_>| Error::Domain(format!("plotting failed: {e}"));
        root.fill(&WHITE).map_err(err)?;
        let font = ("sans-serif", 14).into_font();
        root.draw(&Text::new(title(h.metric), (left, 20), font.clone())).map_err(err)?;
        for (i, name) in h.agents.iter().enumerate() {
            let y = top + cell * i as i32 + cell / 2;
            root.draw(&Text::new(name.as_str(), (8, y), font.clone())).map_err(err)?;
            let x = left + cell * i as i32 + 4;
            root.draw(&Text::new(name.as_str(), (x, top - 12), ("sans-serif", 11).into_font())).map_err(err)?;
        }
        for (i, row) in h.cells.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let (x, y) = (left + cell * j as i32, top + cell * i as i32);
                let color = shade(v, lo, hi);
                root.draw(&Rectangle::new([(x, y), (x + cell, y + cell)], color.filled())).map_err(err)?;
                root.draw(&Rectangle::new([(x, y), (x + cell, y + cell)], BLACK.stroke_width(1))).map_err(err)?;
                let ink = if shade(v, lo, hi).1 < 140 { WHITE } else { BLACK };
                let label = format!("{v:.1}");
                root.draw(&Text::new(label, (x + cell / 3, y + cell / 2), font.clone().color(&ink))).map_err(err)?;
            }
        }
        root.present().map_err(err)?;
    }
    Ok(svg)
}

pub fn write_heatmap_svg(path: &Path, h: &Heatmap) -> Result<()> {
    write_atomic(path, heatmap_svg(h)?.as_bytes())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRow {
    pub agent: String,
    pub cells: Vec<f64>,
}

/// Everything a tournament emits, as written to disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TournamentReport {
    pub included: MetricsTable,
    pub excluded: MetricsTable,
    pub heatmaps: Vec<Heatmap>,
}

impl TournamentReport {
    pub fn build(results: &[PairResult], agents: &[String]) -> Result<TournamentReport> {
        Ok(TournamentReport {
            included: metrics(results, true)?,
            excluded: metrics(results, false)?,
            heatmaps: HeatmapMetric::ALL.iter().map(|&m| heatmap(results, agents, m)).collect::<Result<_>>()?,
        })
    }
}

pub const PAIRS_FILE: &str = "pairs.jsonl";
pub const METRICS_FILE: &str = "metrics.jsonl";

fn heatmap_file(metric: HeatmapMetric, ext: &str) -> String {
    format!("heatmap_{}.{ext}", metric.name())
}

/// Writes pair results with all episodes, the metrics table (included rows,
/// then excluded rows) and one matrix file plus SVG per heatmap.
pub fn emit_tournament(dir: &Path, results: &[PairResult], agents: &[String], stamp: &Stamp) -> Result<TournamentReport> {
    let report = TournamentReport::build(results, agents)?;
    write_jsonl_stamped(&dir.join(PAIRS_FILE), "pair_result", stamp, results)?;
    write_report(dir, &report, stamp)?;
    Ok(report)
}

/// Writes the metrics table and heatmaps of an already built report.
pub fn write_report(dir: &Path, report: &TournamentReport, stamp: &Stamp) -> Result<()> {
    write_metrics(&dir.join(METRICS_FILE), report, stamp)?;
    for h in &report.heatmaps {
        let rows: Vec<HeatmapRow> =
            h.agents.iter().zip(&h.cells).map(|(a, c)| HeatmapRow { agent: a.clone(), cells: c.clone() }).collect();
        let kind = format!("heatmap:{}", h.metric.name());
        write_jsonl_stamped(&dir.join(heatmap_file(h.metric, "jsonl")), &kind, stamp, &rows)?;
        write_heatmap_svg(&dir.join(heatmap_file(h.metric, "svg")), h)?;
    }
    Ok(())
}

fn write_metrics(path: &Path, report: &TournamentReport, stamp: &Stamp) -> Result<()> {
    let rows: Vec<(bool, &MetricsRow)> = [&report.included, &report.excluded]
        .iter()
        .flat_map(|t| t.rows.iter().map(move |r| (t.include_walkaways, r)))
        .collect();
    let records: Vec<serde_json::Value> = rows
        .iter()
        .map(|(incl, r)| {
            let mut v = serde_json::to_value(r).expect("rows serialize");
            v["include_walkaways"] = (*incl).into();
            v
        })
        .collect();
    write_jsonl_stamped(path, "metrics", stamp, &records)
}

/// Reads a report directory back: pair results and the emitted tables.
pub fn load_tournament(dir: &Path) -> Result<(Vec<PairResult>, TournamentReport)> {
    let pairs: Vec<PairResult> = read_jsonl(&dir.join(PAIRS_FILE), "pair_result")?;
    let records: Vec<serde_json::Value> = read_jsonl(&dir.join(METRICS_FILE), "metrics")?;
    let mut included = MetricsTable { include_walkaways: true, rows: Vec::new() };
    let mut excluded = MetricsTable { include_walkaways: false, rows: Vec::new() };
    for mut v in records {
        let incl = v.get("include_walkaways").and_then(serde_json::Value::as_bool).unwrap_or(true);
        if let Some(o) = v.as_object_mut() {
            o.remove("include_walkaways");
        }
        let row: MetricsRow = serde_json::from_value(v)?;
        if incl { &mut included } else { &mut excluded }.rows.push(row);
    }
    let mut heatmaps = Vec::new();
    for metric in HeatmapMetric::ALL {
        let rows: Vec<HeatmapRow> = read_jsonl(&dir.join(heatmap_file(metric, "jsonl")), &format!("heatmap:{}", metric.name()))?;
        heatmaps.push(Heatmap {
            metric,
            agents: rows.iter().map(|r| r.agent.clone()).collect(),
            cells: rows.into_iter().map(|r| r.cells).collect(),
        });
    }
    Ok((pairs, TournamentReport { included, excluded, heatmaps }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Row {
        x: u32,
    }

    #[test]
    fn jsonl_round_trip_checks_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        write_jsonl(&path, "rows", &[Row { x: 1 }, Row { x: 2 }]).unwrap();
        let back: Vec<Row> = read_jsonl(&path, "rows").unwrap();
        assert_eq!(back, vec![Row { x: 1 }, Row { x: 2 }]);
        assert!(matches!(read_jsonl::<Row>(&path, "other"), Err(Error::Integrity(_))));
    }

    #[test]
    fn svg_has_one_cell_per_pair() {
        let h = Heatmap {
            metric: HeatmapMetric::WalkawayPct,
            agents: vec!["a".into(), "b".into()],
            cells: vec![vec![0.0, 50.0], vec![50.0, 100.0]],
        };
        let svg = heatmap_svg(&h).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("100.0") && svg.contains("Walkaway"));
        assert_eq!(heatmap_svg(&h).unwrap(), svg);
    }

    #[test]
    fn tournament_reports_reload_exactly() {
        use crate::selfplay::Script;
        use crate::tournament::{run_grid, Entrant, TournamentConfig};
        let entrants = [Entrant::script("eq", Script::EqualSplit), Entrant::script("acc", Script::Accommodating)];
        let cfg = TournamentConfig { scenarios: 12, ..Default::default() };
        let results = run_grid(&entrants, &cfg).unwrap();
        let agents: Vec<String> = entrants.iter().map(|e| e.id.clone()).collect();
        let dir = tempfile::tempdir().unwrap();
        let stamp = Stamp::new(cfg.hash(), cfg.seed);
        let report = emit_tournament(dir.path(), &results, &agents, &stamp).unwrap();
        let (pairs, back) = load_tournament(dir.path()).unwrap();
        assert_eq!(pairs, results);
        assert_eq!(back, report);
        assert_eq!(TournamentReport::build(&pairs, &agents).unwrap(), report);
        assert!(dir.path().join("heatmap_joint_points.svg").exists());
        let header = read_header(&dir.path().join(METRICS_FILE)).unwrap();
        assert_eq!((header.config_hash, header.seed), (stamp.config_hash, stamp.seed));
    }
}
