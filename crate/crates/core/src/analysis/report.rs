//! Report files: `report.json`, `clusters.json` and one CSV per table,
//! plus optional long-format plot data.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{AlignmentReport, AnalysisError, DetectorSimilarity, REPORT_VERSION};

pub const REPORT_JSON: &str = "report.json";
/// The seven table files, always written.
pub const REPORT_FILES: [&str; 7] = [
    "similarity_matrix.csv",
    "clusters.json",
    "alignment.csv",
    "category_report.csv",
    "sweep_grid.csv",
    "selection_stats.csv",
    "text_scores.csv",
];
pub const PLOT_FILES: [&str; 4] = [
    "plot_similarity_long.csv",
    "plot_category_methods_long.csv",
    "plot_sweep_long.csv",
    "plot_selection_long.csv",
];

fn num(v: f64) -> String {
    format!("{v}")
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s.into_bytes()
}

fn write(dir: &Path, name: &str, bytes: &[u8], written: &mut Vec<PathBuf>) -> Result<(), AnalysisError> {
    let path = dir.join(name);
    crate::corpus::write_file_atomic(&path, bytes)?;
    written.push(path);
    Ok(())
}

#[derive(Serialize)]
struct ClustersFile<'a> {
    version: u32,
    tau: f64,
    detectors: Vec<ClusterEntry<'a>>,
}

#[derive(Serialize)]
struct ClusterEntry<'a> {
    detector_id: &'a str,
    clusters: &'a [super::MethodCluster],
}

fn similarity_csv(sims: &[DetectorSimilarity]) -> Vec<u8> {
    let methods: BTreeSet<&String> = sims.iter().flat_map(|s| &s.matrix.method_ids).collect();
    let mut header = vec!["detector", "method", "n_images"];
    header.extend(methods.iter().map(|m| m.as_str()));
    let rows = sims.iter().flat_map(|s| {
        let methods = &methods;
        s.matrix.method_ids.iter().enumerate().map(move |(i, m)| {
            let mut row = vec![s.detector_id.clone(), m.clone(), s.matrix.n_images.to_string()];
            row.extend(methods.iter().map(|col| {
                s.matrix
                    .method_ids
                    .iter()
                    .position(|x| x == *col)
                    .map_or(String::new(), |j| num(s.matrix.scores[i][j]))
            }));
            row
        })
    });
    csv_bytes(&header, rows)
}

/// Writes `report.json`, the seven table files and, with `plot_data`, the
/// long-format plot files into `dir`. Returns the written paths.
pub fn write_report(dir: &Path, report: &AlignmentReport, plot_data: bool) -> Result<Vec<PathBuf>, AnalysisError> {
    std::fs::create_dir_all(dir).map_err(|e| AnalysisError::io(dir, e))?;
    let mut written = Vec::new();
    write(dir, REPORT_JSON, &json_bytes(report), &mut written)?;
    write(dir, REPORT_FILES[0], &similarity_csv(&report.similarity), &mut written)?;
    let clusters = ClustersFile {
        version: REPORT_VERSION,
        tau: report.tau,
        detectors: report
            .similarity
            .iter()
            .map(|s| ClusterEntry {
                detector_id: &s.detector_id,
                clusters: &s.clusters,
            })
            .collect(),
    };
    write(dir, REPORT_FILES[1], &json_bytes(&clusters), &mut written)?;

    let methods: BTreeSet<&String> = report.alignment.iter().flat_map(|r| r.all_scores.keys()).collect();
    let mut header = vec!["image_id", "detector", "best_method", "best_score"];
    header.extend(methods.iter().map(|m| m.as_str()));
    let rows = report.alignment.iter().map(|r| {
        let mut row = vec![r.image_id.clone(), r.detector_id.clone(), r.best_method.clone(), num(r.best_score)];
        row.extend(methods.iter().map(|m| r.all_scores.get(*m).map_or(String::new(), |&v| num(v))));
        row
    });
    write(dir, REPORT_FILES[2], &csv_bytes(&header, rows), &mut written)?;

    let rows = report.category_reports.iter().map(|c| {
        vec![
            c.stratum.to_string(),
            c.detector_id.clone(),
            c.best_method.clone(),
            num(c.mean_best_score),
            c.image_count.to_string(),
        ]
    });
    write(
        dir,
        REPORT_FILES[3],
        &csv_bytes(&["stratum", "detector", "best_method", "mean_best_score", "image_count"], rows),
        &mut written,
    )?;

    let rows = report.sweep.iter().map(|c| {
        vec![
            num(c.radius_frac),
            num(c.alpha),
            c.detector_id.clone(),
            num(c.mean_best_score),
            c.best_method.clone(),
            c.image_count.to_string(),
        ]
    });
    write(
        dir,
        REPORT_FILES[4],
        &csv_bytes(
            &["radius_frac", "alpha", "detector", "mean_best_score", "best_method", "image_count"],
            rows,
        ),
        &mut written,
    )?;

    let rows = report.selection_stats.iter().map(|s| {
        vec![
            s.stratum.to_string(),
            s.item.to_string(),
            num(s.fraction),
            s.responses_with_item.to_string(),
            s.n_responses.to_string(),
            num(s.click_share),
            s.clicks_with_item.to_string(),
            s.n_clicks.to_string(),
        ]
    });
    write(
        dir,
        REPORT_FILES[5],
        &csv_bytes(
            &[
                "stratum",
                "item",
                "fraction",
                "responses_with_item",
                "n_responses",
                "click_share",
                "clicks_with_item",
                "n_clicks",
            ],
            rows,
        ),
        &mut written,
    )?;

    let rows = report.text_scores.iter().map(|t| {
        vec![
            t.category.clone(),
            t.label.clone(),
            t.umbrella.to_string(),
            t.best_score.map_or(String::new(), num),
            t.best_detector.clone().unwrap_or_default(),
            t.best_method.clone().unwrap_or_default(),
            t.image_count.to_string(),
        ]
    });
    write(
        dir,
        REPORT_FILES[6],
        &csv_bytes(
            &["category", "label", "umbrella", "best_score", "best_detector", "best_method", "image_count"],
            rows,
        ),
        &mut written,
    )?;

    if plot_data {
        write_plot_data(dir, report, &mut written)?;
    }
    Ok(written)
}

fn write_plot_data(dir: &Path, report: &AlignmentReport, written: &mut Vec<PathBuf>) -> Result<(), AnalysisError> {
    let rows = report.similarity.iter().flat_map(|s| {
        let ids = &s.matrix.method_ids;
        ids.iter().enumerate().flat_map(move |(i, a)| {
            ids.iter()
                .enumerate()
                .map(move |(j, b)| vec![s.detector_id.clone(), a.clone(), b.clone(), num(s.matrix.scores[i][j])])
        })
    });
    write(
        dir,
        PLOT_FILES[0],
        &csv_bytes(&["detector", "method_a", "method_b", "score"], rows),
        written,
    )?;

    let rows = report.category_reports.iter().flat_map(|c| {
        c.mean_scores.iter().map(move |(m, s)| {
            vec![
                c.detector_id.clone(),
                c.stratum.to_string(),
                m.clone(),
                num(*s),
                c.wins.get(m).copied().unwrap_or(0).to_string(),
            ]
        })
    });
    write(
        dir,
        PLOT_FILES[1],
        &csv_bytes(&["detector", "stratum", "method", "mean_score", "wins"], rows),
        written,
    )?;

    let rows = report.sweep.iter().map(|c| {
        vec![
            c.detector_id.clone(),
            num(c.radius_frac),
            num(c.alpha),
            num(c.mean_best_score),
            c.best_method.clone(),
        ]
    });
    write(
        dir,
        PLOT_FILES[2],
        &csv_bytes(&["detector", "radius_frac", "alpha", "mean_best_score", "best_method"], rows),
        written,
    )?;

    let rows = report.selection_stats.iter().flat_map(|s| {
        [("fraction", s.fraction), ("click_share", s.click_share)]
            .map(|(measure, v)| vec![s.stratum.to_string(), s.item.to_string(), measure.to_string(), num(v)])
    });
    write(
        dir,
        PLOT_FILES[3],
        &csv_bytes(&["stratum", "item", "measure", "value"], rows),
        written,
    )
}

/// Reads a `report.json`, rejecting newer versions.
pub fn read_report(path: &Path) -> Result<AlignmentReport, AnalysisError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            AnalysisError::MissingArtifact {
                what: format!("analysis report ({})", path.display()),
                hint: "run `xalign analyze <corpus>` first".into(),
            }
        } else {
            AnalysisError::io(path, e)
        }
    })?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| AnalysisError::InvalidInput(format!("{}: {e}", path.display())))?;
    let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
    if version > REPORT_VERSION as u64 {
        return Err(AnalysisError::InvalidInput(format!(
            "{} has report version {version}; this build reads <= {REPORT_VERSION}",
            path.display()
        )));
    }
    serde_json::from_value(value).map_err(|e| AnalysisError::InvalidInput(format!("{}: {e}", path.display())))
}
