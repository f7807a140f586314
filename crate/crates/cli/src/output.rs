//! rows.csv, rates.csv, timings.csv and manifest.toml.

use std::path::Path;

use diffid_core::experiment::{fit_rate, SweepRow};
use serde::Serialize;

use crate::config::ConfigFile;
use crate::CliError;

pub const ROW_COLUMNS: [&str; 9] = [
    "epsilon",
    "gamma",
    "n_space",
    "n_time",
    "e_q",
    "e_u",
    "weighted_error",
    "iterations",
    "wall_seconds",
];

fn sci(v: f64) -> String {
    format!("{v:.6e}")
}

/// Fitted rates of `e_q` and `e_u` over the successful rows, if there are
/// at least two.
pub fn rates(rows: &[SweepRow]) -> (Option<f64>, Option<f64>) {
    let ok: Vec<&SweepRow> = rows.iter().filter(|r| r.succeeded()).collect();
    let fit = |f: fn(&SweepRow) -> f64| {
        let pts: Vec<(f64, f64)> = ok.iter().map(|r| (r.point.epsilon, f(r))).collect();
        fit_rate(&pts).ok()
    };
    (fit(|r| r.e_q), fit(|r| r.e_u))
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    seed: u64,
    config: &'a ConfigFile,
    rates: Rates,
    rows: Vec<ManifestRow>,
}

#[derive(Serialize)]
struct Rates {
    #[serde(skip_serializing_if = "Option::is_none")]
    e_q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    e_u: Option<f64>,
}

#[derive(Serialize)]
struct ManifestRow {
    epsilon: f64,
    gamma: f64,
    n_space: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_time: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tau: Option<f64>,
    e_q: f64,
    e_u: f64,
    weighted_error: f64,
    iterations: usize,
    evaluations: usize,
    termination: String,
    monotone: bool,
    feasible: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    failure: Option<String>,
}

fn csv_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn write_csv(path: &Path, header: &[&str], records: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for r in records {
        w.write_record(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| csv_error(path, e))
}

pub fn row_record(r: &SweepRow, wall_time: bool) -> Vec<String> {
    vec![
        sci(r.point.epsilon),
        sci(r.point.gamma),
        r.point.n_space.to_string(),
        r.point.n_time.map(|n| n.to_string()).unwrap_or_default(),
        sci(r.e_q),
        sci(r.e_u),
        sci(r.weighted_error),
        r.iterations.to_string(),
        sci(if wall_time { r.wall_seconds } else { 0.0 }),
    ]
}

/// Writes all four files. Only rows.csv (without `wall_time`), rates.csv
/// and manifest.toml are deterministic.
pub fn write_all(
    dir: &Path,
    config: &ConfigFile,
    rows: &[SweepRow],
    wall_time: bool,
    total_seconds: f64,
) -> Result<(), CliError> {
    let records: Vec<Vec<String>> = rows.iter().map(|r| row_record(r, wall_time)).collect();
    write_csv(&dir.join("rows.csv"), &ROW_COLUMNS, &records)?;

    let (rq, ru) = rates(rows);
    let show = |v: Option<f64>| v.map(sci).unwrap_or_else(|| "NaN".into());
    write_csv(
        &dir.join("rates.csv"),
        &["metric", "rate"],
        &[vec!["e_q".into(), show(rq)], vec!["e_u".into(), show(ru)]],
    )?;

    let mut timings: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![sci(r.point.epsilon), format!("{:.3}", r.wall_seconds)])
        .collect();
    timings.push(vec!["total".into(), format!("{total_seconds:.3}")]);
    write_csv(&dir.join("timings.csv"), &["epsilon", "wall_seconds"], &timings)?;

    let final_time = config
        .problem
        .as_ref()
        .and_then(|p| p.final_time);
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        seed: config.seed.unwrap_or(0),
        config,
        rates: Rates { e_q: rq, e_u: ru },
        rows: rows
            .iter()
            .map(|r| ManifestRow {
                epsilon: r.point.epsilon,
                gamma: r.point.gamma,
                n_space: r.point.n_space,
                n_time: r.point.n_time,
                tau: r.point.n_time.zip(final_time).map(|(n, t)| t / n as f64),
                e_q: r.e_q,
                e_u: r.e_u,
                weighted_error: r.weighted_error,
                iterations: r.iterations,
                evaluations: r.evaluations,
                termination: r.termination.map_or("none", |t| t.as_str()).into(),
                monotone: r.monotone,
                feasible: r.feasible,
                failure: r.failure.clone(),
            })
            .collect(),
    };
    let path = dir.join("manifest.toml");
    let text = toml::to_string(&manifest).map_err(|e| csv_error(&path, e))?;
    std::fs::write(&path, text).map_err(|e| csv_error(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use diffid_core::experiment::SweepPoint;

    fn row(epsilon: f64, e_q: f64, failure: Option<&str>) -> SweepRow {
        SweepRow {
            point: SweepPoint { epsilon, gamma: 1e-8, n_space: 10, n_time: Some(20) },
            e_q,
            e_u: e_q * e_q,
            weighted_error: 0.0,
            iterations: 3,
            evaluations: 5,
            termination: None,
            monotone: true,
            feasible: true,
            wall_seconds: 1.25,
            failure: failure.map(String::from),
            q_star: None,
        }
    }

    #[test]
    fn rates_skip_failed_rows() {
        let rows = [
            row(1e-1, 0.1f64.powf(0.5), None),
            row(1e-2, f64::NAN, Some("solver")),
            row(1e-3, 1e-3f64.powf(0.5), None),
        ];
        let (q, u) = rates(&rows);
        assert!((q.unwrap() - 0.5).abs() < 1e-12);
        assert!((u.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(rates(&rows[..2]), (None, None));
    }

    #[test]
    fn records_are_fixed_scientific() {
        let r = row(5e-2, 0.123456789, None);
        assert_eq!(
            row_record(&r, false),
            ["5.000000e-2", "1.000000e-8", "10", "20", "1.234568e-1", "1.524158e-2", "0.000000e0", "3", "0.000000e0"]
        );
        assert_eq!(row_record(&r, true)[8], "1.250000e0");
        assert_eq!(row_record(&row(1e-2, f64::NAN, Some("x")), false)[4], "NaN");
    }
}
