//! Batch evaluation over a manifest: one tab-separated row per model,
//! `cloud-path<TAB>gt-sidecar-path[<TAB>result-path]`. Relative paths
//! resolve against the manifest's directory. Rows with a result column
//! reuse that detection instead of re-running the pipeline.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use symcloud::error::{Error, Result};
use symcloud::evaluation::{
    evaluate_batch, precision_recall_fscore, pr_sweep, ErrorMetrics, EvalCase, EvalReport,
    EvalThresholds, SWEEP_STEPS,
};
use symcloud::io::read_cloud;
use symcloud::pipeline::detect;
use symcloud::synth::read_ground_truth;

use crate::config::RunConfig;
use crate::report::parse_result;

#[derive(Debug, Clone)]
pub struct ManifestRow {
    pub cloud: PathBuf,
    pub sidecar: PathBuf,
    pub result: Option<PathBuf>,
}

pub fn parse_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |raw: &str| {
        let p = PathBuf::from(raw);
        if p.is_absolute() {
            p
        } else {
            base.join(p)
        }
    };
    let mut rows = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim_end();
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split('\t').map(str::trim);
        let (Some(cloud), Some(sidecar)) = (cols.next(), cols.next()) else {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: "expected cloud-path<TAB>gt-sidecar-path".into(),
            });
        };
        if cloud.is_empty() || sidecar.is_empty() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: "empty path column".into(),
            });
        }
        rows.push(ManifestRow {
            cloud: resolve(cloud),
            sidecar: resolve(sidecar),
            result: cols.next().filter(|c| !c.is_empty()).map(resolve),
        });
    }
    if rows.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "manifest {} has no rows",
            path.display()
        )));
    }
    Ok(rows)
}

pub struct EvalOutcome {
    pub cases: Vec<EvalCase>,
    pub rows: Vec<(ErrorMetrics, bool)>,
    /// Report at the configured thresholds; failed rows count as misses.
    pub report: EvalReport,
    pub sweep: Vec<(f64, EvalReport)>,
    /// (cloud path, error) per failed row.
    pub failures: Vec<(String, String)>,
}

fn run_row(row: &ManifestRow, cfg: &RunConfig) -> Result<EvalCase> {
    let cloud = read_cloud(&row.cloud)?;
    let file = fs::File::open(&row.sidecar)?;
    let gt = read_ground_truth(BufReader::new(file), &row.sidecar.display().to_string())?;
    let est = match &row.result {
        Some(path) => parse_result(path)?.plane,
        None => detect(&cloud, &cfg.detect)?.plane,
    };
    Ok(EvalCase {
        id: row.cloud.display().to_string(),
        est,
        gt: gt.plane,
        gt_center: gt.center,
        cloud,
    })
}

/// A detection failure leaves the model's true plane unmatched.
fn add_misses(r: &EvalReport, failed: usize) -> EvalReport {
    precision_recall_fscore(
        r.true_positives,
        r.false_positives,
        r.false_negatives + failed,
    )
}

pub fn run_eval(rows: &[ManifestRow], cfg: &RunConfig) -> Result<EvalOutcome> {
    let n = rows.len();
    let cells: Vec<Mutex<Option<Result<EvalCase>>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = cfg.workers.clamp(1, n);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let out = run_row(&rows[i], cfg);
                *cells[i].lock().unwrap() = Some(out);
            });
        }
    });

    let mut cases = Vec::new();
    let mut failures = Vec::new();
    for (row, cell) in rows.iter().zip(cells) {
        match cell.into_inner().unwrap().expect("every row was visited") {
            Ok(case) => cases.push(case),
            Err(e) => failures.push((row.cloud.display().to_string(), e.to_string())),
        }
    }

    let thresholds = EvalThresholds::new(cfg.t_angle_deg.to_radians(), cfg.t_dist)?;
    let (per_case, report) = evaluate_batch(&cases, &thresholds);
    let report = add_misses(&report, failures.len());
    let sweep = pr_sweep(&cases, cfg.t_dist, SWEEP_STEPS)?
        .into_iter()
        .map(|(t_a, r)| (t_a, add_misses(&r, failures.len())))
        .collect();
    Ok(EvalOutcome {
        cases,
        rows: per_case,
        report,
        sweep,
        failures,
    })
}
