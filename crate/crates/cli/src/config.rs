//! Run configuration: defaults, key=value config file, flag overrides.
//! Flags win over the file; the file wins over defaults.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use symcloud::error::{Error, Result};
use symcloud::estimator::AnnealSchedule;
use symcloud::pipeline::DetectConfig;

/// Everything a run needs beyond the pipeline stages themselves.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub detect: DetectConfig,
    /// Evaluation angle threshold, degrees.
    pub t_angle_deg: f64,
    /// Evaluation center-distance threshold, model units.
    pub t_dist: f64,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            detect: DetectConfig::default(),
            t_angle_deg: 10.0,
            t_dist: symcloud::evaluation::DEFAULT_T_D,
            workers: 1,
        }
    }
}

/// Flags shared by the compute subcommands; every field overrides one
/// config key of the same (kebab-case) name.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// key=value config file; flags given here still win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// kNN graph degree for the Laplacian.
    #[arg(long)]
    pub neighbors: Option<usize>,
    /// Number of eigenpairs.
    #[arg(long = "k-eig")]
    pub k_eig: Option<usize>,
    /// HKS diffusion-time samples.
    #[arg(long = "p-times")]
    pub p_times: Option<usize>,
    /// Sign-vector coordinates.
    #[arg(long = "k-signs")]
    pub k_signs: Option<usize>,
    /// Correspondence pairs to select.
    #[arg(long)]
    pub q: Option<usize>,
    /// Identical-sign penalty in the cost matrix.
    #[arg(long = "penalty-b")]
    pub penalty_b: Option<f64>,
    /// L2E kernel bandwidth.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Anneal sigma across outer iterations.
    #[arg(long)]
    pub anneal: Option<bool>,
    /// Evaluation angle threshold, degrees.
    #[arg(long = "t-angle-deg")]
    pub t_angle_deg: Option<f64>,
    /// Evaluation center-distance threshold.
    #[arg(long = "t-dist")]
    pub t_dist: Option<f64>,
    /// Parallel rows in batch evaluation.
    #[arg(long)]
    pub workers: Option<usize>,
}

fn bad(msg: String) -> Error {
    Error::InvalidParameter(msg)
}

fn parse_as<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| bad(format!("config key {key}: {e}")))
}

fn apply_key(cfg: &mut RunConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "seed" => cfg.detect.estimator.seed = parse_as(key, value)?,
        "neighbors" => cfg.detect.neighbors = parse_as(key, value)?,
        "k-eig" => cfg.detect.k_eig = parse_as(key, value)?,
        "p-times" => cfg.detect.p_times = parse_as(key, value)?,
        "k-signs" => cfg.detect.k_signs = parse_as(key, value)?,
        "q" => cfg.detect.q = Some(parse_as(key, value)?),
        "penalty-b" => cfg.detect.penalty_b = parse_as(key, value)?,
        "sigma" => cfg.detect.estimator.sigma = parse_as(key, value)?,
        "anneal" => {
            let on: bool = parse_as(key, value)?;
            cfg.detect.estimator.anneal = on.then(AnnealSchedule::default);
        }
        "t-angle-deg" => cfg.t_angle_deg = parse_as(key, value)?,
        "t-dist" => cfg.t_dist = parse_as(key, value)?,
        "workers" => cfg.workers = parse_as(key, value)?,
        other => return Err(bad(format!("unknown config key {other:?}"))),
    }
    Ok(())
}

fn load_file(cfg: &mut RunConfig, path: &Path) -> Result<()> {
    let text = fs::read_to_string(path)?;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: "expected key = value".into(),
            });
        };
        apply_key(cfg, key.trim(), value.trim()).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            msg: e.to_string(),
        })?;
    }
    Ok(())
}

/// Builds the effective configuration: defaults, then the config file,
/// then explicit flags.
pub fn build_config(flags: &Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &flags.config {
        load_file(&mut cfg, path)?;
    }
    if let Some(v) = flags.seed {
        cfg.detect.estimator.seed = v;
    }
    if let Some(v) = flags.neighbors {
        cfg.detect.neighbors = v;
    }
    if let Some(v) = flags.k_eig {
        cfg.detect.k_eig = v;
    }
    if let Some(v) = flags.p_times {
        cfg.detect.p_times = v;
    }
    if let Some(v) = flags.k_signs {
        cfg.detect.k_signs = v;
    }
    if let Some(v) = flags.q {
        cfg.detect.q = Some(v);
    }
    if let Some(v) = flags.penalty_b {
        cfg.detect.penalty_b = v;
    }
    if let Some(v) = flags.sigma {
        cfg.detect.estimator.sigma = v;
    }
    if let Some(on) = flags.anneal {
        cfg.detect.estimator.anneal = on.then(AnnealSchedule::default);
    }
    if let Some(v) = flags.t_angle_deg {
        cfg.t_angle_deg = v;
    }
    if let Some(v) = flags.t_dist {
        cfg.t_dist = v;
    }
    if let Some(v) = flags.workers {
        cfg.workers = v;
    }

    if !(cfg.t_angle_deg > 0.0 && cfg.t_angle_deg <= 45.0) {
        return Err(bad(format!(
            "t-angle-deg = {} outside (0, 45]",
            cfg.t_angle_deg
        )));
    }
    if !(cfg.t_dist >= 0.0) {
        return Err(bad(format!("t-dist = {}", cfg.t_dist)));
    }
    if cfg.workers == 0 {
        return Err(bad("workers = 0".into()));
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    #[test]
    fn flags_beat_config_file() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "# comment\nneighbors = 20\nsigma = 0.1\nanneal = true").unwrap();
        let flags = Overrides {
            config: Some(file.path().to_path_buf()),
            sigma: Some(0.03),
            ..Overrides::default()
        };
        let cfg = build_config(&flags).unwrap();
        assert_eq!(cfg.detect.neighbors, 20);
        assert_eq!(cfg.detect.estimator.sigma, 0.03);
        assert!(cfg.detect.estimator.anneal.is_some());
    }

    #[test]
    fn unknown_key_is_rejected() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "bogus = 1").unwrap();
        let flags = Overrides {
            config: Some(file.path().to_path_buf()),
            ..Overrides::default()
        };
        assert!(build_config(&flags).is_err());
    }

    #[test]
    fn threshold_bounds_are_validated() {
        let flags = Overrides {
            t_angle_deg: Some(90.0),
            ..Overrides::default()
        };
        assert!(build_config(&flags).is_err());
    }
}
