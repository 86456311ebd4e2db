//! Detection result files: UTF-8 text with `[plane]`, `[diagnostics]`,
//! optional `[timing]`, and a `[correspondences]` CSV section.

use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use symcloud::error::{Error, Result};
use symcloud::pipeline::Detection;
use symcloud::plane::SymmetryPlane;

/// Serializes a detection. Timings are opt-in so result files stay
/// byte-identical across reruns of the same seed and config.
pub fn write_detection<W: Write>(
    w: &mut W,
    det: &Detection,
    center: &Vector3<f64>,
    with_timing: bool,
) -> Result<()> {
    let v = det.plane.normal();
    let vn = det.plane_normalized.normal();
    writeln!(w, "[plane]")?;
    writeln!(w, "normal = {} {} {}", v.x, v.y, v.z)?;
    writeln!(w, "offset = {}", det.plane.offset())?;
    writeln!(w, "normal-normalized = {} {} {}", vn.x, vn.y, vn.z)?;
    writeln!(w, "offset-normalized = {}", det.plane_normalized.offset())?;
    writeln!(w, "center = {} {} {}", center.x, center.y, center.z)?;
    writeln!(w, "converged = {}", det.diagnostics.converged)?;
    writeln!(w)?;

    writeln!(w, "[diagnostics]")?;
    write!(w, "{}", det.diagnostics.report())?;
    writeln!(w, "keypoints = {}", det.keypoints.len())?;
    writeln!(w, "pairs = {}", det.correspondences.len())?;
    writeln!(w, "neighbors-used = {}", det.neighbors_used)?;
    writeln!(w, "k-eig-used = {}", det.k_eig_used)?;
    writeln!(w)?;

    if with_timing {
        writeln!(w, "[timing]")?;
        let mut total = 0.0;
        for t in &det.timings {
            writeln!(w, "{} = {:.6}", t.name, t.seconds)?;
            total += t.seconds;
        }
        writeln!(w, "total = {total:.6}")?;
        writeln!(w)?;
    }

    writeln!(w, "[correspondences]")?;
    writeln!(w, "i,j,cost")?;
    for &(i, j, c) in &det.pair_costs {
        writeln!(w, "{i},{j},{c}")?;
    }
    Ok(())
}

/// The plane found in a result file, in original coordinates.
#[derive(Debug, Clone)]
pub struct ParsedResult {
    pub plane: SymmetryPlane,
    pub center: Vector3<f64>,
    pub converged: bool,
}

fn parse_vec3(label: &str, key: &str, raw: &str) -> Result<Vector3<f64>> {
    let parts: Vec<f64> = raw
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Parse {
            path: label.to_string(),
            line: 0,
            msg: format!("{key}: {e}"),
        })?;
    if parts.len() != 3 {
        return Err(Error::Parse {
            path: label.to_string(),
            line: 0,
            msg: format!("{key}: expected 3 components"),
        });
    }
    Ok(Vector3::new(parts[0], parts[1], parts[2]))
}

/// Reads back the `[plane]` section of a result file.
pub fn parse_result(path: &Path) -> Result<ParsedResult> {
    let label = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    let mut in_plane = false;
    let mut normal = None;
    let mut offset = None;
    let mut center = None;
    let mut converged = true;
    for line in text.lines() {
        let line = line.trim();
        if line.starts_with('[') {
            in_plane = line == "[plane]";
            continue;
        }
        if !in_plane {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        match key {
            "normal" => normal = Some(parse_vec3(&label, key, value)?),
            "offset" => {
                offset = Some(value.parse::<f64>().map_err(|e| Error::Parse {
                    path: label.clone(),
                    line: 0,
                    msg: format!("offset: {e}"),
                })?)
            }
            "center" => center = Some(parse_vec3(&label, key, value)?),
            "converged" => converged = value == "true",
            _ => {}
        }
    }
    let (Some(normal), Some(offset)) = (normal, offset) else {
        return Err(Error::Parse {
            path: label,
            line: 0,
            msg: "missing plane normal/offset".into(),
        });
    };
    let plane = SymmetryPlane::new(normal, offset)?;
    let center = center.unwrap_or_else(|| plane.project_point(&Vector3::zeros()));
    Ok(ParsedResult {
        plane,
        center,
        converged,
    })
}
