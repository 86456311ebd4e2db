//! Hand-emitted SVG plots: the detection scene (cloud, plane trace,
//! sampled plane points, match segments) and the precision/recall curve.

use std::fmt::Write;

use nalgebra::Vector3;
use symcloud::cloud::PointCloud;
use symcloud::evaluation::{EvalReport, PLANE_POINT_SCALE};
use symcloud::pipeline::Detection;

/// Views the cloud along an in-plane axis, so the symmetry plane collapses
/// to the vertical line x = 0 and mirror pairs appear as crossing segments.
pub fn plot_detection(cloud: &PointCloud, det: &Detection) -> String {
    let v = det.plane.normal();
    let omega = det.plane.offset();
    let (_, w) = det.plane.in_plane_basis();
    let view = |p: &Vector3<f64>| (v.dot(p) - omega, w.dot(p));

    let pts: Vec<(f64, f64)> = cloud.points().iter().map(|p| view(p)).collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let pad = 0.05 * ((x1 - x0).max(y1 - y0)).max(1e-9);
    let (x0, x1, y0, y1) = (x0 - pad, x1 + pad, y0 - pad, y1 + pad);
    let stroke = (x1 - x0).max(y1 - y0) / 400.0;
    let dot = 1.5 * stroke;

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"{:.4} {:.4} {:.4} {:.4}\">",
        x0,
        y0,
        x1 - x0,
        y1 - y0
    );
    let _ = writeln!(s, "<g fill=\"#999999\">");
    for &(x, y) in &pts {
        let _ = writeln!(s, "<circle cx=\"{x:.4}\" cy=\"{y:.4}\" r=\"{dot:.4}\"/>");
    }
    let _ = writeln!(s, "</g>");

    let _ = writeln!(
        s,
        "<g stroke=\"#3355cc\" stroke-width=\"{stroke:.4}\" opacity=\"0.7\">"
    );
    for &(i, j, _) in &det.pair_costs {
        let (ax, ay) = pts[i];
        let (bx, by) = pts[j];
        let _ = writeln!(
            s,
            "<line x1=\"{ax:.4}\" y1=\"{ay:.4}\" x2=\"{bx:.4}\" y2=\"{by:.4}\"/>"
        );
    }
    let _ = writeln!(s, "</g>");

    let _ = writeln!(
        s,
        "<line x1=\"0\" y1=\"{y0:.4}\" x2=\"0\" y2=\"{y1:.4}\" stroke=\"#cc2222\" stroke-width=\"{:.4}\"/>",
        2.0 * stroke
    );
    let center = det.plane.project_point(&cloud.centroid());
    let _ = writeln!(s, "<g fill=\"#cc2222\">");
    for p in det.plane.three_points(&center, PLANE_POINT_SCALE) {
        let (x, y) = view(&p);
        let _ = writeln!(
            s,
            "<circle cx=\"{x:.4}\" cy=\"{y:.4}\" r=\"{:.4}\"/>",
            2.0 * dot
        );
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    s
}

/// Precision (y) against recall (x) over the threshold sweep, unit square.
pub fn plot_pr_curve(sweep: &[(f64, EvalReport)]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"-0.15 -0.15 1.3 1.3\">"
    );
    // Axes, drawn in plot coordinates with y flipped.
    let _ = writeln!(
        s,
        "<g stroke=\"#333333\" stroke-width=\"0.004\" fill=\"none\">\
         <line x1=\"0\" y1=\"1\" x2=\"1\" y2=\"1\"/>\
         <line x1=\"0\" y1=\"0\" x2=\"0\" y2=\"1\"/></g>"
    );
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(
            s,
            "<line x1=\"{tick:.2}\" y1=\"1\" x2=\"{tick:.2}\" y2=\"1.02\" stroke=\"#333333\" stroke-width=\"0.004\"/>"
        );
        let _ = writeln!(
            s,
            "<line x1=\"-0.02\" y1=\"{:.2}\" x2=\"0\" y2=\"{:.2}\" stroke=\"#333333\" stroke-width=\"0.004\"/>",
            1.0 - tick,
            1.0 - tick
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"0.42\" y=\"1.12\" font-size=\"0.06\">recall</text>"
    );
    let _ = writeln!(
        s,
        "<text x=\"-0.12\" y=\"0.55\" font-size=\"0.06\" transform=\"rotate(-90 -0.09 0.55)\">precision</text>"
    );
    let mut path = String::new();
    for (k, (_, r)) in sweep.iter().enumerate() {
        let cmd = if k == 0 { 'M' } else { 'L' };
        let _ = write!(path, "{cmd}{:.4} {:.4} ", r.recall, 1.0 - r.precision);
    }
    let _ = writeln!(
        s,
        "<path d=\"{}\" fill=\"none\" stroke=\"#cc2222\" stroke-width=\"0.008\"/>",
        path.trim_end()
    );
    let _ = writeln!(s, "<g fill=\"#cc2222\">");
    for (_, r) in sweep {
        let _ = writeln!(
            s,
            "<circle cx=\"{:.4}\" cy=\"{:.4}\" r=\"0.012\"/>",
            r.recall,
            1.0 - r.precision
        );
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    s
}
