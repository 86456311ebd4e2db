//! Generates a synthetic symmetric cloud and runs the full detection
//! pipeline on it, printing the plane, the error against ground truth,
//! and per-stage timings.
//!
//!     cargo run --release --example detect_synthetic -- 5000

use symcloud::evaluation::deviation_angle;
use symcloud::pipeline::{detect, DetectConfig};
use symcloud::synth::{generate_symmetric_cloud, SynthShape, SynthSpec};

fn main() {
    let n = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(5000);
    let spec = SynthSpec {
        shape: SynthShape::MirroredBlob,
        n,
        pose: true,
        seed: 42,
        ..SynthSpec::default()
    };
    let (cloud, gt) = generate_symmetric_cloud(&spec).expect("generation");

    let start = std::time::Instant::now();
    let det = detect(&cloud, &DetectConfig::default()).expect("detection");
    let wall = start.elapsed().as_secs_f64();

    let v = det.plane.normal();
    println!("n = {n}");
    println!("normal = {} {} {}", v.x, v.y, v.z);
    println!("offset = {}", det.plane.offset());
    println!(
        "deviation = {:.4} deg",
        deviation_angle(&v, &gt.plane.normal())
    );
    println!("pairs = {}", det.correspondences.len());
    for t in &det.timings {
        println!("{:<12} {:8.3} s", t.name, t.seconds);
    }
    println!("{:<12} {wall:8.3} s", "total");
}
