//! Hilbert and Morton codes on a small grid, and the serialization order
//! they induce on an event cloud.

use evdn::events::{normalize_segment, segment_stream};
use evdn::serialize::{hilbert3, morton3, order_of, pool, Curve};
use evdn::synth::{generate_scene, NoiseConfig, SceneConfig};
use evdn::tensor::Mat;

fn main() -> evdn::Result<()> {
    println!("first cells of the 4x4x4 curves (x, y, z):");
    let mut hil = vec![(0, 0, 0); 64];
    let mut mor = vec![(0, 0, 0); 64];
    for x in 0..4 {
        for y in 0..4 {
            for z in 0..4 {
                hil[hilbert3(x, y, z, 2)? as usize] = (x, y, z);
                mor[morton3(x, y, z, 2)? as usize] = (x, y, z);
            }
        }
    }
    for k in 0..10 {
        println!("  {k:>2}  hilbert {:?}  morton {:?}", hil[k], mor[k]);
    }

    let data = generate_scene(&SceneConfig::default(), &NoiseConfig::default(), 1)?;
    let cloud = normalize_segment(&segment_stream(&data.stream, 1024)?.windows[0])?;
    for curve in [Curve::Hilbert, Curve::Zorder, Curve::Time] {
        let order = order_of(&cloud, curve, 10)?;
        let jump: f64 = order
            .perm
            .windows(2)
            .map(|w| {
                let (a, b) = (&cloud.points[w[0]], &cloud.points[w[1]]);
                f64::from(a.x.abs_diff(b.x)) + f64::from(a.y.abs_diff(b.y))
            })
            .sum::<f64>()
            / (order.len() - 1) as f64;
        let feats = Mat::from_fn(cloud.len(), 1, |r, _| r as f64);
        let (pooled, _, _) = pool(&order, &feats, &cloud.points, 4)?;
        println!(
            "{curve:?}: mean pixel jump between neighbours {jump:.2}, pooled to {} rows",
            pooled.rows
        );
    }
    Ok(())
}
