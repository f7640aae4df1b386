//! Normalizes a window of events and thins it with voxel sampling at a few
//! voxel sizes.

use evdn::events::{normalize_segment, segment_stream};
use evdn::sampling::{bin_count, voxel_sample};
use evdn::synth::{generate_scene, NoiseConfig, SceneConfig};

fn main() -> evdn::Result<()> {
    let data = generate_scene(&SceneConfig::default(), &NoiseConfig::default(), 7)?;
    let segs = segment_stream(&data.stream, 4096)?;
    let cloud = normalize_segment(&segs.windows[0])?;
    println!("window of {} events", cloud.len());
    for v in [0.01, 0.05, 0.2, 1.0] {
        let kept = voxel_sample(&cloud, v, 3)?;
        println!(
            "v = {v:<5} {:>3} time bins  -> {:>5} events",
            bin_count(v)?,
            kept.len()
        );
    }
    Ok(())
}
