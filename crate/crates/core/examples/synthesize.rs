//! Renders one moving-bar scene with background activity and writes it as
//! labelled CSV and as the binary format.

use std::path::Path;

use evdn::events::{read_events, write_events, Format};
use evdn::synth::{generate_scene, NoiseConfig, SceneConfig};

fn main() -> evdn::Result<()> {
    let scene = SceneConfig::default();
    let noise = NoiseConfig::default();
    let data = generate_scene(&scene, &noise, 42)?;
    println!(
        "{}x{} over {} s: {} signal + {} noise events",
        scene.width, scene.height, scene.duration_s, data.signal_count, data.noise_count
    );

    let dir = std::env::temp_dir();
    let csv = dir.join("evdn_scene.csv");
    let bin = dir.join("evdn_scene.evdn");
    write_events(&data.stream, &csv, Format::Csv)?;
    write_events(&data.stream, &bin, Format::Bin)?;
    let back = read_events(Path::new(&bin), Format::Bin)?;
    assert_eq!(back.events, data.stream.events);
    println!("wrote {} and {}", csv.display(), bin.display());
    Ok(())
}
