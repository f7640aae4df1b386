//! Denoises an event file with a trained checkpoint and writes the kept
//! events. Without arguments it trains a short model on a small scene
//! first.
//!
//! cargo run --release --example denoise_stream -- IN.csv CKPT OUT.csv

use std::path::PathBuf;

use evdn::benchmark::{run_desk, DeskBenchmark};
use evdn::denoise::{model_keep, model_scores};
use evdn::events::{read_events, write_events, Format};
use evdn::net::{load_checkpoint, save_checkpoint};
use evdn::synth::generate_scene;
use evdn::train::TrainConfig;

fn main() -> evdn::Result<()> {
    let args: Vec<PathBuf> = std::env::args_os().skip(1).map(PathBuf::from).collect();
    let (input, ckpt, output, labels) = match args.as_slice() {
        [i, c, o] => (i.clone(), c.clone(), o.clone(), None),
        _ => demo_inputs()?,
    };
    let stream = read_events(&input, Format::from_path(&input))?;
    let (w, cfg) = load_checkpoint(&ckpt)?;
    let scores = model_scores(&stream, &w, &cfg, 2048)?;
    let keep = model_keep(&scores);
    let kept = stream.filter(&keep);
    write_events(&kept, &output, Format::from_path(&output))?;
    println!(
        "kept {} of {} events -> {}",
        kept.len(),
        stream.len(),
        output.display()
    );
    if let Some(labels) = labels {
        let noise = labels.iter().filter(|&&l| l == 0).count();
        let noise_kept = labels
            .iter()
            .zip(&keep)
            .filter(|(&l, &k)| l == 0 && k)
            .count();
        let signal_kept = labels
            .iter()
            .zip(&keep)
            .filter(|(&l, &k)| l == 1 && k)
            .count();
        println!(
            "noise {noise} -> {noise_kept}, signal {} -> {signal_kept}",
            labels.len() - noise
        );
    }
    Ok(())
}

fn demo_inputs() -> evdn::Result<(PathBuf, PathBuf, PathBuf, Option<Vec<u8>>)> {
    let dir = std::env::temp_dir();
    let bench = DeskBenchmark {
        train: TrainConfig {
            epochs: 4,
            ..DeskBenchmark::desk().train
        },
        train_scenes: 8,
        test_scenes: 1,
        ..DeskBenchmark::desk()
    };
    let report = run_desk(&bench, &bench.model, None)?;
    let ckpt = dir.join("evdn_demo.ckpt");
    save_checkpoint(&ckpt, &report.weights, &bench.model)?;
    let input = dir.join("evdn_demo_in.csv");
    let scene = generate_scene(&bench.scene, &bench.noise, 99)?;
    write_events(&scene.stream, &input, Format::Csv)?;
    Ok((
        input,
        ckpt,
        dir.join("evdn_demo_out.csv"),
        scene.stream.labels,
    ))
}
