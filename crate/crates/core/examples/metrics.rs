//! ROC/AUC on a toy score set and the structural ratio of an oracle
//! keep-mask on a noisy scene.

use evdn::metrics::{esr, mesr, roc_auc};
use evdn::synth::{generate_scene, NoiseConfig, SceneConfig};

fn main() -> evdn::Result<()> {
    let scores = [0.9, 0.8, 0.8, 0.6, 0.4, 0.3, 0.3, 0.1];
    let labels = [1, 1, 0, 1, 0, 1, 0, 0];
    let roc = roc_auc(&scores, &labels)?;
    println!("AUC {:.4} (trapezoid {:.4})", roc.auc, roc.trapezoid());
    print!("{}", roc.to_csv());

    let data = generate_scene(&SceneConfig::default(), &NoiseConfig::default(), 5)?;
    let labels = data
        .stream
        .labels
        .clone()
        .expect("generated scenes are labelled");
    let oracle: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
    let s = &data.stream;
    println!(
        "ESR of the whole scene {:.3}",
        esr(&s.events, s.width, s.height)?
    );
    let r = mesr(s, &oracle, 30_000)?;
    println!(
        "MESR of the ground-truth mask over {} windows: {:.3}",
        r.per_window.len(),
        r.mesr
    );
    Ok(())
}
