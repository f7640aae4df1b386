//! Scores a noisy scene with the three classical filters and reports their
//! AUC and what each keeps at its default threshold.

use evdn::baselines::{classical_filter, FilterParams, Method};
use evdn::metrics::{auc, mesr};
use evdn::synth::{generate_scene, NoiseConfig, SceneConfig};

fn main() -> evdn::Result<()> {
    let noise = NoiseConfig {
        ba_rate_hz: 20.0,
        ..NoiseConfig::default()
    };
    let data = generate_scene(&SceneConfig::default(), &noise, 3)?;
    let labels = data
        .stream
        .labels
        .clone()
        .expect("generated scenes are labelled");
    println!(
        "{} signal, {} noise events",
        data.signal_count, data.noise_count
    );
    for m in [Method::Baf, Method::Dwf, Method::Ts] {
        let params = FilterParams::new(m);
        let (scores, keep) = classical_filter(&data.stream, &params)?;
        let kept_signal = keep
            .iter()
            .zip(&labels)
            .filter(|(&k, &l)| k && l == 1)
            .count();
        let kept_noise = keep
            .iter()
            .zip(&labels)
            .filter(|(&k, &l)| k && l == 0)
            .count();
        println!(
            "{m}: AUC {:.4}, keeps {kept_signal} signal / {kept_noise} noise, MESR {:.3}",
            auc(&scores, &labels)?,
            mesr(&data.stream, &keep, 30_000)?.mesr
        );
    }
    Ok(())
}
