//! Compares analytic gradients of the tiny network with central differences,
//! tensor by tensor.

use evdn::events::{normalize_segment, segment_stream};
use evdn::net::{ModelConfig, ModelWeights};
use evdn::synth::{generate_scene, NoiseConfig, SceneConfig};
use evdn::train::grad_check;

fn main() -> evdn::Result<()> {
    let scene = SceneConfig {
        width: 16,
        height: 16,
        duration_s: 0.1,
        ..SceneConfig::default()
    };
    let data = generate_scene(&scene, &NoiseConfig::default(), 2)?;
    let cloud = normalize_segment(&segment_stream(&data.stream, 32)?.windows[0])?;

    let cfg = ModelConfig::tiny();
    let w = ModelWeights::init(&cfg, 0)?;
    let mut report = grad_check(&cloud, &w, &cfg, 1e-4, 1e-8)?;
    report.sort_by(|a, b| b.max_rel_err.total_cmp(&a.max_rel_err));
    println!("{} tensors checked; worst ten:", report.len());
    for r in report.iter().take(10) {
        println!(
            "  {:<28} {:>4} scalars  rel err {:.2e}  |g| max {:.2e}",
            r.name, r.checked, r.max_rel_err, r.max_abs_grad
        );
    }
    Ok(())
}
