//! Trains the tiny network on the desk benchmark and compares it with the
//! classical filters on held-out scenes. Takes about a minute on one core.

use evdn::benchmark::{run_desk, DeskBenchmark};
use evdn::net::{param_count, save_checkpoint};
use evdn::train::EpochStats;

fn main() -> evdn::Result<()> {
    let bench = DeskBenchmark::desk();
    println!(
        "{} parameters, {} training scenes",
        param_count(&bench.model),
        bench.train_scenes
    );
    let mut log = |s: &EpochStats| {
        println!(
            "epoch {:>2}  loss {:.4}  train AUC {:.4}",
            s.epoch,
            s.loss,
            s.train_auc.unwrap_or(f64::NAN)
        );
    };
    let report = run_desk(&bench, &bench.model, Some(&mut log))?;
    println!("held-out AUC: model {:.4}", report.model_auc);
    for (m, a) in &report.classical {
        println!("              {m} {a:.4}");
    }
    let out = std::env::temp_dir().join("evdn_desk.ckpt");
    save_checkpoint(&out, &report.weights, &bench.model)?;
    println!("checkpoint written to {}", out.display());
    Ok(())
}
