//! Runs the selective scan in both directions and checks its gradient
//! against central differences on one input entry.

use std::time::Instant;

use evdn::sscan::{scan_vjp, selective_scan, Direction, ScanParams};
use evdn::tensor::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> evdn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (d, s) = (8, 8);
    let params = ScanParams::init(d, s, &mut rng);

    for len in [10_000, 100_000, 1_000_000] {
        let x = Mat::from_fn(len, d, |_, _| rng.random_range(-1.0..1.0));
        let t = Instant::now();
        let fwd = selective_scan(&x, &params, Direction::Forward)?;
        let bwd = selective_scan(&x, &params, Direction::Backward)?;
        println!(
            "L = {len:>7}: both directions in {:.3}s (y[0,0] fwd {:.4}, bwd {:.4})",
            t.elapsed().as_secs_f64(),
            fwd.row(0)[0],
            bwd.row(0)[0]
        );
    }

    let x = Mat::from_fn(16, d, |_, _| rng.random_range(-1.0..1.0));
    let up = Mat::from_fn(16, d, |_, _| rng.random_range(-1.0..1.0));
    let (dx, _) = scan_vjp(&x, &params, Direction::Forward, &up)?;
    let loss = |x: &Mat| -> evdn::Result<f64> {
        let y = selective_scan(x, &params, Direction::Forward)?;
        Ok((0..16)
            .flat_map(|r| (0..d).map(move |c| (r, c)))
            .map(|(r, c)| y.row(r)[c] * up.row(r)[c])
            .sum())
    };
    let h = 1e-6;
    let (mut xp, mut xm) = (x.clone(), x.clone());
    xp.row_mut(5)[2] += h;
    xm.row_mut(5)[2] -= h;
    let numeric = (loss(&xp)? - loss(&xm)?) / (2.0 * h);
    println!(
        "d loss / d x[5,2]: analytic {:.8}, numeric {numeric:.8}",
        dx.row(5)[2]
    );
    Ok(())
}
