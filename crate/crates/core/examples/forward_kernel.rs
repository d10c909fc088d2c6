//! Empirical moments of the forward kernel against `sqrt(1 - sigma_t) x0`
//! and `sigma_t`.
//!
//! `cargo run --release --example forward_kernel`

use diffcascade::diffusion::{forward_diffuse, NoiseSchedule, ScheduleSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> diffcascade::Result<()> {
    let schedule = NoiseSchedule::new(ScheduleSpec::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x0 = 1.5;
    let n = 50_000;
    println!("{:>5} {:>9} {:>10} {:>10} {:>10} {:>10}", "t", "sigma", "mean", "expected", "var", "expected");
    for t in [1, 50, 200, 400, 600, 800, 1000] {
        let sigma = schedule.sigma_at(t)?;
        let xs: Vec<f64> = (0..n)
            .map(|_| forward_diffuse(&[x0], &[rng.sample(StandardNormal)], sigma)[0])
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        println!(
            "{t:>5} {sigma:>9.5} {mean:>10.4} {:>10.4} {var:>10.4} {sigma:>10.4}",
            (1.0 - sigma).sqrt() * x0
        );
    }
    Ok(())
}
