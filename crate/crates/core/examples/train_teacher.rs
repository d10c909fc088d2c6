//! Train a small conditional noise predictor on the four-class benchmark
//! and compare its guided samples with the exact-score sampler.
//!
//! `cargo run --release --example train_teacher`

use diffcascade::cascade::initial_noise;
use diffcascade::diffusion::{AnalyticEps, DataDistribution, EpsNetwork, GuidedDenoiser, NoiseSchedule, ScheduleSpec};
use diffcascade::nn::Activation;
use diffcascade::oracle::score;
use diffcascade::solvers::{sample, SolverSpec};
use diffcascade::teacher::{train_teacher, ArchSpec, TeacherConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> diffcascade::Result<()> {
    let data = DataDistribution::benchmark();
    let schedule = NoiseSchedule::new(ScheduleSpec::default())?;
    let config = TeacherConfig {
        arch: ArchSpec {
            hidden: vec![64, 64],
            time_dim: 16,
            cond_dim: 8,
            activation: Activation::Silu,
        },
        iterations: 3000,
        batch_size: 128,
        learning_rate: 2e-3,
        ema_rate: 0.99,
        log_every: 500,
        ..TeacherConfig::default()
    };
    let outcome = train_teacher(&data, &schedule, &config, &mut ChaCha8Rng::seed_from_u64(0))?;
    for row in &outcome.log {
        println!("iter {:>5}  loss {:.4}  score mse {:.4}", row.iteration, row.loss, row.score_mse);
    }

    let guidance = 2.0;
    let net = GuidedDenoiser::new(EpsNetwork { params: outcome.params }, guidance)?;
    let exact = GuidedDenoiser::new(
        AnalyticEps {
            data: data.clone(),
            schedule: schedule.clone(),
        },
        guidance,
    )?;
    let spec = SolverSpec::teacher_reference();
    let (mut a, mut b) = (0.0, 0.0);
    let n = 400;
    for i in 0..n {
        let class = i % data.num_classes();
        let noise = initial_noise(i as u64, data.dim);
        a += score(&sample(&net, &spec, &schedule, &noise, class)?.sample, class, &data)?.value;
        b += score(&sample(&exact, &spec, &schedule, &noise, class)?.sample, class, &data)?.value;
    }
    println!("mean log-density at w={guidance}: trained {:.3}, exact {:.3}", a / n as f64, b / n as f64);
    Ok(())
}
