//! Distil a trained teacher into a consistency student and watch the
//! self-consistency of its outputs along teacher trajectories fall.
//!
//! `cargo run --release --example distill_student`

use diffcascade::diffusion::{DataDistribution, NoiseSchedule, ScheduleSpec};
use diffcascade::distill::{distill, CdConfig};
use diffcascade::nn::Activation;
use diffcascade::teacher::{train_teacher, ArchSpec, TeacherConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> diffcascade::Result<()> {
    let data = DataDistribution::benchmark();
    let schedule = NoiseSchedule::new(ScheduleSpec::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let teacher = train_teacher(
        &data,
        &schedule,
        &TeacherConfig {
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
            ..TeacherConfig::default()
        },
        &mut rng,
    )?
    .params;

    let config = CdConfig {
        discretization: 50,
        learning_rate: 3e-4,
        batch_size: 64,
        guidance_range: [1.0, 3.0],
        iterations: 6000,
        log_every: 1000,
        checkpoint_every: 6000,
        probe_guidance: 2.0,
        ..CdConfig::default()
    };
    let outcome = distill(&teacher, &data, &schedule, &config, None, &mut rng)?;
    for row in &outcome.log {
        println!(
            "iter {:>5}  loss {:>10.5}  self-consistency {:.5}",
            row.iteration, row.loss, row.self_consistency
        );
    }
    let (c_skip, c_out) = outcome.model.boundary_coefficients(0)?;
    println!("boundary coefficients at t=0: c_skip={c_skip}, c_out={c_out}");
    Ok(())
}
