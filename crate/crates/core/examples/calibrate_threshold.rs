//! Fit the quality cutoff on a hold-out set and check how often fresh
//! samples fall below it.
//!
//! A coarse two-step exact-score solver stands in for the student.
//!
//! `cargo run --release --example calibrate_threshold`

use diffcascade::cascade::{initial_noise, round_robin_classes, sample_seeds};
use diffcascade::diffusion::{AnalyticEps, DataDistribution, GuidedDenoiser, NoiseSchedule, ScheduleSpec};
use diffcascade::oracle::{calibrate, decide, expected_budget, score, Decision, EstimatorId};
use diffcascade::solvers::{sample, SolverSpec};

fn scores(seed: u64, n: usize, eps: &GuidedDenoiser<AnalyticEps>, schedule: &NoiseSchedule, data: &DataDistribution) -> diffcascade::Result<Vec<f64>> {
    let classes = round_robin_classes(data.num_classes(), n);
    sample_seeds(seed, n)
        .iter()
        .zip(classes)
        .map(|(&s, c)| {
            let x = sample(eps, &SolverSpec::ddim(2), schedule, &initial_noise(s, data.dim), c)?.sample;
            Ok(score(&x, c, data)?.value)
        })
        .collect()
}

fn main() -> diffcascade::Result<()> {
    let data = DataDistribution::benchmark();
    let schedule = NoiseSchedule::new(ScheduleSpec::default())?;
    let eps = GuidedDenoiser::new(
        AnalyticEps {
            data: data.clone(),
            schedule: schedule.clone(),
        },
        2.0,
    )?;
    let holdout = scores(1, 4000, &eps, &schedule, &data)?;
    let fresh = scores(2, 4000, &eps, &schedule, &data)?;
    println!("{:>5} {:>10} {:>14} {:>14}", "k", "tau", "improve rate", "avg steps");
    for k in [0.0, 20.0, 40.0, 60.0, 80.0, 100.0] {
        let cal = calibrate(&holdout, k, EstimatorId::true_log_density())?;
        let rate = fresh.iter().filter(|&&s| decide(s, cal.cutoff()) == Decision::Improve).count() as f64
            / fresh.len() as f64;
        println!(
            "{k:>5} {:>10.3} {rate:>14.3} {:>14.1}",
            cal.tau,
            expected_budget(5.0, 20.0, k)
        );
    }
    Ok(())
}
