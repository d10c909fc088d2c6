//! Final quality of the adaptive pipeline as the simulated oracle gets
//! more accurate. Every accuracy sees the same seeds.
//!
//! `cargo run --release --example oracle_accuracy_sweep`

use diffcascade::cascade::{round_robin_classes, sample_seeds, AdaptiveConfig, AdaptivePipeline, Strategy};
use diffcascade::diffusion::{AnalyticEps, DataDistribution, GuidedDenoiser, NoiseSchedule, ScheduleSpec};
use diffcascade::oracle::{calibrate, EstimatorId, OracleSpec};
use diffcascade::solvers::{OdeConsistency, SolverSpec};

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
    let student = OdeConsistency {
        denoiser: &eps,
        schedule: schedule.clone(),
        spec: SolverSpec::ddim(1),
    };
    // The noisy oracle ignores the cutoff, so any calibration will do.
    let cal = calibrate(&[0.0], 50.0, EstimatorId::true_log_density())?;
    let n = 2000;
    let classes = round_robin_classes(data.num_classes(), n);
    let seeds = sample_seeds(5, n);
    println!("{:>9} {:>12} {:>10} {:>13}", "accuracy", "mean score", "mean nfe", "improve rate");
    for accuracy in [0.5, 0.65, 0.75, 0.85, 1.0] {
        let config = AdaptiveConfig {
            strategy: Strategy::Refine,
            rollback_sigma: 0.7,
            student_steps: 3,
            teacher: SolverSpec::dpm2m(10),
            oracle: OracleSpec::Noisy { accuracy },
        };
        let report = AdaptivePipeline::new(&student, &eps, &data, &schedule, &cal, config)?.run_batch(&classes, &seeds)?;
        let s = &report.summary;
        println!(
            "{accuracy:>9} {:>12.4} {:>10.2} {:>13.3}",
            s.mean_final_score,
            s.mean_nfe,
            1.0 - s.accept_rate
        );
    }
    Ok(())
}
