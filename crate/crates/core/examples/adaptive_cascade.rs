//! Student first, teacher only for samples scoring below the cutoff.
//! Compares refinement at several rollback levels with regeneration.
//!
//! The student here is a one-step exact-score denoiser used as a
//! consistency function, so the example needs no training.
//!
//! `cargo run --release --example adaptive_cascade`

use diffcascade::cascade::{initial_noise, round_robin_classes, sample_seeds, AdaptiveConfig, AdaptivePipeline, Strategy};
use diffcascade::diffusion::{AnalyticEps, DataDistribution, GuidedDenoiser, NoiseSchedule, ScheduleSpec};
use diffcascade::oracle::{calibrate, score, EstimatorId, OracleSpec};
use diffcascade::solvers::{consistency_sample, OdeConsistency, SolverSpec};
use diffcascade::harness::stage_rng;

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
    let student_steps = 3;

    let hold: Vec<f64> = sample_seeds(10, 2000)
        .iter()
        .zip(round_robin_classes(data.num_classes(), 2000))
        .map(|(&s, c)| {
            let mut rng = stage_rng(s, "student", 0);
            let tr = consistency_sample(&student, student_steps, &schedule, &initial_noise(s, data.dim), c, &mut rng)?;
            Ok(score(&tr.sample, c, &data)?.value)
        })
        .collect::<diffcascade::Result<_>>()?;
    let cal = calibrate(&hold, 50.0, EstimatorId::true_log_density())?;

    let n = 2000;
    let classes = round_robin_classes(data.num_classes(), n);
    let seeds = sample_seeds(11, n);
    println!("{:<12} {:>6} {:>10} {:>12} {:>10}", "strategy", "sigma", "mean nfe", "mean score", "accepted");
    let mut runs = vec![(Strategy::Regenerate, 1.0)];
    runs.extend([0.3, 0.55, 0.7, 1.0].map(|s| (Strategy::Refine, s)));
    for (strategy, sigma) in runs {
        let config = AdaptiveConfig {
            strategy,
            rollback_sigma: sigma,
            student_steps,
            teacher: SolverSpec::dpm2m(15),
            oracle: OracleSpec::TrueDensity,
        };
        let report = AdaptivePipeline::new(&student, &eps, &data, &schedule, &cal, config)?.run_batch(&classes, &seeds)?;
        let s = &report.summary;
        println!(
            "{:<12} {sigma:>6} {:>10.2} {:>12.3} {:>10.3}",
            format!("{strategy:?}"),
            s.mean_nfe,
            s.mean_final_score,
            s.accept_rate
        );
    }
    Ok(())
}
