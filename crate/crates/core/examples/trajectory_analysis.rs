//! Paired student/teacher samples: distance buckets, win rates, and the
//! relation between teacher trajectory curvature and sample distance.
//!
//! `cargo run --release --example trajectory_analysis`

use diffcascade::analysis::{build_paired_records, summarize, StudentGenerator, TeacherGenerator, DEFAULT_BUCKETS, DEFAULT_TIE_TOLERANCE};
use diffcascade::cascade::{round_robin_classes, sample_seeds};
use diffcascade::diffusion::{AnalyticEps, DataDistribution, GuidedDenoiser, NoiseSchedule, ScheduleSpec};
use diffcascade::solvers::{OdeConsistency, SolverSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

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
    let student = StudentGenerator {
        student: OdeConsistency {
            denoiser: &eps,
            schedule: schedule.clone(),
            spec: SolverSpec::ddim(1),
        },
        steps: 3,
        schedule: &schedule,
    };
    let teacher = TeacherGenerator {
        teacher: &eps,
        spec: SolverSpec::teacher_reference(),
        schedule: &schedule,
    };
    let n = 1000;
    let records = build_paired_records(
        &round_robin_classes(data.num_classes(), n),
        &sample_seeds(3, n),
        &student,
        &teacher,
        &data,
    )?;
    let summary = summarize(
        &records,
        &DEFAULT_BUCKETS,
        DEFAULT_TIE_TOLERANCE,
        500,
        0.95,
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;
    println!("distance bucket   student  teacher  ties   win rate [95% CI]");
    for (row, w) in summary.buckets.rows.iter().zip(&summary.bucket_win_rates) {
        let ci = w
            .student_win_rate
            .map(|i| format!("{:.3} [{:.3}, {:.3}]", i.estimate, i.lo, i.hi))
            .unwrap_or_else(|| "-".into());
        println!(
            "{:>5}-{:<5}       {:>7}  {:>7}  {:>4}   {ci}",
            row.lo, row.hi, row.student_better, row.teacher_better, row.ties
        );
    }
    let (p, s) = (summary.curvature_distance_pearson, summary.curvature_distance_spearman);
    println!("curvature vs distance: pearson {:.3} [{:.3}, {:.3}]", p.estimate, p.lo, p.hi);
    println!("                       spearman {:.3} [{:.3}, {:.3}]", s.estimate, s.lo, s.hi);
    println!("median teacher curvature {:.4}", summary.median_teacher_curvature);
    Ok(())
}
