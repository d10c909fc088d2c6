//! DDIM and second-order multistep solvers driven by the exact score of a
//! Gaussian, where the flow map is known in closed form.
//!
//! `cargo run --release --example analytic_solvers`

use diffcascade::diffusion::{AnalyticEps, ClassMixture, DataDistribution, GuidedDenoiser, MixtureComponent, NoiseSchedule, ScheduleSpec};
use diffcascade::solvers::{sample, SolverSpec, TimestepRule};

fn main() -> diffcascade::Result<()> {
    let schedule = NoiseSchedule::new(ScheduleSpec::default())?;
    let std = 4.0;
    let data = DataDistribution {
        dim: 2,
        classes: vec![ClassMixture {
            prior: 1.0,
            components: vec![MixtureComponent {
                weight: 1.0,
                mean: vec![0.0, 0.0],
                std,
            }],
        }],
    };
    let eps = GuidedDenoiser::new(
        AnalyticEps {
            data,
            schedule: schedule.clone(),
        },
        1.0,
    )?;
    let var = |t: usize| -> diffcascade::Result<f64> {
        let s = schedule.sigma_at(t)?;
        Ok((1.0 - s) * std * std + s)
    };
    let x_t = [0.9, -1.3];
    let scale = (var(0)? / var(schedule.max_t())?).sqrt();

    println!("{:>4} {:>12} {:>12}", "n", "ddim err", "dpm2m err");
    for n in [5, 10, 20, 40, 80] {
        let mut errs = Vec::new();
        for spec in [SolverSpec::ddim(n), SolverSpec::dpm2m(n)] {
            let spec = SolverSpec {
                rule: TimestepRule::UniformT,
                ..spec
            };
            let tr = sample(&eps, &spec, &schedule, &x_t, 0)?;
            errs.push(tr.sample.iter().zip(&x_t).map(|(a, x)| (a - scale * x).powi(2)).sum::<f64>().sqrt());
        }
        println!("{n:>4} {:>12.3e} {:>12.3e}", errs[0], errs[1]);
    }
    Ok(())
}
