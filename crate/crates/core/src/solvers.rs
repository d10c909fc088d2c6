//! Probability-flow ODE samplers and multistep consistency sampling.
//!
//! Both deterministic solvers work in data-prediction form. With
//! `alpha_t = sqrt(1 - sigma_t)`, `lambda_t = ln(alpha_t / sqrt(sigma_t))`
//! and `h = lambda_s - lambda_t` for a step `t -> s`:
//!
//! - DDIM: `x_s = alpha_s * x0_t + sqrt(sigma_s) * eps_t`, where
//!   `x0_t = (x_t - sqrt(sigma_t) * eps_t) / alpha_t`.
//! - DPM-Solver++(2M): with `r = (lambda_t - lambda_prev) / h` and
//!   `D = (1 + 1/(2r)) * x0_t - 1/(2r) * x0_prev`,
//!   `x_s = sqrt(sigma_s / sigma_t) * x_t - alpha_s * expm1(-h) * D`.
//!   The first step (no history) is the DDIM step, computed by the same
//!   code path, so the two agree bit for bit there.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffusion::{denoised_prediction, forward_diffuse, GuidedEps, NoiseSchedule};
use crate::error::{ensure_finite, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Ddim,
    Dpm2m,
    Consistency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimestepRule {
    #[default]
    UniformT,
    UniformLambda,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub solver: SolverKind,
    pub steps: usize,
    #[serde(default)]
    pub rule: TimestepRule,
}

impl SolverSpec {
    pub fn ddim(steps: usize) -> Self {
        Self {
            solver: SolverKind::Ddim,
            steps,
            rule: TimestepRule::UniformT,
        }
    }

    pub fn dpm2m(steps: usize) -> Self {
        Self {
            solver: SolverKind::Dpm2m,
            steps,
            rule: TimestepRule::UniformT,
        }
    }

    pub fn consistency(steps: usize) -> Self {
        Self {
            solver: SolverKind::Consistency,
            steps,
            rule: TimestepRule::UniformT,
        }
    }

    /// The teacher setting used as the quality reference: 50 DDIM steps.
    pub fn teacher_reference() -> Self {
        Self::ddim(50)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("solver needs at least one step".into()));
        }
        if self.solver == SolverKind::Consistency && self.rule != TimestepRule::UniformT {
            return Err(Error::InvalidArgument(
                "consistency sampling uses the uniform-index rule".into(),
            ));
        }
        Ok(())
    }
}

/// Student step count for multistep consistency sampling.
pub const DEFAULT_STUDENT_STEPS: usize = 5;

/// `n + 1` strictly decreasing grid indices from `t_start` down to 0.
pub fn timesteps(schedule: &NoiseSchedule, t_start: usize, n: usize, rule: TimestepRule) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::InvalidArgument("zero solver steps".into()));
    }
    if t_start > schedule.max_t() {
        return Err(Error::TimestepOutOfRange {
            t: t_start,
            max: schedule.max_t(),
        });
    }
    if n > t_start {
        return Err(Error::InvalidArgument(format!(
            "{n} steps do not fit strictly decreasing indices below {t_start}"
        )));
    }
    let mut ts = Vec::with_capacity(n + 1);
    match rule {
        TimestepRule::UniformT => {
            for i in 0..=n {
                let v = (t_start as f64 * (n - i) as f64 / n as f64).round() as usize;
                ts.push(v);
            }
        }
        TimestepRule::UniformLambda => {
            let lam: Vec<f64> = (0..=t_start).map(|t| schedule.lambda_at(t)).collect::<Result<_>>()?;
            let (l0, l1) = (lam[t_start], lam[0]);
            ts.push(t_start);
            for i in 1..n {
                let target = l0 + (l1 - l0) * i as f64 / n as f64;
                // lambda decreases in t, so search for the nearest index.
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (t, &l) in lam.iter().enumerate() {
                    let d = (l - target).abs();
                    if d < best_d {
                        best = t;
                        best_d = d;
                    }
                }
                let prev = *ts.last().expect("non-empty");
                let remaining = n - i;
                ts.push(best.min(prev - 1).max(remaining));
            }
            ts.push(0);
        }
    }
    debug_assert!(ts.windows(2).all(|w| w[1] < w[0]));
    Ok(ts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: usize,
    pub sigma: f64,
    pub x: Vec<f64>,
    pub x0_hat: Vec<f64>,
}

/// One recorded reverse-process solve. The last point is the final sample
/// at `t = 0`, recorded with itself as its denoised prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
    pub sample: Vec<f64>,
    /// Solver steps, i.e. calls into the (guided) model.
    pub nfe: usize,
    /// NFE with classifier-free guidance counted as two evaluations per step.
    pub nfe_cfg: usize,
}

impl Trajectory {
    pub fn x0_predictions(&self) -> impl Iterator<Item = &[f64]> {
        self.points.iter().map(|p| p.x0_hat.as_slice())
    }

    /// CSV with columns `step,t,sigma,x_0..,xhat0_0..`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let dim = self.sample.len();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["step".to_string(), "t".into(), "sigma".into()];
        header.extend((0..dim).map(|i| format!("x_{i}")));
        header.extend((0..dim).map(|i| format!("xhat0_{i}")));
        w.write_record(&header).map_err(csv_err)?;
        for (i, p) in self.points.iter().enumerate() {
            let mut row = vec![i.to_string(), p.t.to_string(), p.sigma.to_string()];
            row.extend(p.x.iter().map(|v| v.to_string()));
            row.extend(p.x0_hat.iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// DDIM update from `t` to `s <= t` given the noise estimate at `t`.
pub fn ddim_step(schedule: &NoiseSchedule, x_t: &[f64], t: usize, s: usize, eps: &[f64]) -> Result<Vec<f64>> {
    if s > t {
        return Err(Error::InvalidArgument(format!("DDIM step must go backwards: {t} -> {s}")));
    }
    if s == t {
        return Ok(x_t.to_vec());
    }
    let sigma_t = schedule.sigma_at(t)?;
    let sigma_s = schedule.sigma_at(s)?;
    let x0 = denoised_prediction(x_t, eps, sigma_t)?;
    Ok(ddim_from_x0(&x0, eps, sigma_s))
}

fn ddim_from_x0(x0: &[f64], eps: &[f64], sigma_s: f64) -> Vec<f64> {
    forward_diffuse(x0, eps, sigma_s)
}

/// Previous evaluation kept by the multistep solver.
#[derive(Debug, Clone)]
pub struct DpmHistory {
    pub lambda: f64,
    pub x0_hat: Vec<f64>,
}

/// Second-order multistep DPM update from `t` to `s`.
///
/// `x0_t` and `eps_t` are the current denoised prediction and noise
/// estimate; `prev` is the evaluation before this one, if any.
pub fn dpm2m_step(
    schedule: &NoiseSchedule,
    x_t: &[f64],
    t: usize,
    s: usize,
    x0_t: &[f64],
    eps_t: &[f64],
    prev: Option<&DpmHistory>,
) -> Result<Vec<f64>> {
    let Some(prev) = prev else {
        return ddim_step(schedule, x_t, t, s, eps_t);
    };
    let lambda_t = schedule.lambda_at(t)?;
    let lambda_s = schedule.lambda_at(s)?;
    if !(prev.lambda < lambda_t && lambda_t < lambda_s) {
        return Err(Error::NonMonotoneLambda { step: t });
    }
    let sigma_t = schedule.sigma_at(t)?;
    let sigma_s = schedule.sigma_at(s)?;
    let h = lambda_s - lambda_t;
    let r = (lambda_t - prev.lambda) / h;
    let c_prev = 0.5 / r;
    let alpha_s = (1.0 - sigma_s).sqrt();
    let ratio = (sigma_s / sigma_t).sqrt();
    let coef = -alpha_s * (-h).exp_m1();
    Ok(x_t
        .iter()
        .zip(x0_t)
        .zip(&prev.x0_hat)
        .map(|((x, a), b)| ratio * x + coef * ((1.0 + c_prev) * a - c_prev * b))
        .collect())
}

/// Solve the PF-ODE from pure noise at `T`.
pub fn sample<G: GuidedEps + ?Sized>(
    denoiser: &G,
    spec: &SolverSpec,
    schedule: &NoiseSchedule,
    noise: &[f64],
    class: usize,
) -> Result<Trajectory> {
    sample_from(denoiser, spec, schedule, noise, schedule.max_t(), class)
}

/// Solve the PF-ODE from `x_start` at grid index `t_start` down to 0.
pub fn sample_from<G: GuidedEps + ?Sized>(
    denoiser: &G,
    spec: &SolverSpec,
    schedule: &NoiseSchedule,
    x_start: &[f64],
    t_start: usize,
    class: usize,
) -> Result<Trajectory> {
    spec.validate()?;
    if spec.solver == SolverKind::Consistency {
        return Err(Error::InvalidArgument(
            "consistency sampling needs a consistency model; use consistency_sample".into(),
        ));
    }
    if x_start.len() != denoiser.data_dim() {
        return Err(Error::Shape {
            context: "solvers::sample_from",
            expected: vec![denoiser.data_dim()],
            got: vec![x_start.len()],
        });
    }
    let ts = timesteps(schedule, t_start, spec.steps, spec.rule)?;
    let mut x = x_start.to_vec();
    let mut points = Vec::with_capacity(ts.len());
    let mut history: Option<DpmHistory> = None;
    for w in ts.windows(2) {
        let (t, s) = (w[0], w[1]);
        let sigma_t = schedule.sigma_at(t)?;
        let eps = denoiser.eps(&x, t, class)?;
        ensure_finite(&eps, || format!("noise prediction at t={t}"))?;
        let x0 = denoised_prediction(&x, &eps, sigma_t)?;
        let next = match spec.solver {
            SolverKind::Ddim => ddim_step(schedule, &x, t, s, &eps)?,
            SolverKind::Dpm2m => dpm2m_step(schedule, &x, t, s, &x0, &eps, history.as_ref())?,
            SolverKind::Consistency => unreachable!("rejected above"),
        };
        ensure_finite(&next, || format!("solver state at t={s}"))?;
        history = Some(DpmHistory {
            lambda: schedule.lambda_at(t)?,
            x0_hat: x0.clone(),
        });
        points.push(TrajectoryPoint {
            t,
            sigma: sigma_t,
            x: std::mem::replace(&mut x, next),
            x0_hat: x0,
        });
    }
    points.push(TrajectoryPoint {
        t: 0,
        sigma: schedule.sigma_at(0)?,
        x: x.clone(),
        x0_hat: x.clone(),
    });
    let steps = ts.len() - 1;
    Ok(Trajectory {
        points,
        sample: x,
        nfe: steps,
        nfe_cfg: 2 * steps,
    })
}

/// A consistency function `f(x, t) ~ x_0` for a fixed condition.
pub trait ConsistencyFn: Sync {
    fn data_dim(&self) -> usize;
    fn denoise(&self, x: &[f64], t: usize, class: usize) -> Result<Vec<f64>>;
}

impl<C: ConsistencyFn + ?Sized> ConsistencyFn for &C {
    fn data_dim(&self) -> usize {
        (**self).data_dim()
    }

    fn denoise(&self, x: &[f64], t: usize, class: usize) -> Result<Vec<f64>> {
        (**self).denoise(x, t, class)
    }
}

/// Multistep stochastic consistency sampling with `n` evaluations at
/// uniformly spaced grid indices starting from `T`.
pub fn consistency_sample<C: ConsistencyFn + ?Sized, R: Rng + ?Sized>(
    student: &C,
    n: usize,
    schedule: &NoiseSchedule,
    noise: &[f64],
    class: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    let ts = timesteps(schedule, schedule.max_t(), n, TimestepRule::UniformT)?;
    let t_max = ts[0];
    let mut x0 = student.denoise(noise, t_max, class)?;
    ensure_finite(&x0, || format!("consistency output at t={t_max}"))?;
    let mut points = vec![TrajectoryPoint {
        t: t_max,
        sigma: schedule.sigma_at(t_max)?,
        x: noise.to_vec(),
        x0_hat: x0.clone(),
    }];
    for &tau in &ts[1..n] {
        let sigma = schedule.sigma_at(tau)?;
        let z: Vec<f64> = (0..x0.len()).map(|_| rng.sample(StandardNormal)).collect();
        let x = forward_diffuse(&x0, &z, sigma);
        x0 = student.denoise(&x, tau, class)?;
        ensure_finite(&x0, || format!("consistency output at t={tau}"))?;
        points.push(TrajectoryPoint {
            t: tau,
            sigma,
            x,
            x0_hat: x0.clone(),
        });
    }
    points.push(TrajectoryPoint {
        t: 0,
        sigma: schedule.sigma_at(0)?,
        x: x0.clone(),
        x0_hat: x0.clone(),
    });
    Ok(Trajectory {
        points,
        sample: x0,
        nfe: n,
        nfe_cfg: n,
    })
}

/// Consistency function obtained by solving the teacher ODE from `t` to 0.
/// Exact in the limit of many steps; used as a reference student.
#[derive(Debug, Clone)]
pub struct OdeConsistency<G> {
    pub denoiser: G,
    pub schedule: NoiseSchedule,
    pub spec: SolverSpec,
}

impl<G: GuidedEps> ConsistencyFn for OdeConsistency<G> {
    fn data_dim(&self) -> usize {
        self.denoiser.data_dim()
    }

    fn denoise(&self, x: &[f64], t: usize, class: usize) -> Result<Vec<f64>> {
        if t == 0 {
            return Ok(x.to_vec());
        }
        let mut spec = self.spec;
        spec.steps = spec.steps.min(t);
        Ok(sample_from(&self.denoiser, &spec, &self.schedule, x, t, class)?.sample)
    }
}
