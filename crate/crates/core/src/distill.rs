//! Consistency distillation of a few-step student from the teacher.
//!
//! The student is `f(x, t) = c_skip(t) * x + c_out(t) * net(x, t, c, w)`
//! with `s` the data standard deviation, `sigma_min = sigma_0` and
//!
//! ```text
//! c_skip(t) = s^2 / (s^2 + (sigma_t - sigma_min))
//! c_out(t)  = sqrt(sigma_t - sigma_min) * s / sqrt(s^2 + sigma_t)
//! ```
//!
//! so `f(x, t_min) = x` holds exactly. The guidance scale `w` enters the
//! network as one extra scalar input, which lets a single student serve
//! every guidance scale in the training range.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffusion::{forward_diffuse, DataDistribution, EpsNetwork, GuidedDenoiser, NoiseSchedule};
use crate::error::{Error, Result};
use crate::nn::{AdamState, Batch, EmaParams, MlpParams};
use crate::solvers::{ddim_step, sample, ConsistencyFn, SolverSpec, Trajectory};

/// The guidance scale is fed to the network as `w * GUIDANCE_FEATURE_SCALE`.
pub const GUIDANCE_FEATURE_SCALE: f64 = 0.125;

#[derive(Debug, Clone)]
pub struct ConsistencyModel {
    pub params: MlpParams,
    schedule: NoiseSchedule,
    sigma_data: f64,
}

impl ConsistencyModel {
    pub fn new(params: MlpParams, schedule: NoiseSchedule, sigma_data: f64) -> Result<Self> {
        if params.spec().extra_inputs != 1 {
            return Err(Error::InvalidArgument(
                "consistency network needs exactly one extra (guidance) input".into(),
            ));
        }
        if params.spec().max_timestep != schedule.max_t() {
            return Err(Error::InvalidArgument("network and schedule disagree on T".into()));
        }
        if !(sigma_data > 0.0) {
            return Err(Error::InvalidArgument(format!("data std {sigma_data}")));
        }
        Ok(Self {
            params,
            schedule,
            sigma_data,
        })
    }

    /// Student initialized from teacher weights; the new guidance input
    /// column starts at zero.
    pub fn from_teacher(teacher: &MlpParams, schedule: NoiseSchedule, sigma_data: f64) -> Result<Self> {
        Self::new(teacher.with_extra_inputs(1)?, schedule, sigma_data)
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn sigma_data(&self) -> f64 {
        self.sigma_data
    }

    pub fn boundary_coefficients(&self, t: usize) -> Result<(f64, f64)> {
        let sigma = self.schedule.sigma_at(t)?;
        let shifted = sigma - self.schedule.sigma_at(0)?;
        let s2 = self.sigma_data * self.sigma_data;
        let c_skip = s2 / (s2 + shifted);
        let c_out = shifted.sqrt() * self.sigma_data / (s2 + sigma).sqrt();
        Ok((c_skip, c_out))
    }

    pub fn eval(&self, x: &[f64], t: usize, class: usize, guidance: f64) -> Result<Vec<f64>> {
        let (c_skip, c_out) = self.boundary_coefficients(t)?;
        let net = self
            .params
            .forward(x, t, Some(class), &[guidance * GUIDANCE_FEATURE_SCALE])?;
        Ok(combine(x, &net, c_skip, c_out))
    }

    fn eval_with(&self, params: &MlpParams, batch: &Batch) -> Result<(Vec<f64>, crate::nn::ForwardCache, Vec<f64>)> {
        let (net, cache) = params.forward_batch(batch)?;
        let d = params.spec().data_dim;
        let mut c_outs = Vec::with_capacity(batch.len());
        let mut out = Vec::with_capacity(net.len());
        for (r, &t) in batch.t.iter().enumerate() {
            let (c_skip, c_out) = self.boundary_coefficients(t)?;
            c_outs.push(c_out);
            let x = &batch.x[r * d..(r + 1) * d];
            out.extend(combine(x, &net[r * d..(r + 1) * d], c_skip, c_out));
        }
        Ok((out, cache, c_outs))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.params.save(path)
    }

    pub fn load(path: &Path, schedule: NoiseSchedule, sigma_data: f64) -> Result<Self> {
        Self::new(MlpParams::load(path)?, schedule, sigma_data)
    }
}

fn combine(x: &[f64], net: &[f64], c_skip: f64, c_out: f64) -> Vec<f64> {
    // Written so that c_skip == 1, c_out == 0 returns x unchanged bit for bit.
    x.iter()
        .zip(net)
        .map(|(xi, ni)| if c_out == 0.0 { c_skip * xi } else { c_skip * xi + c_out * ni })
        .collect()
}

/// A consistency model bound to one guidance scale, usable as a sampler.
#[derive(Debug, Clone, Copy)]
pub struct GuidedStudent<'a> {
    pub model: &'a ConsistencyModel,
    pub guidance: f64,
}

impl ConsistencyFn for GuidedStudent<'_> {
    fn data_dim(&self) -> usize {
        self.model.params.spec().data_dim
    }

    fn denoise(&self, x: &[f64], t: usize, class: usize) -> Result<Vec<f64>> {
        self.model.eval(x, t, class, self.guidance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CdConfig {
    /// Number of consistency discretization intervals over `0..=T`.
    pub discretization: usize,
    pub ema_rate: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub guidance_range: [f64; 2],
    pub iterations: usize,
    pub log_every: usize,
    pub checkpoint_every: usize,
    /// Teacher trajectories used for the logged self-consistency metric.
    pub probe_trajectories: usize,
    pub probe_guidance: f64,
}

impl Default for CdConfig {
    fn default() -> Self {
        Self {
            discretization: 1000,
            ema_rate: 0.95,
            learning_rate: 1e-5,
            batch_size: 256,
            guidance_range: [1.0, 8.0],
            iterations: 20_000,
            log_every: 500,
            checkpoint_every: 5000,
            probe_trajectories: 16,
            probe_guidance: 1.0,
        }
    }
}

impl CdConfig {
    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        if self.discretization < 2 || self.discretization > schedule.max_t() {
            return Err(Error::Config(format!(
                "distill: discretization must lie in 2..={}",
                schedule.max_t()
            )));
        }
        if !(0.0..=1.0).contains(&self.ema_rate) || !(self.learning_rate > 0.0) {
            return Err(Error::Config("distill: ema_rate or learning_rate out of range".into()));
        }
        let [lo, hi] = self.guidance_range;
        if !(0.0 <= lo && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!("distill: guidance range [{lo}, {hi}]")));
        }
        if self.batch_size == 0 || self.iterations == 0 || self.log_every == 0 || self.checkpoint_every == 0 {
            return Err(Error::Config("distill: counts must be positive".into()));
        }
        Ok(())
    }

    /// Grid index of consistency discretization point `n`.
    pub fn grid_index(&self, schedule: &NoiseSchedule, n: usize) -> usize {
        (n as f64 * schedule.max_t() as f64 / self.discretization as f64).round() as usize
    }
}

/// One minibatch of distillation pairs: the noisier point `x_next` at
/// `t_next` and the teacher's one-step DDIM estimate `x_prev` at `t_prev`.
#[derive(Debug, Clone)]
pub struct CdBatch {
    pub x_next: Vec<f64>,
    pub t_next: Vec<usize>,
    pub x_prev: Vec<f64>,
    pub t_prev: Vec<usize>,
    pub class: Vec<usize>,
    pub guidance: Vec<f64>,
}

impl CdBatch {
    pub fn len(&self) -> usize {
        self.class.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class.is_empty()
    }

    fn batch(&self, x: &[f64], t: &[usize]) -> Batch {
        Batch {
            x: x.to_vec(),
            t: t.to_vec(),
            cond: self.class.iter().map(|&c| Some(c)).collect(),
            extra: self.guidance.iter().map(|w| w * GUIDANCE_FEATURE_SCALE).collect(),
        }
    }
}

/// Draw data, a discretization interval and a guidance scale per example,
/// diffuse, and take one guided teacher DDIM step.
pub fn draw_cd_batch<R: Rng + ?Sized>(
    teacher: &MlpParams,
    data: &DataDistribution,
    schedule: &NoiseSchedule,
    config: &CdConfig,
    rng: &mut R,
) -> Result<CdBatch> {
    let b = config.batch_size;
    let d = data.dim;
    let mut x_next = Vec::with_capacity(b * d);
    let mut t_next = Vec::with_capacity(b);
    let mut t_prev = Vec::with_capacity(b);
    let mut class = Vec::with_capacity(b);
    let mut guidance = Vec::with_capacity(b);
    let [lo, hi] = config.guidance_range;
    for _ in 0..b {
        let c = data.sample_class(rng);
        let x0 = data.sample(c, rng)?;
        let n = rng.gen_range(0..config.discretization);
        let w = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let (tp, tn) = (config.grid_index(schedule, n), config.grid_index(schedule, n + 1));
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        x_next.extend(forward_diffuse(&x0, &z, schedule.sigma_at(tn)?));
        t_next.push(tn);
        t_prev.push(tp);
        class.push(c);
        guidance.push(w);
    }
    // Guided teacher noise prediction, batched over conditional and NULL passes.
    let cond_batch = Batch {
        x: x_next.clone(),
        t: t_next.clone(),
        cond: class.iter().map(|&c| Some(c)).collect(),
        extra: Vec::new(),
    };
    let uncond_batch = Batch {
        cond: vec![None; b],
        ..cond_batch.clone()
    };
    let (eps_c, _) = teacher.forward_batch(&cond_batch)?;
    let (eps_u, _) = teacher.forward_batch(&uncond_batch)?;
    let mut x_prev = Vec::with_capacity(b * d);
    for r in 0..b {
        let w = guidance[r];
        let eps: Vec<f64> = (0..d)
            .map(|k| {
                let (u, c) = (eps_u[r * d + k], eps_c[r * d + k]);
                u + w * (c - u)
            })
            .collect();
        let step = ddim_step(schedule, &x_next[r * d..(r + 1) * d], t_next[r], t_prev[r], &eps)?;
        x_prev.extend(step);
    }
    Ok(CdBatch {
        x_next,
        t_next,
        x_prev,
        t_prev,
        class,
        guidance,
    })
}

/// `mean_b |f_theta(x_next, t_next) - f_target(x_prev, t_prev)|^2` and its
/// gradient with respect to the online parameters. The target network
/// receives no gradient.
pub fn cd_loss(
    model: &ConsistencyModel,
    target: &MlpParams,
    batch: &CdBatch,
) -> Result<(f64, MlpParams)> {
    let online_in = batch.batch(&batch.x_next, &batch.t_next);
    let target_in = batch.batch(&batch.x_prev, &batch.t_prev);
    let (pred, cache, c_outs) = model.eval_with(&model.params, &online_in)?;
    let (goal, _, _) = model.eval_with(target, &target_in)?;
    let d = model.params.spec().data_dim;
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut d_net = vec![0.0; pred.len()];
    for r in 0..batch.len() {
        for k in 0..d {
            let i = r * d + k;
            let diff = pred[i] - goal[i];
            loss += diff * diff;
            d_net[i] = 2.0 * diff * c_outs[r] / n;
        }
    }
    loss /= n;
    if !loss.is_finite() {
        let worst = pred
            .iter()
            .chain(&goal)
            .position(|v| !v.is_finite())
            .map(|i| i / d % batch.len());
        return Err(Error::NonFinite(format!(
            "consistency loss (first non-finite row {worst:?}, t_next {:?})",
            worst.map(|r| batch.t_next[r])
        )));
    }
    Ok((loss, model.params.backward_from_output(&cache, &d_net)?))
}

/// Mean over trajectories of the variance over recorded timesteps of
/// `f(x_t, t)`. Zero for a perfectly self-consistent model.
pub fn self_consistency(
    model: &ConsistencyModel,
    trajectories: &[(usize, Trajectory)],
    guidance: f64,
) -> Result<f64> {
    if trajectories.is_empty() {
        return Err(Error::Empty("self-consistency probe trajectories"));
    }
    let mut total = 0.0;
    for (class, tr) in trajectories {
        let outs = tr
            .points
            .iter()
            .filter(|p| p.t > 0)
            .map(|p| model.eval(&p.x, p.t, *class, guidance))
            .collect::<Result<Vec<_>>>()?;
        let d = outs[0].len();
        let m = outs.len() as f64;
        let mean: Vec<f64> = (0..d).map(|k| outs.iter().map(|o| o[k]).sum::<f64>() / m).collect();
        total += outs
            .iter()
            .map(|o| o.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .sum::<f64>()
            / m;
    }
    Ok(total / trajectories.len() as f64)
}

/// Teacher DDIM trajectories from fresh noise, one per probe.
pub fn probe_trajectories<R: Rng + ?Sized>(
    teacher: &MlpParams,
    data: &DataDistribution,
    schedule: &NoiseSchedule,
    count: usize,
    guidance: f64,
    rng: &mut R,
) -> Result<Vec<(usize, Trajectory)>> {
    let denoiser = GuidedDenoiser::new(EpsNetwork { params: teacher.clone() }, guidance)?;
    (0..count)
        .map(|i| {
            let class = i % data.num_classes();
            let noise: Vec<f64> = (0..data.dim).map(|_| rng.sample(StandardNormal)).collect();
            Ok((class, sample(&denoiser, &SolverSpec::teacher_reference(), schedule, &noise, class)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillLogRow {
    pub iteration: usize,
    pub loss: f64,
    pub self_consistency: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct DistillOutcome {
    pub model: ConsistencyModel,
    pub log: Vec<DistillLogRow>,
    pub checkpoints: Vec<PathBuf>,
}

/// Run consistency distillation. When `checkpoint_dir` is given, the online
/// parameters are written there every `checkpoint_every` iterations.
pub fn distill<R: Rng + ?Sized>(
    teacher: &MlpParams,
    data: &DataDistribution,
    schedule: &NoiseSchedule,
    config: &CdConfig,
    checkpoint_dir: Option<&Path>,
    rng: &mut R,
) -> Result<DistillOutcome> {
    config.validate(schedule)?;
    let mut model = ConsistencyModel::from_teacher(teacher, schedule.clone(), data.data_std())?;
    let mut target = EmaParams::new(&model.params, config.ema_rate)?;
    let mut adam = AdamState::new(&model.params);
    let probes = probe_trajectories(teacher, data, schedule, config.probe_trajectories, config.probe_guidance, rng)?;

    let mut log = vec![DistillLogRow {
        iteration: 0,
        loss: f64::NAN,
        self_consistency: self_consistency(&model, &probes, config.probe_guidance)?,
        grad_norm: f64::NAN,
    }];
    let mut checkpoints: Vec<PathBuf> = Vec::new();
    let (mut window_loss, mut window_grad, mut window_n) = (0.0, 0.0, 0usize);
    for it in 1..=config.iterations {
        let batch = draw_cd_batch(teacher, data, schedule, config, rng)?;
        let (loss, grads) = match cd_loss(&model, target.shadow(), &batch) {
            Ok(v) => v,
            Err(Error::NonFinite(reason)) => {
                return Err(Error::Diverged {
                    iteration: it,
                    reason,
                    last_checkpoint: checkpoints.last().cloned(),
                })
            }
            Err(e) => return Err(e),
        };
        let grad_norm = grads.squared_norm().sqrt();
        if !grad_norm.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                reason: "non-finite gradient".into(),
                last_checkpoint: checkpoints.last().cloned(),
            });
        }
        adam.step(&mut model.params, &grads, config.learning_rate)?;
        target.update(&model.params)?;
        window_loss += loss;
        window_grad += grad_norm;
        window_n += 1;

        if it % config.log_every == 0 || it == config.iterations {
            log.push(DistillLogRow {
                iteration: it,
                loss: window_loss / window_n as f64,
                self_consistency: self_consistency(&model, &probes, config.probe_guidance)?,
                grad_norm: window_grad / window_n as f64,
            });
            (window_loss, window_grad, window_n) = (0.0, 0.0, 0);
        }
        if let Some(dir) = checkpoint_dir {
            if it % config.checkpoint_every == 0 {
                let path = dir.join(format!("student_{it:06}.ckpt"));
                model.save(&path)?;
                checkpoints.push(path);
            }
        }
    }
    Ok(DistillOutcome {
        model,
        log,
        checkpoints,
    })
}
