//! Denoising-loss training of the epsilon-prediction teacher.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffusion::{forward_diffuse, DataDistribution, NoiseSchedule};
use crate::error::{Error, Result};
use crate::nn::{Activation, AdamState, Batch, EmaParams, Loss, MlpParams, MlpSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub hidden: Vec<usize>,
    pub time_dim: usize,
    pub cond_dim: usize,
    pub activation: Activation,
}

impl Default for ArchSpec {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128, 128],
            time_dim: 32,
            cond_dim: 16,
            activation: Activation::Silu,
        }
    }
}

impl ArchSpec {
    pub fn mlp_spec(&self, data: &DataDistribution, schedule: &NoiseSchedule) -> MlpSpec {
        MlpSpec {
            data_dim: data.dim,
            time_dim: self.time_dim,
            cond_dim: self.cond_dim,
            num_classes: data.num_classes(),
            extra_inputs: 0,
            max_timestep: schedule.max_t(),
            hidden: self.hidden.clone(),
            activation: self.activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherConfig {
    #[serde(default)]
    pub arch: ArchSpec,
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Probability of replacing the condition with NULL during training.
    pub uncond_prob: f64,
    pub ema_rate: f64,
    pub log_every: usize,
    /// Size of the fixed probe set used for the logged score error.
    pub probe_size: usize,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            arch: ArchSpec::default(),
            iterations: 8000,
            batch_size: 256,
            learning_rate: 1e-3,
            uncond_prob: 0.1,
            ema_rate: 0.999,
            log_every: 500,
            probe_size: 512,
        }
    }
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 || self.log_every == 0 {
            return Err(Error::Config("teacher: iterations, batch_size and log_every must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..=1.0).contains(&self.uncond_prob) || !(0.0..=1.0).contains(&self.ema_rate) {
            return Err(Error::Config("teacher: learning_rate, uncond_prob or ema_rate out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherLogRow {
    pub iteration: usize,
    pub loss: f64,
    /// `mean |eps_net - eps_true|^2` on the probe set, with
    /// `eps_true = -sqrt(sigma_t) * grad log p_t`, i.e. the sigma-weighted
    /// score error of the EMA network.
    pub score_mse: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TeacherOutcome {
    /// EMA parameters, used as the teacher.
    pub params: MlpParams,
    pub log: Vec<TeacherLogRow>,
}

struct Probe {
    batch: Batch,
    eps_true: Vec<f64>,
}

fn draw_noised<R: Rng + ?Sized>(
    data: &DataDistribution,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<(usize, usize, Vec<f64>, Vec<f64>)> {
    let class = data.sample_class(rng);
    let x0 = data.sample(class, rng)?;
    let t = rng.gen_range(1..=schedule.max_t());
    let z: Vec<f64> = (0..data.dim).map(|_| rng.sample(StandardNormal)).collect();
    let xt = forward_diffuse(&x0, &z, schedule.sigma_at(t)?);
    Ok((class, t, xt, z))
}

fn build_probe<R: Rng + ?Sized>(
    data: &DataDistribution,
    schedule: &NoiseSchedule,
    size: usize,
    rng: &mut R,
) -> Result<Probe> {
    let mut batch = Batch::default();
    let mut eps_true = Vec::with_capacity(size * data.dim);
    for _ in 0..size {
        let (class, t, xt, _) = draw_noised(data, schedule, rng)?;
        let sigma = schedule.sigma_at(t)?;
        let score = data.true_score(&xt, Some(class), sigma)?;
        eps_true.extend(score.iter().map(|g| -sigma.sqrt() * g));
        batch.push(&xt, t, Some(class), &[]);
    }
    Ok(Probe { batch, eps_true })
}

/// Mean squared error between the network's conditional noise prediction
/// and the exact one on a probe batch.
fn probe_error(params: &MlpParams, probe: &Probe) -> Result<f64> {
    let (pred, _) = params.forward_batch(&probe.batch)?;
    let n = probe.batch.len() as f64;
    Ok(pred.iter().zip(&probe.eps_true).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n)
}

/// Train an epsilon-predictor with classifier-free condition dropout.
///
/// Single-threaded; identical seeds give bit-identical parameters.
pub fn train_teacher<R: Rng + ?Sized>(
    data: &DataDistribution,
    schedule: &NoiseSchedule,
    config: &TeacherConfig,
    rng: &mut R,
) -> Result<TeacherOutcome> {
    config.validate()?;
    data.validate()?;
    let mut params = MlpParams::init(config.arch.mlp_spec(data, schedule), rng)?;
    params.zero_output_layer();
    let mut adam = AdamState::new(&params);
    let mut ema = EmaParams::new(&params, config.ema_rate)?;
    let probe = build_probe(data, schedule, config.probe_size, rng)?;

    let mut log = Vec::new();
    let mut window_loss = 0.0;
    let mut window_grad = 0.0;
    let mut window_n = 0usize;
    for it in 1..=config.iterations {
        let mut batch = Batch::default();
        let mut target = Vec::with_capacity(config.batch_size * data.dim);
        for _ in 0..config.batch_size {
            let (class, t, xt, z) = draw_noised(data, schedule, rng)?;
            let cond = if rng.gen::<f64>() < config.uncond_prob {
                None
            } else {
                Some(class)
            };
            batch.push(&xt, t, cond, &[]);
            target.extend(z);
        }
        let (loss, grads) = params.backward(&batch, &target, Loss::L2 { weight: 1.0 })?;
        window_loss += loss;
        window_grad += grads.squared_norm().sqrt();
        window_n += 1;
        adam.step(&mut params, &grads, config.learning_rate)?;
        ema.update(&params)?;

        if it % config.log_every == 0 || it == config.iterations {
            log.push(TeacherLogRow {
                iteration: it,
                loss: window_loss / window_n as f64,
                score_mse: probe_error(ema.shadow(), &probe)?,
                grad_norm: window_grad / window_n as f64,
            });
            window_loss = 0.0;
            window_grad = 0.0;
            window_n = 0;
        }
    }
    Ok(TeacherOutcome {
        params: ema.into_shadow(),
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::ScheduleSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> TeacherConfig {
        TeacherConfig {
            arch: ArchSpec {
                hidden: vec![16, 16],
                time_dim: 8,
                cond_dim: 4,
                activation: Activation::Silu,
            },
            iterations: 60,
            batch_size: 16,
            learning_rate: 1e-3,
            uncond_prob: 0.1,
            ema_rate: 0.9,
            log_every: 20,
            probe_size: 32,
        }
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let data = DataDistribution::benchmark();
        let schedule = NoiseSchedule::new(ScheduleSpec::default()).unwrap();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            train_teacher(&data, &schedule, &tiny_config(), &mut rng).unwrap()
        };
        let (a, b, c) = (run(3), run(3), run(4));
        assert_eq!(a.params.to_bytes(), b.params.to_bytes());
        assert_ne!(a.params.to_bytes(), c.params.to_bytes());
        assert_eq!(a.log.len(), 3);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let data = DataDistribution::benchmark();
        let schedule = NoiseSchedule::new(ScheduleSpec::default()).unwrap();
        let mut cfg = tiny_config();
        cfg.batch_size = 0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(train_teacher(&data, &schedule, &cfg, &mut rng), Err(Error::Config(_))));
    }
}
