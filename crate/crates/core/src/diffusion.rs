//! Variance-preserving diffusion on conditional Gaussian mixtures.
//!
//! Conventions: `sigma_t` is the *variance* of the forward kernel,
//! `x_t = sqrt(1 - sigma_t) * x_0 + sqrt(sigma_t) * z`, with `t` an integer
//! index on a grid `0..=T`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Condition, MlpParams};

pub const SIGMA_MIN: f64 = 1e-5;
pub const SIGMA_MAX: f64 = 1.0 - 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleKind {
    LinearBeta { beta_start: f64, beta_end: f64 },
    Cosine { offset: f64 },
}

/// Unknown keys are rejected by the flattened family variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub steps: usize,
    #[serde(flatten)]
    pub kind: ScheduleKind,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            steps: 1000,
            kind: ScheduleKind::LinearBeta {
                beta_start: 1e-4,
                beta_end: 2e-2,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    spec: ScheduleSpec,
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(spec: ScheduleSpec) -> Result<Self> {
        let t_max = spec.steps;
        if t_max < 1 {
            return Err(Error::InvalidArgument("schedule needs at least one step".into()));
        }
        let raw: Vec<f64> = match spec.kind {
            ScheduleKind::LinearBeta {
                beta_start,
                beta_end,
            } => {
                if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "invalid beta range [{beta_start}, {beta_end}]"
                    )));
                }
                let mut alpha_bar = 1.0;
                let mut out = vec![0.0];
                for i in 1..=t_max {
                    let frac = if t_max == 1 {
                        0.0
                    } else {
                        (i - 1) as f64 / (t_max - 1) as f64
                    };
                    let beta = beta_start + frac * (beta_end - beta_start);
                    alpha_bar *= 1.0 - beta;
                    out.push(1.0 - alpha_bar);
                }
                out
            }
            ScheduleKind::Cosine { offset } => {
                if !(offset > 0.0) {
                    return Err(Error::InvalidArgument("cosine offset must be positive".into()));
                }
                let f = |t: f64| ((t + offset) / (1.0 + offset) * std::f64::consts::FRAC_PI_2).cos().powi(2);
                let f0 = f(0.0);
                // The cosine signal level reaches ~0 over the last several
                // indices; squeeze affinely into the clamp range instead of
                // clipping so the grid stays strictly increasing.
                (0..=t_max)
                    .map(|i| {
                        let raw = 1.0 - f(i as f64 / t_max as f64) / f0;
                        SIGMA_MIN + (SIGMA_MAX - SIGMA_MIN) * raw
                    })
                    .collect()
            }
        };
        let sigma: Vec<f64> = raw.into_iter().map(|s| s.clamp(SIGMA_MIN, SIGMA_MAX)).collect();
        if sigma.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "schedule is not strictly increasing after clamping".into(),
            ));
        }
        Ok(Self { spec, sigma })
    }

    pub fn spec(&self) -> &ScheduleSpec {
        &self.spec
    }

    /// `T`, the index of the last grid point.
    pub fn max_t(&self) -> usize {
        self.sigma.len() - 1
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigma
    }

    pub fn sigma_at(&self, t: usize) -> Result<f64> {
        self.sigma.get(t).copied().ok_or(Error::TimestepOutOfRange {
            t,
            max: self.max_t(),
        })
    }

    /// Half log signal-to-noise ratio, `0.5 * ln((1 - sigma) / sigma)`.
    pub fn lambda_at(&self, t: usize) -> Result<f64> {
        let s = self.sigma_at(t)?;
        Ok(0.5 * ((1.0 - s) / s).ln())
    }

    /// Grid index whose `sigma_t` is closest to `sigma`; ties go to the
    /// smaller index.
    pub fn nearest_index(&self, sigma: f64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, &s) in self.sigma.iter().enumerate() {
            let d = (s - sigma).abs();
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }
}

/// `sqrt(1 - sigma_t) * x0 + sqrt(sigma_t) * z`.
pub fn forward_diffuse(x0: &[f64], z: &[f64], sigma: f64) -> Vec<f64> {
    let a = (1.0 - sigma).sqrt();
    let b = sigma.sqrt();
    x0.iter().zip(z).map(|(x, z)| a * x + b * z).collect()
}

/// Invert the forward kernel for `x_0` given the noise estimate.
pub fn denoised_prediction(x_t: &[f64], eps: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if sigma >= 1.0 - 1e-12 {
        return Err(Error::Singular(sigma));
    }
    let a = (1.0 - sigma).sqrt();
    let b = sigma.sqrt();
    Ok(x_t.iter().zip(eps).map(|(x, e)| (x - b * e) / a).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Isotropic standard deviation.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassMixture {
    pub prior: f64,
    pub components: Vec<MixtureComponent>,
}

/// Per-class isotropic Gaussian mixtures; the class id plays the role of a
/// prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataDistribution {
    pub dim: usize,
    pub classes: Vec<ClassMixture>,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl DataDistribution {
    /// Four classes of three-component 2-D mixtures, each with its own
    /// geometry: a tight triangle, a wide line, a skewed cluster and a ring
    /// segment.
    pub fn benchmark() -> Self {
        let comp = |w: f64, m: [f64; 2], s: f64| MixtureComponent {
            weight: w,
            mean: m.to_vec(),
            std: s,
        };
        let classes = vec![
            ClassMixture {
                prior: 0.25,
                components: vec![
                    comp(0.4, [1.2, 0.0], 0.15),
                    comp(0.3, [-0.6, 1.04], 0.15),
                    comp(0.3, [-0.6, -1.04], 0.15),
                ],
            },
            ClassMixture {
                prior: 0.25,
                components: vec![
                    comp(0.5, [-1.5, -1.5], 0.2),
                    comp(0.25, [0.0, 0.0], 0.2),
                    comp(0.25, [1.5, 1.5], 0.2),
                ],
            },
            ClassMixture {
                prior: 0.25,
                components: vec![
                    comp(0.6, [1.0, -1.0], 0.25),
                    comp(0.3, [1.8, 0.2], 0.12),
                    comp(0.1, [0.2, -1.9], 0.1),
                ],
            },
            ClassMixture {
                prior: 0.25,
                components: vec![
                    comp(0.34, [-1.6, 0.3], 0.1),
                    comp(0.33, [-1.0, 1.3], 0.1),
                    comp(0.33, [0.1, 1.7], 0.1),
                ],
            },
        ];
        Self { dim: 2, classes }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() || self.dim == 0 {
            return Err(Error::Config("data distribution needs classes and a positive dimension".into()));
        }
        let prior: f64 = self.classes.iter().map(|c| c.prior).sum();
        if (prior - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("class priors sum to {prior}, not 1")));
        }
        for (ci, c) in self.classes.iter().enumerate() {
            let w: f64 = c.components.iter().map(|k| k.weight).sum();
            if c.components.is_empty() || (w - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("class {ci}: component weights sum to {w}, not 1")));
            }
            for k in &c.components {
                if !(k.std > 0.0) || k.mean.len() != self.dim || !(k.weight >= 0.0) {
                    return Err(Error::Config(format!("class {ci}: invalid component {k:?}")));
                }
            }
        }
        Ok(())
    }

    fn class(&self, c: usize) -> Result<&ClassMixture> {
        self.classes.get(c).ok_or(Error::UnknownClass {
            class: c,
            num_classes: self.classes.len(),
        })
    }

    /// Components of the (possibly unconditional) data mixture with
    /// effective weights.
    fn components(&self, cond: Condition) -> Result<Vec<(f64, &MixtureComponent)>> {
        Ok(match cond {
            Some(c) => self.class(c)?.components.iter().map(|k| (k.weight, k)).collect(),
            None => self
                .classes
                .iter()
                .flat_map(|cl| cl.components.iter().map(move |k| (cl.prior * k.weight, k)))
                .collect(),
        })
    }

    /// Log-density of the mixture diffused to noise variance `sigma`.
    /// `sigma = 0` gives the data log-density itself.
    pub fn diffused_log_density(&self, x: &[f64], cond: Condition, sigma: f64) -> Result<f64> {
        let a = (1.0 - sigma).sqrt();
        let d = self.dim as f64;
        let terms: Vec<f64> = self
            .components(cond)?
            .into_iter()
            .filter(|(w, _)| *w > 0.0)
            .map(|(w, k)| {
                let var = (1.0 - sigma) * k.std * k.std + sigma;
                let sq: f64 = x.iter().zip(&k.mean).map(|(xi, m)| (xi - a * m).powi(2)).sum();
                w.ln() - 0.5 * d * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * sq / var
            })
            .collect();
        Ok(log_sum_exp(&terms))
    }

    pub fn log_density(&self, x: &[f64], class: usize) -> Result<f64> {
        self.diffused_log_density(x, Some(class), 0.0)
    }

    /// `grad_x log p_t(x | c)` for the mixture diffused to variance `sigma`.
    pub fn true_score(&self, x: &[f64], cond: Condition, sigma: f64) -> Result<Vec<f64>> {
        let a = (1.0 - sigma).sqrt();
        let d = self.dim as f64;
        let comps = self.components(cond)?;
        let mut logs = Vec::with_capacity(comps.len());
        let mut grads = Vec::with_capacity(comps.len());
        for (w, k) in comps.into_iter().filter(|(w, _)| *w > 0.0) {
            let var = (1.0 - sigma) * k.std * k.std + sigma;
            let diff: Vec<f64> = x.iter().zip(&k.mean).map(|(xi, m)| xi - a * m).collect();
            let sq: f64 = diff.iter().map(|v| v * v).sum();
            logs.push(w.ln() - 0.5 * d * var.ln() - 0.5 * sq / var);
            grads.push(diff.into_iter().map(|v| -v / var).collect::<Vec<_>>());
        }
        let lse = log_sum_exp(&logs);
        let mut out = vec![0.0; self.dim];
        for (l, g) in logs.iter().zip(&grads) {
            let r = (l - lse).exp();
            for (o, gi) in out.iter_mut().zip(g) {
                *o += r * gi;
            }
        }
        Ok(out)
    }

    /// Per-dimension standard deviation of the unconditional data
    /// distribution, averaged over dimensions.
    pub fn data_std(&self) -> f64 {
        let mut mean = vec![0.0; self.dim];
        let mut second = 0.0;
        for cl in &self.classes {
            for k in &cl.components {
                let w = cl.prior * k.weight;
                for (m, &mu) in mean.iter_mut().zip(&k.mean) {
                    *m += w * mu;
                }
                second += w * (k.mean.iter().map(|m| m * m).sum::<f64>() + self.dim as f64 * k.std * k.std);
            }
        }
        let var = (second - mean.iter().map(|m| m * m).sum::<f64>()) / self.dim as f64;
        var.sqrt()
    }

    /// Ancestral draw from class `c`.
    pub fn sample<R: rand::Rng + ?Sized>(&self, class: usize, rng: &mut R) -> Result<Vec<f64>> {
        let cl = self.class(class)?;
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = cl.components.last().expect("validated non-empty");
        for k in &cl.components {
            acc += k.weight;
            if u < acc {
                chosen = k;
                break;
            }
        }
        Ok(chosen
            .mean
            .iter()
            .map(|m| m + chosen.std * rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect())
    }

    /// Draw a class id from the prior.
    pub fn sample_class<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, c) in self.classes.iter().enumerate() {
            acc += c.prior;
            if u < acc {
                return i;
            }
        }
        self.classes.len() - 1
    }
}

/// Anything that predicts the forward-process noise of `x` at grid index `t`.
pub trait NoisePredictor: Sync {
    fn data_dim(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn predict_eps(&self, x: &[f64], t: usize, cond: Condition) -> Result<Vec<f64>>;
}

/// The trained MLP teacher: an epsilon-predictor on a fixed schedule.
#[derive(Debug, Clone)]
pub struct EpsNetwork {
    pub params: MlpParams,
}

impl NoisePredictor for EpsNetwork {
    fn data_dim(&self) -> usize {
        self.params.spec().data_dim
    }

    fn num_classes(&self) -> usize {
        self.params.spec().num_classes
    }

    fn predict_eps(&self, x: &[f64], t: usize, cond: Condition) -> Result<Vec<f64>> {
        self.params.forward(x, t, cond, &[])
    }
}

/// Exact noise prediction `-sqrt(sigma_t) * grad log p_t`, available because
/// diffused mixtures stay mixtures.
#[derive(Debug, Clone)]
pub struct AnalyticEps {
    pub data: DataDistribution,
    pub schedule: NoiseSchedule,
}

impl NoisePredictor for AnalyticEps {
    fn data_dim(&self) -> usize {
        self.data.dim
    }

    fn num_classes(&self) -> usize {
        self.data.num_classes()
    }

    fn predict_eps(&self, x: &[f64], t: usize, cond: Condition) -> Result<Vec<f64>> {
        let sigma = self.schedule.sigma_at(t)?;
        let s = sigma.sqrt();
        Ok(self
            .data
            .true_score(x, cond, sigma)?
            .into_iter()
            .map(|g| -s * g)
            .collect())
    }
}

/// Classifier-free guided denoiser:
/// `eps_uncond + w * (eps_cond - eps_uncond)`.
///
/// `w = 1` and `w = 0` short-circuit to a single evaluation so that they
/// reproduce the conditional and unconditional outputs bit for bit.
#[derive(Debug, Clone)]
pub struct GuidedDenoiser<M> {
    pub model: M,
    pub guidance: f64,
}

/// Classifier-free guidance scale used for the teacher in the experiments.
pub const DEFAULT_GUIDANCE: f64 = 8.0;

impl<M: NoisePredictor> GuidedDenoiser<M> {
    pub fn new(model: M, guidance: f64) -> Result<Self> {
        if !(guidance.is_finite() && guidance >= 0.0) {
            return Err(Error::InvalidArgument(format!("guidance scale {guidance}")));
        }
        Ok(Self { model, guidance })
    }

    pub fn guided_eps(&self, x: &[f64], t: usize, class: usize) -> Result<Vec<f64>> {
        if class >= self.model.num_classes() {
            return Err(Error::UnknownClass {
                class,
                num_classes: self.model.num_classes(),
            });
        }
        let w = self.guidance;
        if w == 1.0 {
            return self.model.predict_eps(x, t, Some(class));
        }
        let uncond = self.model.predict_eps(x, t, None)?;
        if w == 0.0 {
            return Ok(uncond);
        }
        let cond = self.model.predict_eps(x, t, Some(class))?;
        Ok(uncond.iter().zip(&cond).map(|(u, c)| u + w * (c - u)).collect())
    }
}

/// Guided noise prediction as consumed by the ODE solvers.
pub trait GuidedEps: Sync {
    fn data_dim(&self) -> usize;
    fn eps(&self, x: &[f64], t: usize, class: usize) -> Result<Vec<f64>>;
}

impl<M: NoisePredictor> GuidedEps for GuidedDenoiser<M> {
    fn data_dim(&self) -> usize {
        self.model.data_dim()
    }

    fn eps(&self, x: &[f64], t: usize, class: usize) -> Result<Vec<f64>> {
        self.guided_eps(x, t, class)
    }
}

impl<G: GuidedEps + ?Sized> GuidedEps for &G {
    fn data_dim(&self) -> usize {
        (**self).data_dim()
    }

    fn eps(&self, x: &[f64], t: usize, class: usize) -> Result<Vec<f64>> {
        (**self).eps(x, t, class)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use rand::Rng;

    fn default_schedule() -> NoiseSchedule {
        NoiseSchedule::new(ScheduleSpec::default()).unwrap()
    }

    #[test]
    fn schedule_boundaries_and_monotonicity() {
        for spec in [
            ScheduleSpec::default(),
            ScheduleSpec {
                steps: 1000,
                kind: ScheduleKind::Cosine { offset: 0.008 },
            },
        ] {
            let s = NoiseSchedule::new(spec).unwrap();
            assert!(s.sigma_at(0).unwrap() <= 1e-4);
            assert!(s.sigma_at(s.max_t()).unwrap() >= 1.0 - 1e-4);
            assert!(s.sigmas().windows(2).all(|w| w[1] > w[0]));
            assert!(s.sigmas().iter().all(|&v| v > 0.0 && v < 1.0));
        }
        assert!(matches!(
            default_schedule().sigma_at(1001),
            Err(Error::TimestepOutOfRange { .. })
        ));
    }

    #[test]
    fn linear_midpoint_matches_direct_product() {
        let s = default_schedule();
        let mut prod = 1.0;
        for i in 1..=500u32 {
            let beta = 1e-4 + (i - 1) as f64 / 999.0 * (2e-2 - 1e-4);
            prod *= 1.0 - beta;
        }
        assert!((s.sigma_at(500).unwrap() - (1.0 - prod)).abs() < 1e-14);
    }

    #[test]
    fn forward_diffuse_boundaries() {
        let s = default_schedule();
        let x0 = [0.7, -1.3];
        let z = [1.0, -1.0];
        let near = forward_diffuse(&x0, &z, s.sigma_at(0).unwrap());
        for (a, b) in near.iter().zip(&x0) {
            assert!((a - b).abs() <= 1e-2);
        }
        let far = forward_diffuse(&x0, &z, s.sigma_at(1000).unwrap());
        for (a, b) in far.iter().zip(&z) {
            assert!((a - b).abs() < 2e-2);
        }
    }

    #[test]
    fn denoised_prediction_inverts_kernel() {
        let s = default_schedule();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for t in [0, 1, 250, 999, 1000] {
            let sigma = s.sigma_at(t).unwrap();
            let x0: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
            let z: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
            let xt = forward_diffuse(&x0, &z, sigma);
            let rec = denoised_prediction(&xt, &z, sigma).unwrap();
            for (a, b) in rec.iter().zip(&x0) {
                assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()) / (1.0 - sigma).sqrt());
            }
            let back = forward_diffuse(&rec, &z, sigma);
            for (a, b) in back.iter().zip(&xt) {
                assert!((a - b).abs() < 1e-10);
            }
            let zero = denoised_prediction(&xt, &[0.0, 0.0], sigma).unwrap();
            assert_eq!(zero[0], xt[0] / (1.0 - sigma).sqrt());
        }
        assert!(matches!(denoised_prediction(&[1.0], &[0.0], 1.0), Err(Error::Singular(_))));
    }

    fn single(mean: Vec<f64>, std: f64) -> DataDistribution {
        DataDistribution {
            dim: mean.len(),
            classes: vec![ClassMixture {
                prior: 1.0,
                components: vec![MixtureComponent { weight: 1.0, mean, std }],
            }],
        }
    }

    #[test]
    fn standard_normal_score_is_minus_x() {
        let d = single(vec![0.0, 0.0], 1.0);
        for sigma in [1e-5, 0.3, 0.99] {
            let g = d.true_score(&[0.4, -2.0], Some(0), sigma).unwrap();
            assert!((g[0] + 0.4).abs() < 1e-14 && (g[1] - 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn single_gaussian_score_closed_form() {
        let d = single(vec![1.0, -0.5], 0.3);
        let sigma = 0.42;
        let x = [0.2, 0.9];
        let g = d.true_score(&x, Some(0), sigma).unwrap();
        let a = (1.0 - sigma).sqrt();
        let var = (1.0 - sigma) * 0.09 + sigma;
        assert!((g[0] + (x[0] - a * 1.0) / var).abs() < 1e-14);
        assert!((g[1] + (x[1] + a * 0.5) / var).abs() < 1e-14);
    }

    #[test]
    fn mixture_score_matches_log_density_gradient() {
        let d = DataDistribution::benchmark();
        let h = 1e-6;
        for (c, sigma, x) in [
            (0usize, 0.05, [0.3, 0.4]),
            (1, 0.5, [-1.0, 0.2]),
            (2, 0.9, [1.1, -0.3]),
        ] {
            let g = d.true_score(&x, Some(c), sigma).unwrap();
            for k in 0..2 {
                let mut xp = x;
                xp[k] += h;
                let mut xm = x;
                xm[k] -= h;
                let fd = (d.diffused_log_density(&xp, Some(c), sigma).unwrap()
                    - d.diffused_log_density(&xm, Some(c), sigma).unwrap())
                    / (2.0 * h);
                assert!((g[k] - fd).abs() / fd.abs().max(1e-3) < 1e-6, "{} vs {}", g[k], fd);
            }
        }
    }

    #[test]
    fn guidance_degenerate_scales_are_exact() {
        let schedule = default_schedule();
        let model = AnalyticEps {
            data: DataDistribution::benchmark(),
            schedule,
        };
        let x = [0.5, -0.2];
        let cond = model.predict_eps(&x, 300, Some(2)).unwrap();
        let uncond = model.predict_eps(&x, 300, None).unwrap();
        let g1 = GuidedDenoiser::new(model.clone(), 1.0).unwrap();
        assert_eq!(g1.guided_eps(&x, 300, 2).unwrap(), cond);
        let g0 = GuidedDenoiser::new(model.clone(), 0.0).unwrap();
        assert_eq!(g0.guided_eps(&x, 300, 2).unwrap(), uncond);
        let g8 = GuidedDenoiser::new(model, DEFAULT_GUIDANCE).unwrap();
        let e = g8.guided_eps(&x, 300, 2).unwrap();
        for k in 0..2 {
            assert!((e[k] - (uncond[k] + 8.0 * (cond[k] - uncond[k]))).abs() < 1e-15);
        }
        assert!(matches!(g8.guided_eps(&x, 300, 4), Err(Error::UnknownClass { .. })));
    }

    #[test]
    fn benchmark_is_valid() {
        let d = DataDistribution::benchmark();
        d.validate().unwrap();
        assert_eq!(d.num_classes(), 4);
        assert!(d.data_std() > 0.5 && d.data_std() < 2.0);
    }

    #[test]
    fn nearest_index_picks_closest_sigma() {
        let s = default_schedule();
        assert_eq!(s.nearest_index(1.0), 1000);
        assert_eq!(s.nearest_index(0.0), 0);
        let t = s.nearest_index(0.7);
        let d = (s.sigma_at(t).unwrap() - 0.7).abs();
        assert!(d <= (s.sigma_at(t - 1).unwrap() - 0.7).abs());
        assert!(d <= (s.sigma_at(t + 1).unwrap() - 0.7).abs());
    }
}
