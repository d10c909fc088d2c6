//! Sample-quality scoring, percentile thresholds and accept/improve decisions.
//!
//! The quality estimator is the exact conditional log-density of the
//! ground-truth mixture. Scoring costs no denoiser evaluations.

use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::DataDistribution;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EstimatorId(pub String);

impl EstimatorId {
    pub fn true_log_density() -> Self {
        Self(TRUE_LOG_DENSITY.to_string())
    }
}

impl fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub const TRUE_LOG_DENSITY: &str = "true-log-density";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityScore {
    pub value: f64,
    pub estimator: EstimatorId,
}

/// `log p_data(x | class)`. Higher is better.
pub fn score(x: &[f64], class: usize, data: &DataDistribution) -> Result<QualityScore> {
    let value = data.log_density(x, class)?;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("score of {x:?}")));
    }
    Ok(QualityScore {
        value,
        estimator: EstimatorId::true_log_density(),
    })
}

/// Percentile cut-off fitted on hold-out student scores.
///
/// `tau` is the nearest-rank `k`-th percentile: the score of rank
/// `ceil(k/100 * m)`, clamped to `1..=m`, in the ascending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdCalibration {
    pub percentile: f64,
    pub tau: f64,
    pub holdout_size: usize,
    pub estimator: EstimatorId,
    /// SHA-256 over the sorted hold-out scores as little-endian f64.
    pub holdout_digest: String,
    pub sorted_scores: Vec<f64>,
}

fn check_percentile(k: f64) -> Result<()> {
    if (0.0..=100.0).contains(&k) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("percentile {k} outside [0, 100]")))
    }
}

fn nearest_rank(sorted: &[f64], k: f64) -> f64 {
    let m = sorted.len();
    let rank = ((k / 100.0 * m as f64).ceil() as usize).clamp(1, m);
    sorted[rank - 1]
}

pub fn scores_digest(sorted: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in sorted {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub fn calibrate(scores: &[f64], k: f64, estimator: EstimatorId) -> Result<ThresholdCalibration> {
    if scores.is_empty() {
        return Err(Error::Empty("calibration scores"));
    }
    check_percentile(k)?;
    if let Some(bad) = scores.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("calibration score {bad}")));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(ThresholdCalibration {
        percentile: k,
        tau: nearest_rank(&sorted, k),
        holdout_size: sorted.len(),
        estimator,
        holdout_digest: scores_digest(&sorted),
        sorted_scores: sorted,
    })
}

impl ThresholdCalibration {
    /// The threshold used by [`decide`]. At `k = 0` nothing is improved and
    /// at `k = 100` everything is, even for scores outside the hold-out range.
    pub fn cutoff(&self) -> f64 {
        if self.percentile <= 0.0 {
            f64::NEG_INFINITY
        } else if self.percentile >= 100.0 {
            f64::INFINITY
        } else {
            self.tau
        }
    }

    /// Recompute `tau` for another percentile on the same hold-out set.
    pub fn with_percentile(&self, k: f64) -> Result<Self> {
        calibrate(&self.sorted_scores, k, self.estimator.clone())
    }

    /// Check that the stored fields agree with each other.
    pub fn verify(&self) -> Result<()> {
        check_percentile(self.percentile)?;
        if self.sorted_scores.is_empty() || self.sorted_scores.len() != self.holdout_size {
            return Err(Error::Checkpoint("calibration hold-out size mismatch".into()));
        }
        if !self.sorted_scores.windows(2).all(|w| w[0] <= w[1]) {
            return Err(Error::Checkpoint("calibration scores not sorted".into()));
        }
        if scores_digest(&self.sorted_scores) != self.holdout_digest {
            return Err(Error::Checkpoint("calibration hold-out digest mismatch".into()));
        }
        if nearest_rank(&self.sorted_scores, self.percentile) != self.tau {
            return Err(Error::Checkpoint("calibration tau disagrees with its percentile".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cal: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        cal.verify()?;
        Ok(cal)
    }
}

/// Mean steps per sample when a fraction `k/100` is handed to the teacher.
pub fn expected_budget(student_steps: f64, teacher_steps: f64, k: f64) -> f64 {
    student_steps + k / 100.0 * teacher_steps
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Decision {
    Accept,
    Improve,
}

/// IMPROVE iff `score < cutoff`; ties are accepted.
pub fn decide(score: f64, cutoff: f64) -> Decision {
    if score < cutoff {
        Decision::Improve
    } else {
        Decision::Accept
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleSpec {
    #[default]
    TrueDensity,
    Noisy { accuracy: f64 },
}

impl OracleSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::TrueDensity => Ok(()),
            Self::Noisy { accuracy } if (0.5..=1.0).contains(&accuracy) => Ok(()),
            Self::Noisy { accuracy } => Err(Error::InvalidArgument(format!(
                "oracle accuracy {accuracy} outside [0.5, 1]"
            ))),
        }
    }
}

/// The decision a perfect full-reference oracle makes: improve iff the
/// teacher's candidate scores strictly higher than the student sample.
pub fn reference_decision(student_score: f64, reference_score: f64) -> Decision {
    if reference_score > student_score {
        Decision::Improve
    } else {
        Decision::Accept
    }
}

/// Simulated oracle of accuracy `a`: the reference decision when
/// `u < a`, its opposite otherwise, with `u` uniform on `[0, 1)`.
///
/// Exactly one uniform is drawn per call, so callers sharing a stream across
/// accuracies get decisions that only ever switch towards the truth as `a`
/// grows.
pub fn noisy_decide<R: Rng + ?Sized>(
    student_score: f64,
    reference_score: f64,
    accuracy: f64,
    rng: &mut R,
) -> Result<Decision> {
    OracleSpec::Noisy { accuracy }.validate()?;
    let truth = reference_decision(student_score, reference_score);
    let u: f64 = rng.gen();
    Ok(if u < accuracy {
        truth
    } else {
        match truth {
            Decision::Accept => Decision::Improve,
            Decision::Improve => Decision::Accept,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{ClassMixture, MixtureComponent};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn id() -> EstimatorId {
        EstimatorId::true_log_density()
    }

    #[test]
    fn nearest_rank_examples() {
        let s = [5.0, 1.0, 4.0, 2.0, 3.0];
        assert_eq!(calibrate(&s, 50.0, id()).unwrap().tau, 3.0);
        assert_eq!(calibrate(&s, 0.0, id()).unwrap().tau, 1.0);
        assert_eq!(calibrate(&s, 100.0, id()).unwrap().tau, 5.0);
        assert_eq!(calibrate(&s, 60.0, id()).unwrap().tau, 3.0);
        assert_eq!(calibrate(&s, 61.0, id()).unwrap().tau, 4.0);
        assert!(matches!(calibrate(&[], 50.0, id()), Err(Error::Empty(_))));
        assert!(calibrate(&s, 101.0, id()).is_err());
    }

    #[test]
    fn cutoff_extremes() {
        let s = [1.0, 2.0];
        assert_eq!(calibrate(&s, 0.0, id()).unwrap().cutoff(), f64::NEG_INFINITY);
        assert_eq!(calibrate(&s, 100.0, id()).unwrap().cutoff(), f64::INFINITY);
        assert_eq!(calibrate(&s, 50.0, id()).unwrap().cutoff(), 1.0);
    }

    proptest! {
        #[test]
        fn percentile_bracket(scores in prop::collection::vec(-50.0f64..50.0, 1..60), k in 0.0f64..=100.0) {
            let cal = calibrate(&scores, k, id()).unwrap();
            let m = scores.len() as f64;
            let below = scores.iter().filter(|&&v| v < cal.tau).count() as f64 / m;
            let at_most = scores.iter().filter(|&&v| v <= cal.tau).count() as f64 / m;
            prop_assert!(below <= k / 100.0 + 1e-12);
            prop_assert!(k / 100.0 <= at_most + 1e-12);
        }

        #[test]
        fn percentile_monotone(scores in prop::collection::vec(-50.0f64..50.0, 1..60), a in 0.0f64..=100.0, b in 0.0f64..=100.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(calibrate(&scores, lo, id()).unwrap().tau <= calibrate(&scores, hi, id()).unwrap().tau);
        }

        #[test]
        fn decide_invariant_under_increasing_maps(s in -10.0f64..10.0, tau in -10.0f64..10.0) {
            let f = |v: f64| v.exp() * 3.0 + v;
            prop_assert_eq!(decide(s, tau), decide(f(s), f(tau)));
        }
    }

    #[test]
    fn decide_ties_accept() {
        assert_eq!(decide(1.0, 1.0), Decision::Accept);
        assert_eq!(decide(1.0 - 1e-12, 1.0), Decision::Improve);
    }

    #[test]
    fn budget_formula() {
        assert_eq!(expected_budget(5.0, 20.0, 50.0), 15.0);
        assert_eq!(expected_budget(7.0, 1234.0, 0.0), 7.0);
        assert_eq!(expected_budget(5.0, 10.0, 100.0), 15.0);
    }

    #[test]
    fn score_is_gaussian_log_density() {
        let data = DataDistribution {
            dim: 2,
            classes: vec![ClassMixture {
                prior: 1.0,
                components: vec![MixtureComponent {
                    weight: 1.0,
                    mean: vec![1.0, -1.0],
                    std: 0.5,
                }],
            }],
        };
        let mut last = f64::INFINITY;
        for r in [0.0, 0.1, 0.5, 1.0, 3.0] {
            let v = score(&[1.0 + r, -1.0], 0, &data).unwrap().value;
            assert!(v < last || r == 0.0);
            last = v;
        }
        let peak = score(&[1.0, -1.0], 0, &data).unwrap().value;
        let expected = -(2.0 * std::f64::consts::PI * 0.25).ln();
        assert!((peak - expected).abs() < 1e-12);
    }

    #[test]
    fn densest_component_mean_tops_grid() {
        let data = DataDistribution::benchmark();
        for (c, cl) in data.classes.iter().enumerate() {
            let best = cl
                .components
                .iter()
                .max_by(|a, b| (a.weight / a.std.powi(2)).total_cmp(&(b.weight / b.std.powi(2))))
                .unwrap();
            let peak = score(&best.mean, c, &data).unwrap().value;
            for i in -40..=40 {
                for j in -40..=40 {
                    let x = [i as f64 * 0.1, j as f64 * 0.1];
                    assert!(score(&x, c, &data).unwrap().value <= peak + 1e-9, "class {c} at {x:?}");
                }
            }
        }
    }

    #[test]
    fn calibration_round_trip_and_tamper_detection() {
        let cal = calibrate(&[0.3, -1.0, 2.5, 0.0], 60.0, id()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cal.json");
        cal.save(&p).unwrap();
        assert_eq!(ThresholdCalibration::load(&p).unwrap(), cal);
        let mut bad = cal.clone();
        bad.sorted_scores[0] = -2.0;
        bad.save(&p).unwrap();
        assert!(ThresholdCalibration::load(&p).is_err());
    }

    #[test]
    fn noisy_oracle_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for i in 0..1000 {
            let (s, r) = (i as f64 * 0.01, 5.0 - i as f64 * 0.01);
            assert_eq!(noisy_decide(s, r, 1.0, &mut rng).unwrap(), reference_decision(s, r));
        }
        assert!(noisy_decide(0.0, 1.0, 0.4, &mut rng).is_err());
    }

    #[test]
    fn coin_flip_oracle_is_independent_of_truth() {
        // 2x2 contingency of (truth, decision) over 10^4 trials; chi-square
        // with one degree of freedom, 0.1% critical value 10.83.
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut table = [[0.0f64; 2]; 2];
        for i in 0..10_000 {
            let (s, r) = if i % 3 == 0 { (1.0, 0.0) } else { (0.0, 1.0) };
            let truth = reference_decision(s, r) == Decision::Improve;
            let d = noisy_decide(s, r, 0.5, &mut rng).unwrap() == Decision::Improve;
            table[truth as usize][d as usize] += 1.0;
        }
        let n: f64 = table.iter().flatten().sum();
        let mut chi2 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let row: f64 = table[i].iter().sum();
                let col = table[0][j] + table[1][j];
                let e = row * col / n;
                chi2 += (table[i][j] - e).powi(2) / e;
            }
        }
        assert!(chi2 < 10.83, "chi2 {chi2}, table {table:?}");
    }

    #[test]
    fn oracle_spec_serde() {
        let s: OracleSpec = toml::from_str("kind = \"noisy\"\naccuracy = 0.75").unwrap();
        assert_eq!(s, OracleSpec::Noisy { accuracy: 0.75 });
        assert!(OracleSpec::Noisy { accuracy: 1.2 }.validate().is_err());
    }
}
