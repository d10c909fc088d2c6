//! The adaptive teacher-student pipeline.
//!
//! Per sample: the student generates from noise `z`; the sample is scored;
//! samples scoring below the calibrated cut-off are improved by the teacher,
//! either by refinement (corrupt to level `sigma` with fresh noise and solve
//! from the nearest grid time) or by regeneration from `z`.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{forward_diffuse, DataDistribution, GuidedEps, NoiseSchedule};
use crate::error::{Error, Result};
use crate::harness::{derive_seed, stage_rng};
use crate::oracle::{
    decide, expected_budget, noisy_decide, score, Decision, OracleSpec, ThresholdCalibration, TRUE_LOG_DENSITY,
};
use crate::solvers::{consistency_sample, csv_err, sample, sample_from, ConsistencyFn, SolverSpec, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Refine,
    Regenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveConfig {
    pub strategy: Strategy,
    /// Rollback level for refinement. Ignored (treated as 1) when regenerating.
    pub rollback_sigma: f64,
    pub student_steps: usize,
    pub teacher: SolverSpec,
    #[serde(default)]
    pub oracle: OracleSpec,
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rollback_sigma) {
            return Err(Error::Config(format!("rollback sigma {} outside [0, 1]", self.rollback_sigma)));
        }
        if self.student_steps == 0 {
            return Err(Error::Config("student_steps must be positive".into()));
        }
        self.teacher.validate()?;
        self.oracle.validate()
    }

    pub fn effective_sigma(&self) -> f64 {
        match self.strategy {
            Strategy::Refine => self.rollback_sigma,
            Strategy::Regenerate => 1.0,
        }
    }
}

/// Corrupt `x` to level `sigma` with `z` and let the teacher solve from the
/// grid time whose noise level is nearest to `sigma`. Uses
/// `min(spec.steps, t*)` solver steps; `sigma = 0` returns `x` untouched.
pub fn refine_with_noise<G: GuidedEps + ?Sized>(
    teacher: &G,
    spec: &SolverSpec,
    schedule: &NoiseSchedule,
    x: &[f64],
    sigma: f64,
    z: &[f64],
    class: usize,
) -> Result<Trajectory> {
    if !(0.0..=1.0).contains(&sigma) {
        return Err(Error::InvalidArgument(format!("rollback sigma {sigma}")));
    }
    if z.len() != x.len() {
        return Err(Error::Shape {
            context: "cascade::refine",
            expected: vec![x.len()],
            got: vec![z.len()],
        });
    }
    let corrupted = forward_diffuse(x, z, sigma);
    let t_star = schedule.nearest_index(sigma);
    if t_star == 0 {
        return Ok(Trajectory {
            points: Vec::new(),
            sample: corrupted,
            nfe: 0,
            nfe_cfg: 0,
        });
    }
    let mut spec = *spec;
    spec.steps = spec.steps.min(t_star);
    sample_from(teacher, &spec, schedule, &corrupted, t_star, class)
}

/// [`refine_with_noise`] with a fresh standard normal `z` drawn from `rng`.
pub fn refine<G: GuidedEps + ?Sized, R: Rng + ?Sized>(
    teacher: &G,
    spec: &SolverSpec,
    schedule: &NoiseSchedule,
    x: &[f64],
    sigma: f64,
    class: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    let z: Vec<f64> = (0..x.len()).map(|_| rng.sample(StandardNormal)).collect();
    refine_with_noise(teacher, spec, schedule, x, sigma, &z, class)
}

/// Teacher sample from the same initial noise the student used.
pub fn regenerate<G: GuidedEps + ?Sized>(
    teacher: &G,
    spec: &SolverSpec,
    schedule: &NoiseSchedule,
    noise: &[f64],
    class: usize,
) -> Result<Trajectory> {
    sample(teacher, spec, schedule, noise, class)
}

/// Wall-clock time per stage. Not part of a result's identity: all timings
/// compare equal.
#[derive(Debug, Clone, Copy, Default)]
pub struct StageTiming {
    pub student: Duration,
    pub score: Duration,
    pub improve: Duration,
}

impl PartialEq for StageTiming {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub index: usize,
    pub class: usize,
    pub seed: u64,
    pub student_sample: Vec<f64>,
    pub student_score: f64,
    pub decision: Decision,
    pub final_sample: Vec<f64>,
    pub final_score: f64,
    pub strategy: Strategy,
    /// Score of the teacher candidate when it was produced for a simulated
    /// full-reference oracle.
    pub reference_score: Option<f64>,
    pub nfe: usize,
    pub nfe_cfg: usize,
    #[serde(skip)]
    pub timing: StageTiming,
}

/// Everything needed to run the adaptive procedure for one sample.
pub struct AdaptivePipeline<'a, S, G> {
    pub student: S,
    pub teacher: G,
    pub data: &'a DataDistribution,
    pub schedule: &'a NoiseSchedule,
    pub calibration: &'a ThresholdCalibration,
    pub config: AdaptiveConfig,
}

impl<'a, S: ConsistencyFn, G: GuidedEps> AdaptivePipeline<'a, S, G> {
    pub fn new(
        student: S,
        teacher: G,
        data: &'a DataDistribution,
        schedule: &'a NoiseSchedule,
        calibration: &'a ThresholdCalibration,
        config: AdaptiveConfig,
    ) -> Result<Self> {
        config.validate()?;
        if calibration.estimator.0 != TRUE_LOG_DENSITY {
            return Err(Error::Config(format!(
                "calibration was fitted with estimator `{}`, pipeline scores with `{TRUE_LOG_DENSITY}`",
                calibration.estimator
            )));
        }
        if student.data_dim() != data.dim || teacher.data_dim() != data.dim {
            return Err(Error::Config("student, teacher and data disagree on dimension".into()));
        }
        Ok(Self {
            student,
            teacher,
            data,
            schedule,
            calibration,
            config,
        })
    }

    fn improve<R: Rng + ?Sized>(&self, student: &[f64], noise: &[f64], class: usize, rng: &mut R) -> Result<Trajectory> {
        match self.config.strategy {
            Strategy::Regenerate => regenerate(&self.teacher, &self.config.teacher, self.schedule, noise, class),
            Strategy::Refine => refine(
                &self.teacher,
                &self.config.teacher,
                self.schedule,
                student,
                self.config.rollback_sigma,
                class,
                rng,
            ),
        }
    }

    /// Run the procedure for `class` with all randomness derived from `seed`.
    pub fn run_adaptive(&self, index: usize, class: usize, seed: u64) -> Result<PipelineResult> {
        let noise = initial_noise(seed, self.data.dim);

        let clock = Instant::now();
        let mut student_rng = stage_rng(seed, "student", 0);
        let student = consistency_sample(
            &self.student,
            self.config.student_steps,
            self.schedule,
            &noise,
            class,
            &mut student_rng,
        )?;
        let t_student = clock.elapsed();

        let clock = Instant::now();
        let student_score = score(&student.sample, class, self.data)?.value;
        let t_score = clock.elapsed();

        let mut refine_rng = stage_rng(seed, "refine", 0);
        let clock = Instant::now();
        let (decision, candidate) = match self.config.oracle {
            OracleSpec::TrueDensity => (decide(student_score, self.calibration.cutoff()), None),
            OracleSpec::Noisy { accuracy } => {
                // The simulated full-reference oracle needs the teacher's
                // candidate before it can decide.
                let cand = self.improve(&student.sample, &noise, class, &mut refine_rng)?;
                let cand_score = score(&cand.sample, class, self.data)?.value;
                let mut oracle_rng = stage_rng(seed, "oracle", 0);
                let d = noisy_decide(student_score, cand_score, accuracy, &mut oracle_rng)?;
                (d, Some((cand, cand_score)))
            }
        };
        let mut t_improve = clock.elapsed();

        let reference_score = candidate.as_ref().map(|(_, s)| *s);
        let (final_sample, final_score, nfe, nfe_cfg) = match decision {
            Decision::Accept => (student.sample.clone(), student_score, student.nfe, student.nfe_cfg),
            Decision::Improve => {
                let clock = Instant::now();
                let (tr, s) = match candidate {
                    Some(c) => c,
                    None => {
                        let tr = self.improve(&student.sample, &noise, class, &mut refine_rng)?;
                        let s = score(&tr.sample, class, self.data)?.value;
                        (tr, s)
                    }
                };
                t_improve += clock.elapsed();
                (tr.sample, s, student.nfe + tr.nfe, student.nfe_cfg + tr.nfe_cfg)
            }
        };
        Ok(PipelineResult {
            index,
            class,
            seed,
            student_sample: student.sample,
            student_score,
            decision,
            final_sample,
            final_score,
            strategy: self.config.strategy,
            reference_score,
            nfe,
            nfe_cfg,
            timing: StageTiming {
                student: t_student,
                score: t_score,
                improve: t_improve,
            },
        })
    }

    /// Run every `(class, seed)` pair, possibly in parallel. Results are
    /// returned in input order, so the report does not depend on scheduling.
    pub fn run_batch(&self, classes: &[usize], seeds: &[u64]) -> Result<BudgetReport> {
        if classes.len() != seeds.len() {
            return Err(Error::InvalidArgument(format!(
                "{} classes but {} seeds",
                classes.len(),
                seeds.len()
            )));
        }
        let records = classes
            .par_iter()
            .zip(seeds.par_iter())
            .enumerate()
            .map(|(i, (&c, &s))| self.run_adaptive(i, c, s))
            .collect::<Result<Vec<_>>>()?;
        let teacher_steps = match self.config.strategy {
            Strategy::Regenerate => self.config.teacher.steps,
            Strategy::Refine => self
                .config
                .teacher
                .steps
                .min(self.schedule.nearest_index(self.config.rollback_sigma)),
        };
        let budget = expected_budget(
            self.config.student_steps as f64,
            teacher_steps as f64,
            self.calibration.percentile,
        );
        BudgetReport::from_records(records, budget)
    }
}

/// The initial noise of the sample with seed `seed`, shared by the student,
/// regeneration and the paired analysis.
pub fn initial_noise(seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = stage_rng(seed, "noise", 0);
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Sample seeds for a batch: `derive_seed(global, "sample", i)`.
pub fn sample_seeds(global: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| derive_seed(global, "sample", i)).collect()
}

/// Classes cycling through `0..num_classes`.
pub fn round_robin_classes(num_classes: usize, n: usize) -> Vec<usize> {
    (0..n).map(|i| i % num_classes).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// `bins` equal-width bins spanning the data range; the last bin is closed.
    pub fn of(values: &[f64], bins: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("histogram values"));
        }
        if bins == 0 {
            return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo == hi {
            return Ok(Self {
                edges: vec![lo, hi],
                counts: vec![values.len()],
            });
        }
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins)
            .map(|i| if i == bins { hi } else { lo + width * i as f64 })
            .collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        Ok(Self { edges, counts })
    }
}

pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSummary {
    pub count: usize,
    pub mean_nfe: f64,
    pub mean_nfe_cfg: f64,
    pub expected_budget: f64,
    pub mean_student_score: f64,
    pub mean_final_score: f64,
    pub accept_rate: f64,
    pub final_score_histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetReport {
    pub summary: BudgetSummary,
    pub records: Vec<PipelineResult>,
}

impl BudgetReport {
    pub fn from_records(records: Vec<PipelineResult>, expected_budget: f64) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Empty("pipeline records"));
        }
        let n = records.len() as f64;
        let mean = |f: &dyn Fn(&PipelineResult) -> f64| records.iter().map(f).sum::<f64>() / n;
        let finals: Vec<f64> = records.iter().map(|r| r.final_score).collect();
        let summary = BudgetSummary {
            count: records.len(),
            mean_nfe: mean(&|r| r.nfe as f64),
            mean_nfe_cfg: mean(&|r| r.nfe_cfg as f64),
            expected_budget,
            mean_student_score: mean(&|r| r.student_score),
            mean_final_score: mean(&|r| r.final_score),
            accept_rate: mean(&|r| (r.decision == Decision::Accept) as u8 as f64),
            final_score_histogram: Histogram::of(&finals, HISTOGRAM_BINS)?,
        };
        Ok(Self { summary, records })
    }

    /// Standard error of the mean NFE.
    pub fn nfe_standard_error(&self) -> f64 {
        let n = self.records.len() as f64;
        let m = self.summary.mean_nfe;
        let var = self.records.iter().map(|r| (r.nfe as f64 - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        (var / n).sqrt()
    }

    /// Per-sample CSV: `index,class,seed,decision,strategy,student_score,
    /// final_score,reference_score,nfe,nfe_cfg,student_0..,final_0..`.
    pub fn write_records_csv<W: Write>(&self, out: W) -> Result<()> {
        let dim = self.records[0].student_sample.len();
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = [
            "index",
            "class",
            "seed",
            "decision",
            "strategy",
            "student_score",
            "final_score",
            "reference_score",
            "nfe",
            "nfe_cfg",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend((0..dim).map(|i| format!("student_{i}")));
        header.extend((0..dim).map(|i| format!("final_{i}")));
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.records {
            let mut row = vec![
                r.index.to_string(),
                r.class.to_string(),
                r.seed.to_string(),
                format!("{:?}", r.decision).to_uppercase(),
                format!("{:?}", r.strategy).to_lowercase(),
                r.student_score.to_string(),
                r.final_score.to_string(),
                r.reference_score.map(|v| v.to_string()).unwrap_or_default(),
                r.nfe.to_string(),
                r.nfe_cfg.to_string(),
            ];
            row.extend(r.student_sample.iter().map(|v| v.to_string()));
            row.extend(r.final_sample.iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One cell of a (sigma, n_T, k) sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sigma: f64,
    pub percentile: f64,
    pub student_steps: usize,
    pub teacher_steps: usize,
    pub expected_budget: f64,
    pub mean_nfe: f64,
    pub mean_final_score: f64,
    pub accept_rate: f64,
}

/// Evaluate every combination of rollback level, teacher steps and
/// percentile on the same samples.
#[allow(clippy::too_many_arguments)]
pub fn sweep_grid<S: ConsistencyFn, G: GuidedEps>(
    student: &S,
    teacher: &G,
    data: &DataDistribution,
    schedule: &NoiseSchedule,
    calibration: &ThresholdCalibration,
    base: &AdaptiveConfig,
    grid: &SweepGrid,
    classes: &[usize],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &sigma in &grid.sigmas {
        for &teacher_steps in &grid.teacher_steps {
            for &k in &grid.percentiles {
                let cal = calibration.with_percentile(k)?;
                let mut config = base.clone();
                config.rollback_sigma = sigma;
                config.teacher.steps = teacher_steps;
                let pipeline = AdaptivePipeline::new(student, teacher, data, schedule, &cal, config)?;
                let report = pipeline.run_batch(classes, seeds)?;
                rows.push(SweepRow {
                    sigma,
                    percentile: k,
                    student_steps: base.student_steps,
                    teacher_steps,
                    expected_budget: report.summary.expected_budget,
                    mean_nfe: report.summary.mean_nfe,
                    mean_final_score: report.summary.mean_final_score,
                    accept_rate: report.summary.accept_rate,
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub sigmas: Vec<f64>,
    pub teacher_steps: Vec<usize>,
    pub percentiles: Vec<f64>,
}

/// The row with the highest mean final score among those whose realized
/// mean NFE does not exceed `cap`. Earlier rows win ties.
pub fn best_under_budget(rows: &[SweepRow], cap: f64) -> Option<&SweepRow> {
    rows.iter()
        .filter(|r| r.mean_nfe <= cap)
        .fold(None, |best: Option<&SweepRow>, r| match best {
            Some(b) if b.mean_final_score >= r.mean_final_score => Some(b),
            _ => Some(r),
        })
}
