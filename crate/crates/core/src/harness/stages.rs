//! The pipeline stages and their artifacts.
//!
//! Every stage reads its inputs from, and writes its outputs under, the
//! run's output directory, then records its artifact digests in the
//! manifest. Upstream stages whose recorded artifacts are missing or
//! changed are re-run first, unless `stage_only` is set.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{build_paired_records, summarize, write_records_csv, AnalysisSummary, StudentGenerator, TeacherGenerator};
use crate::cascade::{best_under_budget, round_robin_classes, sample_seeds, sweep_grid, AdaptivePipeline};
use crate::diffusion::{DataDistribution, EpsNetwork, GuidedDenoiser, NoiseSchedule};
use crate::distill::{distill, ConsistencyModel, GuidedStudent};
use crate::error::{Error, Result};
use crate::harness::config::RunConfig;
use crate::harness::manifest::{sha256_hex, ExperimentManifest};
use crate::harness::plot::{emit_plot, AxesSpec, Series};
use crate::harness::seed::{derive_seed, stage_rng};
use crate::nn::MlpParams;
use crate::oracle::{calibrate, score, EstimatorId, OracleSpec, ThresholdCalibration};
use crate::solvers::{consistency_sample, csv_err, sample};
use crate::cascade::initial_noise;
use crate::teacher::train_teacher;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    TrainTeacher,
    Distill,
    Calibrate,
    RunAdaptive,
    Analyze,
    SweepOracle,
    SweepBudget,
    Plot,
}

pub const TEACHER_CKPT: &str = "teacher/teacher.ckpt";
pub const TEACHER_LOG: &str = "teacher/train_log.csv";
pub const STUDENT_CKPT: &str = "student/student.ckpt";
pub const STUDENT_LOG: &str = "student/distill_log.csv";
pub const CALIBRATION: &str = "calibration/calibration.json";
pub const ADAPTIVE_REPORT: &str = "adaptive/report.json";
pub const ADAPTIVE_RECORDS: &str = "adaptive/records.csv";
pub const ANALYSIS_RECORDS: &str = "analysis/records.csv";
pub const ANALYSIS_SUMMARY: &str = "analysis/summary.json";
pub const ANALYSIS_BUCKETS: &str = "analysis/buckets.csv";
pub const ORACLE_TABLE: &str = "sweep_oracle/table.csv";
pub const BUDGET_TABLE: &str = "sweep_budget/table.csv";
pub const BUDGET_SELECTED: &str = "sweep_budget/selected.csv";

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::TrainTeacher,
        Stage::Distill,
        Stage::Calibrate,
        Stage::RunAdaptive,
        Stage::Analyze,
        Stage::SweepOracle,
        Stage::SweepBudget,
        Stage::Plot,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Stage::TrainTeacher => "train-teacher",
            Stage::Distill => "distill",
            Stage::Calibrate => "calibrate",
            Stage::RunAdaptive => "run-adaptive",
            Stage::Analyze => "analyze",
            Stage::SweepOracle => "sweep-oracle",
            Stage::SweepBudget => "sweep-budget",
            Stage::Plot => "plot",
        }
    }

    /// Direct upstream stages.
    pub fn deps(self) -> &'static [Stage] {
        match self {
            Stage::TrainTeacher => &[],
            Stage::Distill => &[Stage::TrainTeacher],
            Stage::Calibrate => &[Stage::TrainTeacher, Stage::Distill],
            Stage::RunAdaptive | Stage::SweepOracle | Stage::SweepBudget => {
                &[Stage::TrainTeacher, Stage::Distill, Stage::Calibrate]
            }
            Stage::Analyze => &[Stage::TrainTeacher, Stage::Distill],
            Stage::Plot => &[Stage::Analyze, Stage::SweepOracle, Stage::SweepBudget],
        }
    }

    /// The artifact whose absence most directly signals a missing stage.
    pub fn primary_artifact(self) -> &'static str {
        match self {
            Stage::TrainTeacher => TEACHER_CKPT,
            Stage::Distill => STUDENT_CKPT,
            Stage::Calibrate => CALIBRATION,
            Stage::RunAdaptive => ADAPTIVE_REPORT,
            Stage::Analyze => ANALYSIS_SUMMARY,
            Stage::SweepOracle => ORACLE_TABLE,
            Stage::SweepBudget => BUDGET_TABLE,
            Stage::Plot => "plots/score_vs_steps.svg",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub stage_only: bool,
    /// Force single-threaded execution.
    pub deterministic: bool,
}

/// Loaded configuration plus everything derived from it.
pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
    pub data: DataDistribution,
    pub schedule: NoiseSchedule,
    pub manifest: ExperimentManifest,
}

impl Context {
    pub fn new(config: RunConfig) -> Result<Self> {
        let data = config.data.build()?;
        let schedule = NoiseSchedule::new(config.schedule)?;
        let out = config.out_dir.clone();
        std::fs::create_dir_all(&out)?;
        let digest = sha256_hex(&config.canonical_bytes()?);
        let manifest = ExperimentManifest::open(&out, &digest, config.seed)?;
        Ok(Self {
            config,
            out,
            data,
            schedule,
            manifest,
        })
    }

    fn path(&self, rel: &str) -> Result<PathBuf> {
        let p = self.out.join(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)?;
        }
        Ok(p)
    }

    fn stage_seed(&self, stage: Stage) -> u64 {
        derive_seed(self.config.seed, stage.label(), 0)
    }

    fn teacher_params(&self) -> Result<MlpParams> {
        MlpParams::load(&self.out.join(TEACHER_CKPT))
    }

    fn teacher(&self) -> Result<GuidedDenoiser<EpsNetwork>> {
        GuidedDenoiser::new(
            EpsNetwork {
                params: self.teacher_params()?,
            },
            self.config.sampling.guidance,
        )
    }

    fn student_model(&self) -> Result<ConsistencyModel> {
        ConsistencyModel::load(&self.out.join(STUDENT_CKPT), self.schedule.clone(), self.data.data_std())
    }

    fn calibration(&self) -> Result<ThresholdCalibration> {
        ThresholdCalibration::load(&self.out.join(CALIBRATION))
    }
}

/// Run `stage` (and, unless `stage_only`, any stale upstream stage).
/// Returns the updated manifest.
pub fn run(config: RunConfig, stage: Stage, opts: RunOptions) -> Result<ExperimentManifest> {
    let body = move || -> Result<ExperimentManifest> {
        let mut ctx = Context::new(config)?;
        run_in(&mut ctx, stage, opts, &mut Vec::new())?;
        Ok(ctx.manifest)
    };
    if opts.deterministic {
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(body)
    } else {
        body()
    }
}

fn run_in(ctx: &mut Context, stage: Stage, opts: RunOptions, done: &mut Vec<Stage>) -> Result<()> {
    for &dep in stage.deps() {
        if done.contains(&dep) || ctx.manifest.stage_is_current(&ctx.out, dep.label()) {
            continue;
        }
        if opts.stage_only {
            return Err(Error::Dependency {
                stage: dep.label(),
                path: ctx.out.join(dep.primary_artifact()),
            });
        }
        run_in(ctx, dep, opts, done)?;
    }
    let artifacts = execute(ctx, stage)?;
    let seed = ctx.stage_seed(stage);
    let out = ctx.out.clone();
    ctx.manifest.record(&out, stage.label(), seed, &artifacts)?;
    ctx.manifest.save(&out)?;
    done.push(stage);
    Ok(())
}

fn execute(ctx: &Context, stage: Stage) -> Result<Vec<String>> {
    match stage {
        Stage::TrainTeacher => stage_train_teacher(ctx),
        Stage::Distill => stage_distill(ctx),
        Stage::Calibrate => stage_calibrate(ctx),
        Stage::RunAdaptive => stage_run_adaptive(ctx),
        Stage::Analyze => stage_analyze(ctx),
        Stage::SweepOracle => stage_sweep_oracle(ctx),
        Stage::SweepBudget => stage_sweep_budget(ctx),
        Stage::Plot => stage_plot(ctx),
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn stage_train_teacher(ctx: &Context) -> Result<Vec<String>> {
    let mut rng = stage_rng(ctx.config.seed, Stage::TrainTeacher.label(), 0);
    let outcome = train_teacher(&ctx.data, &ctx.schedule, &ctx.config.teacher, &mut rng)?;
    outcome.params.save(&ctx.path(TEACHER_CKPT)?)?;
    write_rows(&ctx.path(TEACHER_LOG)?, &outcome.log)?;
    Ok(vec![TEACHER_CKPT.into(), TEACHER_LOG.into()])
}

fn stage_distill(ctx: &Context) -> Result<Vec<String>> {
    let teacher = ctx.teacher_params()?;
    let ckpt_dir = ctx.path("student/checkpoints/x")?.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut rng = stage_rng(ctx.config.seed, Stage::Distill.label(), 0);
    let outcome = distill(&teacher, &ctx.data, &ctx.schedule, &ctx.config.distill, Some(&ckpt_dir), &mut rng)?;
    outcome.model.save(&ctx.path(STUDENT_CKPT)?)?;
    write_rows(&ctx.path(STUDENT_LOG)?, &outcome.log)?;
    let mut artifacts = vec![STUDENT_CKPT.to_string(), STUDENT_LOG.to_string()];
    for p in &outcome.checkpoints {
        if let Ok(rel) = p.strip_prefix(&ctx.out) {
            artifacts.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(artifacts)
}

/// Scores of fresh student samples; `seeds` fix the noise and sampler.
fn student_scores(ctx: &Context, student: &GuidedStudent<'_>, classes: &[usize], seeds: &[u64]) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    let n_s = ctx.config.adaptive.pipeline.student_steps;
    classes
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(&c, &seed)| {
            let noise = initial_noise(seed, ctx.data.dim);
            let mut rng = stage_rng(seed, "student", 0);
            let tr = consistency_sample(student, n_s, &ctx.schedule, &noise, c, &mut rng)?;
            Ok(score(&tr.sample, c, &ctx.data)?.value)
        })
        .collect()
}

fn stage_calibrate(ctx: &Context) -> Result<Vec<String>> {
    let model = ctx.student_model()?;
    let student = GuidedStudent {
        model: &model,
        guidance: ctx.config.sampling.guidance,
    };
    let n = ctx.config.calibrate.holdout;
    let seeds = sample_seeds(ctx.stage_seed(Stage::Calibrate), n);
    let classes = round_robin_classes(ctx.data.num_classes(), n);
    let scores = student_scores(ctx, &student, &classes, &seeds)?;
    let cal = calibrate(&scores, ctx.config.calibrate.percentile, EstimatorId::true_log_density())?;
    cal.save(&ctx.path(CALIBRATION)?)?;
    Ok(vec![CALIBRATION.into()])
}

fn stage_run_adaptive(ctx: &Context) -> Result<Vec<String>> {
    let model = ctx.student_model()?;
    let teacher = ctx.teacher()?;
    let cal = ctx.calibration()?;
    let student = GuidedStudent {
        model: &model,
        guidance: ctx.config.sampling.guidance,
    };
    let pipeline = AdaptivePipeline::new(
        student,
        &teacher,
        &ctx.data,
        &ctx.schedule,
        &cal,
        ctx.config.adaptive.pipeline.clone(),
    )?;
    let n = ctx.config.adaptive.samples;
    let report = pipeline.run_batch(
        &round_robin_classes(ctx.data.num_classes(), n),
        &sample_seeds(ctx.stage_seed(Stage::RunAdaptive), n),
    )?;
    write_json(&ctx.path(ADAPTIVE_REPORT)?, &report.summary)?;
    report.write_records_csv(BufWriter::new(File::create(ctx.path(ADAPTIVE_RECORDS)?)?))?;
    Ok(vec![ADAPTIVE_REPORT.into(), ADAPTIVE_RECORDS.into()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketCsvRow {
    pub lo: f64,
    pub hi: f64,
    pub student_better: usize,
    pub teacher_better: usize,
    pub ties: usize,
    pub student_win_rate: Option<f64>,
    pub win_rate_lo: Option<f64>,
    pub win_rate_hi: Option<f64>,
}

fn stage_analyze(ctx: &Context) -> Result<Vec<String>> {
    let model = ctx.student_model()?;
    let teacher = ctx.teacher()?;
    let student = StudentGenerator {
        student: GuidedStudent {
            model: &model,
            guidance: ctx.config.sampling.guidance,
        },
        steps: ctx.config.adaptive.pipeline.student_steps,
        schedule: &ctx.schedule,
    };
    let teacher_gen = TeacherGenerator {
        teacher: &teacher,
        spec: ctx.config.sampling.teacher_reference,
        schedule: &ctx.schedule,
    };
    let a = &ctx.config.analysis;
    let seed = ctx.stage_seed(Stage::Analyze);
    let classes = round_robin_classes(ctx.data.num_classes(), a.pairs);
    let records = build_paired_records(&classes, &sample_seeds(seed, a.pairs), &student, &teacher_gen, &ctx.data)?;
    let buckets: Vec<(f64, f64)> = a.buckets.iter().map(|b| (b[0], b[1])).collect();
    let mut rng = stage_rng(seed, "bootstrap", 0);
    let summary: AnalysisSummary = summarize(
        &records,
        &buckets,
        a.tie_tolerance,
        a.bootstrap_resamples,
        a.confidence_level,
        &mut rng,
    )?;
    write_records_csv(&records, BufWriter::new(File::create(ctx.path(ANALYSIS_RECORDS)?)?))?;
    write_json(&ctx.path(ANALYSIS_SUMMARY)?, &summary)?;
    let rows: Vec<BucketCsvRow> = summary
        .buckets
        .rows
        .iter()
        .zip(&summary.bucket_win_rates)
        .map(|(r, w)| BucketCsvRow {
            lo: r.lo,
            hi: r.hi,
            student_better: r.student_better,
            teacher_better: r.teacher_better,
            ties: r.ties,
            student_win_rate: r.student_win_rate(),
            win_rate_lo: w.student_win_rate.map(|i| i.lo),
            win_rate_hi: w.student_win_rate.map(|i| i.hi),
        })
        .collect();
    write_rows(&ctx.path(ANALYSIS_BUCKETS)?, &rows)?;
    Ok(vec![ANALYSIS_RECORDS.into(), ANALYSIS_SUMMARY.into(), ANALYSIS_BUCKETS.into()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSweepRow {
    pub accuracy: f64,
    pub mean_final_score: f64,
    pub mean_nfe: f64,
    pub improve_rate: f64,
    /// Against the teacher reference sampler from the same noise.
    pub win_rate: f64,
    pub tie_rate: f64,
    pub loss_rate: f64,
}

fn stage_sweep_oracle(ctx: &Context) -> Result<Vec<String>> {
    let model = ctx.student_model()?;
    let teacher = ctx.teacher()?;
    let cal = ctx.calibration()?;
    let cfg = &ctx.config.sweep_oracle;
    let seeds = sample_seeds(ctx.stage_seed(Stage::SweepOracle), cfg.samples);
    let classes = round_robin_classes(ctx.data.num_classes(), cfg.samples);
    let reference: Vec<f64> = {
        use rayon::prelude::*;
        classes
            .par_iter()
            .zip(seeds.par_iter())
            .map(|(&c, &s)| {
                let noise = initial_noise(s, ctx.data.dim);
                let tr = sample(&teacher, &ctx.config.sampling.teacher_reference, &ctx.schedule, &noise, c)?;
                Ok(score(&tr.sample, c, &ctx.data)?.value)
            })
            .collect::<Result<_>>()?
    };
    let tie = ctx.config.analysis.tie_tolerance;
    let mut rows = Vec::new();
    for &accuracy in &cfg.accuracies {
        let mut pc = ctx.config.adaptive.pipeline.clone();
        pc.oracle = OracleSpec::Noisy { accuracy };
        let student = GuidedStudent {
            model: &model,
            guidance: ctx.config.sampling.guidance,
        };
        let pipeline = AdaptivePipeline::new(student, &teacher, &ctx.data, &ctx.schedule, &cal, pc)?;
        let report = pipeline.run_batch(&classes, &seeds)?;
        let n = report.records.len() as f64;
        let (mut win, mut tied) = (0.0, 0.0);
        for (r, &ref_score) in report.records.iter().zip(&reference) {
            let gap = r.final_score - ref_score;
            if gap.abs() < tie {
                tied += 1.0;
            } else if gap > 0.0 {
                win += 1.0;
            }
        }
        rows.push(OracleSweepRow {
            accuracy,
            mean_final_score: report.summary.mean_final_score,
            mean_nfe: report.summary.mean_nfe,
            improve_rate: 1.0 - report.summary.accept_rate,
            win_rate: win / n,
            tie_rate: tied / n,
            loss_rate: (n - win - tied) / n,
        });
    }
    write_rows(&ctx.path(ORACLE_TABLE)?, &rows)?;
    Ok(vec![ORACLE_TABLE.into()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetTableRow {
    pub sigma: f64,
    pub k: f64,
    pub student_steps: usize,
    pub improve_steps: usize,
    pub average_steps: f64,
    pub realized_mean_nfe: f64,
    pub mean_final_score: f64,
    pub accept_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSelectionRow {
    pub budget: f64,
    pub sigma: f64,
    pub k: f64,
    pub improve_steps: usize,
    pub average_steps: f64,
    pub realized_mean_nfe: f64,
    pub mean_final_score: f64,
}

fn stage_sweep_budget(ctx: &Context) -> Result<Vec<String>> {
    let model = ctx.student_model()?;
    let teacher = ctx.teacher()?;
    let cal = ctx.calibration()?;
    let cfg = &ctx.config.sweep_budget;
    let student = GuidedStudent {
        model: &model,
        guidance: ctx.config.sampling.guidance,
    };
    let rows = sweep_grid(
        &student,
        &teacher,
        &ctx.data,
        &ctx.schedule,
        &cal,
        &ctx.config.adaptive.pipeline,
        &cfg.grid,
        &round_robin_classes(ctx.data.num_classes(), cfg.samples),
        &sample_seeds(ctx.stage_seed(Stage::SweepBudget), cfg.samples),
    )?;
    let table: Vec<BudgetTableRow> = rows
        .iter()
        .map(|r| BudgetTableRow {
            sigma: r.sigma,
            k: r.percentile,
            student_steps: r.student_steps,
            improve_steps: r.teacher_steps,
            average_steps: r.expected_budget,
            realized_mean_nfe: r.mean_nfe,
            mean_final_score: r.mean_final_score,
            accept_rate: r.accept_rate,
        })
        .collect();
    write_rows(&ctx.path(BUDGET_TABLE)?, &table)?;
    let selected: Vec<BudgetSelectionRow> = cfg
        .budgets
        .iter()
        .filter_map(|&b| {
            best_under_budget(&rows, b).map(|best| {
BudgetSelectionRow {
                    budget: b,
                    sigma: best.sigma,
                    k: best.percentile,
                    improve_steps: best.teacher_steps,
                    average_steps: best.expected_budget,
                    realized_mean_nfe: best.mean_nfe,
                    mean_final_score: best.mean_final_score,
                }
            })
        })
        .collect();
    write_rows(&ctx.path(BUDGET_SELECTED)?, &selected)?;
    Ok(vec![BUDGET_TABLE.into(), BUDGET_SELECTED.into()])
}

#[derive(Debug, Deserialize)]
struct CurvatureRow {
    distance: f64,
    teacher_curvature: f64,
}

fn stage_plot(ctx: &Context) -> Result<Vec<String>> {
    let mut produced = Vec::new();

    let budget: Vec<BudgetTableRow> = read_rows(&ctx.out.join(BUDGET_TABLE))?;
    let mut sigmas: Vec<f64> = budget.iter().map(|r| r.sigma).collect();
    sigmas.sort_by(f64::total_cmp);
    sigmas.dedup();
    let series: Vec<Series> = sigmas
        .iter()
        .map(|&s| Series {
            label: format!("sigma {s}"),
            points: budget
                .iter()
                .filter(|r| r.sigma == s)
                .map(|r| (r.realized_mean_nfe, r.mean_final_score))
                .collect(),
            line: false,
        })
        .collect();
    let rel = "plots/score_vs_steps.svg";
    emit_plot(
        &series,
        &AxesSpec::new("Mean score vs average steps", "mean NFE per sample", "mean log-density"),
        &ctx.path(rel)?,
    )?;
    produced.push(rel.to_string());

    let summary: AnalysisSummary = serde_json::from_slice(&std::fs::read(ctx.out.join(ANALYSIS_SUMMARY))?)?;
    let points: Vec<(f64, f64)> = summary
        .bucket_win_rates
        .iter()
        .filter_map(|b| b.student_win_rate.map(|w| (0.5 * (b.lo + b.hi), w.estimate)))
        .collect();
    if !points.is_empty() {
        let rel = "plots/win_rate_by_distance.svg";
        emit_plot(
            &[Series {
                label: "student win rate".into(),
                points,
                line: true,
            }],
            &AxesSpec::new("Student wins by distance bucket", "distance percentile", "win rate"),
            &ctx.path(rel)?,
        )?;
        produced.push(rel.to_string());
    }

    let curv: Vec<CurvatureRow> = read_rows(&ctx.out.join(ANALYSIS_RECORDS))?;
    let rel = "plots/curvature_vs_distance.svg";
    emit_plot(
        &[Series {
            label: "pairs".into(),
            points: curv.iter().map(|r| (r.teacher_curvature, r.distance)).collect(),
            line: false,
        }],
        &AxesSpec::new("Teacher curvature vs student-teacher distance", "curvature", "distance"),
        &ctx.path(rel)?,
    )?;
    produced.push(rel.to_string());

    let oracle: Vec<OracleSweepRow> = read_rows(&ctx.out.join(ORACLE_TABLE))?;
    let rel = "plots/oracle_accuracy.svg";
    emit_plot(
        &[
            Series {
                label: "win".into(),
                points: oracle.iter().map(|r| (r.accuracy, r.win_rate)).collect(),
                line: true,
            },
            Series {
                label: "loss".into(),
                points: oracle.iter().map(|r| (r.accuracy, r.loss_rate)).collect(),
                line: true,
            },
        ],
        &AxesSpec::new("Adaptive vs teacher by oracle accuracy", "oracle accuracy", "rate"),
        &ctx.path(rel)?,
    )?;
    produced.push(rel.to_string());
    Ok(produced)
}
