//! Student-teacher comparisons: trajectory curvature, sample distances,
//! correlations and win rates by distance bucket.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::initial_noise;
use crate::diffusion::{DataDistribution, GuidedEps, NoiseSchedule};
use crate::error::{Error, Result};
use crate::harness::stage_rng;
use crate::oracle::score;
use crate::solvers::{consistency_sample, csv_err, sample, ConsistencyFn, SolverSpec, Trajectory};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            context: "analysis::distance",
            expected: vec![a.len()],
            got: vec![b.len()],
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
}

/// Largest distance from a denoised prediction to the line through the
/// first and last denoised predictions. When those two coincide, the
/// largest distance to that point.
pub fn curvature(traj: &Trajectory) -> Result<f64> {
    if traj.points.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "curvature needs at least 3 states, got {}",
            traj.points.len()
        )));
    }
    let first = &traj.points[0].x0_hat;
    let last = &traj.points[traj.points.len() - 1].x0_hat;
    let dir: Vec<f64> = last.iter().zip(first).map(|(b, a)| b - a).collect();
    let len2 = dot(&dir, &dir);
    let mut worst: f64 = 0.0;
    for p in &traj.points {
        let rel: Vec<f64> = p.x0_hat.iter().zip(first).map(|(x, a)| x - a).collect();
        let d2 = if len2 == 0.0 {
            dot(&rel, &rel)
        } else {
            let proj = dot(&rel, &dir) / len2;
            rel.iter().zip(&dir).map(|(r, d)| (r - proj * d).powi(2)).sum()
        };
        worst = worst.max(d2.max(0.0).sqrt());
    }
    Ok(worst)
}

/// Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "correlation needs two equal-length series of length >= 2, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("first series"));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("second series"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    pearson(&ranks(xs), &ranks(ys))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub pearson: f64,
    pub spearman: f64,
}

pub fn correlations(xs: &[f64], ys: &[f64]) -> Result<Correlation> {
    Ok(Correlation {
        pearson: pearson(xs, ys)?,
        spearman: spearman(xs, ys)?,
    })
}

/// The default percentile ranges: low, medium and high distance.
pub const DEFAULT_BUCKETS: [(f64, f64); 3] = [(0.0, 20.0), (40.0, 60.0), (80.0, 100.0)];
/// Quality gaps (in nats) smaller than this in magnitude count as ties.
pub const DEFAULT_TIE_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub lo: f64,
    pub hi: f64,
    pub student_better: usize,
    pub teacher_better: usize,
    pub ties: usize,
}

impl BucketRow {
    pub fn total(&self) -> usize {
        self.student_better + self.teacher_better + self.ties
    }

    pub fn student_win_rate(&self) -> Option<f64> {
        (self.total() > 0).then(|| self.student_better as f64 / self.total() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketTable {
    pub tie_tolerance: f64,
    pub rows: Vec<BucketRow>,
}

/// Percentile of each value: `100 * #{others strictly smaller} / n`.
pub fn percentile_ranks(values: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    values
        .iter()
        .map(|v| 100.0 * sorted.partition_point(|s| s < v) as f64 / n)
        .collect()
}

/// Which bucket a percentile falls in: `[lo, hi)`, or `[lo, 100]` for a
/// bucket ending at 100.
fn bucket_of(p: f64, buckets: &[(f64, f64)]) -> Option<usize> {
    buckets
        .iter()
        .position(|&(lo, hi)| p >= lo && (p < hi || (hi >= 100.0 && p <= hi)))
}

/// Win/loss/tie counts per distance-percentile bucket, for records given
/// as `(distance, gap)` with `gap = student score - teacher score`.
pub fn win_buckets(records: &[(f64, f64)], buckets: &[(f64, f64)], tie_tolerance: f64) -> Result<BucketTable> {
    if records.is_empty() {
        return Err(Error::Empty("bucket records"));
    }
    let dists: Vec<f64> = records.iter().map(|r| r.0).collect();
    let pct = percentile_ranks(&dists);
    let mut rows: Vec<BucketRow> = buckets
        .iter()
        .map(|&(lo, hi)| BucketRow {
            lo,
            hi,
            student_better: 0,
            teacher_better: 0,
            ties: 0,
        })
        .collect();
    for (&(_, gap), &p) in records.iter().zip(&pct) {
        if let Some(b) = bucket_of(p, buckets) {
            let row = &mut rows[b];
            if gap.abs() < tie_tolerance {
                row.ties += 1;
            } else if gap > 0.0 {
                row.student_better += 1;
            } else {
                row.teacher_better += 1;
            }
        }
    }
    Ok(BucketTable { tie_tolerance, rows })
}

/// Produces one sample trajectory per `(class, seed)`.
pub trait SampleGenerator: Sync {
    fn generate(&self, class: usize, seed: u64) -> Result<Trajectory>;
}

/// Multistep consistency sampling from the seed's initial noise.
pub struct StudentGenerator<'a, S> {
    pub student: S,
    pub steps: usize,
    pub schedule: &'a NoiseSchedule,
}

impl<S: ConsistencyFn> SampleGenerator for StudentGenerator<'_, S> {
    fn generate(&self, class: usize, seed: u64) -> Result<Trajectory> {
        let noise = initial_noise(seed, self.student.data_dim());
        let mut rng = stage_rng(seed, "student", 0);
        consistency_sample(&self.student, self.steps, self.schedule, &noise, class, &mut rng)
    }
}

/// Deterministic ODE solve from the seed's initial noise.
pub struct TeacherGenerator<'a, G> {
    pub teacher: G,
    pub spec: SolverSpec,
    pub schedule: &'a NoiseSchedule,
}

impl<G: GuidedEps> SampleGenerator for TeacherGenerator<'_, G> {
    fn generate(&self, class: usize, seed: u64) -> Result<Trajectory> {
        let noise = initial_noise(seed, self.teacher.data_dim());
        sample(&self.teacher, &self.spec, self.schedule, &noise, class)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedRecord {
    pub class: usize,
    pub seed: u64,
    pub student_sample: Vec<f64>,
    pub student_score: f64,
    pub teacher_sample: Vec<f64>,
    pub teacher_score: f64,
    pub distance: f64,
    /// Student score minus teacher score.
    pub gap: f64,
    pub teacher_curvature: f64,
    /// Complexity proxy: negative log-density of the teacher sample under
    /// the nearest component of its class alone.
    pub complexity_proxy: f64,
}

/// `-log N(x; mu, s^2 I)` for the component of `class` whose mean is
/// nearest to `x`.
pub fn complexity_proxy(x: &[f64], class: usize, data: &DataDistribution) -> Result<f64> {
    let cl = data.classes.get(class).ok_or(Error::UnknownClass {
        class,
        num_classes: data.num_classes(),
    })?;
    let comp = cl
        .components
        .iter()
        .min_by(|a, b| {
            let da: f64 = a.mean.iter().zip(x).map(|(m, v)| (m - v).powi(2)).sum();
            let db: f64 = b.mean.iter().zip(x).map(|(m, v)| (m - v).powi(2)).sum();
            da.total_cmp(&db)
        })
        .ok_or(Error::Empty("class components"))?;
    let d = x.len() as f64;
    let s2 = comp.std * comp.std;
    let r2: f64 = comp.mean.iter().zip(x).map(|(m, v)| (m - v).powi(2)).sum();
    Ok(0.5 * d * (2.0 * std::f64::consts::PI * s2).ln() + r2 / (2.0 * s2))
}

/// One record per `(class, seed)` pair, in input order.
pub fn build_paired_records<S: SampleGenerator, T: SampleGenerator>(
    classes: &[usize],
    seeds: &[u64],
    student: &S,
    teacher: &T,
    data: &DataDistribution,
) -> Result<Vec<PairedRecord>> {
    if classes.len() != seeds.len() {
        return Err(Error::InvalidArgument(format!(
            "{} classes but {} seeds",
            classes.len(),
            seeds.len()
        )));
    }
    classes
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(&class, &seed)| {
            let s = student.generate(class, seed)?;
            let t = teacher.generate(class, seed)?;
            let student_score = score(&s.sample, class, data)?.value;
            let teacher_score = score(&t.sample, class, data)?.value;
            Ok(PairedRecord {
                class,
                seed,
                distance: distance(&s.sample, &t.sample)?,
                gap: student_score - teacher_score,
                teacher_curvature: curvature(&t)?,
                complexity_proxy: complexity_proxy(&t.sample, class, data)?,
                student_sample: s.sample,
                student_score,
                teacher_sample: t.sample,
                teacher_score,
            })
        })
        .collect()
}

/// Records CSV: `class,seed,student_score,teacher_score,distance,gap,
/// teacher_curvature,complexity_proxy,student_0..,teacher_0..`.
pub fn write_records_csv<W: Write>(records: &[PairedRecord], out: W) -> Result<()> {
    let dim = records.first().map_or(0, |r| r.student_sample.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = [
        "class",
        "seed",
        "student_score",
        "teacher_score",
        "distance",
        "gap",
        "teacher_curvature",
        "complexity_proxy",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((0..dim).map(|i| format!("student_{i}")));
    header.extend((0..dim).map(|i| format!("teacher_{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for r in records {
        let mut row = vec![
            r.class.to_string(),
            r.seed.to_string(),
            r.student_score.to_string(),
            r.teacher_score.to_string(),
            r.distance.to_string(),
            r.gap.to_string(),
            r.teacher_curvature.to_string(),
            r.complexity_proxy.to_string(),
        ];
        row.extend(r.student_sample.iter().map(|v| v.to_string()));
        row.extend(r.teacher_sample.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Percentile bootstrap interval of `stat` over paired resamples. Resamples
/// on which `stat` fails (for example with zero variance) are skipped.
pub fn bootstrap_paired<R, F>(
    xs: &[f64],
    ys: &[f64],
    stat: F,
    resamples: usize,
    level: f64,
    rng: &mut R,
) -> Result<Interval>
where
    R: Rng + ?Sized,
    F: Fn(&[f64], &[f64]) -> Result<f64>,
{
    if !(0.0 < level && level < 1.0) || resamples == 0 {
        return Err(Error::InvalidArgument(format!("bootstrap level {level}, {resamples} resamples")));
    }
    let estimate = stat(xs, ys)?;
    let n = xs.len();
    let mut values = Vec::with_capacity(resamples);
    let (mut bx, mut by) = (vec![0.0; n], vec![0.0; n]);
    for _ in 0..resamples {
        for i in 0..n {
            let j = rng.gen_range(0..n);
            bx[i] = xs[j];
            by[i] = ys[j];
        }
        if let Ok(v) = stat(&bx, &by) {
            values.push(v);
        }
    }
    if values.is_empty() {
        return Err(Error::Empty("successful bootstrap resamples"));
    }
    values.sort_by(f64::total_cmp);
    let q = |p: f64| values[((p * values.len() as f64).floor() as usize).min(values.len() - 1)];
    let alpha = (1.0 - level) / 2.0;
    Ok(Interval {
        estimate,
        lo: q(alpha),
        hi: q(1.0 - alpha),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketWinRate {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub student_win_rate: Option<Interval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub records: usize,
    pub buckets: BucketTable,
    pub bucket_win_rates: Vec<BucketWinRate>,
    pub curvature_distance_pearson: Interval,
    pub curvature_distance_spearman: Interval,
    pub complexity_gap_spearman: Option<Interval>,
    pub median_teacher_curvature: f64,
    pub bootstrap_resamples: usize,
    pub confidence_level: f64,
}

pub fn median(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Empty("median input"));
    }
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len();
    Ok(if m % 2 == 1 { s[m / 2] } else { 0.5 * (s[m / 2 - 1] + s[m / 2]) })
}

/// Bucket table, per-bucket student win rates and curvature-distance
/// correlations, each with a percentile bootstrap interval.
pub fn summarize<R: Rng + ?Sized>(
    records: &[PairedRecord],
    buckets: &[(f64, f64)],
    tie_tolerance: f64,
    resamples: usize,
    level: f64,
    rng: &mut R,
) -> Result<AnalysisSummary> {
    let pairs: Vec<(f64, f64)> = records.iter().map(|r| (r.distance, r.gap)).collect();
    let table = win_buckets(&pairs, buckets, tie_tolerance)?;
    let pct = percentile_ranks(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let mut bucket_win_rates = Vec::with_capacity(buckets.len());
    for (b, &(lo, hi)) in buckets.iter().enumerate() {
        let wins: Vec<f64> = pairs
            .iter()
            .zip(&pct)
            .filter(|(_, &p)| bucket_of(p, buckets) == Some(b))
            .map(|((_, g), _)| (*g >= tie_tolerance) as u8 as f64)
            .collect();
        let student_win_rate = if wins.is_empty() {
            None
        } else {
            let mean = |w: &[f64], _: &[f64]| Ok(w.iter().sum::<f64>() / w.len() as f64);
            Some(bootstrap_paired(&wins, &wins, mean, resamples, level, rng)?)
        };
        bucket_win_rates.push(BucketWinRate {
            lo,
            hi,
            count: wins.len(),
            student_win_rate,
        });
    }
    let curv: Vec<f64> = records.iter().map(|r| r.teacher_curvature).collect();
    let dist: Vec<f64> = records.iter().map(|r| r.distance).collect();
    let comp: Vec<f64> = records.iter().map(|r| r.complexity_proxy).collect();
    let gaps: Vec<f64> = records.iter().map(|r| r.gap).collect();
    Ok(AnalysisSummary {
        records: records.len(),
        buckets: table,
        bucket_win_rates,
        curvature_distance_pearson: bootstrap_paired(&curv, &dist, pearson, resamples, level, rng)?,
        curvature_distance_spearman: bootstrap_paired(&curv, &dist, spearman, resamples, level, rng)?,
        complexity_gap_spearman: bootstrap_paired(&comp, &gaps, spearman, resamples, level, rng).ok(),
        median_teacher_curvature: median(&curv)?,
        bootstrap_resamples: resamples,
        confidence_level: level,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{AnalyticEps, ClassMixture, GuidedDenoiser, MixtureComponent, ScheduleSpec};
    use crate::solvers::TrajectoryPoint;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn traj(x0s: &[[f64; 2]]) -> Trajectory {
        Trajectory {
            points: x0s
                .iter()
                .enumerate()
                .map(|(i, p)| TrajectoryPoint {
                    t: x0s.len() - 1 - i,
                    sigma: 0.5,
                    x: p.to_vec(),
                    x0_hat: p.to_vec(),
                })
                .collect(),
            sample: x0s[x0s.len() - 1].to_vec(),
            nfe: x0s.len() - 1,
            nfe_cfg: 2 * (x0s.len() - 1),
        }
    }

    #[test]
    fn curvature_of_lines_and_bends() {
        assert_eq!(curvature(&traj(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])).unwrap(), 0.0);
        let bent = curvature(&traj(&[[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]])).unwrap();
        assert!((bent - 1.0).abs() < 1e-15);
        let closed = curvature(&traj(&[[1.0, 1.0], [4.0, 5.0], [1.0, 1.0]])).unwrap();
        assert_eq!(closed, 5.0);
        assert!(curvature(&traj(&[[0.0, 0.0], [1.0, 0.0]])).is_err());
    }

    #[test]
    fn distance_examples() {
        assert_eq!(distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(distance(&[1.5, -2.0], &[1.5, -2.0]).unwrap(), 0.0);
        assert!(distance(&[0.0], &[0.0, 1.0]).is_err());
    }

    proptest! {
        #[test]
        fn distance_is_a_metric(a in prop::array::uniform3(-10.0f64..10.0), b in prop::array::uniform3(-10.0f64..10.0), c in prop::array::uniform3(-10.0f64..10.0)) {
            let (ab, ba) = (distance(&a, &b).unwrap(), distance(&b, &a).unwrap());
            prop_assert_eq!(ab, ba);
            prop_assert!(ab <= distance(&a, &c).unwrap() + distance(&c, &b).unwrap() + 1e-12);
        }

        #[test]
        fn spearman_is_rank_invariant(xs in prop::collection::vec(-5.0f64..5.0, 3..40), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ys: Vec<f64> = xs.iter().map(|x| x + rng.sample::<f64, _>(StandardNormal)).collect();
            if let Ok(r) = spearman(&xs, &ys) {
                prop_assert!((-1.0..=1.0).contains(&r));
                let tx: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
                let ty: Vec<f64> = ys.iter().map(|y| y * y * y + 2.0).collect();
                prop_assert!((spearman(&tx, &ty).unwrap() - r).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn correlation_examples() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64 * 0.3 - 4.0).collect();
        let lin: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let c = correlations(&xs, &lin).unwrap();
        assert!((c.pearson - 1.0).abs() < 1e-12 && (c.spearman - 1.0).abs() < 1e-12);
        let cube: Vec<f64> = xs.iter().map(|x| -x * x * x).collect();
        let c = correlations(&xs, &cube).unwrap();
        assert!((c.spearman + 1.0).abs() < 1e-12);
        assert!(c.pearson.abs() < 1.0 && c.pearson < -0.8);
        assert!(matches!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::ZeroVariance(_))));
    }

    #[test]
    fn independent_series_are_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let xs: Vec<f64> = (0..10_000).map(|_| rng.sample(StandardNormal)).collect();
        let ys: Vec<f64> = (0..10_000).map(|_| rng.sample(StandardNormal)).collect();
        assert!(pearson(&xs, &ys).unwrap().abs() < 0.05);
    }

    #[test]
    fn average_ranks() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn identical_distances_share_one_bucket() {
        let recs: Vec<(f64, f64)> = (0..7).map(|i| (2.0, i as f64 - 3.0)).collect();
        let t = win_buckets(&recs, &DEFAULT_BUCKETS, DEFAULT_TIE_TOLERANCE).unwrap();
        assert_eq!(t.rows[0].total(), 7);
        assert_eq!(t.rows[1].total() + t.rows[2].total(), 0);
    }

    #[test]
    fn hand_built_bucket_table() {
        // Distances 1..=10 have percentiles 0, 10, ..., 90.
        let gaps = [0.3, 0.01, -0.2, 0.5, -0.04, 0.2, -0.6, 0.07, 0.05, -0.05];
        let recs: Vec<(f64, f64)> = gaps.iter().enumerate().map(|(i, &g)| ((i + 1) as f64, g)).collect();
        let t = win_buckets(&recs, &DEFAULT_BUCKETS, 0.05).unwrap();
        let counts: Vec<(usize, usize, usize)> =
            t.rows.iter().map(|r| (r.student_better, r.teacher_better, r.ties)).collect();
        // low: records 1, 2 (0.3 win, 0.01 tie); medium: 5, 6 (-0.04 tie,
        // 0.2 win); high: 9, 10 (0.05 win, -0.05 loss).
        assert_eq!(counts, vec![(1, 0, 1), (1, 0, 1), (1, 1, 0)]);
    }

    #[test]
    fn bucket_upper_edge_is_closed_at_100() {
        assert_eq!(bucket_of(100.0, &DEFAULT_BUCKETS), Some(2));
        assert_eq!(bucket_of(20.0, &DEFAULT_BUCKETS), None);
        assert_eq!(bucket_of(60.0, &DEFAULT_BUCKETS), None);
    }

    fn gaussian_teacher(data: DataDistribution, schedule: &NoiseSchedule) -> GuidedDenoiser<AnalyticEps> {
        GuidedDenoiser::new(
            AnalyticEps {
                data,
                schedule: schedule.clone(),
            },
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn gaussian_trajectories_are_straight() {
        let schedule = NoiseSchedule::new(ScheduleSpec::default()).unwrap();
        let data = DataDistribution {
            dim: 2,
            classes: vec![ClassMixture {
                prior: 1.0,
                components: vec![MixtureComponent {
                    weight: 1.0,
                    mean: vec![0.0, 0.0],
                    std: 0.7,
                }],
            }],
        };
        let gen = TeacherGenerator {
            teacher: gaussian_teacher(data, &schedule),
            spec: SolverSpec::ddim(50),
            schedule: &schedule,
        };
        for seed in 0..20 {
            assert!(curvature(&gen.generate(0, seed).unwrap()).unwrap() < 1e-6);
        }
    }

    #[test]
    fn identical_models_give_zero_gaps() {
        let schedule = NoiseSchedule::new(ScheduleSpec::default()).unwrap();
        let data = DataDistribution::benchmark();
        let gen = TeacherGenerator {
            teacher: gaussian_teacher(data.clone(), &schedule),
            spec: SolverSpec::ddim(10),
            schedule: &schedule,
        };
        let classes = [0, 1, 2, 3, 0, 1];
        let seeds = [1, 2, 3, 4, 5, 6];
        let recs = build_paired_records(&classes, &seeds, &gen, &gen, &data).unwrap();
        assert_eq!(recs.len(), 6);
        assert!(recs.iter().all(|r| r.distance == 0.0 && r.gap == 0.0));
    }

    #[test]
    fn bootstrap_brackets_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<f64> = (0..300).map(|_| rng.sample(StandardNormal)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x + 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        let ci = bootstrap_paired(&xs, &ys, pearson, 500, 0.95, &mut rng).unwrap();
        assert!(ci.lo <= ci.estimate && ci.estimate <= ci.hi);
        // Population correlation 1/sqrt(1.25).
        assert!(ci.lo < 0.894 && 0.894 < ci.hi, "{ci:?}");
    }

    #[test]
    fn complexity_proxy_uses_nearest_component() {
        let data = DataDistribution::benchmark();
        let at_mean = complexity_proxy(&[1.2, 0.0], 0, &data).unwrap();
        let expected = (2.0 * std::f64::consts::PI * 0.15f64.powi(2)).ln();
        assert!((at_mean - expected).abs() < 1e-12);
        assert!(complexity_proxy(&[0.3, 0.3], 0, &data).unwrap() > at_mean);
    }
}
