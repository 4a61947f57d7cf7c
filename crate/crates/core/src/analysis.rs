//! Class-wise residual statistics and multi-run variant comparison.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::fsutil::{fmt_f64, write_atomic};
use crate::geometry::PoseError;
use crate::scene_sim::ResidualSample;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("no input to analyze")]
    EmptyInput,
    #[error("variant run counts differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

/// Median with the even-length convention of averaging the two central values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Residual summary of one semantic class, in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassResidualStats {
    pub class_id: u32,
    pub count: usize,
    pub median_abs_du: f64,
    pub median_abs_dv: f64,
    /// Median of `‖f‖`.
    pub summary: f64,
    pub mean_abs_du: f64,
    pub mean_abs_dv: f64,
    /// `summary` exceeds the unweighted mean of all class summaries.
    pub above_average: bool,
}

/// Per-class residual medians, ordered by class id, with above/below-average flags.
pub fn class_stats<S: ResidualSample>(samples: &[S]) -> Result<Vec<ClassResidualStats>> {
    if samples.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    // |du|, |dv|, ‖f‖ per class.
    type Columns = (Vec<f64>, Vec<f64>, Vec<f64>);
    let mut by_class: BTreeMap<u32, Columns> = BTreeMap::new();
    for s in samples {
        let f = s.residual();
        let e = by_class.entry(s.class_id()).or_default();
        e.0.push(f.x.abs());
        e.1.push(f.y.abs());
        e.2.push(f.norm());
    }
    let mut stats: Vec<ClassResidualStats> = by_class
        .into_iter()
        .map(|(class_id, (du, dv, norm))| ClassResidualStats {
            class_id,
            count: du.len(),
            median_abs_du: median(&du).unwrap(),
            median_abs_dv: median(&dv).unwrap(),
            summary: median(&norm).unwrap(),
            mean_abs_du: mean(&du),
            mean_abs_dv: mean(&dv),
            above_average: false,
        })
        .collect();
    let threshold = class_average(&stats);
    for s in &mut stats {
        s.above_average = s.summary > threshold;
    }
    Ok(stats)
}

/// Unweighted mean of the class summaries.
pub fn class_average(stats: &[ClassResidualStats]) -> f64 {
    stats.iter().map(|s| s.summary).sum::<f64>() / stats.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Aggregate {
    pub mean: f64,
    pub median: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Self {
        let m = mean(values);
        let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64;
        Self {
            mean: m,
            median: median(values).unwrap_or(f64::NAN),
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WinCounts {
    pub translation: usize,
    pub rotation: usize,
}

/// `(a − b) / a`; positive when `b` is smaller. Zero when both are zero.
pub fn relative_improvement(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else if a == 0.0 {
        f64::NEG_INFINITY
    } else {
        (a - b) / a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Improvement {
    pub translation_mean: f64,
    pub translation_median: f64,
    pub translation_std: f64,
    pub rotation_mean: f64,
    pub rotation_median: f64,
    pub rotation_std: f64,
}

/// Variant `a` (baseline) against variant `b` over paired runs.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantComparison {
    pub runs_a: Vec<PoseError>,
    pub runs_b: Vec<PoseError>,
    pub translation_a: Aggregate,
    pub translation_b: Aggregate,
    pub rotation_a: Aggregate,
    pub rotation_b: Aggregate,
    /// Runs in which `a` is strictly better.
    pub wins_a: WinCounts,
    /// Runs in which `b` is strictly better.
    pub wins_b: WinCounts,
    /// Improvement of `b` relative to `a`.
    pub improvement: Improvement,
}

impl VariantComparison {
    pub fn run_count(&self) -> usize {
        self.runs_a.len()
    }
}

pub fn compare_variants(runs_a: &[PoseError], runs_b: &[PoseError]) -> Result<VariantComparison> {
    if runs_a.len() != runs_b.len() {
        return Err(AnalysisError::LengthMismatch(runs_a.len(), runs_b.len()));
    }
    if runs_a.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    let trans = |r: &[PoseError]| r.iter().map(|e| e.translation).collect::<Vec<_>>();
    let rot = |r: &[PoseError]| r.iter().map(|e| e.rotation_deg).collect::<Vec<_>>();
    let (ta, tb) = (Aggregate::of(&trans(runs_a)), Aggregate::of(&trans(runs_b)));
    let (ra, rb) = (Aggregate::of(&rot(runs_a)), Aggregate::of(&rot(runs_b)));
    let mut wins_a = WinCounts::default();
    let mut wins_b = WinCounts::default();
    for (a, b) in runs_a.iter().zip(runs_b) {
        wins_a.translation += (a.translation < b.translation) as usize;
        wins_b.translation += (b.translation < a.translation) as usize;
        wins_a.rotation += (a.rotation_deg < b.rotation_deg) as usize;
        wins_b.rotation += (b.rotation_deg < a.rotation_deg) as usize;
    }
    Ok(VariantComparison {
        runs_a: runs_a.to_vec(),
        runs_b: runs_b.to_vec(),
        improvement: Improvement {
            translation_mean: relative_improvement(ta.mean, tb.mean),
            translation_median: relative_improvement(ta.median, tb.median),
            translation_std: relative_improvement(ta.std, tb.std),
            rotation_mean: relative_improvement(ra.mean, rb.mean),
            rotation_median: relative_improvement(ra.median, rb.median),
            rotation_std: relative_improvement(ra.std, rb.std),
        },
        translation_a: ta,
        translation_b: tb,
        rotation_a: ra,
        rotation_b: rb,
        wins_a,
        wins_b,
    })
}

fn write_csv(path: &Path, text: String) -> Result<()> {
    write_atomic(path, text.as_bytes()).map_err(|source| AnalysisError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// `class,count,med_du,med_dv,summary,above_avg,mean_du,mean_dv`
pub fn class_stats_csv(stats: &[ClassResidualStats]) -> String {
    let mut out = String::from("class,count,med_du,med_dv,summary,above_avg,mean_du,mean_dv\n");
    for s in stats {
        out += &format!(
            "{},{},{},{},{},{},{},{}\n",
            s.class_id,
            s.count,
            fmt_f64(s.median_abs_du),
            fmt_f64(s.median_abs_dv),
            fmt_f64(s.summary),
            s.above_average,
            fmt_f64(s.mean_abs_du),
            fmt_f64(s.mean_abs_dv),
        );
    }
    out
}

pub fn write_class_stats(path: &Path, stats: &[ClassResidualStats]) -> Result<()> {
    write_csv(path, class_stats_csv(stats))
}

/// `run,variant,trans_err_m,rot_err_deg`, one row per run and variant.
pub fn runs_csv(cmp: &VariantComparison, name_a: &str, name_b: &str) -> String {
    let mut out = String::from("run,variant,trans_err_m,rot_err_deg\n");
    for (i, (a, b)) in cmp.runs_a.iter().zip(&cmp.runs_b).enumerate() {
        for (name, e) in [(name_a, a), (name_b, b)] {
            out += &format!("{i},{name},{},{}\n", fmt_f64(e.translation), fmt_f64(e.rotation_deg));
        }
    }
    out
}

pub fn write_runs(path: &Path, cmp: &VariantComparison, name_a: &str, name_b: &str) -> Result<()> {
    write_csv(path, runs_csv(cmp, name_a, name_b))
}

/// `variant,metric,mean,median,std,wins,improvement` with the improvement on `b`'s rows.
pub fn aggregate_csv(cmp: &VariantComparison, name_a: &str, name_b: &str) -> String {
    let mut out = String::from("variant,metric,mean,median,std,wins,improvement_mean,improvement_median\n");
    let imp = &cmp.improvement;
    let rows = [
        (name_a, "translation_m", &cmp.translation_a, cmp.wins_a.translation, 0.0, 0.0),
        (name_a, "rotation_deg", &cmp.rotation_a, cmp.wins_a.rotation, 0.0, 0.0),
        (name_b, "translation_m", &cmp.translation_b, cmp.wins_b.translation, imp.translation_mean, imp.translation_median),
        (name_b, "rotation_deg", &cmp.rotation_b, cmp.wins_b.rotation, imp.rotation_mean, imp.rotation_median),
    ];
    for (name, metric, agg, wins, im, imed) in rows {
        out += &format!(
            "{name},{metric},{},{},{},{wins},{},{}\n",
            fmt_f64(agg.mean),
            fmt_f64(agg.median),
            fmt_f64(agg.std),
            fmt_f64(im),
            fmt_f64(imed),
        );
    }
    out
}

pub fn write_aggregate(path: &Path, cmp: &VariantComparison, name_a: &str, name_b: &str) -> Result<()> {
    write_csv(path, aggregate_csv(cmp, name_a, name_b))
}

/// Human-readable comparison table.
pub fn format_comparison(cmp: &VariantComparison, name_a: &str, name_b: &str) -> String {
    let n = cmp.run_count();
    let imp = &cmp.improvement;
    let mut s = String::new();
    s += &format!("{:<10} {:>14} {:>14} {:>14} {:>8}\n", "variant", "mean", "median", "std", "wins");
    s += "translation error [m]\n";
    for (name, agg, wins) in [(name_a, &cmp.translation_a, cmp.wins_a.translation), (name_b, &cmp.translation_b, cmp.wins_b.translation)] {
        s += &format!("{name:<10} {:>14.6e} {:>14.6e} {:>14.6e} {:>5}/{n}\n", agg.mean, agg.median, agg.std, wins);
    }
    s += "rotation error [deg]\n";
    for (name, agg, wins) in [(name_a, &cmp.rotation_a, cmp.wins_a.rotation), (name_b, &cmp.rotation_b, cmp.wins_b.rotation)] {
        s += &format!("{name:<10} {:>14.6e} {:>14.6e} {:>14.6e} {:>5}/{n}\n", agg.mean, agg.median, agg.std, wins);
    }
    s += &format!(
        "improvement of {name_b} over {name_a}: translation mean {:.2}% median {:.2}% std {:.2}%; rotation mean {:.2}% median {:.2}% std {:.2}%\n",
        100.0 * imp.translation_mean,
        100.0 * imp.translation_median,
        100.0 * imp.translation_std,
        100.0 * imp.rotation_mean,
        100.0 * imp.rotation_median,
        100.0 * imp.rotation_std,
    );
    s
}
