//! Evaluation: per-angle MAE, error by ground-truth angle bucket, signed
//! error histograms, and the K-sweep / loss ablation harness.
//!
//! Errors are raw differences in degrees with no wrap-around; every
//! evaluated angle lies in +/-90.

mod harness;
mod report;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{filter_evaluable, prepare_input, Sample};
use crate::error::{Error, Result};
use crate::geometry::{HeadPose, PixelNorm, EVALUABLE_RANGE_DEG};
use crate::net::{decode_prediction, Model};

pub use harness::{ablate_loss, sweep_k, AblationRow, AblationTable, RunPlan, SweepRow, SweepTable};
pub use report::{EvalReport, PerAngle};

pub const DEFAULT_BUCKET_WIDTH_DEG: f64 = 10.0;
pub const DEFAULT_BIN_WIDTH_DEG: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub k: f64,
    pub pixel_norm: PixelNorm,
    pub bucket_width: f64,
    pub bin_width: f64,
    pub filter_range: f64,
}

impl EvalOptions {
    pub fn new(k: f64, pixel_norm: PixelNorm) -> Self {
        EvalOptions {
            k,
            pixel_norm,
            bucket_width: DEFAULT_BUCKET_WIDTH_DEG,
            bin_width: DEFAULT_BIN_WIDTH_DEG,
            filter_range: EVALUABLE_RANGE_DEG,
        }
    }
}

/// Mean absolute error over the ground-truth samples in one angle bucket.
/// `mean_abs_error` is `None` for an empty bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub lower_deg: f64,
    pub upper_deg: f64,
    pub count: usize,
    pub mean_abs_error: Option<f64>,
}

impl Bucket {
    pub fn center(&self) -> f64 {
        0.5 * (self.lower_deg + self.upper_deg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub center_deg: f64,
    pub count: usize,
}

fn check_width(width: f64, what: &str) -> Result<()> {
    if width > 0.0 && width.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{what} {width} must be > 0")))
    }
}

/// Groups `(truth, prediction)` pairs by `floor((truth + 90) / width)` over
/// `ceil(180 / width)` buckets. A truth of exactly +90 falls in the last
/// bucket, so every bucket is half-open except the last.
pub fn bucket_errors(pairs: &[(f64, f64)], width: f64) -> Result<Vec<Bucket>> {
    check_width(width, "bucket width")?;
    let span = 2.0 * EVALUABLE_RANGE_DEG;
    let n = ((span / width).ceil() as usize).max(1);
    let mut sums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    for &(truth, pred) in pairs {
        let idx = (((truth + EVALUABLE_RANGE_DEG) / width).floor().max(0.0) as usize).min(n - 1);
        sums[idx] += (pred - truth).abs();
        counts[idx] += 1;
    }
    Ok((0..n)
        .map(|i| {
            let lower = -EVALUABLE_RANGE_DEG + i as f64 * width;
            Bucket {
                lower_deg: lower,
                upper_deg: (lower + width).min(EVALUABLE_RANGE_DEG),
                count: counts[i],
                mean_abs_error: (counts[i] > 0).then(|| sums[i] / counts[i] as f64),
            }
        })
        .collect())
}

/// Counts of signed errors in bins of `width` centred on multiples of
/// `width` (bin `i` holds errors that round to `i * width`). The bins run
/// contiguously from the lowest to the highest occupied one.
pub fn error_histogram(errors: &[f64], width: f64) -> Result<Vec<HistogramBin>> {
    check_width(width, "bin width")?;
    if let Some(e) = errors.iter().find(|e| !e.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite error {e}")));
    }
    let idx: Vec<i64> = errors.iter().map(|e| (e / width).round() as i64).collect();
    let (Some(&lo), Some(&hi)) = (idx.iter().min(), idx.iter().max()) else {
        return Ok(Vec::new());
    };
    let mut counts = vec![0usize; (hi - lo + 1) as usize];
    for i in idx {
        counts[(i - lo) as usize] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(j, count)| HistogramBin {
            center_deg: (lo + j as i64) as f64 * width,
            count,
        })
        .collect())
}

/// Decoded predictions for each sample, in order.
pub fn predict_samples(model: &Model, samples: &[Sample], k: f64, norm: &PixelNorm) -> Result<Vec<HeadPose>> {
    let side = model.spec().input_side;
    samples
        .par_iter()
        .map(|s| {
            let patch = prepare_input(s, k, side, norm)?;
            let pred = model.predict(&patch).map_err(|e| e.for_sample(&s.source_id))?;
            Ok(decode_prediction(&pred))
        })
        .collect()
}

/// Filters to the evaluable range, predicts at margin `opts.k` and reports.
pub fn evaluate(model: &Model, samples: &[Sample], opts: &EvalOptions) -> Result<EvalReport> {
    let (kept, dropped) = filter_evaluable(samples.to_vec(), opts.filter_range);
    if kept.is_empty() {
        return Err(Error::EmptyEvaluation { dropped });
    }
    let pred = predict_samples(model, &kept, opts.k, &opts.pixel_norm)?;
    let truth: Vec<HeadPose> = kept.iter().map(|s| s.pose).collect();
    let mut report = EvalReport::from_predictions(&truth, &pred, dropped, opts.bucket_width, opts.bin_width)?;
    report.k = Some(opts.k);
    Ok(report)
}
