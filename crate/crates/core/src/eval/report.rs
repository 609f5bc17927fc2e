use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{bucket_errors, error_histogram, Bucket, HistogramBin};
use crate::error::{Error, Result};
use crate::geometry::{Angle, HeadPose};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerAngle<T> {
    pub yaw: T,
    pub pitch: T,
    pub roll: T,
}

impl<T> PerAngle<T> {
    pub fn from_fn(mut f: impl FnMut(Angle) -> T) -> Self {
        PerAngle {
            yaw: f(Angle::Yaw),
            pitch: f(Angle::Pitch),
            roll: f(Angle::Roll),
        }
    }

    pub fn get(&self, angle: Angle) -> &T {
        match angle {
            Angle::Yaw => &self.yaw,
            Angle::Pitch => &self.pitch,
            Angle::Roll => &self.roll,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Margin the crops were taken at, when known.
    pub k: Option<f64>,
    pub mae: PerAngle<f64>,
    /// Unweighted mean of the three per-angle MAEs.
    pub overall_mae: f64,
    pub count: usize,
    pub dropped: usize,
    pub bucket_width: f64,
    pub buckets: PerAngle<Vec<Bucket>>,
    pub bin_width: f64,
    pub histograms: PerAngle<Vec<HistogramBin>>,
}

impl EvalReport {
    pub fn from_predictions(
        truth: &[HeadPose],
        pred: &[HeadPose],
        dropped: usize,
        bucket_width: f64,
        bin_width: f64,
    ) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::InvalidBatch(format!(
                "{} truths vs {} predictions",
                truth.len(),
                pred.len()
            )));
        }
        if truth.is_empty() {
            return Err(Error::EmptyEvaluation { dropped });
        }
        let n = truth.len() as f64;
        let pairs = |a: Angle| -> Vec<(f64, f64)> { truth.iter().zip(pred).map(|(t, p)| (t.get(a), p.get(a))).collect() };
        let mae = PerAngle::from_fn(|a| pairs(a).iter().map(|(t, p)| (p - t).abs()).sum::<f64>() / n);
        let buckets = PerAngle::from_fn(|a| bucket_errors(&pairs(a), bucket_width));
        let histograms = PerAngle::from_fn(|a| {
            let errors: Vec<f64> = pairs(a).iter().map(|(t, p)| p - t).collect();
            error_histogram(&errors, bin_width)
        });
        Ok(EvalReport {
            k: None,
            overall_mae: (mae.yaw + mae.pitch + mae.roll) / 3.0,
            mae,
            count: truth.len(),
            dropped,
            bucket_width,
            buckets: PerAngle {
                yaw: buckets.yaw?,
                pitch: buckets.pitch?,
                roll: buckets.roll?,
            },
            bin_width,
            histograms: PerAngle {
                yaw: histograms.yaw?,
                pitch: histograms.pitch?,
                roll: histograms.roll?,
            },
        })
    }

    /// The recombination identities every report satisfies; violations are
    /// returned as a message.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let mean = (self.mae.yaw + self.mae.pitch + self.mae.roll) / 3.0;
        if (mean - self.overall_mae).abs() > 1e-9 {
            return Err(format!("overall MAE {} != mean of angles {mean}", self.overall_mae));
        }
        for a in Angle::ALL {
            let buckets = self.buckets.get(a);
            let n: usize = buckets.iter().map(|b| b.count).sum();
            let weighted: f64 = buckets
                .iter()
                .filter_map(|b| b.mean_abs_error.map(|m| m * b.count as f64))
                .sum::<f64>()
                / n as f64;
            if n != self.count || (weighted - self.mae.get(a)).abs() > 1e-9 {
                return Err(format!("{a} buckets recombine to {weighted} over {n} samples"));
            }
            let h: usize = self.histograms.get(a).iter().map(|b| b.count).sum();
            if h != self.count {
                return Err(format!("{a} histogram holds {h} of {} samples", self.count));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(k) = self.k {
            let _ = writeln!(s, "K = {k}");
        }
        let _ = writeln!(s, "{:>8} {:>8} {:>8} {:>8}", "yaw", "pitch", "roll", "MAE");
        let _ = writeln!(
            s,
            "{:>8.3} {:>8.3} {:>8.3} {:>8.3}",
            self.mae.yaw, self.mae.pitch, self.mae.roll, self.overall_mae
        );
        let _ = writeln!(s, "samples {}, dropped {}", self.count, self.dropped);
        s
    }

    /// `angle,center,value,count` rows: per-bucket mean absolute error
    /// (empty buckets leave `value` blank).
    pub fn buckets_csv(&self) -> String {
        let mut s = String::from("angle,center,value,count\n");
        for a in Angle::ALL {
            for b in self.buckets.get(a) {
                let v = b.mean_abs_error.map(|m| m.to_string()).unwrap_or_default();
                let _ = writeln!(s, "{a},{},{v},{}", b.center(), b.count);
            }
        }
        s
    }

    /// `angle,center,value,count` rows: `value` is the fraction of samples.
    pub fn histogram_csv(&self) -> String {
        let mut s = String::from("angle,center,value,count\n");
        for a in Angle::ALL {
            for b in self.histograms.get(a) {
                let frac = b.count as f64 / self.count as f64;
                let _ = writeln!(s, "{a},{},{frac},{}", b.center_deg, b.count);
            }
        }
        s
    }
}
