use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{evaluate, EvalOptions, EvalReport};
use crate::archive::write_atomic;
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::net::{build_model, ModelSpec};
use crate::train::{train, LossMode, TrainConfig};

/// One train-then-evaluate recipe; the sweeps vary only K and the loss mode.
#[derive(Debug, Clone)]
pub struct RunPlan<'a> {
    pub spec: ModelSpec,
    pub train: TrainConfig,
    pub eval: EvalOptions,
    pub train_samples: &'a [Sample],
    pub eval_samples: &'a [Sample],
    /// When set, each run writes its training files and `report.json` to
    /// `<root>/k_<K>_<mode>/`.
    pub run_root: Option<PathBuf>,
}

fn mode_name(mode: LossMode) -> &'static str {
    match mode {
        LossMode::Combined => "combined",
        LossMode::RegressionOnly => "regression-only",
    }
}

impl RunPlan<'_> {
    /// Builds the model from the plan's seed, trains at margin `k` and
    /// evaluates at the same margin.
    pub fn run(&self, k: f64, mode: LossMode) -> Result<EvalReport> {
        let cfg = TrainConfig {
            k,
            loss_mode: mode,
            ..self.train.clone()
        };
        let dir = self.run_root.as_ref().map(|r| r.join(format!("k_{k:.3}_{}", mode_name(mode))));
        let model = build_model(&self.spec, cfg.seed)?;
        let out = train(model, self.train_samples, &cfg, dir.as_deref())?;
        let opts = EvalOptions {
            k,
            pixel_norm: cfg.pixel_norm,
            ..self.eval
        };
        let report = evaluate(&out.checkpoint.model, self.eval_samples, &opts)?;
        if let Some(dir) = &dir {
            let json = report.to_json()?;
            write_atomic(&dir.join("report.json"), |w| Ok(std::io::Write::write_all(w, json.as_bytes())?))?;
        }
        Ok(report)
    }
}

fn sorted_ks(ks: &[f64]) -> Result<Vec<f64>> {
    if ks.is_empty() {
        return Err(Error::InvalidParameter("empty K list".into()));
    }
    if let Some(k) = ks.iter().find(|k| !(**k >= 0.0) || !k.is_finite()) {
        return Err(Error::InvalidParameter(format!("K = {k} must be finite and >= 0")));
    }
    let mut v = ks.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: f64,
    pub report: EvalReport,
    /// Lowest overall MAE in the table (first such row on ties).
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub loss_mode: LossMode,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_text(&self) -> String {
        let mut s = format!("{:>6} {:>8} {:>8} {:>8} {:>8}\n", "K", "yaw", "pitch", "roll", "MAE");
        for r in &self.rows {
            let m = &r.report.mae;
            let _ = writeln!(
                s,
                "{:>6.2} {:>8.3} {:>8.3} {:>8.3} {:>8.3}{}",
                r.k,
                m.yaw,
                m.pitch,
                m.roll,
                r.report.overall_mae,
                if r.best { "  *" } else { "" }
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,yaw,pitch,roll,mae,best\n");
        for r in &self.rows {
            let m = &r.report.mae;
            let _ = writeln!(s, "{},{},{},{},{},{}", r.k, m.yaw, m.pitch, m.roll, r.report.overall_mae, r.best);
        }
        s
    }
}

/// One train+evaluate cycle per K with the same seed, rows ordered by K.
pub fn sweep_k(plan: &RunPlan<'_>, ks: &[f64]) -> Result<SweepTable> {
    let ks = sorted_ks(ks)?;
    let mode = plan.train.loss_mode;
    let mut rows = ks
        .into_iter()
        .map(|k| {
            Ok(SweepRow {
                k,
                report: plan.run(k, mode)?,
                best: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = rows
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.report.overall_mae.total_cmp(&b.1.report.overall_mae))
        .map(|(i, _)| i)
        .expect("nonempty");
    rows[best].best = true;
    Ok(SweepTable { loss_mode: mode, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub k: f64,
    pub combined: EvalReport,
    pub regression_only: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:>6} {:<16} {:>8} {:>8} {:>8} {:>8}\n",
            "K", "loss", "yaw", "pitch", "roll", "MAE"
        );
        for r in &self.rows {
            for (mode, rep) in [(LossMode::Combined, &r.combined), (LossMode::RegressionOnly, &r.regression_only)] {
                let m = &rep.mae;
                let _ = writeln!(
                    s,
                    "{:>6.2} {:<16} {:>8.3} {:>8.3} {:>8.3} {:>8.3}",
                    r.k,
                    mode_name(mode),
                    m.yaw,
                    m.pitch,
                    m.roll,
                    rep.overall_mae
                );
            }
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,loss_mode,yaw,pitch,roll,mae\n");
        for r in &self.rows {
            for (mode, rep) in [(LossMode::Combined, &r.combined), (LossMode::RegressionOnly, &r.regression_only)] {
                let m = &rep.mae;
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    r.k,
                    mode_name(mode),
                    m.yaw,
                    m.pitch,
                    m.roll,
                    rep.overall_mae
                );
            }
        }
        s
    }
}

/// For each K, a combined-loss run and a regression-only run that differ in
/// nothing else.
pub fn ablate_loss(plan: &RunPlan<'_>, ks: &[f64]) -> Result<AblationTable> {
    let rows = sorted_ks(ks)?
        .into_iter()
        .map(|k| {
            Ok(AblationRow {
                k,
                combined: plan.run(k, LossMode::Combined)?,
                regression_only: plan.run(k, LossMode::RegressionOnly)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationTable { rows })
}
