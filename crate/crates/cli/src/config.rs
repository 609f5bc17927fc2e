//! The flat run configuration. A config file is a JSON object whose keys are
//! a subset of [`RunConfig`]'s fields; `--override key=value` pairs are
//! applied on top. Unknown keys are errors in both places.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use headpose::dataset::{AdapterKind, BoxSource, DatasetManifest};
use headpose::eval::{EvalOptions, DEFAULT_BIN_WIDTH_DEG, DEFAULT_BUCKET_WIDTH_DEG};
use headpose::geometry::{PixelNorm, DEFAULT_INPUT_SIDE, EVALUABLE_RANGE_DEG};
use headpose::loss::LossConfig;
use headpose::net::{BackboneKind, BackboneSpec, InitScheme, ModelSpec};
use headpose::train::{LossMode, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormName {
    Identity,
    Imagenet,
}

impl NormName {
    pub fn norm(self) -> PixelNorm {
        match self {
            NormName::Identity => PixelNorm::IDENTITY,
            NormName::Imagenet => PixelNorm::IMAGENET,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoxSourceName {
    PrecomputedFile,
    LandmarkExtent,
    Embedded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_root: Option<PathBuf>,
    pub dataset_kind: AdapterKind,
    pub box_source: BoxSourceName,
    pub box_file: Option<PathBuf>,
    /// Evaluation set; the training set is used when unset.
    pub eval_root: Option<PathBuf>,
    pub eval_kind: Option<AdapterKind>,
    pub eval_box_source: Option<BoxSourceName>,
    pub eval_box_file: Option<PathBuf>,

    pub backbone: BackboneKind,
    pub feature_dim: usize,
    pub pretrained_weights: Option<PathBuf>,
    pub input_side: usize,
    pub n_bins: usize,

    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub k: f64,
    pub temperature: f64,
    pub alpha: f64,
    pub loss_mode: LossMode,
    pub seed: u64,
    pub pixel_norm: NormName,
    pub checkpoint_interval: usize,

    pub bucket_width: f64,
    pub bin_width: f64,
    pub filter_range: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunConfig {
            dataset_root: None,
            dataset_kind: AdapterKind::Synthetic,
            box_source: BoxSourceName::Embedded,
            box_file: None,
            eval_root: None,
            eval_kind: None,
            eval_box_source: None,
            eval_box_file: None,
            backbone: BackboneKind::ResNet50,
            feature_dim: 2048,
            pretrained_weights: None,
            input_side: DEFAULT_INPUT_SIDE,
            n_bins: t.loss.n_bins,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            k: t.k,
            temperature: t.loss.temperature,
            alpha: t.loss.alpha,
            loss_mode: t.loss_mode,
            seed: t.seed,
            pixel_norm: NormName::Imagenet,
            checkpoint_interval: t.checkpoint_interval,
            bucket_width: DEFAULT_BUCKET_WIDTH_DEG,
            bin_width: DEFAULT_BIN_WIDTH_DEG,
            filter_range: EVALUABLE_RANGE_DEG,
        }
    }
}

/// `"true"`, numbers and quoted strings parse as JSON; anything else is
/// taken as a bare string (paths, enum names).
fn override_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

impl RunConfig {
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let Value::Object(mut merged) = serde_json::to_value(RunConfig::default())? else {
            unreachable!("struct serializes to an object")
        };
        let mut apply = |key: &str, value: Value, origin: &str| -> Result<()> {
            match merged.get_mut(key) {
                Some(slot) => {
                    *slot = value;
                    Ok(())
                }
                None => bail!("unknown config key {key:?} in {origin}"),
            }
        };
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            let obj: Map<String, Value> =
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
            for (k, v) in obj {
                apply(&k, v, &path.display().to_string())?;
            }
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| anyhow!("override {o:?} is not of the form key=value"))?;
            apply(k.trim(), override_value(v.trim()), "--override")?;
        }
        serde_json::from_value(Value::Object(merged)).context("invalid configuration value")
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            backbone: BackboneSpec {
                kind: self.backbone,
                feature_dim: self.feature_dim,
                pretrained_weights: self.pretrained_weights.clone(),
            },
            input_side: self.input_side,
            n_bins: self.n_bins,
            init: InitScheme::FanIn,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            k: self.k,
            loss: LossConfig {
                temperature: self.temperature,
                alpha: self.alpha,
                n_bins: self.n_bins,
            },
            loss_mode: self.loss_mode,
            seed: self.seed,
            pixel_norm: self.pixel_norm.norm(),
            checkpoint_interval: self.checkpoint_interval,
        }
    }

    pub fn eval_options(&self, k: f64) -> EvalOptions {
        EvalOptions {
            k,
            pixel_norm: self.pixel_norm.norm(),
            bucket_width: self.bucket_width,
            bin_width: self.bin_width,
            filter_range: self.filter_range,
        }
    }

    fn manifest(
        &self,
        root: &Option<PathBuf>,
        kind: AdapterKind,
        source: BoxSourceName,
        box_file: &Option<PathBuf>,
        what: &str,
    ) -> Result<DatasetManifest> {
        let root = root.clone().ok_or_else(|| anyhow!("no {what} dataset configured (set {what}_root)"))?;
        let box_source = match source {
            BoxSourceName::Embedded => BoxSource::Embedded,
            BoxSourceName::LandmarkExtent => BoxSource::LandmarkExtent,
            BoxSourceName::PrecomputedFile => BoxSource::PrecomputedFile(
                box_file
                    .clone()
                    .ok_or_else(|| anyhow!("box source precomputed-file needs a box file path"))?,
            ),
        };
        Ok(DatasetManifest {
            root,
            kind,
            box_source,
            filter_range: self.filter_range,
        })
    }

    pub fn train_manifest(&self) -> Result<DatasetManifest> {
        self.manifest(&self.dataset_root, self.dataset_kind, self.box_source, &self.box_file, "dataset")
    }

    pub fn eval_manifest(&self) -> Result<DatasetManifest> {
        if self.eval_root.is_none() {
            return self.train_manifest();
        }
        self.manifest(
            &self.eval_root,
            self.eval_kind.unwrap_or(self.dataset_kind),
            self.eval_box_source.unwrap_or(self.box_source),
            &self.eval_box_file,
            "eval",
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_win_and_unknown_keys_fail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"epochs": 5, "backbone": "toy-conv", "feature_dim": 16}"#).unwrap();
        let c = RunConfig::resolve(Some(&path), &["epochs=0".into(), "loss_mode=regression-only".into()]).unwrap();
        assert_eq!(c.epochs, 0);
        assert_eq!(c.loss_mode, LossMode::RegressionOnly);
        assert_eq!(c.feature_dim, 16);

        assert!(RunConfig::resolve(Some(&path), &["epoch=1".into()]).is_err());
        assert!(RunConfig::resolve(Some(&path), &["epochs".into()]).is_err());
        assert!(RunConfig::resolve(Some(&path), &["epochs=many".into()]).is_err());
        std::fs::write(&path, r#"{"lr": 1}"#).unwrap();
        assert!(RunConfig::resolve(Some(&path), &[]).is_err());
    }

    #[test]
    fn defaults_follow_the_library() {
        let c = RunConfig::resolve(None, &[]).unwrap();
        assert_eq!(c.train_config(), TrainConfig::default());
        assert_eq!(c.model_spec(), ModelSpec::new(BackboneSpec::resnet50(None)));
    }
}
