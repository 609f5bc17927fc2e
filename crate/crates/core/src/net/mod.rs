//! The angle predictor: a backbone that pools an input patch to a feature
//! vector, and three structurally independent heads (yaw, pitch, roll). Each
//! head has a `feature_dim x 1` regression layer and a
//! `feature_dim x n_bins` classification layer over the same feature.

mod backbone;
mod layers;
mod params;
mod tensor;

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archive::TensorArchive;
use crate::error::{Error, Result};
use crate::geometry::{Angle, AngleBinning, HeadPose, Patch, DEFAULT_INPUT_SIDE, EVALUABLE_RANGE_DEG};

pub use params::{round_f32, ParamEntry, ParamStore};

use layers::{Block, Trace};
use params::ParamId;
use tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneKind {
    /// 50-layer bottleneck residual network, 2048 features.
    #[serde(rename = "reference-50-layer-residual", alias = "resnet50")]
    ResNet50,
    /// Three conv/pool stages after a 4x average-pool stem; at most 64 features.
    ToyConv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub kind: BackboneKind,
    pub feature_dim: usize,
    #[serde(default)]
    pub pretrained_weights: Option<PathBuf>,
}

impl BackboneSpec {
    pub fn toy(feature_dim: usize) -> Self {
        BackboneSpec {
            kind: BackboneKind::ToyConv,
            feature_dim,
            pretrained_weights: None,
        }
    }

    pub fn resnet50(pretrained_weights: Option<PathBuf>) -> Self {
        BackboneSpec {
            kind: BackboneKind::ResNet50,
            feature_dim: backbone::RESNET50_FEATURES,
            pretrained_weights,
        }
    }
}

/// Parameter initialization. Only one scheme exists; it is recorded so that
/// checkpoints and configs state it explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// Conv weights ~ N(0, 2 / fan_in), conv biases 0, batch-norm affine
    /// identity, linear weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    #[default]
    FanIn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub backbone: BackboneSpec,
    #[serde(default = "default_input_side")]
    pub input_side: usize,
    #[serde(default = "default_bins")]
    pub n_bins: usize,
    #[serde(default)]
    pub init: InitScheme,
}

fn default_input_side() -> usize {
    DEFAULT_INPUT_SIDE
}

fn default_bins() -> usize {
    AngleBinning::DEFAULT_BINS
}

impl ModelSpec {
    pub fn new(backbone: BackboneSpec) -> Self {
        ModelSpec {
            backbone,
            input_side: DEFAULT_INPUT_SIDE,
            n_bins: AngleBinning::DEFAULT_BINS,
            init: InitScheme::FanIn,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.backbone.feature_dim;
        match self.backbone.kind {
            BackboneKind::ToyConv if f == 0 || f > backbone::TOY_MAX_FEATURES => {
                return Err(Error::InvalidParameter(format!(
                    "toy backbone feature_dim must be in 1..={}, got {f}",
                    backbone::TOY_MAX_FEATURES
                )))
            }
            BackboneKind::ResNet50 if f != backbone::RESNET50_FEATURES => {
                return Err(Error::InvalidParameter(format!(
                    "reference backbone has {} features, got feature_dim {f}",
                    backbone::RESNET50_FEATURES
                )))
            }
            _ => {}
        }
        if self.input_side < backbone::TOY_MIN_INPUT {
            return Err(Error::InvalidParameter(format!("input side {} is too small", self.input_side)));
        }
        if self.n_bins == 0 {
            return Err(Error::InvalidParameter("n_bins must be positive".into()));
        }
        Ok(())
    }

    /// Same architecture (ignores where pretrained weights came from).
    pub fn is_compatible(&self, other: &ModelSpec) -> bool {
        self.backbone.kind == other.backbone.kind
            && self.backbone.feature_dim == other.backbone.feature_dim
            && self.input_side == other.input_side
            && self.n_bins == other.n_bins
            && self.init == other.init
    }
}

/// Output of one head.
#[derive(Debug, Clone, PartialEq)]
pub struct AnglePrediction {
    pub continuous_deg: f64,
    pub logits: Vec<f64>,
}

impl AnglePrediction {
    /// Class probabilities `softmax(logits / temperature)`.
    pub fn probabilities(&self, temperature: f64) -> Vec<f64> {
        let max = self.logits.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v / temperature));
        let e: Vec<f64> = self.logits.iter().map(|v| (v / temperature - max).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }
}

/// Predictions for yaw, pitch and roll, in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct PosePrediction {
    pub angles: [AnglePrediction; 3],
}

impl PosePrediction {
    pub fn get(&self, angle: Angle) -> &AnglePrediction {
        &self.angles[angle.index()]
    }
}

/// Inference decoding: the regression outputs, clamped to +/-90 deg. The
/// classification logits are a training signal only.
pub fn decode_prediction(pred: &PosePrediction) -> HeadPose {
    let clamp = |a: &AnglePrediction| a.continuous_deg.clamp(-EVALUABLE_RANGE_DEG, EVALUABLE_RANGE_DEG);
    HeadPose {
        yaw: clamp(&pred.angles[0]),
        pitch: clamp(&pred.angles[1]),
        roll: clamp(&pred.angles[2]),
    }
}

#[derive(Debug, Clone)]
struct AngleHead {
    reg_weight: ParamId,
    reg_bias: ParamId,
    cls_weight: ParamId,
    cls_bias: ParamId,
}

/// Loss gradient arriving at one head's outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrad {
    pub continuous: f64,
    pub logits: Vec<f64>,
}

impl HeadGrad {
    pub fn zero(n_bins: usize) -> Self {
        HeadGrad {
            continuous: 0.0,
            logits: vec![0.0; n_bins],
        }
    }
}

/// Activations retained by [`Model::forward_traced`] for back-propagation.
pub struct ForwardTrace {
    backbone: Vec<Trace>,
    feature_shape: (usize, usize, usize),
    feature: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    seed: u64,
    params: ParamStore,
    backbone: Vec<Block>,
    heads: [AngleHead; 3],
}

/// Deterministic construction: the same spec and seed give bitwise-identical
/// parameters. Reference weights are loaded when the spec names a file.
pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<Model> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();
    let mut b = backbone::Builder {
        params: &mut params,
        rng: &mut rng,
    };
    let blocks = match spec.backbone.kind {
        BackboneKind::ToyConv => backbone::toy(&mut b, spec.backbone.feature_dim, spec.input_side),
        BackboneKind::ResNet50 => backbone::resnet50(&mut b),
    };
    let f = spec.backbone.feature_dim;
    let bound = 1.0 / (f as f64).sqrt();
    let uniform = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let mut head = |angle: Angle| {
        let mut draw = |name: &str, shape: &[usize]| {
            let rng = &mut rng;
            params.add(
                format!("head.{angle}.{name}"),
                shape,
                std::iter::repeat_with(|| uniform.sample(rng)),
            )
        };
        AngleHead {
            reg_weight: draw("reg.weight", &[1, f]),
            reg_bias: draw("reg.bias", &[1]),
            cls_weight: draw("cls.weight", &[spec.n_bins, f]),
            cls_bias: draw("cls.bias", &[spec.n_bins]),
        }
    };
    let heads = [head(Angle::Yaw), head(Angle::Pitch), head(Angle::Roll)];
    debug_assert_eq!(
        layers::output_shape(&blocks, (3, spec.input_side, spec.input_side)).0,
        f
    );
    let mut model = Model {
        spec: spec.clone(),
        seed,
        params,
        backbone: blocks,
        heads,
    };
    if let Some(path) = &spec.backbone.pretrained_weights {
        let archive = TensorArchive::load(path)?;
        backbone::load_pretrained(&mut model.params, &archive, path)?;
    }
    Ok(model)
}

impl Model {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn n_bins(&self) -> usize {
        self.spec.n_bins
    }

    /// Replaces all parameter values, e.g. from a checkpoint.
    pub fn load_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::IncompatibleCheckpoint(format!(
                "{} parameter values for a model with {}",
                values.len(),
                self.params.len()
            )));
        }
        self.params.values_mut().copy_from_slice(values);
        Ok(())
    }

    fn input_tensor(&self, patch: &Patch) -> Result<Tensor> {
        let s = self.spec.input_side;
        if patch.side != s || patch.data.len() != 3 * s * s {
            return Err(Error::Shape(format!(
                "expected a 3x{s}x{s} input, got side {} with {} values",
                patch.side,
                patch.data.len()
            )));
        }
        Ok(Tensor::from_vec(3, s, s, patch.data.iter().map(|&v| v as f64).collect()))
    }

    fn heads_forward(&self, feature: &[f64]) -> PosePrediction {
        let p = &self.params;
        let n = self.spec.n_bins;
        let f = feature.len();
        let run = |h: &AngleHead| {
            let dot = |w: &[f64]| w.iter().zip(feature).map(|(a, b)| a * b).sum::<f64>();
            let continuous_deg = dot(p.slice(h.reg_weight)) + p.slice(h.reg_bias)[0];
            let mut logits = p.slice(h.cls_bias).to_vec();
            tensor::gemm(n, f, 1, p.slice(h.cls_weight), false, feature, false, 1.0, &mut logits);
            AnglePrediction { continuous_deg, logits }
        };
        PosePrediction {
            angles: [run(&self.heads[0]), run(&self.heads[1]), run(&self.heads[2])],
        }
    }

    /// Backbone feature vector for one input.
    pub fn features(&self, patch: &Patch) -> Result<Vec<f64>> {
        let x = self.input_tensor(patch)?;
        Ok(layers::forward(&self.backbone, x, &self.params, None).data)
    }

    pub fn predict(&self, patch: &Patch) -> Result<PosePrediction> {
        Ok(self.heads_forward(&self.features(patch)?))
    }

    /// Inference over a batch; samples are processed in parallel and returned
    /// in input order.
    pub fn forward(&self, batch: &[Patch]) -> Result<Vec<PosePrediction>> {
        if batch.is_empty() {
            return Err(Error::InvalidBatch("empty input batch".into()));
        }
        batch.par_iter().map(|p| self.predict(p)).collect()
    }

    pub fn forward_traced(&self, patch: &Patch) -> Result<(PosePrediction, ForwardTrace)> {
        let x = self.input_tensor(patch)?;
        let mut traces = Vec::new();
        let feat = layers::forward(&self.backbone, x, &self.params, Some(&mut traces));
        let pred = self.heads_forward(&feat.data);
        Ok((
            pred,
            ForwardTrace {
                backbone: traces,
                feature_shape: feat.shape(),
                feature: feat.data,
            },
        ))
    }

    /// Accumulates parameter gradients into `grads` given the loss gradient at
    /// each head's outputs (yaw, pitch, roll).
    pub fn backward(&self, trace: &ForwardTrace, head_grads: &[HeadGrad; 3], grads: &mut [f64]) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "gradient buffer has {} entries for {} parameters",
                grads.len(),
                self.params.len()
            )));
        }
        let n = self.spec.n_bins;
        let feature = &trace.feature;
        let f = feature.len();
        let mut dfeat = vec![0.0; f];
        for (h, g) in self.heads.iter().zip(head_grads) {
            if g.logits.len() != n {
                return Err(Error::Shape(format!("{} logit gradients, expected {n}", g.logits.len())));
            }
            let reg_w = self.params.slice(h.reg_weight);
            for ((gw, x), (d, w)) in grads[h.reg_weight.range()].iter_mut().zip(feature).zip(dfeat.iter_mut().zip(reg_w)) {
                *gw += g.continuous * x;
                *d += g.continuous * w;
            }
            grads[h.reg_bias.offset] += g.continuous;
            // dW_cls += dlogits (n x 1) * feature^T (1 x f)
            tensor::gemm(n, 1, f, &g.logits, false, feature, false, 1.0, &mut grads[h.cls_weight.range()]);
            for (gb, d) in grads[h.cls_bias.range()].iter_mut().zip(&g.logits) {
                *gb += d;
            }
            // dfeature += W_cls^T dlogits
            tensor::gemm(f, n, 1, self.params.slice(h.cls_weight), true, &g.logits, false, 1.0, &mut dfeat);
        }
        let (c, hh, ww) = trace.feature_shape;
        let dy = Tensor::from_vec(c, hh, ww, dfeat);
        layers::backward(&self.backbone, &trace.backbone, dy, &self.params, grads, false);
        Ok(())
    }
}
