//! Backbone graphs. Parameter names follow the torchvision layout under a
//! `backbone.` prefix so reference weights map one-to-one.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{output_shape, Block, ChannelAffine, Conv2d, MaxPool};
use super::params::ParamStore;
use crate::archive::TensorArchive;
use crate::error::{Error, Result};

/// Channel widths of the toy backbone's conv stages.
pub(crate) const TOY_WIDTHS: [usize; 3] = [8, 16, 16];
pub(crate) const TOY_INPUT_POOL: usize = 4;
/// Smallest input the toy backbone reduces to a non-empty map.
pub(crate) const TOY_MIN_INPUT: usize = 32;
pub(crate) const TOY_MAX_FEATURES: usize = 64;
pub(crate) const RESNET50_FEATURES: usize = 2048;
const BN_EPS: f64 = 1e-5;

pub(crate) struct Builder<'a, R: Rng> {
    pub params: &'a mut ParamStore,
    pub rng: &'a mut R,
}

impl<R: Rng> Builder<'_, R> {
    /// He-normal weights, zero bias.
    pub fn conv(&mut self, name: &str, in_c: usize, out_c: usize, kernel: usize, stride: usize, pad: usize, bias: bool) -> Block {
        let fan_in = in_c * kernel * kernel;
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let rng = &mut *self.rng;
        let weight = self.params.add(
            format!("{name}.weight"),
            &[out_c, in_c, kernel, kernel],
            std::iter::repeat_with(|| normal.sample(rng)),
        );
        let bias = bias.then(|| self.params.add(format!("{name}.bias"), &[out_c], std::iter::repeat(0.0)));
        Block::Conv(Conv2d {
            in_c,
            out_c,
            kernel,
            stride,
            pad,
            weight,
            bias,
        })
    }

    pub fn affine(&mut self, name: &str, c: usize) -> Block {
        let scale = self.params.add(format!("{name}.scale"), &[c], std::iter::repeat(1.0));
        let shift = self.params.add(format!("{name}.shift"), &[c], std::iter::repeat(0.0));
        Block::Affine(ChannelAffine { scale, shift })
    }
}

/// Three conv/pool stages, then a dense layer (a conv spanning the whole
/// remaining map) to `feature_dim`. Keeping the layout up to the dense layer
/// lets features see where structure sits in the crop, which a global
/// average would discard.
pub(crate) fn toy<R: Rng>(b: &mut Builder<'_, R>, feature_dim: usize, input_side: usize) -> Vec<Block> {
    let [c1, c2, c3] = TOY_WIDTHS;
    let pool = || Block::MaxPool(MaxPool { kernel: 2, stride: 2, pad: 0 });
    let mut blocks = vec![
        Block::AvgPool(TOY_INPUT_POOL),
        b.conv("backbone.conv1", 3, c1, 3, 1, 1, true),
        Block::Relu,
        pool(),
        b.conv("backbone.conv2", c1, c2, 3, 1, 1, true),
        Block::Relu,
        pool(),
        b.conv("backbone.conv3", c2, c3, 3, 1, 1, true),
        Block::Relu,
        pool(),
    ];
    let (_, h, _) = output_shape(&blocks, (3, input_side, input_side));
    blocks.push(b.conv("backbone.fc", c3, feature_dim, h, 1, 0, true));
    blocks.push(Block::GlobalAvgPool);
    blocks
}

fn bottleneck<R: Rng>(b: &mut Builder<'_, R>, name: &str, in_c: usize, planes: usize, stride: usize) -> Block {
    let out_c = planes * 4;
    let main = vec![
        b.conv(&format!("{name}.conv1"), in_c, planes, 1, 1, 0, false),
        b.affine(&format!("{name}.bn1"), planes),
        Block::Relu,
        b.conv(&format!("{name}.conv2"), planes, planes, 3, stride, 1, false),
        b.affine(&format!("{name}.bn2"), planes),
        Block::Relu,
        b.conv(&format!("{name}.conv3"), planes, out_c, 1, 1, 0, false),
        b.affine(&format!("{name}.bn3"), out_c),
    ];
    let shortcut = if stride != 1 || in_c != out_c {
        vec![
            b.conv(&format!("{name}.downsample.0"), in_c, out_c, 1, stride, 0, false),
            b.affine(&format!("{name}.downsample.1"), out_c),
        ]
    } else {
        Vec::new()
    };
    Block::Residual { main, shortcut }
}

/// 50-layer bottleneck residual network (stride on the 3x3 convolution).
pub(crate) fn resnet50<R: Rng>(b: &mut Builder<'_, R>) -> Vec<Block> {
    let mut blocks = vec![
        b.conv("backbone.conv1", 3, 64, 7, 2, 3, false),
        b.affine("backbone.bn1", 64),
        Block::Relu,
        Block::MaxPool(MaxPool { kernel: 3, stride: 2, pad: 1 }),
    ];
    let mut in_c = 64;
    for (layer, (depth, planes, stride)) in [(3, 64, 1), (4, 128, 2), (6, 256, 2), (3, 512, 2)].into_iter().enumerate() {
        for i in 0..depth {
            let s = if i == 0 { stride } else { 1 };
            blocks.push(bottleneck(b, &format!("backbone.layer{}.{i}", layer + 1), in_c, planes, s));
            in_c = planes * 4;
        }
    }
    blocks.push(Block::GlobalAvgPool);
    blocks
}

/// Copies reference weights into the `backbone.` parameters.
///
/// Convolutions are taken verbatim (`<name>.weight`). Batch-norm entries
/// (`weight`, `bias`, `running_mean`, `running_var`) are folded into the
/// affine `scale` and `shift`. Every backbone parameter must be covered.
pub(crate) fn load_pretrained(params: &mut ParamStore, archive: &TensorArchive, source: &std::path::Path) -> Result<()> {
    let missing = |name: &str| Error::load(source, format!("missing tensor {name}"));
    let entries: Vec<_> = params
        .entries()
        .iter()
        .filter(|e| e.name.starts_with("backbone."))
        .cloned()
        .collect();
    for e in entries {
        let key = &e.name["backbone.".len()..];
        if let Some(stem) = key.strip_suffix(".scale") {
            let get = |field: &str| {
                let name = format!("{stem}.{field}");
                archive.get(&name).ok_or_else(|| missing(&name))
            };
            let (w, var) = (get("weight")?, get("running_var")?);
            if w.data.len() != e.len() || var.data.len() != e.len() {
                return Err(Error::load(source, format!("{stem}: batch-norm size mismatch")));
            }
            let scale: Vec<f64> = w
                .data
                .iter()
                .zip(&var.data)
                .map(|(&w, &v)| w as f64 / (v as f64 + BN_EPS).sqrt())
                .collect();
            params.set(&e.name, &scale);
        } else if let Some(stem) = key.strip_suffix(".shift") {
            let get = |field: &str| {
                let name = format!("{stem}.{field}");
                archive.get(&name).ok_or_else(|| missing(&name))
            };
            let (w, b, mean, var) = (get("weight")?, get("bias")?, get("running_mean")?, get("running_var")?);
            let shift: Vec<f64> = (0..e.len())
                .map(|c| {
                    let scale = w.data[c] as f64 / (var.data[c] as f64 + BN_EPS).sqrt();
                    b.data[c] as f64 - mean.data[c] as f64 * scale
                })
                .collect();
            if !params.set(&e.name, &shift) {
                return Err(Error::load(source, format!("{stem}: batch-norm size mismatch")));
            }
        } else {
            let t = archive.get(key).ok_or_else(|| missing(key))?;
            if t.shape != e.shape {
                return Err(Error::load(
                    source,
                    format!("{key}: shape {:?} does not match model {:?}", t.shape, e.shape),
                ));
            }
            let data: Vec<f64> = t.data.iter().map(|&v| v as f64).collect();
            params.set(&e.name, &data);
        }
    }
    Ok(())
}
