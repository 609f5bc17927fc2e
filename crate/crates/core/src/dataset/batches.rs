use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::{Error, Result};
use crate::geometry::{crop_pad_resize, expand_margin, AngleBinning, HeadPose, Patch, PixelNorm, DEFAULT_INPUT_SIDE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub k: f64,
    pub batch_size: usize,
    pub input_side: usize,
    pub norm: PixelNorm,
    pub binning: AngleBinning,
}

impl BatchConfig {
    pub fn new(k: f64, batch_size: usize) -> Self {
        BatchConfig {
            k,
            batch_size,
            input_side: DEFAULT_INPUT_SIDE,
            norm: PixelNorm::IDENTITY,
            binning: AngleBinning::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::InvalidParameter("batch_size must be >= 1".into()));
        }
        if !(self.k >= 0.0) || !self.k.is_finite() {
            return Err(Error::InvalidParameter(format!("K = {} must be finite and >= 0", self.k)));
        }
        if self.input_side == 0 {
            return Err(Error::InvalidParameter("input_side must be positive".into()));
        }
        self.norm.validate()
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub source_ids: Vec<String>,
    pub inputs: Vec<Patch>,
    pub targets: Vec<HeadPose>,
    /// Class index per sample in (yaw, pitch, roll) order.
    pub classes: Vec<[usize; 3]>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Crop with margin `k`, pad and resize to the network input.
pub fn prepare_input(sample: &Sample, k: f64, input_side: usize, norm: &PixelNorm) -> Result<Patch> {
    let image = sample.load_image()?;
    let region = expand_margin(&sample.bbox, k).map_err(|e| e.for_sample(&sample.source_id))?;
    crop_pad_resize(&image, &region, input_side, norm).map_err(|e| e.for_sample(&sample.source_id))
}

/// `0..n` permuted by a ChaCha8 stream seeded with `seed`.
pub fn shuffled_order(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Single-consumer stream of prepared batches. Inputs within a batch are
/// prepared in parallel. The first failing sample ends the stream.
pub struct BatchStream<'a> {
    samples: &'a [Sample],
    order: Vec<usize>,
    cfg: BatchConfig,
    pos: usize,
    failed: bool,
}

impl<'a> BatchStream<'a> {
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    fn prepare(&self, idx: &[usize]) -> Result<Batch> {
        let cfg = &self.cfg;
        let prepared: Vec<Result<(Patch, [usize; 3])>> = idx
            .par_iter()
            .map(|&i| {
                let s = &self.samples[i];
                let patch = prepare_input(s, cfg.k, cfg.input_side, &cfg.norm)?;
                let mut classes = [0; 3];
                for (c, a) in classes.iter_mut().zip(s.pose.angles()) {
                    *c = cfg.binning.angle_to_class(a).map_err(|e| e.for_sample(&s.source_id))?;
                }
                Ok((patch, classes))
            })
            .collect();
        let mut batch = Batch {
            source_ids: Vec::with_capacity(idx.len()),
            inputs: Vec::with_capacity(idx.len()),
            targets: Vec::with_capacity(idx.len()),
            classes: Vec::with_capacity(idx.len()),
        };
        for (&i, r) in idx.iter().zip(prepared) {
            let (patch, classes) = r?;
            let s = &self.samples[i];
            batch.source_ids.push(s.source_id.clone());
            batch.inputs.push(patch);
            batch.targets.push(s.pose);
            batch.classes.push(classes);
        }
        Ok(batch)
    }
}

impl Iterator for BatchStream<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.cfg.batch_size).min(self.order.len());
        let idx = self.order[self.pos..end].to_vec();
        self.pos = end;
        let batch = self.prepare(&idx);
        self.failed = batch.is_err();
        Some(batch)
    }
}

/// Batches over `samples` in dataset order, or shuffled when a seed is given.
/// The final partial batch is kept.
pub fn iterate_batches<'a>(samples: &'a [Sample], cfg: &BatchConfig, shuffle_seed: Option<u64>) -> Result<BatchStream<'a>> {
    cfg.validate()?;
    let order = match shuffle_seed {
        Some(seed) => shuffled_order(samples.len(), seed),
        None => (0..samples.len()).collect(),
    };
    Ok(BatchStream {
        samples,
        order,
        cfg: *cfg,
        pos: 0,
        failed: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_synthetic_dataset, ImageSource};
    use crate::geometry::BoundingBox;

    fn small_cfg(k: f64, batch: usize) -> BatchConfig {
        BatchConfig {
            input_side: 16,
            ..BatchConfig::new(k, batch)
        }
    }

    #[test]
    fn batch_sizes_include_partial_tail() {
        let samples = make_synthetic_dataset(10, 1, 32).unwrap();
        let sizes: Vec<usize> = iterate_batches(&samples, &small_cfg(0.5, 4), Some(3))
            .unwrap()
            .map(|b| b.unwrap().len())
            .collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn same_seed_same_order() {
        let samples = make_synthetic_dataset(10, 1, 32).unwrap();
        let ids = |seed| -> Vec<String> {
            iterate_batches(&samples, &small_cfg(0.0, 3), seed)
                .unwrap()
                .flat_map(|b| b.unwrap().source_ids)
                .collect()
        };
        assert_eq!(ids(Some(5)), ids(Some(5)));
        assert_ne!(ids(Some(5)), ids(Some(6)));
        let plain: Vec<String> = samples.iter().map(|s| s.source_id.clone()).collect();
        assert_eq!(ids(None), plain);
        let mut sorted = ids(Some(5));
        sorted.sort();
        assert_eq!(sorted, plain);
    }

    #[test]
    fn classes_match_binning() {
        let samples = make_synthetic_dataset(7, 2, 32).unwrap();
        let binning = AngleBinning::default();
        for b in iterate_batches(&samples, &small_cfg(0.5, 3), Some(1)).unwrap() {
            let b = b.unwrap();
            for (t, c) in b.targets.iter().zip(&b.classes) {
                for k in 0..3 {
                    assert_eq!(c[k], binning.angle_to_class(t.angles()[k]).unwrap());
                }
            }
        }
    }

    #[test]
    fn margin_doubles_patch_footprint() {
        // Pixel values encode their coordinates. K=0.5 widens the 10px box
        // to 20px, so a 20px input is a unit-scale copy starting at x=10.
        let mut img = image::RgbImage::new(40, 40);
        for (x, y, p) in img.enumerate_pixels_mut() {
            *p = image::Rgb([x as u8, y as u8, 0]);
        }
        let s = Sample {
            source_id: "s".into(),
            pose: HeadPose::zero(),
            bbox: BoundingBox::new(15.0, 15.0, 10.0).unwrap(),
            image: ImageSource::Memory(std::sync::Arc::new(img)),
        };
        let patch = prepare_input(&s, 0.5, 20, &PixelNorm::IDENTITY).unwrap();
        assert_eq!(patch.at(0, 0, 0), 10.0 / 255.0);
        assert_eq!(patch.at(0, 0, 19), 29.0 / 255.0);
        assert_eq!(patch.at(1, 19, 0), 29.0 / 255.0);
    }

    #[test]
    fn unreadable_file_names_sample_and_stops() {
        let mut samples = make_synthetic_dataset(4, 1, 32).unwrap();
        samples[1].image = ImageSource::File("/nonexistent/x.png".into());
        samples[1].source_id = "broken".into();
        let mut stream = iterate_batches(&samples, &small_cfg(0.0, 2), None).unwrap();
        match stream.next().unwrap() {
            Err(Error::Sample { source_id, .. }) => assert_eq!(source_id, "broken"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(stream.next().is_none());
    }

    #[test]
    fn invalid_config() {
        let samples = make_synthetic_dataset(2, 1, 32).unwrap();
        assert!(iterate_batches(&samples, &small_cfg(0.0, 0), None).is_err());
        assert!(iterate_batches(&samples, &small_cfg(-1.0, 1), None).is_err());
    }
}
