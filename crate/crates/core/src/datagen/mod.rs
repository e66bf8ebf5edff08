//! Synthetic two-domain segmentation benchmark with dial-able appearance
//! and layout shift.
//!
//! On disk a dataset is a directory holding `manifest.json` and
//! `source/` / `target/` subdirectories of SGT1 tensors `img_%05d.sgt`
//! (float32, `h x w x 3`) and `lab_%05d.sgt` (uint8, `h x w`).

mod render;
mod severity;
mod style;

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use render::{
    base_palette, class_shape, radius_range, render_scene, shape_contains, shape_extent, ClassPrior, Layout, Scene,
    Shape, ShiftParams,
};
pub use severity::{
    appearance_gap, class_frequencies, colour_histogram, layout_gap, total_variation, ShiftSeverity, HIST_BINS,
};
pub use style::{apply_domain_style, gaussian_blur, Appearance};

use crate::error::{Error, Result};
use crate::rng::stream_seed;
use crate::sgt::{load_sgt, save_sgt, SgtData, SgtTensor};
use crate::tensor::Tensor;

/// Renders one scene from `(params, seed)`.
pub fn generate_scene(params: &ShiftParams, seed: u64, h: usize, w: usize, classes: usize) -> Result<Scene> {
    render_scene(params, &mut ChaCha8Rng::seed_from_u64(seed), h, w, classes)
}

/// Seed of scene `index` in `domain` ("source" / "target").
pub fn scene_seed(seed: u64, domain: &str, index: usize) -> u64 {
    stream_seed(stream_seed(seed, &format!("data/{domain}")), &index.to_string())
}

pub const DATASET_FORMAT: &str = "segan-dataset/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub seed: u64,
    pub n_source: usize,
    pub n_target: usize,
    pub source: ShiftParams,
    pub target: ShiftParams,
}

/// Held-out target labels. Only obtainable through
/// [`DomainDataset::evaluation_labels`]; training code works on
/// [`DomainDataset::target_images`] alone.
#[derive(Clone, Copy, Debug)]
pub struct EvaluationLabels<'a>(&'a [Vec<u8>]);

impl<'a> EvaluationLabels<'a> {
    pub fn get(&self, i: usize) -> &'a [u8] {
        &self.0[i]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &'a [u8]> + 'a {
        self.0.iter().map(Vec::as_slice)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    pub manifest: DatasetManifest,
    source: Vec<Scene>,
    target_images: Vec<Vec<f32>>,
    target_labels: Vec<Vec<u8>>,
}

impl DomainDataset {
    pub fn height(&self) -> usize {
        self.manifest.height
    }

    pub fn width(&self) -> usize {
        self.manifest.width
    }

    pub fn classes(&self) -> usize {
        self.manifest.classes
    }

    pub fn source(&self) -> &[Scene] {
        &self.source
    }

    pub fn target_images(&self) -> &[Vec<f32>] {
        &self.target_images
    }

    pub fn n_source(&self) -> usize {
        self.source.len()
    }

    pub fn n_target(&self) -> usize {
        self.target_images.len()
    }

    pub fn evaluation_labels(&self) -> EvaluationLabels<'_> {
        EvaluationLabels(&self.target_labels)
    }

    /// Source images `[n, 3, h, w]` and their labels (`n * h * w`).
    pub fn source_batch(&self, idx: &[usize]) -> Result<(Tensor<f32>, Vec<u8>)> {
        let imgs: Vec<&[f32]> = idx.iter().map(|&i| self.source[i].image.as_slice()).collect();
        let labels = idx.iter().flat_map(|&i| self.source[i].label.iter().copied()).collect();
        Ok((to_nchw(&imgs, self.height(), self.width())?, labels))
    }

    pub fn target_batch(&self, idx: &[usize]) -> Result<Tensor<f32>> {
        let imgs: Vec<&[f32]> = idx.iter().map(|&i| self.target_images[i].as_slice()).collect();
        to_nchw(&imgs, self.height(), self.width())
    }

    /// Replaces source images (e.g. by their style-transferred versions);
    /// labels are kept.
    pub fn with_source_images(&self, images: Vec<Vec<f32>>) -> Result<Self> {
        if images.len() != self.source.len() || images.iter().any(|i| i.len() != self.height() * self.width() * 3) {
            return Err(Error::invalid("images", "count or size does not match the source domain"));
        }
        let mut out = self.clone();
        for (s, img) in out.source.iter_mut().zip(images) {
            s.image = img;
        }
        Ok(out)
    }

    pub fn severity(&self) -> Result<ShiftSeverity> {
        Ok(ShiftSeverity {
            appearance_gap: appearance_gap(
                self.source.iter().map(|s| s.image.as_slice()),
                self.target_images.iter().map(Vec::as_slice),
            )?,
            layout_gap: layout_gap(
                self.source.iter().map(|s| s.label.as_slice()),
                self.evaluation_labels().iter(),
                self.classes(),
            )?,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        for d in ["source", "target"] {
            fs::create_dir_all(dir.join(d))?;
        }
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&self.manifest)?)?;
        let (h, w) = (self.height(), self.width());
        let images = self.source.iter().map(|s| (&s.image, &s.label));
        for (i, (img, lab)) in images.enumerate() {
            write_pair(&dir.join("source"), i, img, lab, h, w)?;
        }
        for (i, (img, lab)) in self.target_images.iter().zip(&self.target_labels).enumerate() {
            write_pair(&dir.join("target"), i, img, lab, h, w)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.format != DATASET_FORMAT {
            return Err(Error::Format(format!("unknown dataset format `{}`", manifest.format)));
        }
        let (h, w) = (manifest.height, manifest.width);
        let mut source = Vec::with_capacity(manifest.n_source);
        for i in 0..manifest.n_source {
            let (image, label) = read_pair(&dir.join("source"), i, h, w, manifest.classes)?;
            source.push(Scene {
                height: h,
                width: w,
                image,
                label,
            });
        }
        let (mut target_images, mut target_labels) = (Vec::new(), Vec::new());
        for i in 0..manifest.n_target {
            let (image, label) = read_pair(&dir.join("target"), i, h, w, manifest.classes)?;
            target_images.push(image);
            target_labels.push(label);
        }
        Ok(DomainDataset {
            manifest,
            source,
            target_images,
            target_labels,
        })
    }
}

fn write_pair(dir: &Path, i: usize, img: &[f32], lab: &[u8], h: usize, w: usize) -> Result<()> {
    save_sgt(&dir.join(format!("img_{i:05}.sgt")), &SgtTensor::new(vec![h, w, 3], SgtData::F32(img.to_vec()))?)?;
    save_sgt(&dir.join(format!("lab_{i:05}.sgt")), &SgtTensor::new(vec![h, w], SgtData::U8(lab.to_vec()))?)
}

fn read_pair(dir: &Path, i: usize, h: usize, w: usize, classes: usize) -> Result<(Vec<f32>, Vec<u8>)> {
    let img = load_sgt(&dir.join(format!("img_{i:05}.sgt")))?;
    let lab = load_sgt(&dir.join(format!("lab_{i:05}.sgt")))?;
    match (img.data, lab.data) {
        (SgtData::F32(im), SgtData::U8(lb)) if img.shape == [h, w, 3] && lab.shape == [h, w] => {
            if let Some(&bad) = lb.iter().find(|&&c| c as usize >= classes) {
                return Err(Error::Format(format!("{}: label {bad} >= {classes}", dir.display())));
            }
            Ok((im, lb))
        }
        _ => Err(Error::Format(format!("{}: scene {i} has the wrong dtype or shape", dir.display()))),
    }
}

/// Stacks `h x w x 3` images into an `[n, 3, h, w]` tensor.
pub fn to_nchw(images: &[&[f32]], h: usize, w: usize) -> Result<Tensor<f32>> {
    let hw = h * w;
    let mut data = vec![0f32; images.len() * 3 * hw];
    for (n, img) in images.iter().enumerate() {
        if img.len() != 3 * hw {
            return Err(Error::invalid("image", format!("{} values for {h}x{w}x3", img.len())));
        }
        for p in 0..hw {
            for c in 0..3 {
                data[(n * 3 + c) * hw + p] = img[p * 3 + c];
            }
        }
    }
    Tensor::new(&[images.len(), 3, h, w], data)
}

/// Splits an `[n, 3, h, w]` tensor back into `h x w x 3` images.
pub fn from_nchw(t: &Tensor<f32>) -> Vec<Vec<f32>> {
    let s = t.shape();
    let hw = s[2] * s[3];
    (0..s[0])
        .map(|n| {
            let mut img = vec![0f32; 3 * hw];
            for p in 0..hw {
                for c in 0..3 {
                    img[p * 3 + c] = t.data()[(n * 3 + c) * hw + p];
                }
            }
            img
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub n_source: usize,
    pub n_target: usize,
    pub source: ShiftParams,
    pub target: ShiftParams,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            height: 64,
            width: 64,
            classes: 4,
            n_source: 200,
            n_target: 200,
            source: default_source(),
            target: default_target(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.classes > 255 {
            return Err(Error::invalid("classes", format!("{} not in [2, 255]", self.classes)));
        }
        if self.height < 32 || self.width < 32 {
            return Err(Error::invalid("height/width", format!("{}x{} below 32x32", self.height, self.width)));
        }
        if self.n_source == 0 || self.n_target == 0 {
            return Err(Error::invalid("n_source/n_target", "counts must be at least 1"));
        }
        self.source.validate(self.classes)?;
        self.target.validate(self.classes)
    }

    pub fn generate(&self, seed: u64) -> Result<DomainDataset> {
        self.validate()?;
        generate_dataset(&self.source, &self.target, self.n_source, self.n_target, seed, self.height, self.width, self.classes)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn generate_dataset(
    src: &ShiftParams,
    tgt: &ShiftParams,
    n_src: usize,
    n_tgt: usize,
    seed: u64,
    h: usize,
    w: usize,
    classes: usize,
) -> Result<DomainDataset> {
    if n_src == 0 || n_tgt == 0 {
        return Err(Error::invalid("n_source/n_target", "counts must be at least 1"));
    }
    let source = (0..n_src)
        .map(|i| generate_scene(src, scene_seed(seed, "source", i), h, w, classes))
        .collect::<Result<Vec<_>>>()?;
    let target = (0..n_tgt)
        .map(|i| generate_scene(tgt, scene_seed(seed, "target", i), h, w, classes))
        .collect::<Result<Vec<_>>>()?;
    let (target_images, target_labels) = target.into_iter().map(|s| (s.image, s.label)).unzip();
    Ok(DomainDataset {
        manifest: DatasetManifest {
            format: DATASET_FORMAT.into(),
            height: h,
            width: w,
            classes,
            seed,
            n_source: n_src,
            n_target: n_tgt,
            source: src.clone(),
            target: tgt.clone(),
        },
        source,
        target_images,
        target_labels,
    })
}

fn prior(occurrence: f64, mean: [f64; 2], var: f64, size: f64) -> ClassPrior {
    ClassPrior {
        occurrence,
        mean,
        cov: [[var, 0.0], [0.0, var]],
        size,
    }
}

/// Default source domain: flat palette, mild noise.
pub fn default_source() -> ShiftParams {
    ShiftParams {
        appearance: Appearance {
            noise: 0.03,
            ..Appearance::default()
        },
        layout: Layout {
            classes: vec![
                prior(0.8, [0.35, 0.3], 0.02, 0.13),
                prior(0.7, [0.65, 0.65], 0.02, 0.11),
                prior(0.6, [0.75, 0.4], 0.015, 0.09),
            ],
        },
    }
}

/// Default target domain: rotated, darker, blurred and textured palette;
/// objects move and change frequency.
pub fn default_target() -> ShiftParams {
    ShiftParams {
        appearance: Appearance {
            rotation: 0.6,
            brightness: -0.08,
            blur: 0.8,
            texture_freq: 5.0,
            texture_amp: 0.06,
            noise: 0.03,
        },
        layout: Layout {
            classes: vec![
                prior(0.6, [0.45, 0.6], 0.02, 0.11),
                prior(0.85, [0.55, 0.35], 0.02, 0.12),
                prior(0.75, [0.3, 0.55], 0.015, 0.1),
            ],
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetConfig {
        DatasetConfig {
            height: 32,
            width: 32,
            n_source: 6,
            n_target: 5,
            ..Default::default()
        }
    }

    #[test]
    fn reproducible_and_independent_of_generation_order() {
        let a = small().generate(3).unwrap();
        assert_eq!(a, small().generate(3).unwrap());
        let s2 = generate_scene(&a.manifest.source, scene_seed(3, "source", 2), 32, 32, 4).unwrap();
        assert_eq!(a.source()[2], s2);
        assert_ne!(a, small().generate(4).unwrap());
    }

    #[test]
    fn save_load_roundtrip() {
        let ds = small().generate(1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        assert!(dir.path().join("source/img_00005.sgt").exists());
        assert!(dir.path().join("target/lab_00004.sgt").exists());
        assert_eq!(DomainDataset::load(dir.path()).unwrap(), ds);
    }

    #[test]
    fn nchw_roundtrip() {
        let ds = small().generate(2).unwrap();
        let (t, labels) = ds.source_batch(&[1, 3]).unwrap();
        assert_eq!(t.shape(), &[2, 3, 32, 32]);
        assert_eq!(labels.len(), 2 * 32 * 32);
        let back = from_nchw(&t);
        assert_eq!(back[1], ds.source()[3].image);
    }

    #[test]
    fn class_count_is_validated() {
        let cfg = DatasetConfig { classes: 1, ..small() };
        let err = cfg.generate(0).unwrap_err().to_string();
        assert!(err.contains("classes"), "{err}");
    }

    #[test]
    fn default_shift_is_nonzero() {
        let cfg = DatasetConfig {
            n_source: 20,
            n_target: 20,
            ..Default::default()
        };
        let sev = cfg.generate(0).unwrap().severity().unwrap();
        assert!(sev.appearance_gap > 0.05 && sev.layout_gap > 0.0, "{sev:?}");
    }
}
